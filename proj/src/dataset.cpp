#include "imac/dataset.hpp"

#include <fstream>
#include <iterator>

#include "imac/error.hpp"

namespace imac {

void Split::validate() const {
  if (shape.size() < 1) throw InvalidInput("dataset: empty sample shape");
  if (count < 0 || labels.size() != static_cast<std::size_t>(count) ||
      pixels.size() != static_cast<std::size_t>(count) * shape.size())
    throw InvalidInput("dataset: sample and label counts disagree");
}

Split Split::head(int n) const {
  if (n <= 0 || n >= count) return *this;
  Split s;
  s.shape = shape;
  s.count = n;
  s.pixels.assign(pixels.begin(), pixels.begin() + static_cast<std::ptrdiff_t>(n) * shape.size());
  s.labels.assign(labels.begin(), labels.begin() + n);
  return s;
}

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return (std::uint32_t(b[at]) << 24) | (std::uint32_t(b[at + 1]) << 16) | (std::uint32_t(b[at + 2]) << 8) | b[at + 3];
}

}  // namespace

Split read_mnist_images_labels(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);
  if (img.size() < 16) throw FormatError(images.string() + ": truncated IDX header");
  if (lab.size() < 8) throw FormatError(labels.string() + ": truncated IDX header");
  if (be32(img, 0) != 0x00000803) throw FormatError(images.string() + ": bad magic (expected 0x00000803)");
  if (be32(lab, 0) != 0x00000801) throw FormatError(labels.string() + ": bad magic (expected 0x00000801)");
  const std::uint32_t n = be32(img, 4);
  const std::uint32_t rows = be32(img, 8), cols = be32(img, 12);
  if (rows != 28 || cols != 28)
    throw FormatError(images.string() + ": images are " + std::to_string(rows) + "x" + std::to_string(cols) +
                      ", expected 28x28");
  if (be32(lab, 4) != n)
    throw FormatError("image count " + std::to_string(n) + " != label count " + std::to_string(be32(lab, 4)));
  if (img.size() - 16 < static_cast<std::size_t>(n) * 784) throw FormatError(images.string() + ": truncated payload");
  if (lab.size() - 8 < n) throw FormatError(labels.string() + ": truncated payload");
  Split s;
  s.shape = {1, 28, 28};
  s.count = static_cast<int>(n);
  s.pixels.resize(static_cast<std::size_t>(n) * 784);
  for (std::size_t i = 0; i < s.pixels.size(); ++i) s.pixels[i] = img[16 + i] / 255.0f;
  s.labels.assign(lab.begin() + 8, lab.begin() + 8 + n);
  for (auto y : s.labels)
    if (y > 9) throw FormatError(labels.string() + ": label out of range");
  return s;
}

DatasetHandle load_mnist(const std::filesystem::path& dir) {
  DatasetHandle h;
  h.kind = DatasetKind::mnist;
  h.train = read_mnist_images_labels(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
  h.test = read_mnist_images_labels(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
  return h;
}

Split parse_cifar10(std::span<const std::uint8_t> bytes, const std::string& origin) {
  constexpr std::size_t kRecord = 3073;
  if (bytes.size() % kRecord != 0)
    throw FormatError(origin + ": size " + std::to_string(bytes.size()) + " is not a multiple of 3073");
  Split s;
  s.shape = {3, 32, 32};
  s.count = static_cast<int>(bytes.size() / kRecord);
  s.pixels.resize(static_cast<std::size_t>(s.count) * 3072);
  s.labels.resize(static_cast<std::size_t>(s.count));
  for (int i = 0; i < s.count; ++i) {
    const std::uint8_t* rec = bytes.data() + static_cast<std::size_t>(i) * kRecord;
    if (rec[0] > 9) throw FormatError(origin + ": label out of range in record " + std::to_string(i));
    s.labels[i] = rec[0];
    for (int k = 0; k < 3072; ++k) s.pixels[static_cast<std::size_t>(i) * 3072 + k] = rec[1 + k] / 255.0f;
  }
  return s;
}

Split read_cifar10_batch(const std::filesystem::path& file) {
  const auto bytes = read_file(file);
  return parse_cifar10(bytes, file.string());
}

DatasetHandle load_cifar10(const std::filesystem::path& dir) {
  DatasetHandle h;
  h.kind = DatasetKind::cifar10;
  h.train.shape = {3, 32, 32};
  for (int b = 1; b <= 5; ++b) {
    Split part = read_cifar10_batch(dir / ("data_batch_" + std::to_string(b) + ".bin"));
    h.train.count += part.count;
    h.train.pixels.insert(h.train.pixels.end(), part.pixels.begin(), part.pixels.end());
    h.train.labels.insert(h.train.labels.end(), part.labels.begin(), part.labels.end());
  }
  h.test = read_cifar10_batch(dir / "test_batch.bin");
  return h;
}

DatasetHandle make_xor() {
  DatasetHandle h;
  h.kind = DatasetKind::synthetic;
  h.classes = 2;
  h.train.shape = {1, 1, 2};
  h.train.count = 4;
  h.train.pixels = {-1, -1, -1, 1, 1, -1, 1, 1};
  h.train.labels = {0, 1, 1, 0};
  h.test = h.train;
  return h;
}

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::mnist:
      return "mnist";
    case DatasetKind::cifar10:
      return "cifar10";
    case DatasetKind::synthetic:
      return "synthetic";
  }
  return "?";
}

}  // namespace imac
