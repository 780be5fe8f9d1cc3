#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "imac/dataset.hpp"
#include "imac/error.hpp"

using namespace imac;
namespace fs = std::filesystem;

namespace {

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

void write_file(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream f(p, std::ios::binary);
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("imac-test-" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<std::uint8_t> idx_images(int n, std::uint32_t magic = 0x803, int rows = 28) {
  std::vector<std::uint8_t> b;
  put_be32(b, magic);
  put_be32(b, static_cast<std::uint32_t>(n));
  put_be32(b, static_cast<std::uint32_t>(rows));
  put_be32(b, 28);
  for (int i = 0; i < n * rows * 28; ++i) b.push_back(static_cast<std::uint8_t>(i % 256));
  return b;
}

std::vector<std::uint8_t> idx_labels(int n) {
  std::vector<std::uint8_t> b;
  put_be32(b, 0x801);
  put_be32(b, static_cast<std::uint32_t>(n));
  for (int i = 0; i < n; ++i) b.push_back(static_cast<std::uint8_t>(i % 10));
  return b;
}

}  // namespace

TEST_CASE("IDX reader normalizes pixels and keeps labels") {
  TempDir d;
  write_file(d.path / "img", idx_images(3));
  write_file(d.path / "lab", idx_labels(3));
  const Split s = read_mnist_images_labels(d.path / "img", d.path / "lab");
  CHECK(s.count == 3);
  CHECK(s.shape == Shape{1, 28, 28});
  CHECK(s.labels == std::vector<std::uint8_t>{0, 1, 2});
  CHECK(s.pixels[1] == doctest::Approx(1.0f / 255.0f));
  CHECK(s.pixels[255] == 1.0f);
  CHECK(s.head(2).count == 2);
}

TEST_CASE("empty IDX pair gives an empty split") {
  TempDir d;
  write_file(d.path / "img", idx_images(0));
  write_file(d.path / "lab", idx_labels(0));
  const Split s = read_mnist_images_labels(d.path / "img", d.path / "lab");
  CHECK(s.count == 0);
  CHECK(s.pixels.empty());
}

TEST_CASE("IDX reader rejects malformed files") {
  TempDir d;
  write_file(d.path / "lab", idx_labels(3));
  write_file(d.path / "bad_magic", idx_images(3, 0x804));
  CHECK_THROWS_AS(read_mnist_images_labels(d.path / "bad_magic", d.path / "lab"), FormatError);
  write_file(d.path / "bad_shape", idx_images(3, 0x803, 27));
  CHECK_THROWS_AS(read_mnist_images_labels(d.path / "bad_shape", d.path / "lab"), FormatError);
  write_file(d.path / "four", idx_images(4));
  CHECK_THROWS_AS(read_mnist_images_labels(d.path / "four", d.path / "lab"), FormatError);
  auto cut = idx_images(3);
  cut.resize(cut.size() - 10);
  write_file(d.path / "cut", cut);
  CHECK_THROWS_AS(read_mnist_images_labels(d.path / "cut", d.path / "lab"), FormatError);
  CHECK_THROWS_AS(read_mnist_images_labels(d.path / "missing", d.path / "lab"), FormatError);
  CHECK_THROWS_AS(load_mnist(d.path), FormatError);
}

TEST_CASE("CIFAR-10 records are planar RGB with a leading label") {
  std::vector<std::uint8_t> b;
  for (int r = 0; r < 2; ++r) {
    b.push_back(static_cast<std::uint8_t>(r + 3));
    for (int i = 0; i < 3072; ++i) b.push_back(static_cast<std::uint8_t>(i / 1024 * 100));
  }
  const Split s = parse_cifar10(b);
  CHECK(s.count == 2);
  CHECK(s.shape == Shape{3, 32, 32});
  CHECK(s.labels == std::vector<std::uint8_t>{3, 4});
  CHECK(s.pixels[0] == 0.0f);
  CHECK(s.pixels[1024] == doctest::Approx(100.0f / 255.0f));
  CHECK(s.pixels[2048] == doctest::Approx(200.0f / 255.0f));

  CHECK(parse_cifar10(std::span(b).first(3073)).count == 1);
  b.push_back(0);
  CHECK_THROWS_AS(parse_cifar10(b), FormatError);
  b.pop_back();
  b[0] = 10;
  CHECK_THROWS_AS(parse_cifar10(b), FormatError);
}

TEST_CASE("XOR fixture") {
  const auto x = make_xor();
  CHECK(x.train.count == 4);
  CHECK(x.classes == 2);
  CHECK(x.train.labels == std::vector<std::uint8_t>{0, 1, 1, 0});
  for (float v : x.train.pixels) CHECK(std::abs(v) == 1.0f);
}
