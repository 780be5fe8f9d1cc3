#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace imac {

// Channel-major image geometry (C, H, W).
struct Shape {
  int channels = 1;
  int height = 1;
  int width = 1;
  int size() const { return channels * height * width; }
  bool operator==(const Shape&) const = default;
};

// One split of a labelled dataset. Pixels are normalized to [0, 1] (or any
// real features for derived datasets), stored row-major, one sample per row.
struct Split {
  Shape shape;
  int count = 0;
  std::vector<float> pixels;
  std::vector<std::uint8_t> labels;

  std::span<const float> sample(int i) const {
    return {pixels.data() + static_cast<std::size_t>(i) * shape.size(), static_cast<std::size_t>(shape.size())};
  }
  void validate() const;
  // First n samples (or all if n <= 0 or n >= count).
  Split head(int n) const;
};

enum class DatasetKind { mnist, cifar10, synthetic };

struct DatasetHandle {
  DatasetKind kind = DatasetKind::synthetic;
  Split train;
  Split test;
  int classes = 10;
};

// IDX readers. Images must be 28×28 (magic 0x00000803), labels 0x00000801.
Split read_mnist_images_labels(const std::filesystem::path& images, const std::filesystem::path& labels);
// Expects train-images-idx3-ubyte, train-labels-idx1-ubyte, t10k-images-idx3-ubyte,
// t10k-labels-idx1-ubyte inside `dir`.
DatasetHandle load_mnist(const std::filesystem::path& dir);

// Binary batch format: 1 label byte + 3072 bytes (R, G, B planes of 32×32).
Split read_cifar10_batch(const std::filesystem::path& file);
Split parse_cifar10(std::span<const std::uint8_t> bytes, const std::string& origin = "<memory>");
// data_batch_1..5.bin for training, test_batch.bin for testing.
DatasetHandle load_cifar10(const std::filesystem::path& dir);

// Four-point XOR with bipolar inputs {-1,+1}² and labels {0,1}; train = test.
DatasetHandle make_xor();

std::string to_string(DatasetKind kind);

}  // namespace imac
