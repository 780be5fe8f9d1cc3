#pragma once

#include <cstdint>
#include <vector>

namespace imac {

// Row-major matrix of ±1 entries.
struct BinaryMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<std::int8_t> data;

  BinaryMatrix() = default;
  BinaryMatrix(int r, int c, std::int8_t fill = 1) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  std::int8_t& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::int8_t operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  bool operator==(const BinaryMatrix&) const = default;
};

// Student layer: weights and biases in {-1, +1}. Row r holds the fan-in of
// output neuron r.
struct BinarizedLayer {
  BinaryMatrix weights;
  std::vector<std::int8_t> biases;

  int inputs() const { return weights.cols; }
  int outputs() const { return weights.rows; }
  bool operator==(const BinarizedLayer&) const = default;
};

// Parameters handed from the offline trainer to the IMAC mapper. `scales`
// holds the per-layer neuron input scale (1 = σ(−(Wx+B)) exactly).
struct TrainedParameters {
  std::vector<BinarizedLayer> layers;
  std::vector<double> scales;

  double scale(std::size_t l) const { return l < scales.size() ? scales[l] : 1.0; }
  std::vector<int> dims() const;
  // Throws DimensionMismatch / InvalidInput when shapes do not chain or an
  // entry is not ±1.
  void validate() const;
  bool operator==(const TrainedParameters&) const = default;
};

}  // namespace imac
