#include "imac/binary.hpp"

#include <string>

#include "imac/error.hpp"

namespace imac {

std::vector<int> TrainedParameters::dims() const {
  std::vector<int> d;
  if (layers.empty()) return d;
  d.push_back(layers.front().inputs());
  for (const auto& l : layers) d.push_back(l.outputs());
  return d;
}

void TrainedParameters::validate() const {
  if (layers.empty()) throw InvalidInput("parameters: no layers");
  if (!scales.empty() && scales.size() != layers.size())
    throw DimensionMismatch("parameters: scale count does not match layer count");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.weights.rows < 1 || layer.weights.cols < 1 ||
        layer.weights.data.size() != static_cast<std::size_t>(layer.weights.rows) * layer.weights.cols)
      throw DimensionMismatch("parameters: layer " + std::to_string(l) + " has a malformed weight matrix");
    if (static_cast<int>(layer.biases.size()) != layer.outputs())
      throw DimensionMismatch("parameters: layer " + std::to_string(l) + " bias count mismatch");
    if (l > 0 && layer.inputs() != layers[l - 1].outputs())
      throw DimensionMismatch("parameters: layer " + std::to_string(l) + " input width " +
                              std::to_string(layer.inputs()) + " does not match previous output width " +
                              std::to_string(layers[l - 1].outputs()));
    for (auto w : layer.weights.data)
      if (w != 1 && w != -1) throw InvalidInput("parameters: non-binary weight in layer " + std::to_string(l));
    for (auto b : layer.biases)
      if (b != 1 && b != -1) throw InvalidInput("parameters: non-binary bias in layer " + std::to_string(l));
    if (l < scales.size() && !(scales[l] > 0.0)) throw InvalidInput("parameters: scales must be positive");
  }
}

}  // namespace imac
