#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "imac/binary.hpp"
#include "imac/crossbar.hpp"

namespace imac {

// Input-column range [col_begin, col_end) of one layer placed on one physical
// subarray. The bias column always lives in the last slice of a layer.
struct SliceAssignment {
  int subarray = 0;
  int col_begin = 0;
  int col_end = 0;
  bool has_bias = false;

  int inputs() const { return col_end - col_begin; }
  int columns() const { return inputs() + (has_bias ? 1 : 0); }
  bool operator==(const SliceAssignment&) const = default;
};

struct LayerAssignment {
  int rows = 0;
  std::vector<SliceAssignment> slices;
  bool operator==(const LayerAssignment&) const = default;
};

struct ImacTopology {
  std::vector<int> layer_dims;  // e.g. {784, 16, 10}
  std::vector<LayerAssignment> layers;
  int capacity = 4;  // physical 512×512 subarrays available

  int subarrays_used() const;
  long long cells_used() const;  // synapse pairs × 2 devices
  void validate() const;
  bool operator==(const ImacTopology&) const = default;
};

// Splits every layer into ≤512-column slices (inputs plus bias column) and
// assigns one subarray per slice. Throws CapacityExceeded / InvalidParameter.
ImacTopology plan_topology(std::span<const int> layer_dims, int capacity = 4);

struct NetworkOptions {
  DeviceParams device;
  NeuronParams neuron;
  BiasPoint read_bias;
  Fidelity fidelity = Fidelity::ideal;
  InputEncoding input_encoding = InputEncoding::unipolar;  // first layer only; later layers are analog
  int capacity = 4;
  // Per-layer transimpedance gain; missing entries use the matched gain.
  std::vector<std::optional<double>> gains;
};

struct InferenceResult {
  std::vector<double> scores;
  int label = -1;
};

// Index of the largest score; ties resolve to the lowest index.
int argmax(std::span<const double> scores);

class ImacNetwork {
 public:
  // Maps trained parameters onto subarrays and programs every slice.
  static ImacNetwork map(const TrainedParameters& params, const NetworkOptions& options = {});

  const ImacTopology& topology() const { return topology_; }
  const NetworkOptions& options() const { return options_; }
  int layer_count() const { return static_cast<int>(topology_.layers.size()); }
  int programming_cycles() const { return programming_cycles_; }

  // Layer-by-layer forward pass; activations stay analog between layers.
  std::vector<double> forward(std::span<const double> input) const { return forward(input, options_.fidelity); }
  std::vector<double> forward(std::span<const double> input, Fidelity fidelity) const;
  InferenceResult infer(std::span<const double> input) const { return infer(input, options_.fidelity); }
  InferenceResult infer(std::span<const double> input, Fidelity fidelity) const;

  double layer_gain(int layer) const;
  double layer_scale(int layer) const { return params_.scale(layer); }
  InputEncoding layer_encoding(int layer) const;
  const SubarrayConfig& layer_config(int layer) const;

  // Stored weights read back from the programmed synapse states.
  int weight(int layer, int row, int col) const;
  int bias(int layer, int row) const;
  const Subarray& slice_subarray(int layer, int slice) const;
  const TrainedParameters& parameters() const { return params_; }

 private:
  ImacNetwork() = default;

  ImacTopology topology_;
  NetworkOptions options_;
  TrainedParameters params_;
  std::vector<std::vector<Subarray>> slices_;  // [layer][slice]
  std::vector<SubarrayConfig> layer_configs_;
  std::vector<double> gains_;
  int programming_cycles_ = 0;
};

// SPICE-style netlist, one SUBCKT per layer:
//   .DEVICE RA=<Ω·µm²> TMR0=<%> V0=<V> L=<nm> W=<nm> VB=<V>
//   .SUPPLY VDD=<V> VSS=<V> ENC=unipolar|ternary|analog
//   SUBCKT L<k> IN=<n> OUT=<m> SCALE=<s>
//   XCELL <row> <col> STATE=P|AP R=<Ω>      (col 2j = G⁺, 2j+1 = G⁻, j = n is the bias pair)
//   XAMP <row> GAIN=<V/A>
//   XNEURON <row> K=<1/V> B=<V>
//   ENDS
//   CONNECT L<k> L<k+1>
std::string export_netlist(const ImacNetwork& network);

struct ParsedNetlist {
  TrainedParameters params;
  NetworkOptions options;
  ImacNetwork build() const { return ImacNetwork::map(params, options); }
};

// Throws FormatError carrying line/column for syntax errors, unknown cards,
// dangling CONNECTs and incomplete subcircuits.
ParsedNetlist parse_netlist(std::string_view text);

// Binary parameter container: "IMAC", version byte, u32 layer count, then per
// layer u32 rows, u32 cols, f64 scale, packed weight bits, packed bias bits
// (bit = 1 for +1, LSB first, little endian).
inline constexpr std::uint8_t kParameterFileVersion = 1;
void write_parameters(std::ostream& out, const TrainedParameters& params);
TrainedParameters read_parameters(std::istream& in);
void save_parameters(const std::string& path, const TrainedParameters& params);
TrainedParameters load_parameters(const std::string& path);

}  // namespace imac
