#pragma once

#include <span>
#include <vector>

#include "imac/binary.hpp"
#include "imac/circuits.hpp"
#include "imac/device.hpp"

namespace imac {

inline constexpr int kSubarrayDim = 512;

// How numeric inputs are turned into column voltages in circuit mode.
//   ternary:  {-1, 0, +1} -> {-(vdd-vss)/2, 0, +(vdd-vss)/2}
//   unipolar: [0, 1] pixels -> [0, vdd-vss]
//   analog:   upstream neuron outputs, driven at (v - vss)
enum class InputEncoding { ternary, unipolar, analog };

double volts_per_unit(InputEncoding encoding, const NeuronParams& neuron);

struct SubarrayConfig {
  int n_inputs = 1;
  int m_rows = 1;
  bool has_bias_column = true;
  DeviceParams device;
  AmplifierParams amp;
  NeuronParams neuron;
  BiasPoint read_bias;
  Fidelity fidelity = Fidelity::ideal;
  InputEncoding encoding = InputEncoding::ternary;
  double activation_scale = 1.0;

  int columns() const { return n_inputs + (has_bias_column ? 1 : 0); }
  void validate() const;
};

// One n×m IMAC subarray: m rows of synapse pairs (plus an optional bias
// column), a differential amplifier and a sigmoidal neuron per row.
class Subarray {
 public:
  explicit Subarray(SubarrayConfig config);

  const SubarrayConfig& config() const { return config_; }

  // Writes one row per cycle; returns the number of cycles used (= m_rows).
  int program(const BinaryMatrix& weights, std::span<const std::int8_t> biases);
  bool programmed() const { return programmed_; }

  const SynapsePair& synapse(int row, int col) const;
  int weight(int row, int col) const { return synapse(row, col).weight(); }
  int bias(int row) const;

  // Per-row accumulation before the neuron: the numeric Σ W·x (+B) in ideal
  // mode, or the summed differential current Σ(i⁺ − i⁻) in amperes in circuit mode.
  std::vector<double> accumulate(std::span<const double> inputs, Fidelity fidelity) const;

  // Neuron outputs normalised to (0, 1); circuit-mode voltages are
  // vss + (vdd − vss)·value.
  std::vector<double> forward(std::span<const double> inputs) const { return forward(inputs, config_.fidelity); }
  std::vector<double> forward(std::span<const double> inputs, Fidelity fidelity) const;

  // Transimpedance gain used in circuit mode.
  double gain() const;
  double conductance_p() const { return g_p_; }
  double conductance_ap() const { return g_ap_; }

 private:
  void require_programmed() const;

  SubarrayConfig config_;
  std::vector<SynapsePair> synapses_;  // m_rows × columns()
  std::vector<std::int8_t> signs_;     // weight of each pair, mirrors synapses_
  bool programmed_ = false;
  double g_p_ = 0.0;
  double g_ap_ = 0.0;
};

// Applies the row amplifier and neuron to accumulated values produced by one
// or more subarray slices feeding the same rows.
std::vector<double> activate_rows(std::span<const double> accumulated, const SubarrayConfig& config, double gain,
                                  Fidelity fidelity);

// max over rows of |circuit − ideal| for the same programmed state.
double forward_fidelity_gap(const Subarray& subarray, std::span<const double> inputs);

}  // namespace imac
