#include "imac/crossbar.hpp"

#include <cmath>
#include <string>

#include "imac/error.hpp"

namespace imac {

double volts_per_unit(InputEncoding encoding, const NeuronParams& neuron) {
  switch (encoding) {
    case InputEncoding::ternary:
      return 0.5 * neuron.swing();
    case InputEncoding::unipolar:
    case InputEncoding::analog:
      return neuron.swing();
  }
  return neuron.swing();
}

void SubarrayConfig::validate() const {
  if (n_inputs < 1 || m_rows < 1 || columns() > kSubarrayDim || m_rows > kSubarrayDim)
    throw InvalidParameter("subarray: dimensions must lie in [1, 512], got " + std::to_string(m_rows) + "x" +
                           std::to_string(columns()));
  device.validate();
  neuron.validate();
  amp.validate();
  if (!(activation_scale > 0.0) || !std::isfinite(activation_scale))
    throw InvalidParameter("subarray: activation scale must be positive");
}

Subarray::Subarray(SubarrayConfig config) : config_(std::move(config)) {
  config_.validate();
  synapses_.assign(static_cast<std::size_t>(config_.m_rows) * config_.columns(), SynapsePair{});
  signs_.assign(synapses_.size(), -1);
  g_p_ = imac::conductance(config_.device, {Orientation::P}, config_.read_bias);
  g_ap_ = imac::conductance(config_.device, {Orientation::AP}, config_.read_bias);
}

int Subarray::program(const BinaryMatrix& weights, std::span<const std::int8_t> biases) {
  if (weights.rows != config_.m_rows || weights.cols != config_.n_inputs)
    throw DimensionMismatch("subarray: weight matrix is " + std::to_string(weights.rows) + "x" +
                            std::to_string(weights.cols) + ", expected " + std::to_string(config_.m_rows) + "x" +
                            std::to_string(config_.n_inputs));
  const std::size_t want_bias = config_.has_bias_column ? config_.m_rows : 0;
  if (biases.size() != want_bias)
    throw DimensionMismatch("subarray: expected " + std::to_string(want_bias) + " biases, got " +
                            std::to_string(biases.size()));
  // Validate before touching any cell so a failed program leaves the state intact.
  for (auto w : weights.data)
    if (w != 1 && w != -1) throw InvalidInput("subarray: non-binary weight " + std::to_string(w));
  for (auto b : biases)
    if (b != 1 && b != -1) throw InvalidInput("subarray: non-binary bias " + std::to_string(b));

  const int cols = config_.columns();
  int cycles = 0;
  for (int r = 0; r < config_.m_rows; ++r) {  // one write word line per cycle
    SynapsePair* row = &synapses_[static_cast<std::size_t>(r) * cols];
    std::int8_t* cache = &signs_[static_cast<std::size_t>(r) * cols];
    for (int c = 0; c < config_.n_inputs; ++c) {
      row[c] = SynapsePair::from_weight(weights(r, c));
      cache[c] = weights(r, c);
    }
    if (config_.has_bias_column) {
      row[config_.n_inputs] = SynapsePair::from_weight(biases[r]);
      cache[config_.n_inputs] = biases[r];
    }
    ++cycles;
  }
  programmed_ = true;
  return cycles;
}

const SynapsePair& Subarray::synapse(int row, int col) const {
  if (row < 0 || row >= config_.m_rows || col < 0 || col >= config_.columns())
    throw InvalidInput("subarray: cell index out of range");
  return synapses_[static_cast<std::size_t>(row) * config_.columns() + col];
}

int Subarray::bias(int row) const {
  if (!config_.has_bias_column) throw StateError("subarray: slice has no bias column");
  return weight(row, config_.n_inputs);
}

void Subarray::require_programmed() const {
  if (!programmed_) throw StateError("subarray: forward called before program");
}

double Subarray::gain() const {
  if (config_.amp.transimpedance_gain) return *config_.amp.transimpedance_gain;
  return matched_gain(config_.neuron, config_.device, config_.read_bias,
                      volts_per_unit(config_.encoding, config_.neuron), config_.activation_scale);
}

std::vector<double> Subarray::accumulate(std::span<const double> inputs, Fidelity fidelity) const {
  require_programmed();
  if (static_cast<int>(inputs.size()) != config_.n_inputs)
    throw DimensionMismatch("subarray: expected " + std::to_string(config_.n_inputs) + " inputs, got " +
                            std::to_string(inputs.size()));
  const int cols = config_.columns();
  std::vector<double> out(config_.m_rows, 0.0);

  if (fidelity == Fidelity::ideal) {
    for (int r = 0; r < config_.m_rows; ++r) {
      const std::int8_t* row = &signs_[static_cast<std::size_t>(r) * cols];
      double acc = 0.0;
      for (int c = 0; c < config_.n_inputs; ++c) acc += row[c] * inputs[c];
      if (config_.has_bias_column) acc += row[config_.n_inputs];
      out[r] = acc;
    }
    return out;
  }

  // Circuit mode: each column is driven at x·volts_per_unit (the bias column at
  // full scale) and each pair contributes I⁺ − I⁻ = V·(G⁺ − G⁻).
  const double vpu = volts_per_unit(config_.encoding, config_.neuron);
  auto g = [this](Orientation o) { return o == Orientation::P ? g_p_ : g_ap_; };
  for (int r = 0; r < config_.m_rows; ++r) {
    const SynapsePair* row = &synapses_[static_cast<std::size_t>(r) * cols];
    double acc = 0.0;
    for (int c = 0; c < cols; ++c) {
      const double v = c < config_.n_inputs ? inputs[c] * vpu : vpu;
      acc += v * g(row[c].plus) - v * g(row[c].minus);
    }
    out[r] = acc;
  }
  return out;
}

std::vector<double> activate_rows(std::span<const double> accumulated, const SubarrayConfig& config, double gain,
                                  Fidelity fidelity) {
  std::vector<double> out(accumulated.size());
  if (fidelity == Fidelity::ideal) {
    for (std::size_t r = 0; r < accumulated.size(); ++r)
      out[r] = ideal_neuron(config.activation_scale * accumulated[r]);
    return out;
  }
  const NeuronParams& n = config.neuron;
  for (std::size_t r = 0; r < accumulated.size(); ++r) {
    const SynapseCurrents summed{accumulated[r], 0.0};
    const double v_amp = amplifier_output(std::span(&summed, 1), gain, n, Fidelity::circuit);
    out[r] = (neuron_activation(v_amp, n) - n.vss) / n.swing();
  }
  return out;
}

std::vector<double> Subarray::forward(std::span<const double> inputs, Fidelity fidelity) const {
  if (!config_.has_bias_column) throw StateError("subarray: a bias-less slice cannot drive neurons on its own");
  const auto acc = accumulate(inputs, fidelity);
  return activate_rows(acc, config_, fidelity == Fidelity::circuit ? gain() : 1.0, fidelity);
}

double forward_fidelity_gap(const Subarray& subarray, std::span<const double> inputs) {
  const auto ideal = subarray.forward(inputs, Fidelity::ideal);
  const auto circuit = subarray.forward(inputs, Fidelity::circuit);
  double gap = 0.0;
  for (std::size_t r = 0; r < ideal.size(); ++r) gap = std::max(gap, std::abs(circuit[r] - ideal[r]));
  return gap;
}

}  // namespace imac
