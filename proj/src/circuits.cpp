#include "imac/circuits.hpp"

#include <algorithm>
#include <cmath>

#include "imac/error.hpp"

namespace imac {

SynapsePair SynapsePair::from_weight(int w) {
  if (w == 1) return {Orientation::P, Orientation::AP};
  if (w == -1) return {Orientation::AP, Orientation::P};
  throw InvalidInput("synapse weight must be -1 or +1, got " + std::to_string(w));
}

int SynapsePair::weight() const {
  if (plus == Orientation::P && minus == Orientation::AP) return 1;
  if (plus == Orientation::AP && minus == Orientation::P) return -1;
  throw StateError("synapse pair is not in a legal ±1 configuration");
}

void NeuronParams::validate() const {
  if (!(vdd > vss)) throw InvalidParameter("neuron: vdd must exceed vss");
  if (!(slope_k > 0.0) || !std::isfinite(slope_k)) throw InvalidParameter("neuron: slope_k must be positive");
}

void AmplifierParams::validate() const {
  if (transimpedance_gain && !(*transimpedance_gain > 0.0))
    throw InvalidParameter("amplifier: transimpedance gain must be positive");
}

SynapseCurrents synapse_currents(const SynapsePair& pair, double input_voltage, const DeviceParams& device,
                                 BiasPoint bias) {
  return {input_voltage * conductance(device, {pair.plus}, bias),
          input_voltage * conductance(device, {pair.minus}, bias)};
}

double amplifier_output(std::span<const SynapseCurrents> currents, double gain, const NeuronParams& neuron,
                        Fidelity fidelity) {
  if (currents.empty()) throw InvalidInput("amplifier: no input currents");
  if (!(gain > 0.0)) throw InvalidParameter("amplifier: gain must be positive");
  double sum = 0.0;
  for (const auto& c : currents) sum += c.i_plus - c.i_minus;
  const double v = gain * sum;
  if (fidelity == Fidelity::ideal) return v;
  return std::clamp(neuron.bias_midpoint() + v, neuron.vss, neuron.vdd);
}

double neuron_activation(double v_in, const NeuronParams& neuron) {
  const double v = std::clamp(v_in, neuron.vss, neuron.vdd);
  return neuron.vss + neuron.swing() * ideal_neuron(neuron.slope_k * (v - neuron.bias_midpoint()));
}

double ideal_neuron(double x) {
  // σ(−x) = 1/(1+e^x), written to stay finite for large |x|.
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(x));
}

namespace {
double delta_g(const DeviceParams& device, BiasPoint bias) {
  const double dg = conductance(device, {Orientation::P}, bias) - conductance(device, {Orientation::AP}, bias);
  if (!(dg > 0.0)) throw InvalidParameter("device: G_P must exceed G_AP (TMR must be positive)");
  return dg;
}
}  // namespace

double matched_gain(const NeuronParams& neuron, const DeviceParams& device, BiasPoint bias, double volts_per_unit,
                    double scale) {
  neuron.validate();
  return scale / (neuron.slope_k * volts_per_unit * delta_g(device, bias));
}

double full_scale_gain(const NeuronParams& neuron, const DeviceParams& device, BiasPoint bias, int n_inputs) {
  neuron.validate();
  if (n_inputs <= 0) throw InvalidParameter("amplifier: row must have at least one input");
  return neuron.swing() / (n_inputs * neuron.vdd * delta_g(device, bias));
}

}  // namespace imac
