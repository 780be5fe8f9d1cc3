#pragma once

#include <optional>
#include <span>
#include <utility>

#include "imac/device.hpp"

namespace imac {

// Two-device differential synapse. Weight +1 is (P, AP), weight -1 is (AP, P).
struct SynapsePair {
  Orientation plus = Orientation::AP;
  Orientation minus = Orientation::P;

  static SynapsePair from_weight(int w);
  int weight() const;  // throws StateError for the two unused configurations
};

struct NeuronParams {
  double vdd = 0.8;
  double vss = 0.0;
  double slope_k = 10.0;  // 1/V, fit parameter of the logistic VTC

  double bias_midpoint() const { return 0.5 * (vdd - vss); }
  double swing() const { return vdd - vss; }
  void validate() const;
};

// Transimpedance stage shared by one crossbar row. When no gain is given the
// crossbar derives one per layer (see crossbar.hpp).
struct AmplifierParams {
  std::optional<double> transimpedance_gain;  // V/A
  void validate() const;
};

enum class Fidelity { ideal, circuit };

struct SynapseCurrents {
  double i_plus = 0.0;
  double i_minus = 0.0;
};

SynapseCurrents synapse_currents(const SynapsePair& pair, double input_voltage, const DeviceParams& device,
                                 BiasPoint bias);

// Row amplifier. Circuit mode references the output to the neuron midpoint and
// clips to the supply rails; ideal mode returns gain·Σ(i⁺ − i⁻) unclipped.
double amplifier_output(std::span<const SynapseCurrents> currents, double gain, const NeuronParams& neuron,
                        Fidelity fidelity);

// Logistic inverter VTC: vss + (vdd − vss)·σ(−k·(v_in − b)), input clipped to the rails.
double neuron_activation(double v_in, const NeuronParams& neuron);

// σ(−x).
double ideal_neuron(double x);

// Gain that makes the circuit path reproduce σ(−scale·u) for a numeric
// pre-activation u, given inputs driven at `volts_per_unit`.
double matched_gain(const NeuronParams& neuron, const DeviceParams& device, BiasPoint bias, double volts_per_unit,
                    double scale = 1.0);

// Gain mapping the full-scale differential current of an n-input row onto the
// supply swing: (vdd − vss) / (n·vdd·(G_P − G_AP)).
double full_scale_gain(const NeuronParams& neuron, const DeviceParams& device, BiasPoint bias, int n_inputs);

}  // namespace imac
