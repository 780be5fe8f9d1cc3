#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "imac/circuits.hpp"
#include "imac/error.hpp"
#include "oracles.hpp"

using namespace imac;

TEST_CASE("synapse pair encodes ±1 and rejects the parallel states") {
  CHECK(SynapsePair::from_weight(1).plus == Orientation::P);
  CHECK(SynapsePair::from_weight(1).minus == Orientation::AP);
  CHECK(SynapsePair::from_weight(-1).plus == Orientation::AP);
  CHECK(SynapsePair::from_weight(1).weight() == 1);
  CHECK(SynapsePair::from_weight(-1).weight() == -1);
  CHECK_THROWS_AS(SynapsePair::from_weight(0), InvalidInput);
  CHECK_THROWS_AS((SynapsePair{Orientation::P, Orientation::P}.weight()), StateError);
  CHECK_THROWS_AS((SynapsePair{Orientation::AP, Orientation::AP}.weight()), StateError);
}

TEST_CASE("differential current is V·(G_P − G_AP) signed by the weight") {
  const DeviceParams d;
  const double gp = 1.0 / oracle::mtj_resistance(10, 200, 0.65, 50, 30, 0, 0);
  const double gap = 1.0 / oracle::mtj_resistance(10, 200, 0.65, 50, 30, 0, M_PI);
  for (double v : {-0.4, 0.0, 0.13, 0.8}) {
    const auto plus = synapse_currents(SynapsePair::from_weight(1), v, d, {});
    const auto minus = synapse_currents(SynapsePair::from_weight(-1), v, d, {});
    CHECK(plus.i_plus - plus.i_minus == doctest::Approx(v * (gp - gap)).epsilon(1e-12));
    CHECK(minus.i_plus - minus.i_minus == doctest::Approx(-v * (gp - gap)).epsilon(1e-12));
  }
}

TEST_CASE("neuron VTC is a falling logistic centred on the midpoint") {
  const NeuronParams n;
  CHECK(neuron_activation(n.bias_midpoint(), n) == doctest::Approx(0.4));
  double prev = neuron_activation(n.vss, n);
  for (double v = 0.01; v <= n.vdd; v += 0.01) {
    const double y = neuron_activation(v, n);
    CHECK(y < prev);
    CHECK(y > n.vss);
    CHECK(y < n.vdd);
    CHECK(y == doctest::Approx(n.swing() * oracle::sigmoid_neg(n.slope_k * (v - 0.4))).epsilon(1e-12));
    prev = y;
  }
  // Inputs beyond the rails clamp.
  CHECK(neuron_activation(5.0, n) == neuron_activation(n.vdd, n));
  CHECK(neuron_activation(-5.0, n) == neuron_activation(n.vss, n));
}

TEST_CASE("ideal neuron stays finite and symmetric") {
  CHECK(ideal_neuron(0.0) == 0.5);
  CHECK(ideal_neuron(1000.0) == 0.0);
  CHECK(ideal_neuron(-1000.0) == 1.0);
  for (double x = -30; x <= 30; x += 0.5) CHECK(ideal_neuron(x) + ideal_neuron(-x) == doctest::Approx(1.0));
}

TEST_CASE("matched gain maps the circuit onto σ(−s·u) inside the linear range") {
  const DeviceParams d;
  const NeuronParams n;
  const BiasPoint b;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-3.5, 3.5);
  for (double scale : {0.5, 1.0, 2.0}) {
    const double vpu = 0.4;
    const double g = matched_gain(n, d, b, vpu, scale);
    for (int i = 0; i < 200; ++i) {
      const double x = u(rng) / scale;  // keeps g·I within the supply swing
      const SynapseCurrents c = synapse_currents(SynapsePair::from_weight(1), x * vpu, d, b);
      const double v = amplifier_output(std::span(&c, 1), g, n, Fidelity::circuit);
      const double out = neuron_activation(v, n) / n.swing();
      CHECK(out == doctest::Approx(oracle::sigmoid_neg(scale * x)).epsilon(1e-12));
    }
  }
}

TEST_CASE("full-scale gain puts the extreme row current on the rail") {
  const DeviceParams d;
  const NeuronParams n;
  const int rows = 16;
  const double g = full_scale_gain(n, d, {}, rows);
  std::vector<SynapseCurrents> c(rows, synapse_currents(SynapsePair::from_weight(1), n.vdd, d, {}));
  CHECK(amplifier_output(c, g, n, Fidelity::ideal) == doctest::Approx(n.swing()));
  CHECK(amplifier_output(c, g, n, Fidelity::circuit) == n.vdd);
}

TEST_CASE("amplifier argument checks") {
  const NeuronParams n;
  CHECK_THROWS_AS(amplifier_output({}, 1.0, n, Fidelity::ideal), InvalidInput);
  const SynapseCurrents c{1e-6, 0};
  CHECK_THROWS_AS(amplifier_output(std::span(&c, 1), 0.0, n, Fidelity::ideal), InvalidParameter);
  NeuronParams bad;
  bad.vdd = bad.vss;
  CHECK_THROWS_AS(bad.validate(), InvalidParameter);
  CHECK_THROWS_AS(full_scale_gain(n, DeviceParams{}, {}, 0), InvalidParameter);
}
