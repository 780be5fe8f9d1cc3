#include "selftest.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "imac/crossbar.hpp"
#include "imac/error.hpp"
#include "imac/network.hpp"
#include "imac/pipeline.hpp"
#include "imac/rng.hpp"

namespace imac::tools {

namespace {

double logistic_neg(double x) { return 1.0 / (1.0 + std::exp(x)); }

BinarizedLayer random_layer(int rows, int cols, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  BinarizedLayer l;
  l.weights = BinaryMatrix(rows, cols);
  for (auto& w : l.weights.data) w = coin(rng) ? 1 : -1;
  for (int r = 0; r < rows; ++r) l.biases.push_back(coin(rng) ? 1 : -1);
  return l;
}

// Exhaustive 2×2 crossbar check against Σ W·x + B.
double crossbar_exhaustive() {
  double worst = 0.0;
  SubarrayConfig cfg;
  cfg.n_inputs = 2;
  cfg.m_rows = 2;
  for (int wm = 0; wm < 16; ++wm)
    for (int bm = 0; bm < 4; ++bm) {
      BinaryMatrix w(2, 2);
      for (int i = 0; i < 4; ++i) w.data[i] = (wm >> i) & 1 ? 1 : -1;
      std::vector<std::int8_t> b = {std::int8_t((bm & 1) ? 1 : -1), std::int8_t((bm & 2) ? 1 : -1)};
      Subarray s(cfg);
      s.program(w, b);
      for (int x0 = -1; x0 <= 1; ++x0)
        for (int x1 = -1; x1 <= 1; ++x1) {
          const std::vector<double> x = {double(x0), double(x1)};
          const auto y = s.forward(x, Fidelity::ideal);
          for (int r = 0; r < 2; ++r) {
            const double pre = w(r, 0) * x0 + w(r, 1) * x1 + b[r];
            worst = std::max(worst, std::abs(y[r] - logistic_neg(pre)));
          }
        }
    }
  return worst;
}

// Random multi-layer nets against the composed closed form.
double network_composition(std::mt19937_64& rng, int trials) {
  double worst = 0.0;
  std::uniform_int_distribution<int> width(1, 40);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < trials; ++t) {
    TrainedParameters p;
    std::vector<int> dims = {width(rng), width(rng), width(rng)};
    for (int l = 0; l < 2; ++l) p.layers.push_back(random_layer(dims[l + 1], dims[l], rng));
    const auto net = ImacNetwork::map(p);
    std::vector<double> h(static_cast<std::size_t>(dims[0]));
    for (auto& v : h) v = u(rng);
    const auto got = net.forward(h);
    for (const auto& layer : p.layers) {
      std::vector<double> next(static_cast<std::size_t>(layer.outputs()));
      for (int r = 0; r < layer.outputs(); ++r) {
        double acc = layer.biases[r];
        for (int c = 0; c < layer.inputs(); ++c) acc += layer.weights(r, c) * h[c];
        next[r] = logistic_neg(acc);
      }
      h = next;
    }
    for (std::size_t i = 0; i < h.size(); ++i) worst = std::max(worst, std::abs(got[i] - h[i]));
  }
  return worst;
}

// Export → parse → export must reproduce the text.
int netlist_roundtrip(std::mt19937_64& rng, int trials) {
  int bad = 0;
  std::uniform_int_distribution<int> width(1, 12);
  for (int t = 0; t < trials; ++t) {
    TrainedParameters p;
    std::vector<int> dims = {width(rng), width(rng), width(rng)};
    for (int l = 0; l < 2; ++l) p.layers.push_back(random_layer(dims[l + 1], dims[l], rng));
    const auto text = export_netlist(ImacNetwork::map(p));
    if (export_netlist(parse_netlist(text).build()) != text) ++bad;
  }
  return bad;
}

// Legal handshakes must pass; a store after outputs are ready must throw.
int protocol_sequences(std::mt19937_64& rng, int trials) {
  int bad = 0;
  std::uniform_int_distribution<int> count(0, 20);
  for (int t = 0; t < trials; ++t) {
    TransferProtocolState st(7);
    try {
      for (int round = 0; round < 3; ++round) {
        st.store_imac(kReadyAddress, 0);
        const int n = count(rng);
        for (int i = 0; i < n; ++i) st.store_imac(kDataBase + i, (i % 3) - 1.0);
        st.store_imac(kReadyAddress, 1);
        std::vector<int> codes(3, 5);
        st.complete(codes);
        for (int i = 0; i < 3; ++i)
          if (st.load_imac(kDataBase + i) != 5.0) ++bad;
      }
    } catch (const std::exception&) {
      ++bad;
    }
    try {
      st.store_imac(kDataBase, 1.0);
      ++bad;
    } catch (const ProtocolViolation&) {
    }
  }
  return bad;
}

}  // namespace

int run_selftest(std::ostream& out, std::uint64_t seed) {
  auto rng = make_stream(seed, "selftest");
  int failed = 0;
  auto report = [&](const std::string& name, bool ok, const std::string& detail) {
    out << (ok ? "PASS " : "FAIL ") << name << "  " << detail << '\n';
    if (!ok) ++failed;
  };
  auto sci = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return std::string(buf);
  };
  const double e1 = crossbar_exhaustive();
  report("crossbar-2x2-exhaustive", e1 <= 1e-12, "max error " + sci(e1));
  const double e2 = network_composition(rng, 200);
  report("network-composition", e2 <= 1e-12, "max error " + sci(e2));
  const int e3 = netlist_roundtrip(rng, 50);
  report("netlist-roundtrip", e3 == 0, std::to_string(e3) + " mismatches");
  const int e4 = protocol_sequences(rng, 200);
  report("protocol-sequences", e4 == 0, std::to_string(e4) + " violations");
  return failed;
}

}  // namespace imac::tools
