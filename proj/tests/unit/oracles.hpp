#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. Nothing here calls into the library's arithmetic.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "imac/binary.hpp"
#include "imac/error.hpp"
#include "imac/pipeline.hpp"

namespace oracle {

inline double sigmoid_neg(double x) { return 1.0 / (1.0 + std::exp(x)); }

// Junction resistance from the angle form 2R(1+TMR)/(2 + TMR(1 + cos θ)).
inline double mtj_resistance(double ra, double tmr0_pct, double v0, double l_nm, double w_nm, double vb,
                             double theta) {
  const double area = (l_nm * 1e-3) * (w_nm * 1e-3) * std::numbers::pi / 4.0;
  const double r = ra / area;
  const double tmr = (tmr0_pct / 100.0) / (1.0 + (vb / v0) * (vb / v0));
  return 2.0 * r * (1.0 + tmr) / (2.0 + tmr * (1.0 + std::cos(theta)));
}

inline imac::BinarizedLayer random_layer(int rows, int cols, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  imac::BinarizedLayer l;
  l.weights = imac::BinaryMatrix(rows, cols);
  for (auto& w : l.weights.data) w = coin(rng) ? 1 : -1;
  l.biases.resize(static_cast<std::size_t>(rows));
  for (auto& b : l.biases) b = coin(rng) ? 1 : -1;
  return l;
}

inline imac::TrainedParameters random_params(const std::vector<int>& dims, std::mt19937_64& rng) {
  imac::TrainedParameters p;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) p.layers.push_back(random_layer(dims[l + 1], dims[l], rng));
  return p;
}

// σ(−s(Wx + B)) composed layer by layer.
inline std::vector<double> forward(const imac::TrainedParameters& p, std::vector<double> h) {
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& layer = p.layers[l];
    const double s = l < p.scales.size() ? p.scales[l] : 1.0;
    std::vector<double> next(static_cast<std::size_t>(layer.weights.rows));
    for (int r = 0; r < layer.weights.rows; ++r) {
      double acc = layer.biases[static_cast<std::size_t>(r)];
      for (int c = 0; c < layer.weights.cols; ++c) acc += layer.weights(r, c) * h[static_cast<std::size_t>(c)];
      next[static_cast<std::size_t>(r)] = sigmoid_neg(s * acc);
    }
    h = std::move(next);
  }
  return h;
}

// Handshake model used to label random op sequences.
enum class Op { ready0, ready1, store, load, load_ready, complete };

struct Step {
  Op op;
  int slot = 0;  // store / load slot, or output count for complete
};

class Protocol {
 public:
  // Returns false if `s` is illegal from the current state (state unchanged).
  bool apply(const Step& s) {
    switch (s.op) {
      case Op::ready0:
        if (phase_ != -1) return false;
        phase_ = 0;
        outputs_ = 0;
        return true;
      case Op::store:
        return phase_ == 0 && s.slot >= 0 && s.slot < 256;
      case Op::ready1:
        if (phase_ != 0) return false;
        phase_ = 1;
        return true;
      case Op::complete:
        if (phase_ != 1 || s.slot > 128) return false;
        phase_ = -1;
        outputs_ = s.slot;
        return true;
      case Op::load:
        return phase_ == -1 && s.slot >= 0 && s.slot < outputs_;
      case Op::load_ready:
        return true;
    }
    return false;
  }
  int phase() const { return phase_; }
  int outputs() const { return outputs_; }

 private:
  int phase_ = -1;
  int outputs_ = 0;  // valid output slots; none before the first completion
};

// A random sequence that the handshake accepts.
inline std::vector<Step> legal_sequence(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> rounds(1, 4), fill(0, 40), outs(0, 12), extra(0, 3);
  std::vector<Step> seq;
  const int n = rounds(rng);
  for (int r = 0; r < n; ++r) {
    for (int i = extra(rng); i > 0; --i) seq.push_back({Op::load_ready});
    seq.push_back({Op::ready0});
    const int k = fill(rng);
    std::uniform_int_distribution<int> slot(0, 255);
    for (int i = 0; i < k; ++i) seq.push_back({Op::store, slot(rng)});
    seq.push_back({Op::ready1});
    const int m = outs(rng);
    seq.push_back({Op::complete, m});
    if (m > 0) {
      std::uniform_int_distribution<int> out_slot(0, m - 1);
      for (int i = extra(rng); i > 0; --i) seq.push_back({Op::load, out_slot(rng)});
    }
  }
  return seq;
}

inline bool accepts(const std::vector<Step>& seq) {
  Protocol p;
  for (const auto& s : seq)
    if (!p.apply(s)) return false;
  return true;
}

// Mutates a legal sequence until the model rejects it.
inline std::vector<Step> illegal_sequence(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> kind(0, 3), op(0, 5), slot(0, 300);
  for (;;) {
    std::vector<Step> seq = legal_sequence(rng);
    std::uniform_int_distribution<std::size_t> pos(0, seq.size());
    const std::size_t at = pos(rng);
    switch (kind(rng)) {
      case 0:  // insert a random op
        seq.insert(seq.begin() + static_cast<std::ptrdiff_t>(at), Step{static_cast<Op>(op(rng)), slot(rng)});
        break;
      case 1:  // drop one op
        if (at < seq.size()) seq.erase(seq.begin() + static_cast<std::ptrdiff_t>(at));
        break;
      case 2:  // swap neighbours
        if (at + 1 < seq.size()) std::swap(seq[at], seq[at + 1]);
        break;
      default:  // duplicate a ready write
        for (std::size_t i = at; i < seq.size(); ++i)
          if (seq[i].op == Op::ready0 || seq[i].op == Op::ready1) {
            seq.insert(seq.begin() + static_cast<std::ptrdiff_t>(i), seq[i]);
            break;
          }
        break;
    }
    if (!accepts(seq)) return seq;
  }
}

// Drives the library state machine; true when no step raised a protocol error.
inline bool runs_clean(const std::vector<Step>& seq) {
  imac::TransferProtocolState st(3);
  try {
    for (const auto& s : seq) {
      switch (s.op) {
        case Op::ready0: st.store_imac(imac::kReadyAddress, 0.0); break;
        case Op::ready1: st.store_imac(imac::kReadyAddress, 1.0); break;
        case Op::store: st.store_imac(imac::kDataBase + static_cast<std::uint32_t>(s.slot), s.slot % 3 - 1.0); break;
        case Op::load: st.load_imac(imac::kDataBase + static_cast<std::uint32_t>(s.slot)); break;
        case Op::load_ready: st.load_imac(imac::kReadyAddress); break;
        case Op::complete: st.complete(std::vector<int>(static_cast<std::size_t>(s.slot), 3)); break;
      }
    }
  } catch (const imac::ProtocolViolation&) {
    return false;
  }
  return imac::trace_is_legal(st.trace());
}

}  // namespace oracle
