#include "imac/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "imac/error.hpp"
#include "binio.hpp"
#include "text.hpp"

namespace imac {

int ImacTopology::subarrays_used() const {
  int n = 0;
  for (const auto& l : layers) n += static_cast<int>(l.slices.size());
  return n;
}

long long ImacTopology::cells_used() const {
  long long cells = 0;
  for (const auto& l : layers)
    for (const auto& s : l.slices) cells += 2LL * l.rows * s.columns();
  return cells;
}

void ImacTopology::validate() const {
  if (layer_dims.size() < 2) throw InvalidParameter("topology: need at least an input and an output width");
  if (layers.size() + 1 != layer_dims.size()) throw InvalidParameter("topology: assignment/layer count mismatch");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& la = layers[l];
    if (la.rows != layer_dims[l + 1] || la.rows > kSubarrayDim)
      throw InvalidParameter("topology: layer " + std::to_string(l + 1) + " rows do not fit a subarray");
    int expect = 0;
    for (std::size_t s = 0; s < la.slices.size(); ++s) {
      const auto& sl = la.slices[s];
      if (sl.col_begin != expect || sl.col_end < sl.col_begin || (sl.inputs() == 0 && !sl.has_bias) ||
          sl.columns() > kSubarrayDim)
        throw InvalidParameter("topology: layer " + std::to_string(l + 1) + " slices do not tile the inputs");
      if (sl.has_bias != (s + 1 == la.slices.size()))
        throw InvalidParameter("topology: bias column must sit in the last slice");
      expect = sl.col_end;
    }
    if (expect != layer_dims[l]) throw InvalidParameter("topology: slices do not cover all inputs");
  }
  if (subarrays_used() > capacity)
    throw CapacityExceeded("topology needs " + std::to_string(subarrays_used()) + " subarrays, capacity is " +
                           std::to_string(capacity));
}

ImacTopology plan_topology(std::span<const int> layer_dims, int capacity) {
  if (layer_dims.size() < 2) throw InvalidParameter("topology: need at least an input and an output width");
  for (int d : layer_dims)
    if (d < 1) throw InvalidParameter("topology: layer widths must be positive");
  ImacTopology topo;
  topo.layer_dims.assign(layer_dims.begin(), layer_dims.end());
  topo.capacity = capacity;
  int next_subarray = 0;
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    const int n = layer_dims[l];
    const int m = layer_dims[l + 1];
    if (m > kSubarrayDim)
      throw InvalidParameter("topology: layer " + std::to_string(l + 1) + " has " + std::to_string(m) +
                             " neurons, more than one subarray's rows");
    LayerAssignment la;
    la.rows = m;
    // Fill 512-column slices left to right; the bias column goes into the last
    // slice, which may spill it into a slice of its own.
    int begin = 0;
    while (true) {
      const int remaining = n - begin;
      SliceAssignment s;
      s.subarray = next_subarray++;
      s.col_begin = begin;
      if (remaining + 1 <= kSubarrayDim) {
        s.col_end = n;
        s.has_bias = true;
        la.slices.push_back(s);
        break;
      }
      s.col_end = begin + std::min(remaining, kSubarrayDim);
      la.slices.push_back(s);
      begin = s.col_end;
      if (begin == n) {  // inputs filled exactly: bias-only slice
        SliceAssignment b{next_subarray++, n, n, true};
        la.slices.push_back(b);
        break;
      }
    }
    topo.layers.push_back(std::move(la));
  }
  topo.validate();
  return topo;
}

int argmax(std::span<const double> scores) {
  if (scores.empty()) return -1;
  return static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

ImacNetwork ImacNetwork::map(const TrainedParameters& params, const NetworkOptions& options) {
  params.validate();
  const auto dims = params.dims();
  ImacNetwork net;
  net.topology_ = plan_topology(dims, options.capacity);
  net.options_ = options;
  net.params_ = params;
  if (net.params_.scales.empty()) net.params_.scales.assign(params.layers.size(), 1.0);

  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    const auto& la = net.topology_.layers[l];
    SubarrayConfig base;
    base.m_rows = la.rows;
    base.device = options.device;
    base.neuron = options.neuron;
    base.read_bias = options.read_bias;
    base.fidelity = options.fidelity;
    base.encoding = l == 0 ? options.input_encoding : InputEncoding::analog;
    base.activation_scale = net.params_.scale(l);
    if (l < options.gains.size()) base.amp.transimpedance_gain = options.gains[l];

    std::vector<Subarray> slices;
    for (const auto& sl : la.slices) {
      SubarrayConfig cfg = base;
      cfg.n_inputs = std::max(sl.inputs(), 1);
      cfg.has_bias_column = sl.has_bias;
      Subarray sa(cfg);
      // Bias-only slices carry one dummy column held at +1 and never driven.
      BinaryMatrix w(la.rows, cfg.n_inputs, 1);
      if (sl.inputs() > 0)
        for (int r = 0; r < la.rows; ++r)
          for (int c = 0; c < sl.inputs(); ++c) w(r, c) = layer.weights(r, sl.col_begin + c);
      std::span<const std::int8_t> b;
      if (sl.has_bias) b = layer.biases;
      net.programming_cycles_ += sa.program(w, b);
      slices.push_back(std::move(sa));
    }
    base.n_inputs = layer.inputs();
    net.gains_.push_back(slices.back().gain());
    net.layer_configs_.push_back(base);
    net.slices_.push_back(std::move(slices));
  }
  return net;
}

double ImacNetwork::layer_gain(int layer) const { return gains_.at(layer); }

InputEncoding ImacNetwork::layer_encoding(int layer) const { return layer_configs_.at(layer).encoding; }

const SubarrayConfig& ImacNetwork::layer_config(int layer) const { return layer_configs_.at(layer); }

const Subarray& ImacNetwork::slice_subarray(int layer, int slice) const { return slices_.at(layer).at(slice); }

int ImacNetwork::weight(int layer, int row, int col) const {
  const auto& la = topology_.layers.at(layer);
  for (std::size_t s = 0; s < la.slices.size(); ++s)
    if (col >= la.slices[s].col_begin && col < la.slices[s].col_end)
      return slices_[layer][s].weight(row, col - la.slices[s].col_begin);
  throw InvalidInput("network: weight column out of range");
}

int ImacNetwork::bias(int layer, int row) const { return slices_.at(layer).back().bias(row); }

std::vector<double> ImacNetwork::forward(std::span<const double> input, Fidelity fidelity) const {
  if (slices_.empty()) throw StateError("network: not mapped");
  if (static_cast<int>(input.size()) != topology_.layer_dims.front())
    throw DimensionMismatch("network: expected " + std::to_string(topology_.layer_dims.front()) + " inputs, got " +
                            std::to_string(input.size()));
  std::vector<double> x(input.begin(), input.end());
  static const double kZero = 0.0;
  for (std::size_t l = 0; l < slices_.size(); ++l) {
    const auto& la = topology_.layers[l];
    std::vector<double> acc(la.rows, 0.0);
    // Partial sums from every slice meet in the row's shared amplifier.
    for (std::size_t s = 0; s < la.slices.size(); ++s) {
      const auto& sl = la.slices[s];
      std::span<const double> part = sl.inputs() > 0
                                         ? std::span<const double>(x).subspan(sl.col_begin, sl.inputs())
                                         : std::span<const double>(&kZero, 1);
      const auto p = slices_[l][s].accumulate(part, fidelity);
      for (int r = 0; r < la.rows; ++r) acc[r] += p[r];
    }
    x = activate_rows(acc, layer_configs_[l], gains_[l], fidelity);
  }
  return x;
}

InferenceResult ImacNetwork::infer(std::span<const double> input, Fidelity fidelity) const {
  InferenceResult r;
  r.scores = forward(input, fidelity);
  r.label = argmax(r.scores);
  return r;
}

// ---------------------------------------------------------------------------
// Netlist

namespace {

const char* encoding_name(InputEncoding e) {
  switch (e) {
    case InputEncoding::ternary:
      return "ternary";
    case InputEncoding::unipolar:
      return "unipolar";
    case InputEncoding::analog:
      return "analog";
  }
  return "analog";
}

bool encoding_from_name(std::string_view s, InputEncoding& e) {
  if (s == "ternary") e = InputEncoding::ternary;
  else if (s == "unipolar") e = InputEncoding::unipolar;
  else if (s == "analog") e = InputEncoding::analog;
  else return false;
  return true;
}

}  // namespace

std::string export_netlist(const ImacNetwork& network) {
  using detail::format_double;
  if (network.layer_count() == 0) throw StateError("network: not mapped");
  const auto& opt = network.options();
  const auto& d = opt.device;
  const auto& n = opt.neuron;
  std::string out;
  out.reserve(1 << 16);
  out += "* IMAC netlist\n";
  out += ".DEVICE RA=" + format_double(d.ra_product) + " TMR0=" + format_double(d.tmr0) +
         " V0=" + format_double(d.v0) + " L=" + format_double(d.mtj_length) + " W=" + format_double(d.mtj_width) +
         " VB=" + format_double(opt.read_bias.v_b) + "\n";
  out += ".SUPPLY VDD=" + format_double(n.vdd) + " VSS=" + format_double(n.vss) +
         " ENC=" + encoding_name(opt.input_encoding) + "\n";

  const std::string r_p = format_double(resistance(d, {Orientation::P}, opt.read_bias));
  const std::string r_ap = format_double(resistance(d, {Orientation::AP}, opt.read_bias));
  const auto& dims = network.topology().layer_dims;
  for (int l = 0; l < network.layer_count(); ++l) {
    const int in = dims[l];
    const int rows = dims[l + 1];
    const std::string name = "L" + std::to_string(l + 1);
    out += "SUBCKT " + name + " IN=" + std::to_string(in) + " OUT=" + std::to_string(rows) +
           " SCALE=" + format_double(network.layer_scale(l)) + "\n";
    for (int r = 0; r < rows; ++r) {
      for (int j = 0; j <= in; ++j) {
        const SynapsePair pair = SynapsePair::from_weight(j < in ? network.weight(l, r, j) : network.bias(l, r));
        for (int side = 0; side < 2; ++side) {
          const Orientation o = side == 0 ? pair.plus : pair.minus;
          out += "XCELL " + std::to_string(r) + " " + std::to_string(2 * j + side) + " STATE=" + to_string(o) +
                 " R=" + (o == Orientation::P ? r_p : r_ap) + "\n";
        }
      }
    }
    const std::string gain = format_double(network.layer_gain(l));
    const std::string k = format_double(n.slope_k);
    const std::string b = format_double(n.bias_midpoint());
    for (int r = 0; r < rows; ++r) out += "XAMP " + std::to_string(r) + " GAIN=" + gain + "\n";
    for (int r = 0; r < rows; ++r) out += "XNEURON " + std::to_string(r) + " K=" + k + " B=" + b + "\n";
    out += "ENDS\n";
  }
  for (int l = 1; l < network.layer_count(); ++l)
    out += "CONNECT L" + std::to_string(l) + " L" + std::to_string(l + 1) + "\n";
  return out;
}

namespace {

struct Token {
  std::string_view text;
  std::size_t column;  // 1-based
};

std::vector<Token> tokenize(std::string_view line) {
  std::vector<Token> toks;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    if (i >= line.size()) break;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    toks.push_back({line.substr(start, i - start), start + 1});
  }
  return toks;
}

class CardReader {
 public:
  CardReader(const std::vector<Token>& toks, std::size_t line) : toks_(toks), line_(line) {}

  [[noreturn]] void fail(const std::string& msg, std::size_t col) const { throw FormatError(msg, line_, col); }

  template <typename Int>
  Int integer(std::size_t idx, const char* what) const {
    need(idx, what);
    Int v{};
    if (!detail::parse_int(toks_[idx].text, v)) fail(std::string("expected integer ") + what, toks_[idx].column);
    return v;
  }

  // KEY=value lookup among tokens starting at `from`; every token must be a known key.
  std::map<std::string, Token> keys(std::size_t from, std::initializer_list<const char*> allowed) const {
    std::map<std::string, Token> kv;
    for (std::size_t i = from; i < toks_.size(); ++i) {
      const auto eq = toks_[i].text.find('=');
      if (eq == std::string_view::npos || eq == 0) fail("expected KEY=value", toks_[i].column);
      const std::string key(toks_[i].text.substr(0, eq));
      if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end())
        fail("unknown parameter '" + key + "'", toks_[i].column);
      if (kv.count(key)) fail("duplicate parameter '" + key + "'", toks_[i].column);
      kv[key] = Token{toks_[i].text.substr(eq + 1), toks_[i].column + eq + 1};
    }
    for (const char* a : allowed)
      if (!kv.count(a)) fail(std::string("missing parameter ") + a, toks_.front().column);
    return kv;
  }

  double number(const Token& t, const char* what) const {
    double v = 0.0;
    if (!detail::parse_double(t.text, v)) fail(std::string("expected number for ") + what, t.column);
    return v;
  }

  std::size_t line() const { return line_; }

 private:
  void need(std::size_t idx, const char* what) const {
    if (idx >= toks_.size())
      fail(std::string("missing ") + what,
           toks_.empty() ? 1 : toks_.back().column + toks_.back().text.size());
  }

  const std::vector<Token>& toks_;
  std::size_t line_;
};

int layer_index(const CardReader& rd, const Token& t) {
  int k = 0;
  if (t.text.size() < 2 || t.text[0] != 'L' || !detail::parse_int(t.text.substr(1), k) || k < 1)
    rd.fail("expected layer name L<k>", t.column);
  return k;
}

struct PendingLayer {
  int in = 0;
  int out = 0;
  double scale = 1.0;
  std::size_t line = 0;
  std::vector<std::int8_t> states;  // -1 unset, 0 P, 1 AP; out × 2(in+1)
  std::vector<double> gains;        // NaN = unset
  std::vector<double> slopes;
  std::vector<double> biases;
};

}  // namespace

ParsedNetlist parse_netlist(std::string_view text) {
  ParsedNetlist result;
  bool have_device = false, have_supply = false;
  std::vector<PendingLayer> layers;
  PendingLayer* open = nullptr;
  std::vector<std::pair<std::pair<int, int>, std::size_t>> connects;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  double r_p = 0.0, r_ap = 0.0;

  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    const auto toks = tokenize(line);
    if (toks.empty() || toks.front().text.front() == '*') continue;
    CardReader rd(toks, line_no);
    const std::string_view card = toks.front().text;

    if (card == ".DEVICE") {
      if (open) rd.fail(".DEVICE inside SUBCKT", toks.front().column);
      auto kv = rd.keys(1, {"RA", "TMR0", "V0", "L", "W", "VB"});
      auto& d = result.options.device;
      d.ra_product = rd.number(kv["RA"], "RA");
      d.tmr0 = rd.number(kv["TMR0"], "TMR0");
      d.v0 = rd.number(kv["V0"], "V0");
      d.mtj_length = rd.number(kv["L"], "L");
      d.mtj_width = rd.number(kv["W"], "W");
      result.options.read_bias.v_b = rd.number(kv["VB"], "VB");
      try {
        r_p = resistance(d, {Orientation::P}, result.options.read_bias);
        r_ap = resistance(d, {Orientation::AP}, result.options.read_bias);
      } catch (const Error& e) {
        rd.fail(e.what(), toks.front().column);
      }
      have_device = true;
    } else if (card == ".SUPPLY") {
      if (open) rd.fail(".SUPPLY inside SUBCKT", toks.front().column);
      auto kv = rd.keys(1, {"VDD", "VSS", "ENC"});
      result.options.neuron.vdd = rd.number(kv["VDD"], "VDD");
      result.options.neuron.vss = rd.number(kv["VSS"], "VSS");
      if (!encoding_from_name(kv["ENC"].text, result.options.input_encoding))
        rd.fail("unknown encoding", kv["ENC"].column);
      have_supply = true;
    } else if (card == "SUBCKT") {
      if (open) rd.fail("nested SUBCKT (missing ENDS)", toks.front().column);
      if (!have_device || !have_supply) rd.fail("SUBCKT before .DEVICE/.SUPPLY", toks.front().column);
      if (toks.size() < 2) rd.fail("missing subcircuit name", toks.front().column + card.size());
      const int k = layer_index(rd, toks[1]);
      if (k != static_cast<int>(layers.size()) + 1)
        rd.fail("expected subcircuit L" + std::to_string(layers.size() + 1), toks[1].column);
      auto kv = rd.keys(2, {"IN", "OUT", "SCALE"});
      PendingLayer pl;
      pl.line = line_no;
      if (!detail::parse_int(kv["IN"].text, pl.in) || pl.in < 1) rd.fail("bad IN", kv["IN"].column);
      if (!detail::parse_int(kv["OUT"].text, pl.out) || pl.out < 1) rd.fail("bad OUT", kv["OUT"].column);
      pl.scale = rd.number(kv["SCALE"], "SCALE");
      if (!(pl.scale > 0.0)) rd.fail("SCALE must be positive", kv["SCALE"].column);
      if (!layers.empty() && layers.back().out != pl.in)
        rd.fail("IN does not match previous layer OUT", kv["IN"].column);
      pl.states.assign(static_cast<std::size_t>(pl.out) * 2 * (pl.in + 1), -1);
      pl.gains.assign(pl.out, std::nan(""));
      pl.slopes.assign(pl.out, std::nan(""));
      pl.biases.assign(pl.out, std::nan(""));
      layers.push_back(std::move(pl));
      open = &layers.back();
    } else if (card == "XCELL") {
      if (!open) rd.fail("XCELL outside SUBCKT", toks.front().column);
      const int r = rd.integer<int>(1, "row");
      const int c = rd.integer<int>(2, "column");
      const int ncols = 2 * (open->in + 1);
      if (r < 0 || r >= open->out) rd.fail("row out of range", toks[1].column);
      if (c < 0 || c >= ncols) rd.fail("column out of range", toks[2].column);
      auto kv = rd.keys(3, {"STATE", "R"});
      std::int8_t st;
      if (kv["STATE"].text == "P") st = 0;
      else if (kv["STATE"].text == "AP") st = 1;
      else rd.fail("STATE must be P or AP", kv["STATE"].column);
      const double rr = rd.number(kv["R"], "R");
      const double expect = st == 0 ? r_p : r_ap;
      if (std::abs(rr - expect) > 1e-9 * expect) rd.fail("resistance does not match device state", kv["R"].column);
      auto& slot = open->states[static_cast<std::size_t>(r) * ncols + c];
      if (slot != -1) rd.fail("duplicate cell", toks[1].column);
      slot = st;
    } else if (card == "XAMP") {
      if (!open) rd.fail("XAMP outside SUBCKT", toks.front().column);
      const int r = rd.integer<int>(1, "row");
      if (r < 0 || r >= open->out) rd.fail("row out of range", toks[1].column);
      auto kv = rd.keys(2, {"GAIN"});
      const double g = rd.number(kv["GAIN"], "GAIN");
      if (!(g > 0.0)) rd.fail("GAIN must be positive", kv["GAIN"].column);
      if (!std::isnan(open->gains[r])) rd.fail("duplicate amplifier", toks[1].column);
      open->gains[r] = g;
    } else if (card == "XNEURON") {
      if (!open) rd.fail("XNEURON outside SUBCKT", toks.front().column);
      const int r = rd.integer<int>(1, "row");
      if (r < 0 || r >= open->out) rd.fail("row out of range", toks[1].column);
      auto kv = rd.keys(2, {"K", "B"});
      if (!std::isnan(open->slopes[r])) rd.fail("duplicate neuron", toks[1].column);
      open->slopes[r] = rd.number(kv["K"], "K");
      open->biases[r] = rd.number(kv["B"], "B");
    } else if (card == "ENDS") {
      if (!open) rd.fail("ENDS without SUBCKT", toks.front().column);
      if (toks.size() > 1) rd.fail("unexpected token after ENDS", toks[1].column);
      const std::size_t k = layers.size();
      const int ncols = 2 * (open->in + 1);
      BinarizedLayer bl;
      bl.weights = BinaryMatrix(open->out, open->in);
      bl.biases.assign(open->out, 1);
      for (int r = 0; r < open->out; ++r) {
        for (int j = 0; j <= open->in; ++j) {
          const auto p = open->states[static_cast<std::size_t>(r) * ncols + 2 * j];
          const auto m = open->states[static_cast<std::size_t>(r) * ncols + 2 * j + 1];
          if (p < 0 || m < 0)
            rd.fail("subcircuit L" + std::to_string(k) + " is missing cell (" + std::to_string(r) + ", " +
                        std::to_string(p < 0 ? 2 * j : 2 * j + 1) + ")",
                    1);
          if (p == m)
            rd.fail("subcircuit L" + std::to_string(k) + " has an illegal synapse pair at row " +
                        std::to_string(r),
                    1);
          const std::int8_t w = p == 0 ? 1 : -1;
          if (j < open->in) bl.weights(r, j) = w;
          else bl.biases[r] = w;
        }
        if (std::isnan(open->gains[r]) || std::isnan(open->slopes[r]))
          rd.fail("subcircuit L" + std::to_string(k) + " row " + std::to_string(r) + " lacks XAMP or XNEURON", 1);
        if (open->gains[r] != open->gains[0]) rd.fail("amplifier gains differ within a layer", 1);
        if (open->slopes[r] != open->slopes[0] || open->biases[r] != open->biases[0])
          rd.fail("neuron parameters differ within a layer", 1);
      }
      if (k == 1) {
        result.options.neuron.slope_k = open->slopes[0];
      } else if (open->slopes[0] != result.options.neuron.slope_k) {
        rd.fail("neuron slope differs between layers", 1);
      }
      if (std::abs(open->biases[0] - result.options.neuron.bias_midpoint()) > 1e-12)
        rd.fail("neuron bias does not match supply midpoint", 1);
      result.params.layers.push_back(std::move(bl));
      result.params.scales.push_back(open->scale);
      result.options.gains.emplace_back(open->gains[0]);
      open = nullptr;
    } else if (card == "CONNECT") {
      if (open) rd.fail("CONNECT inside SUBCKT", toks.front().column);
      if (toks.size() != 3) rd.fail("CONNECT takes two layer names", toks.front().column);
      connects.push_back({{layer_index(rd, toks[1]), layer_index(rd, toks[2])}, line_no});
    } else {
      rd.fail("unknown card '" + std::string(card) + "'", toks.front().column);
    }
  }

  if (open) throw FormatError("unexpected end of file: SUBCKT opened here has no ENDS", open->line, 1);
  if (layers.empty()) throw FormatError("netlist contains no subcircuits", line_no == 0 ? 1 : line_no, 1);

  const int n_layers = static_cast<int>(layers.size());
  std::vector<bool> linked(n_layers, false);
  for (const auto& [pair, line] : connects) {
    const auto [a, b] = pair;
    if (a > n_layers || b > n_layers)
      throw FormatError("dangling node: CONNECT references undefined subcircuit", line, 1);
    if (b != a + 1) throw FormatError("CONNECT must join consecutive layers", line, 1);
    if (linked[a - 1]) throw FormatError("duplicate CONNECT", line, 1);
    linked[a - 1] = true;
  }
  for (int l = 0; l + 1 < n_layers; ++l)
    if (!linked[l])
      throw FormatError("dangling node: L" + std::to_string(l + 1) + " output is not connected", layers[l].line, 1);
  return result;
}

// ---------------------------------------------------------------------------
// Parameter container

namespace {

void put_bits(std::ostream& out, const std::vector<std::int8_t>& v) {
  std::vector<char> bytes((v.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] > 0) bytes[i / 8] = char(bytes[i / 8] | (1 << (i % 8)));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::int8_t> get_bits(std::istream& in, std::size_t n) {
  std::vector<unsigned char> bytes((n + 7) / 8);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
    throw FormatError("parameter file truncated");
  std::vector<std::int8_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = (bytes[i / 8] >> (i % 8)) & 1 ? 1 : -1;
  return v;
}

}  // namespace

void write_parameters(std::ostream& out, const TrainedParameters& params) {
  params.validate();
  out.write("IMAC", 4);
  out.put(static_cast<char>(kParameterFileVersion));
  detail::put_u32(out, static_cast<std::uint32_t>(params.layers.size()));
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    detail::put_u32(out, static_cast<std::uint32_t>(layer.outputs()));
    detail::put_u32(out, static_cast<std::uint32_t>(layer.inputs()));
    detail::put_f64(out, params.scale(l));
    put_bits(out, layer.weights.data);
    put_bits(out, layer.biases);
  }
}

TrainedParameters read_parameters(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::string_view(magic, 4) != "IMAC") throw FormatError("parameter file: bad magic");
  const int version = in.get();
  if (version != kParameterFileVersion)
    throw FormatError("parameter file: unsupported version " + std::to_string(version));
  const std::uint32_t n = detail::get_u32(in, "parameter file");
  if (n == 0 || n > 64) throw FormatError("parameter file: implausible layer count");
  TrainedParameters p;
  for (std::uint32_t l = 0; l < n; ++l) {
    const std::uint32_t rows = detail::get_u32(in, "parameter file");
    const std::uint32_t cols = detail::get_u32(in, "parameter file");
    if (rows == 0 || cols == 0 || rows > (1u << 16) || cols > (1u << 20))
      throw FormatError("parameter file: implausible layer shape");
    const double s = detail::get_f64(in, "parameter file");
    BinarizedLayer layer;
    layer.weights.rows = static_cast<int>(rows);
    layer.weights.cols = static_cast<int>(cols);
    layer.weights.data = get_bits(in, static_cast<std::size_t>(rows) * cols);
    layer.biases = get_bits(in, rows);
    p.layers.push_back(std::move(layer));
    p.scales.push_back(s);
  }
  try {
    p.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("parameter file: ") + e.what());
  }
  return p;
}

void save_parameters(const std::string& path, const TrainedParameters& params) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path + " for writing");
  write_parameters(f, params);
}

TrainedParameters load_parameters(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path);
  return read_parameters(f);
}

}  // namespace imac
