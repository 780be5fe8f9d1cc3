#include "imac/config.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>

#include "imac/error.hpp"
#include <cmath>

namespace imac {

RunConfig::RunConfig() {
  mlp.hp.epochs = 10;
  mlp.hp.lr_decay = 0.8;
  cnn.hp.step1_epochs = 4;
  cnn.hp.step2.epochs = 15;
  cnn.hp.step2.lr_decay = 0.8;
  PerfWorkload lenet{"LeNet-5", "lenet5", 97e-9, {0.112, 0.10}, std::nullopt};
  PerfWorkload vgg{"VGG", "vgg16", 512e-9, {0.013, 0.065}, std::nullopt};
  workloads = {lenet, vgg};
}

void RunConfig::validate() const {
  device.validate();
  neuron.validate();
  if (!std::isfinite(read_bias.v_b) || std::abs(read_bias.v_b) > neuron.swing())
    throw InvalidParameter("device.read_bias must lie within the supply range");
  if (gain_mode == GainMode::fixed && !(fixed_gain > 0.0)) throw InvalidParameter("circuit.gain must be > 0");
  if (capacity < 1) throw InvalidParameter("topology.capacity must be >= 1");
  if (adc) adc->validate();
  mlp.hp.validate();
  cnn.hp.validate();
  cnn.spec.validate();
  if (mlp.dims.size() < 2) throw InvalidParameter("training.mlp.dims needs at least two widths");
  cost.validate();
  for (const auto& w : workloads) {
    resolve_model(w.model).validate();
    if (!(w.imac_energy >= 0.0)) throw InvalidParameter("perf workload imac_energy must be >= 0");
  }
}

NetworkOptions RunConfig::network_options(const TrainedParameters& params, InputEncoding first) const {
  NetworkOptions o;
  o.device = device;
  o.neuron = neuron;
  o.read_bias = read_bias;
  o.fidelity = fidelity;
  o.input_encoding = first;
  o.capacity = capacity;
  for (const auto& layer : params.layers) {
    switch (gain_mode) {
      case GainMode::matched:
        o.gains.emplace_back(std::nullopt);
        break;
      case GainMode::full_scale:
        o.gains.emplace_back(full_scale_gain(neuron, device, read_bias, layer.inputs() + 1));
        break;
      case GainMode::fixed:
        o.gains.emplace_back(fixed_gain);
        break;
    }
  }
  return o;
}

CnnSpec resolve_model(const std::string& model) {
  if (model == "lenet5") return CnnSpec::lenet5();
  if (model == "reduced_vgg") return CnnSpec::reduced_vgg();
  if (model == "vgg16") return vgg16_cifar();
  return CnnSpec::parse(model);
}

namespace {

[[noreturn]] void fail_at(const YAML::Node& n, const std::string& msg) {
  const auto m = n.Mark();
  throw FormatError(msg, m.line >= 0 ? m.line + 1 : 0, m.column >= 0 ? m.column + 1 : 0);
}

class Section {
 public:
  Section(const YAML::Node& node, std::string path) : path_(std::move(path)) {
    // An absent or empty section behaves like an empty mapping.
    if (node.IsDefined() && !node.IsNull()) {
      if (!node.IsMap()) fail_at(node, "'" + path_ + "' must be a mapping");
      node_ = node;
    }
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return node_.IsMap() && lookup(key).IsDefined();
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    const YAML::Node n = lookup(key);
    try {
      out = n.as<T>();
    } catch (const YAML::Exception&) {
      fail_at(n, "bad value for '" + name(key) + "'");
    }
  }

  YAML::Node raw(const std::string& key) {
    seen_.insert(key);
    return node_.IsMap() ? lookup(key) : YAML::Node(YAML::NodeType::Undefined);
  }

  Section child(const std::string& key) { return Section(raw(key), name(key)); }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  // Rejects any key that no getter asked for.
  void finish() const {
    if (!node_.IsMap()) return;
    for (const auto& kv : node_) {
      const std::string key = kv.first.as<std::string>();
      if (!seen_.count(key)) fail_at(kv.first, "unknown key '" + name(key) + "'");
    }
  }

 private:
  YAML::Node lookup(const std::string& key) const {
    const YAML::Node& n = node_;
    return n[key];
  }

  YAML::Node node_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_mlp_hp(Section& s, MlpHyperParams& hp) {
  s.get("epochs", hp.epochs);
  s.get("batch_size", hp.batch_size);
  s.get("learning_rate", hp.learning_rate);
  s.get("lr_decay", hp.lr_decay);
  s.get("init_range", hp.init_range);
  s.get("loss_scale", hp.loss_scale);
  s.get("activation_scales", hp.activation_scales);
  s.get("max_steps", hp.max_steps);
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw FormatError("config: " + e.msg, e.mark.line + 1, e.mark.column + 1);
  }
  RunConfig c;
  if (!root || root.IsNull()) return c;
  Section top(root, "");
  top.get("seed", c.seed);
  top.get("data_dir", c.data_dir);

  Section dev = top.child("device");
  dev.get("ra_product", c.device.ra_product);
  dev.get("tmr0", c.device.tmr0);
  dev.get("v0", c.device.v0);
  dev.get("mtj_length", c.device.mtj_length);
  dev.get("mtj_width", c.device.mtj_width);
  dev.get("hm_length", c.device.hm_length);
  dev.get("hm_width", c.device.hm_width);
  dev.get("hm_thickness", c.device.hm_thickness);
  dev.get("read_bias", c.read_bias.v_b);
  dev.finish();

  Section cir = top.child("circuit");
  cir.get("vdd", c.neuron.vdd);
  cir.get("vss", c.neuron.vss);
  cir.get("slope_k", c.neuron.slope_k);
  if (cir.has("gain")) {
    const YAML::Node g = cir.raw("gain");
    const std::string s = g.as<std::string>();
    if (s == "matched") {
      c.gain_mode = GainMode::matched;
    } else if (s == "full_scale") {
      c.gain_mode = GainMode::full_scale;
    } else {
      try {
        c.fixed_gain = g.as<double>();
        c.gain_mode = GainMode::fixed;
      } catch (const YAML::Exception&) {
        fail_at(g, "circuit.gain must be 'matched', 'full_scale' or a number (V/A)");
      }
    }
  }
  if (cir.has("fidelity")) {
    const YAML::Node f = cir.raw("fidelity");
    const std::string s = f.as<std::string>();
    if (s == "ideal") c.fidelity = Fidelity::ideal;
    else if (s == "circuit") c.fidelity = Fidelity::circuit;
    else fail_at(f, "circuit.fidelity must be 'ideal' or 'circuit'");
  }
  if (cir.has("input_encoding")) {
    const YAML::Node f = cir.raw("input_encoding");
    const std::string s = f.as<std::string>();
    if (s == "unipolar") c.input_encoding = InputEncoding::unipolar;
    else if (s == "ternary") c.input_encoding = InputEncoding::ternary;
    else if (s == "analog") c.input_encoding = InputEncoding::analog;
    else fail_at(f, "circuit.input_encoding must be unipolar, ternary or analog");
  }
  cir.finish();

  Section adc = top.child("adc");
  if (adc.has("bits")) {
    const YAML::Node b = adc.raw("bits");
    if (b.as<std::string>() == "off") {
      c.adc.reset();
    } else {
      try {
        c.adc->bits = b.as<int>();
      } catch (const YAML::Exception&) {
        fail_at(b, "adc.bits must be an integer or 'off'");
      }
    }
  }
  if (c.adc) {
    adc.get("v_low", c.adc->v_low);
    adc.get("v_high", c.adc->v_high);
  } else {
    double ignored = 0.0;
    adc.get("v_low", ignored);
    adc.get("v_high", ignored);
  }
  adc.finish();

  Section topo = top.child("topology");
  topo.get("capacity", c.capacity);
  topo.finish();

  Section tr = top.child("training");
  Section mlp = tr.child("mlp");
  mlp.get("dataset", c.mlp.dataset);
  mlp.get("dims", c.mlp.dims);
  mlp.get("train_limit", c.mlp.train_limit);
  read_mlp_hp(mlp, c.mlp.hp);
  mlp.finish();
  Section cnn = tr.child("cnn");
  cnn.get("dataset", c.cnn.dataset);
  if (cnn.has("model")) {
    const YAML::Node m = cnn.raw("model");
    try {
      c.cnn.spec = resolve_model(m.as<std::string>());
    } catch (const Error& e) {
      fail_at(m, std::string("training.cnn.model: ") + e.what());
    }
  }
  cnn.get("train_limit", c.cnn.train_limit);
  cnn.get("step1_epochs", c.cnn.hp.step1_epochs);
  cnn.get("batch_size", c.cnn.hp.batch_size);
  cnn.get("step1_learning_rate", c.cnn.hp.step1_learning_rate);
  cnn.get("step1_lr_decay", c.cnn.hp.step1_lr_decay);
  cnn.get("cache_dir", c.cnn.hp.cache_dir);
  Section step2 = cnn.child("step2");
  read_mlp_hp(step2, c.cnn.hp.step2);
  step2.finish();
  cnn.finish();
  tr.finish();

  Section cost = top.child("cost_model");
  cost.get("cpu_frequency", c.cost.cpu_frequency);
  cost.get("macs_per_cycle", c.cost.macs_per_cycle);
  cost.get("cpu_energy_per_cycle", c.cost.cpu_energy_per_cycle);
  cost.get("cpu_idle_energy_per_cycle", c.cost.cpu_idle_energy_per_cycle);
  cost.get("l1_energy_per_access", c.cost.l1_energy_per_access);
  cost.get("l2_energy_per_access", c.cost.l2_energy_per_access);
  cost.get("llc_energy_per_access", c.cost.llc_energy_per_access);
  cost.get("dram_energy_per_access", c.cost.dram_energy_per_access);
  cost.get("buffer_energy_per_access", c.cost.buffer_energy_per_access);
  cost.get("neuron_power", c.cost.neuron_power);
  cost.get("imac_settle_per_layer", c.cost.imac_settle_per_layer);
  cost.get("overlap_data_stores", c.cost.overlap_data_stores);
  cost.finish();

  const YAML::Node wl = top.raw("perf");
  if (wl.IsDefined() && !wl.IsNull()) {
    if (!wl.IsSequence()) fail_at(wl, "'perf' must be a list of workloads");
    c.workloads.clear();
    for (std::size_t i = 0; i < wl.size(); ++i) {
      Section w(wl[i], "perf[" + std::to_string(i) + "]");
      PerfWorkload p;
      w.get("name", p.name);
      w.get("model", p.model);
      w.get("imac_energy", p.imac_energy);
      w.get("target_speedup", p.target.speedup_gain);
      w.get("target_energy", p.target.energy_reduction);
      if (w.has("accuracy_diff")) {
        double d = 0.0;
        w.get("accuracy_diff", d);
        p.accuracy_diff = d;
      }
      w.finish();
      if (p.name.empty() || p.model.empty()) fail_at(wl[i], "perf workload needs 'name' and 'model'");
      c.workloads.push_back(p);
    }
  }
  top.finish();

  try {
    c.validate();
  } catch (const InvalidParameter& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open config " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

}  // namespace imac
