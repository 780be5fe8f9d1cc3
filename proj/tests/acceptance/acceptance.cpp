// One PASS/FAIL line per acceptance criterion. Exit status is the number of
// failed criteria. Tolerances are pinned here.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "../unit/oracles.hpp"
#include "imac/config.hpp"
#include "imac/dataset.hpp"
#include "imac/error.hpp"
#include "imac/network.hpp"
#include "imac/nn.hpp"
#include "imac/perf.hpp"
#include "imac/pipeline.hpp"
#include "imac/rng.hpp"
#include "imac/training.hpp"

using namespace imac;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail, double seconds) {
  char t[32];
  std::snprintf(t, sizeof t, "%.2fs", seconds);
  std::cout << (ok ? "PASS" : "FAIL") << "  [" << id << "] " << name << ": " << detail << "  (" << t << ")"
            << std::endl;
  if (!ok) ++failures;
}

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

std::string data_dir() {
  if (const char* e = std::getenv("IMAC_DATA_DIR")) return e;
  return IMAC_DATA_DIR;
}

std::string run_command(const std::string& cmd, int& status) {
  std::string out;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) {
    status = -1;
    return out;
  }
  char buf[512];
  while (std::fgets(buf, sizeof buf, p)) out += buf;
  status = pclose(p);
  return out;
}

// 1 ------------------------------------------------------------------------
void device_model() {
  const auto t0 = Clock::now();
  int status = 0;
  const std::string out = run_command(std::string(IMAC_CLI) + " devcheck", status);
  const double secs = since(t0);
  std::map<std::string, double> v;
  std::istringstream in(out);
  std::string key;
  double value;
  while (in >> key >> value) v[key] = value;
  auto rel = [](double got, double want) { return std::abs(got - want) / std::abs(want); };
  const double e_p = rel(v["R_P_ohm"], 8488.0), e_ap = rel(v["R_AP_0V_ohm"], 25465.0);
  const bool ok = status == 0 && v.count("TMR_V0") && e_p <= 1e-3 && e_ap <= 1e-3 && v["TMR_V0"] == 1.0 && secs < 1.0;
  report(1, "device model", ok,
         fmt("R_P=%.2f ohm R_AP(0V)=%.2f ohm TMR(V0)=%.6f, rel err %.1e (tol 1e-3), runtime < 1 s", v["R_P_ohm"],
             v["R_AP_0V_ohm"], v["TMR_V0"], std::max(e_p, e_ap)),
         secs);
}

// 2 ------------------------------------------------------------------------
void crossbar_oracle() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  SubarrayConfig cfg;
  cfg.n_inputs = 2;
  cfg.m_rows = 2;
  for (int wm = 0; wm < 16; ++wm)
    for (int bm = 0; bm < 4; ++bm) {
      TrainedParameters p;
      BinarizedLayer l;
      l.weights = BinaryMatrix(2, 2);
      for (int i = 0; i < 4; ++i) l.weights.data[i] = (wm >> i) & 1 ? 1 : -1;
      l.biases = {std::int8_t(bm & 1 ? 1 : -1), std::int8_t(bm & 2 ? 1 : -1)};
      p.layers = {l};
      const auto net = ImacNetwork::map(p);
      for (int x0 = -1; x0 <= 1; ++x0)
        for (int x1 = -1; x1 <= 1; ++x1) {
          const std::vector<double> x = {double(x0), double(x1)};
          const auto got = net.forward(x);
          const auto want = oracle::forward(p, x);
          for (int r = 0; r < 2; ++r) worst = std::max(worst, std::abs(got[r] - want[r]));
        }
    }
  auto rng = make_stream(1, "acceptance.crossbar");
  std::uniform_int_distribution<int> width(1, 512), depth(1, 3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int t = 0; t < 1000; ++t) {
    std::vector<int> dims = {width(rng)};
    for (int l = depth(rng); l > 0; --l) dims.push_back(width(rng));
    const auto p = oracle::random_params(dims, rng);
    NetworkOptions o;
    o.capacity = 64;
    const auto net = ImacNetwork::map(p, o);
    std::vector<double> x(static_cast<std::size_t>(dims[0]));
    for (auto& v : x) v = u(rng);
    const auto got = net.forward(x);
    const auto want = oracle::forward(p, x);
    for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
  }
  const double secs = since(t0);
  report(2, "crossbar oracle equivalence", worst <= 1e-12 && secs < 60.0,
         fmt("64 exhaustive 2x2 configs x 9 inputs + 1000 random nets <= 512x512, max |err| = %.3e (tol 1e-12)",
             worst),
         secs);
}

// 3 ------------------------------------------------------------------------
void mlp_accuracy(const RunConfig& cfg) {
  const auto t0 = Clock::now();
  try {
    const auto data = load_mnist(fs::path(cfg.data_dir) / "mnist");
    MlpHyperParams hp = cfg.mlp.hp;
    hp.seed = stream_seed(cfg.seed, "train.mlp");
    const auto r = train_mlp(data.train, &data.test, cfg.mlp.dims, hp);
    // Score on the mapped IMAC, not just the student.
    const auto net = ImacNetwork::map(r.params, cfg.network_options(r.params, cfg.input_encoding));
    long correct = 0;
    std::vector<double> x;
    for (int i = 0; i < data.test.count; ++i) {
      const auto s = data.test.sample(i);
      x.assign(s.begin(), s.end());
      correct += argmax(net.forward(x)) == data.test.labels[static_cast<std::size_t>(i)];
    }
    const double acc = static_cast<double>(correct) / data.test.count;
    long adc_correct = 0;
    for (int i = 0; i < data.test.count; ++i) {
      const auto s = data.test.sample(i);
      x.assign(s.begin(), s.end());
      adc_correct += quantized_label(net.forward(x), AdcParams{}) == data.test.labels[static_cast<std::size_t>(i)];
    }
    const double adc_acc = static_cast<double>(adc_correct) / data.test.count;
    const double secs = since(t0);
    report(3, "MLP 784x16x10 MNIST accuracy", acc >= 0.840 && secs <= 1800.0,
           fmt("IMAC test accuracy %.2f%% (>= 84.00%%), with 3-bit ADC %.2f%%, %g epochs", 100 * acc, 100 * adc_acc,
               hp.epochs),
           secs);
  } catch (const std::exception& e) {
    report(3, "MLP 784x16x10 MNIST accuracy", false, std::string("error: ") + e.what(), since(t0));
  }
}

// 4 ------------------------------------------------------------------------
struct CnnOutcome {
  double baseline = 0.0;  // step-1 full-precision CNN
  double pipeline = 0.0;  // conv → sign → IMAC FC → 3-bit ADC
  long legal = 0;
  long total = 0;
};

CnnOutcome run_cnn(const RunConfig& cfg, const DatasetHandle& data) {
  CnnHyperParams hp = cfg.cnn.hp;
  hp.seed = stream_seed(cfg.seed, "train.cnn.step1");
  hp.step2.seed = stream_seed(cfg.seed, "train.cnn.step2");
  const Split train = data.train.head(cfg.cnn.train_limit);
  const auto r = train_cnn_two_step(cfg.cnn.spec, train, &data.test, hp);
  const auto net = ImacNetwork::map(r.step2.params, cfg.network_options(r.step2.params, InputEncoding::ternary));
  PipelineOptions po;
  po.adc = cfg.adc;
  po.imac_latency_cycles = imac_timer_cycles(net.topology(), cfg.cost);
  const HeteroPipeline pipe(r.convs, net, po);
  CnnOutcome o;
  o.baseline = r.step1_test_accuracy;
  long correct = 0;
  for (int i = 0; i < data.test.count; ++i) {
    const auto run = pipe.run(data.test.sample(i));
    correct += run.label == data.test.labels[static_cast<std::size_t>(i)];
    o.legal += trace_is_legal(run.trace);
  }
  o.total = data.test.count;
  o.pipeline = static_cast<double>(correct) / data.test.count;
  return o;
}

void cnn_accuracy(const RunConfig& mnist_cfg, const RunConfig& cifar_cfg) {
  const auto t0 = Clock::now();
  std::string detail;
  bool ok = true;
  try {
    const auto data = load_mnist(fs::path(mnist_cfg.data_dir) / "mnist");
    const auto o = run_cnn(mnist_cfg, data);
    ok = ok && o.pipeline >= 0.964 && o.legal == o.total;
    detail += fmt("LeNet-5 CPU-IMAC %.2f%% (>= 96.40%%; full-precision %.2f%%), legal traces %.0f/%.0f", 100 * o.pipeline,
                  100 * o.baseline, double(o.legal), double(o.total));
  } catch (const std::exception& e) {
    ok = false;
    detail += std::string("LeNet-5 error: ") + e.what();
  }
  try {
    const auto data = load_cifar10(fs::path(cifar_cfg.data_dir) / "cifar10");
    const auto o = run_cnn(cifar_cfg, data);
    const double gap = o.baseline - o.pipeline;
    ok = ok && gap <= 0.02 && o.legal == o.total;
    detail += fmt("; reduced CNN CIFAR-10 CPU-IMAC %.2f%% vs full-precision %.2f%%, gap %.2f pp (<= 2.00)",
                  100 * o.pipeline, 100 * o.baseline, 100 * gap);
  } catch (const std::exception& e) {
    ok = false;
    detail += std::string("; CIFAR-10 error: ") + e.what();
  }
  const double secs = since(t0);
  report(4, "CPU-IMAC CNN accuracy", ok && secs <= 7200.0, detail, secs);
}

// 5 ------------------------------------------------------------------------
void perf_calibration(const RunConfig& cfg) {
  const auto t0 = Clock::now();
  int status = 0;
  const std::string out =
      run_command(std::string(IMAC_CLI) + " --out " + (fs::temp_directory_path() / "imac-acceptance").string() +
                      " perf --calibrate",
                  status);
  bool ok = status == 0;
  std::string detail;
  std::vector<double> fc_fraction;
  for (const auto& w : cfg.workloads) {
    CostModel cost = cfg.cost;
    cost.imac_energy_per_inference = w.imac_energy;
    const auto cal = calibrate(profile_from_cnn(resolve_model(w.model), cost, w.name), cost, w.target);
    const double ds = std::abs(cal.speedup_gain - w.target.speedup_gain);
    const double de = std::abs(cal.energy_reduction - w.target.energy_reduction);
    ok = ok && ds <= 1e-3 && de <= 1e-3;
    fc_fraction.push_back(cal.fc_time_fraction);
    detail += w.name + fmt(" speedup %.3f%% energy %.3f%% fc-time %.4f; ", 100 * cal.speedup_gain,
                           100 * cal.energy_reduction, cal.fc_time_fraction);
  }
  ok = ok && fc_fraction.size() == 2 && fc_fraction[0] > fc_fraction[1];
  ok = ok && out.find("LeNet-5") != std::string::npos;
  const double secs = since(t0);
  report(5, "perf calibration fixed point", ok && secs < 1.0, detail + "tol 0.1 pp, LeNet fc > VGG fc", secs);
}

// 6 ------------------------------------------------------------------------
void throughput() {
  const auto t0 = Clock::now();
  const std::vector<int> dims = {784, 16, 10};
  const auto t = imac_throughput(plan_topology(dims), CostModel{}.imac_settle_per_layer);
  const double lg = std::log10(t.inferences_per_s);
  const bool ok = t.latency_s < 10.8e-9 && lg >= 7.5 && lg <= 8.5 && t.cycles(3.7e9) < 40.0;
  report(6, "IMAC throughput 784x16x10", ok,
         fmt("latency %.2f ns (< 10.8), %.3g inferences/s (~1e8), %.1f cycles at 3.7 GHz (< 40)", t.latency_s * 1e9,
             t.inferences_per_s, t.cycles(3.7e9)),
         since(t0));
}

// 7 ------------------------------------------------------------------------
void protocol_suite() {
  const auto t0 = Clock::now();
  auto rng = make_stream(1, "acceptance.protocol");
  int false_reject = 0, false_accept = 0, mislabeled = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto good = oracle::legal_sequence(rng);
    mislabeled += !oracle::accepts(good);
    false_reject += !oracle::runs_clean(good);
  }
  for (int i = 0; i < 10000; ++i) false_accept += oracle::runs_clean(oracle::illegal_sequence(rng));
  const double secs = since(t0);
  report(7, "protocol property suite", false_reject == 0 && false_accept == 0 && mislabeled == 0 && secs < 10.0,
         fmt("10000 legal: %.0f false rejects; 10000 illegal: %.0f false accepts", false_reject, false_accept), secs);
}

// 8 ------------------------------------------------------------------------
void netlist_roundtrip() {
  const auto t0 = Clock::now();
  auto rng = make_stream(1, "acceptance.netlist");
  std::uniform_int_distribution<int> width(1, 64), depth(1, 4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int text_mismatch = 0, inference_mismatch = 0;
  for (int t = 0; t < 100; ++t) {
    std::vector<int> dims = {width(rng)};
    for (int l = depth(rng); l > 0; --l) dims.push_back(width(rng));
    const auto p = oracle::random_params(dims, rng);
    const auto net = ImacNetwork::map(p);
    const std::string text = export_netlist(net);
    const auto rebuilt = parse_netlist(text).build();
    text_mismatch += export_netlist(rebuilt) != text;
    std::vector<double> x(static_cast<std::size_t>(dims[0]));
    for (auto& v : x) v = u(rng);
    inference_mismatch += rebuilt.forward(x) != net.forward(x);
  }
  report(8, "netlist round trip", text_mismatch == 0 && inference_mismatch == 0,
         fmt("100 random topologies: %.0f byte mismatches, %.0f inference mismatches", text_mismatch,
             inference_mismatch),
         since(t0));
}

// 9 ------------------------------------------------------------------------
void gradient_check() {
  const auto t0 = Clock::now();
  auto rng = make_stream(1, "acceptance.gradcheck");
  nn::Sequential<double> net;
  net.add(std::make_unique<nn::Conv2d<double>>(Shape{1, 4, 4}, 1, 3, 0, rng));  // 9 weights + 1 bias
  nn::Matrix<double> x(3, 16);
  std::normal_distribution<double> n01;
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n01(rng);
  const std::vector<int> y = {0, 3, 2};
  nn::Matrix<double> g;
  auto loss = [&] { return nn::softmax_cross_entropy(net.forward(x, false), y, 1.0, g).loss; };
  nn::softmax_cross_entropy(net.forward(x, true), y, 1.0, g);
  net.zero_grad();
  net.backward(g);
  double worst = 0.0;
  int count = 0;
  for (auto* p : net.params())
    for (Eigen::Index i = 0; i < p->value.size(); ++i, ++count) {
      double& w = p->value.data()[i];
      const double keep = w, h = 1e-6;
      w = keep + h;
      const double up = loss();
      w = keep - h;
      const double down = loss();
      w = keep;
      const double fd = (up - down) / (2 * h), an = p->grad.data()[i];
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8}));
    }
  report(9, "step-1 gradient check", worst <= 1e-4 && count == 10,
         fmt("%.0f parameters, max relative error %.3e (tol 1e-4)", count, worst), since(t0));
}

}  // namespace

// Optional arguments pick criteria by number; default runs all of them.
int main(int argc, char** argv) {
  std::set<int> pick;
  for (int i = 1; i < argc; ++i) pick.insert(std::atoi(argv[i]));
  auto want = [&](int id) { return pick.empty() || pick.count(id) > 0; };
  RunConfig mnist_cfg = load_config(IMAC_SOURCE_DIR "/configs/default.yaml");
  RunConfig cifar_cfg = load_config(IMAC_SOURCE_DIR "/configs/cifar10.yaml");
  mnist_cfg.data_dir = cifar_cfg.data_dir = data_dir();

  if (want(1)) device_model();
  if (want(2)) crossbar_oracle();
  if (want(3)) mlp_accuracy(mnist_cfg);
  if (want(4)) cnn_accuracy(mnist_cfg, cifar_cfg);
  if (want(5)) perf_calibration(mnist_cfg);
  if (want(6)) throughput();
  if (want(7)) protocol_suite();
  if (want(8)) netlist_roundtrip();
  if (want(9)) gradient_check();
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures;
}
