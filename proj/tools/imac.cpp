// imac: command-line front end for the IMAC simulator.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "imac/config.hpp"
#include "imac/dataset.hpp"
#include "imac/device.hpp"
#include "imac/error.hpp"
#include "imac/network.hpp"
#include "imac/perf.hpp"
#include "imac/pipeline.hpp"
#include "imac/rng.hpp"
#include "imac/training.hpp"
#include "selftest.hpp"

namespace fs = std::filesystem;
using namespace imac;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "imac-out";
  int jobs = 1;
};

RunConfig load_run_config(const Globals& g) {
  RunConfig c = g.config_path.empty() ? RunConfig{} : load_config(g.config_path);
  if (g.seed) c.seed = *g.seed;
  c.validate();
  return c;
}

fs::path out_path(const Globals& g, const std::string& name) {
  fs::create_directories(g.out_dir);
  return fs::path(g.out_dir) / name;
}

DatasetHandle load_dataset(const std::string& kind, const RunConfig& c) {
  if (kind == "mnist") return load_mnist(fs::path(c.data_dir) / "mnist");
  if (kind == "cifar10") return load_cifar10(fs::path(c.data_dir) / "cifar10");
  if (kind == "xor") return make_xor();
  throw InvalidParameter("unknown dataset '" + kind + "' (mnist, cifar10, xor)");
}

std::string pct(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * v << '%';
  return s.str();
}

std::optional<AdcParams> adc_from_flag(const std::string& flag, const RunConfig& c) {
  if (flag.empty()) return c.adc;
  if (flag == "off") return std::nullopt;
  AdcParams a = c.adc.value_or(AdcParams{});
  try {
    a.bits = std::stoi(flag);
  } catch (const std::exception&) {
    throw InvalidParameter("--adc-bits expects an integer or 'off'");
  }
  a.validate();
  return a;
}

Fidelity fidelity_from_flag(const std::string& flag, const RunConfig& c) {
  if (flag.empty()) return c.fidelity;
  if (flag == "ideal") return Fidelity::ideal;
  if (flag == "circuit") return Fidelity::circuit;
  throw InvalidParameter("--fidelity expects ideal or circuit");
}

// ---------------------------------------------------------------------------

int cmd_devcheck(const Globals& g) {
  const RunConfig c = load_run_config(g);
  const DeviceParams& d = c.device;
  const BiasPoint zero{0.0}, v0{d.v0};
  std::cout << std::setprecision(8);
  std::cout << "area_um2        " << d.area_um2() << '\n';
  std::cout << "R_MTJ_ohm       " << base_resistance(d) << '\n';
  std::cout << "R_P_ohm         " << resistance(d, {Orientation::P}, c.read_bias) << '\n';
  std::cout << "R_AP_0V_ohm     " << resistance(d, {Orientation::AP}, zero) << '\n';
  std::cout << "R_AP_V0_ohm     " << resistance(d, {Orientation::AP}, v0) << '\n';
  std::cout << "R_AP_read_ohm   " << resistance(d, {Orientation::AP}, c.read_bias) << '\n';
  std::cout << "TMR_0V          " << tmr_at_bias(d, zero) << '\n';
  std::cout << "TMR_V0          " << tmr_at_bias(d, v0) << '\n';
  std::cout << "TMR_read        " << tmr_at_bias(d, c.read_bias) << '\n';
  std::cout << "G_P_uS          " << 1e6 * conductance(d, {Orientation::P}, c.read_bias) << '\n';
  std::cout << "G_AP_uS         " << 1e6 * conductance(d, {Orientation::AP}, c.read_bias) << '\n';
  std::cout << "read_bias_V     " << c.read_bias.v_b << '\n';
  return 0;
}

int cmd_train_mlp(const Globals& g, int epochs, int limit, const std::string& dataset_flag,
                  std::optional<double> lr, std::optional<double> lr_decay) {
  RunConfig c = load_run_config(g);
  if (epochs >= 0) c.mlp.hp.epochs = epochs;
  if (lr) c.mlp.hp.learning_rate = *lr;
  if (lr_decay) c.mlp.hp.lr_decay = *lr_decay;
  if (limit > 0) c.mlp.train_limit = limit;
  const std::string kind = dataset_flag.empty() ? c.mlp.dataset : dataset_flag;
  const DatasetHandle data = load_dataset(kind, c);
  const Split train = data.train.head(c.mlp.train_limit);
  std::vector<int> dims = c.mlp.dims;
  if (kind == "xor" && dims.front() != 2) dims = {2, 4, 1};
  c.mlp.hp.seed = stream_seed(c.seed, "train.mlp");
  const MlpResult r = train_mlp(train, &data.test, dims, c.mlp.hp);

  save_parameters(out_path(g, "mlp.params").string(), r.params);
  save_checkpoint(out_path(g, "mlp.ckpt").string(), mlp_checkpoint(r.teachers, r.params));
  std::ofstream csv(out_path(g, "mlp_metrics.csv"));
  write_metrics_csv(csv, r.history);
  std::cout << "steps           " << r.steps << '\n';
  std::cout << "train_accuracy  " << pct(r.train_accuracy) << '\n';
  std::cout << "test_accuracy   " << pct(r.test_accuracy) << '\n';
  std::cout << "wrote           " << out_path(g, "mlp.params").string() << '\n';
  return 0;
}

int cmd_train_cnn(const Globals& g, int step1_epochs, int step2_epochs, int limit, const std::string& dataset_flag,
                  const std::string& model_flag) {
  RunConfig c = load_run_config(g);
  if (step1_epochs >= 0) c.cnn.hp.step1_epochs = step1_epochs;
  if (step2_epochs >= 0) c.cnn.hp.step2.epochs = step2_epochs;
  if (limit > 0) c.cnn.train_limit = limit;
  if (!dataset_flag.empty()) c.cnn.dataset = dataset_flag;
  if (!model_flag.empty()) c.cnn.spec = resolve_model(model_flag);
  const DatasetHandle data = load_dataset(c.cnn.dataset, c);
  const Split train = data.train.head(c.cnn.train_limit);
  c.cnn.hp.seed = stream_seed(c.seed, "train.cnn.step1");
  c.cnn.hp.step2.seed = stream_seed(c.seed, "train.cnn.step2");
  if (c.cnn.hp.cache_dir.empty()) c.cnn.hp.cache_dir = (fs::path(g.out_dir) / "cache").string();
  const CnnResult r = train_cnn_two_step(c.cnn.spec, train, &data.test, c.cnn.hp);

  save_checkpoint(out_path(g, "cnn.ckpt").string(), cnn_checkpoint(r.convs, r.step2.teachers, r.step2.params));
  save_parameters(out_path(g, "cnn_fc.params").string(), r.step2.params);
  {
    std::ofstream a(out_path(g, "cnn_step1_metrics.csv"));
    write_metrics_csv(a, r.step1_history);
    std::ofstream b(out_path(g, "cnn_step2_metrics.csv"));
    write_metrics_csv(b, r.step2.history);
  }
  const ImacNetwork net = ImacNetwork::map(r.step2.params, c.network_options(r.step2.params, InputEncoding::ternary));
  PipelineOptions po;
  po.adc = c.adc;
  po.imac_latency_cycles = imac_timer_cycles(net.topology(), c.cost);
  const double pipe = HeteroPipeline(r.convs, net, po).accuracy(data.test, g.jobs);
  std::cout << "step1_accuracy    " << pct(r.step1_test_accuracy) << "  (full-precision CNN)\n";
  std::cout << "step2_accuracy    " << pct(r.step2.test_accuracy) << "  (binarized FC, no ADC)\n";
  std::cout << "pipeline_accuracy " << pct(pipe) << "  (conv -> sign -> IMAC FC -> ADC)\n";
  std::cout << "wrote             " << out_path(g, "cnn.ckpt").string() << '\n';
  return 0;
}

double network_accuracy(const ImacNetwork& net, const Split& test, Fidelity fidelity,
                        const std::optional<AdcParams>& adc, int jobs) {
  if (test.count == 0) return 0.0;
  jobs = std::clamp(jobs, 1, test.count);
  std::vector<long> correct(static_cast<std::size_t>(jobs), 0);
  auto work = [&](int j) {
    const int lo = static_cast<int>(static_cast<long long>(test.count) * j / jobs);
    const int hi = static_cast<int>(static_cast<long long>(test.count) * (j + 1) / jobs);
    std::vector<double> x;
    for (int i = lo; i < hi; ++i) {
      const auto s = test.sample(i);
      x.assign(s.begin(), s.end());
      if (quantized_label(net.forward(x, fidelity), adc) == test.labels[static_cast<std::size_t>(i)]) ++correct[j];
    }
  };
  std::vector<std::thread> pool;
  for (int j = 1; j < jobs; ++j) pool.emplace_back(work, j);
  work(0);
  for (auto& t : pool) t.join();
  long total = 0;
  for (long v : correct) total += v;
  return static_cast<double>(total) / test.count;
}

int cmd_infer(const Globals& g, const std::string& params_path, const std::string& ckpt_path,
              const std::string& fidelity_flag, const std::string& adc_flag, int image, int limit) {
  const RunConfig c = load_run_config(g);
  const Fidelity fidelity = fidelity_from_flag(fidelity_flag, c);
  const std::optional<AdcParams> adc = adc_from_flag(adc_flag, c);
  if (params_path.empty() == ckpt_path.empty()) throw InvalidParameter("give exactly one of --params or --checkpoint");

  if (!params_path.empty()) {
    const TrainedParameters p = load_parameters(params_path);
    NetworkOptions o = c.network_options(p, c.input_encoding);
    o.fidelity = fidelity;
    const ImacNetwork net = ImacNetwork::map(p, o);
    const DatasetHandle data = load_dataset(c.mlp.dataset, c);
    const Split test = data.test.head(limit);
    if (image >= 0) {
      if (image >= test.count) throw InvalidInput("--image index out of range");
      const auto s = test.sample(image);
      const std::vector<double> x(s.begin(), s.end());
      const auto scores = net.forward(x);
      std::cout << "label " << quantized_label(scores, adc) << "  truth " << int(test.labels[image]) << '\n';
      for (std::size_t k = 0; k < scores.size(); ++k) std::cout << "score[" << k << "] " << scores[k] << '\n';
      return 0;
    }
    std::cout << "accuracy " << pct(network_accuracy(net, test, fidelity, adc, g.jobs)) << "  (" << test.count
              << " images)\n";
    return 0;
  }

  const Checkpoint ck = load_checkpoint(ckpt_path);
  const ConvStack convs = convs_from_checkpoint(ck);
  const TrainedParameters p = params_from_checkpoint(ck);
  NetworkOptions o = c.network_options(p, InputEncoding::ternary);
  o.fidelity = fidelity;
  const ImacNetwork net = ImacNetwork::map(p, o);
  const std::string kind = convs.spec().input.channels == 3 ? "cifar10" : "mnist";
  const DatasetHandle data = load_dataset(kind, c);
  const Split test = data.test.head(limit);
  PipelineOptions po;
  po.adc = adc;
  po.imac_latency_cycles = imac_timer_cycles(net.topology(), c.cost);
  const HeteroPipeline pipe(convs, net, po);
  if (image >= 0) {
    if (image >= test.count) throw InvalidInput("--image index out of range");
    const PipelineRun run = pipe.run(test.sample(image));
    std::cout << "label " << run.label << "  truth " << int(test.labels[image]) << '\n';
    return 0;
  }
  std::cout << "accuracy " << pct(pipe.accuracy(test, g.jobs)) << "  (" << test.count << " images)\n";
  return 0;
}

int cmd_pipeline(const Globals& g, const std::string& ckpt_path, const std::string& adc_flag, int image, bool all,
                 int limit) {
  const RunConfig c = load_run_config(g);
  const std::optional<AdcParams> adc = adc_from_flag(adc_flag, c);
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const ConvStack convs = convs_from_checkpoint(ck);
  const TrainedParameters p = params_from_checkpoint(ck);
  const ImacNetwork net = ImacNetwork::map(p, c.network_options(p, InputEncoding::ternary));
  const std::string kind = convs.spec().input.channels == 3 ? "cifar10" : "mnist";
  const DatasetHandle data = load_dataset(kind, c);
  const Split test = data.test.head(limit);
  PipelineOptions po;
  po.adc = adc;
  po.imac_latency_cycles = imac_timer_cycles(net.topology(), c.cost);
  const HeteroPipeline pipe(convs, net, po);
  if (image < 0 || image >= test.count) throw InvalidInput("--image index out of range");

  const PipelineRun run = pipe.run(test.sample(image));
  std::ofstream csv(out_path(g, "trace.csv"));
  write_trace_csv(csv, run.trace);
  std::cout << "label " << run.label << "  truth " << int(test.labels[image]) << "  fills " << run.fills
            << "  timer " << po.imac_latency_cycles << " cycles  trace " << out_path(g, "trace.csv").string()
            << '\n';
  if (all) {
    long legal = 0, correct = 0;
    for (int i = 0; i < test.count; ++i) {
      const PipelineRun r = pipe.run(test.sample(i));
      legal += trace_is_legal(r.trace);
      correct += r.label == test.labels[static_cast<std::size_t>(i)];
    }
    std::cout << "accuracy " << pct(static_cast<double>(correct) / test.count) << "  legal traces " << legal << "/"
              << test.count << '\n';
    return legal == test.count ? 0 : 3;
  }
  return 0;
}

int cmd_perf(const Globals& g, bool do_calibrate, std::optional<double> target_speedup,
             std::optional<double> target_energy, const std::string& workload_flag) {
  const RunConfig c = load_run_config(g);
  std::vector<PerfWorkload> workloads = c.workloads;
  if (!workload_flag.empty()) {
    std::erase_if(workloads, [&](const PerfWorkload& w) { return w.name != workload_flag && w.model != workload_flag; });
    if (workloads.empty()) throw InvalidParameter("no workload named '" + workload_flag + "'");
  } else if (target_speedup || target_energy) {
    workloads.resize(1);
  }
  if (target_speedup) workloads.front().target.speedup_gain = *target_speedup;
  if (target_energy) workloads.front().target.energy_reduction = *target_energy;

  std::vector<PerfRow> rows;
  std::cout << std::setprecision(6);
  for (const auto& w : workloads) {
    CostModel cost = c.cost;
    cost.imac_energy_per_inference = w.imac_energy;
    WorkloadProfile profile = profile_from_cnn(resolve_model(w.model), cost, w.name);
    if (do_calibrate) {
      const Calibration cal = calibrate(profile, cost, w.target);
      profile = cal.profile;
      std::cout << w.name << ": target speedup " << pct(w.target.speedup_gain) << ", energy reduction "
                << pct(w.target.energy_reduction) << '\n';
      std::cout << "  amdahl_fraction     " << cal.amdahl_fraction << '\n';
      std::cout << "  fc_time_fraction    " << cal.fc_time_fraction << '\n';
      std::cout << "  fc_energy_fraction  " << cal.fc_energy_fraction << '\n';
      std::cout << "  speedup_gain        " << cal.speedup_gain << '\n';
      std::cout << "  energy_reduction    " << cal.energy_reduction << '\n';
    }
    rows.push_back(perf_row(w.name, profile, cost, w.accuracy_diff));
  }
  write_perf_table(std::cout, rows);
  std::ofstream csv(out_path(g, "perf.csv"));
  write_perf_csv(csv, rows);

  const std::vector<int> mlp = {784, 16, 10};
  const Throughput t = imac_throughput(plan_topology(mlp, c.capacity), c.cost.imac_settle_per_layer);
  std::cout << "imac 784x16x10: latency " << t.latency_s * 1e9 << " ns (" << t.cycles(3.7e9)
            << " cycles at 3.7 GHz), " << t.inferences_per_s << " inferences/s\n";
  return 0;
}

int cmd_export_netlist(const Globals& g, const std::string& params_path, const std::string& output, bool verify) {
  const RunConfig c = load_run_config(g);
  TrainedParameters p;
  const bool is_ckpt = params_path.size() > 5 && params_path.substr(params_path.size() - 5) == ".ckpt";
  p = is_ckpt ? params_from_checkpoint(load_checkpoint(params_path)) : load_parameters(params_path);
  const ImacNetwork net = ImacNetwork::map(p, c.network_options(p, is_ckpt ? InputEncoding::ternary : c.input_encoding));
  const std::string text = export_netlist(net);
  if (verify && export_netlist(parse_netlist(text).build()) != text) {
    std::cerr << "netlist round trip mismatch\n";
    return 3;
  }
  if (output == "-") {
    std::cout << text;
  } else {
    const fs::path path = output.empty() ? out_path(g, "imac.sp") : fs::path(output);
    std::ofstream f(path);
    f << text;
    std::cout << "wrote " << path.string() << " (" << net.topology().subarrays_used() << " subarrays, "
              << net.topology().cells_used() << " cells)\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"IMAC co-processor simulator"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config_path, "configuration file")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "run seed (overrides the config)");
  app.add_option("--out", g.out_dir, "output directory");
  app.add_option("--jobs", g.jobs, "worker threads for batch evaluation")->check(CLI::PositiveNumber);

  std::function<int()> action;

  auto* dev = app.add_subcommand("devcheck", "evaluate the MTJ resistance model");
  dev->callback([&] { action = [&] { return cmd_devcheck(g); }; });

  int epochs = -1, limit = 0, step1 = -1;
  std::string dataset, model;
  auto* tm = app.add_subcommand("train-mlp", "train a binarized MLP");
  tm->add_option("--epochs", epochs);
  tm->add_option("--limit", limit, "use the first N training samples");
  tm->add_option("--dataset", dataset, "mnist | cifar10 | xor");
  double lr = 0.0, lr_decay = 1.0;
  auto* lr_opt = tm->add_option("--lr", lr, "Adam step size");
  auto* decay_opt = tm->add_option("--lr-decay", lr_decay, "per-epoch learning-rate factor");
  tm->callback([&] {
    action = [&] {
      return cmd_train_mlp(g, epochs, limit, dataset, lr_opt->count() ? std::optional<double>(lr) : std::nullopt,
                           decay_opt->count() ? std::optional<double>(lr_decay) : std::nullopt);
    };
  });

  auto* tc = app.add_subcommand("train-cnn", "two-step CNN training");
  tc->add_option("--step1-epochs", step1);
  tc->add_option("--step2-epochs", epochs);
  tc->add_option("--limit", limit, "use the first N training samples");
  tc->add_option("--dataset", dataset, "mnist | cifar10");
  tc->add_option("--model", model, "lenet5 | reduced_vgg | spec string");
  tc->callback([&] { action = [&] { return cmd_train_cnn(g, step1, epochs, limit, dataset, model); }; });

  std::string params, ckpt, fidelity, adc_bits;
  int image = -1;
  auto* inf = app.add_subcommand("infer", "evaluate a trained model on the IMAC");
  inf->add_option("--params", params, "IMAC parameter file (MLP)");
  inf->add_option("--checkpoint", ckpt, "CNN checkpoint (runs the CPU-IMAC pipeline)");
  inf->add_option("--fidelity", fidelity, "ideal | circuit")->check(CLI::IsMember({"ideal", "circuit"}));
  inf->add_option("--adc-bits", adc_bits, "ADC resolution or 'off'");
  inf->add_option("--image", image, "single test image index");
  inf->add_option("--limit", limit, "first N test images");
  inf->callback([&] { action = [&] { return cmd_infer(g, params, ckpt, fidelity, adc_bits, image, limit); }; });

  bool all = false;
  auto* pl = app.add_subcommand("pipeline", "CPU-IMAC run with protocol trace");
  pl->add_option("--checkpoint", ckpt, "CNN checkpoint")->required();
  pl->add_option("--adc-bits", adc_bits, "ADC resolution or 'off'");
  pl->add_option("--image", image, "test image index (default 0)");
  pl->add_flag("--all", all, "also run the whole test set and check every trace");
  pl->add_option("--limit", limit, "first N test images");
  pl->callback([&] { action = [&] { return cmd_pipeline(g, ckpt, adc_bits, image < 0 ? 0 : image, all, limit); }; });

  bool calibrate_flag = false;
  double t_speed = 0.0, t_energy = 0.0;
  std::string workload;
  auto* pf = app.add_subcommand("perf", "speedup / energy report");
  pf->add_flag("--calibrate", calibrate_flag, "fit FC fractions to the targets");
  auto* ts = pf->add_option("--target-speedup", t_speed, "e.g. 0.112");
  auto* te = pf->add_option("--target-energy", t_energy, "e.g. 0.10");
  pf->add_option("--workload", workload, "restrict to one workload (name or model)");
  pf->callback([&] {
    action = [&] {
      return cmd_perf(g, calibrate_flag, ts->count() ? std::optional<double>(t_speed) : std::nullopt,
                      te->count() ? std::optional<double>(t_energy) : std::nullopt, workload);
    };
  });

  std::string output;
  bool verify = false;
  auto* ex = app.add_subcommand("export-netlist", "write the SPICE-style netlist");
  ex->add_option("--params", params, "parameter file or CNN checkpoint")->required();
  ex->add_option("--output", output, "file path, or - for stdout");
  ex->add_flag("--verify", verify, "check the export/parse round trip");
  ex->callback([&] { action = [&] { return cmd_export_netlist(g, params, output, verify); }; });

  auto* st = app.add_subcommand("selftest", "run the brute-force oracle suites");
  st->callback([&] {
    action = [&] {
      const RunConfig c = load_run_config(g);
      return tools::run_selftest(std::cout, c.seed) == 0 ? 0 : 3;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  if (seed_opt->count()) g.seed = seed;

  try {
    return action();
  } catch (const InvalidParameter& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const TrainingFailure& e) {
    std::cerr << "training failure: " << e.what() << '\n';
    return 3;
  } catch (const InfeasibleTarget& e) {
    std::cerr << "infeasible: " << e.what() << '\n';
    return 3;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
