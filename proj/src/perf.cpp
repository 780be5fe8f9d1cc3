#include "imac/perf.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "imac/error.hpp"
#include "imac/network.hpp"
#include "imac/pipeline.hpp"
#include "imac/training.hpp"
#include "text.hpp"

namespace imac {

namespace {

void require_nonneg(double v, const std::string& what) {
  if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidParameter(what + " must be finite and >= 0");
}

double memory_energy(const LayerProfile& l, const CostModel& c) {
  return l.l1_accesses * c.l1_energy_per_access + l.l2_accesses * c.l2_energy_per_access +
         l.llc_accesses * c.llc_energy_per_access + l.dram_accesses * c.dram_energy_per_access;
}

}  // namespace

void WorkloadProfile::validate() const {
  if (layers.empty()) throw InvalidParameter("workload profile '" + name + "' has no layers");
  for (const auto& l : layers) {
    require_nonneg(l.macs, l.name + ".macs");
    require_nonneg(l.cpu_cycles, l.name + ".cpu_cycles");
    require_nonneg(l.l1_accesses, l.name + ".l1_accesses");
    require_nonneg(l.l2_accesses, l.name + ".l2_accesses");
    require_nonneg(l.llc_accesses, l.name + ".llc_accesses");
    require_nonneg(l.dram_accesses, l.name + ".dram_accesses");
  }
  require_nonneg(transfer_cycles, "transfer_cycles");
  require_nonneg(transfer_accesses, "transfer_accesses");
  require_nonneg(imac_cycles, "imac_cycles");
}

double WorkloadProfile::baseline_cycles() const {
  double t = 0.0;
  for (const auto& l : layers) t += l.cpu_cycles;
  return t;
}

double WorkloadProfile::fc_cycles() const {
  double t = 0.0;
  for (const auto& l : layers)
    if (l.fc) t += l.cpu_cycles;
  return t;
}

double WorkloadProfile::fc_time_fraction() const {
  const double t = baseline_cycles();
  return t > 0.0 ? fc_cycles() / t : 0.0;
}

void CostModel::validate() const {
  if (!(cpu_frequency > 0.0)) throw InvalidParameter("cpu_frequency must be > 0");
  if (!(macs_per_cycle > 0.0)) throw InvalidParameter("macs_per_cycle must be > 0");
  require_nonneg(cpu_energy_per_cycle, "cpu_energy_per_cycle");
  require_nonneg(cpu_idle_energy_per_cycle, "cpu_idle_energy_per_cycle");
  require_nonneg(l1_energy_per_access, "l1_energy_per_access");
  require_nonneg(l2_energy_per_access, "l2_energy_per_access");
  require_nonneg(llc_energy_per_access, "llc_energy_per_access");
  require_nonneg(dram_energy_per_access, "dram_energy_per_access");
  require_nonneg(buffer_energy_per_access, "buffer_energy_per_access");
  require_nonneg(imac_energy_per_inference, "imac_energy_per_inference");
  require_nonneg(neuron_power, "neuron_power");
  if (!(imac_settle_per_layer > 0.0)) throw InvalidParameter("imac_settle_per_layer must be > 0");
}

double speedup(const WorkloadProfile& profile) {
  profile.validate();
  const double base = profile.baseline_cycles();
  if (!(base > 0.0)) throw InvalidParameter("speedup: baseline time is zero");
  const double offload = profile.conv_cycles() + profile.transfer_cycles + profile.imac_cycles;
  if (!(offload > 0.0)) throw InvalidParameter("speedup: CPU-IMAC time is zero");
  return base / offload;
}

EnergyReport energy(const WorkloadProfile& profile, const CostModel& cost) {
  profile.validate();
  cost.validate();
  double core = 0.0, l1 = 0.0, l2 = 0.0, llc = 0.0, dram = 0.0;
  double core_conv = 0.0, l1_conv = 0.0, l2_conv = 0.0, llc_conv = 0.0, dram_conv = 0.0;
  double fc = 0.0;
  for (const auto& l : profile.layers) {
    const double c = l.cpu_cycles * cost.cpu_energy_per_cycle;
    const double e1 = l.l1_accesses * cost.l1_energy_per_access;
    const double e2 = l.l2_accesses * cost.l2_energy_per_access;
    const double e3 = l.llc_accesses * cost.llc_energy_per_access;
    const double ed = l.dram_accesses * cost.dram_energy_per_access;
    core += c;
    l1 += e1;
    l2 += e2;
    llc += e3;
    dram += ed;
    if (l.fc) {
      fc += c + e1 + e2 + e3 + ed;
    } else {
      core_conv += c;
      l1_conv += e1;
      l2_conv += e2;
      llc_conv += e3;
      dram_conv += ed;
    }
  }
  EnergyReport r;
  r.baseline_breakdown = {{"core", core}, {"l1", l1}, {"l2", l2}, {"llc", llc}, {"dram", dram}};
  r.cpu_imac_breakdown = {{"core", core_conv + profile.transfer_cycles * cost.cpu_energy_per_cycle},
                          {"l1", l1_conv},
                          {"l2", l2_conv},
                          {"llc", llc_conv},
                          {"dram", dram_conv},
                          {"wait", profile.imac_cycles * cost.cpu_idle_energy_per_cycle},
                          {"buffer", profile.transfer_accesses * cost.buffer_energy_per_access},
                          {"imac", cost.imac_energy_per_inference}};
  for (const auto& c : r.baseline_breakdown) r.baseline += c.joules;
  for (const auto& c : r.cpu_imac_breakdown) r.cpu_imac += c.joules;
  r.fc_fraction = r.baseline > 0.0 ? fc / r.baseline : 0.0;
  return r;
}

Calibration calibrate(const WorkloadProfile& base, const CostModel& cost, const CalibrationTarget& target) {
  base.validate();
  cost.validate();
  if (!(target.speedup_gain > -1.0) || !std::isfinite(target.speedup_gain))
    throw InfeasibleTarget("speedup gain must be > -100%");
  if (!(target.energy_reduction < 1.0) || !std::isfinite(target.energy_reduction))
    throw InfeasibleTarget("energy reduction must be < 100%");

  const double t_base = base.baseline_cycles();
  if (!(t_base > 0.0)) throw InfeasibleTarget("baseline profile has zero time");
  const double overhead = base.transfer_cycles + base.imac_cycles;
  const double t_conv = t_base / (1.0 + target.speedup_gain) - overhead;
  if (t_conv < 0.0)
    throw InfeasibleTarget("speedup target exceeds the bound set by transfer and IMAC latency");
  if (t_conv > t_base) throw InfeasibleTarget("speedup target implies negative FC time");
  const double c_conv = base.conv_cycles(), c_fc = base.fc_cycles();
  if ((c_conv == 0.0 && t_conv > 0.0) || (c_fc == 0.0 && t_base - t_conv > 0.0))
    throw InfeasibleTarget("profile lacks the layers needed to carry the target split");

  Calibration cal;
  cal.profile = base;
  for (auto& l : cal.profile.layers) l.cpu_cycles *= l.fc ? (t_base - t_conv) / c_fc : t_conv / c_conv;

  // Memory traffic is moved between the two sides with its total unchanged.
  const EnergyReport before = energy(cal.profile, cost);
  double m_conv = 0.0, m_fc = 0.0;
  for (const auto& l : cal.profile.layers) (l.fc ? m_fc : m_conv) += memory_energy(l, cost);
  double fixed = 0.0;
  for (const auto& c : before.cpu_imac_breakdown)
    if (c.name == "core" || c.name == "wait" || c.name == "buffer" || c.name == "imac") fixed += c.joules;
  const double need_conv = (1.0 - target.energy_reduction) * before.baseline - fixed;
  if (need_conv < 0.0)
    throw InfeasibleTarget("energy target below the CPU-IMAC floor (core + transfer + IMAC energy)");
  if (need_conv > m_conv + m_fc) throw InfeasibleTarget("energy target implies negative FC energy");
  if ((m_conv == 0.0 && need_conv > 0.0) || (m_fc == 0.0 && m_conv + m_fc - need_conv > 0.0))
    throw InfeasibleTarget("profile lacks memory traffic to carry the energy split");
  const double k_conv = m_conv > 0.0 ? need_conv / m_conv : 0.0;
  const double k_fc = m_fc > 0.0 ? (m_conv + m_fc - need_conv) / m_fc : 0.0;
  for (auto& l : cal.profile.layers) {
    const double k = l.fc ? k_fc : k_conv;
    l.l1_accesses *= k;
    l.l2_accesses *= k;
    l.llc_accesses *= k;
    l.dram_accesses *= k;
  }

  const EnergyReport after = energy(cal.profile, cost);
  cal.fc_time_fraction = cal.profile.fc_time_fraction();
  cal.fc_energy_fraction = after.fc_fraction;
  cal.amdahl_fraction = 1.0 - 1.0 / (1.0 + target.speedup_gain);
  cal.speedup_gain = speedup(cal.profile) - 1.0;
  cal.energy_reduction = after.reduction();
  return cal;
}

Throughput imac_throughput(const ImacTopology& topology, double settle_per_layer) {
  if (!(settle_per_layer > 0.0)) throw InvalidParameter("settle time per layer must be > 0");
  const int layers = static_cast<int>(topology.layers.size());
  if (layers == 0) throw StateError("imac_throughput: empty topology");
  Throughput t;
  t.latency_s = settle_per_layer * layers;
  t.inferences_per_s = 1.0 / t.latency_s;
  return t;
}

long long imac_timer_cycles(const ImacTopology& topology, const CostModel& cost) {
  cost.validate();
  const double cycles = imac_throughput(topology, cost.imac_settle_per_layer).cycles(cost.cpu_frequency);
  return static_cast<long long>(std::ceil(cycles - 1e-9));
}

WorkloadProfile profile_from_cnn(const CnnSpec& spec, const CostModel& cost, const std::string& name) {
  spec.validate();
  cost.validate();
  WorkloadProfile p;
  p.name = name;
  constexpr double kLine = 64.0, kWord = 4.0;
  auto add = [&](std::string lname, bool fc, double macs, double weights, double act_values) {
    LayerProfile l;
    l.name = std::move(lname);
    l.fc = fc;
    l.macs = macs;
    l.cpu_cycles = macs / cost.macs_per_cycle;
    l.l1_accesses = 2.0 * macs * kWord / kLine;
    l.l2_accesses = act_values * kWord / kLine;
    l.llc_accesses = weights * kWord / kLine;
    l.dram_accesses = weights * kWord / kLine;
    p.layers.push_back(std::move(l));
  };
  Shape s = spec.input;
  int conv_index = 0;
  for (const auto& f : spec.features) {
    if (f.kind != FeatureLayerSpec::Kind::conv) {
      if (f.kind == FeatureLayerSpec::Kind::maxpool) s = {s.channels, s.height / f.pool, s.width / f.pool};
      continue;
    }
    const Shape out{f.out_channels, s.height + 2 * f.padding - f.kernel + 1, s.width + 2 * f.padding - f.kernel + 1};
    const double k2 = static_cast<double>(f.kernel) * f.kernel;
    const double macs = static_cast<double>(out.size()) * s.channels * k2;
    const double weights = f.out_channels * (s.channels * k2 + 1.0);
    add("conv" + std::to_string(++conv_index), false, macs, weights, s.size() + out.size());
    s = out;
  }
  for (std::size_t l = 0; l + 1 < spec.fc_widths.size(); ++l) {
    const double in = spec.fc_widths[l], out = spec.fc_widths[l + 1];
    add("fc" + std::to_string(l + 1), true, in * out, out * (in + 1.0), in + out);
  }
  const int inputs = spec.fc_widths.front();
  const int outputs = spec.fc_widths.back();
  const int fills = std::max(1, (inputs + kBufferTrits - 1) / kBufferTrits);
  const double register_stores = 2.0 * fills;
  const double data_stores = inputs;
  p.transfer_accesses = register_stores + data_stores + outputs;
  p.transfer_cycles = register_stores + outputs + (cost.overlap_data_stores ? 0.0 : data_stores);
  const double latency = cost.imac_settle_per_layer * static_cast<double>(spec.fc_widths.size() - 1);
  p.imac_cycles = fills * std::ceil(latency * cost.cpu_frequency - 1e-9);
  return p;
}

CnnSpec vgg16_cifar() {
  return CnnSpec::parse(
      "3x32x32|conv64k3p1,relu,conv64k3p1,relu,pool2,conv128k3p1,relu,conv128k3p1,relu,pool2,"
      "conv256k3p1,relu,conv256k3p1,relu,conv256k3p1,relu,pool2,conv512k3p1,relu,conv512k3p1,relu,"
      "conv512k3p1,relu,pool2,conv512k3p1,relu,conv512k3p1,relu,conv512k3p1,relu,pool2|512,512,10");
}

PerfRow perf_row(const std::string& workload, const WorkloadProfile& profile, const CostModel& cost,
                 std::optional<double> accuracy_diff) {
  const EnergyReport e = energy(profile, cost);
  PerfRow r;
  r.workload = workload;
  r.speedup_gain = speedup(profile) - 1.0;
  r.energy_reduction = e.reduction();
  r.fc_time_fraction = profile.fc_time_fraction();
  r.fc_energy_fraction = e.fc_fraction;
  r.baseline_energy = e.baseline;
  r.cpu_imac_energy = e.cpu_imac;
  r.accuracy_diff = accuracy_diff;
  return r;
}

void write_perf_csv(std::ostream& out, const std::vector<PerfRow>& rows) {
  out << "workload,speedup_gain,energy_reduction,fc_time_fraction,fc_energy_fraction,baseline_energy_j,"
         "cpu_imac_energy_j,accuracy_diff\n";
  for (const auto& r : rows) {
    out << r.workload << ',' << detail::format_double(r.speedup_gain) << ','
        << detail::format_double(r.energy_reduction) << ',' << detail::format_double(r.fc_time_fraction) << ','
        << detail::format_double(r.fc_energy_fraction) << ',' << detail::format_double(r.baseline_energy) << ','
        << detail::format_double(r.cpu_imac_energy) << ',';
    if (r.accuracy_diff) out << detail::format_double(*r.accuracy_diff);
    out << '\n';
  }
}

void write_perf_table(std::ostream& out, const std::vector<PerfRow>& rows) {
  auto pct = [](double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << v * 100.0 << '%';
    return s.str();
  };
  out << std::left << std::setw(14) << "CNN Model" << std::right << std::setw(10) << "Speedup" << std::setw(20)
      << "Energy Improvement" << std::setw(16) << "Accuracy Diff." << '\n';
  for (const auto& r : rows)
    out << std::left << std::setw(14) << r.workload << std::right << std::setw(10) << pct(r.speedup_gain)
        << std::setw(20) << pct(r.energy_reduction) << std::setw(16)
        << (r.accuracy_diff ? pct(*r.accuracy_diff) : std::string("n/a")) << '\n';
}

}  // namespace imac
