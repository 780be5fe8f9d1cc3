#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace imac {

struct CnnSpec;
struct ImacTopology;

struct LayerProfile {
  std::string name;
  bool fc = false;
  double macs = 0.0;
  double cpu_cycles = 0.0;
  double l1_accesses = 0.0;
  double l2_accesses = 0.0;
  double llc_accesses = 0.0;
  double dram_accesses = 0.0;
  bool operator==(const LayerProfile&) const = default;
};

struct WorkloadProfile {
  std::string name;
  std::vector<LayerProfile> layers;
  double transfer_cycles = 0.0;    // serialized CPU↔IMAC instructions
  double transfer_accesses = 0.0;  // buffer accesses (all store/load_imac)
  double imac_cycles = 0.0;        // timer wait

  void validate() const;
  double baseline_cycles() const;
  double fc_cycles() const;
  double conv_cycles() const { return baseline_cycles() - fc_cycles(); }
  double fc_time_fraction() const;
  bool operator==(const WorkloadProfile&) const = default;
};

// Placeholder per-component costs; replace with calibrated or measured values.
struct CostModel {
  double cpu_frequency = 1.8e9;         // Hz
  double macs_per_cycle = 8.0;
  double cpu_energy_per_cycle = 0.5e-9;  // J, active core
  double cpu_idle_energy_per_cycle = 0.1e-9;  // J, while waiting on the timer
  double l1_energy_per_access = 0.05e-9;
  double l2_energy_per_access = 0.2e-9;
  double llc_energy_per_access = 1.0e-9;
  double dram_energy_per_access = 20e-9;     // per 64-byte line
  double buffer_energy_per_access = 0.05e-9;
  double imac_energy_per_inference = 97e-9;
  double neuron_power = 64e-6;           // W per neuron
  double imac_settle_per_layer = 5e-9;   // s
  bool overlap_data_stores = true;       // buffer stores retire under the producing layer

  void validate() const;
};

// T_base / (T_conv + T_transfer + T_imac).
double speedup(const WorkloadProfile& profile);

struct EnergyComponent {
  std::string name;
  double joules = 0.0;
};

struct EnergyReport {
  double baseline = 0.0;  // == Σ baseline_breakdown
  double cpu_imac = 0.0;  // == Σ cpu_imac_breakdown
  std::vector<EnergyComponent> baseline_breakdown;
  std::vector<EnergyComponent> cpu_imac_breakdown;
  double fc_fraction = 0.0;  // FC share of the baseline energy

  double reduction() const { return baseline > 0.0 ? 1.0 - cpu_imac / baseline : 0.0; }
};

EnergyReport energy(const WorkloadProfile& profile, const CostModel& cost);

struct CalibrationTarget {
  double speedup_gain = 0.0;      // e.g. 0.112 for an 11.2% speedup
  double energy_reduction = 0.0;  // e.g. 0.10
};

struct Calibration {
  WorkloadProfile profile;
  double fc_time_fraction = 0.0;
  double fc_energy_fraction = 0.0;
  double amdahl_fraction = 0.0;  // 1 − 1/(1 + gain): the zero-overhead limit
  double speedup_gain = 0.0;     // re-evaluated on the calibrated profile
  double energy_reduction = 0.0;
};

// Rescales FC vs. convolution cycles and memory traffic (keeping baseline
// totals fixed) so that the model reproduces the targets. Throws
// InfeasibleTarget when no nonnegative split exists.
Calibration calibrate(const WorkloadProfile& base, const CostModel& cost, const CalibrationTarget& target);

struct Throughput {
  double latency_s = 0.0;
  double inferences_per_s = 0.0;
  double cycles(double frequency) const { return latency_s * frequency; }
};

Throughput imac_throughput(const ImacTopology& topology, double settle_per_layer = 5e-9);
// Timer value in CPU cycles for one IMAC computation.
long long imac_timer_cycles(const ImacTopology& topology, const CostModel& cost);

// Operation counts and traffic estimates for a CNN whose FC layers move to
// the IMAC; cycles = MACs / macs_per_cycle.
WorkloadProfile profile_from_cnn(const CnnSpec& spec, const CostModel& cost, const std::string& name);
// VGG-16 variant for 32×32 inputs (13 conv, 2 FC).
CnnSpec vgg16_cifar();

struct PerfRow {
  std::string workload;
  double speedup_gain = 0.0;
  double energy_reduction = 0.0;
  double fc_time_fraction = 0.0;
  double fc_energy_fraction = 0.0;
  double baseline_energy = 0.0;
  double cpu_imac_energy = 0.0;
  std::optional<double> accuracy_diff;  // CPU-IMAC minus baseline, fraction
};

PerfRow perf_row(const std::string& workload, const WorkloadProfile& profile, const CostModel& cost,
                 std::optional<double> accuracy_diff = std::nullopt);
void write_perf_csv(std::ostream& out, const std::vector<PerfRow>& rows);
// Speedup / Energy Improvement / Accuracy Diff. table.
void write_perf_table(std::ostream& out, const std::vector<PerfRow>& rows);

}  // namespace imac
