#include <doctest.h>

#include <cmath>
#include <sstream>

#include "imac/error.hpp"
#include "imac/network.hpp"
#include "imac/perf.hpp"
#include "imac/training.hpp"

using namespace imac;

namespace {

WorkloadProfile toy_profile() {
  WorkloadProfile p;
  p.name = "toy";
  p.layers = {{"conv", false, 8000, 1000, 500, 100, 20, 10}, {"fc", true, 800, 100, 60, 30, 25, 25}};
  p.transfer_cycles = 12;
  p.transfer_accesses = 40;
  p.imac_cycles = 9;
  return p;
}

double sum(const std::vector<EnergyComponent>& cs) {
  double s = 0.0;
  for (const auto& c : cs) s += c.joules;
  return s;
}

}  // namespace

TEST_CASE("speedup is T_base over the offloaded time") {
  const auto p = toy_profile();
  CHECK(speedup(p) == doctest::Approx(1100.0 / (1000.0 + 12.0 + 9.0)).epsilon(1e-15));
  CHECK(p.fc_time_fraction() == doctest::Approx(100.0 / 1100.0));
}

TEST_CASE("energy breakdowns sum to the totals and the baseline keeps every access") {
  const auto p = toy_profile();
  CostModel c;
  const auto e = energy(p, c);
  CHECK(e.baseline == doctest::Approx(sum(e.baseline_breakdown)).epsilon(1e-15));
  CHECK(e.cpu_imac == doctest::Approx(sum(e.cpu_imac_breakdown)).epsilon(1e-15));
  const double base = 1100 * c.cpu_energy_per_cycle + 560 * c.l1_energy_per_access + 130 * c.l2_energy_per_access +
                      45 * c.llc_energy_per_access + 35 * c.dram_energy_per_access;
  CHECK(e.baseline == doctest::Approx(base).epsilon(1e-14));
  const double imac = 1012 * c.cpu_energy_per_cycle + 500 * c.l1_energy_per_access + 100 * c.l2_energy_per_access +
                      20 * c.llc_energy_per_access + 10 * c.dram_energy_per_access +
                      9 * c.cpu_idle_energy_per_cycle + 40 * c.buffer_energy_per_access +
                      c.imac_energy_per_inference;
  CHECK(e.cpu_imac == doctest::Approx(imac).epsilon(1e-14));
}

TEST_CASE("more FC time means more speedup; more IMAC energy means less saving") {
  auto p = toy_profile();
  double prev = speedup(p);
  for (int i = 0; i < 10; ++i) {
    p.layers[1].cpu_cycles += 50;
    const double s = speedup(p);
    CHECK(s > prev);
    prev = s;
  }
  CostModel c;
  double prev_red = energy(p, c).reduction();
  for (int i = 0; i < 10; ++i) {
    c.imac_energy_per_inference += 20e-9;
    const double r = energy(p, c).reduction();
    CHECK(r < prev_red);
    prev_red = r;
  }
}

TEST_CASE("calibration hits its targets and keeps baseline totals") {
  const CostModel cost;
  const auto base = profile_from_cnn(CnnSpec::lenet5(), cost, "LeNet-5");
  for (auto [s, e] : {std::pair{0.112, 0.10}, std::pair{0.05, 0.02}, std::pair{0.3, 0.25}}) {
    const auto cal = calibrate(base, cost, {s, e});
    CHECK(cal.speedup_gain == doctest::Approx(s).epsilon(1e-9));
    CHECK(cal.energy_reduction == doctest::Approx(e).epsilon(1e-9));
    CHECK(cal.profile.baseline_cycles() == doctest::Approx(base.baseline_cycles()).epsilon(1e-12));
    CHECK(energy(cal.profile, cost).baseline == doctest::Approx(energy(base, cost).baseline).epsilon(1e-12));
    // FC share must exceed the zero-overhead bound by the transfer + wait time.
    const double overhead = (base.transfer_cycles + base.imac_cycles) / base.baseline_cycles();
    CHECK(cal.fc_time_fraction == doctest::Approx(cal.amdahl_fraction + overhead).epsilon(1e-9));
    // recalibrating the calibrated profile is a fixed point
    const auto again = calibrate(cal.profile, cost, {s, e});
    CHECK(again.fc_time_fraction == doctest::Approx(cal.fc_time_fraction).epsilon(1e-12));
  }
}

TEST_CASE("unreachable targets raise InfeasibleTarget") {
  const CostModel cost;
  const auto base = profile_from_cnn(CnnSpec::lenet5(), cost, "LeNet-5");
  CHECK_THROWS_AS(calibrate(base, cost, {1e6, 0.1}), InfeasibleTarget);
  CHECK_THROWS_AS(calibrate(base, cost, {0.1, 0.9999}), InfeasibleTarget);
  CHECK_THROWS_AS(calibrate(base, cost, {-0.5, 0.1}), InfeasibleTarget);
  CHECK_THROWS_AS(calibrate(base, cost, {0.1, 1.0}), InfeasibleTarget);
}

TEST_CASE("IMAC latency and timer are functions of the topology") {
  const std::vector<int> mlp = {784, 16, 10};
  const auto t = imac_throughput(plan_topology(mlp), 5e-9);
  CHECK(t.latency_s == doctest::Approx(10e-9));
  CHECK(t.inferences_per_s == doctest::Approx(1e8));
  CHECK(t.cycles(3.7e9) == doctest::Approx(37.0));
  CostModel c;
  CHECK(imac_timer_cycles(plan_topology(mlp), c) == 18);
  c.cpu_frequency = 3.7e9;
  CHECK(imac_timer_cycles(plan_topology(mlp), c) == 37);
  const std::vector<int> deep = {400, 120, 84, 10};
  CHECK(imac_timer_cycles(plan_topology(deep), c) == 56);  // ceil(15 ns × 3.7 GHz)
}

TEST_CASE("CNN profile counts MACs layer by layer") {
  const CostModel c;
  const auto p = profile_from_cnn(CnnSpec::lenet5(), c, "lenet");
  // conv1: 6×28×28 outputs × 25 taps; conv2: 16×10×10 × 6×25
  CHECK(p.layers[0].macs == 6.0 * 28 * 28 * 25);
  CHECK(p.layers[1].macs == 16.0 * 10 * 10 * 150);
  double fc = 0.0;
  for (const auto& l : p.layers)
    if (l.fc) fc += l.macs;
  CHECK(fc == 400.0 * 120 + 120 * 84 + 84 * 10);
  // 400 features need two fills: 4 register stores + 10 loads, data stores overlap
  CHECK(p.transfer_cycles == 14);
  CHECK(p.transfer_accesses == 4 + 400 + 10);
  const auto vgg = profile_from_cnn(vgg16_cifar(), c, "vgg");
  CHECK(vgg.fc_time_fraction() < p.fc_time_fraction());
}

TEST_CASE("perf table and csv") {
  const CostModel c;
  const auto p = profile_from_cnn(CnnSpec::lenet5(), c, "lenet");
  std::vector<PerfRow> rows = {perf_row("LeNet-5", p, c, -0.01)};
  std::ostringstream t, csv;
  write_perf_table(t, rows);
  write_perf_csv(csv, rows);
  CHECK(t.str().find("Energy Improvement") != std::string::npos);
  CHECK(t.str().find("LeNet-5") != std::string::npos);
  CHECK(csv.str().find("-0.01") != std::string::npos);
}
