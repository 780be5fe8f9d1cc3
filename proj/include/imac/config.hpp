#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "imac/circuits.hpp"
#include "imac/device.hpp"
#include "imac/network.hpp"
#include "imac/perf.hpp"
#include "imac/pipeline.hpp"
#include "imac/training.hpp"

namespace imac {

enum class GainMode { matched, full_scale, fixed };

struct MlpConfig {
  std::string dataset = "mnist";
  std::vector<int> dims{784, 16, 10};
  MlpHyperParams hp;
  int train_limit = 0;  // use only the first N training samples (0 = all)
};

struct CnnConfig {
  std::string dataset = "mnist";
  CnnSpec spec = CnnSpec::lenet5();
  CnnHyperParams hp;
  int train_limit = 0;
};

struct PerfWorkload {
  std::string name;
  std::string model;  // "lenet5", "vgg16" or a CnnSpec string
  double imac_energy = 0.0;
  CalibrationTarget target;
  std::optional<double> accuracy_diff;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string data_dir = "/root/data";

  DeviceParams device;
  BiasPoint read_bias;
  NeuronParams neuron;
  GainMode gain_mode = GainMode::matched;
  double fixed_gain = 0.0;
  Fidelity fidelity = Fidelity::ideal;
  InputEncoding input_encoding = InputEncoding::unipolar;
  int capacity = 4;

  std::optional<AdcParams> adc = AdcParams{};

  MlpConfig mlp;
  CnnConfig cnn;
  CostModel cost;
  std::vector<PerfWorkload> workloads;

  RunConfig();
  void validate() const;
  // Mapping options for `params`; `first` is the first layer's input encoding.
  NetworkOptions network_options(const TrainedParameters& params, InputEncoding first) const;
};

// Nested key/value text (YAML subset). Unknown keys are rejected with a
// FormatError naming line and column.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

CnnSpec resolve_model(const std::string& model);

}  // namespace imac
