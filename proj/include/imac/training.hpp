#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "imac/binary.hpp"
#include "imac/dataset.hpp"

namespace imac {

// Real-valued shadow of a binarized layer; entries live in [-1, 1].
struct TeacherLayer {
  int rows = 0;
  int cols = 0;
  std::vector<double> w;  // rows × cols, row-major
  std::vector<double> b;  // rows

  double weight(int r, int c) const { return w[static_cast<std::size_t>(r) * cols + c]; }
  void validate() const;
};

// w >= 0 → +1, w < 0 → -1, elementwise on weights and biases.
BinarizedLayer binarize(const TeacherLayer& teacher);
TrainedParameters binarize(std::span<const TeacherLayer> teachers, std::span<const double> scales = {});

// -1 / 0 / +1 by sign.
std::vector<std::int8_t> sign_unit(std::span<const double> x);
std::vector<std::int8_t> sign_unit(std::span<const float> x);

// Ideal student evaluation σ(−s_l(W_l h + B_l)) layer by layer, in double.
std::vector<double> student_forward(const TrainedParameters& params, std::span<const double> x);
std::vector<double> student_forward(const TrainedParameters& params, std::span<const float> x);

// Argmax with lowest-index ties; a single output is read as a binary decision
// (label 1 when the output is at least 0.5).
int predict_label(std::span<const double> scores);

struct MetricRow {
  long step = 0;
  int epoch = 0;
  double learning_rate = 0.0;
  double loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;  // NaN when no test split was given
};

void write_metrics_csv(std::ostream& out, std::span<const MetricRow> rows);

struct MlpHyperParams {
  int epochs = 10;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double lr_decay = 1.0;   // multiplied into the learning rate after every epoch
  double init_range = 0.1; // teacher initialized uniformly in [-init_range, init_range]
  double loss_scale = 1.0; // outputs are multiplied by this before the softmax
  std::vector<double> activation_scales;  // per layer, default 1
  long max_steps = -1;     // stop early after this many optimizer steps
  std::uint64_t seed = 1;

  void validate() const;
};

using StepObserver = std::function<void(long step, std::span<const TeacherLayer> teachers)>;

struct MlpResult {
  TrainedParameters params;
  std::vector<TeacherLayer> teachers;
  std::vector<MetricRow> history;
  long steps = 0;
  double train_accuracy = 0.0;  // student, evaluated after training
  double test_accuracy = 0.0;
};

// Teacher-student training of a binarized MLP with σ(−x) activations.
// Throws TrainingFailure on a non-finite loss.
MlpResult train_mlp(const Split& train, const Split* test, std::span<const int> dims, const MlpHyperParams& hp,
                    const StepObserver& observer = {});

// Fraction of samples whose student prediction matches the label.
double evaluate_student(const TrainedParameters& params, const Split& data, int jobs = 1);

// Full-precision feature layer descriptor: "conv<C>k<K>[p<P>]", "pool<S>", "relu".
struct FeatureLayerSpec {
  enum class Kind { conv, maxpool, relu };
  Kind kind = Kind::relu;
  int out_channels = 0;
  int kernel = 0;
  int padding = 0;
  int pool = 2;

  std::string to_string() const;
  static FeatureLayerSpec parse(const std::string& token);
  bool operator==(const FeatureLayerSpec&) const = default;
};

struct CnnSpec {
  Shape input;
  std::vector<FeatureLayerSpec> features;
  std::vector<int> fc_widths;  // fc_widths[0] is the flatten width

  Shape flatten_shape() const;
  void validate() const;
  // e.g. "1x28x28|conv6k5p2,relu,pool2|400,120,84,10"
  std::string to_string() const;
  static CnnSpec parse(const std::string& text);
  static CnnSpec lenet5();
  static CnnSpec reduced_vgg();
  bool operator==(const CnnSpec&) const = default;
};

struct NamedTensor {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::vector<double> data;
};

// Frozen full-precision feature stack of a step-1 network. `features`
// returns the last convolution's output before its ReLU (flattened).
class ConvStack {
 public:
  ConvStack();
  ConvStack(const CnnSpec& spec, std::uint64_t seed);
  ~ConvStack();
  ConvStack(ConvStack&&) noexcept;
  ConvStack& operator=(ConvStack&&) noexcept;

  const CnnSpec& spec() const;
  int feature_width() const;
  std::vector<float> features(std::span<const float> image) const;
  // Signed features of every sample in `data` (values -1/0/+1, float).
  Split derive(const Split& data) const;

  std::vector<NamedTensor> tensors() const;
  void load_tensors(std::span<const NamedTensor> tensors);
  std::uint64_t fingerprint() const;

  struct Impl;
  Impl& impl() const { return *impl_; }

 private:
  std::unique_ptr<Impl> impl_;
};

struct CnnHyperParams {
  int step1_epochs = 3;
  int batch_size = 64;
  double step1_learning_rate = 1e-3;
  double step1_lr_decay = 1.0;
  MlpHyperParams step2;
  std::string cache_dir;  // derived datasets are cached here when non-empty
  std::uint64_t seed = 1;

  void validate() const;
};

struct CnnResult {
  ConvStack convs;
  double step1_test_accuracy = 0.0;  // full-precision CNN
  std::vector<MetricRow> step1_history;
  MlpResult step2;                   // binarized FC on signed features
};

CnnResult train_cnn_two_step(const CnnSpec& spec, const Split& train, const Split* test, const CnnHyperParams& hp);

// Versioned checkpoint container: magic "IMCK", version u8, key/value text
// metadata and named double tensors.
struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<NamedTensor> tensors;

  const std::string* find_meta(const std::string& key) const;
  const NamedTensor* find_tensor(const std::string& name) const;
};
inline constexpr std::uint8_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const Checkpoint& ck);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint mlp_checkpoint(std::span<const TeacherLayer> teachers, const TrainedParameters& params);
Checkpoint cnn_checkpoint(const ConvStack& convs, std::span<const TeacherLayer> teachers,
                          const TrainedParameters& params);
// Restores the binarized snapshot (and the conv stack when present).
TrainedParameters params_from_checkpoint(const Checkpoint& ck);
ConvStack convs_from_checkpoint(const Checkpoint& ck);

}  // namespace imac
