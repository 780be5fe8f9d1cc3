#include "imac/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <thread>

#include "binio.hpp"
#include "imac/circuits.hpp"
#include "imac/error.hpp"
#include "imac/network.hpp"
#include "imac/nn.hpp"
#include "imac/rng.hpp"
#include "text.hpp"

namespace imac {

using nn::Matrix;

void TeacherLayer::validate() const {
  if (rows < 1 || cols < 1) throw InvalidParameter("teacher layer: empty shape");
  if (w.size() != static_cast<std::size_t>(rows) * cols || b.size() != static_cast<std::size_t>(rows))
    throw DimensionMismatch("teacher layer: storage does not match shape");
  for (double v : w)
    if (!(v >= -1.0 && v <= 1.0)) throw InvalidParameter("teacher weight outside [-1, 1]");
  for (double v : b)
    if (!(v >= -1.0 && v <= 1.0)) throw InvalidParameter("teacher bias outside [-1, 1]");
}

BinarizedLayer binarize(const TeacherLayer& teacher) {
  teacher.validate();
  BinarizedLayer out;
  out.weights = BinaryMatrix(teacher.rows, teacher.cols);
  for (std::size_t i = 0; i < teacher.w.size(); ++i) out.weights.data[i] = teacher.w[i] >= 0.0 ? 1 : -1;
  out.biases.resize(teacher.b.size());
  for (std::size_t i = 0; i < teacher.b.size(); ++i) out.biases[i] = teacher.b[i] >= 0.0 ? 1 : -1;
  return out;
}

TrainedParameters binarize(std::span<const TeacherLayer> teachers, std::span<const double> scales) {
  TrainedParameters p;
  for (const auto& t : teachers) p.layers.push_back(binarize(t));
  p.scales.assign(scales.begin(), scales.end());
  p.scales.resize(p.layers.size(), 1.0);
  p.validate();
  return p;
}

namespace {

template <typename T>
std::vector<std::int8_t> sign_of(std::span<const T> x) {
  std::vector<std::int8_t> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? 1 : (x[i] < T(0) ? -1 : 0);
  return out;
}

template <typename T>
std::vector<double> student_forward_impl(const TrainedParameters& params, std::span<const T> x) {
  if (params.layers.empty()) throw InvalidInput("student_forward: no layers");
  if (x.size() != static_cast<std::size_t>(params.layers.front().inputs()))
    throw DimensionMismatch("student_forward: input length " + std::to_string(x.size()) + " != " +
                            std::to_string(params.layers.front().inputs()));
  std::vector<double> h(x.begin(), x.end());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    const double s = params.scale(l);
    std::vector<double> next(static_cast<std::size_t>(layer.outputs()));
    for (int r = 0; r < layer.outputs(); ++r) {
      double acc = layer.biases[r];
      const std::int8_t* row = layer.weights.data.data() + static_cast<std::size_t>(r) * layer.inputs();
      for (int c = 0; c < layer.inputs(); ++c) acc += row[c] * h[c];
      next[r] = ideal_neuron(s * acc);
    }
    h = std::move(next);
  }
  return h;
}

}  // namespace

std::vector<std::int8_t> sign_unit(std::span<const double> x) { return sign_of(x); }
std::vector<std::int8_t> sign_unit(std::span<const float> x) { return sign_of(x); }

std::vector<double> student_forward(const TrainedParameters& params, std::span<const double> x) {
  return student_forward_impl(params, x);
}
std::vector<double> student_forward(const TrainedParameters& params, std::span<const float> x) {
  return student_forward_impl(params, x);
}

int predict_label(std::span<const double> scores) {
  if (scores.size() == 1) return scores[0] >= 0.5 ? 1 : 0;
  return argmax(scores);
}

void write_metrics_csv(std::ostream& out, std::span<const MetricRow> rows) {
  out << "step,epoch,learning_rate,loss,train_accuracy,test_accuracy\n";
  for (const auto& r : rows) {
    out << r.step << ',' << r.epoch << ',' << detail::format_double(r.learning_rate) << ','
        << detail::format_double(r.loss) << ',' << detail::format_double(r.train_accuracy) << ',';
    if (!std::isnan(r.test_accuracy)) out << detail::format_double(r.test_accuracy);
    out << '\n';
  }
}

void MlpHyperParams::validate() const {
  if (epochs < 0) throw InvalidParameter("epochs must be >= 0");
  if (batch_size < 1) throw InvalidParameter("batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw InvalidParameter("learning_rate must be > 0");
  if (!(lr_decay > 0.0) || lr_decay > 1.0) throw InvalidParameter("lr_decay must be in (0, 1]");
  if (!(init_range > 0.0) || init_range > 1.0) throw InvalidParameter("init_range must be in (0, 1]");
  if (!(loss_scale > 0.0) || !std::isfinite(loss_scale)) throw InvalidParameter("loss_scale must be > 0");
  for (double s : activation_scales)
    if (!(s > 0.0) || !std::isfinite(s)) throw InvalidParameter("activation scales must be > 0");
}

double evaluate_student(const TrainedParameters& params, const Split& data, int jobs) {
  if (data.count == 0) return 0.0;
  jobs = std::clamp(jobs, 1, data.count);
  std::vector<int> correct(static_cast<std::size_t>(jobs), 0);
  auto work = [&](int j) {
    const int lo = static_cast<int>(static_cast<long long>(data.count) * j / jobs);
    const int hi = static_cast<int>(static_cast<long long>(data.count) * (j + 1) / jobs);
    for (int i = lo; i < hi; ++i)
      if (predict_label(student_forward(params, data.sample(i))) == data.labels[i]) ++correct[j];
  };
  if (jobs == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(work, j);
    for (auto& t : pool) t.join();
  }
  return static_cast<double>(std::accumulate(correct.begin(), correct.end(), 0)) / data.count;
}

namespace {

Matrix<float> gather(const Split& data, std::span<const int> idx) {
  const int d = data.shape.size();
  Matrix<float> x(static_cast<Eigen::Index>(idx.size()), d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto s = data.sample(idx[i]);
    std::copy(s.begin(), s.end(), x.row(static_cast<Eigen::Index>(i)).data());
  }
  return x;
}

// Binary cross-entropy for a single σ(−y) output read as P(label = 1).
nn::LossResult binary_cross_entropy(const Matrix<float>& o, const std::vector<int>& labels, Matrix<float>& grad) {
  nn::LossResult r;
  grad.resize(o.rows(), 1);
  const double inv = 1.0 / static_cast<double>(o.rows());
  for (Eigen::Index b = 0; b < o.rows(); ++b) {
    const double p = std::clamp(static_cast<double>(o(b, 0)), 1e-7, 1.0 - 1e-7);
    const int y = labels[static_cast<std::size_t>(b)];
    r.loss += -(y ? std::log(p) : std::log(1.0 - p)) * inv;
    grad(b, 0) = static_cast<float>((y ? -1.0 / p : 1.0 / (1.0 - p)) * inv);
    r.correct += ((o(b, 0) >= 0.5f) ? 1 : 0) == y ? 1 : 0;
  }
  return r;
}

nn::LossResult classification_loss(const Matrix<float>& out, const std::vector<int>& labels, double scale,
                                   Matrix<float>& grad) {
  if (out.cols() == 1) return binary_cross_entropy(out, labels, grad);
  return nn::softmax_cross_entropy(out, labels, scale, grad);
}

void check_labels(const Split& data, int outputs, const char* what) {
  const int classes = outputs == 1 ? 2 : outputs;
  for (auto y : data.labels)
    if (y >= classes)
      throw InvalidInput(std::string(what) + ": label " + std::to_string(y) + " exceeds output width");
}

std::vector<TeacherLayer> snapshot(const std::vector<nn::BinaryDense<float>*>& layers) {
  std::vector<TeacherLayer> out;
  for (auto* l : layers) {
    TeacherLayer t;
    t.rows = static_cast<int>(l->weight().value.rows());
    t.cols = static_cast<int>(l->weight().value.cols());
    t.w.assign(l->weight().value.data(), l->weight().value.data() + l->weight().value.size());
    t.b.assign(l->bias().value.data(), l->bias().value.data() + l->bias().value.size());
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

MlpResult train_mlp(const Split& train, const Split* test, std::span<const int> dims, const MlpHyperParams& hp,
                    const StepObserver& observer) {
  hp.validate();
  train.validate();
  if (dims.size() < 2) throw InvalidParameter("train_mlp: need at least input and output widths");
  for (int d : dims)
    if (d < 1) throw InvalidParameter("train_mlp: layer widths must be positive");
  if (dims.front() != train.shape.size())
    throw DimensionMismatch("train_mlp: input width " + std::to_string(dims.front()) + " != sample size " +
                            std::to_string(train.shape.size()));
  if (test && test->shape.size() != train.shape.size())
    throw DimensionMismatch("train_mlp: test samples differ in size from training samples");
  if (!hp.activation_scales.empty() && hp.activation_scales.size() != dims.size() - 1)
    throw InvalidParameter("train_mlp: one activation scale per layer expected");
  check_labels(train, dims.back(), "train_mlp");

  std::vector<double> scales(dims.size() - 1, 1.0);
  if (!hp.activation_scales.empty()) scales = hp.activation_scales;

  auto init_rng = make_stream(hp.seed, "init");
  auto shuffle_rng = make_stream(hp.seed, "shuffle");
  nn::Sequential<float> net;
  std::vector<nn::BinaryDense<float>*> binary;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    auto layer = std::make_unique<nn::BinaryDense<float>>(dims[l], dims[l + 1], static_cast<float>(hp.init_range),
                                                          init_rng);
    binary.push_back(layer.get());
    net.add(std::move(layer));
    net.add(std::make_unique<nn::SigmoidNeg<float>>(Shape{dims[l + 1], 1, 1}, scales[l]));
  }
  nn::Adam<float> opt(net.params(), hp.learning_rate);

  MlpResult result;
  std::vector<int> order(static_cast<std::size_t>(train.count));
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> labels;
  Matrix<float> grad;
  long step = 0;
  bool stop = hp.max_steps == 0;
  double lr = hp.learning_rate;
  for (int epoch = 0; epoch < hp.epochs && !stop; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    long seen = 0, correct = 0, batches = 0;
    for (int begin = 0; begin < train.count && !stop; begin += hp.batch_size) {
      const int end = std::min(train.count, begin + hp.batch_size);
      std::span<const int> idx(order.data() + begin, static_cast<std::size_t>(end - begin));
      const Matrix<float> x = gather(train, idx);
      labels.assign(idx.size(), 0);
      for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = train.labels[idx[i]];
      const Matrix<float> out = net.forward(x, true);
      const auto loss = classification_loss(out, labels, hp.loss_scale, grad);
      if (!std::isfinite(loss.loss)) throw TrainingFailure("non-finite loss", step);
      net.zero_grad();
      net.backward(grad);
      opt.step();
      for (auto* l : binary) l->clip();
      ++step;
      loss_sum += loss.loss;
      ++batches;
      seen += static_cast<long>(idx.size());
      correct += loss.correct;
      if (observer) observer(step, snapshot(binary));
      if (hp.max_steps > 0 && step >= hp.max_steps) stop = true;
    }
    MetricRow row;
    row.step = step;
    row.epoch = epoch + 1;
    row.learning_rate = lr;
    row.loss = batches ? loss_sum / batches : 0.0;
    row.train_accuracy = seen ? static_cast<double>(correct) / seen : 0.0;
    row.test_accuracy = test ? evaluate_student(binarize(snapshot(binary), scales), *test) : std::nan("");
    result.history.push_back(row);
    lr *= hp.lr_decay;
    opt.set_learning_rate(lr);
  }

  result.teachers = snapshot(binary);
  result.params = binarize(result.teachers, scales);
  result.steps = step;
  result.train_accuracy = evaluate_student(result.params, train);
  result.test_accuracy = test ? evaluate_student(result.params, *test) : std::nan("");
  return result;
}

// ---------------------------------------------------------------------------
// CNN specification

std::string FeatureLayerSpec::to_string() const {
  switch (kind) {
    case Kind::conv:
      return "conv" + std::to_string(out_channels) + "k" + std::to_string(kernel) +
             (padding ? "p" + std::to_string(padding) : "");
    case Kind::maxpool:
      return "pool" + std::to_string(pool);
    case Kind::relu:
      return "relu";
  }
  return "?";
}

namespace {

// Reads an unsigned integer at `pos`, advancing it.
bool read_uint(const std::string& s, std::size_t& pos, int& out) {
  const std::size_t start = pos;
  while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
  return pos > start && detail::parse_int(std::string_view(s).substr(start, pos - start), out);
}

}  // namespace

FeatureLayerSpec FeatureLayerSpec::parse(const std::string& token) {
  FeatureLayerSpec f;
  auto bad = [&] { return InvalidParameter("bad feature layer '" + token + "'"); };
  if (token == "relu") return f;
  std::size_t pos = 0;
  if (token.rfind("pool", 0) == 0) {
    f.kind = Kind::maxpool;
    pos = 4;
    if (!read_uint(token, pos, f.pool) || pos != token.size() || f.pool < 1) throw bad();
    return f;
  }
  if (token.rfind("conv", 0) != 0) throw bad();
  f.kind = Kind::conv;
  pos = 4;
  if (!read_uint(token, pos, f.out_channels) || pos >= token.size() || token[pos] != 'k') throw bad();
  ++pos;
  if (!read_uint(token, pos, f.kernel)) throw bad();
  if (pos < token.size()) {
    if (token[pos] != 'p') throw bad();
    ++pos;
    if (!read_uint(token, pos, f.padding) || pos != token.size()) throw bad();
  }
  if (f.out_channels < 1 || f.kernel < 1) throw bad();
  return f;
}

Shape CnnSpec::flatten_shape() const {
  Shape s = input;
  for (const auto& f : features) {
    if (f.kind == FeatureLayerSpec::Kind::conv) {
      s = {f.out_channels, s.height + 2 * f.padding - f.kernel + 1, s.width + 2 * f.padding - f.kernel + 1};
    } else if (f.kind == FeatureLayerSpec::Kind::maxpool) {
      s = {s.channels, s.height / f.pool, s.width / f.pool};
    }
    if (s.height < 1 || s.width < 1) throw InvalidParameter("cnn spec: feature map vanishes at " + f.to_string());
  }
  return s;
}

void CnnSpec::validate() const {
  if (input.channels < 1 || input.height < 1 || input.width < 1) throw InvalidParameter("cnn spec: bad input shape");
  if (fc_widths.size() < 2) throw InvalidParameter("cnn spec: need at least one FC layer");
  for (int w : fc_widths)
    if (w < 1) throw InvalidParameter("cnn spec: FC widths must be positive");
  const int flat = flatten_shape().size();
  if (flat != fc_widths.front())
    throw DimensionMismatch("cnn spec: flatten width " + std::to_string(flat) + " != first FC width " +
                            std::to_string(fc_widths.front()));
}

std::string CnnSpec::to_string() const {
  std::string s = std::to_string(input.channels) + "x" + std::to_string(input.height) + "x" +
                  std::to_string(input.width) + "|";
  for (std::size_t i = 0; i < features.size(); ++i) s += (i ? "," : "") + features[i].to_string();
  s += "|";
  for (std::size_t i = 0; i < fc_widths.size(); ++i) s += (i ? "," : "") + std::to_string(fc_widths[i]);
  return s;
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

CnnSpec CnnSpec::parse(const std::string& text) {
  const auto parts = split(text, '|');
  if (parts.size() != 3) throw InvalidParameter("cnn spec: expected 'CxHxW|features|widths'");
  CnnSpec spec;
  const auto dims = split(parts[0], 'x');
  if (dims.size() != 3 || !detail::parse_int(dims[0], spec.input.channels) ||
      !detail::parse_int(dims[1], spec.input.height) || !detail::parse_int(dims[2], spec.input.width))
    throw InvalidParameter("cnn spec: bad input shape '" + parts[0] + "'");
  if (!parts[1].empty())
    for (const auto& tok : split(parts[1], ',')) spec.features.push_back(FeatureLayerSpec::parse(tok));
  for (const auto& tok : split(parts[2], ',')) {
    int w = 0;
    if (!detail::parse_int(tok, w)) throw InvalidParameter("cnn spec: bad width '" + tok + "'");
    spec.fc_widths.push_back(w);
  }
  spec.validate();
  return spec;
}

CnnSpec CnnSpec::lenet5() { return parse("1x28x28|conv6k5p2,relu,pool2,conv16k5,relu,pool2|400,120,84,10"); }

CnnSpec CnnSpec::reduced_vgg() {
  return parse("3x32x32|conv32k3p1,pool2,relu,conv64k3p1,pool2,relu,conv128k3p1,pool2,relu,conv128k3p1,pool2,relu|512,512,10");
}

// ---------------------------------------------------------------------------
// Convolution stack

namespace {

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

struct ConvStack::Impl {
  CnnSpec spec;
  nn::Sequential<float> seq;
  std::size_t skip = SIZE_MAX;  // final ReLU, bypassed when reading features

  Matrix<float> extract(const Matrix<float>& x) { return seq.forward(x, false, 0, SIZE_MAX, skip); }
};

ConvStack::ConvStack() : impl_(std::make_unique<Impl>()) {}
ConvStack::~ConvStack() = default;
ConvStack::ConvStack(ConvStack&&) noexcept = default;
ConvStack& ConvStack::operator=(ConvStack&&) noexcept = default;

ConvStack::ConvStack(const CnnSpec& spec, std::uint64_t seed) : impl_(std::make_unique<Impl>()) {
  spec.validate();
  impl_->spec = spec;
  auto rng = make_stream(seed, "init");
  Shape s = spec.input;
  std::size_t last_relu = SIZE_MAX, last_conv = SIZE_MAX;
  for (std::size_t i = 0; i < spec.features.size(); ++i) {
    const auto& f = spec.features[i];
    std::unique_ptr<nn::Layer<float>> layer;
    switch (f.kind) {
      case FeatureLayerSpec::Kind::conv:
        layer = std::make_unique<nn::Conv2d<float>>(s, f.out_channels, f.kernel, f.padding, rng);
        last_conv = i;
        break;
      case FeatureLayerSpec::Kind::maxpool:
        layer = std::make_unique<nn::MaxPool2d<float>>(s, f.pool);
        break;
      case FeatureLayerSpec::Kind::relu:
        layer = std::make_unique<nn::ReLU<float>>(s);
        last_relu = i;
        break;
    }
    s = layer->output_shape();
    impl_->seq.add(std::move(layer));
  }
  // Max pooling commutes with ReLU, so dropping the last ReLU yields the
  // pre-activation output of the last convolution even when a pool follows.
  if (last_relu != SIZE_MAX && (last_conv == SIZE_MAX || last_conv < last_relu)) impl_->skip = last_relu;
}

const CnnSpec& ConvStack::spec() const { return impl_->spec; }

int ConvStack::feature_width() const { return impl_->spec.flatten_shape().size(); }

std::vector<float> ConvStack::features(std::span<const float> image) const {
  if (image.size() != static_cast<std::size_t>(impl_->spec.input.size()))
    throw DimensionMismatch("conv stack: image has " + std::to_string(image.size()) + " values, expected " +
                            std::to_string(impl_->spec.input.size()));
  Matrix<float> x(1, static_cast<Eigen::Index>(image.size()));
  std::copy(image.begin(), image.end(), x.data());
  const Matrix<float> y = impl_->extract(x);
  return {y.data(), y.data() + y.size()};
}

Split ConvStack::derive(const Split& data) const {
  if (data.shape.size() != impl_->spec.input.size())
    throw DimensionMismatch("conv stack: dataset sample size does not match the input shape");
  Split out;
  out.shape = impl_->spec.flatten_shape();
  out.count = data.count;
  out.labels = data.labels;
  out.pixels.resize(static_cast<std::size_t>(data.count) * out.shape.size());
  constexpr int kChunk = 256;
  std::vector<int> idx;
  for (int begin = 0; begin < data.count; begin += kChunk) {
    const int end = std::min(data.count, begin + kChunk);
    idx.resize(static_cast<std::size_t>(end - begin));
    std::iota(idx.begin(), idx.end(), begin);
    const Matrix<float> y = impl_->extract(gather(data, idx));
    float* dst = out.pixels.data() + static_cast<std::size_t>(begin) * out.shape.size();
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const float v = y.data()[i];
      dst[i] = v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f);
    }
  }
  return out;
}

std::vector<NamedTensor> ConvStack::tensors() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < impl_->seq.size(); ++i)
    for (auto* p : impl_->seq.layer(i).params()) {
      NamedTensor t;
      t.name = "features." + std::to_string(i) + "." + p->name;
      t.rows = static_cast<int>(p->value.rows());
      t.cols = static_cast<int>(p->value.cols());
      t.data.assign(p->value.data(), p->value.data() + p->value.size());
      out.push_back(std::move(t));
    }
  return out;
}

void ConvStack::load_tensors(std::span<const NamedTensor> tensors) {
  for (std::size_t i = 0; i < impl_->seq.size(); ++i)
    for (auto* p : impl_->seq.layer(i).params()) {
      const std::string name = "features." + std::to_string(i) + "." + p->name;
      auto it = std::find_if(tensors.begin(), tensors.end(), [&](const NamedTensor& t) { return t.name == name; });
      if (it == tensors.end()) throw FormatError("checkpoint: missing tensor " + name);
      if (it->rows != p->value.rows() || it->cols != p->value.cols())
        throw FormatError("checkpoint: tensor " + name + " has the wrong shape");
      for (Eigen::Index k = 0; k < p->value.size(); ++k) p->value.data()[k] = static_cast<float>(it->data[k]);
    }
}

std::uint64_t ConvStack::fingerprint() const {
  const std::string s = impl_->spec.to_string();
  std::uint64_t h = fnv1a(s.data(), s.size());
  for (auto* p : impl_->seq.params())
    h = fnv1a(p->value.data(), static_cast<std::size_t>(p->value.size()) * sizeof(float), h);
  return h;
}

void CnnHyperParams::validate() const {
  if (step1_epochs < 0) throw InvalidParameter("step1 epochs must be >= 0");
  if (batch_size < 1) throw InvalidParameter("batch_size must be >= 1");
  if (!(step1_learning_rate > 0.0)) throw InvalidParameter("step1 learning_rate must be > 0");
  if (!(step1_lr_decay > 0.0) || step1_lr_decay > 1.0) throw InvalidParameter("step1 lr_decay must be in (0, 1]");
  step2.validate();
}

namespace {

double evaluate_full(nn::Sequential<float>& features, nn::Sequential<float>& head, const Split& data) {
  if (data.count == 0) return 0.0;
  constexpr int kChunk = 500;
  std::vector<int> idx;
  long correct = 0;
  for (int begin = 0; begin < data.count; begin += kChunk) {
    const int end = std::min(data.count, begin + kChunk);
    idx.resize(static_cast<std::size_t>(end - begin));
    std::iota(idx.begin(), idx.end(), begin);
    const Matrix<float> out = head.forward(features.forward(gather(data, idx), false), false);
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      Eigen::Index best = 0;
      for (Eigen::Index c = 1; c < out.cols(); ++c)
        if (out(r, c) > out(r, best)) best = c;
      if (best == data.labels[static_cast<std::size_t>(begin + r)]) ++correct;
    }
  }
  return static_cast<double>(correct) / data.count;
}

std::uint64_t split_fingerprint(const Split& s, std::uint64_t h) {
  h = fnv1a(&s.count, sizeof s.count, h);
  h = fnv1a(s.labels.data(), s.labels.size(), h);
  return fnv1a(s.pixels.data(), s.pixels.size() * sizeof(float), h);
}

void write_derived(const std::filesystem::path& path, const Split& s) {
  std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw FormatError("cannot write derived dataset cache " + tmp);
    f.write("IMDS", 4);
    f.put(1);
    detail::put_u32(f, static_cast<std::uint32_t>(s.count));
    detail::put_u32(f, static_cast<std::uint32_t>(s.shape.channels));
    detail::put_u32(f, static_cast<std::uint32_t>(s.shape.height));
    detail::put_u32(f, static_cast<std::uint32_t>(s.shape.width));
    f.write(reinterpret_cast<const char*>(s.labels.data()), static_cast<std::streamsize>(s.labels.size()));
    std::vector<char> trits(s.pixels.size());
    for (std::size_t i = 0; i < trits.size(); ++i) trits[i] = static_cast<char>(s.pixels[i]);
    f.write(trits.data(), static_cast<std::streamsize>(trits.size()));
    if (!f) throw FormatError("cannot write derived dataset cache " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::optional<Split> read_derived(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return std::nullopt;
  char magic[4];
  if (!f.read(magic, 4) || std::string_view(magic, 4) != "IMDS" || f.get() != 1) return std::nullopt;
  try {
    Split s;
    s.count = static_cast<int>(detail::get_u32(f, "derived dataset"));
    s.shape.channels = static_cast<int>(detail::get_u32(f, "derived dataset"));
    s.shape.height = static_cast<int>(detail::get_u32(f, "derived dataset"));
    s.shape.width = static_cast<int>(detail::get_u32(f, "derived dataset"));
    s.labels.resize(static_cast<std::size_t>(s.count));
    std::vector<signed char> trits(static_cast<std::size_t>(s.count) * s.shape.size());
    if (!f.read(reinterpret_cast<char*>(s.labels.data()), static_cast<std::streamsize>(s.labels.size())) ||
        !f.read(reinterpret_cast<char*>(trits.data()), static_cast<std::streamsize>(trits.size())))
      return std::nullopt;
    s.pixels.assign(trits.begin(), trits.end());
    return s;
  } catch (const FormatError&) {
    return std::nullopt;
  }
}

Split derive_cached(const ConvStack& convs, const Split& data, const std::string& cache_dir) {
  if (cache_dir.empty()) return convs.derive(data);
  char name[64];
  std::snprintf(name, sizeof name, "derived-%016llx.bin",
                static_cast<unsigned long long>(split_fingerprint(data, convs.fingerprint())));
  const std::filesystem::path path = std::filesystem::path(cache_dir) / name;
  if (auto cached = read_derived(path)) return std::move(*cached);
  Split s = convs.derive(data);
  write_derived(path, s);
  return s;
}

}  // namespace

CnnResult train_cnn_two_step(const CnnSpec& spec, const Split& train, const Split* test, const CnnHyperParams& hp) {
  spec.validate();
  hp.validate();
  train.validate();
  if (train.shape.size() != spec.input.size())
    throw DimensionMismatch("train_cnn_two_step: dataset samples do not match the spec input shape");
  check_labels(train, spec.fc_widths.back(), "train_cnn_two_step");

  CnnResult result;
  result.convs = ConvStack(spec, hp.seed);
  auto& features = result.convs.impl().seq;

  // Step 1: conventional full-precision CNN (ReLU hidden FC, softmax head).
  auto head_rng = make_stream(hp.seed, "init.head");
  nn::Sequential<float> head;
  for (std::size_t l = 0; l + 1 < spec.fc_widths.size(); ++l) {
    head.add(std::make_unique<nn::Dense<float>>(spec.fc_widths[l], spec.fc_widths[l + 1], head_rng));
    if (l + 2 < spec.fc_widths.size()) head.add(std::make_unique<nn::ReLU<float>>(Shape{spec.fc_widths[l + 1], 1, 1}));
  }
  auto params = features.params();
  for (auto* p : head.params()) params.push_back(p);
  nn::Adam<float> opt(params, hp.step1_learning_rate);
  auto shuffle_rng = make_stream(hp.seed, "shuffle.step1");
  std::vector<int> order(static_cast<std::size_t>(train.count));
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> labels;
  Matrix<float> grad;
  long step = 0;
  double lr = hp.step1_learning_rate;
  for (int epoch = 0; epoch < hp.step1_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    long seen = 0, correct = 0, batches = 0;
    for (int begin = 0; begin < train.count; begin += hp.batch_size) {
      const int end = std::min(train.count, begin + hp.batch_size);
      std::span<const int> idx(order.data() + begin, static_cast<std::size_t>(end - begin));
      labels.assign(idx.size(), 0);
      for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = train.labels[idx[i]];
      const Matrix<float> out = head.forward(features.forward(gather(train, idx), true), true);
      const auto loss = nn::softmax_cross_entropy(out, labels, 1.0, grad);
      if (!std::isfinite(loss.loss)) throw TrainingFailure("non-finite loss in step 1", step);
      features.zero_grad();
      head.zero_grad();
      features.backward(head.backward(grad));
      opt.step();
      ++step;
      loss_sum += loss.loss;
      ++batches;
      seen += static_cast<long>(idx.size());
      correct += loss.correct;
    }
    MetricRow row;
    row.step = step;
    row.epoch = epoch + 1;
    row.learning_rate = lr;
    row.loss = batches ? loss_sum / batches : 0.0;
    row.train_accuracy = seen ? static_cast<double>(correct) / seen : 0.0;
    row.test_accuracy = test ? evaluate_full(features, head, *test) : std::nan("");
    result.step1_history.push_back(row);
    lr *= hp.step1_lr_decay;
    opt.set_learning_rate(lr);
  }
  result.step1_test_accuracy = test ? evaluate_full(features, head, *test) : std::nan("");

  // Step 2: binarized FC layers trained on the signed last-conv outputs.
  const Split derived_train = derive_cached(result.convs, train, hp.cache_dir);
  std::optional<Split> derived_test;
  if (test) derived_test = derive_cached(result.convs, *test, hp.cache_dir);
  result.step2 = train_mlp(derived_train, derived_test ? &*derived_test : nullptr, spec.fc_widths, hp.step2);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

const std::string* Checkpoint::find_meta(const std::string& key) const {
  for (const auto& [k, v] : meta)
    if (k == key) return &v;
  return nullptr;
}

const NamedTensor* Checkpoint::find_tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  out.write("IMCK", 4);
  out.put(static_cast<char>(kCheckpointVersion));
  detail::put_u32(out, static_cast<std::uint32_t>(ck.meta.size()));
  for (const auto& [k, v] : ck.meta) {
    detail::put_string(out, k);
    detail::put_string(out, v);
  }
  detail::put_u32(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    if (t.data.size() != static_cast<std::size_t>(t.rows) * t.cols)
      throw DimensionMismatch("checkpoint tensor " + t.name + ": data does not match shape");
    detail::put_string(out, t.name);
    detail::put_u32(out, static_cast<std::uint32_t>(t.rows));
    detail::put_u32(out, static_cast<std::uint32_t>(t.cols));
    for (double v : t.data) detail::put_f64(out, v);
  }
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::string_view(magic, 4) != "IMCK") throw FormatError("checkpoint: bad magic");
  const int version = in.get();
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  const std::uint32_t n_meta = detail::get_u32(in, "checkpoint");
  if (n_meta > 4096) throw FormatError("checkpoint: implausible metadata count");
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = detail::get_string(in, "checkpoint");
    std::string v = detail::get_string(in, "checkpoint");
    ck.meta.emplace_back(std::move(k), std::move(v));
  }
  const std::uint32_t n_tensors = detail::get_u32(in, "checkpoint");
  if (n_tensors > 4096) throw FormatError("checkpoint: implausible tensor count");
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    NamedTensor t;
    t.name = detail::get_string(in, "checkpoint", 4096);
    t.rows = static_cast<int>(detail::get_u32(in, "checkpoint"));
    t.cols = static_cast<int>(detail::get_u32(in, "checkpoint"));
    const long long n = static_cast<long long>(t.rows) * t.cols;
    if (t.rows < 0 || t.cols < 0 || n > (1ll << 28)) throw FormatError("checkpoint: implausible tensor shape");
    t.data.resize(static_cast<std::size_t>(n));
    for (auto& v : t.data) v = detail::get_f64(in, "checkpoint");
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path + " for writing");
  write_checkpoint(f, ck);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path);
  return read_checkpoint(f);
}

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + detail::format_double(v[i]);
  return s;
}

void add_fc_tensors(Checkpoint& ck, std::span<const TeacherLayer> teachers, const TrainedParameters& params) {
  params.validate();
  ck.meta.emplace_back("dims", join_ints(params.dims()));
  std::vector<double> scales;
  for (std::size_t l = 0; l < params.layers.size(); ++l) scales.push_back(params.scale(l));
  ck.meta.emplace_back("scales", join_doubles(scales));
  for (std::size_t l = 0; l < teachers.size(); ++l) {
    const auto& t = teachers[l];
    ck.tensors.push_back({"fc" + std::to_string(l) + ".teacher_w", t.rows, t.cols, t.w});
    ck.tensors.push_back({"fc" + std::to_string(l) + ".teacher_b", t.rows, 1, t.b});
  }
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    ck.tensors.push_back({"fc" + std::to_string(l) + ".W", layer.outputs(), layer.inputs(),
                          std::vector<double>(layer.weights.data.begin(), layer.weights.data.end())});
    ck.tensors.push_back({"fc" + std::to_string(l) + ".B", layer.outputs(), 1,
                          std::vector<double>(layer.biases.begin(), layer.biases.end())});
  }
}

}  // namespace

Checkpoint mlp_checkpoint(std::span<const TeacherLayer> teachers, const TrainedParameters& params) {
  Checkpoint ck;
  ck.meta.emplace_back("kind", "mlp");
  add_fc_tensors(ck, teachers, params);
  return ck;
}

Checkpoint cnn_checkpoint(const ConvStack& convs, std::span<const TeacherLayer> teachers,
                          const TrainedParameters& params) {
  Checkpoint ck;
  ck.meta.emplace_back("kind", "cnn");
  ck.meta.emplace_back("spec", convs.spec().to_string());
  add_fc_tensors(ck, teachers, params);
  for (auto& t : convs.tensors()) ck.tensors.push_back(std::move(t));
  return ck;
}

TrainedParameters params_from_checkpoint(const Checkpoint& ck) {
  const std::string* dims_text = ck.find_meta("dims");
  if (!dims_text) throw FormatError("checkpoint: missing 'dims'");
  std::vector<int> dims;
  for (const auto& tok : split(*dims_text, ',')) {
    int d = 0;
    if (!detail::parse_int(tok, d)) throw FormatError("checkpoint: bad dims '" + *dims_text + "'");
    dims.push_back(d);
  }
  if (dims.size() < 2) throw FormatError("checkpoint: bad dims '" + *dims_text + "'");
  TrainedParameters p;
  if (const std::string* scales = ck.find_meta("scales"))
    for (const auto& tok : split(*scales, ',')) {
      double s = 0.0;
      if (!detail::parse_double(tok, s)) throw FormatError("checkpoint: bad scales '" + *scales + "'");
      p.scales.push_back(s);
    }
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const NamedTensor* w = ck.find_tensor("fc" + std::to_string(l) + ".W");
    const NamedTensor* b = ck.find_tensor("fc" + std::to_string(l) + ".B");
    if (!w || !b) throw FormatError("checkpoint: missing binarized layer " + std::to_string(l));
    if (w->rows != dims[l + 1] || w->cols != dims[l] || b->rows != dims[l + 1])
      throw FormatError("checkpoint: layer " + std::to_string(l) + " shape disagrees with dims");
    BinarizedLayer layer;
    layer.weights = BinaryMatrix(w->rows, w->cols);
    for (std::size_t i = 0; i < w->data.size(); ++i) layer.weights.data[i] = static_cast<std::int8_t>(w->data[i]);
    for (double v : b->data) layer.biases.push_back(static_cast<std::int8_t>(v));
    p.layers.push_back(std::move(layer));
  }
  try {
    p.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  return p;
}

ConvStack convs_from_checkpoint(const Checkpoint& ck) {
  const std::string* spec = ck.find_meta("spec");
  if (!spec) throw FormatError("checkpoint: no convolution stack");
  ConvStack convs(CnnSpec::parse(*spec), 0);
  convs.load_tensors(ck.tensors);
  return convs;
}

}  // namespace imac
