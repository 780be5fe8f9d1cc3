#pragma once

// Small dense/convolutional training engine used by both training steps.
// Activations travel as row-major (batch × features) matrices; image
// features are laid out channel-major (C, H, W) inside a row.

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "imac/dataset.hpp"
#include "imac/error.hpp"

namespace imac::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
struct Param {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;
};

using imac::Shape;

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Matrix<T> forward(const Matrix<T>& x, bool training) = 0;
  virtual Matrix<T> backward(const Matrix<T>& grad_out) = 0;
  virtual std::vector<Param<T>*> params() { return {}; }
  virtual Shape output_shape() const = 0;
  virtual std::string kind() const = 0;
};

template <typename T>
void uniform_init(Matrix<T>& m, T bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
}

// Stride-1 2D convolution with symmetric zero padding.
template <typename T>
class Conv2d : public Layer<T> {
 public:
  Conv2d(Shape in, int out_channels, int kernel, int padding, std::mt19937_64& rng)
      : in_(in), k_(kernel), pad_(padding) {
    out_ = {out_channels, in.height + 2 * padding - kernel + 1, in.width + 2 * padding - kernel + 1};
    if (out_.height < 1 || out_.width < 1 || out_channels < 1 || kernel < 1)
      throw InvalidParameter("conv2d: kernel does not fit the input");
    const int fan_in = in.channels * kernel * kernel;
    w_.name = "weight";
    b_.name = "bias";
    w_.value.resize(out_channels, fan_in);
    b_.value.resize(1, out_channels);
    const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in)));
    uniform_init(w_.value, bound, rng);
    uniform_init(b_.value, bound, rng);
    w_.grad = Matrix<T>::Zero(w_.value.rows(), w_.value.cols());
    b_.grad = Matrix<T>::Zero(1, out_channels);
  }

  Matrix<T> forward(const Matrix<T>& x, bool training) override {
    const Eigen::Index batch = x.rows();
    const int P = out_.height * out_.width;
    Matrix<T> cols = im2col(x);
    Matrix<T> y_cols = w_.value * cols;  // Cout × (batch·P)
    Matrix<T> y(batch, out_.size());
    for (Eigen::Index b = 0; b < batch; ++b)
      for (int c = 0; c < out_.channels; ++c) {
        const T bias = b_.value(0, c);
        T* dst = y.row(b).data() + static_cast<Eigen::Index>(c) * P;
        const T* src = y_cols.row(c).data() + b * P;
        for (int p = 0; p < P; ++p) dst[p] = src[p] + bias;
      }
    if (training) cols_ = std::move(cols);
    return y;
  }

  Matrix<T> backward(const Matrix<T>& g) override {
    const Eigen::Index batch = g.rows();
    const int P = out_.height * out_.width;
    Matrix<T> g_cols(out_.channels, batch * P);
    for (Eigen::Index b = 0; b < batch; ++b)
      for (int c = 0; c < out_.channels; ++c) {
        const T* src = g.row(b).data() + static_cast<Eigen::Index>(c) * P;
        T* dst = g_cols.row(c).data() + b * P;
        for (int p = 0; p < P; ++p) dst[p] = src[p];
      }
    w_.grad.noalias() += g_cols * cols_.transpose();
    b_.grad += g_cols.rowwise().sum().transpose();
    Matrix<T> d_cols = w_.value.transpose() * g_cols;
    return col2im(d_cols, batch);
  }

  std::vector<Param<T>*> params() override { return {&w_, &b_}; }
  Shape output_shape() const override { return out_; }
  std::string kind() const override { return "conv"; }

 private:
  Matrix<T> im2col(const Matrix<T>& x) const {
    const Eigen::Index batch = x.rows();
    const int P = out_.height * out_.width;
    Matrix<T> cols = Matrix<T>::Zero(static_cast<Eigen::Index>(in_.channels) * k_ * k_, batch * P);
    for (Eigen::Index b = 0; b < batch; ++b) {
      const T* img = x.row(b).data();
      for (int ci = 0; ci < in_.channels; ++ci)
        for (int ky = 0; ky < k_; ++ky)
          for (int kx = 0; kx < k_; ++kx) {
            T* dst = cols.row((ci * k_ + ky) * k_ + kx).data() + b * P;
            for (int oy = 0; oy < out_.height; ++oy) {
              const int iy = oy + ky - pad_;
              if (iy < 0 || iy >= in_.height) continue;
              const T* src = img + (static_cast<Eigen::Index>(ci) * in_.height + iy) * in_.width;
              T* drow = dst + oy * out_.width;
              for (int ox = 0; ox < out_.width; ++ox) {
                const int ix = ox + kx - pad_;
                if (ix >= 0 && ix < in_.width) drow[ox] = src[ix];
              }
            }
          }
    }
    return cols;
  }

  Matrix<T> col2im(const Matrix<T>& cols, Eigen::Index batch) const {
    const int P = out_.height * out_.width;
    Matrix<T> dx = Matrix<T>::Zero(batch, in_.size());
    for (Eigen::Index b = 0; b < batch; ++b) {
      T* img = dx.row(b).data();
      for (int ci = 0; ci < in_.channels; ++ci)
        for (int ky = 0; ky < k_; ++ky)
          for (int kx = 0; kx < k_; ++kx) {
            const T* src = cols.row((ci * k_ + ky) * k_ + kx).data() + b * P;
            for (int oy = 0; oy < out_.height; ++oy) {
              const int iy = oy + ky - pad_;
              if (iy < 0 || iy >= in_.height) continue;
              T* drow = img + (static_cast<Eigen::Index>(ci) * in_.height + iy) * in_.width;
              const T* srow = src + oy * out_.width;
              for (int ox = 0; ox < out_.width; ++ox) {
                const int ix = ox + kx - pad_;
                if (ix >= 0 && ix < in_.width) drow[ix] += srow[ox];
              }
            }
          }
    }
    return dx;
  }

  Shape in_, out_;
  int k_, pad_;
  Param<T> w_, b_;
  Matrix<T> cols_;
};

// Non-overlapping max pooling; trailing rows/columns that do not fill a window are dropped.
template <typename T>
class MaxPool2d : public Layer<T> {
 public:
  MaxPool2d(Shape in, int size) : in_(in), size_(size) {
    out_ = {in.channels, in.height / size, in.width / size};
    if (size < 1 || out_.height < 1 || out_.width < 1) throw InvalidParameter("maxpool: window larger than input");
  }

  Matrix<T> forward(const Matrix<T>& x, bool training) override {
    const Eigen::Index batch = x.rows();
    Matrix<T> y(batch, out_.size());
    if (training) argmax_.assign(static_cast<std::size_t>(batch) * out_.size(), 0);
    for (Eigen::Index b = 0; b < batch; ++b) {
      const T* img = x.row(b).data();
      for (int c = 0; c < out_.channels; ++c)
        for (int oy = 0; oy < out_.height; ++oy)
          for (int ox = 0; ox < out_.width; ++ox) {
            int best = (c * in_.height + oy * size_) * in_.width + ox * size_;
            for (int dy = 0; dy < size_; ++dy)
              for (int dx = 0; dx < size_; ++dx) {
                const int idx = (c * in_.height + oy * size_ + dy) * in_.width + ox * size_ + dx;
                if (img[idx] > img[best]) best = idx;
              }
            const int o = (c * out_.height + oy) * out_.width + ox;
            y(b, o) = img[best];
            if (training) argmax_[static_cast<std::size_t>(b) * out_.size() + o] = best;
          }
    }
    return y;
  }

  Matrix<T> backward(const Matrix<T>& g) override {
    Matrix<T> dx = Matrix<T>::Zero(g.rows(), in_.size());
    for (Eigen::Index b = 0; b < g.rows(); ++b)
      for (int o = 0; o < out_.size(); ++o) dx(b, argmax_[static_cast<std::size_t>(b) * out_.size() + o]) += g(b, o);
    return dx;
  }

  Shape output_shape() const override { return out_; }
  std::string kind() const override { return "maxpool"; }

 private:
  Shape in_, out_;
  int size_;
  std::vector<int> argmax_;
};

template <typename T>
class ReLU : public Layer<T> {
 public:
  explicit ReLU(Shape in) : shape_(in) {}
  Matrix<T> forward(const Matrix<T>& x, bool training) override {
    Matrix<T> y = x.cwiseMax(T(0));
    if (training) mask_ = (x.array() > T(0)).template cast<T>();
    return y;
  }
  Matrix<T> backward(const Matrix<T>& g) override { return g.cwiseProduct(mask_); }
  Shape output_shape() const override { return shape_; }
  std::string kind() const override { return "relu"; }

 private:
  Shape shape_;
  Matrix<T> mask_;
};

// y = x·Wᵀ + b.
template <typename T>
class Dense : public Layer<T> {
 public:
  Dense(int in, int out, std::mt19937_64& rng) : out_{out, 1, 1} {
    w_.name = "weight";
    b_.name = "bias";
    w_.value.resize(out, in);
    b_.value.resize(1, out);
    const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(in)));
    uniform_init(w_.value, bound, rng);
    uniform_init(b_.value, bound, rng);
    w_.grad = Matrix<T>::Zero(out, in);
    b_.grad = Matrix<T>::Zero(1, out);
  }

  Matrix<T> forward(const Matrix<T>& x, bool training) override {
    if (training) x_ = x;
    Matrix<T> y = x * w_.value.transpose();
    y.rowwise() += b_.value.row(0);
    return y;
  }
  Matrix<T> backward(const Matrix<T>& g) override {
    w_.grad.noalias() += g.transpose() * x_;
    b_.grad += g.colwise().sum();
    return g * w_.value;
  }
  std::vector<Param<T>*> params() override { return {&w_, &b_}; }
  Shape output_shape() const override { return out_; }
  std::string kind() const override { return "dense"; }

 private:
  Shape out_;
  Param<T> w_, b_;
  Matrix<T> x_;
};

// Teacher-student binarized layer. The forward pass uses sign(w), sign(b)
// (zero maps to +1); gradients reach the real-valued teacher through a
// straight-through estimator that is zeroed where |w| > 1.
template <typename T>
class BinaryDense : public Layer<T> {
 public:
  BinaryDense(int in, int out, T init_range, std::mt19937_64& rng) : out_{out, 1, 1} {
    w_.name = "teacher_weight";
    b_.name = "teacher_bias";
    w_.value.resize(out, in);
    b_.value.resize(1, out);
    uniform_init(w_.value, init_range, rng);
    uniform_init(b_.value, init_range, rng);
    w_.grad = Matrix<T>::Zero(out, in);
    b_.grad = Matrix<T>::Zero(1, out);
  }

  static T sign(T v) { return v >= T(0) ? T(1) : T(-1); }

  Matrix<T> forward(const Matrix<T>& x, bool training) override {
    wb_ = w_.value.unaryExpr([](T v) { return sign(v); });
    const Matrix<T> bb = b_.value.unaryExpr([](T v) { return sign(v); });
    if (training) x_ = x;
    Matrix<T> y = x * wb_.transpose();
    y.rowwise() += bb.row(0);
    return y;
  }

  Matrix<T> backward(const Matrix<T>& g) override {
    const Matrix<T> gw = g.transpose() * x_;
    w_.grad += gw.cwiseProduct(pass_mask(w_.value));
    b_.grad += g.colwise().sum().cwiseProduct(pass_mask(b_.value));
    return g * wb_;
  }

  // Keeps the teacher inside [-1, 1]; called after every optimizer step.
  void clip() {
    w_.value = w_.value.cwiseMax(T(-1)).cwiseMin(T(1));
    b_.value = b_.value.cwiseMax(T(-1)).cwiseMin(T(1));
  }

  std::vector<Param<T>*> params() override { return {&w_, &b_}; }
  Shape output_shape() const override { return out_; }
  std::string kind() const override { return "binary_dense"; }

  Param<T>& weight() { return w_; }
  Param<T>& bias() { return b_; }
  const Param<T>& weight() const { return w_; }
  const Param<T>& bias() const { return b_; }

 private:
  static Matrix<T> pass_mask(const Matrix<T>& v) {
    return v.unaryExpr([](T a) { return std::abs(a) <= T(1) ? T(1) : T(0); });
  }

  Shape out_;
  Param<T> w_, b_;
  Matrix<T> wb_;
  Matrix<T> x_;
};

// o = σ(−scale·y): the IMAC neuron transfer function.
template <typename T>
class SigmoidNeg : public Layer<T> {
 public:
  SigmoidNeg(Shape in, double scale) : shape_(in), scale_(static_cast<T>(scale)) {}
  Matrix<T> forward(const Matrix<T>& x, bool training) override {
    Matrix<T> o = x.unaryExpr([s = scale_](T v) {
      const T z = s * v;
      return z >= T(0) ? std::exp(-z) / (T(1) + std::exp(-z)) : T(1) / (T(1) + std::exp(z));
    });
    if (training) o_ = o;
    return o;
  }
  Matrix<T> backward(const Matrix<T>& g) override {
    return g.cwiseProduct(o_.cwiseProduct((T(1) - o_.array()).matrix())) * (-scale_);
  }
  Shape output_shape() const override { return shape_; }
  std::string kind() const override { return "sigmoid_neg"; }
  double scale() const { return static_cast<double>(scale_); }

 private:
  Shape shape_;
  T scale_;
  Matrix<T> o_;
};

template <typename T>
class Sequential {
 public:
  void add(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }

  std::size_t size() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
  const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }

  // Runs layers [begin, end); `skip` (if < end) is bypassed.
  Matrix<T> forward(const Matrix<T>& x, bool training, std::size_t begin = 0, std::size_t end = SIZE_MAX,
                    std::size_t skip = SIZE_MAX) {
    end = std::min(end, layers_.size());
    Matrix<T> h = x;
    for (std::size_t i = begin; i < end; ++i)
      if (i != skip) h = layers_[i]->forward(h, training);
    return h;
  }

  Matrix<T> backward(const Matrix<T>& g, std::size_t begin = 0) {
    Matrix<T> d = g;
    for (std::size_t i = layers_.size(); i-- > begin;) d = layers_[i]->backward(d);
    return d;
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> all;
    for (auto& l : layers_)
      for (auto* p : l->params()) all.push_back(p);
    return all;
  }

  void zero_grad() {
    for (auto* p : params()) p->grad.setZero();
  }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

struct LossResult {
  double loss = 0.0;
  int correct = 0;
};

// Softmax cross-entropy over `scale`·outputs. Writes d(loss)/d(outputs) into
// grad (mean over the batch). Argmax ties resolve to the lowest index.
template <typename T>
LossResult softmax_cross_entropy(const Matrix<T>& outputs, const std::vector<int>& labels, double scale,
                                 Matrix<T>& grad) {
  LossResult r;
  grad.resize(outputs.rows(), outputs.cols());
  const double inv_batch = 1.0 / static_cast<double>(outputs.rows());
  for (Eigen::Index b = 0; b < outputs.rows(); ++b) {
    Eigen::Index best = 0;
    double zmax = -INFINITY;
    for (Eigen::Index c = 0; c < outputs.cols(); ++c) {
      if (outputs(b, c) > outputs(b, best)) best = c;
      zmax = std::max(zmax, scale * static_cast<double>(outputs(b, c)));
    }
    double sum = 0.0;
    for (Eigen::Index c = 0; c < outputs.cols(); ++c) sum += std::exp(scale * outputs(b, c) - zmax);
    const int y = labels[static_cast<std::size_t>(b)];
    for (Eigen::Index c = 0; c < outputs.cols(); ++c) {
      const double p = std::exp(scale * outputs(b, c) - zmax) / sum;
      grad(b, c) = static_cast<T>(scale * (p - (c == y ? 1.0 : 0.0)) * inv_batch);
    }
    r.loss += -(scale * outputs(b, y) - zmax - std::log(sum)) * inv_batch;
    r.correct += best == y ? 1 : 0;
  }
  return r;
}

// Adaptive-moment gradient descent.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Param<T>*> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (auto* p : params_) {
      m_.push_back(Matrix<T>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix<T>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void set_learning_rate(double lr) { lr_ = lr; }
  double learning_rate() const { return lr_; }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    const T step = static_cast<T>(lr_ * std::sqrt(c2) / c1);
    const T b1 = static_cast<T>(b1_), b2 = static_cast<T>(b2_);
    const T eps = static_cast<T>(eps_ * std::sqrt(c2));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& g = params_[i]->grad;
      m_[i] = b1 * m_[i] + (T(1) - b1) * g;
      v_[i] = b2 * v_[i] + (T(1) - b2) * g.cwiseProduct(g);
      params_[i]->value.array() -= step * m_[i].array() / (v_[i].array().sqrt() + eps);
    }
  }

 private:
  std::vector<Param<T>*> params_;
  std::vector<Matrix<T>> m_, v_;
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
};

}  // namespace imac::nn
