#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "imac/dataset.hpp"
#include "imac/error.hpp"
#include "imac/network.hpp"
#include "imac/training.hpp"
#include "oracles.hpp"

using namespace imac;

namespace {

// Four Gaussian blobs in 8 dimensions.
Split blobs(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> noise(0.0f, 0.15f);
  Split s;
  s.shape = {8, 1, 1};
  s.count = n;
  for (int i = 0; i < n; ++i) {
    const int y = i % 4;
    for (int d = 0; d < 8; ++d) s.pixels.push_back((d % 4 == y ? 0.8f : 0.2f) + noise(rng));
    s.labels.push_back(static_cast<std::uint8_t>(y));
  }
  return s;
}

TeacherLayer random_teacher(int rows, int cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  TeacherLayer t{rows, cols, {}, {}};
  for (int i = 0; i < rows * cols; ++i) t.w.push_back(u(rng));
  for (int i = 0; i < rows; ++i) t.b.push_back(u(rng));
  return t;
}

}  // namespace

TEST_CASE("binarize: zero maps to +1, negatives to −1, idempotent") {
  TeacherLayer t{1, 3, {0.0, -0.3, 0.7}, {-0.0}};
  const auto b = binarize(t);
  CHECK(b.weights(0, 0) == 1);
  CHECK(b.weights(0, 1) == -1);
  CHECK(b.weights(0, 2) == 1);
  CHECK(b.biases[0] == 1);  // −0.0 ≥ 0
  TeacherLayer again{1, 3, {}, {}};
  for (auto v : b.weights.data) again.w.push_back(v);
  for (auto v : b.biases) again.b.push_back(v);
  CHECK(binarize(again) == b);
}

TEST_CASE("sign unit") {
  const std::vector<double> x = {-2.5, 0.0, 7.1};
  CHECK(sign_unit(x) == std::vector<std::int8_t>{-1, 0, 1});
  const std::vector<double> relu_out = {0.0, 0.3, 2.0, 0.0};
  for (auto v : sign_unit(relu_out)) CHECK(v >= 0);
  std::vector<double> once;
  for (auto v : sign_unit(x)) once.push_back(v);
  CHECK(sign_unit(once) == sign_unit(x));
}

TEST_CASE("student forward equals IMAC ideal inference on the same parameters") {
  std::mt19937_64 rng(30);
  for (int t = 0; t < 50; ++t) {
    std::vector<TeacherLayer> teachers = {random_teacher(12, 20, rng), random_teacher(5, 12, rng)};
    const std::vector<double> scales = {1.0, 2.0};
    const auto p = binarize(teachers, scales);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> x(20);
    for (auto& v : x) v = u(rng);
    const auto a = student_forward(p, x);
    const auto b = ImacNetwork::map(p).forward(x);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12);
    const auto o = oracle::forward(p, x);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - o[i]) <= 1e-12);
  }
}

TEST_CASE("predict_label: argmax or 0.5 threshold for one output") {
  CHECK(predict_label(std::vector<double>{0.2, 0.9, 0.1}) == 1);
  CHECK(predict_label(std::vector<double>{0.5}) == 1);
  CHECK(predict_label(std::vector<double>{0.49}) == 0);
}

TEST_CASE("zero-epoch run returns binarize(initialization)") {
  const Split train = blobs(400, 1);
  MlpHyperParams hp;
  hp.epochs = 0;
  hp.seed = 5;
  const std::vector<int> dims = {8, 6, 4};
  const auto r = train_mlp(train, &train, dims, hp);
  CHECK(r.steps == 0);
  CHECK(r.params == binarize(r.teachers));
  for (const auto& t : r.teachers)
    for (double w : t.w) CHECK(std::abs(w) <= hp.init_range);
  CHECK(r.test_accuracy < 0.6);
}

TEST_CASE("teacher parameters stay in [−1, 1] after every step") {
  const Split train = blobs(256, 2);
  MlpHyperParams hp;
  hp.epochs = 5;
  hp.batch_size = 16;
  hp.learning_rate = 0.3;  // large steps push weights against the clip
  hp.init_range = 1.0;
  long steps = 0;
  bool inside = true, saturated = false;
  const std::vector<int> dims = {8, 6, 4};
  train_mlp(train, nullptr, dims, hp, [&](long, std::span<const TeacherLayer> ts) {
    ++steps;
    for (const auto& t : ts) {
      for (double w : t.w) {
        inside = inside && std::abs(w) <= 1.0;
        saturated = saturated || std::abs(w) == 1.0;
      }
      for (double b : t.b) inside = inside && std::abs(b) <= 1.0;
    }
  });
  CHECK(steps == 5 * 16);
  CHECK(inside);
  CHECK(saturated);
}

TEST_CASE("binarized MLP learns separable blobs") {
  const Split train = blobs(800, 3), test = blobs(200, 4);
  MlpHyperParams hp;
  hp.epochs = 15;
  hp.batch_size = 32;
  hp.learning_rate = 0.01;
  const std::vector<int> dims = {8, 16, 4};
  const auto r = train_mlp(train, &test, dims, hp);
  CHECK(r.test_accuracy > 0.9);
  CHECK(r.history.size() == 15);
  CHECK(r.test_accuracy == doctest::Approx(evaluate_student(r.params, test, 3)));
  std::ostringstream csv;
  write_metrics_csv(csv, r.history);
  CHECK(csv.str().rfind("step,epoch,learning_rate,loss,train_accuracy,test_accuracy\n", 0) == 0);
}

TEST_CASE("XOR fixture: 2x4x1 reaches 100% within 2000 steps") {
  const auto xor4 = make_xor();
  MlpHyperParams hp;
  hp.epochs = 1000;
  hp.batch_size = 2;
  hp.learning_rate = 0.2;
  hp.activation_scales = {4.0, 4.0};
  hp.seed = 2;
  const std::vector<int> dims = {2, 4, 1};
  const auto r = train_mlp(xor4.train, nullptr, dims, hp);
  CHECK(r.steps == 2000);
  CHECK(r.train_accuracy == 1.0);
  // truth table through the mapped network
  const auto net = ImacNetwork::map(r.params);
  for (int i = 0; i < 4; ++i) {
    const auto s = xor4.train.sample(i);
    const std::vector<double> x(s.begin(), s.end());
    CHECK(predict_label(net.forward(x)) == xor4.train.labels[i]);
  }
  // Sign-constrained training of XOR gets stuck in 3-of-4 minima for some
  // initializations; most seeds still converge.
  int solved = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    hp.seed = seed;
    solved += train_mlp(xor4.train, nullptr, dims, hp).train_accuracy == 1.0;
  }
  CHECK(solved >= 10);
}

TEST_CASE("non-finite loss raises a training failure with the step") {
  Split train = blobs(64, 5);
  train.pixels[3] = std::nanf("");
  MlpHyperParams hp;
  hp.batch_size = 64;
  const std::vector<int> dims = {8, 4};
  try {
    train_mlp(train, nullptr, dims, hp);
    FAIL("expected TrainingFailure");
  } catch (const TrainingFailure& e) {
    CHECK(e.step() == 0);
  }
}

TEST_CASE("train_mlp argument checks") {
  const Split train = blobs(16, 6);
  MlpHyperParams hp;
  const std::vector<int> wrong_in = {9, 4}, too_few_out = {8, 3};
  CHECK_THROWS_AS(train_mlp(train, nullptr, wrong_in, hp), DimensionMismatch);
  CHECK_THROWS_AS(train_mlp(train, nullptr, too_few_out, hp), InvalidInput);
  hp.batch_size = 0;
  const std::vector<int> dims = {8, 4};
  CHECK_THROWS_AS(train_mlp(train, nullptr, dims, hp), InvalidParameter);
}

TEST_CASE("CNN spec strings round trip and check shapes") {
  const auto lenet = CnnSpec::lenet5();
  CHECK(lenet.flatten_shape().size() == 400);
  CHECK(CnnSpec::parse(lenet.to_string()) == lenet);
  const auto vgg = CnnSpec::reduced_vgg();
  CHECK(vgg.flatten_shape().size() == vgg.fc_widths.front());
  CHECK(CnnSpec::parse(vgg.to_string()) == vgg);
  CHECK_NOTHROW(plan_topology(vgg.fc_widths));
  CHECK_THROWS(CnnSpec::parse("1x28x28|conv6k5p2,relu,pool2|999,10"));
  CHECK_THROWS(CnnSpec::parse("1x28x28|conv6x5|400,10"));
  CHECK_THROWS(CnnSpec::parse("garbage"));
}

TEST_CASE("two-step training with no feature layers is train_mlp on signed pixels") {
  Split train = blobs(256, 7);
  for (auto& v : train.pixels) v -= 0.5f;
  const CnnSpec spec = CnnSpec::parse("8x1x1||8,4");
  CnnHyperParams hp;
  hp.step1_epochs = 1;
  hp.step2.epochs = 3;
  hp.step2.seed = 99;
  const auto r = train_cnn_two_step(spec, train, nullptr, hp);

  Split signed_px = train;
  for (auto& v : signed_px.pixels) v = v > 0 ? 1.0f : (v < 0 ? -1.0f : 0.0f);
  const std::vector<int> dims = {8, 4};
  const auto direct = train_mlp(signed_px, nullptr, dims, hp.step2);
  CHECK(r.step2.params == direct.params);
}

TEST_CASE("checkpoint container round trip") {
  std::mt19937_64 rng(31);
  const CnnSpec spec = CnnSpec::parse("1x8x8|conv2k3,relu,pool2|18,5,3");
  ConvStack convs(spec, 4);
  std::vector<TeacherLayer> teachers = {random_teacher(5, 18, rng), random_teacher(3, 5, rng)};
  const auto params = binarize(teachers, std::vector<double>{1.0, 3.0});
  std::stringstream buf;
  write_checkpoint(buf, cnn_checkpoint(convs, teachers, params));
  const std::string bytes = buf.str();
  std::stringstream in(bytes);
  const Checkpoint ck = read_checkpoint(in);
  CHECK(params_from_checkpoint(ck) == params);
  const ConvStack back = convs_from_checkpoint(ck);
  CHECK(back.spec() == spec);
  CHECK(back.fingerprint() == convs.fingerprint());
  std::vector<float> img(64);
  for (int i = 0; i < 64; ++i) img[i] = static_cast<float>(i % 7) / 7.0f;
  CHECK(back.features(img) == convs.features(img));

  std::stringstream cut(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(read_checkpoint(cut), FormatError);
  std::string bad = bytes;
  bad[4] = 7;
  std::stringstream bv(bad);
  CHECK_THROWS_AS(read_checkpoint(bv), FormatError);
}
