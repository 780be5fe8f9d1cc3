#include <doctest.h>

#include <random>
#include <sstream>

#include "imac/error.hpp"
#include "imac/network.hpp"
#include "imac/pipeline.hpp"
#include "imac/training.hpp"
#include "oracles.hpp"

using namespace imac;

TEST_CASE("3-bit ADC bin arithmetic") {
  const AdcParams adc;
  CHECK(adc.levels() == 8);
  CHECK(adc_quantize(0.0, adc) == 0);
  CHECK(adc_quantize(1.0, adc) == 7);
  CHECK(adc_quantize(3.5 / 8.0, adc) == 3);
  CHECK(adc_quantize(-3.0, adc) == 0);
  CHECK(adc_quantize(9.0, adc) == 7);
  for (int k = 0; k < 8; ++k) {
    CHECK(adc_dequantize(k, adc) == doctest::Approx((k + 0.5) / 8.0));
    CHECK(adc_quantize(adc_dequantize(k, adc), adc) == k);
  }
  CHECK_THROWS_AS(adc_dequantize(8, adc), InvalidInput);
  CHECK_THROWS_AS(adc_quantize(std::nan(""), adc), InvalidInput);
  AdcParams bad;
  bad.v_high = bad.v_low;
  CHECK_THROWS_AS(bad.validate(), InvalidParameter);
}

TEST_CASE("ADC is monotone and dequantize∘quantize∘dequantize is stable") {
  std::mt19937_64 rng(40);
  std::uniform_real_distribution<double> u(-0.5, 1.5);
  for (int bits : {1, 3, 5, 8}) {
    AdcParams adc;
    adc.bits = bits;
    adc.v_low = 0.1;
    adc.v_high = 0.9;
    for (int i = 0; i < 2000; ++i) {
      double a = u(rng), b = u(rng);
      if (a > b) std::swap(a, b);
      CHECK(adc_quantize(a, adc) <= adc_quantize(b, adc));
      const double d = adc_dequantize(adc_quantize(a, adc), adc);
      CHECK(adc_dequantize(adc_quantize(d, adc), adc) == d);
    }
  }
}

TEST_CASE("store_imac packs signs as trits and the handshake advances") {
  TransferProtocolState st(12);
  CHECK(st.ready() == Ready::output_ready);
  CHECK(st.load_imac(kReadyAddress) == -1.0);
  st.store_imac(kReadyAddress, 0);
  CHECK(st.ready() == Ready::filling);
  st.store_imac(kDataBase + 0, 7.1);
  st.store_imac(kDataBase + 1, -0.2);
  st.store_imac(kDataBase + 2, 0.0);
  st.store_imac(kDataBase + 5, 3.0);
  CHECK(st.buffer()[0] == 0b00'10'01);  // slot 0 = 01, slot 1 = 10, slot 2 = 00
  CHECK(st.buffer()[1] == 0b01'00);     // slot 5 at bits 2..3
  st.store_imac(kReadyAddress, 1);
  CHECK(st.ready() == Ready::input_ready);
  CHECK(st.read_inputs() == std::vector<std::int8_t>{1, -1, 0, 0, 0, 1});
  const long long before = st.cycle();
  st.complete(std::vector<int>{5, 2, 15});
  CHECK(st.cycle() == before + 12);
  CHECK(st.ready() == Ready::output_ready);
  CHECK(st.load_imac(kDataBase + 0) == 5);
  CHECK(st.load_imac(kDataBase + 1) == 2);
  CHECK(st.load_imac(kDataBase + 2) == 15);
  CHECK_THROWS_AS(st.load_imac(kDataBase + 3), ProtocolViolation);
  CHECK(trace_is_legal(st.trace()));
}

TEST_CASE("protocol errors") {
  TransferProtocolState st;
  CHECK_THROWS_AS(st.load_imac(kDataBase), ProtocolViolation);  // nothing computed yet
  CHECK_THROWS_AS(st.store_imac(kDataBase, 1), ProtocolViolation);
  CHECK_THROWS_AS(st.store_imac(kReadyAddress, 1), ProtocolViolation);
  CHECK_THROWS_AS(st.store_imac(kReadyAddress, -1), ProtocolViolation);
  st.store_imac(kReadyAddress, 0);
  CHECK_THROWS_AS(st.load_imac(kDataBase), ProtocolViolation);
  CHECK_THROWS_AS(st.store_imac(kReadyAddress, 0), ProtocolViolation);
  for (int i = 0; i < kBufferTrits; ++i) st.store_imac(kDataBase + i, 1.0);
  CHECK_THROWS_AS(st.store_imac(kDataBase + kBufferTrits, 1.0), BufferOverflow);
  st.store_imac(kReadyAddress, 1);
  CHECK_THROWS_AS(st.store_imac(kDataBase, 1.0), ProtocolViolation);
  CHECK_THROWS_AS(st.complete(std::vector<int>(kBufferCodes + 1, 0)), BufferOverflow);
  st.complete(std::vector<int>(kBufferCodes, 1));
  CHECK_THROWS_AS(st.complete(std::vector<int>{1}), ProtocolViolation);
}

TEST_CASE("random legal interleavings pass, mutated ones are rejected") {
  std::mt19937_64 rng(41);
  int false_reject = 0, false_accept = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto good = oracle::legal_sequence(rng);
    REQUIRE(oracle::accepts(good));
    false_reject += !oracle::runs_clean(good);
    false_accept += oracle::runs_clean(oracle::illegal_sequence(rng));
  }
  CHECK(false_reject == 0);
  CHECK(false_accept == 0);
}

TEST_CASE("trace checker rejects out-of-order events") {
  std::vector<TraceEvent> t = {{"ready", 1, 0, 0}, {"store", 2, 1, 1}, {"ready", 3, 0, 1},
                               {"ready", 4, 0, -1}, {"load", 5, 1, 3}};
  CHECK_FALSE(trace_is_legal(t));  // load without outputs published by a compute
  std::vector<TraceEvent> u = {{"ready", 1, 0, 1}};
  CHECK_FALSE(trace_is_legal(u));
  std::ostringstream csv;
  write_trace_csv(csv, t);
  CHECK(csv.str().rfind("event,cycle,address,value\n", 0) == 0);
}

namespace {

struct Fixture {
  CnnSpec spec;
  ConvStack convs;
  ImacNetwork net;
};

Fixture make_fixture(const std::string& spec_text, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  CnnSpec spec = CnnSpec::parse(spec_text);
  ConvStack convs(spec, seed);
  auto p = oracle::random_params(spec.fc_widths, rng);
  NetworkOptions o;
  o.input_encoding = InputEncoding::ternary;
  return {spec, std::move(convs), ImacNetwork::map(p, o)};
}

std::vector<float> random_image(const Shape& s, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> img(static_cast<std::size_t>(s.size()));
  for (auto& v : img) v = u(rng);
  return img;
}

}  // namespace

TEST_CASE("pipeline with the ADC bypassed reproduces IMAC inference on signed features") {
  // 4×9×9 = 324 features: two buffer fills.
  auto f = make_fixture("1x11x11|conv4k3|324,12,6", 50);
  PipelineOptions po;
  po.adc = std::nullopt;
  po.imac_latency_cycles = 9;
  const HeteroPipeline pipe(f.convs, f.net, po);
  std::mt19937_64 rng(51);
  for (int i = 0; i < 20; ++i) {
    const auto img = random_image(f.spec.input, rng);
    const auto run = pipe.run(img);
    const auto feats = f.convs.features(img);
    std::vector<double> x;
    for (auto t : sign_unit(feats)) x.push_back(t);
    const auto want = f.net.forward(x);
    REQUIRE(run.scores.size() == want.size());
    for (std::size_t k = 0; k < want.size(); ++k) CHECK(std::abs(run.scores[k] - want[k]) <= 1e-12);
    CHECK(run.label == argmax(want));
    CHECK(run.fills == 2);
    CHECK(trace_is_legal(run.trace));
  }
}

TEST_CASE("each fill has exactly one 0→1 and one 1→−1 transition") {
  auto f = make_fixture("1x6x6|conv2k3|32,5", 52);
  const HeteroPipeline pipe(f.convs, f.net, {});
  std::mt19937_64 rng(53);
  const auto run = pipe.run(random_image(f.spec.input, rng));
  CHECK(run.fills == 1);
  int up = 0, down = 0, timer = 0;
  double prev = -1;
  for (const auto& e : run.trace) {
    if (e.event == "timer_start") ++timer;
    if (e.event != "ready") continue;
    if (prev == 0 && e.value == 1) ++up;
    if (prev == 1 && e.value == -1) ++down;
    prev = e.value;
  }
  CHECK(up == 1);
  CHECK(down == 1);
  CHECK(timer == 1);
  // ADC codes are loaded back and dequantized to bin centers
  for (std::size_t k = 0; k < run.codes.size(); ++k)
    CHECK(run.scores[k] == adc_dequantize(run.codes[k], AdcParams{}));
}

TEST_CASE("pipeline construction checks widths") {
  std::mt19937_64 rng(54);
  const CnnSpec spec = CnnSpec::parse("1x6x6|conv2k3|32,5");
  ConvStack convs(spec, 1);
  const auto wrong = ImacNetwork::map(oracle::random_params({31, 5}, rng));
  CHECK_THROWS_AS(HeteroPipeline(convs, wrong, {}), DimensionMismatch);
}

TEST_CASE("quantized_label") {
  const std::vector<double> s = {0.30, 0.36, 0.9};
  CHECK(quantized_label(s, std::nullopt) == 2);
  const std::vector<double> close = {0.30, 0.36};
  CHECK(quantized_label(close, std::nullopt) == 1);
  CHECK(quantized_label(close, AdcParams{}) == 0);  // same bin, lowest index wins
}
