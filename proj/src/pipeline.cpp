#include "imac/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <thread>

#include "imac/error.hpp"
#include "imac/network.hpp"
#include "imac/training.hpp"
#include "text.hpp"

namespace imac {

void AdcParams::validate() const {
  if (bits < 1 || bits > 16) throw InvalidParameter("adc bits must be in [1, 16]");
  if (!(v_high > v_low) || !std::isfinite(v_low) || !std::isfinite(v_high))
    throw InvalidParameter("adc range must satisfy v_low < v_high");
}

int adc_quantize(double v, const AdcParams& adc) {
  const int n = adc.levels();
  if (std::isnan(v)) throw InvalidInput("adc input is NaN");
  const double u = (v - adc.v_low) / (adc.v_high - adc.v_low) * n;
  return static_cast<int>(std::clamp(std::floor(u), 0.0, static_cast<double>(n - 1)));
}

double adc_dequantize(int code, const AdcParams& adc) {
  if (code < 0 || code >= adc.levels()) throw InvalidInput("adc code out of range");
  return adc.v_low + (code + 0.5) * (adc.v_high - adc.v_low) / adc.levels();
}

int quantized_label(std::span<const double> scores, const std::optional<AdcParams>& adc) {
  if (!adc) return argmax(scores);
  std::vector<double> q(scores.size());
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = adc_dequantize(adc_quantize(scores[i], *adc), *adc);
  return argmax(q);
}

void write_trace_csv(std::ostream& out, std::span<const TraceEvent> trace) {
  out << "event,cycle,address,value\n";
  for (const auto& e : trace)
    out << e.event << ',' << e.cycle << ",0x" << std::hex << e.address << std::dec << ','
        << detail::format_double(e.value) << '\n';
}

bool trace_is_legal(std::span<const TraceEvent> trace) {
  int ready = -1;
  bool outputs = false, computed = false;
  for (const auto& e : trace) {
    if (e.event == "ready") {
      const int next = static_cast<int>(e.value);
      const bool ok =
          (ready == -1 && next == 0) || (ready == 0 && next == 1) || (ready == 1 && next == -1 && computed);
      if (!ok) return false;
      computed = false;
      if (next == -1) outputs = true;
      if (next == 0) outputs = false;
      ready = next;
    } else if (e.event == "store") {
      if (ready != 0) return false;
    } else if (e.event == "load") {
      if (ready != -1 || !outputs) return false;
    } else if (e.event == "timer_start" || e.event == "timer_expire" || e.event == "compute") {
      if (ready != 1) return false;
      if (e.event == "compute") computed = true;
    }
  }
  return true;
}

TransferProtocolState::TransferProtocolState(long long timer_cycles) : timer_cycles_(timer_cycles) {
  if (timer_cycles < 0) throw InvalidParameter("timer cycles must be >= 0");
}

void TransferProtocolState::log(const char* event, std::uint32_t address, double value) {
  trace_.push_back({event, cycle_, address, value});
}

void TransferProtocolState::transition(Ready next) {
  ready_ = next;
  log("ready", kReadyAddress, static_cast<double>(static_cast<int>(next)));
}

void TransferProtocolState::store_imac(std::uint32_t address, double value) {
  ++cycle_;
  if (address == kReadyAddress) {
    if (value == 0.0) {
      if (ready_ != Ready::output_ready)
        throw ProtocolViolation("ready <- 0 is only legal after outputs were released (ready = -1)");
      buffer_.fill(0);
      trits_ = 0;
      outputs_ = 0;
      outputs_valid_ = false;
      analog_.clear();
      transition(Ready::filling);
    } else if (value == 1.0) {
      if (ready_ != Ready::filling) throw ProtocolViolation("ready <- 1 requires an open fill (ready = 0)");
      transition(Ready::input_ready);
      timer_ = timer_cycles_;
      log("timer_start", kReadyAddress, static_cast<double>(timer_));
    } else {
      throw ProtocolViolation("the CPU may only write 0 or 1 to the ready register");
    }
    return;
  }
  if (ready_ != Ready::filling)
    throw ProtocolViolation(ready_ == Ready::output_ready ? "store_imac to the buffer while outputs are ready"
                                                          : "store_imac to the buffer while the IMAC computes");
  if (address < kDataBase || address - kDataBase >= static_cast<std::uint32_t>(kBufferTrits))
    throw BufferOverflow("store_imac: slot " + std::to_string(address - kDataBase) + " exceeds the " +
                         std::to_string(kBufferTrits) + "-trit buffer");
  if (std::isnan(value)) throw InvalidInput("store_imac: NaN value");
  const int slot = static_cast<int>(address - kDataBase);
  const std::uint8_t bits = value > 0.0 ? 0b01 : (value < 0.0 ? 0b10 : 0b00);
  auto& byte = buffer_[static_cast<std::size_t>(slot / 4)];
  const int shift = 2 * (slot % 4);
  byte = static_cast<std::uint8_t>((byte & ~(0b11 << shift)) | (bits << shift));
  trits_ = std::max(trits_, slot + 1);
  log("store", address, value > 0.0 ? 1.0 : (value < 0.0 ? -1.0 : 0.0));
}

double TransferProtocolState::load_imac(std::uint32_t address) {
  ++cycle_;
  if (address == kReadyAddress) {
    log("load_ready", address, static_cast<double>(static_cast<int>(ready_)));
    return static_cast<int>(ready_);
  }
  if (ready_ != Ready::output_ready || !outputs_valid_)
    throw ProtocolViolation("load_imac from the buffer before outputs are ready");
  if (address < kDataBase || address - kDataBase >= static_cast<std::uint32_t>(outputs_))
    throw ProtocolViolation("load_imac: no output at slot " + std::to_string(address - kDataBase));
  const int slot = static_cast<int>(address - kDataBase);
  double v;
  if (!analog_.empty()) {
    v = analog_[static_cast<std::size_t>(slot)];
  } else {
    const std::uint8_t byte = buffer_[static_cast<std::size_t>(slot / 2)];
    v = (slot % 2) ? (byte >> 4) : (byte & 0x0f);
  }
  log("load", address, v);
  return v;
}

std::vector<std::int8_t> TransferProtocolState::read_inputs() const {
  if (ready_ != Ready::input_ready) throw ProtocolViolation("IMAC read of the buffer before inputs are ready");
  std::vector<std::int8_t> out(static_cast<std::size_t>(trits_));
  for (int i = 0; i < trits_; ++i) {
    const int bits = (buffer_[static_cast<std::size_t>(i / 4)] >> (2 * (i % 4))) & 0b11;
    out[static_cast<std::size_t>(i)] = bits == 0b01 ? 1 : (bits == 0b10 ? -1 : 0);
  }
  return out;
}

void TransferProtocolState::finish(int count) {
  log("compute", kReadyAddress, count);
  cycle_ += timer_;
  timer_ = 0;
  log("timer_expire", kReadyAddress, 0.0);
  outputs_ = count;
  outputs_valid_ = true;
  transition(Ready::output_ready);
}

void TransferProtocolState::complete(std::span<const int> codes) {
  if (ready_ != Ready::input_ready) throw ProtocolViolation("IMAC completion without a pending input transfer");
  if (codes.size() > static_cast<std::size_t>(kBufferCodes))
    throw BufferOverflow("IMAC produced " + std::to_string(codes.size()) + " outputs; the buffer holds " +
                         std::to_string(kBufferCodes));
  buffer_.fill(0);
  analog_.clear();
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] < 0 || codes[i] > 15) throw InvalidInput("output code does not fit a 4-bit slot");
    buffer_[i / 2] = static_cast<std::uint8_t>(buffer_[i / 2] | (codes[i] << (4 * (i % 2))));
  }
  finish(static_cast<int>(codes.size()));
}

void TransferProtocolState::complete_analog(std::span<const double> values) {
  if (ready_ != Ready::input_ready) throw ProtocolViolation("IMAC completion without a pending input transfer");
  buffer_.fill(0);
  analog_.assign(values.begin(), values.end());
  finish(static_cast<int>(values.size()));
}

HeteroPipeline::HeteroPipeline(const ConvStack& convs, const ImacNetwork& network, PipelineOptions options)
    : convs_(&convs), network_(&network), options_(std::move(options)) {
  if (options_.adc) options_.adc->validate();
  if (options_.imac_latency_cycles < 0) throw InvalidParameter("IMAC latency must be >= 0");
  if (convs.feature_width() != network.topology().layer_dims.front())
    throw DimensionMismatch("pipeline: conv output width " + std::to_string(convs.feature_width()) +
                            " != IMAC input width " + std::to_string(network.topology().layer_dims.front()));
  if (options_.adc && network.topology().layer_dims.back() > kBufferCodes)
    throw CapacityExceeded("pipeline: more outputs than the buffer can return");
}

PipelineRun HeteroPipeline::run(std::span<const float> image) const {
  const std::vector<float> features = convs_->features(image);
  const int n = static_cast<int>(features.size());
  TransferProtocolState st(options_.imac_latency_cycles);
  PipelineRun run;
  run.fills = std::max(1, (n + kBufferTrits - 1) / kBufferTrits);
  std::vector<double> gathered;
  gathered.reserve(features.size());
  std::vector<double> raw;
  for (int f = 0; f < run.fills; ++f) {
    const int begin = f * kBufferTrits;
    const int end = std::min(n, begin + kBufferTrits);
    st.store_imac(kReadyAddress, 0);
    for (int i = begin; i < end; ++i) st.store_imac(kDataBase + static_cast<std::uint32_t>(i - begin), features[i]);
    st.store_imac(kReadyAddress, 1);
    for (auto t : st.read_inputs()) gathered.push_back(t);
    const bool last = f + 1 == run.fills;
    if (!last) {
      st.complete({});  // partial sums stay in the amplifier stage
      continue;
    }
    raw = network_->forward(gathered);
    if (options_.adc) {
      for (double v : raw) run.codes.push_back(adc_quantize(v, *options_.adc));
      st.complete(run.codes);
    } else {
      st.complete_analog(raw);
    }
  }
  for (std::size_t o = 0; o < raw.size(); ++o) {
    const double v = st.load_imac(kDataBase + static_cast<std::uint32_t>(o));
    run.scores.push_back(options_.adc ? adc_dequantize(static_cast<int>(v), *options_.adc) : v);
  }
  run.label = argmax(run.scores);
  run.trace = st.trace();
  return run;
}

double HeteroPipeline::accuracy(const Split& test, int jobs) const {
  if (test.count == 0) return 0.0;
  jobs = std::clamp(jobs, 1, test.count);
  std::vector<int> correct(static_cast<std::size_t>(jobs), 0);
  auto work = [&](int j) {
    const int lo = static_cast<int>(static_cast<long long>(test.count) * j / jobs);
    const int hi = static_cast<int>(static_cast<long long>(test.count) * (j + 1) / jobs);
    for (int i = lo; i < hi; ++i)
      if (run(test.sample(i)).label == test.labels[static_cast<std::size_t>(i)]) ++correct[static_cast<std::size_t>(j)];
  };
  if (jobs == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(work, j);
    for (auto& t : pool) t.join();
  }
  long total = 0;
  for (int c : correct) total += c;
  return static_cast<double>(total) / test.count;
}

}  // namespace imac
