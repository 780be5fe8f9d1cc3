#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "imac/dataset.hpp"

namespace imac {

class ConvStack;
class ImacNetwork;

// Uniform converter over [v_low, v_high]; codes 0 .. 2^bits − 1.
struct AdcParams {
  int bits = 3;
  double v_low = 0.0;   // normalized neuron output range (vss .. vdd)
  double v_high = 1.0;

  int levels() const { return 1 << bits; }
  void validate() const;
};

// Inputs are clipped to the range; bin k covers [low + k·Δ, low + (k+1)·Δ).
int adc_quantize(double v, const AdcParams& adc);
// Bin center.
double adc_dequantize(int code, const AdcParams& adc);

enum class Ready : int { filling = 0, input_ready = 1, output_ready = -1 };

inline constexpr std::uint32_t kReadyAddress = 0x0;
inline constexpr std::uint32_t kDataBase = 0x1;  // slot k lives at kDataBase + k
inline constexpr int kBufferBytes = 64;
inline constexpr int kBufferTrits = kBufferBytes * 4;  // 2 bits each
inline constexpr int kBufferCodes = kBufferBytes * 2;  // 4-bit nibbles

struct TraceEvent {
  std::string event;
  long long cycle = 0;
  std::uint32_t address = 0;
  double value = 0.0;
};

void write_trace_csv(std::ostream& out, std::span<const TraceEvent> trace);

// Replays ready-register transitions and checks them against the handshake
// (0 → 1 → −1 → 0 ...), starting from −1. Data stores must happen while
// filling, data loads while outputs are ready, and −1 needs a compute first.
bool trace_is_legal(std::span<const TraceEvent> trace);

// CPU-side view of the co-processor handshake: ready register at address 0x0,
// 64-byte buffer behind it, and a countdown timer loaded when inputs are
// handed over. Every instruction costs one cycle; the wait costs the timer.
class TransferProtocolState {
 public:
  explicit TransferProtocolState(long long timer_cycles = 0);

  Ready ready() const { return ready_; }
  long long cycle() const { return cycle_; }
  long long timer() const { return timer_; }
  long long timer_cycles() const { return timer_cycles_; }
  const std::array<std::uint8_t, kBufferBytes>& buffer() const { return buffer_; }
  int trits_stored() const { return trits_; }
  int outputs_available() const { return outputs_; }
  const std::vector<TraceEvent>& trace() const { return trace_; }

  // store_imac: address 0x0 sets the ready register (0 opens a fill, 1 hands
  // the buffer to the IMAC); data addresses store sign(value) as a trit.
  void store_imac(std::uint32_t address, double value);
  // load_imac: address 0x0 returns the ready register; data addresses return
  // the output at that slot (ADC code, or analog value when bypassed).
  double load_imac(std::uint32_t address);

  // IMAC side. Valid only while inputs are ready.
  std::vector<std::int8_t> read_inputs() const;
  // Runs the timer down, publishes outputs and raises OUTPUT_READY.
  void complete(std::span<const int> codes);
  void complete_analog(std::span<const double> values);

 private:
  void transition(Ready next);
  void finish(int count);
  void log(const char* event, std::uint32_t address, double value);

  Ready ready_ = Ready::output_ready;
  bool outputs_valid_ = false;
  std::array<std::uint8_t, kBufferBytes> buffer_{};
  std::vector<double> analog_;
  int trits_ = 0;
  int outputs_ = 0;
  long long timer_cycles_;
  long long timer_ = 0;
  long long cycle_ = 0;
  std::vector<TraceEvent> trace_;
};

struct PipelineOptions {
  std::optional<AdcParams> adc = AdcParams{};  // nullopt: converter bypassed
  long long imac_latency_cycles = 0;
};

struct PipelineRun {
  int label = -1;
  std::vector<double> scores;  // dequantized (or raw when bypassed)
  std::vector<int> codes;
  std::vector<TraceEvent> trace;
  int fills = 0;
};

// Convolutions on the CPU in full precision → sign unit → buffer → IMAC FC
// layers → ADC → argmax on the CPU. Inputs wider than one buffer are sent in
// several fills; the IMAC holds partial sums until the last one.
class HeteroPipeline {
 public:
  HeteroPipeline(const ConvStack& convs, const ImacNetwork& network, PipelineOptions options = {});

  PipelineRun run(std::span<const float> image) const;
  // Fraction correct; runs are spread over `jobs` threads.
  double accuracy(const Split& test, int jobs = 1) const;

 private:
  const ConvStack* convs_;
  const ImacNetwork* network_;
  PipelineOptions options_;
};

// Label after optional quantization of every score (bin-center dequantize,
// lowest index on ties).
int quantized_label(std::span<const double> scores, const std::optional<AdcParams>& adc);

}  // namespace imac
