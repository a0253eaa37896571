#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace madcnn::data {

inline constexpr int kSampleRateHz = 1000;
inline constexpr std::size_t kJoints = 2;
inline constexpr std::size_t kChannelsPerJoint = 2;  // torque, velocity
inline constexpr std::size_t kChannels = kJoints * kChannelsPerJoint;
inline constexpr std::size_t kFrameSteps = 11;
inline constexpr std::size_t kStepStride = 10;  // samples between frame steps
inline constexpr std::size_t kWindowSpan = (kFrameSteps - 1) * kStepStride;  // 100 samples
inline constexpr std::size_t kFrameValues = kJoints * kFrameSteps * kChannelsPerJoint;

struct JointSample {
  double torque = 0.0;    ///< N*m
  double velocity = 0.0;  ///< rad/s

  friend bool operator==(const JointSample&, const JointSample&) = default;
};

/// A labeled 1 kHz recording of both joints.
struct Trace {
  int sample_rate_hz = kSampleRateHz;
  int stiffness_level = 4;
  std::array<std::vector<JointSample>, kJoints> joints;
  std::vector<std::uint8_t> labels;

  std::size_t size() const { return labels.size(); }
  double duration_s() const { return static_cast<double>(size()) / sample_rate_hz; }

  /// Throws FormatError if the sequences disagree in length, a label is not
  /// binary, or the sample rate is not 1 kHz.
  void validate() const;

  friend bool operator==(const Trace&, const Trace&) = default;
};

/// Channel order used everywhere: tau1, vel1, tau2, vel2.
inline constexpr std::size_t channel_index(std::size_t joint, std::size_t channel) {
  return joint * kChannelsPerJoint + channel;
}

double channel_value(const Trace& trace, std::size_t channel, std::size_t t);

struct ChannelRange {
  double min = 0.0;
  double max = 0.0;

  friend bool operator==(const ChannelRange&, const ChannelRange&) = default;
};

struct NormalizationStats {
  std::array<ChannelRange, kChannels> channels{};

  double apply(std::size_t channel, double x) const;

  friend bool operator==(const NormalizationStats&, const NormalizationStats&) = default;
};

/// Per-channel min/max over every sample of the given (training) traces.
NormalizationStats fit_normalizer(std::span<const Trace> traces);

/// (x - min) / (max - min) clamped to [0, 1]; a constant channel maps to 0.
double normalize(double x, const ChannelRange& range);

/// Network input: values[(joint * kFrameSteps + step) * 2 + channel], steps
/// ordered oldest to newest.
struct InputFrame {
  std::array<double, kFrameValues> values{};
  int label = 0;
  std::int64_t source_time_ms = 0;
  int stiffness_level = 0;

  double at(std::size_t joint, std::size_t step, std::size_t channel) const {
    return values[(joint * kFrameSteps + step) * kChannelsPerJoint + channel];
  }
  double& at(std::size_t joint, std::size_t step, std::size_t channel) {
    return values[(joint * kFrameSteps + step) * kChannelsPerJoint + channel];
  }
};

/// Frame ending at sample t: samples t-100, t-90, ..., t of every joint.
/// Throws InputError when t < 100 or t is past the end of the trace.
InputFrame window_frame(const Trace& trace, std::size_t t, const NormalizationStats& stats);
void window_frame_into(const Trace& trace, std::size_t t, const NormalizationStats& stats,
                       InputFrame& frame);

/// One frame per valid t of every trace, then a seeded shuffle.
std::vector<InputFrame> make_dataset(std::span<const Trace> traces,
                                     const NormalizationStats& stats, std::uint64_t seed);

/// Number of frames make_dataset emits for a trace of `samples` samples.
inline std::size_t frames_in(std::size_t samples) {
  return samples > kWindowSpan ? samples - kWindowSpan : 0;
}

// Trace files: CSV with header `time_ms,tau1,vel1,tau2,vel2,label,stiffness`,
// one row per millisecond. Reals are written with 17 significant digits.
inline constexpr const char* kTraceHeader = "time_ms,tau1,vel1,tau2,vel2,label,stiffness";

void write_trace(const Trace& trace, std::ostream& out);
void write_trace(const Trace& trace, const std::filesystem::path& path);
Trace read_trace(std::istream& in);
Trace read_trace(const std::filesystem::path& path);

}  // namespace madcnn::data
