#include "madcnn/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "madcnn/error.hpp"
#include "madcnn/random.hpp"

namespace madcnn::data {

void Trace::validate() const {
  if (sample_rate_hz != kSampleRateHz) {
    throw FormatError("trace sample rate must be 1000 Hz, got " + std::to_string(sample_rate_hz));
  }
  for (const auto& joint : joints) {
    if (joint.size() != labels.size()) {
      throw FormatError("trace joint sequence length " + std::to_string(joint.size()) +
                        " differs from label length " + std::to_string(labels.size()));
    }
  }
  for (auto label : labels) {
    if (label > 1) throw FormatError("trace label must be 0 or 1");
  }
}

double channel_value(const Trace& trace, std::size_t channel, std::size_t t) {
  const JointSample& s = trace.joints[channel / kChannelsPerJoint][t];
  return channel % kChannelsPerJoint == 0 ? s.torque : s.velocity;
}

NormalizationStats fit_normalizer(std::span<const Trace> traces) {
  if (traces.empty()) throw InputError("fit_normalizer: no traces");
  NormalizationStats stats;
  for (auto& r : stats.channels) {
    r.min = std::numeric_limits<double>::infinity();
    r.max = -std::numeric_limits<double>::infinity();
  }
  std::size_t samples = 0;
  for (const Trace& trace : traces) {
    trace.validate();
    samples += trace.size();
    for (std::size_t c = 0; c < kChannels; ++c) {
      for (std::size_t t = 0; t < trace.size(); ++t) {
        const double v = channel_value(trace, c, t);
        stats.channels[c].min = std::min(stats.channels[c].min, v);
        stats.channels[c].max = std::max(stats.channels[c].max, v);
      }
    }
  }
  if (samples == 0) throw InputError("fit_normalizer: traces contain no samples");
  return stats;
}

double normalize(double x, const ChannelRange& range) {
  const double span = range.max - range.min;
  if (!(span > 0.0)) return 0.0;
  return std::clamp((x - range.min) / span, 0.0, 1.0);
}

double NormalizationStats::apply(std::size_t channel, double x) const {
  return normalize(x, channels[channel]);
}

void window_frame_into(const Trace& trace, std::size_t t, const NormalizationStats& stats,
                       InputFrame& frame) {
  if (t < kWindowSpan) {
    throw InputError("window_frame: t = " + std::to_string(t) + " needs 100 past samples");
  }
  if (t >= trace.size()) {
    throw InputError("window_frame: t = " + std::to_string(t) + " is past the trace end");
  }
  const std::size_t first = t - kWindowSpan;
  for (std::size_t j = 0; j < kJoints; ++j) {
    const auto& seq = trace.joints[j];
    const ChannelRange& tau = stats.channels[channel_index(j, 0)];
    const ChannelRange& vel = stats.channels[channel_index(j, 1)];
    for (std::size_t s = 0; s < kFrameSteps; ++s) {
      const JointSample& sample = seq[first + s * kStepStride];
      frame.at(j, s, 0) = normalize(sample.torque, tau);
      frame.at(j, s, 1) = normalize(sample.velocity, vel);
    }
  }
  frame.label = trace.labels[t];
  frame.source_time_ms = static_cast<std::int64_t>(t);
  frame.stiffness_level = trace.stiffness_level;
}

InputFrame window_frame(const Trace& trace, std::size_t t, const NormalizationStats& stats) {
  InputFrame frame;
  window_frame_into(trace, t, stats, frame);
  return frame;
}

std::vector<InputFrame> make_dataset(std::span<const Trace> traces,
                                     const NormalizationStats& stats, std::uint64_t seed) {
  std::size_t total = 0;
  for (const Trace& trace : traces) total += frames_in(trace.size());
  std::vector<InputFrame> frames;
  frames.reserve(total);
  for (const Trace& trace : traces) {
    trace.validate();
    for (std::size_t t = kWindowSpan; t < trace.size(); ++t) {
      frames.push_back(window_frame(trace, t, stats));
    }
  }
  Rng rng(seed);
  rng.shuffle(std::span<InputFrame>(frames));
  return frames;
}

}  // namespace madcnn::data
