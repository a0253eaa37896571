#include "madcnn/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "madcnn/error.hpp"
#include "madcnn/random.hpp"

namespace madcnn::sim {

void SimConfig::validate() const {
  for (std::size_t j = 0; j < data::kJoints; ++j) {
    if (!(link_inertia[j] > 0.0)) throw ConfigError("link inertia must be positive");
    if (!(link_damping[j] > 0.0)) throw ConfigError("link damping must be positive");
  }
  if (stiffness_table != kStiffnessTable) {
    throw ConfigError("stiffness table must be {1: 6, 2: 50, 3: 160, 4: 246} N*m/rad");
  }
  if (!(torque_noise_std >= 0.0) || !(velocity_noise_std >= 0.0)) {
    throw ConfigError("noise standard deviations must be non-negative");
  }
  const CollisionConfig& c = collision;
  if (!(c.rate_per_min >= 0.0)) throw ConfigError("collision rate must be non-negative");
  if (!(c.peak_torque_min > 0.0) || !(c.peak_torque_max >= c.peak_torque_min)) {
    throw ConfigError("collision peak torque range is invalid");
  }
  if (c.duration_min_ms < 20 || c.duration_max_ms > 120 || c.duration_min_ms > c.duration_max_ms) {
    throw ConfigError("collision durations must satisfy 20 <= min <= max <= 120 ms");
  }
  if (!(c.min_separation_s * 1000.0 >= c.duration_max_ms)) {
    throw ConfigError("collision min separation must be at least the maximum duration");
  }
  if (!(c.lead_s >= 0.0) || !(c.tail_s >= 0.0)) {
    throw ConfigError("collision lead/tail times must be non-negative");
  }
}

double SimConfig::stiffness(int level) const {
  const auto it = stiffness_table.find(level);
  if (it == stiffness_table.end()) {
    throw ConfigError("unknown stiffness level " + std::to_string(level));
  }
  return it->second;
}

double CollisionEvent::torque_at(std::int64_t k) const {
  if (k < start_ms || k > end_ms()) return 0.0;
  const double phase = (static_cast<double>(k - start_ms) + 0.5) / duration_ms;
  return sign * peak_torque * std::sin(std::numbers::pi * phase);
}

std::size_t samples_for(double duration_s) {
  if (!(duration_s > 0.0)) throw ConfigError("duration must be positive");
  return static_cast<std::size_t>(std::llround(duration_s * data::kSampleRateHz));
}

// ---------------------------------------------------------------------------

namespace {

// One trapezoidal (or triangular) move, or a dwell when distance == 0.
struct Segment {
  double t0 = 0.0;
  double duration = 0.0;
  double p0 = 0.0;
  double direction = 0.0;
  double accel = 0.0;
  double v_peak = 0.0;
  double t_accel = 0.0;
  double t_cruise = 0.0;
  double p1 = 0.0;

  void evaluate(double t, double& pos, double& vel) const {
    const double tau = t - t0;
    if (direction == 0.0) {
      pos = p0;
      vel = 0.0;
    } else if (tau < t_accel) {
      pos = p0 + direction * 0.5 * accel * tau * tau;
      vel = direction * accel * tau;
    } else if (tau < t_accel + t_cruise) {
      pos = p0 + direction * (0.5 * accel * t_accel * t_accel + v_peak * (tau - t_accel));
      vel = direction * v_peak;
    } else if (tau < duration) {
      const double rem = duration - tau;
      pos = p1 - direction * 0.5 * accel * rem * rem;
      vel = direction * accel * rem;
    } else {
      pos = p1;
      vel = 0.0;
    }
  }
};

Segment make_move(double t0, double from, double to, double vmax, double amax) {
  Segment s;
  s.t0 = t0;
  s.p0 = from;
  s.p1 = to;
  const double distance = std::abs(to - from);
  if (distance == 0.0) return s;
  s.direction = to > from ? 1.0 : -1.0;
  s.accel = amax;
  if (distance < vmax * vmax / amax) {
    s.v_peak = std::sqrt(distance * amax);
    s.t_accel = s.v_peak / amax;
    s.t_cruise = 0.0;
  } else {
    s.v_peak = vmax;
    s.t_accel = vmax / amax;
    s.t_cruise = (distance - vmax * vmax / amax) / vmax;
  }
  s.duration = 2.0 * s.t_accel + s.t_cruise;
  return s;
}

}  // namespace

Trajectory generate_trajectory(double duration_s, const SimConfig& config, std::uint64_t seed) {
  const MotionConfig& m = config.motion;
  if (!(m.max_speed >= 0.0)) throw ConfigError("max joint speed must be non-negative");
  if (m.max_speed > 0.0 && !(m.max_accel > 0.0)) {
    throw ConfigError("max joint acceleration must be positive when the joint may move");
  }
  if (!(m.dwell_min_s >= 0.0) || !(m.dwell_max_s >= m.dwell_min_s)) {
    throw ConfigError("dwell range is invalid");
  }
  if (!(m.position_limit > 0.0)) throw ConfigError("position limit must be positive");

  const std::size_t n = samples_for(duration_s);
  const double dt = 1.0 / data::kSampleRateHz;
  Trajectory traj;
  for (std::size_t j = 0; j < data::kJoints; ++j) {
    Rng rng(derive_seed(seed, j));
    JointProfile& prof = traj.joints[j];
    prof.position.resize(n);
    prof.velocity.resize(n);

    double pos = 0.0;
    double t = 0.0;
    Segment current;  // initial dwell
    current.t0 = 0.0;
    current.duration = rng.uniform(m.dwell_min_s, m.dwell_max_s);
    bool dwelling = true;
    for (std::size_t k = 0; k < n; ++k) {
      t = static_cast<double>(k) * dt;
      while (t >= current.t0 + current.duration && m.max_speed > 0.0) {
        const double t_next = current.t0 + current.duration;
        if (dwelling) {
          const double target = rng.uniform(-m.position_limit, m.position_limit);
          current = make_move(t_next, pos, target, m.max_speed, m.max_accel);
          pos = target;
        } else {
          current = Segment{};
          current.t0 = t_next;
          current.p0 = pos;
          current.duration = rng.uniform(m.dwell_min_s, m.dwell_max_s);
        }
        dwelling = !dwelling;
      }
      current.evaluate(t, prof.position[k], prof.velocity[k]);
    }
  }
  return traj;
}

// ---------------------------------------------------------------------------

std::vector<CollisionEvent> schedule_collisions(double duration_s, const SimConfig& config,
                                                std::uint64_t seed) {
  config.validate();
  const std::size_t n = samples_for(duration_s);
  const CollisionConfig& c = config.collision;
  std::vector<CollisionEvent> events;
  if (c.rate_per_min == 0.0) return events;

  Rng rng(seed);
  // Poisson count: arrivals of a unit-rate process before the expected count.
  const double expected = c.rate_per_min * duration_s / 60.0;
  std::size_t count = 0;
  for (double acc = rng.exponential(1.0); acc < expected; acc += rng.exponential(1.0)) ++count;

  const auto lead = static_cast<std::int64_t>(std::llround(c.lead_s * 1000.0));
  const auto tail = static_cast<std::int64_t>(std::llround(c.tail_s * 1000.0));
  const std::int64_t last_onset = static_cast<std::int64_t>(n) - c.duration_max_ms - tail;
  if (last_onset < lead) return events;
  const auto separation = static_cast<std::int64_t>(std::llround(c.min_separation_s * 1000.0));
  const auto span = static_cast<std::uint64_t>(last_onset - lead + 1);

  constexpr int kMaxAttempts = 10000;
  for (std::size_t e = 0; e < count; ++e) {
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
      const std::int64_t onset = lead + static_cast<std::int64_t>(rng.index(span));
      const bool clear = std::all_of(events.begin(), events.end(), [&](const CollisionEvent& o) {
        return std::abs(o.start_ms - onset) >= separation;
      });
      if (!clear) continue;
      CollisionEvent ev;
      ev.start_ms = onset;
      ev.joint_index = rng.uniform() < 0.5 ? 1 : 2;
      ev.duration_ms =
          c.duration_min_ms +
          static_cast<int>(rng.index(static_cast<std::uint64_t>(c.duration_max_ms - c.duration_min_ms + 1)));
      ev.peak_torque = rng.uniform(c.peak_torque_min, c.peak_torque_max);
      ev.sign = rng.uniform() < 0.5 ? -1 : 1;
      events.push_back(ev);
      break;
    }
  }
  std::sort(events.begin(), events.end(),
            [](const CollisionEvent& a, const CollisionEvent& b) { return a.start_ms < b.start_ms; });
  return events;
}

// ---------------------------------------------------------------------------

data::Trace simulate_trace(const SimConfig& config, int stiffness_level,
                           std::span<const CollisionEvent> events, const Trajectory& trajectory,
                           std::uint64_t seed) {
  config.validate();
  if (stiffness_level < 2 || stiffness_level > 4) {
    throw ConfigError("data traces use stiffness levels 2-4 (level 1 is the safety setting), got " +
                      std::to_string(stiffness_level));
  }
  const std::size_t n = trajectory.size();
  if (n == 0) throw ConfigError("trajectory is empty");
  for (const auto& ev : events) {
    if (ev.joint_index < 1 || ev.joint_index > 2 || ev.duration_ms <= 0) {
      throw ConfigError("malformed collision event");
    }
  }

  const double stiffness = config.stiffness(stiffness_level);
  const double dt = 1.0 / data::kSampleRateHz;
  Rng noise(seed);

  data::Trace trace;
  trace.stiffness_level = stiffness_level;
  trace.labels.assign(n, 0);
  for (const auto& ev : events) {
    const std::int64_t last = std::min<std::int64_t>(ev.end_ms(), static_cast<std::int64_t>(n) - 1);
    for (std::int64_t k = std::max<std::int64_t>(ev.start_ms, 0); k <= last; ++k) {
      trace.labels[static_cast<std::size_t>(k)] = 1;
    }
  }

  std::array<std::vector<double>, data::kJoints> tau_ext;
  for (std::size_t j = 0; j < data::kJoints; ++j) {
    tau_ext[j].assign(n, 0.0);
    trace.joints[j].resize(n);
  }
  for (const auto& ev : events) {
    auto& ext = tau_ext[static_cast<std::size_t>(ev.joint_index - 1)];
    const std::int64_t last = std::min<std::int64_t>(ev.end_ms(), static_cast<std::int64_t>(n) - 1);
    for (std::int64_t k = std::max<std::int64_t>(ev.start_ms, 0); k <= last; ++k) {
      ext[static_cast<std::size_t>(k)] += ev.torque_at(k);
    }
  }

  constexpr double kDivergenceLimit = 1e3;
  std::array<double, data::kJoints> link_pos{};
  std::array<double, data::kJoints> link_vel{};
  for (std::size_t j = 0; j < data::kJoints; ++j) {
    link_pos[j] = trajectory.joints[j].position[0];
    link_vel[j] = trajectory.joints[j].velocity[0];
  }
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t j = 0; j < data::kJoints; ++j) {
      const double motor = trajectory.joints[j].position[k];
      const double spring = stiffness * (motor - link_pos[j]);
      const double acc =
          (-config.link_damping[j] * link_vel[j] + spring + tau_ext[j][k]) / config.link_inertia[j];
      link_vel[j] += dt * acc;
      link_pos[j] += dt * link_vel[j];
      if (!std::isfinite(link_pos[j]) || std::abs(link_pos[j]) > kDivergenceLimit ||
          std::abs(link_vel[j]) > kDivergenceLimit) {
        throw SimulationError("joint " + std::to_string(j + 1) + " diverged at sample " +
                              std::to_string(k));
      }
      double torque = stiffness * (motor - link_pos[j]);
      double velocity = link_vel[j];
      if (config.torque_noise_std > 0.0) torque += config.torque_noise_std * noise.normal();
      if (config.velocity_noise_std > 0.0) velocity += config.velocity_noise_std * noise.normal();
      trace.joints[j][k] = {torque, velocity};
    }
  }
  return trace;
}

}  // namespace madcnn::sim
