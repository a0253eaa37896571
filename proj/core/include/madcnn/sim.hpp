#pragma once

// Synthetic two-joint manipulator with discrete variable stiffness. Each joint
// is a link inertia coupled through a spring of stiffness K_eq(level) to a
// motor that tracks a point-to-point trajectory exactly:
//
//   J * acc = -b * vel + K_eq * (motor_pos - link_pos) + tau_ext
//
// integrated with semi-implicit Euler at 1 kHz. The recorded torque is the
// spring torque, the recorded velocity is the link velocity; collisions are
// half-sine external torque pulses and the label is 1 while a pulse is active.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "madcnn/datapipe.hpp"

namespace madcnn::sim {

struct MotionConfig {
  double max_speed = 1.0;        ///< rad/s; 0 holds the start position
  double max_accel = 4.0;        ///< rad/s^2
  double dwell_min_s = 0.2;
  double dwell_max_s = 1.0;
  double position_limit = 1.5;   ///< targets drawn from [-limit, +limit] rad
};

struct CollisionConfig {
  double rate_per_min = 17.2;
  double peak_torque_min = 1.0;  ///< N*m
  double peak_torque_max = 8.0;  ///< N*m
  int duration_min_ms = 30;
  int duration_max_ms = 80;
  double min_separation_s = 0.5;  ///< onset to onset
  double lead_s = 0.3;            ///< no onset before this time
  double tail_s = 0.3;            ///< quiet time kept after the last pulse
};

/// Equivalent joint stiffness per level, N*m/rad.
inline const std::map<int, double> kStiffnessTable{{1, 6.0}, {2, 50.0}, {3, 160.0}, {4, 246.0}};

struct SimConfig {
  std::array<double, 2> link_inertia{0.02, 0.02};  ///< kg*m^2
  std::array<double, 2> link_damping{0.5, 0.5};    ///< N*m*s/rad
  std::map<int, double> stiffness_table = kStiffnessTable;
  double torque_noise_std = 0.02;    ///< N*m
  double velocity_noise_std = 0.005; ///< rad/s
  MotionConfig motion;
  CollisionConfig collision;

  void validate() const;
  double stiffness(int level) const;
};

struct CollisionEvent {
  int joint_index = 1;  ///< 1 or 2
  std::int64_t start_ms = 0;
  int duration_ms = 0;
  double peak_torque = 0.0;  ///< magnitude, N*m
  int sign = 1;

  std::int64_t end_ms() const { return start_ms + duration_ms - 1; }
  /// External torque at sample k (zero outside the pulse). Sampled at the
  /// middle of each millisecond so the first and last samples are non-zero.
  double torque_at(std::int64_t k) const;
};

struct JointProfile {
  std::vector<double> position;  ///< rad
  std::vector<double> velocity;  ///< rad/s
};

struct Trajectory {
  std::array<JointProfile, data::kJoints> joints;
  std::size_t size() const { return joints[0].position.size(); }
};

std::size_t samples_for(double duration_s);

/// Random trapezoidal point-to-point moves separated by random dwells.
/// Throws ConfigError for negative or inconsistent limits.
Trajectory generate_trajectory(double duration_s, const SimConfig& config, std::uint64_t seed);

/// Poisson count at the configured rate, onsets placed uniformly with
/// rejection of anything closer than min_separation to an accepted onset.
/// Sorted by onset.
std::vector<CollisionEvent> schedule_collisions(double duration_s, const SimConfig& config,
                                                std::uint64_t seed);

/// Levels 2-4 only; level 1 is reserved for the safety configuration.
data::Trace simulate_trace(const SimConfig& config, int stiffness_level,
                           std::span<const CollisionEvent> events, const Trajectory& trajectory,
                           std::uint64_t seed);

// ---------------------------------------------------------------------------
// Corpus with the training/testing layout: 4 min of collisions at level 4 for
// training; 10 min with collisions and 15 min without at each of levels 4, 3
// and 2 for testing. All durations are multiplied by `scale`.

enum class Split { Train, Test };

struct CorpusEntry {
  std::string name;  ///< e.g. "test_collision_L3"; the file is name + ".csv"
  Split split = Split::Test;
  bool has_collisions = true;
  int stiffness_level = 4;
  double duration_s = 0.0;
  std::uint64_t seed = 0;
  data::Trace trace;
};

struct Corpus {
  std::vector<CorpusEntry> entries;

  const CorpusEntry* find(Split split, bool has_collisions, int level) const;
  /// Throws InputError naming the missing split.
  const CorpusEntry& require(Split split, bool has_collisions, int level) const;
};

inline constexpr const char* kCorpusManifest = "corpus_manifest.csv";
inline constexpr std::array<int, 3> kTestLevels{4, 3, 2};

Corpus generate_corpus(const SimConfig& config, std::uint64_t seed, double scale = 1.0);
/// Writes one trace file per entry plus corpus_manifest.csv.
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus read_corpus(const std::filesystem::path& dir);

std::string split_name(Split split);

}  // namespace madcnn::sim
