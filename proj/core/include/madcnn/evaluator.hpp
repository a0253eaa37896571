#pragma once

// Event-based scoring of per-millisecond collision decisions.
//
// For every ground-truth collision [s, e]:
//   * it is detected when some decision in [s, s + detect_window] is 1, and
//     its delay (DD) is the offset of the first such decision;
//   * otherwise it counts as a detection failure (DFn).
// Samples in [s, max(e, s + detect_window)] belong to that collision and are
// never false positives. The remaining positive samples form false-positive
// segments; a segment ending less than merge_gap ms after the end of the
// segment that opened the current event is folded into that event. FPn is the
// number of events.
//
// The continuous filter only ever deletes positive samples and keeps the end
// of every surviving run, so FPn can only fall and DFn/DD can only grow as
// the filter gets longer.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "madcnn/datapipe.hpp"
#include "madcnn/model.hpp"
#include "madcnn/sim.hpp"
#include "madcnn/trainer.hpp"

namespace madcnn::eval {

using Decisions = std::vector<std::uint8_t>;

struct CollisionInterval {
  std::int64_t start = 0;  ///< ms
  std::int64_t end = 0;    ///< ms, inclusive

  friend bool operator==(const CollisionInterval&, const CollisionInterval&) = default;
};

struct DetectionReport {
  std::size_t collisions_total = 0;
  std::size_t dfn = 0;
  std::vector<double> dd_values;  ///< ms, one per detected collision in onset order
  std::size_t fpn = 0;

  std::size_t detected() const { return dd_values.size(); }
  /// NaN when nothing was detected.
  double dd_mean() const;

  DetectionReport& operator+=(const DetectionReport& other);
  friend bool operator==(const DetectionReport&, const DetectionReport&) = default;
};

struct ScoringOptions {
  std::int64_t detect_window_ms = 300;
  std::int64_t merge_gap_ms = 10;
};

/// Decision for every sample; samples before the first full window are 0.
/// Throws InputError when the trace has fewer than 101 samples or the
/// threshold is outside (0, 1).
Decisions run_inference(const ModelParameters& params, const data::Trace& trace,
                        const data::NormalizationStats& stats, double threshold = 0.5);

/// out[t] = 1 iff raw[t - duration_ms .. t] are all 1 (duration 0 = identity).
Decisions continuous_filter(std::span<const std::uint8_t> raw, std::int64_t duration_ms);

/// Maximal runs of ones.
std::vector<CollisionInterval> extract_intervals(std::span<const std::uint8_t> labels);

/// Throws ShapeError if the sequences differ in length.
DetectionReport compute_report(std::span<const std::uint8_t> decisions,
                               std::span<const std::uint8_t> labels,
                               const ScoringOptions& options = {});

/// Raw (unfiltered) decisions of one test trace.
struct ScoredTrace {
  std::string name;
  bool has_collisions = true;
  int stiffness_level = 4;
  Decisions raw;
  Decisions labels;
};

ScoredTrace score_trace(const ModelParameters& params, const sim::CorpusEntry& entry,
                        const data::NormalizationStats& stats, double threshold = 0.5);

/// Inference over the six test splits (collision and collision-free at each
/// test level). Throws InputError if one is missing.
std::vector<ScoredTrace> score_test_splits(const ModelParameters& params, const sim::Corpus& corpus,
                                           const data::NormalizationStats& stats,
                                           double threshold = 0.5);

DetectionReport report_for(const ScoredTrace& scored, std::int64_t cf_ms,
                           const ScoringOptions& options = {});

/// Per-level sums (collision + collision-free split) and their total.
struct LevelReports {
  std::map<int, DetectionReport> levels;
  DetectionReport total;
};

LevelReports level_reports(std::span<const ScoredTrace> scored, std::int64_t cf_ms,
                           const ScoringOptions& options = {});

struct CfSweepRow {
  std::int64_t cf_duration_ms = 0;
  DetectionReport report;  ///< summed over all traces
};

std::vector<std::int64_t> default_cf_durations();  ///< 0..27 ms

std::vector<CfSweepRow> cf_sweep(std::span<const ScoredTrace> scored,
                                 std::span<const std::int64_t> durations,
                                 const ScoringOptions& options = {});
/// Runs inference once per trace, then re-filters per duration.
std::vector<CfSweepRow> cf_sweep(const ModelParameters& params, std::span<const data::Trace> traces,
                                 const data::NormalizationStats& stats,
                                 std::span<const std::int64_t> durations,
                                 const ScoringOptions& options = {}, double threshold = 0.5);

struct VariantResult {
  std::string variant;  ///< short name, e.g. "MAD"
  ModelParameters params;
  std::vector<double> loss_history;
  LevelReports reports;  ///< at CF 0
};

struct AblationResult {
  data::NormalizationStats stats;
  std::vector<VariantResult> variants;
};

/// Trains every named variant on the level-4 training split with the same
/// frames and seeds, then scores each on all six test splits.
AblationResult ablation_run(std::span<const std::string> variants, const sim::Corpus& corpus,
                            const TrainConfig& tc, const ScoringOptions& options = {},
                            double threshold = 0.5, const EpochCallback& on_epoch = {});

// ---------------------------------------------------------------------------
// Report documents (CSV). Delays are printed with 4 decimals, "nan" when no
// collision was detected.

std::string format_delay(double dd_mean_ms);
std::string level_label(int level);  ///< "4", "3", "2"

/// `model,cf_ms,stiffness,dfn,collisions,dd_mean_ms,fpn`; rows per level then total.
std::string eval_table_csv(const std::string& model_label,
                           const std::vector<std::pair<std::int64_t, LevelReports>>& by_cf);
/// `cf_ms,split,stiffness,collisions,dfn,dd_mean_ms,fpn`; one row per trace.
std::string split_reports_csv(std::span<const ScoredTrace> scored,
                              std::span<const std::int64_t> cf_list,
                              const ScoringOptions& options = {});
/// `variant,stiffness,dfn,collisions,dd_mean_ms,fpn`.
std::string ablation_long_csv(const AblationResult& result);
/// `stiffness,metric,<variant labels...>` with DFn cells as "failures/total".
std::string ablation_table_csv(const AblationResult& result);
/// `cf_ms,collisions,dfn,dd_mean_ms,fpn`.
std::string cf_sweep_csv(std::span<const CfSweepRow> rows);

/// Two-column whitespace series for plotting: "# cf_ms <metric>" header,
/// values in round-trip precision. metric is "fpn", "dfn" or "dd_mean_ms".
std::string plot_series(std::span<const CfSweepRow> rows, const std::string& metric);
/// Parses plot_series output back into (x, y) pairs.
std::vector<std::pair<double, double>> parse_plot_series(const std::string& text);
/// Minimal SVG line chart of the three sweep series.
std::string cf_sweep_svg(std::span<const CfSweepRow> rows);

}  // namespace madcnn::eval
