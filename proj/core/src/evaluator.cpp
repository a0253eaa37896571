#include "madcnn/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "madcnn/error.hpp"

namespace madcnn::eval {

double DetectionReport::dd_mean() const {
  if (dd_values.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(dd_values.begin(), dd_values.end(), 0.0) /
         static_cast<double>(dd_values.size());
}

DetectionReport& DetectionReport::operator+=(const DetectionReport& other) {
  collisions_total += other.collisions_total;
  dfn += other.dfn;
  fpn += other.fpn;
  dd_values.insert(dd_values.end(), other.dd_values.begin(), other.dd_values.end());
  return *this;
}

// ---------------------------------------------------------------------------

Decisions run_inference(const ModelParameters& params, const data::Trace& trace,
                        const data::NormalizationStats& stats, double threshold) {
  if (trace.size() <= data::kWindowSpan) {
    throw InputError("run_inference: trace needs at least 101 samples, has " +
                     std::to_string(trace.size()));
  }
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw InputError("run_inference: threshold must lie in (0, 1)");
  }
  trace.validate();
  Decisions out(trace.size(), 0);
  data::InputFrame frame;
  ActivationCache cache;
  for (std::size_t t = data::kWindowSpan; t < trace.size(); ++t) {
    data::window_frame_into(trace, t, stats, frame);
    out[t] = static_cast<std::uint8_t>(decide(forward(params, frame, cache).p_collision, threshold));
  }
  return out;
}

Decisions continuous_filter(std::span<const std::uint8_t> raw, std::int64_t duration_ms) {
  if (duration_ms < 0) throw InputError("continuous_filter: duration must be non-negative");
  const auto needed = static_cast<std::size_t>(duration_ms) + 1;
  Decisions out(raw.size(), 0);
  std::size_t run = 0;
  for (std::size_t t = 0; t < raw.size(); ++t) {
    run = raw[t] ? run + 1 : 0;
    out[t] = run >= needed ? 1 : 0;
  }
  return out;
}

std::vector<CollisionInterval> extract_intervals(std::span<const std::uint8_t> labels) {
  std::vector<CollisionInterval> out;
  std::size_t t = 0;
  while (t < labels.size()) {
    if (!labels[t]) {
      ++t;
      continue;
    }
    const std::size_t start = t;
    while (t < labels.size() && labels[t]) ++t;
    out.push_back({static_cast<std::int64_t>(start), static_cast<std::int64_t>(t - 1)});
  }
  return out;
}

DetectionReport compute_report(std::span<const std::uint8_t> decisions,
                               std::span<const std::uint8_t> labels,
                               const ScoringOptions& options) {
  if (decisions.size() != labels.size()) {
    throw ShapeError("compute_report: decisions and labels differ in length");
  }
  if (options.detect_window_ms < 0 || options.merge_gap_ms < 0) {
    throw InputError("compute_report: window and merge gap must be non-negative");
  }
  const auto n = static_cast<std::int64_t>(decisions.size());
  const auto intervals = extract_intervals(labels);

  DetectionReport report;
  report.collisions_total = intervals.size();
  std::vector<std::uint8_t> claimed(decisions.size(), 0);
  for (const auto& iv : intervals) {
    const std::int64_t window_end = std::min(n - 1, iv.start + options.detect_window_ms);
    std::int64_t first = -1;
    for (std::int64_t t = iv.start; t <= window_end; ++t) {
      if (decisions[static_cast<std::size_t>(t)]) {
        first = t;
        break;
      }
    }
    if (first >= 0) {
      report.dd_values.push_back(static_cast<double>(first - iv.start));
    } else {
      ++report.dfn;
    }
    const std::int64_t zone_end = std::min(n - 1, std::max(iv.end, iv.start + options.detect_window_ms));
    std::fill(claimed.begin() + iv.start, claimed.begin() + zone_end + 1, std::uint8_t{1});
  }

  bool open = false;
  std::int64_t anchor_end = 0;
  std::int64_t t = 0;
  while (t < n) {
    const auto i = static_cast<std::size_t>(t);
    if (!decisions[i] || claimed[i]) {
      ++t;
      continue;
    }
    while (t < n && decisions[static_cast<std::size_t>(t)] && !claimed[static_cast<std::size_t>(t)]) ++t;
    const std::int64_t seg_end = t - 1;
    if (!open || seg_end - anchor_end >= options.merge_gap_ms) {
      ++report.fpn;
      anchor_end = seg_end;
      open = true;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------

ScoredTrace score_trace(const ModelParameters& params, const sim::CorpusEntry& entry,
                        const data::NormalizationStats& stats, double threshold) {
  ScoredTrace s;
  s.name = entry.name;
  s.has_collisions = entry.has_collisions;
  s.stiffness_level = entry.stiffness_level;
  s.raw = run_inference(params, entry.trace, stats, threshold);
  s.labels = entry.trace.labels;
  return s;
}

std::vector<ScoredTrace> score_test_splits(const ModelParameters& params, const sim::Corpus& corpus,
                                           const data::NormalizationStats& stats,
                                           double threshold) {
  // Check every split up front so a missing one fails before any inference.
  std::vector<const sim::CorpusEntry*> entries;
  for (bool collisions : {true, false}) {
    for (int level : sim::kTestLevels) {
      entries.push_back(&corpus.require(sim::Split::Test, collisions, level));
    }
  }
  std::vector<ScoredTrace> out;
  for (const auto* e : entries) out.push_back(score_trace(params, *e, stats, threshold));
  return out;
}

DetectionReport report_for(const ScoredTrace& scored, std::int64_t cf_ms,
                           const ScoringOptions& options) {
  const Decisions filtered = continuous_filter(scored.raw, cf_ms);
  return compute_report(filtered, scored.labels, options);
}

LevelReports level_reports(std::span<const ScoredTrace> scored, std::int64_t cf_ms,
                           const ScoringOptions& options) {
  LevelReports out;
  for (const auto& s : scored) {
    const DetectionReport r = report_for(s, cf_ms, options);
    out.levels[s.stiffness_level] += r;
    out.total += r;
  }
  return out;
}

std::vector<std::int64_t> default_cf_durations() {
  std::vector<std::int64_t> d(28);
  std::iota(d.begin(), d.end(), std::int64_t{0});
  return d;
}

std::vector<CfSweepRow> cf_sweep(std::span<const ScoredTrace> scored,
                                 std::span<const std::int64_t> durations,
                                 const ScoringOptions& options) {
  std::vector<CfSweepRow> rows;
  for (const std::int64_t d : durations) {
    CfSweepRow row;
    row.cf_duration_ms = d;
    for (const auto& s : scored) row.report += report_for(s, d, options);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<CfSweepRow> cf_sweep(const ModelParameters& params, std::span<const data::Trace> traces,
                                 const data::NormalizationStats& stats,
                                 std::span<const std::int64_t> durations,
                                 const ScoringOptions& options, double threshold) {
  std::vector<ScoredTrace> scored;
  for (const auto& trace : traces) {
    ScoredTrace s;
    s.stiffness_level = trace.stiffness_level;
    s.raw = run_inference(params, trace, stats, threshold);
    s.labels = trace.labels;
    scored.push_back(std::move(s));
  }
  return cf_sweep(scored, durations, options);
}

AblationResult ablation_run(std::span<const std::string> variants, const sim::Corpus& corpus,
                            const TrainConfig& tc, const ScoringOptions& options, double threshold,
                            const EpochCallback& on_epoch) {
  if (variants.empty()) throw InputError("ablation_run: no variants requested");
  std::vector<ModelConfig> configs;
  for (const auto& name : variants) configs.push_back(variant_config(name));

  const sim::CorpusEntry& train_entry = corpus.require(sim::Split::Train, true, 4);
  for (bool collisions : {true, false}) {
    for (int level : sim::kTestLevels) corpus.require(sim::Split::Test, collisions, level);
  }

  AblationResult result;
  const std::vector<data::Trace> train_traces{train_entry.trace};
  result.stats = data::fit_normalizer(train_traces);
  const auto frames = data::make_dataset(train_traces, result.stats, tc.seed);

  for (std::size_t v = 0; v < configs.size(); ++v) {
    TrainResult trained = train(configs[v], frames, tc, on_epoch);
    const auto scored = score_test_splits(trained.params, corpus, result.stats, threshold);
    VariantResult vr;
    vr.variant = variant_name(configs[v]);
    vr.params = std::move(trained.params);
    vr.loss_history = std::move(trained.loss_history);
    vr.reports = level_reports(scored, 0, options);
    result.variants.push_back(std::move(vr));
  }
  return result;
}

}  // namespace madcnn::eval
