#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "madcnn/error.hpp"
#include "madcnn/evaluator.hpp"

namespace madcnn::eval {
namespace {

std::string round_trip(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

// Levels in table order: highest stiffness first.
std::vector<int> ordered_levels(const std::map<int, DetectionReport>& levels) {
  std::vector<int> out;
  for (const auto& [level, _] : levels) out.push_back(level);
  std::sort(out.rbegin(), out.rend());
  return out;
}

void report_cells(std::ostringstream& os, const DetectionReport& r) {
  os << r.dfn << ',' << r.collisions_total << ',' << format_delay(r.dd_mean()) << ',' << r.fpn;
}

double metric_value(const DetectionReport& r, const std::string& metric) {
  if (metric == "fpn") return static_cast<double>(r.fpn);
  if (metric == "dfn") return static_cast<double>(r.dfn);
  if (metric == "dd_mean_ms") return r.dd_mean();
  throw InputError("unknown plot metric '" + metric + "'");
}

}  // namespace

std::string format_delay(double dd_mean_ms) {
  return std::isnan(dd_mean_ms) ? "nan" : fixed(dd_mean_ms, 4);
}

std::string level_label(int level) { return std::to_string(level); }

std::string eval_table_csv(const std::string& model_label,
                           const std::vector<std::pair<std::int64_t, LevelReports>>& by_cf) {
  std::ostringstream os;
  os << "model,cf_ms,stiffness,dfn,collisions,dd_mean_ms,fpn\n";
  for (const auto& [cf, reports] : by_cf) {
    for (int level : ordered_levels(reports.levels)) {
      os << model_label << ',' << cf << ',' << level_label(level) << ',';
      report_cells(os, reports.levels.at(level));
      os << '\n';
    }
    os << model_label << ',' << cf << ",total,";
    report_cells(os, reports.total);
    os << '\n';
  }
  return os.str();
}

std::string split_reports_csv(std::span<const ScoredTrace> scored,
                              std::span<const std::int64_t> cf_list,
                              const ScoringOptions& options) {
  std::ostringstream os;
  os << "cf_ms,split,stiffness,collisions,dfn,dd_mean_ms,fpn\n";
  for (const std::int64_t cf : cf_list) {
    for (const auto& s : scored) {
      const DetectionReport r = report_for(s, cf, options);
      os << cf << ',' << s.name << ',' << level_label(s.stiffness_level) << ','
         << r.collisions_total << ',' << r.dfn << ',' << format_delay(r.dd_mean()) << ','
         << r.fpn << '\n';
    }
  }
  return os.str();
}

std::string ablation_long_csv(const AblationResult& result) {
  std::ostringstream os;
  os << "variant,stiffness,dfn,collisions,dd_mean_ms,fpn\n";
  for (const auto& v : result.variants) {
    for (int level : ordered_levels(v.reports.levels)) {
      os << v.variant << ',' << level_label(level) << ',';
      report_cells(os, v.reports.levels.at(level));
      os << '\n';
    }
    os << v.variant << ",total,";
    report_cells(os, v.reports.total);
    os << '\n';
  }
  return os.str();
}

std::string ablation_table_csv(const AblationResult& result) {
  std::ostringstream os;
  os << "stiffness,metric";
  for (const auto& v : result.variants) os << ',' << variant_label(variant_config(v.variant));
  os << '\n';

  std::vector<int> levels;
  if (!result.variants.empty()) levels = ordered_levels(result.variants.front().reports.levels);
  std::vector<std::string> row_keys;
  for (int level : levels) row_keys.push_back(level_label(level));
  row_keys.push_back("total");

  for (std::size_t k = 0; k < row_keys.size(); ++k) {
    const auto pick = [&](const VariantResult& v) -> const DetectionReport& {
      return k < levels.size() ? v.reports.levels.at(levels[k]) : v.reports.total;
    };
    os << row_keys[k] << ",DFn";
    for (const auto& v : result.variants) {
      os << ',' << pick(v).dfn << '/' << pick(v).collisions_total;
    }
    os << '\n' << row_keys[k] << ",DD";
    for (const auto& v : result.variants) os << ',' << format_delay(pick(v).dd_mean());
    os << '\n' << row_keys[k] << ",FPn";
    for (const auto& v : result.variants) os << ',' << pick(v).fpn;
    os << '\n';
  }
  return os.str();
}

std::string cf_sweep_csv(std::span<const CfSweepRow> rows) {
  std::ostringstream os;
  os << "cf_ms,collisions,dfn,dd_mean_ms,fpn\n";
  for (const auto& row : rows) {
    const auto& r = row.report;
    os << row.cf_duration_ms << ',' << r.collisions_total << ',' << r.dfn << ','
       << format_delay(r.dd_mean()) << ',' << r.fpn << '\n';
  }
  return os.str();
}

std::string plot_series(std::span<const CfSweepRow> rows, const std::string& metric) {
  std::ostringstream os;
  os << "# cf_ms " << metric << '\n';
  for (const auto& row : rows) {
    os << row.cf_duration_ms << ' ' << round_trip(metric_value(row.report, metric)) << '\n';
  }
  return os.str();
}

std::vector<std::pair<double, double>> parse_plot_series(const std::string& text) {
  std::vector<std::pair<double, double>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto space = line.find(' ');
    if (space == std::string::npos) throw ParseError("expected two columns", line_no);
    const auto parse = [&](std::string_view field) {
      if (field == "nan") return std::nan("");
      double v = 0.0;
      const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
      if (res.ec != std::errc{} || res.ptr != field.data() + field.size()) {
        throw ParseError("bad number '" + std::string(field) + "'", line_no);
      }
      return v;
    };
    const std::string_view view(line);
    out.emplace_back(parse(view.substr(0, space)), parse(view.substr(space + 1)));
  }
  return out;
}

std::string cf_sweep_svg(std::span<const CfSweepRow> rows) {
  constexpr double kPanelW = 300, kPanelH = 200, kPad = 40;
  const std::array<std::pair<const char*, const char*>, 3> series{
      {{"fpn", "FPn"}, {"dfn", "DFn"}, {"dd_mean_ms", "DD (ms)"}}};
  std::ostringstream os;
  const double width = series.size() * (kPanelW + kPad) + kPad;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
     << kPanelH + 2 * kPad << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  double max_x = 1.0;
  for (const auto& r : rows) max_x = std::max(max_x, static_cast<double>(r.cf_duration_ms));

  for (std::size_t p = 0; p < series.size(); ++p) {
    const double x0 = kPad + p * (kPanelW + kPad), y0 = kPad;
    double max_y = 0.0;
    for (const auto& r : rows) {
      const double v = metric_value(r.report, series[p].first);
      if (std::isfinite(v)) max_y = std::max(max_y, v);
    }
    if (max_y <= 0.0) max_y = 1.0;
    os << "<g>\n<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << kPanelW
       << "\" height=\"" << kPanelH << "\" fill=\"none\" stroke=\"#888\"/>\n";
    os << "<text x=\"" << x0 + kPanelW / 2 << "\" y=\"" << y0 - 8
       << "\" text-anchor=\"middle\">" << series[p].second << " vs CF (ms)</text>\n";
    os << "<text x=\"" << x0 - 4 << "\" y=\"" << y0 + 10 << "\" text-anchor=\"end\">"
       << fixed(max_y, 1) << "</text>\n";
    os << "<text x=\"" << x0 + kPanelW << "\" y=\"" << y0 + kPanelH + 14
       << "\" text-anchor=\"end\">" << max_x << "</text>\n";
    os << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (const auto& r : rows) {
      const double v = metric_value(r.report, series[p].first);
      if (!std::isfinite(v)) continue;
      const double px = x0 + kPanelW * static_cast<double>(r.cf_duration_ms) / max_x;
      const double py = y0 + kPanelH * (1.0 - v / max_y);
      os << (first ? "" : " ") << fixed(px, 2) << ',' << fixed(py, 2);
      first = false;
    }
    os << "\"/>\n</g>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace madcnn::eval
