#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "madcnn/datapipe.hpp"
#include "madcnn/error.hpp"

namespace madcnn::data {

namespace {

void append_real(std::string& line, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  line.append(buf, res.ptr);
}

void append_int(std::string& line, long long v) {
  char buf[24];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  line.append(buf, res.ptr);
}

constexpr std::size_t kColumns = 7;

std::array<std::string_view, kColumns> split_row(std::string_view line, std::size_t line_no) {
  std::array<std::string_view, kColumns> fields;
  std::size_t count = 0;
  std::size_t pos = 0;
  while (true) {
    const std::size_t comma = line.find(',', pos);
    const std::string_view field =
        line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
    if (count == kColumns) throw ParseError("too many fields (expected 7)", line_no);
    fields[count++] = field;
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  if (count != kColumns) {
    throw ParseError("expected 7 fields, found " + std::to_string(count), line_no);
  }
  return fields;
}

double parse_real(std::string_view field, const char* name, std::size_t line_no) {
  double v = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size() || field.empty()) {
    throw ParseError(std::string("malformed ") + name + " value '" + std::string(field) + "'",
                     line_no);
  }
  if (!std::isfinite(v)) throw ParseError(std::string("non-finite ") + name, line_no);
  return v;
}

long long parse_int(std::string_view field, const char* name, std::size_t line_no) {
  long long v = 0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size() || field.empty()) {
    throw ParseError(std::string("malformed ") + name + " value '" + std::string(field) + "'",
                     line_no);
  }
  return v;
}

}  // namespace

void write_trace(const Trace& trace, std::ostream& out) {
  trace.validate();
  out << kTraceHeader << '\n';
  std::string line;
  for (std::size_t t = 0; t < trace.size(); ++t) {
    line.clear();
    append_int(line, static_cast<long long>(t));
    for (std::size_t j = 0; j < kJoints; ++j) {
      line.push_back(',');
      append_real(line, trace.joints[j][t].torque);
      line.push_back(',');
      append_real(line, trace.joints[j][t].velocity);
    }
    line.push_back(',');
    append_int(line, trace.labels[t]);
    line.push_back(',');
    append_int(line, trace.stiffness_level);
    line.push_back('\n');
    out << line;
  }
  if (!out) throw IoError("failed writing trace");
}

void write_trace(const Trace& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_trace(trace, out);
}

Trace read_trace(std::istream& in) {
  Trace trace;
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError("empty trace file", line_no);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kTraceHeader) {
    throw ParseError("bad header, expected '" + std::string(kTraceHeader) + "'", line_no);
  }
  bool have_level = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw ParseError("blank row", line_no);
    }
    const auto f = split_row(line, line_no);
    const long long time_ms = parse_int(f[0], "time_ms", line_no);
    if (time_ms != static_cast<long long>(trace.size())) {
      throw ParseError("time_ms " + std::to_string(time_ms) + " out of sequence (expected " +
                           std::to_string(trace.size()) + ")",
                       line_no);
    }
    for (std::size_t j = 0; j < kJoints; ++j) {
      const double tau = parse_real(f[1 + 2 * j], "torque", line_no);
      const double vel = parse_real(f[2 + 2 * j], "velocity", line_no);
      trace.joints[j].push_back({tau, vel});
    }
    const long long label = parse_int(f[5], "label", line_no);
    if (label != 0 && label != 1) {
      throw ParseError("label must be 0 or 1, got " + std::to_string(label), line_no);
    }
    trace.labels.push_back(static_cast<std::uint8_t>(label));
    const long long level = parse_int(f[6], "stiffness", line_no);
    if (level < 2 || level > 4) {
      throw ParseError("stiffness must be 2, 3 or 4, got " + std::to_string(level), line_no);
    }
    if (have_level && level != trace.stiffness_level) {
      throw FormatError("line " + std::to_string(line_no) +
                        ": stiffness changes within one trace file");
    }
    trace.stiffness_level = static_cast<int>(level);
    have_level = true;
  }
  if (!have_level) throw FormatError("trace file has no samples");
  trace.validate();
  return trace;
}

Trace read_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return read_trace(in);
  } catch (const ParseError& e) {
    throw ParseError::with_context(path.string(), e);
  }
}

}  // namespace madcnn::data
