#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "cli.hpp"
#include "madcnn/error.hpp"

namespace madcnn::cli {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

template <typename T>
T parse_number(const std::string& text) {
  T v{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    throw ConfigError("'" + text + "' is not a valid number");
  }
  return v;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(trim(item));
  return out;
}

std::string real(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

struct Key {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Field>
Key double_key(Field field) {
  return {[field](RunConfig& c, const std::string& v) { field(c) = parse_number<double>(v); },
          [field](const RunConfig& c) { return real(field(c)); }};
}

template <typename Int, typename Field>
Key int_key(Field field) {
  return {[field](RunConfig& c, const std::string& v) { field(c) = parse_number<Int>(v); },
          [field](const RunConfig& c) { return std::to_string(field(c)); }};
}

// One value for both joints, or "j1,j2".
template <typename Field>
Key joint_pair_key(Field field) {
  return {[field](RunConfig& c, const std::string& v) {
            const auto items = split_list(v);
            if (items.size() == 1) {
              field(c) = {parse_number<double>(items[0]), parse_number<double>(items[0])};
            } else if (items.size() == 2) {
              field(c) = {parse_number<double>(items[0]), parse_number<double>(items[1])};
            } else {
              throw ConfigError("expected one value or two comma-separated values");
            }
          },
          [field](const RunConfig& c) {
            const auto& p = field(c);
            return real(p[0]) + "," + real(p[1]);
          }};
}

const std::map<std::string, Key>& keys() {
  static const std::map<std::string, Key> table = [] {
    std::map<std::string, Key> k;
    k["sim.link_inertia"] = joint_pair_key([](auto& c) -> auto& { return c.sim.link_inertia; });
    k["sim.link_damping"] = joint_pair_key([](auto& c) -> auto& { return c.sim.link_damping; });
    k["sim.torque_noise_std"] = double_key([](auto& c) -> auto& { return c.sim.torque_noise_std; });
    k["sim.velocity_noise_std"] = double_key([](auto& c) -> auto& { return c.sim.velocity_noise_std; });
    k["sim.max_speed"] = double_key([](auto& c) -> auto& { return c.sim.motion.max_speed; });
    k["sim.max_accel"] = double_key([](auto& c) -> auto& { return c.sim.motion.max_accel; });
    k["sim.dwell_min_s"] = double_key([](auto& c) -> auto& { return c.sim.motion.dwell_min_s; });
    k["sim.dwell_max_s"] = double_key([](auto& c) -> auto& { return c.sim.motion.dwell_max_s; });
    k["sim.position_limit"] = double_key([](auto& c) -> auto& { return c.sim.motion.position_limit; });
    k["sim.collision_rate_per_min"] = double_key([](auto& c) -> auto& { return c.sim.collision.rate_per_min; });
    k["sim.peak_torque_min"] = double_key([](auto& c) -> auto& { return c.sim.collision.peak_torque_min; });
    k["sim.peak_torque_max"] = double_key([](auto& c) -> auto& { return c.sim.collision.peak_torque_max; });
    k["sim.duration_min_ms"] = int_key<int>([](auto& c) -> auto& { return c.sim.collision.duration_min_ms; });
    k["sim.duration_max_ms"] = int_key<int>([](auto& c) -> auto& { return c.sim.collision.duration_max_ms; });
    k["sim.min_separation_s"] = double_key([](auto& c) -> auto& { return c.sim.collision.min_separation_s; });
    k["sim.lead_s"] = double_key([](auto& c) -> auto& { return c.sim.collision.lead_s; });
    k["sim.tail_s"] = double_key([](auto& c) -> auto& { return c.sim.collision.tail_s; });
    k["train.batch_size"] = int_key<std::size_t>([](auto& c) -> auto& { return c.train.batch_size; });
    k["train.epochs"] = int_key<std::size_t>([](auto& c) -> auto& { return c.train.epochs; });
    k["train.learning_rate"] = double_key([](auto& c) -> auto& { return c.train.learning_rate; });
    k["train.beta1"] = double_key([](auto& c) -> auto& { return c.train.beta1; });
    k["train.beta2"] = double_key([](auto& c) -> auto& { return c.train.beta2; });
    k["train.epsilon"] = double_key([](auto& c) -> auto& { return c.train.epsilon; });
    k["eval.threshold"] = double_key([](auto& c) -> auto& { return c.threshold; });
    k["eval.detect_window_ms"] = int_key<std::int64_t>([](auto& c) -> auto& { return c.scoring.detect_window_ms; });
    k["eval.merge_gap_ms"] = int_key<std::int64_t>([](auto& c) -> auto& { return c.scoring.merge_gap_ms; });
    k["eval.cf_ms"] = {[](RunConfig& c, const std::string& v) {
                         c.cf_ms.clear();
                         for (const auto& item : split_list(v)) {
                           c.cf_ms.push_back(parse_number<std::int64_t>(item));
                         }
                       },
                       [](const RunConfig& c) {
                         std::string s;
                         for (std::size_t i = 0; i < c.cf_ms.size(); ++i) {
                           s += (i ? "," : "") + std::to_string(c.cf_ms[i]);
                         }
                         return s;
                       }};
    return k;
  }();
  return table;
}

void validate(const RunConfig& c) {
  c.sim.validate();
  c.train.validate();
  if (!(c.threshold > 0.0 && c.threshold < 1.0)) throw ConfigError("eval.threshold must lie in (0, 1)");
  if (c.scoring.detect_window_ms < 0 || c.scoring.merge_gap_ms < 0) {
    throw ConfigError("eval windows must be non-negative");
  }
  if (c.cf_ms.empty()) throw ConfigError("eval.cf_ms must list at least one duration");
  for (const auto d : c.cf_ms) {
    if (d < 0) throw ConfigError("eval.cf_ms durations must be non-negative");
  }
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const auto where = "config line " + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    const auto it = keys().find(key);
    if (it == keys().end()) throw ConfigError(where + "unknown key '" + key + "'");
    try {
      it->second.set(config, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  try {
    validate(config);
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& config) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [name, key] : keys()) out.emplace_back(name, key.get(config));
  return out;
}

std::string format_config(const RunConfig& config) {
  std::string out;
  for (const auto& [name, value] : config_entries(config)) out += name + " = " + value + "\n";
  return out;
}

std::filesystem::path default_out_dir(const std::string& command) {
  const char* root = std::getenv("MADCNN_OUT_ROOT");
  const std::filesystem::path base = (root && *root) ? root : "madcnn-out";
  return base / command;
}

}  // namespace madcnn::cli
