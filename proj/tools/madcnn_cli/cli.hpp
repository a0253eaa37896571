#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "madcnn/evaluator.hpp"
#include "madcnn/sim.hpp"
#include "madcnn/trainer.hpp"

namespace madcnn::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,   ///< bad flags, config, variant or missing splits
  kExitIo = 3,       ///< unreadable or malformed files
  kExitNumeric = 4,  ///< numeric or simulation failure
};

/// Everything a key=value config file can set. Defaults are the library defaults.
struct RunConfig {
  sim::SimConfig sim;
  TrainConfig train;
  eval::ScoringOptions scoring;
  double threshold = 0.5;
  std::vector<std::int64_t> cf_ms{0, 15};
};

/// Lines are `key = value`; '#' starts a comment. Unknown keys and bad values
/// throw ConfigError with the line number.
RunConfig parse_config(const std::string& text);
/// Throws ConfigError when the file does not exist.
RunConfig load_config(const std::filesystem::path& path);
/// Every key with its value as parse_config would read it, sorted by key.
std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& config);
/// Canonical text of every key, in parse_config syntax.
std::string format_config(const RunConfig& config);

/// Output directory when --out is absent: $MADCNN_OUT_ROOT/<command>, or
/// ./madcnn-out/<command>.
std::filesystem::path default_out_dir(const std::string& command);

struct CommonOptions {
  std::optional<std::filesystem::path> config_path;
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
};

struct SimulateOptions {
  CommonOptions common;
  double scale = 1.0;
};

struct TrainOptions {
  CommonOptions common;
  std::filesystem::path corpus_dir;
  std::string variant = "MAD";
};

struct EvalOptions {
  CommonOptions common;
  std::filesystem::path weights_path;
  std::filesystem::path corpus_dir;
  std::vector<std::int64_t> cf_ms;      ///< empty: config value
  std::optional<double> threshold;      ///< unset: config value
};

struct AblateOptions {
  CommonOptions common;
  std::filesystem::path corpus_dir;
  std::vector<std::string> variants;    ///< empty: all five
  std::optional<double> threshold;
};

struct CfSweepOptions {
  CommonOptions common;
  std::filesystem::path weights_path;
  std::filesystem::path corpus_dir;
  std::optional<double> threshold;
  bool svg = false;
};

// Each command writes into a staging directory next to the output directory
// and moves the files into place only after every file was written. All of
// them also write run_manifest.json. Errors propagate as madcnn::Error.
void cmd_simulate(const SimulateOptions& options, std::ostream& log);
void cmd_train(const TrainOptions& options, std::ostream& log);
void cmd_eval(const EvalOptions& options, std::ostream& log);
void cmd_ablate(const AblateOptions& options, std::ostream& log);
void cmd_cf_sweep(const CfSweepOptions& options, std::ostream& log);

/// Parses argv-style arguments (without the program name), runs the command
/// and maps failures to exit codes.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace madcnn::cli
