#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <memory>

#include <CLI11.hpp>
#include <json.hpp>

#include "cli.hpp"
#include "madcnn/error.hpp"

#ifndef MADCNN_VERSION
#define MADCNN_VERSION "unknown"
#endif

namespace madcnn::cli {
namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

constexpr const char* kManifestName = "run_manifest.json";

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::path normalized(const fs::path& p) {
  fs::path out = fs::absolute(p).lexically_normal();
  if (out.filename().empty()) out = out.parent_path();
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

// Files are produced in a sibling directory and only moved into the output
// directory once the command succeeded; a failed run leaves the output
// directory untouched.
class Staging {
 public:
  Staging(const fs::path& out_dir, const std::string& command)
      : out_(normalized(out_dir)),
        dir_(out_.parent_path() / ("." + out_.filename().string() + ".staging-" + command)) {
    std::error_code ec;
    fs::remove_all(dir_, ec);
    fs::create_directories(dir_);
  }
  Staging(const Staging&) = delete;
  Staging& operator=(const Staging&) = delete;
  ~Staging() {
    std::error_code ec;
    fs::remove_all(dir_, ec);
  }

  const fs::path& dir() const { return dir_; }
  const fs::path& out() const { return out_; }
  fs::path file(const std::string& name) const { return dir_ / name; }

  /// Names of the staged files, sorted.
  std::vector<std::string> files() const {
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir_)) {
      if (entry.is_regular_file()) names.push_back(entry.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    return names;
  }

  void commit() {
    fs::create_directories(out_);
    for (const auto& name : files()) fs::rename(dir_ / name, out_ / name);
  }

 private:
  fs::path out_;
  fs::path dir_;
};

class Manifest {
 public:
  Manifest(std::string command, const CommonOptions& common)
      : command_(std::move(command)), common_(common), started_(utc_now()) {}

  void input(const std::string& key, Json value) { inputs_[key] = std::move(value); }

  /// Writes the manifest into the staging directory; it lists itself last.
  void write(const Staging& staging, const RunConfig& config) const {
    Json j;
    j["tool"] = "madcnn";
    j["tool_version"] = MADCNN_VERSION;
    j["command"] = command_;
    j["config_path"] =
        common_.config_path ? Json(normalized(*common_.config_path).string()) : Json(nullptr);
    j["seed"] = common_.seed;
    j["output_dir"] = staging.out().string();
    j["inputs"] = inputs_.is_null() ? Json::object() : inputs_;
    Json settings = Json::object();
    for (const auto& [key, value] : config_entries(config)) settings[key] = value;
    j["config"] = settings;
    auto outputs = staging.files();
    outputs.push_back(kManifestName);
    j["outputs"] = outputs;
    j["started_at"] = started_;
    j["finished_at"] = utc_now();
    write_text(staging.file(kManifestName), j.dump(2) + "\n");
  }

 private:
  std::string command_;
  CommonOptions common_;
  std::string started_;
  Json inputs_;
};

RunConfig config_for(const CommonOptions& common) {
  return common.config_path ? load_config(*common.config_path) : RunConfig{};
}

void require_test_splits(const sim::Corpus& corpus) {
  for (bool collisions : {true, false}) {
    for (int level : sim::kTestLevels) corpus.require(sim::Split::Test, collisions, level);
  }
}

data::NormalizationStats stats_for(const WeightsFile& weights, const sim::Corpus& corpus) {
  if (weights.normalization) return *weights.normalization;
  const auto& train_entry = corpus.require(sim::Split::Train, true, 4);
  const std::vector<data::Trace> traces{train_entry.trace};
  return data::fit_normalizer(traces);
}

double threshold_for(const std::optional<double>& flag, const RunConfig& config) {
  const double t = flag.value_or(config.threshold);
  if (!(t > 0.0 && t < 1.0)) throw ConfigError("threshold must lie in (0, 1)");
  return t;
}

EpochCallback epoch_logger(std::ostream& log, std::string prefix, std::size_t epochs) {
  return [&log, prefix = std::move(prefix), epochs](std::size_t epoch, double loss) {
    log << prefix << "epoch " << epoch << "/" << epochs << " loss " << loss << std::endl;
  };
}

void log_reports(std::ostream& log, const std::string& label, const eval::LevelReports& r) {
  for (auto it = r.levels.rbegin(); it != r.levels.rend(); ++it) {
    const auto& rep = it->second;
    log << label << " stiffness " << it->first << ": DFn " << rep.dfn << "/"
        << rep.collisions_total << ", DD " << eval::format_delay(rep.dd_mean()) << " ms, FPn "
        << rep.fpn << "\n";
  }
}

}  // namespace

// ---------------------------------------------------------------------------

void cmd_simulate(const SimulateOptions& options, std::ostream& log) {
  const RunConfig config = config_for(options.common);
  if (!(options.scale > 0.0 && options.scale <= 1.0)) {
    throw ConfigError("--scale must lie in (0, 1]");
  }
  Staging staging(options.common.out_dir, "simulate");
  Manifest manifest("simulate", options.common);
  manifest.input("scale", options.scale);

  const sim::Corpus corpus = sim::generate_corpus(config.sim, options.common.seed, options.scale);
  sim::write_corpus(corpus, staging.dir());
  manifest.write(staging, config);
  staging.commit();
  log << "wrote " << corpus.entries.size() << " traces to " << staging.out().string() << "\n";
}

void cmd_train(const TrainOptions& options, std::ostream& log) {
  const RunConfig config = config_for(options.common);
  const ModelConfig model_config = variant_config(options.variant);
  const sim::Corpus corpus = sim::read_corpus(options.corpus_dir);
  const auto& train_entry = corpus.require(sim::Split::Train, true, 4);

  Staging staging(options.common.out_dir, "train");
  Manifest manifest("train", options.common);
  manifest.input("variant", variant_name(model_config));
  manifest.input("corpus", normalized(options.corpus_dir).string());

  const std::vector<data::Trace> traces{train_entry.trace};
  const data::NormalizationStats stats = data::fit_normalizer(traces);
  const auto frames = data::make_dataset(traces, stats, options.common.seed);
  TrainConfig tc = config.train;
  tc.seed = options.common.seed;
  log << "training " << variant_label(model_config) << " on " << frames.size() << " frames\n";
  const TrainResult result = train(model_config, frames, tc, epoch_logger(log, "", tc.epochs));

  write_weights(staging.file("weights.json"), result.params, stats);
  write_loss_history(staging.file("loss_history.csv"), result.loss_history);
  manifest.write(staging, config);
  staging.commit();
  log << "wrote weights to " << (staging.out() / "weights.json").string() << "\n";
}

void cmd_eval(const EvalOptions& options, std::ostream& log) {
  const RunConfig config = config_for(options.common);
  const double threshold = threshold_for(options.threshold, config);
  std::vector<std::int64_t> cf_list = options.cf_ms.empty() ? config.cf_ms : options.cf_ms;
  for (const auto d : cf_list) {
    if (d < 0) throw ConfigError("--cf-ms must be non-negative");
  }
  const WeightsFile weights = read_weights(options.weights_path);
  const sim::Corpus corpus = sim::read_corpus(options.corpus_dir);
  require_test_splits(corpus);
  const data::NormalizationStats stats = stats_for(weights, corpus);

  Staging staging(options.common.out_dir, "eval");
  Manifest manifest("eval", options.common);
  manifest.input("weights", normalized(options.weights_path).string());
  manifest.input("corpus", normalized(options.corpus_dir).string());
  manifest.input("threshold", threshold);
  manifest.input("cf_ms", cf_list);

  const auto scored = eval::score_test_splits(weights.params, corpus, stats, threshold);
  const std::string label = variant_label(weights.params.config);
  std::vector<std::pair<std::int64_t, eval::LevelReports>> by_cf;
  for (const auto d : cf_list) {
    by_cf.emplace_back(d, eval::level_reports(scored, d, config.scoring));
    log_reports(log, label + " CF " + std::to_string(d) + " ms", by_cf.back().second);
  }
  write_text(staging.file("eval_table.csv"), eval::eval_table_csv(label, by_cf));
  write_text(staging.file("eval_splits.csv"),
             eval::split_reports_csv(scored, cf_list, config.scoring));
  manifest.write(staging, config);
  staging.commit();
}

void cmd_ablate(const AblateOptions& options, std::ostream& log) {
  const RunConfig config = config_for(options.common);
  const double threshold = threshold_for(options.threshold, config);
  std::vector<std::string> variants;
  if (options.variants.empty()) {
    for (const auto name : kVariantNames) variants.emplace_back(name);
  } else {
    for (const auto& name : options.variants) variants.push_back(variant_name(variant_config(name)));
  }
  const sim::Corpus corpus = sim::read_corpus(options.corpus_dir);
  corpus.require(sim::Split::Train, true, 4);
  require_test_splits(corpus);

  Staging staging(options.common.out_dir, "ablate");
  Manifest manifest("ablate", options.common);
  manifest.input("corpus", normalized(options.corpus_dir).string());
  manifest.input("variants", variants);
  manifest.input("threshold", threshold);

  TrainConfig tc = config.train;
  tc.seed = options.common.seed;
  std::size_t current = 0;
  const EpochCallback on_epoch = [&](std::size_t epoch, double loss) {
    if (epoch == 1) ++current;
    log << "[" << variants[current - 1] << "] epoch " << epoch << "/" << tc.epochs << " loss "
        << loss << std::endl;
  };
  const eval::AblationResult result =
      eval::ablation_run(variants, corpus, tc, config.scoring, threshold, on_epoch);

  for (const auto& v : result.variants) {
    write_weights(staging.file("weights_" + v.variant + ".json"), v.params, result.stats);
    write_loss_history(staging.file("loss_" + v.variant + ".csv"), v.loss_history);
    log_reports(log, v.variant, v.reports);
  }
  write_text(staging.file("ablation_long.csv"), eval::ablation_long_csv(result));
  write_text(staging.file("ablation_table.csv"), eval::ablation_table_csv(result));
  manifest.write(staging, config);
  staging.commit();
}

void cmd_cf_sweep(const CfSweepOptions& options, std::ostream& log) {
  const RunConfig config = config_for(options.common);
  const double threshold = threshold_for(options.threshold, config);
  const WeightsFile weights = read_weights(options.weights_path);
  const sim::Corpus corpus = sim::read_corpus(options.corpus_dir);
  require_test_splits(corpus);
  const data::NormalizationStats stats = stats_for(weights, corpus);

  Staging staging(options.common.out_dir, "cf-sweep");
  Manifest manifest("cf-sweep", options.common);
  manifest.input("weights", normalized(options.weights_path).string());
  manifest.input("corpus", normalized(options.corpus_dir).string());
  manifest.input("threshold", threshold);

  const auto scored = eval::score_test_splits(weights.params, corpus, stats, threshold);
  const auto durations = eval::default_cf_durations();
  const auto rows = eval::cf_sweep(scored, durations, config.scoring);
  write_text(staging.file("cf_sweep.csv"), eval::cf_sweep_csv(rows));
  write_text(staging.file("plot_fpn.dat"), eval::plot_series(rows, "fpn"));
  write_text(staging.file("plot_dfn.dat"), eval::plot_series(rows, "dfn"));
  write_text(staging.file("plot_dd.dat"), eval::plot_series(rows, "dd_mean_ms"));
  if (options.svg) write_text(staging.file("cf_sweep.svg"), eval::cf_sweep_svg(rows));
  manifest.write(staging, config);
  staging.commit();
  log << "swept " << rows.size() << " filter durations\n";
}

// ---------------------------------------------------------------------------

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Collision detection for variable-stiffness manipulators", "madcnn"};
  app.set_version_flag("--version", MADCNN_VERSION);
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key = value configuration file");
    cmd->add_option("--out", out_dir, "output directory (default $MADCNN_OUT_ROOT/<command>)");
  };

  SimulateOptions sim_opts;
  auto* simulate = app.add_subcommand("simulate", "generate a synthetic trace corpus");
  add_common(simulate);
  simulate->add_option("--scale", sim_opts.scale, "duration scale in (0, 1]")->capture_default_str();

  TrainOptions train_opts;
  auto* train_cmd = app.add_subcommand("train", "train one model variant");
  add_common(train_cmd);
  train_cmd->add_option("--corpus", train_opts.corpus_dir, "corpus directory")->required();
  train_cmd->add_option("--variant", train_opts.variant, "MAD, M, MD, MA or AD")->capture_default_str();

  EvalOptions eval_opts;
  auto* eval_cmd = app.add_subcommand("eval", "score a trained model on the test splits");
  add_common(eval_cmd);
  eval_cmd->add_option("--weights", eval_opts.weights_path, "weight file")->required();
  eval_cmd->add_option("--corpus", eval_opts.corpus_dir, "corpus directory")->required();
  eval_cmd->add_option("--cf-ms", eval_opts.cf_ms, "continuous-filter duration (repeatable)");
  eval_cmd->add_option("--threshold", eval_opts.threshold, "decision threshold");

  AblateOptions ablate_opts;
  auto* ablate = app.add_subcommand("ablate", "train and score several variants");
  add_common(ablate);
  ablate->add_option("--corpus", ablate_opts.corpus_dir, "corpus directory")->required();
  ablate->add_option("--variant", ablate_opts.variants, "variant to include (repeatable)");
  ablate->add_option("--threshold", ablate_opts.threshold, "decision threshold");

  CfSweepOptions sweep_opts;
  auto* sweep = app.add_subcommand("cf-sweep", "sweep the continuous-filter duration 0-27 ms");
  add_common(sweep);
  sweep->add_option("--weights", sweep_opts.weights_path, "weight file")->required();
  sweep->add_option("--corpus", sweep_opts.corpus_dir, "corpus directory")->required();
  sweep->add_option("--threshold", sweep_opts.threshold, "decision threshold");
  sweep->add_flag("--svg", sweep_opts.svg, "also render cf_sweep.svg");

  // Corpus generation defaults to seed 1, training to the trainer default.
  std::uint64_t sim_seed = 1;
  simulate->add_option("--seed", sim_seed, "random seed")->capture_default_str();
  std::uint64_t train_seed = TrainConfig{}.seed;
  train_cmd->add_option("--seed", train_seed, "random seed")->capture_default_str();
  std::uint64_t ablate_seed = TrainConfig{}.seed;
  ablate->add_option("--seed", ablate_seed, "random seed")->capture_default_str();

  std::vector<std::string> argv_storage{"madcnn"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  const auto common_for = [&](const std::string& command, std::uint64_t s) {
    CommonOptions c;
    if (!config_path.empty()) c.config_path = config_path;
    c.out_dir = out_dir.empty() ? default_out_dir(command) : fs::path(out_dir);
    c.seed = s;
    return c;
  };

  try {
    if (simulate->parsed()) {
      sim_opts.common = common_for("simulate", sim_seed);
      cmd_simulate(sim_opts, out);
    } else if (train_cmd->parsed()) {
      train_opts.common = common_for("train", train_seed);
      cmd_train(train_opts, out);
    } else if (eval_cmd->parsed()) {
      eval_opts.common = common_for("eval", 0);
      cmd_eval(eval_opts, out);
    } else if (ablate->parsed()) {
      ablate_opts.common = common_for("ablate", ablate_seed);
      cmd_ablate(ablate_opts, out);
    } else if (sweep->parsed()) {
      sweep_opts.common = common_for("cf-sweep", 0);
      cmd_cf_sweep(sweep_opts, out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitOk;
}

}  // namespace madcnn::cli
