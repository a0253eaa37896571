#include <fstream>
#include <sstream>

#include <json.hpp>

#include "madcnn/error.hpp"
#include "madcnn/model.hpp"

namespace madcnn {

using nlohmann::json;

namespace {

constexpr const char* kFormatTag = "madcnn-weights";

json config_to_json(const ModelConfig& c) {
  return json{{"use_modularization", c.use_modularization},
              {"use_dilation", c.use_dilation},
              {"use_attention", c.use_attention},
              {"joints", c.joints},
              {"window_steps", c.window_steps},
              {"channels_per_joint", c.channels_per_joint},
              {"conv_filters", c.conv_filters},
              {"dilations", c.dilations},
              {"joint_fc_dim", c.joint_fc_dim},
              {"head_fc_dim", c.head_fc_dim},
              {"classes", c.classes}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.use_modularization = j.at("use_modularization").get<bool>();
  c.use_dilation = j.at("use_dilation").get<bool>();
  c.use_attention = j.at("use_attention").get<bool>();
  c.joints = j.at("joints").get<std::size_t>();
  c.window_steps = j.at("window_steps").get<std::size_t>();
  c.channels_per_joint = j.at("channels_per_joint").get<std::size_t>();
  c.conv_filters = j.at("conv_filters").get<std::array<std::size_t, 2>>();
  c.dilations = j.at("dilations").get<std::array<std::size_t, 2>>();
  c.joint_fc_dim = j.at("joint_fc_dim").get<std::size_t>();
  c.head_fc_dim = j.at("head_fc_dim").get<std::size_t>();
  c.classes = j.at("classes").get<std::size_t>();
  c.validate();
  return c;
}

}  // namespace

std::string weights_to_json(const ModelParameters& params,
                            const std::optional<data::NormalizationStats>& stats) {
  json doc;
  doc["format"] = kFormatTag;
  doc["version"] = kWeightsFormatVersion;
  doc["variant"] = variant_name(params.config);
  doc["config"] = config_to_json(params.config);
  doc["seed"] = params.seed;
  if (stats) {
    json channels = json::array();
    for (const auto& r : stats->channels) channels.push_back({{"min", r.min}, {"max", r.max}});
    doc["normalization"] = {{"channels", {"tau1", "vel1", "tau2", "vel2"}},
                            {"ranges", channels}};
  }
  json list = json::array();
  for (const auto& t : tensors(params)) {
    list.push_back({{"name", t.name},
                    {"shape", t.shape},
                    {"values", std::vector<double>(t.values.begin(), t.values.end())}});
  }
  doc["tensors"] = std::move(list);
  return doc.dump(1) + "\n";
}

WeightsFile weights_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("weights: ") + e.what(), 0);
  }
  try {
    if (doc.at("format").get<std::string>() != kFormatTag) {
      throw FormatError("weights: not a madcnn weight file");
    }
    const int version = doc.at("version").get<int>();
    if (version != kWeightsFormatVersion) {
      throw FormatError("weights: unsupported format version " + std::to_string(version));
    }
    WeightsFile file;
    const ModelConfig config = config_from_json(doc.at("config"));
    file.params = zeros_like(build_model(config, 0));
    file.params.seed = doc.at("seed").get<std::uint64_t>();

    const json& list = doc.at("tensors");
    auto slots = tensors(file.params);
    if (list.size() != slots.size()) {
      throw FormatError("weights: expected " + std::to_string(slots.size()) + " tensors, found " +
                        std::to_string(list.size()));
    }
    for (std::size_t i = 0; i < slots.size(); ++i) {
      const json& entry = list[i];
      const auto name = entry.at("name").get<std::string>();
      if (name != slots[i].name) {
        throw FormatError("weights: tensor " + std::to_string(i) + " is '" + name +
                          "', expected '" + slots[i].name + "'");
      }
      if (entry.at("shape").get<std::vector<std::size_t>>() != slots[i].shape) {
        throw FormatError("weights: tensor '" + name + "' has the wrong shape");
      }
      const auto values = entry.at("values").get<std::vector<double>>();
      if (values.size() != slots[i].values.size()) {
        throw FormatError("weights: tensor '" + name + "' has " + std::to_string(values.size()) +
                          " values");
      }
      std::copy(values.begin(), values.end(), slots[i].values.begin());
    }
    if (doc.contains("normalization")) {
      const json& ranges = doc["normalization"].at("ranges");
      if (ranges.size() != data::kChannels) {
        throw FormatError("weights: normalization must list 4 channels");
      }
      data::NormalizationStats stats;
      for (std::size_t c = 0; c < data::kChannels; ++c) {
        stats.channels[c].min = ranges[c].at("min").get<double>();
        stats.channels[c].max = ranges[c].at("max").get<double>();
      }
      file.normalization = stats;
    }
    return file;
  } catch (const json::exception& e) {
    throw FormatError(std::string("weights: ") + e.what());
  }
}

void write_weights(const std::filesystem::path& path, const ModelParameters& params,
                   const std::optional<data::NormalizationStats>& stats) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << weights_to_json(params, stats);
  if (!out) throw IoError("failed writing " + path.string());
}

WeightsFile read_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return weights_from_json(buf.str());
}

}  // namespace madcnn
