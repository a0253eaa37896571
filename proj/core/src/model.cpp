#include "madcnn/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include "madcnn/error.hpp"
#include "madcnn/random.hpp"

namespace madcnn {

namespace {

constexpr std::size_t pooled(std::size_t length) { return length / 2; }

std::size_t branch_count(const ModelConfig& c) { return c.use_modularization ? c.joints : 1; }

std::size_t branch_in_channels(const ModelConfig& c) {
  return c.use_modularization ? c.channels_per_joint : c.joints * c.channels_per_joint;
}

std::size_t branch_out_dim(const ModelConfig& c) {
  return c.use_modularization ? c.joint_fc_dim : c.joints * c.joint_fc_dim;
}

std::size_t flatten_dim(const ModelConfig& c) {
  return c.conv_filters[1] * pooled(pooled(c.window_steps));
}

std::size_t feature_dim(const ModelConfig& c) { return c.joints * c.joint_fc_dim; }

}  // namespace

void ModelConfig::validate() const {
  if (joints != data::kJoints || window_steps != data::kFrameSteps ||
      channels_per_joint != data::kChannelsPerJoint) {
    throw ConfigError("model input must be 2 joints x 11 steps x 2 channels");
  }
  if (classes != 2) throw ConfigError("model must have exactly 2 output classes");
  if (conv_filters[0] == 0 || conv_filters[1] == 0 || joint_fc_dim == 0 || head_fc_dim == 0) {
    throw ConfigError("layer widths must be positive");
  }
  if (dilations[0] == 0 || dilations[1] == 0) throw ConfigError("dilations must be positive");
  if (pooled(pooled(window_steps)) == 0) throw ConfigError("window too short for two poolings");
}

ModelConfig variant_config(std::string_view name) {
  std::string key(name);
  std::transform(key.begin(), key.end(), key.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (key.size() > 4 && key.ends_with("-CNN")) key.resize(key.size() - 4);

  ModelConfig c;
  if (key == "MAD") {
    c.use_modularization = true, c.use_dilation = true, c.use_attention = true;
  } else if (key == "M") {
    c.use_modularization = true, c.use_dilation = false, c.use_attention = false;
  } else if (key == "MD") {
    c.use_modularization = true, c.use_dilation = true, c.use_attention = false;
  } else if (key == "MA") {
    c.use_modularization = true, c.use_dilation = false, c.use_attention = true;
  } else if (key == "AD") {
    c.use_modularization = false, c.use_dilation = true, c.use_attention = true;
  } else {
    throw InputError("unknown model variant '" + std::string(name) +
                     "' (expected MAD, M, MD, MA or AD)");
  }
  c.dilations = c.use_dilation ? std::array<std::size_t, 2>{4, 8} : std::array<std::size_t, 2>{1, 1};
  return c;
}

std::string variant_name(const ModelConfig& config) {
  for (auto name : kVariantNames) {
    const ModelConfig ref = variant_config(name);
    if (ref.use_modularization == config.use_modularization &&
        ref.use_dilation == config.use_dilation && ref.use_attention == config.use_attention) {
      return std::string(name);
    }
  }
  throw InputError("model flags do not correspond to a known variant");
}

std::string variant_label(const ModelConfig& config) { return variant_name(config) + "-CNN"; }

// ---------------------------------------------------------------------------

std::vector<TensorRef> tensors(ModelParameters& p) {
  std::vector<TensorRef> out;
  auto conv = [&](const std::string& prefix, nn::ConvParams& c) {
    out.push_back({prefix + ".weight", {c.out_channels, c.in_channels, c.kernel_size}, c.weights});
    out.push_back({prefix + ".bias", {c.out_channels}, c.bias});
  };
  auto lin = [&](const std::string& prefix, nn::LinearParams& l) {
    out.push_back({prefix + ".weight", {l.out_dim, l.in_dim}, l.weights});
    out.push_back({prefix + ".bias", {l.out_dim}, l.bias});
  };
  for (std::size_t b = 0; b < p.branches.size(); ++b) {
    const std::string prefix = "branch" + std::to_string(b);
    conv(prefix + ".conv1", p.branches[b].conv1);
    conv(prefix + ".conv2", p.branches[b].conv2);
    lin(prefix + ".fc", p.branches[b].fc);
  }
  if (p.attention) {
    auto& a = *p.attention;
    out.push_back({"attention.w_query", {a.w_query.rows, a.w_query.cols}, a.w_query.values});
    out.push_back({"attention.w_key", {a.w_key.rows, a.w_key.cols}, a.w_key.values});
    out.push_back({"attention.w_value", {a.w_value.rows, a.w_value.cols}, a.w_value.values});
  }
  lin("head.hidden", p.head_hidden);
  lin("head.output", p.head_output);
  return out;
}

std::vector<ConstTensorRef> tensors(const ModelParameters& p) {
  std::vector<ConstTensorRef> out;
  for (auto& t : tensors(const_cast<ModelParameters&>(p))) {
    out.push_back({std::move(t.name), std::move(t.shape), t.values});
  }
  return out;
}

namespace {

ModelParameters allocate(const ModelConfig& config) {
  config.validate();
  ModelParameters p;
  p.config = config;
  const std::size_t cin = branch_in_channels(config);
  for (std::size_t b = 0; b < branch_count(config); ++b) {
    Branch br;
    br.conv1 = nn::ConvParams::zeros(config.conv_filters[0], cin, config.dilations[0]);
    br.conv2 = nn::ConvParams::zeros(config.conv_filters[1], config.conv_filters[0],
                                     config.dilations[1]);
    br.fc = nn::LinearParams::zeros(branch_out_dim(config), flatten_dim(config));
    p.branches.push_back(std::move(br));
  }
  if (config.use_attention) {
    // One token per joint: d = s1 = s = joint_fc_dim.
    p.attention = nn::AttentionParams::zeros(config.joint_fc_dim, config.joint_fc_dim,
                                             config.joint_fc_dim);
  }
  p.head_hidden = nn::LinearParams::zeros(config.head_fc_dim, feature_dim(config));
  p.head_output = nn::LinearParams::zeros(config.classes, config.head_fc_dim);
  return p;
}

}  // namespace

ModelParameters build_model(const ModelConfig& config, std::uint64_t seed) {
  ModelParameters p = allocate(config);
  p.seed = seed;
  Rng rng(seed);
  for (auto& t : tensors(p)) {
    if (t.name.ends_with(".bias")) continue;
    // fan_in: every dimension except the leading output dimension.
    std::size_t fan_in = 1;
    for (std::size_t d = 1; d < t.shape.size(); ++d) fan_in *= t.shape[d];
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (double& w : t.values) w = rng.uniform(-bound, bound);
  }
  return p;
}

ModelParameters zeros_like(const ModelParameters& params) {
  ModelParameters z = allocate(params.config);
  z.seed = params.seed;
  return z;
}

void set_zero(ModelParameters& params) {
  for (auto& t : tensors(params)) std::fill(t.values.begin(), t.values.end(), 0.0);
}

std::size_t count_parameters(const ModelConfig& c) {
  c.validate();
  const std::size_t cin = branch_in_channels(c);
  const std::size_t f1 = c.conv_filters[0];
  const std::size_t f2 = c.conv_filters[1];
  const std::size_t per_branch = (f1 * cin * 3 + f1) + (f2 * f1 * 3 + f2) +
                                 (branch_out_dim(c) * flatten_dim(c) + branch_out_dim(c));
  std::size_t total = branch_count(c) * per_branch;
  if (c.use_attention) total += 3 * c.joint_fc_dim * c.joint_fc_dim;
  total += c.head_fc_dim * feature_dim(c) + c.head_fc_dim;
  total += c.classes * c.head_fc_dim + c.classes;
  return total;
}

// ---------------------------------------------------------------------------

namespace {

void load_branch_input(const ModelConfig& c, const data::InputFrame& frame, std::size_t branch,
                       nn::FeatureMap& input) {
  const std::size_t cin = branch_in_channels(c);
  if (input.channels != cin || input.length != c.window_steps) input.resize(cin, c.window_steps);
  if (c.use_modularization) {
    for (std::size_t ch = 0; ch < c.channels_per_joint; ++ch) {
      for (std::size_t s = 0; s < c.window_steps; ++s) input.at(ch, s) = frame.at(branch, s, ch);
    }
  } else {
    for (std::size_t j = 0; j < c.joints; ++j) {
      for (std::size_t ch = 0; ch < c.channels_per_joint; ++ch) {
        for (std::size_t s = 0; s < c.window_steps; ++s) {
          input.at(j * c.channels_per_joint + ch, s) = frame.at(j, s, ch);
        }
      }
    }
  }
}

void branch_forward(const Branch& br, BranchCache& bc) {
  nn::conv1d_dilated_into(bc.input, br.conv1, bc.conv1_pre);
  bc.conv1_act.resize(bc.conv1_pre.channels, bc.conv1_pre.length);
  nn::gelu_into(bc.conv1_pre.values, bc.conv1_act.values);
  nn::maxpool1d_into(bc.conv1_act, bc.pool1, bc.pool1_argmax);

  nn::conv1d_dilated_into(bc.pool1, br.conv2, bc.conv2_pre);
  bc.conv2_act.resize(bc.conv2_pre.channels, bc.conv2_pre.length);
  nn::gelu_into(bc.conv2_pre.values, bc.conv2_act.values);
  nn::maxpool1d_into(bc.conv2_act, bc.pool2, bc.pool2_argmax);

  bc.fc_pre.resize(br.fc.out_dim);
  bc.fc_act.resize(br.fc.out_dim);
  nn::linear_into(bc.pool2.values, br.fc, bc.fc_pre);
  nn::gelu_into(bc.fc_pre, bc.fc_act);
}

}  // namespace

Prediction forward(const ModelParameters& params, const data::InputFrame& frame,
                   ActivationCache& cache) {
  const ModelConfig& c = params.config;
  cache.params = &params;
  cache.branches.resize(params.branches.size());

  const std::size_t fdim = feature_dim(c);
  cache.features.resize(fdim);
  std::size_t offset = 0;
  for (std::size_t b = 0; b < params.branches.size(); ++b) {
    BranchCache& bc = cache.branches[b];
    load_branch_input(c, frame, b, bc.input);
    branch_forward(params.branches[b], bc);
    std::copy(bc.fc_act.begin(), bc.fc_act.end(), cache.features.begin() + offset);
    offset += bc.fc_act.size();
  }

  cache.head_input.resize(fdim);
  if (params.attention) {
    const std::size_t d = c.joint_fc_dim;
    const std::size_t n = c.joints;
    if (cache.tokens.rows != d || cache.tokens.cols != n) cache.tokens = nn::Matrix(d, n);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t r = 0; r < d; ++r) cache.tokens.at(r, j) = cache.features[j * d + r];
    }
    nn::self_attention_into(cache.tokens, *params.attention, cache.attention, cache.attended);
    const std::size_t s = cache.attended.rows;
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t r = 0; r < s; ++r) cache.head_input[j * s + r] = cache.attended.at(r, j);
    }
  } else {
    cache.head_input = cache.features;
  }

  cache.hidden_pre.resize(c.head_fc_dim);
  cache.hidden_act.resize(c.head_fc_dim);
  nn::linear_into(cache.head_input, params.head_hidden, cache.hidden_pre);
  nn::gelu_into(cache.hidden_pre, cache.hidden_act);
  nn::linear_into(cache.hidden_act, params.head_output, cache.logits);
  nn::require_finite(cache.logits, "model logits");
  nn::softmax_into(cache.logits, cache.probs);
  return Prediction{cache.probs[0], cache.probs[1]};
}

Prediction forward(const ModelParameters& params, const data::InputFrame& frame) {
  ActivationCache cache;
  return forward(params, frame, cache);
}

double backward(const ActivationCache& cache, int target, ModelParameters& grads,
                std::span<double> grad_frame) {
  if (cache.params == nullptr) throw InputError("backward: cache was not produced by forward");
  const ModelParameters& params = *cache.params;
  const ModelConfig& c = params.config;
  if (cache.branches.size() != params.branches.size() ||
      grads.branches.size() != params.branches.size() ||
      grads.attention.has_value() != params.attention.has_value()) {
    throw ShapeError("backward: gradient accumulator does not match the model");
  }
  if (!grad_frame.empty() && grad_frame.size() != data::kFrameValues) {
    throw ShapeError("backward: frame gradient must have 44 entries");
  }

  const double p = cache.probs[1];
  const double loss = nn::bce_loss(p, target);
  const double dp = nn::bce_loss_gradient(p, target);
  // Softmax Jacobian with dL/dprobs = (0, dp).
  const std::array<double, 2> d_logits{-cache.probs[0] * p * dp, p * (1.0 - p) * dp};

  std::vector<double> d_hidden_act(c.head_fc_dim);
  nn::linear_backward_into(cache.hidden_act, params.head_output, d_logits, grads.head_output,
                           d_hidden_act);
  std::vector<double> d_hidden_pre(c.head_fc_dim);
  nn::gelu_backward_into(cache.hidden_pre, d_hidden_act, d_hidden_pre);
  std::vector<double> d_head_input(cache.head_input.size());
  nn::linear_backward_into(cache.head_input, params.head_hidden, d_hidden_pre, grads.head_hidden,
                           d_head_input);

  std::vector<double> d_features(cache.features.size());
  if (params.attention) {
    const std::size_t n = c.joints;
    const std::size_t s = cache.attended.rows;
    const std::size_t d = c.joint_fc_dim;
    nn::Matrix d_attended(s, n);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t r = 0; r < s; ++r) d_attended.at(r, j) = d_head_input[j * s + r];
    }
    const nn::Matrix d_tokens = nn::self_attention_backward(
        cache.tokens, *params.attention, cache.attention, d_attended, *grads.attention);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t r = 0; r < d; ++r) d_features[j * d + r] = d_tokens.at(r, j);
    }
  } else {
    d_features = d_head_input;
  }

  std::size_t offset = 0;
  nn::FeatureMap d_pool2, d_conv2_act, d_conv2_pre, d_pool1, d_conv1_act, d_conv1_pre, d_input;
  for (std::size_t b = 0; b < params.branches.size(); ++b) {
    const Branch& br = params.branches[b];
    const BranchCache& bc = cache.branches[b];
    Branch& gb = grads.branches[b];
    const std::size_t out_dim = bc.fc_act.size();

    std::vector<double> d_fc_pre(out_dim);
    nn::gelu_backward_into(bc.fc_pre, std::span<const double>(&d_features[offset], out_dim),
                           d_fc_pre);
    offset += out_dim;
    d_pool2.resize(bc.pool2.channels, bc.pool2.length);
    nn::linear_backward_into(bc.pool2.values, br.fc, d_fc_pre, gb.fc, d_pool2.values);

    nn::maxpool1d_backward_into(d_pool2, bc.pool2_argmax, bc.conv2_act.length, d_conv2_act);
    d_conv2_pre.resize(d_conv2_act.channels, d_conv2_act.length);
    nn::gelu_backward_into(bc.conv2_pre.values, d_conv2_act.values, d_conv2_pre.values);
    nn::conv1d_dilated_backward_into(bc.pool1, br.conv2, d_conv2_pre, gb.conv2, d_pool1);

    nn::maxpool1d_backward_into(d_pool1, bc.pool1_argmax, bc.conv1_act.length, d_conv1_act);
    d_conv1_pre.resize(d_conv1_act.channels, d_conv1_act.length);
    nn::gelu_backward_into(bc.conv1_pre.values, d_conv1_act.values, d_conv1_pre.values);
    nn::conv1d_dilated_backward_into(bc.input, br.conv1, d_conv1_pre, gb.conv1, d_input);

    if (!grad_frame.empty()) {
      auto frame_index = [](std::size_t joint, std::size_t step, std::size_t ch) {
        return (joint * data::kFrameSteps + step) * data::kChannelsPerJoint + ch;
      };
      for (std::size_t ch = 0; ch < d_input.channels; ++ch) {
        const std::size_t joint = c.use_modularization ? b : ch / c.channels_per_joint;
        const std::size_t jch = c.use_modularization ? ch : ch % c.channels_per_joint;
        for (std::size_t s = 0; s < d_input.length; ++s) {
          grad_frame[frame_index(joint, s, jch)] = d_input.at(ch, s);
        }
      }
    }
  }
  return loss;
}

int decide(double p_collision, double threshold) { return p_collision >= threshold ? 1 : 0; }

int predict(const ModelParameters& params, const data::InputFrame& frame, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw InputError("predict: threshold must lie in (0, 1)");
  }
  return decide(forward(params, frame).p_collision, threshold);
}

double min_pool_margin(const ActivationCache& cache) {
  double margin = std::numeric_limits<double>::infinity();
  auto scan = [&](const nn::FeatureMap& in) {
    for (std::size_t ch = 0; ch < in.channels; ++ch) {
      for (std::size_t j = 0; j + 1 < in.length; j += 2) {
        margin = std::min(margin, std::abs(in.at(ch, j) - in.at(ch, j + 1)));
      }
    }
  };
  for (const auto& bc : cache.branches) {
    scan(bc.conv1_act);
    scan(bc.conv2_act);
  }
  return margin;
}

}  // namespace madcnn
