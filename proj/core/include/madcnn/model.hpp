#pragma once

// MAD-CNN and its ablation variants.
//
// Modularized path (one branch per joint, 2 channels x 11 steps):
//   conv(16, d1) -> GELU -> pool -> conv(32, d2) -> GELU -> pool
//   -> flatten(64) -> FC 32 -> GELU
// Branch outputs are concatenated (64 = 2 tokens x 32), passed through
// single-head self-attention, flattened and fed to FC 64 -> GELU -> FC 2 ->
// softmax. d1/d2 are 4/8 with dilation, 1/1 without. The non-modular variant
// runs one branch over all 4 channels with a 64-wide FC; variants without
// attention feed the concatenation straight into the head.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "madcnn/datapipe.hpp"
#include "madcnn/kernels.hpp"

namespace madcnn {

struct ModelConfig {
  bool use_modularization = true;
  bool use_dilation = true;
  bool use_attention = true;
  std::size_t joints = data::kJoints;
  std::size_t window_steps = data::kFrameSteps;
  std::size_t channels_per_joint = data::kChannelsPerJoint;
  std::array<std::size_t, 2> conv_filters{16, 32};
  std::array<std::size_t, 2> dilations{4, 8};
  std::size_t joint_fc_dim = 32;
  std::size_t head_fc_dim = 64;
  std::size_t classes = 2;

  /// Throws ConfigError for anything the fixed topology cannot run.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Short names of the ablation table columns, in table order.
inline constexpr std::array<std::string_view, 5> kVariantNames{"MAD", "M", "MD", "MA", "AD"};

/// "MAD", "M", "MD", "MA" or "AD" (a "-CNN" suffix is accepted).
/// Throws InputError for anything else.
ModelConfig variant_config(std::string_view name);
/// Inverse of variant_config; throws InputError for flag sets outside the table.
std::string variant_name(const ModelConfig& config);
/// "MAD-CNN" style label used in reports.
std::string variant_label(const ModelConfig& config);

struct Branch {
  nn::ConvParams conv1;
  nn::ConvParams conv2;
  nn::LinearParams fc;
};

struct ModelParameters {
  ModelConfig config;
  std::uint64_t seed = 0;
  std::vector<Branch> branches;
  std::optional<nn::AttentionParams> attention;
  nn::LinearParams head_hidden;
  nn::LinearParams head_output;
};

struct TensorRef {
  std::string name;
  std::vector<std::size_t> shape;
  std::span<double> values;
};

struct ConstTensorRef {
  std::string name;
  std::vector<std::size_t> shape;
  std::span<const double> values;
};

/// Every learnable tensor in a fixed order (initialization, Adam, files).
std::vector<TensorRef> tensors(ModelParameters& params);
std::vector<ConstTensorRef> tensors(const ModelParameters& params);

/// Weights ~ U(-sqrt(1/fan_in), +sqrt(1/fan_in)), biases zero.
ModelParameters build_model(const ModelConfig& config, std::uint64_t seed);
/// Same shapes, all zeros. Used as a gradient accumulator.
ModelParameters zeros_like(const ModelParameters& params);
void set_zero(ModelParameters& params);

/// Learnable scalar count derived from the configuration alone.
std::size_t count_parameters(const ModelConfig& config);

struct Prediction {
  double p_no_collision = 0.5;
  double p_collision = 0.5;
};

struct BranchCache {
  nn::FeatureMap input;
  nn::FeatureMap conv1_pre;
  nn::FeatureMap conv1_act;
  nn::FeatureMap pool1;
  std::vector<std::size_t> pool1_argmax;
  nn::FeatureMap conv2_pre;
  nn::FeatureMap conv2_act;
  nn::FeatureMap pool2;
  std::vector<std::size_t> pool2_argmax;
  std::vector<double> fc_pre;
  std::vector<double> fc_act;
};

/// Intermediates of one forward pass. Reusing one cache across calls avoids
/// reallocations.
struct ActivationCache {
  const ModelParameters* params = nullptr;
  std::vector<BranchCache> branches;
  std::vector<double> features;  ///< concatenated branch outputs
  nn::Matrix tokens;             ///< joint_fc_dim x joints
  nn::AttentionCache attention;
  nn::Matrix attended;
  std::vector<double> head_input;
  std::vector<double> hidden_pre;
  std::vector<double> hidden_act;
  std::array<double, 2> logits{};
  std::array<double, 2> probs{};
};

Prediction forward(const ModelParameters& params, const data::InputFrame& frame,
                   ActivationCache& cache);
Prediction forward(const ModelParameters& params, const data::InputFrame& frame);

/// Adds dL/dparams of bce(p_collision, target) into `grads` (shaped like the
/// model) and returns the loss. When `grad_frame` is non-empty it receives
/// dL/dframe. Throws InputError if the cache was never filled by forward().
double backward(const ActivationCache& cache, int target, ModelParameters& grads,
                std::span<double> grad_frame = {});

/// 1 iff p_collision >= threshold.
int decide(double p_collision, double threshold = 0.5);
int predict(const ModelParameters& params, const data::InputFrame& frame, double threshold = 0.5);

/// Smallest |a - b| over the pooled pairs of a cached forward pass. Finite
/// difference checks need this comfortably above eps.
double min_pool_margin(const ActivationCache& cache);

// Weight files: JSON document {format, version, variant, config, seed,
// normalization?, tensors: [{name, shape, values}]} with row-major values in
// round-trip precision.
inline constexpr int kWeightsFormatVersion = 1;

struct WeightsFile {
  ModelParameters params;
  std::optional<data::NormalizationStats> normalization;
};

std::string weights_to_json(const ModelParameters& params,
                            const std::optional<data::NormalizationStats>& stats = std::nullopt);
WeightsFile weights_from_json(std::string_view text);
void write_weights(const std::filesystem::path& path, const ModelParameters& params,
                   const std::optional<data::NormalizationStats>& stats = std::nullopt);
WeightsFile read_weights(const std::filesystem::path& path);

}  // namespace madcnn
