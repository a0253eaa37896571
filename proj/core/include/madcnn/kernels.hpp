#pragma once

// Differentiable building blocks of the collision-detection network. Every
// forward kernel has a hand-written backward companion; backward functions
// *accumulate* parameter gradients into the supplied gradient structure so a
// batch can be reduced in a fixed order.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace madcnn::nn {

/// Channel-major activation map: values[c * length + t].
struct FeatureMap {
  std::size_t channels = 0;
  std::size_t length = 0;
  std::vector<double> values;

  FeatureMap() = default;
  FeatureMap(std::size_t channels, std::size_t length, double fill = 0.0)
      : channels(channels), length(length), values(channels * length, fill) {}

  double& at(std::size_t c, std::size_t t) { return values[c * length + t]; }
  double at(std::size_t c, std::size_t t) const { return values[c * length + t]; }

  void resize(std::size_t c, std::size_t l) {
    channels = c;
    length = l;
    values.assign(c * l, 0.0);
  }
};

/// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows(rows), cols(cols), values(rows * cols, fill) {}

  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

inline constexpr std::size_t kConvKernelSize = 3;

/// 1-D convolution over all input channels, kernel 3, stride 1, zero
/// same-padding. weights[(o * in_channels + i) * kernel_size + k].
struct ConvParams {
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::size_t kernel_size = kConvKernelSize;
  std::size_t dilation = 1;
  std::vector<double> weights;
  std::vector<double> bias;

  static ConvParams zeros(std::size_t out_channels, std::size_t in_channels, std::size_t dilation);

  double& weight(std::size_t o, std::size_t i, std::size_t k) {
    return weights[(o * in_channels + i) * kernel_size + k];
  }
  double weight(std::size_t o, std::size_t i, std::size_t k) const {
    return weights[(o * in_channels + i) * kernel_size + k];
  }
};

/// y = W x + b with W row-major (out_dim x in_dim).
struct LinearParams {
  std::size_t out_dim = 0;
  std::size_t in_dim = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  static LinearParams zeros(std::size_t out_dim, std::size_t in_dim);
};

/// Single-head projections. w_query/w_key are key_dim x input_dim and
/// w_value is value_dim x input_dim. Scores are scaled by sqrt(key_dim).
struct AttentionParams {
  Matrix w_query;
  Matrix w_key;
  Matrix w_value;

  static AttentionParams zeros(std::size_t key_dim, std::size_t value_dim, std::size_t input_dim);

  std::size_t key_dim() const { return w_query.rows; }
  std::size_t value_dim() const { return w_value.rows; }
  std::size_t input_dim() const { return w_query.cols; }
};

// ---------------------------------------------------------------------------
// Dilated convolution

FeatureMap conv1d_dilated(const FeatureMap& input, const ConvParams& params);
void conv1d_dilated_into(const FeatureMap& input, const ConvParams& params, FeatureMap& out);

/// Returns dL/dinput; adds dL/dweights and dL/dbias into `grad`.
FeatureMap conv1d_dilated_backward(const FeatureMap& input, const ConvParams& params,
                                   const FeatureMap& grad_output, ConvParams& grad);
void conv1d_dilated_backward_into(const FeatureMap& input, const ConvParams& params,
                                  const FeatureMap& grad_output, ConvParams& grad,
                                  FeatureMap& grad_input);

// ---------------------------------------------------------------------------
// Max pooling: window 2, stride 2, floor truncation, ties to the earlier index.

struct PoolResult {
  FeatureMap output;
  std::vector<std::size_t> argmax;  ///< absolute input time index per output cell
};

PoolResult maxpool1d(const FeatureMap& input);
void maxpool1d_into(const FeatureMap& input, FeatureMap& out, std::vector<std::size_t>& argmax);
FeatureMap maxpool1d_backward(const FeatureMap& grad_output, std::span<const std::size_t> argmax,
                              std::size_t input_length);
void maxpool1d_backward_into(const FeatureMap& grad_output, std::span<const std::size_t> argmax,
                             std::size_t input_length, FeatureMap& grad_input);

// ---------------------------------------------------------------------------
// GELU, exact form x * Phi(x).

double gelu(double x);
double gelu_derivative(double x);
void gelu_into(std::span<const double> x, std::span<double> out);
/// grad_in[i] = grad_out[i] * gelu'(pre[i]).
void gelu_backward_into(std::span<const double> pre, std::span<const double> grad_output,
                        std::span<double> grad_input);

// ---------------------------------------------------------------------------
// Fully connected

std::vector<double> linear(std::span<const double> x, const LinearParams& params);
void linear_into(std::span<const double> x, const LinearParams& params, std::span<double> out);
std::vector<double> linear_backward(std::span<const double> x, const LinearParams& params,
                                    std::span<const double> grad_output, LinearParams& grad);
void linear_backward_into(std::span<const double> x, const LinearParams& params,
                          std::span<const double> grad_output, LinearParams& grad,
                          std::span<double> grad_input);

// ---------------------------------------------------------------------------
// Softmax (max-shifted)

std::vector<double> softmax(std::span<const double> z);
void softmax_into(std::span<const double> z, std::span<double> out);
std::vector<double> softmax_backward(std::span<const double> probs,
                                     std::span<const double> grad_output);

// ---------------------------------------------------------------------------
// Single-head scaled dot-product self-attention. The input holds n tokens of
// dimension d as columns (d x n). For query token i the weights over key
// tokens j are softmax_j(q_i . k_j / sqrt(key_dim)), and output column i is
// sum_j weights(i, j) v_j.

struct AttentionCache {
  Matrix query;    ///< key_dim x n
  Matrix key;      ///< key_dim x n
  Matrix value;    ///< value_dim x n
  Matrix weights;  ///< n x n, row i = distribution over keys for query i
};

Matrix self_attention(const Matrix& input, const AttentionParams& params,
                      AttentionCache* cache = nullptr);
void self_attention_into(const Matrix& input, const AttentionParams& params, AttentionCache& cache,
                         Matrix& out);
/// Returns dL/dinput; adds projection gradients into `grad`.
Matrix self_attention_backward(const Matrix& input, const AttentionParams& params,
                               const AttentionCache& cache, const Matrix& grad_output,
                               AttentionParams& grad);

// ---------------------------------------------------------------------------
// Binary cross-entropy on a probability, clamped to [kBceClamp, 1 - kBceClamp].

inline constexpr double kBceClamp = 1e-7;

double bce_loss(double y_hat, int y);
/// dL/dy_hat evaluated at the clamped probability. A prediction saturated on
/// the wrong side keeps a bounded, nonzero gradient instead of going silent.
double bce_loss_gradient(double y_hat, int y);

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t step_count = 0;

  AdamState() = default;
  explicit AdamState(std::size_t size) : first_moment(size, 0.0), second_moment(size, 0.0) {}
};

/// Bias-corrected Adam:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2,
///   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamConfig& config = {});

/// Throws NumericError naming `what` if any value is NaN or infinite.
void require_finite(std::span<const double> values, const char* what);

}  // namespace madcnn::nn
