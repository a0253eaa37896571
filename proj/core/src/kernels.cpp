#include "madcnn/kernels.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "madcnn/error.hpp"

namespace madcnn::nn {

namespace {

void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

// Signed offset of tap k for kernel 3: -d, 0, +d.
inline std::ptrdiff_t tap_offset(std::size_t k, std::size_t dilation) {
  return (static_cast<std::ptrdiff_t>(k) - 1) * static_cast<std::ptrdiff_t>(dilation);
}

// Range of t for which t + offset stays inside [0, length).
inline void valid_range(std::ptrdiff_t offset, std::size_t length, std::size_t& lo,
                        std::size_t& hi) {
  const auto len = static_cast<std::ptrdiff_t>(length);
  const std::ptrdiff_t first = std::max<std::ptrdiff_t>(0, -offset);
  const std::ptrdiff_t last = std::min<std::ptrdiff_t>(len, len - offset);
  lo = static_cast<std::size_t>(first);
  hi = static_cast<std::size_t>(std::max(first, last));
}

// Four independent partial sums break the add dependency chain; the order is
// fixed, so results stay deterministic.
inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

// Offsets and valid output ranges of the three taps for one layer.
struct Taps {
  std::array<std::ptrdiff_t, 3> offset{};
  std::array<std::size_t, 3> lo{};
  std::array<std::size_t, 3> hi{};

  Taps(std::size_t dilation, std::size_t length) {
    for (std::size_t k = 0; k < 3; ++k) {
      offset[k] = tap_offset(k, dilation);
      valid_range(offset[k], length, lo[k], hi[k]);
    }
  }
};

}  // namespace

void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + what);
  }
}

ConvParams ConvParams::zeros(std::size_t out_channels, std::size_t in_channels,
                             std::size_t dilation) {
  ConvParams p;
  p.out_channels = out_channels;
  p.in_channels = in_channels;
  p.kernel_size = kConvKernelSize;
  p.dilation = dilation;
  p.weights.assign(out_channels * in_channels * kConvKernelSize, 0.0);
  p.bias.assign(out_channels, 0.0);
  return p;
}

LinearParams LinearParams::zeros(std::size_t out_dim, std::size_t in_dim) {
  LinearParams p;
  p.out_dim = out_dim;
  p.in_dim = in_dim;
  p.weights.assign(out_dim * in_dim, 0.0);
  p.bias.assign(out_dim, 0.0);
  return p;
}

AttentionParams AttentionParams::zeros(std::size_t key_dim, std::size_t value_dim,
                                       std::size_t input_dim) {
  return AttentionParams{Matrix(key_dim, input_dim), Matrix(key_dim, input_dim),
                         Matrix(value_dim, input_dim)};
}

// ---------------------------------------------------------------------------

void conv1d_dilated_into(const FeatureMap& input, const ConvParams& params, FeatureMap& out) {
  require_shape(input.channels == params.in_channels,
                "conv1d: input has " + std::to_string(input.channels) + " channels, expected " +
                    std::to_string(params.in_channels));
  require_shape(params.kernel_size == kConvKernelSize && params.dilation >= 1,
                "conv1d: kernel must be 3 with dilation >= 1");
  require_shape(params.weights.size() == params.out_channels * params.in_channels * 3 &&
                    params.bias.size() == params.out_channels,
                "conv1d: parameter storage does not match declared shape");
  require_finite(input.values, "conv1d input");

  const std::size_t length = input.length;
  if (out.channels != params.out_channels || out.length != length) {
    out.resize(params.out_channels, length);
  }
  const Taps taps(params.dilation, length);
  const std::size_t cin = params.in_channels;
  for (std::size_t o = 0; o < params.out_channels; ++o) {
    double* __restrict dst = &out.values[o * length];
    std::fill(dst, dst + length, params.bias[o]);
    const double* w = &params.weights[o * cin * 3];
    for (std::size_t i = 0; i < cin; ++i) {
      const double* __restrict src = &input.values[i * length];
      for (std::size_t k = 0; k < 3; ++k) {
        const double wk = w[i * 3 + k];
        const std::ptrdiff_t off = taps.offset[k];
        for (std::size_t t = taps.lo[k]; t < taps.hi[k]; ++t) dst[t] += wk * src[t + off];
      }
    }
  }
}

FeatureMap conv1d_dilated(const FeatureMap& input, const ConvParams& params) {
  FeatureMap out;
  conv1d_dilated_into(input, params, out);
  return out;
}

void conv1d_dilated_backward_into(const FeatureMap& input, const ConvParams& params,
                                  const FeatureMap& grad_output, ConvParams& grad,
                                  FeatureMap& grad_input) {
  require_shape(grad_output.channels == params.out_channels &&
                    grad_output.length == input.length,
                "conv1d backward: gradient shape mismatch");
  require_shape(grad.weights.size() == params.weights.size() &&
                    grad.bias.size() == params.bias.size(),
                "conv1d backward: gradient accumulator shape mismatch");
  const std::size_t length = input.length;
  if (grad_input.channels != input.channels || grad_input.length != length) {
    grad_input.resize(input.channels, length);
  } else {
    std::fill(grad_input.values.begin(), grad_input.values.end(), 0.0);
  }
  const Taps taps(params.dilation, length);
  const std::size_t cin = params.in_channels;
  for (std::size_t o = 0; o < params.out_channels; ++o) {
    const double* __restrict g = &grad_output.values[o * length];
    double bias_sum = 0.0;
    for (std::size_t t = 0; t < length; ++t) bias_sum += g[t];
    grad.bias[o] += bias_sum;
    const double* w = &params.weights[o * cin * 3];
    double* gw = &grad.weights[o * cin * 3];
    for (std::size_t i = 0; i < cin; ++i) {
      const double* __restrict src = &input.values[i * length];
      double* __restrict gin = &grad_input.values[i * length];
      for (std::size_t k = 0; k < 3; ++k) {
        const std::size_t lo = taps.lo[k], hi = taps.hi[k];
        if (lo == hi) continue;
        const std::ptrdiff_t off = taps.offset[k];
        const double wk = w[i * 3 + k];
        double wsum = 0.0;
        for (std::size_t t = lo; t < hi; ++t) wsum += g[t] * src[t + off];
        for (std::size_t t = lo; t < hi; ++t) gin[t + off] += g[t] * wk;
        gw[i * 3 + k] += wsum;
      }
    }
  }
}

FeatureMap conv1d_dilated_backward(const FeatureMap& input, const ConvParams& params,
                                   const FeatureMap& grad_output, ConvParams& grad) {
  FeatureMap grad_input;
  conv1d_dilated_backward_into(input, params, grad_output, grad, grad_input);
  return grad_input;
}

// ---------------------------------------------------------------------------

void maxpool1d_into(const FeatureMap& input, FeatureMap& out, std::vector<std::size_t>& argmax) {
  require_shape(input.length >= 2, "maxpool1d: input length must be >= 2, got " +
                                       std::to_string(input.length));
  const std::size_t out_len = input.length / 2;
  if (out.channels != input.channels || out.length != out_len) {
    out.resize(input.channels, out_len);
  }
  argmax.resize(input.channels * out_len);
  for (std::size_t c = 0; c < input.channels; ++c) {
    const double* src = &input.values[c * input.length];
    for (std::size_t j = 0; j < out_len; ++j) {
      const std::size_t a = 2 * j;
      // Strict comparison keeps the earlier index on ties.
      const std::size_t best = src[a + 1] > src[a] ? a + 1 : a;
      out.values[c * out_len + j] = src[best];
      argmax[c * out_len + j] = best;
    }
  }
}

PoolResult maxpool1d(const FeatureMap& input) {
  PoolResult r;
  maxpool1d_into(input, r.output, r.argmax);
  return r;
}

void maxpool1d_backward_into(const FeatureMap& grad_output, std::span<const std::size_t> argmax,
                             std::size_t input_length, FeatureMap& grad_input) {
  require_shape(argmax.size() == grad_output.values.size() &&
                    grad_output.length == input_length / 2,
                "maxpool1d backward: argmax map does not match gradient");
  if (grad_input.channels != grad_output.channels || grad_input.length != input_length) {
    grad_input.resize(grad_output.channels, input_length);
  } else {
    std::fill(grad_input.values.begin(), grad_input.values.end(), 0.0);
  }
  for (std::size_t c = 0; c < grad_output.channels; ++c) {
    for (std::size_t j = 0; j < grad_output.length; ++j) {
      const std::size_t idx = c * grad_output.length + j;
      grad_input.values[c * input_length + argmax[idx]] += grad_output.values[idx];
    }
  }
}

FeatureMap maxpool1d_backward(const FeatureMap& grad_output, std::span<const std::size_t> argmax,
                              std::size_t input_length) {
  FeatureMap g;
  maxpool1d_backward_into(grad_output, argmax, input_length, g);
  return g;
}

// ---------------------------------------------------------------------------

double gelu(double x) {
  if (!std::isfinite(x)) throw NumericError("gelu: non-finite input");
  return 0.5 * x * std::erfc(-x * std::numbers::sqrt2 / 2.0);
}

double gelu_derivative(double x) {
  // Phi(x) + x phi(x)
  const double cdf = 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0);
  const double pdf = std::exp(-0.5 * x * x) * (std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

void gelu_into(std::span<const double> x, std::span<double> out) {
  require_shape(x.size() == out.size(), "gelu: size mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = gelu(x[i]);
}

void gelu_backward_into(std::span<const double> pre, std::span<const double> grad_output,
                        std::span<double> grad_input) {
  require_shape(pre.size() == grad_output.size() && pre.size() == grad_input.size(),
                "gelu backward: size mismatch");
  for (std::size_t i = 0; i < pre.size(); ++i) {
    grad_input[i] = grad_output[i] * gelu_derivative(pre[i]);
  }
}

// ---------------------------------------------------------------------------

void linear_into(std::span<const double> x, const LinearParams& params, std::span<double> out) {
  require_shape(x.size() == params.in_dim, "linear: input has " + std::to_string(x.size()) +
                                               " entries, expected " +
                                               std::to_string(params.in_dim));
  require_shape(out.size() == params.out_dim, "linear: output size mismatch");
  for (std::size_t o = 0; o < params.out_dim; ++o) {
    out[o] = params.bias[o] + dot(&params.weights[o * params.in_dim], x.data(), params.in_dim);
  }
}

std::vector<double> linear(std::span<const double> x, const LinearParams& params) {
  std::vector<double> out(params.out_dim);
  linear_into(x, params, out);
  return out;
}

void linear_backward_into(std::span<const double> x, const LinearParams& params,
                          std::span<const double> grad_output, LinearParams& grad,
                          std::span<double> grad_input) {
  require_shape(x.size() == params.in_dim && grad_output.size() == params.out_dim &&
                    grad_input.size() == params.in_dim,
                "linear backward: size mismatch");
  std::fill(grad_input.begin(), grad_input.end(), 0.0);
  const std::size_t in = params.in_dim;
  const double* __restrict xs = x.data();
  double* __restrict gin = grad_input.data();
  for (std::size_t o = 0; o < params.out_dim; ++o) {
    const double g = grad_output[o];
    grad.bias[o] += g;
    const double* __restrict row = &params.weights[o * in];
    double* __restrict grow = &grad.weights[o * in];
    for (std::size_t i = 0; i < in; ++i) grow[i] += g * xs[i];
    for (std::size_t i = 0; i < in; ++i) gin[i] += g * row[i];
  }
}

std::vector<double> linear_backward(std::span<const double> x, const LinearParams& params,
                                    std::span<const double> grad_output, LinearParams& grad) {
  std::vector<double> gin(params.in_dim);
  linear_backward_into(x, params, grad_output, grad, gin);
  return gin;
}

// ---------------------------------------------------------------------------

void softmax_into(std::span<const double> z, std::span<double> out) {
  require_shape(!z.empty() && z.size() == out.size(), "softmax: size mismatch");
  const double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - zmax);
    sum += out[i];
  }
  for (double& p : out) p /= sum;
}

std::vector<double> softmax(std::span<const double> z) {
  require_finite(z, "softmax input");
  std::vector<double> out(z.size());
  softmax_into(z, out);
  return out;
}

std::vector<double> softmax_backward(std::span<const double> probs,
                                     std::span<const double> grad_output) {
  require_shape(probs.size() == grad_output.size(), "softmax backward: size mismatch");
  double dot = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) dot += probs[i] * grad_output[i];
  std::vector<double> g(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) g[i] = probs[i] * (grad_output[i] - dot);
  return g;
}

// ---------------------------------------------------------------------------

namespace {

// Column j of X copied to contiguous storage.
void column(const Matrix& x, std::size_t j, std::vector<double>& out) {
  out.resize(x.rows);
  for (std::size_t k = 0; k < x.rows; ++k) out[k] = x.at(k, j);
}

// out = W * X, W (r x d), X (d x n)
void project(const Matrix& w, const Matrix& x, Matrix& out) {
  if (out.rows != w.rows || out.cols != x.cols) out = Matrix(w.rows, x.cols);
  thread_local std::vector<double> col;
  for (std::size_t j = 0; j < x.cols; ++j) {
    column(x, j, col);
    for (std::size_t r = 0; r < w.rows; ++r) out.at(r, j) = dot(&w.values[r * w.cols], col.data(), w.cols);
  }
}

// gw += G X^T ; gx += W^T G
void project_backward(const Matrix& w, const Matrix& x, const Matrix& g, Matrix& gw, Matrix& gx) {
  thread_local std::vector<double> col;
  thread_local std::vector<double> gcol;
  const std::size_t d = w.cols;
  for (std::size_t j = 0; j < x.cols; ++j) {
    column(x, j, col);
    gcol.assign(d, 0.0);
    double* __restrict gc = gcol.data();
    const double* __restrict xc = col.data();
    for (std::size_t r = 0; r < w.rows; ++r) {
      const double grj = g.at(r, j);
      double* __restrict gwr = &gw.values[r * d];
      const double* __restrict wr = &w.values[r * d];
      for (std::size_t k = 0; k < d; ++k) gwr[k] += grj * xc[k];
      for (std::size_t k = 0; k < d; ++k) gc[k] += grj * wr[k];
    }
    for (std::size_t k = 0; k < d; ++k) gx.at(k, j) += gc[k];
  }
}

}  // namespace

void self_attention_into(const Matrix& input, const AttentionParams& params, AttentionCache& cache,
                         Matrix& out) {
  require_shape(input.rows == params.input_dim() && params.w_key.cols == params.input_dim() &&
                    params.w_value.cols == params.input_dim(),
                "self_attention: input dimension " + std::to_string(input.rows) +
                    " does not match projections (" + std::to_string(params.input_dim()) + ")");
  require_shape(params.w_key.rows == params.w_query.rows,
                "self_attention: query and key projections differ in shape");
  require_shape(input.cols >= 1, "self_attention: need at least one token");
  require_finite(input.values, "self_attention input");

  const std::size_t n = input.cols;
  project(params.w_query, input, cache.query);
  project(params.w_key, input, cache.key);
  project(params.w_value, input, cache.value);

  const double scale = 1.0 / std::sqrt(static_cast<double>(params.key_dim()));
  if (cache.weights.rows != n || cache.weights.cols != n) cache.weights = Matrix(n, n);
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < params.key_dim(); ++r) {
        s += cache.query.at(r, i) * cache.key.at(r, j);
      }
      scores[j] = s * scale;
    }
    softmax_into(scores, std::span<double>(&cache.weights.values[i * n], n));
  }

  const std::size_t s = params.value_dim();
  if (out.rows != s || out.cols != n) out = Matrix(s, n);
  for (std::size_t r = 0; r < s; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += cache.weights.at(i, j) * cache.value.at(r, j);
      out.at(r, i) = acc;
    }
  }
}

Matrix self_attention(const Matrix& input, const AttentionParams& params, AttentionCache* cache) {
  AttentionCache local;
  Matrix out;
  self_attention_into(input, params, cache ? *cache : local, out);
  return out;
}

Matrix self_attention_backward(const Matrix& input, const AttentionParams& params,
                               const AttentionCache& cache, const Matrix& grad_output,
                               AttentionParams& grad) {
  const std::size_t n = input.cols;
  const std::size_t s = params.value_dim();
  const std::size_t dk = params.key_dim();
  require_shape(grad_output.rows == s && grad_output.cols == n,
                "self_attention backward: gradient shape mismatch");
  require_shape(cache.weights.rows == n && cache.value.cols == n,
                "self_attention backward: cache does not match input");

  // dV(r, j) = sum_i dZ(r, i) A(i, j);  dA(i, j) = sum_r dZ(r, i) V(r, j)
  Matrix d_value(s, n);
  Matrix d_weights(n, n);
  for (std::size_t r = 0; r < s; ++r) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += grad_output.at(r, i) * cache.weights.at(i, j);
      d_value.at(r, j) = acc;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t r = 0; r < s; ++r) acc += grad_output.at(r, i) * cache.value.at(r, j);
      d_weights.at(i, j) = acc;
    }
  }

  // Row-wise softmax Jacobian, folded with the 1/sqrt(dk) scale.
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  Matrix d_scores(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < n; ++j) dot += cache.weights.at(i, j) * d_weights.at(i, j);
    for (std::size_t j = 0; j < n; ++j) {
      d_scores.at(i, j) = cache.weights.at(i, j) * (d_weights.at(i, j) - dot) * scale;
    }
  }

  Matrix d_query(dk, n);
  Matrix d_key(dk, n);
  for (std::size_t r = 0; r < dk; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc_q = 0.0;
      double acc_k = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        acc_q += d_scores.at(i, j) * cache.key.at(r, j);
        acc_k += d_scores.at(j, i) * cache.query.at(r, j);
      }
      d_query.at(r, i) = acc_q;
      d_key.at(r, i) = acc_k;
    }
  }

  Matrix grad_input(input.rows, n);
  project_backward(params.w_query, input, d_query, grad.w_query, grad_input);
  project_backward(params.w_key, input, d_key, grad.w_key, grad_input);
  project_backward(params.w_value, input, d_value, grad.w_value, grad_input);
  return grad_input;
}

// ---------------------------------------------------------------------------

namespace {
void require_label(int y) {
  if (y != 0 && y != 1) throw InputError("bce: label must be 0 or 1, got " + std::to_string(y));
}
}  // namespace

double bce_loss(double y_hat, int y) {
  require_label(y);
  if (!std::isfinite(y_hat)) throw NumericError("bce: non-finite prediction");
  const double p = std::clamp(y_hat, kBceClamp, 1.0 - kBceClamp);
  return y == 1 ? -std::log(p) : -std::log1p(-p);
}

double bce_loss_gradient(double y_hat, int y) {
  require_label(y);
  if (!std::isfinite(y_hat)) throw NumericError("bce: non-finite prediction");
  const double p = std::clamp(y_hat, kBceClamp, 1.0 - kBceClamp);
  return y == 1 ? -1.0 / p : 1.0 / (1.0 - p);
}

// ---------------------------------------------------------------------------

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamConfig& config) {
  require_shape(params.size() == grads.size(), "adam: gradient size mismatch");
  require_shape(state.first_moment.size() == params.size() &&
                    state.second_moment.size() == params.size(),
                "adam: moment size mismatch");
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  const double step = config.learning_rate / correction1;
  const double sqrt_c2 = std::sqrt(correction2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g * g;
    params[i] -= step * m / (std::sqrt(v) / sqrt_c2 + config.epsilon);
  }
}

}  // namespace madcnn::nn
