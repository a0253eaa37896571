#include <doctest.h>

#include <cmath>
#include <numeric>

#include "madcnn/error.hpp"
#include "madcnn/gradcheck.hpp"
#include "madcnn/kernels.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace madcnn;
using namespace madcnn::nn;

namespace {

FeatureMap row(std::initializer_list<double> v) {
  FeatureMap m(1, v.size());
  std::copy(v.begin(), v.end(), m.values.begin());
  return m;
}

ConvParams conv1x1(std::initializer_list<double> w, std::size_t d) {
  ConvParams p = ConvParams::zeros(1, 1, d);
  std::copy(w.begin(), w.end(), p.weights.begin());
  return p;
}

ConvParams random_conv(Rng& rng, std::size_t out, std::size_t in, std::size_t d) {
  ConvParams p = ConvParams::zeros(out, in, d);
  testutil::fill(rng, p.weights);
  testutil::fill(rng, p.bias);
  return p;
}

oracle::Grid to_grid(const FeatureMap& m) {
  oracle::Grid g(m.channels, std::vector<double>(m.length));
  for (std::size_t c = 0; c < m.channels; ++c) {
    for (std::size_t t = 0; t < m.length; ++t) g[c][t] = m.at(c, t);
  }
  return g;
}

oracle::Grid to_grid(const Matrix& m) {
  oracle::Grid g(m.rows, std::vector<double>(m.cols));
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) g[r][c] = m.at(r, c);
  }
  return g;
}

std::vector<oracle::Grid> conv_weights(const ConvParams& p) {
  std::vector<oracle::Grid> w(p.out_channels, oracle::Grid(p.in_channels, std::vector<double>(3)));
  for (std::size_t o = 0; o < p.out_channels; ++o) {
    for (std::size_t i = 0; i < p.in_channels; ++i) {
      for (std::size_t k = 0; k < 3; ++k) w[o][i][k] = p.weight(o, i, k);
    }
  }
  return w;
}

double max_abs_diff(const oracle::Grid& a, const oracle::Grid& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) worst = std::max(worst, std::abs(a[i][j] - b[i][j]));
  }
  return worst;
}

double weighted_sum(std::span<const double> v, std::span<const double> r) {
  return std::inner_product(v.begin(), v.end(), r.begin(), 0.0);
}

AttentionParams random_attention(Rng& rng, std::size_t key, std::size_t value, std::size_t in) {
  AttentionParams p = AttentionParams::zeros(key, value, in);
  testutil::fill(rng, p.w_query.values);
  testutil::fill(rng, p.w_key.values);
  testutil::fill(rng, p.w_value.values);
  return p;
}

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  testutil::fill(rng, m.values);
  return m;
}

}  // namespace

TEST_SUITE("conv1d_dilated") {
  TEST_CASE("identity kernel passes the input through") {
    const FeatureMap out = conv1d_dilated(row({1, 2, 3}), conv1x1({0, 1, 0}, 1));
    CHECK(out.values == std::vector<double>{1, 2, 3});
  }

  TEST_CASE("dilation 2 with outer taps reads zero padding at the edges") {
    const FeatureMap out = conv1d_dilated(row({1, 1, 1, 1, 1}), conv1x1({1, 0, 1}, 2));
    CHECK(out.values == std::vector<double>{1, 1, 2, 1, 1});
  }

  TEST_CASE("zero weights give a constant map of the bias") {
    Rng rng(3);
    ConvParams p = ConvParams::zeros(3, 2, 4);
    p.bias = {0.25, -1.5, 7.0};
    const FeatureMap out = conv1d_dilated(testutil::random_map(rng, 2, 11), p);
    REQUIRE(out.channels == 3);
    REQUIRE(out.length == 11);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t t = 0; t < 11; ++t) CHECK(out.at(c, t) == p.bias[c]);
    }
  }

  TEST_CASE("channel mismatch and non-finite input are rejected") {
    Rng rng(4);
    const ConvParams p = random_conv(rng, 2, 3, 1);
    CHECK_THROWS_AS(conv1d_dilated(testutil::random_map(rng, 2, 5), p), ShapeError);
    FeatureMap bad = testutil::random_map(rng, 3, 5);
    bad.at(1, 2) = std::nan("");
    CHECK_THROWS_AS(conv1d_dilated(bad, p), NumericError);
  }

  TEST_CASE("matches the nested-loop oracle on random cases") {
    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t cin = 1 + rng.index(4), cout = 1 + rng.index(5);
      const std::size_t len = 1 + rng.index(14), d = 1 + rng.index(8);
      const ConvParams p = random_conv(rng, cout, cin, d);
      const FeatureMap x = testutil::random_map(rng, cin, len);
      const auto expected = oracle::conv(to_grid(x), conv_weights(p), p.bias, d);
      CHECK(max_abs_diff(to_grid(conv1d_dilated(x, p)), expected) <= 1e-12);
    }
  }

  TEST_CASE("is linear in its input when the bias is zero") {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
      ConvParams p = random_conv(rng, 4, 2, 1 + rng.index(8));
      std::fill(p.bias.begin(), p.bias.end(), 0.0);
      const FeatureMap x = testutil::random_map(rng, 2, 11), y = testutil::random_map(rng, 2, 11);
      const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
      FeatureMap mix(2, 11);
      for (std::size_t i = 0; i < mix.values.size(); ++i) mix.values[i] = a * x.values[i] + b * y.values[i];
      const FeatureMap fx = conv1d_dilated(x, p), fy = conv1d_dilated(y, p), fm = conv1d_dilated(mix, p);
      for (std::size_t i = 0; i < fm.values.size(); ++i) {
        CHECK(std::abs(fm.values[i] - (a * fx.values[i] + b * fy.values[i])) <= 1e-12);
      }
    }
  }

  TEST_CASE("gradients match central differences (d=4, length 11)") {
    Rng rng(13);
    ConvParams p = random_conv(rng, 3, 2, 4);
    FeatureMap x = testutil::random_map(rng, 2, 11);
    std::vector<double> r(3 * 11);
    testutil::fill(rng, r);
    FeatureMap gout(3, 11);
    gout.values = r;

    ConvParams grad = ConvParams::zeros(3, 2, 4);
    const FeatureMap gin = conv1d_dilated_backward(x, p, gout, grad);

    auto input_loss = [&](std::span<const double> v) {
      FeatureMap m(2, 11);
      std::copy(v.begin(), v.end(), m.values.begin());
      return weighted_sum(conv1d_dilated(m, p).values, r);
    };
    CHECK(gradient_check(input_loss, x.values, gin.values).max_relative_error < 1e-5);

    auto weight_loss = [&](std::span<const double> v) {
      ConvParams q = p;
      std::copy(v.begin(), v.end(), q.weights.begin());
      return weighted_sum(conv1d_dilated(x, q).values, r);
    };
    CHECK(gradient_check(weight_loss, p.weights, grad.weights).max_relative_error < 1e-5);

    auto bias_loss = [&](std::span<const double> v) {
      ConvParams q = p;
      std::copy(v.begin(), v.end(), q.bias.begin());
      return weighted_sum(conv1d_dilated(x, q).values, r);
    };
    CHECK(gradient_check(bias_loss, p.bias, grad.bias).max_relative_error < 1e-5);
  }
}

TEST_SUITE("maxpool1d") {
  TEST_CASE("odd length drops the last element") {
    const PoolResult r = maxpool1d(row({1, 3, 2, 5, 4}));
    CHECK(r.output.values == std::vector<double>{3, 5});
    CHECK(r.argmax == std::vector<std::size_t>{1, 3});
  }

  TEST_CASE("ties resolve to the earlier index") {
    const PoolResult r = maxpool1d(row({7, 7}));
    CHECK(r.output.values == std::vector<double>{7});
    CHECK(r.argmax == std::vector<std::size_t>{0});
  }

  TEST_CASE("increasing input keeps the second of each pair") {
    CHECK(maxpool1d(row({1, 2, 3, 4})).output.values == std::vector<double>{2, 4});
  }

  TEST_CASE("length below 2 is a shape error") {
    CHECK_THROWS_AS(maxpool1d(row({1})), ShapeError);
  }

  TEST_CASE("backward routes each gradient to its argmax") {
    const PoolResult r = maxpool1d(row({1, 3, 2, 5, 4}));
    const FeatureMap g = maxpool1d_backward(row({10, 20}), r.argmax, 5);
    CHECK(g.values == std::vector<double>{0, 10, 0, 20, 0});
  }
}

TEST_SUITE("gelu") {
  TEST_CASE("reference values") {
    CHECK(gelu(0.0) == 0.0);
    CHECK(gelu(1.0) == doctest::Approx(oracle::kGelu1).epsilon(1e-14));
    CHECK(std::abs(gelu(1.0) - 0.841345) < 1e-5);
    CHECK(gelu(-1.0) == doctest::Approx(oracle::kGeluMinus1).epsilon(1e-14));
    CHECK(gelu(0.5) == doctest::Approx(oracle::kGeluHalf).epsilon(1e-14));
    CHECK(std::abs(gelu(10.0) - 10.0) < 1e-6);
  }

  TEST_CASE("non-finite input is rejected") {
    CHECK_THROWS_AS(gelu(std::numeric_limits<double>::infinity()), NumericError);
  }

  TEST_CASE("derivative matches central differences") {
    Rng rng(21);
    std::vector<double> x(40), r(40), gin(40);
    testutil::fill(rng, x, 4.0);
    testutil::fill(rng, r);
    gelu_backward_into(x, r, gin);
    auto loss = [&](std::span<const double> v) {
      std::vector<double> y(v.size());
      gelu_into(v, y);
      return weighted_sum(y, r);
    };
    CHECK(gradient_check(loss, x, gin).max_relative_error < 1e-6);
  }
}

TEST_SUITE("linear") {
  TEST_CASE("identity weights and zero bias return the input") {
    LinearParams p = LinearParams::zeros(3, 3);
    for (std::size_t i = 0; i < 3; ++i) p.weights[i * 3 + i] = 1.0;
    const std::vector<double> x{0.5, -2.0, 9.0};
    CHECK(linear(x, p) == x);
  }

  TEST_CASE("zero weights return the bias") {
    LinearParams p = LinearParams::zeros(2, 4);
    p.bias = {3.0, -1.0};
    CHECK(linear(std::vector<double>{1, 2, 3, 4}, p) == p.bias);
  }

  TEST_CASE("hand-computed 1x2 product") {
    LinearParams p = LinearParams::zeros(1, 2);
    p.weights = {1, 2};
    p.bias = {1};
    CHECK(linear(std::vector<double>{3, 4}, p) == std::vector<double>{12});
  }

  TEST_CASE("dimension mismatch is a shape error") {
    CHECK_THROWS_AS(linear(std::vector<double>{1, 2, 3}, LinearParams::zeros(2, 2)), ShapeError);
  }

  TEST_CASE("random 3x4 gradients match central differences") {
    Rng rng(31);
    LinearParams p = LinearParams::zeros(3, 4);
    testutil::fill(rng, p.weights);
    testutil::fill(rng, p.bias);
    std::vector<double> x(4), r(3);
    testutil::fill(rng, x);
    testutil::fill(rng, r);
    LinearParams grad = LinearParams::zeros(3, 4);
    const std::vector<double> gin = linear_backward(x, p, r, grad);

    auto in_loss = [&](std::span<const double> v) { return weighted_sum(linear(v, p), r); };
    CHECK(gradient_check(in_loss, x, gin).max_relative_error < 1e-6);
    auto w_loss = [&](std::span<const double> v) {
      LinearParams q = p;
      std::copy(v.begin(), v.end(), q.weights.begin());
      return weighted_sum(linear(x, q), r);
    };
    CHECK(gradient_check(w_loss, p.weights, grad.weights).max_relative_error < 1e-6);
    auto b_loss = [&](std::span<const double> v) {
      LinearParams q = p;
      std::copy(v.begin(), v.end(), q.bias.begin());
      return weighted_sum(linear(x, q), r);
    };
    CHECK(gradient_check(b_loss, p.bias, grad.bias).max_relative_error < 1e-6);
  }
}

TEST_SUITE("softmax") {
  TEST_CASE("equal logits split evenly") {
    for (double c : {-50.0, 0.0, 3.0, 700.0}) {
      CHECK(softmax(std::vector<double>{c, c}) == std::vector<double>{0.5, 0.5});
    }
  }

  TEST_CASE("shift invariance") {
    const std::vector<double> z{0.3, -1.2, 2.5};
    const auto a = softmax(z);
    const auto b = softmax(std::vector<double>{z[0] + 40, z[1] + 40, z[2] + 40});
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);
  }

  TEST_CASE("closed form for [ln 2, 0]") {
    const auto p = softmax(std::vector<double>{std::log(2.0), 0.0});
    CHECK(std::abs(p[0] - 2.0 / 3.0) < 1e-12);
    CHECK(std::abs(p[1] - 1.0 / 3.0) < 1e-12);
  }

  TEST_CASE("outputs are positive and sum to one") {
    Rng rng(41);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> z(1 + rng.index(6));
      testutil::fill(rng, z, 30.0);
      const auto p = softmax(z);
      double sum = 0.0;
      for (double v : p) {
        CHECK(v > 0.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }

  TEST_CASE("backward matches central differences") {
    Rng rng(42);
    std::vector<double> z(5), r(5);
    testutil::fill(rng, z, 2.0);
    testutil::fill(rng, r);
    const auto gin = softmax_backward(softmax(z), r);
    auto loss = [&](std::span<const double> v) { return weighted_sum(softmax(v), r); };
    CHECK(gradient_check(loss, z, gin).max_relative_error < 1e-6);
  }
}

TEST_SUITE("self_attention") {
  TEST_CASE("a single token returns its value projection") {
    Rng rng(51);
    const AttentionParams p = random_attention(rng, 4, 3, 5);
    const Matrix x = random_matrix(rng, 5, 1);
    AttentionCache cache;
    const Matrix z = self_attention(x, p, &cache);
    CHECK(cache.weights.values == std::vector<double>{1.0});
    CHECK(z.values == cache.value.values);
    const auto expected = oracle::matmul(to_grid(p.w_value), to_grid(x));
    CHECK(max_abs_diff(to_grid(z), expected) <= 1e-15);
  }

  TEST_CASE("identical tokens give uniform weights") {
    Rng rng(52);
    const AttentionParams p = random_attention(rng, 4, 4, 3);
    Matrix x(3, 4);
    for (std::size_t r = 0; r < 3; ++r) {
      const double v = rng.uniform(-1, 1);
      for (std::size_t c = 0; c < 4; ++c) x.at(r, c) = v;
    }
    AttentionCache cache;
    const Matrix z = self_attention(x, p, &cache);
    for (double w : cache.weights.values) CHECK(w == doctest::Approx(0.25).epsilon(1e-14));
    const auto vx = oracle::matmul(to_grid(p.w_value), to_grid(x));
    CHECK(max_abs_diff(to_grid(z), vx) <= 1e-12);
  }

  TEST_CASE("matches the three-product oracle on random cases") {
    Rng rng(53);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t d = 1 + rng.index(6), n = 1 + rng.index(4);
      const std::size_t dk = 1 + rng.index(6), dv = 1 + rng.index(6);
      const AttentionParams p = random_attention(rng, dk, dv, d);
      const Matrix x = random_matrix(rng, d, n);
      const auto expected = oracle::attention(to_grid(x), to_grid(p.w_query), to_grid(p.w_key),
                                              to_grid(p.w_value));
      CHECK(max_abs_diff(to_grid(self_attention(x, p)), expected) <= 1e-12);
    }
  }

  TEST_CASE("weight rows sum to one and outputs lie in the hull of the values") {
    Rng rng(54);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t n = 1 + rng.index(4);
      const AttentionParams p = random_attention(rng, 3, 3, 3);
      const Matrix x = random_matrix(rng, 3, n);
      AttentionCache cache;
      const Matrix z = self_attention(x, p, &cache);
      for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) sum += cache.weights.at(i, j);
        CHECK(std::abs(sum - 1.0) < 1e-12);
      }
      for (std::size_t r = 0; r < z.rows; ++r) {
        double lo = cache.value.at(r, 0), hi = lo;
        for (std::size_t j = 1; j < n; ++j) {
          lo = std::min(lo, cache.value.at(r, j));
          hi = std::max(hi, cache.value.at(r, j));
        }
        for (std::size_t i = 0; i < n; ++i) {
          CHECK(z.at(r, i) >= lo - 1e-12);
          CHECK(z.at(r, i) <= hi + 1e-12);
        }
      }
    }
  }

  TEST_CASE("dimension mismatch is a shape error") {
    Rng rng(55);
    const AttentionParams p = random_attention(rng, 2, 2, 3);
    CHECK_THROWS_AS(self_attention(random_matrix(rng, 4, 2), p), ShapeError);
  }

  TEST_CASE("gradients match central differences") {
    Rng rng(56);
    const AttentionParams p = random_attention(rng, 4, 3, 5);
    Matrix x = random_matrix(rng, 5, 2);
    std::vector<double> r(3 * 2);
    testutil::fill(rng, r);
    Matrix gout(3, 2);
    gout.values = r;

    AttentionCache cache;
    self_attention(x, p, &cache);
    AttentionParams grad = AttentionParams::zeros(4, 3, 5);
    const Matrix gin = self_attention_backward(x, p, cache, gout, grad);

    auto in_loss = [&](std::span<const double> v) {
      Matrix m(5, 2);
      std::copy(v.begin(), v.end(), m.values.begin());
      return weighted_sum(self_attention(m, p).values, r);
    };
    CHECK(gradient_check(in_loss, x.values, gin.values).max_relative_error < 1e-6);

    const auto check_projection = [&](Matrix AttentionParams::*member) {
      AttentionParams q = p;
      auto loss = [&](std::span<const double> v) {
        std::copy(v.begin(), v.end(), (q.*member).values.begin());
        return weighted_sum(self_attention(x, q).values, r);
      };
      std::vector<double> w = (p.*member).values;
      return gradient_check(loss, w, (grad.*member).values).max_relative_error;
    };
    CHECK(check_projection(&AttentionParams::w_query) < 1e-6);
    CHECK(check_projection(&AttentionParams::w_key) < 1e-6);
    CHECK(check_projection(&AttentionParams::w_value) < 1e-6);
  }
}

TEST_SUITE("bce") {
  TEST_CASE("perfect prediction costs at most the clamp floor") {
    CHECK(bce_loss(1.0, 1) <= 1.1e-7);
    CHECK(bce_loss(0.0, 0) <= 1.1e-7);
    CHECK(bce_loss(1.0, 1) == doctest::Approx(oracle::kBceClampedHit).epsilon(1e-9));
  }

  TEST_CASE("midpoint costs ln 2 for either label") {
    CHECK(bce_loss(0.5, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(bce_loss(0.5, 1) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  }

  TEST_CASE("total miss is capped by the clamp") {
    CHECK(bce_loss(0.0, 1) == doctest::Approx(oracle::kBceClampedMiss).epsilon(1e-14));
    CHECK(std::abs(bce_loss(0.0, 1) - 16.1181) < 1e-4);
  }

  TEST_CASE("labels outside {0, 1} are rejected") {
    CHECK_THROWS_AS(bce_loss(0.5, 2), InputError);
    CHECK_THROWS_AS(bce_loss(0.5, -1), InputError);
  }

  TEST_CASE("loss is non-negative and zero only at the clamped optimum") {
    Rng rng(61);
    for (int i = 0; i < 1000; ++i) {
      const double p = rng.uniform();
      CHECK(bce_loss(p, 0) >= 0.0);
      CHECK(bce_loss(p, 1) > 0.0);
    }
  }

  TEST_CASE("gradient is the derivative inside the clamp and bounded outside") {
    Rng rng(62);
    for (int i = 0; i < 50; ++i) {
      std::vector<double> p{rng.uniform(0.05, 0.95)};
      for (int y : {0, 1}) {
        const std::vector<double> g{bce_loss_gradient(p[0], y)};
        auto loss = [&](std::span<const double> v) { return bce_loss(v[0], y); };
        CHECK(gradient_check(loss, p, g).max_relative_error < 1e-6);
      }
    }
    CHECK(std::abs(bce_loss_gradient(0.0, 1)) <= 1.0 / kBceClamp);
    CHECK(std::isfinite(bce_loss_gradient(0.0, 1)));
    CHECK(bce_loss_gradient(0.0, 1) < 0.0);
    CHECK(bce_loss_gradient(1.0, 0) > 0.0);
  }
}

TEST_SUITE("adam") {
  TEST_CASE("zero gradient on a fresh state leaves parameters unchanged") {
    std::vector<double> p{1.0, -2.0, 3.5};
    const auto before = p;
    AdamState s(3);
    adam_step(p, std::vector<double>{0, 0, 0}, s);
    CHECK(p == before);
    CHECK(s.step_count == 1);
  }

  TEST_CASE("first step with g = 4 moves by lr * g / (g + eps)") {
    std::vector<double> p{0.0};
    AdamState s(1);
    adam_step(p, std::vector<double>{4.0}, s);
    CHECK(p[0] == doctest::Approx(-oracle::kAdamFirstStepG4).epsilon(1e-14));
    CHECK(s.first_moment[0] == doctest::Approx(0.4));
    CHECK(s.second_moment[0] == doctest::Approx(0.016));
  }

  TEST_CASE("identical tensors with identical gradients update identically") {
    Rng rng(71);
    std::vector<double> a(16), g(16);
    testutil::fill(rng, a);
    auto b = a;
    AdamState sa(16), sb(16);
    for (int step = 0; step < 10; ++step) {
      testutil::fill(rng, g);
      adam_step(a, g, sa);
      adam_step(b, g, sb);
    }
    CHECK(a == b);
  }

  TEST_CASE("second moments stay non-negative") {
    Rng rng(72);
    std::vector<double> p(8), g(8);
    AdamState s(8);
    for (int step = 0; step < 20; ++step) {
      testutil::fill(rng, g, 5.0);
      adam_step(p, g, s);
    }
    for (double v : s.second_moment) CHECK(v >= 0.0);
  }

  TEST_CASE("shape mismatch is rejected") {
    std::vector<double> p(3);
    AdamState s(3);
    CHECK_THROWS_AS(adam_step(p, std::vector<double>(2), s), ShapeError);
  }
}
