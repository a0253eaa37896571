#include <doctest.h>

#include <cmath>
#include <cstring>
#include <map>

#include "madcnn/error.hpp"
#include "madcnn/model.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace madcnn;

namespace {

struct Flags {
  bool m, d, a;
};

// Checkmark rows of the ablation table.
const std::map<std::string, Flags> kTable{{"MAD", {true, true, true}},
                                          {"M", {true, false, false}},
                                          {"MD", {true, true, false}},
                                          {"MA", {true, false, true}},
                                          {"AD", {false, true, true}}};

// Scalar count written out from the layer list, independent of the library.
std::size_t enumerate_count(const ModelConfig& c) {
  const std::size_t in = c.use_modularization ? 2 : 4;
  const std::size_t branches = c.use_modularization ? 2 : 1;
  const std::size_t fc_out = c.use_modularization ? 32 : 64;
  const std::size_t branch = (16 * in * 3 + 16) + (32 * 16 * 3 + 32) + (fc_out * 64 + fc_out);
  const std::size_t attention = c.use_attention ? 3 * 32 * 32 : 0;
  return branches * branch + attention + (64 * 64 + 64) + (2 * 64 + 2);
}

void zero_all(ModelParameters& p) {
  for (auto& t : tensors(p)) std::fill(t.values.begin(), t.values.end(), 0.0);
}

}  // namespace

TEST_SUITE("variants") {
  TEST_CASE("names map to the ablation flag rows") {
    for (const auto& [name, f] : kTable) {
      const ModelConfig c = variant_config(name);
      CHECK(c.use_modularization == f.m);
      CHECK(c.use_dilation == f.d);
      CHECK(c.use_attention == f.a);
      CHECK(variant_name(c) == name);
      CHECK(variant_label(c) == name + "-CNN");
      CHECK(c.dilations == (f.d ? std::array<std::size_t, 2>{4, 8} : std::array<std::size_t, 2>{1, 1}));
    }
    CHECK(variant_config("MAD-CNN") == variant_config("MAD"));
  }

  TEST_CASE("unknown names are input errors") {
    CHECK_THROWS_AS(variant_config("XYZ"), InputError);
    CHECK_THROWS_AS(variant_config(""), InputError);
    ModelConfig c;
    c.use_modularization = false;
    c.use_attention = false;
    CHECK_THROWS_AS(variant_name(c), InputError);
  }

  TEST_CASE("configurations outside the fixed topology are rejected") {
    ModelConfig c;
    c.joints = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ModelConfig{};
    c.classes = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
}

TEST_SUITE("build_model") {
  TEST_CASE("same seed gives byte-identical parameters, another seed differs") {
    const ModelConfig c = variant_config("MAD");
    CHECK(weights_to_json(build_model(c, 42)) == weights_to_json(build_model(c, 42)));
    const auto a = build_model(c, 42), b = build_model(c, 43);
    bool differs = false;
    const auto ta = tensors(a), tb = tensors(b);
    for (std::size_t i = 0; i < ta.size(); ++i) {
      differs |= !std::equal(ta[i].values.begin(), ta[i].values.end(), tb[i].values.begin());
    }
    CHECK(differs);
  }

  TEST_CASE("weights lie within the fan-in bound and biases are zero") {
    const auto p = build_model(variant_config("MAD"), 7);
    for (const auto& t : tensors(p)) {
      const bool bias = t.shape.size() == 1;
      std::size_t fan_in = 1;
      for (std::size_t k = 1; k < t.shape.size(); ++k) fan_in *= t.shape[k];
      const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
      for (double v : t.values) {
        if (bias) {
          CHECK(v == 0.0);
        } else {
          CHECK(std::abs(v) <= bound);
        }
      }
    }
  }

  TEST_CASE("the two joint branches are initialized independently") {
    const auto p = build_model(variant_config("MAD"), 7);
    REQUIRE(p.branches.size() == 2);
    CHECK(p.branches[0].conv1.weights != p.branches[1].conv1.weights);
    CHECK(p.branches[0].fc.weights != p.branches[1].fc.weights);
  }
}

TEST_SUITE("count_parameters") {
  TEST_CASE("matches the enumeration of declared shapes for every variant") {
    for (const auto& name : kVariantNames) {
      const ModelConfig c = variant_config(name);
      std::size_t from_tensors = 0;
      const auto p = build_model(c, 1);
      for (const auto& t : tensors(p)) from_tensors += t.values.size();
      CHECK(count_parameters(c) == enumerate_count(c));
      CHECK(from_tensors == enumerate_count(c));
    }
    CHECK(count_parameters(variant_config("MAD")) == 14882);
  }

  TEST_CASE("the output layer contributes 64*2+2") {
    const auto p = build_model(variant_config("M"), 1);
    CHECK(p.head_output.weights.size() + p.head_output.bias.size() == 130);
  }

  TEST_CASE("dilation adds no parameters") {
    CHECK(count_parameters(variant_config("M")) == count_parameters(variant_config("MD")));
    CHECK(count_parameters(variant_config("MA")) == count_parameters(variant_config("MAD")));
  }
}

TEST_SUITE("forward") {
  TEST_CASE("layer shapes of every variant") {
    Rng rng(5);
    for (const auto& name : kVariantNames) {
      CAPTURE(name);
      const ModelConfig c = variant_config(name);
      const auto p = build_model(c, 3);
      ActivationCache cache;
      forward(p, testutil::random_frame(rng), cache);

      const std::size_t branches = c.use_modularization ? 2 : 1;
      const std::size_t in = c.use_modularization ? 2 : 4;
      REQUIRE(p.branches.size() == branches);
      REQUIRE(cache.branches.size() == branches);
      for (std::size_t b = 0; b < branches; ++b) {
        const Branch& br = p.branches[b];
        const BranchCache& bc = cache.branches[b];
        CHECK(br.conv1.out_channels == 16);
        CHECK(br.conv1.in_channels == in);
        CHECK(br.conv1.kernel_size == 3);
        CHECK(br.conv1.dilation == (c.use_dilation ? 4u : 1u));
        CHECK(br.conv2.out_channels == 32);
        CHECK(br.conv2.in_channels == 16);
        CHECK(br.conv2.kernel_size == 3);
        CHECK(br.conv2.dilation == (c.use_dilation ? 8u : 1u));
        CHECK(bc.input.channels == in);
        CHECK(bc.input.length == 11);
        CHECK((bc.conv1_act.channels == 16 && bc.conv1_act.length == 11));
        CHECK((bc.pool1.channels == 16 && bc.pool1.length == 5));
        CHECK((bc.conv2_act.channels == 32 && bc.conv2_act.length == 5));
        CHECK((bc.pool2.channels == 32 && bc.pool2.length == 2));
        CHECK(br.fc.in_dim == 64);
        CHECK(br.fc.out_dim == (c.use_modularization ? 32u : 64u));
      }
      CHECK(cache.features.size() == 64);
      CHECK(p.attention.has_value() == c.use_attention);
      if (c.use_attention) {
        CHECK(p.attention->key_dim() == 32);
        CHECK(p.attention->value_dim() == 32);
        CHECK(p.attention->input_dim() == 32);
        CHECK((cache.tokens.rows == 32 && cache.tokens.cols == 2));
        CHECK((cache.attention.weights.rows == 2 && cache.attention.weights.cols == 2));
      }
      CHECK(cache.head_input.size() == 64);
      CHECK((p.head_hidden.in_dim == 64 && p.head_hidden.out_dim == 64));
      CHECK((p.head_output.in_dim == 64 && p.head_output.out_dim == 2));
    }
  }

  TEST_CASE("predictions sum to one") {
    Rng rng(6);
    for (const auto& name : kVariantNames) {
      const auto p = build_model(variant_config(name), 9);
      ActivationCache cache;
      for (int i = 0; i < 500; ++i) {
        const Prediction pr = forward(p, testutil::random_frame(rng), cache);
        CHECK(std::abs(pr.p_collision + pr.p_no_collision - 1.0) <= 1e-9);
        CHECK(pr.p_collision > 0.0);
        CHECK(pr.p_collision < 1.0);
      }
    }
  }

  TEST_CASE("zero parameters predict (0.5, 0.5)") {
    auto p = build_model(variant_config("MAD"), 1);
    zero_all(p);
    const Prediction pr = forward(p, data::InputFrame{});
    CHECK(pr.p_collision == 0.5);
    CHECK(pr.p_no_collision == 0.5);
  }

  TEST_CASE("matches a straight-line re-implementation") {
    Rng rng(42);
    const data::InputFrame f = testutil::random_frame(rng);
    for (const auto& name : kVariantNames) {
      CAPTURE(name);
      const auto p = build_model(variant_config(name), 42);
      CHECK(std::abs(forward(p, f).p_collision - oracle::forward(p, f)) <= 1e-12);
    }
  }

  TEST_CASE("is bit-for-bit deterministic") {
    Rng rng(8);
    const auto p = build_model(variant_config("MAD"), 42);
    const data::InputFrame f = testutil::random_frame(rng);
    ActivationCache a, b;
    const double x = forward(p, f, a).p_collision;
    forward(p, testutil::random_frame(rng), a);
    const double y = forward(p, f, a).p_collision;
    const double z = forward(p, f, b).p_collision;
    CHECK(std::memcmp(&x, &y, sizeof x) == 0);
    CHECK(std::memcmp(&x, &z, sizeof x) == 0);
  }

  TEST_CASE("non-finite frames are rejected") {
    const auto p = build_model(variant_config("MAD"), 1);
    data::InputFrame f;
    f.values[3] = std::nan("");
    CHECK_THROWS_AS(forward(p, f), NumericError);
  }
}

TEST_SUITE("backward") {
  TEST_CASE("gradients match central differences for every variant") {
    Rng rng(17);
    for (const auto& name : kVariantNames) {
      CAPTURE(name);
      auto p = build_model(variant_config(name), 100 + rng.index(1000));
      const data::InputFrame f = testutil::tie_free_frame(rng, p);
      for (int target : {0, 1}) CHECK(testutil::model_gradient_error(p, f, target) < 1e-4);
    }
  }

  TEST_CASE("a saturated correct prediction keeps gradients finite and small") {
    auto p = build_model(variant_config("MAD"), 1);
    zero_all(p);
    p.head_output.bias = {-60.0, 60.0};  // p_collision rounds to 1
    ActivationCache cache;
    REQUIRE(forward(p, data::InputFrame{}, cache).p_collision == 1.0);
    ModelParameters g = zeros_like(p);
    const double loss = backward(cache, 1, g);
    CHECK(loss <= 1.1e-7);
    for (const auto& t : tensors(g)) {
      for (double v : t.values) {
        CHECK(std::isfinite(v));
        CHECK(std::abs(v) <= 1.0);
      }
    }
  }

  TEST_CASE("identical frames produce identical gradients") {
    Rng rng(19);
    const auto p = build_model(variant_config("MAD"), 4);
    const data::InputFrame f = testutil::random_frame(rng);
    ModelParameters g1 = zeros_like(p), g2 = zeros_like(p);
    ActivationCache cache;
    forward(p, f, cache);
    backward(cache, 1, g1);
    forward(p, f, cache);
    backward(cache, 1, g2);
    CHECK(weights_to_json(g1) == weights_to_json(g2));
  }

  TEST_CASE("a cache never filled by forward is rejected") {
    const auto p = build_model(variant_config("MAD"), 1);
    ModelParameters g = zeros_like(p);
    CHECK_THROWS_AS(backward(ActivationCache{}, 1, g), InputError);
  }

  TEST_CASE("a mismatched gradient accumulator is rejected") {
    const auto p = build_model(variant_config("MAD"), 1);
    ActivationCache cache;
    forward(p, data::InputFrame{}, cache);
    ModelParameters g = zeros_like(build_model(variant_config("M"), 1));
    CHECK_THROWS_AS(backward(cache, 1, g), ShapeError);
  }
}

TEST_SUITE("predict") {
  TEST_CASE("threshold uses >=") {
    CHECK(decide(0.7) == 1);
    CHECK(decide(0.5) == 1);
    CHECK(decide(0.49) == 0);
  }

  TEST_CASE("threshold outside (0, 1) is rejected") {
    const auto p = build_model(variant_config("MAD"), 1);
    CHECK_THROWS_AS(predict(p, data::InputFrame{}, 0.0), InputError);
    CHECK_THROWS_AS(predict(p, data::InputFrame{}, 1.0), InputError);
  }

  TEST_CASE("zero model predicts collision at the boundary") {
    auto p = build_model(variant_config("MAD"), 1);
    zero_all(p);
    CHECK(predict(p, data::InputFrame{}) == 1);
  }
}

TEST_SUITE("weights file") {
  TEST_CASE("round-trips bit-exactly with and without normalization") {
    testutil::TempDir dir("weights");
    data::NormalizationStats stats;
    for (std::size_t c = 0; c < data::kChannels; ++c) stats.channels[c] = {-0.1 * (c + 1), 1.0 / 3.0 + c};
    for (const auto& name : kVariantNames) {
      const auto p = build_model(variant_config(name), 77);
      const auto path = dir.path() / (std::string(name) + ".json");
      write_weights(path, p, stats);
      const WeightsFile back = read_weights(path);
      CHECK(back.params.config == p.config);
      CHECK(back.params.seed == p.seed);
      REQUIRE(back.normalization.has_value());
      CHECK(*back.normalization == stats);
      const auto ta = tensors(p), tb = tensors(back.params);
      REQUIRE(ta.size() == tb.size());
      for (std::size_t i = 0; i < ta.size(); ++i) {
        CHECK(ta[i].name == tb[i].name);
        CHECK(ta[i].shape == tb[i].shape);
        CHECK(std::memcmp(ta[i].values.data(), tb[i].values.data(),
                          ta[i].values.size() * sizeof(double)) == 0);
      }
      CHECK(weights_to_json(back.params, back.normalization) == weights_to_json(p, stats));
    }
    const auto p = build_model(variant_config("MAD"), 1);
    CHECK_FALSE(weights_from_json(weights_to_json(p)).normalization.has_value());
  }

  TEST_CASE("malformed documents are rejected") {
    CHECK_THROWS_AS(weights_from_json("{not json"), ParseError);
    const auto p = build_model(variant_config("MAD"), 1);
    std::string text = weights_to_json(p);
    const auto pos = text.find("\"version\"");
    REQUIRE(pos != std::string::npos);
    text.replace(text.find(':', pos) + 1, 2, "99");
    CHECK_THROWS_AS(weights_from_json(text), FormatError);
    CHECK_THROWS_AS(read_weights("/nonexistent/weights.json"), IoError);
  }
}
