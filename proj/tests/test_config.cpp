#include <catch2/catch_amalgamated.hpp>

#include "encore/config.hpp"

using namespace encore;

TEST_CASE("config parsing: comments, whitespace, full coverage") {
  const std::string text = R"(
# a comment
content_dir = /data/content   # trailing comment
style_dir=/data/style
reference_weights = /data/vgg.enca
batch_size = 4
steps = 100
lr = 5e-5
tau = 0.1
positives = 4
shuffle_n = 2
patch_count = 6
patch_size = 32
lambda_d = 2.0
lambda_sc = 0.5
lambda_cc = 0.25
lambda_style_ast = 8
reg_layers = relu3_1, relu4_1
content_taps = relu1_1,relu2_1
supervision = reference
identity_paths = content_only
style_positive_reduction = mean
min_side = 256
crop = 128
seed = 999
checkpoint_every = 10
deterministic = true
grad_clip = 5.0
output_dir = /tmp/out
)";
  TrainingConfig cfg = parse_config_text(text);
  REQUIRE(cfg.content_dir == "/data/content");
  REQUIRE(cfg.batch_size == 4);
  REQUIRE(cfg.lr == Catch::Approx(5e-5));
  REQUIRE(cfg.tau == Catch::Approx(0.1));
  REQUIRE(cfg.reg_layers == TapSet{LayerTag::relu3_1, LayerTag::relu4_1});
  REQUIRE(cfg.content_taps == TapSet{LayerTag::relu1_1, LayerTag::relu2_1});
  REQUIRE(cfg.supervision == Supervision::reference);
  REQUIRE(cfg.identity_paths == IdentityPaths::content_only);
  REQUIRE(cfg.style_positive_mean);
  REQUIRE(cfg.deterministic);
  REQUIRE(cfg.seed == 999);
  cfg.validate();
}

TEST_CASE("unknown keys are rejected by name") {
  REQUIRE_THROWS_WITH(parse_config_text("lamda_d = 1.0\n"),
                      Catch::Matchers::ContainsSubstring("lamda_d"));
  REQUIRE_THROWS_AS(parse_config_text("batch_size 4\n"), std::invalid_argument);
}

TEST_CASE("omitted keys take documented defaults") {
  TrainingConfig cfg = parse_config_text("content_dir = a\nstyle_dir = b\n");
  REQUIRE(cfg.batch_size == 8);
  REQUIRE(cfg.lr == Catch::Approx(1e-4));
  REQUIRE(cfg.tau == Catch::Approx(0.07));
  REQUIRE(cfg.positives == 8);
  REQUIRE(cfg.shuffle_n == 4);
  REQUIRE(cfg.patch_count == 8);
  REQUIRE(cfg.patch_size == 64);
  REQUIRE(cfg.lambda_d == Catch::Approx(1.0));
  REQUIRE(cfg.lambda_sc == Catch::Approx(0.3));
  REQUIRE(cfg.lambda_cc == Catch::Approx(0.3));
  REQUIRE(cfg.lambda_style_ast == Catch::Approx(10.0));
  REQUIRE(cfg.reg_layers == TapSet{LayerTag::relu4_1});
  REQUIRE(cfg.content_taps == default_content_taps());
  REQUIRE(cfg.supervision == Supervision::refined);
  REQUIRE(cfg.identity_paths == IdentityPaths::both);
  REQUIRE_FALSE(cfg.style_positive_mean);
  REQUIRE(cfg.min_side == 512);
  REQUIRE(cfg.crop == 256);
  REQUIRE(cfg.checkpoint_every == 100);
}

TEST_CASE("resolved config reparses to the same digest") {
  TrainingConfig cfg = parse_config_text(
      "content_dir = a\nstyle_dir = b\nbatch_size = 4\ncrop = 128\n"
      "patch_size = 64\nmin_side = 128\n");
  const std::string resolved = resolved_config_text(cfg);
  TrainingConfig again = parse_config_text(resolved);
  REQUIRE(config_digest(cfg) == config_digest(again));
  REQUIRE(resolved_config_text(again) == resolved);
}

TEST_CASE("validation rejects out-of-range settings") {
  TrainingConfig cfg;
  cfg.content_dir = "a";
  cfg.style_dir = "b";
  cfg.validate();

  auto expect_throw = [&](auto mutate) {
    TrainingConfig c = cfg;
    mutate(c);
    REQUIRE_THROWS_AS(c.validate(), std::invalid_argument);
  };
  expect_throw([](TrainingConfig& c) { c.tau = 0; });
  expect_throw([](TrainingConfig& c) { c.batch_size = 0; });
  expect_throw([](TrainingConfig& c) { c.positives = 0; });
  expect_throw([](TrainingConfig& c) { c.lambda_d = -1; });
  expect_throw([](TrainingConfig& c) { c.crop = 100; });       // not 8-divisible
  expect_throw([](TrainingConfig& c) { c.shuffle_n = 7; });    // crop % n != 0
  expect_throw([](TrainingConfig& c) { c.patch_size = 300; }); // > crop
  expect_throw([](TrainingConfig& c) { c.patch_count = 1; });
}
