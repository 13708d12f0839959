#include <catch2/catch_amalgamated.hpp>

#include "encore/heads.hpp"
#include "support/test_utils.hpp"

using namespace encore;

namespace {

double norm_of_row(const Tensor<float>& t, i64 row) {
  double s = 0;
  for (i64 j = 0; j < t.dim(1); ++j)
    s += double(t[row * t.dim(1) + j]) * double(t[row * t.dim(1) + j]);
  return std::sqrt(s);
}

double cosine(const Tensor<float>& a, i64 ra, const Tensor<float>& b, i64 rb) {
  double dot = 0;
  for (i64 j = 0; j < a.dim(1); ++j)
    dot += double(a[ra * a.dim(1) + j]) * double(b[rb * b.dim(1) + j]);
  return dot;
}

}  // namespace

TEST_CASE("style head: unit norm, determinism, input validation") {
  Rng rng(1);
  auto head = StyleHead<float>::standard(rng);
  auto feat = testutil::random_tensor<float>(Shape{3, 512, 8, 8}, 2, 0, 1);

  auto e1 = head.embed(Var<float>::leaf(feat), LayerTag::relu4_1);
  REQUIRE(e1.shape() == Shape{3, 128});
  for (i64 n = 0; n < 3; ++n)
    REQUIRE(norm_of_row(e1.value(), n) == Catch::Approx(1.0).margin(1e-6));

  auto e2 = head.embed(Var<float>::leaf(feat), LayerTag::relu4_1);
  REQUIRE(same_data(e1.value(), e2.value()));

  REQUIRE_THROWS_AS(head.embed(Var<float>::leaf(feat), LayerTag::relu3_1),
                    std::invalid_argument);
  auto bad = Var<float>::leaf(Tensor<float>::zeros(Shape{1, 256, 8, 8}));
  REQUIRE_THROWS_AS(head.embed(bad, LayerTag::relu4_1), std::invalid_argument);
  auto tiny = Var<float>::leaf(Tensor<float>::zeros(Shape{1, 512, 1, 1}));
  REQUIRE_THROWS_AS(head.embed(tiny, LayerTag::relu4_1), std::invalid_argument);
}

TEST_CASE("style head embedding survives 2x spatial tiling") {
  // global pooling suppresses layout: the tiled copy should stay within
  // 0.1 cosine distance of the original
  Rng rng(11);
  auto head = StyleHead<float>::standard(rng);
  auto feat = testutil::random_tensor<float>(Shape{1, 512, 8, 8}, 12, 0, 1);
  Tensor<float> tiled = Tensor<float>::uninitialized(Shape{1, 512, 16, 16});
  for (i64 c = 0; c < 512; ++c)
    for (i64 r = 0; r < 16; ++r)
      for (i64 q = 0; q < 16; ++q)
        tiled.at(0, c, r, q) = feat.at(0, c, r % 8, q % 8);

  auto ea = head.embed(Var<float>::leaf(feat), LayerTag::relu4_1);
  auto eb = head.embed(Var<float>::leaf(tiled), LayerTag::relu4_1);
  const double cos = cosine(ea.value(), 0, eb.value(), 0);
  REQUIRE(1.0 - cos <= 0.1);
}

TEST_CASE("style head is invariant to post-conv spatial permutations") {
  // permuting activations after the conv stage cannot change the pooled
  // embedding beyond float summation order
  Rng rng(21);
  StyleHead<float> head(8, 8, 8, 8, rng);
  auto feat = testutil::random_tensor<float>(Shape{1, 8, 4, 4}, 22, 0, 1);

  // emulate: conv -> permute grid -> pool equals conv -> pool
  auto conv_out = [&](const Tensor<float>& f) {
    auto params = head.parameters();
    Var<float> w, b;
    for (auto& p : params) {
      if (p.name == "conv.weight") w = p.var;
      if (p.name == "conv.bias") b = p.var;
    }
    return conv2d(Var<float>::leaf(f), w, b, 2, true).value();
  };
  Tensor<float> h = conv_out(feat);  // (1, 8, 2, 2)
  Tensor<float> perm = h.clone();
  // rotate the 4 spatial positions
  for (i64 c = 0; c < 8; ++c) {
    const i64 base = c * 4;
    perm[base + 0] = h[base + 3];
    perm[base + 1] = h[base + 0];
    perm[base + 2] = h[base + 1];
    perm[base + 3] = h[base + 2];
  }
  auto pool = [&](const Tensor<float>& t) {
    return global_avg_pool(Var<float>::leaf(t)).value();
  };
  REQUIRE(max_abs_diff(pool(h), pool(perm)) < 1e-6);
}

TEST_CASE("content head: unit norm, pooling identity, layer checks") {
  Rng rng(31);
  auto heads = make_content_heads<float>(default_content_taps(), rng);
  REQUIRE(heads.size() == 4);

  auto& h1 = heads.at(LayerTag::relu1_1);
  auto feat = testutil::random_tensor<float>(Shape{5, 64, 8, 8}, 32, 0, 1);
  auto e = h1.embed(Var<float>::leaf(feat), LayerTag::relu1_1);
  REQUIRE(e.shape() == Shape{5, 256});
  for (i64 n = 0; n < 5; ++n)
    REQUIRE(norm_of_row(e.value(), n) == Catch::Approx(1.0).margin(1e-6));

  // constant feature map: pooled vector is the constant per channel, so the
  // embedding depends only on that value
  Tensor<float> c1 = Tensor<float>::full(Shape{1, 64, 8, 8}, 0.25f);
  Tensor<float> c2 = Tensor<float>::full(Shape{1, 64, 2, 2}, 0.25f);
  auto e1 = h1.embed(Var<float>::leaf(c1), LayerTag::relu1_1);
  auto e2 = h1.embed(Var<float>::leaf(c2), LayerTag::relu1_1);
  REQUIRE(max_abs_diff(e1.value(), e2.value()) < 1e-6);

  REQUIRE_THROWS_AS(h1.embed(Var<float>::leaf(feat), LayerTag::relu2_1),
                    std::invalid_argument);
  auto bad = Var<float>::leaf(Tensor<float>::zeros(Shape{1, 128, 4, 4}));
  REQUIRE_THROWS_AS(h1.embed(bad, LayerTag::relu1_1), std::invalid_argument);

  // one instance per configured tap with matching channel widths
  for (LayerTag t : default_content_taps())
    REQUIRE(heads.at(t).layer() == t);
}

TEST_CASE("head embeddings keep similarities bounded for the nce losses") {
  Rng rng(41);
  auto head = StyleHead<float>::standard(rng);
  auto f1 = testutil::random_tensor<float>(Shape{1, 512, 4, 4}, 42, 0, 2);
  auto f2 = testutil::random_tensor<float>(Shape{1, 512, 4, 4}, 43, 0, 2);
  auto e1 = head.embed(Var<float>::leaf(f1), LayerTag::relu4_1);
  auto e2 = head.embed(Var<float>::leaf(f2), LayerTag::relu4_1);
  const double s = cosine(e1.value(), 0, e2.value(), 0);
  REQUIRE(s >= -1.0 - 1e-6);
  REQUIRE(s <= 1.0 + 1e-6);
}
