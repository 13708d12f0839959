#include <catch2/catch_amalgamated.hpp>

#include "encore/losses.hpp"
#include "support/synthetic.hpp"
#include "support/test_utils.hpp"

using namespace encore;

namespace {

// Scalar-loop reference for the multi-positive InfoNCE term, in long double;
// deliberately independent of the production implementation.
long double nce_oracle(const std::vector<long double>& pos_sims,
                       const std::vector<long double>& neg_sims,
                       long double tau) {
  long double total = 0;
  for (long double sp : pos_sims) {
    long double denom = expl(sp / tau);
    for (long double sn : neg_sims) denom += expl(sn / tau);
    total += -logl(expl(sp / tau) / denom);
  }
  return total;
}

template <class T>
std::vector<long double> dots(const Tensor<T>& anchor, const Tensor<T>& rows) {
  std::vector<long double> out;
  const i64 D = anchor.numel();
  for (i64 r = 0; r < rows.dim(0); ++r) {
    long double d = 0;
    for (i64 j = 0; j < D; ++j)
      d += (long double)(anchor[j]) * (long double)(rows[r * D + j]);
    out.push_back(d);
  }
  return out;
}

template <class T>
Tensor<T> unit_rows(Shape s, std::uint64_t seed) {
  Tensor<T> t = testutil::random_tensor<T>(s, seed, -1, 1);
  const i64 D = s[1];
  for (i64 r = 0; r < s[0]; ++r) {
    double n = 0;
    for (i64 j = 0; j < D; ++j) n += double(t[r * D + j]) * double(t[r * D + j]);
    n = std::sqrt(n);
    for (i64 j = 0; j < D; ++j) t[r * D + j] = T(double(t[r * D + j]) / n);
  }
  return t;
}

}  // namespace

TEST_CASE("gram values on hand-computable maps") {
  // 2-channel 2x2 map, all ones: every entry 4/(2*4) = 0.5
  Tensor<float> f = Tensor<float>::full(Shape{2, 2, 2}, 1.f);
  auto g = gram(f);
  REQUIRE(g.shape() == Shape{2, 2});
  for (i64 i = 0; i < 4; ++i) REQUIRE(g[i] == Catch::Approx(0.5));

  // disjoint channel supports: zero off-diagonals
  Tensor<float> d = Tensor<float>::zeros(Shape{2, 2, 2});
  d[0] = 1.f;  // channel 0 only at position 0
  d[7] = 2.f;  // channel 1 only at position 3
  auto gd = gram(d);
  REQUIRE(gd[1] == 0.f);
  REQUIRE(gd[2] == 0.f);

  Tensor<float> bad = Tensor<float>::full(Shape{1, 2, 2}, 1.f);
  bad[0] = std::numeric_limits<float>::infinity();
  REQUIRE_THROWS_AS(gram(bad), std::invalid_argument);
}

TEST_CASE("gram symmetry and positive semidefiniteness") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto f = testutil::random_tensor<float>(Shape{6, 5, 7}, seed, -2, 2);
    auto g = gram(f);
    for (i64 i = 0; i < 6; ++i)
      for (i64 j = 0; j < 6; ++j) REQUIRE(g[i * 6 + j] == g[j * 6 + i]);
    REQUIRE(testutil::min_symmetric_eigenvalue(g) >= -1e-8f);
  }
}

TEST_CASE("style_distance is a pseudo-metric") {
  auto enc = testutil::make_rf1_encoder<float>(5);
  auto a = testutil::synthetic_image<float>(11, 32, 32);
  auto b = testutil::synthetic_image<float>(12, 32, 32);
  const TapSet layers = {LayerTag::relu1_1};

  REQUIRE(style_distance(a, a, enc, layers) == 0.f);
  REQUIRE(style_distance(a, b, enc, layers) ==
          Catch::Approx(style_distance(b, a, enc, layers)));
  REQUIRE(style_distance(a, b, enc, layers) >= 0.f);
}

TEST_CASE("info_nce analytic values") {
  using T = double;
  // one positive, zero negatives: exactly 0
  Tensor<T> anchor = Tensor<T>::from_vector(Shape{2}, {1, 0});
  Tensor<T> pos = Tensor<T>::from_vector(Shape{1, 2}, {1, 0});
  Tensor<T> none;
  REQUIRE(info_nce(anchor, pos, none, 0.07) == 0.0);

  // equal similarities: ln 2
  Tensor<T> neg = Tensor<T>::from_vector(Shape{1, 2}, {1, 0});
  const double ln2 = info_nce(anchor, pos, neg, 0.07);
  REQUIRE(std::abs(ln2 - std::log(2.0)) <= 1e-9);

  // sim_pos = 1, sim_neg = 0 at tau = 0.07
  Tensor<T> neg0 = Tensor<T>::from_vector(Shape{1, 2}, {0, 1});
  const double tiny = info_nce(anchor, pos, neg0, 0.07);
  REQUIRE(std::abs(tiny - 6.2e-7) <= 1e-8);

  REQUIRE_THROWS_AS(info_nce(anchor, Tensor<T>(), neg, 0.07),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(info_nce(anchor, pos, neg, 0.0), std::invalid_argument);
}

TEST_CASE("info_nce matches the loop oracle on random instances") {
  Rng rng(77);
  for (int inst = 0; inst < 40; ++inst) {
    const i64 D = 8 + rng.uniform_int(0, 8);
    const i64 P = 1 + rng.uniform_int(0, 6);
    const i64 Nn = rng.uniform_int(0, 6);
    auto anchor = unit_rows<double>(Shape{1, D}, 1000 + inst).reshape(Shape{D});
    auto pos = unit_rows<double>(Shape{P, D}, 2000 + inst);
    Tensor<double> neg;
    if (Nn > 0) neg = unit_rows<double>(Shape{Nn, D}, 3000 + inst);
    const double tau = 0.05 + rng.next_double() * 0.5;

    const double got = info_nce(anchor, pos, neg, tau);
    const long double want = nce_oracle(
        dots(anchor, pos),
        Nn ? dots(anchor, neg) : std::vector<long double>{}, tau);
    REQUIRE(std::abs(double(want) - got) <=
            1e-5 * std::max(1.0, std::abs(double(want))));
  }
}

TEST_CASE("info_nce monotonicity and temperature covariance") {
  using T = double;
  auto anchor = Tensor<T>::from_vector(Shape{2}, {1, 0});
  auto pos = Tensor<T>::from_vector(Shape{1, 2}, {0.6, 0.8});
  auto neg = Tensor<T>::from_vector(Shape{2, 2}, {0.3, 0.9539392, 0.2, 0.9797959});

  const double base = info_nce(anchor, pos, neg, 0.2);

  // raising a negative similarity raises the loss
  auto neg_hi = neg.clone();
  neg_hi[0] = 0.5;  // increases a . n_0
  REQUIRE(info_nce(anchor, pos, neg_hi, 0.2) > base);

  // raising the positive similarity lowers the loss
  auto pos_hi = pos.clone();
  pos_hi[0] = 0.9;
  pos_hi[1] = std::sqrt(1 - 0.81);
  REQUIRE(info_nce(anchor, pos_hi, neg, 0.2) < base);

  // scaling similarities and tau together changes nothing
  auto anchor2 = anchor.clone();
  for (i64 i = 0; i < 2; ++i) anchor2[i] *= 3.0;
  REQUIRE(info_nce(anchor2, pos, neg, 0.6) == Catch::Approx(base).epsilon(1e-12));
}

TEST_CASE("style_nce matches a per-anchor loop oracle") {
  Rng rng(88);
  for (int inst = 0; inst < 25; ++inst) {
    const i64 B = 1 + rng.uniform_int(0, 4);
    const i64 P = 1 + rng.uniform_int(0, 4);
    const i64 D = 16;
    auto anchors = unit_rows<double>(Shape{B, D}, 4000 + inst);
    auto pos = unit_rows<double>(Shape{B * P, D}, 5000 + inst);
    auto neg = unit_rows<double>(Shape{B, D}, 6000 + inst);
    const double tau = 0.07;

    auto loss = style_nce_loss(Var<double>::leaf(anchors),
                               Var<double>::leaf(pos), Var<double>::leaf(neg),
                               P, tau, false);

    long double want = 0;
    for (i64 b = 0; b < B; ++b) {
      Tensor<double> a = Tensor<double>::uninitialized(Shape{D});
      std::memcpy(a.data(), anchors.data() + b * D, D * sizeof(double));
      Tensor<double> pb = Tensor<double>::uninitialized(Shape{P, D});
      std::memcpy(pb.data(), pos.data() + b * P * D, P * D * sizeof(double));
      want += nce_oracle(dots(a, pb), dots(a, neg), tau);
    }
    want /= B;
    REQUIRE(std::abs(loss.item() - double(want)) <=
            1e-5 * std::max(1.0, std::abs(double(want))));
  }
}

TEST_CASE("patch_nce matches a softmax cross-entropy loop oracle") {
  Rng rng(99);
  for (int inst = 0; inst < 25; ++inst) {
    const i64 B = 1 + rng.uniform_int(0, 3);
    const i64 P = 2 + rng.uniform_int(0, 5);
    const i64 D = 12;
    auto anchors = unit_rows<double>(Shape{B * P, D}, 7000 + inst);
    auto cand = unit_rows<double>(Shape{B * P, D}, 8000 + inst);
    const double tau = 0.07;

    auto loss = patch_nce_loss(Var<double>::leaf(anchors),
                               Var<double>::leaf(cand), B, P, tau, true);

    long double want = 0;
    for (i64 b = 0; b < B; ++b) {
      long double bsum = 0;
      for (i64 i = 0; i < P; ++i) {
        long double denom = 0, num = 0;
        for (i64 j = 0; j < P; ++j) {
          long double dot = 0;
          for (i64 d = 0; d < D; ++d)
            dot += (long double)anchors[(b * P + i) * D + d] *
                   (long double)cand[(b * P + j) * D + d];
          const long double e = expl(dot / tau);
          denom += e;
          if (i == j) num = e;
        }
        bsum += -logl(num / denom);
      }
      want += bsum / P;
    }
    want /= B;
    REQUIRE(std::abs(loss.item() - double(want)) <=
            1e-5 * std::max(1.0, std::abs(double(want))));
  }
}

TEST_CASE("patch_nce requires at least two patches") {
  auto a = unit_rows<double>(Shape{1, 4}, 1);
  REQUIRE_THROWS_AS(
      patch_nce_loss(Var<double>::leaf(a), Var<double>::leaf(a), 1, 1, 0.07),
      std::invalid_argument);
}

TEST_CASE("feature regularizer: zero at identical functions, positive after split") {
  Archive a = testutil::make_reference_archive(7);
  auto ref = Encoder<float>::import_reference(a);
  auto twin = Encoder<float>::import_reference(a);
  auto split = Encoder<float>::split_from(ref, LayerTag::relu4_1);

  auto img = testutil::synthetic_image<float>(13, 64, 64);
  const TapSet layers = {LayerTag::relu4_1};

  REQUIRE(feature_regularizer(twin, ref, img, layers) == 0.f);
  REQUIRE(feature_regularizer(split, ref, img, layers) > 0.f);
}

TEST_CASE("backbone losses: perfect-inversion and identity-pair zeros") {
  auto t = Var<float>::leaf(
      testutil::random_tensor<float>(Shape{1, 512, 8, 8}, 14, 0, 1));
  FeaturePyramid<float> out_pyr, style_pyr;
  out_pyr.set(LayerTag::relu4_1, t);
  style_pyr.set(LayerTag::relu4_1, t);

  auto losses = ast_losses(out_pyr, t, style_pyr, {LayerTag::relu4_1},
                           LayerTag::relu4_1);
  REQUIRE(losses.content.item() == 0.0);
  REQUIRE(losses.style.item() == 0.0);

  // random features: finite, positive
  FeaturePyramid<float> o2, s2;
  o2.set(LayerTag::relu4_1, Var<float>::leaf(testutil::random_tensor<float>(
                                Shape{1, 512, 8, 8}, 15, 0, 1)));
  s2.set(LayerTag::relu4_1, Var<float>::leaf(testutil::random_tensor<float>(
                                Shape{1, 512, 8, 8}, 16, 0.5, 2)));
  auto l2 = ast_losses(o2, t, s2, {LayerTag::relu4_1}, LayerTag::relu4_1);
  REQUIRE(l2.content.item() > 0.0);
  REQUIRE(l2.style.item() > 0.0);
  REQUIRE(std::isfinite(l2.content.item()));
  REQUIRE(std::isfinite(l2.style.item()));
}

TEST_CASE("total_loss accounting and weight validation") {
  auto s = [](double v) { return Var<double>::leaf(Tensor<double>::scalar(v)); };
  LossBreakdown b;
  LossWeights w{1.0, 0.3, 0.3, 10.0};
  auto total = total_loss(s(0.5), s(0.2), s(0.1), s(0.4), s(0.3), w, &b, 7);
  REQUIRE(b.step == 7);
  REQUIRE(total.item() ==
          Catch::Approx(b.recompute_total(10.0, 1.0, 0.3, 0.3)).epsilon(1e-9));

  // degenerate weights reduce to the backbone objective
  LossWeights w0{0.0, 0.0, 0.0, 10.0};
  auto t0 = total_loss(s(0.5), s(0.2), s(0.1), s(0.4), s(0.3), w0, nullptr);
  REQUIRE(t0.item() == Catch::Approx(0.5 + 10.0 * 0.2));

  auto tz = total_loss(s(0), s(0), s(0), s(0), s(0), w, nullptr);
  REQUIRE(tz.item() == 0.0);

  LossWeights bad{-1.0, 0.3, 0.3, 10.0};
  REQUIRE_THROWS_AS(total_loss(s(1), s(1), s(1), s(1), s(1), bad, nullptr),
                    std::invalid_argument);
}

TEST_CASE("image-level loss assemblies run end to end") {
  Archive arch = testutil::make_reference_archive(17);
  auto ref = Encoder<float>::import_reference(arch);
  auto enc = Encoder<float>::split_from(ref, LayerTag::relu4_1);
  Rng rng(18);
  auto shead = StyleHead<float>::standard(rng);
  auto cheads = make_content_heads<float>(default_content_taps(), rng);

  const i64 S = 64;
  auto content = testutil::synthetic_image<float>(19, S, S);
  auto style = testutil::synthetic_image<float>(20, S, S);

  // style contrastive over raw images: B=1, its own content as negative
  Tensor<float> outputs = content.reshape(Shape{1, 3, S, S});
  auto shuffles = generate_style_positives(style, 4, 4, 55);
  Tensor<float> pos = Tensor<float>::uninitialized(Shape{4, 3, S, S});
  for (i64 i = 0; i < 4; ++i)
    std::memcpy(pos.data() + i * 3 * S * S, shuffles[std::size_t(i)].data(),
                std::size_t(3 * S * S) * sizeof(float));
  const float lsc = style_contrastive_loss(
      enc, shead, outputs, pos, 4, content.reshape(Shape{1, 3, S, S}), 0.07f);
  REQUIRE(std::isfinite(lsc));
  REQUIRE(lsc > 0.f);

  // content contrastive: restored == original is finite and positive
  PatchSpec spec = sample_patch_spec(S, S, 4, 16, 66);
  const float lcc = content_contrastive_loss(enc, cheads, content, content,
                                             spec, default_content_taps(),
                                             0.07f);
  REQUIRE(std::isfinite(lcc));
  REQUIRE(lcc > 0.f);

  PatchSpec tiny = sample_patch_spec(S, S, 1, 16, 67);
  REQUIRE_THROWS_AS(
      content_contrastive_loss(enc, cheads, content, content, tiny,
                               default_content_taps(), 0.07f),
      std::invalid_argument);
}
