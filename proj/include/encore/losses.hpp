#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "encore/augment.hpp"
#include "encore/heads.hpp"
#include "encore/transfer.hpp"

namespace encore {

// ---------------------------------------------------------------------------
// Gram matrices and the style distance
// ---------------------------------------------------------------------------

// G = (1/(C*H*W)) * sum over spatial positions of f f^T;  feat: (C,H,W)
template <class T>
Tensor<T> gram(const Tensor<T>& feat) {
  const Shape& s = feat.shape();
  if (s.ndim() != 3) throw std::invalid_argument("gram: expected CHW");
  if (!feat.all_finite()) throw std::invalid_argument("gram: non-finite input");
  const i64 C = s[0], M = s[1] * s[2];
  Tensor<T> g = Tensor<T>::uninitialized(Shape{C, C});
  blas::gemm(false, true, C, C, M, T(1) / T(C * M), feat.data(), M,
             feat.data(), M, T(0), g.data(), C);
  // mirror the lower triangle so symmetry holds bit-for-bit
  for (i64 i = 0; i < C; ++i)
    for (i64 j = i + 1; j < C; ++j) g[i * C + j] = g[j * C + i];
  return g;
}

template <class T>
T frobenius_distance(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("frobenius_distance: shape mismatch");
  double acc = 0;
  for (i64 i = 0; i < a.numel(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    acc += d * d;
  }
  return T(std::sqrt(acc));
}

// Sum over layers of || G(E(img1)) - G(E(img2)) ||_F. Inference only.
template <class T>
T style_distance(const Tensor<T>& img1, const Tensor<T>& img2,
                 const Encoder<T>& enc, const TapSet& layers) {
  auto as_batched = [](const Tensor<T>& img) {
    if (img.ndim() == 3)
      return img.reshape(Shape{1, img.dim(0), img.dim(1), img.dim(2)});
    return img;
  };
  const Tensor<T> a = as_batched(img1);
  const Tensor<T> b = as_batched(img2);
  auto pa = enc.forward(Var<T>::leaf(a), layers);
  auto pb = enc.forward(Var<T>::leaf(b), layers);
  double total = 0;
  for (LayerTag t : layers) {
    const Tensor<T>& fa = pa.at(t).value();
    const Tensor<T>& fb = pb.at(t).value();
    const Tensor<T> ga =
        gram(fa.reshape(Shape{fa.dim(1), fa.dim(2), fa.dim(3)}));
    const Tensor<T> gb =
        gram(fb.reshape(Shape{fb.dim(1), fb.dim(2), fb.dim(3)}));
    total += double(frobenius_distance(ga, gb));
  }
  return T(total);
}

// ---------------------------------------------------------------------------
// InfoNCE
// ---------------------------------------------------------------------------

namespace detail {

// log(1 + sum_j exp(v_j - u)) with a max-shift; exact 0 for an empty sum
inline double nce_term(double u, const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double m = v[0];
  for (double x : v) m = std::max(m, x);
  double s = 0;
  for (double x : v) s += std::exp(x - m);
  const double z = m - u + std::log(s);
  return z > 30.0 ? z : std::log1p(std::exp(z));
}

}  // namespace detail

// Single-anchor InfoNCE over unit-vector embeddings: each positive term has
// its own denominator containing that positive plus every negative. Returns
// the sum over positives.
template <class T>
T info_nce(const Tensor<T>& anchor, const Tensor<T>& positives,
           const Tensor<T>& negatives, T tau) {
  if (tau <= T(0)) throw std::invalid_argument("info_nce: tau must be > 0");
  if (positives.ndim() != 2 || positives.dim(0) < 1)
    throw std::invalid_argument("info_nce: at least one positive required");
  const i64 D = anchor.numel();
  if (positives.dim(1) != D ||
      (negatives.defined() && negatives.numel() > 0 && negatives.dim(1) != D))
    throw std::invalid_argument("info_nce: embedding dim mismatch");
  const i64 P = positives.dim(0);
  const i64 Nn = negatives.defined() && negatives.numel() > 0 ? negatives.dim(0) : 0;

  std::vector<double> v(static_cast<std::size_t>(Nn));
  for (i64 j = 0; j < Nn; ++j) {
    double dot = 0;
    for (i64 d = 0; d < D; ++d)
      dot += double(anchor[d]) * double(negatives[j * D + d]);
    v[std::size_t(j)] = dot / double(tau);
  }
  double total = 0;
  for (i64 i = 0; i < P; ++i) {
    double dot = 0;
    for (i64 d = 0; d < D; ++d)
      dot += double(anchor[d]) * double(positives[i * D + d]);
    total += detail::nce_term(dot / double(tau), v);
  }
  return T(total);
}

// Batched multi-positive InfoNCE for the style loss. anchors: (B,D) output
// embeddings, positives: (B*P,D) grouped per anchor, negatives: (Bn,D) one
// shared set (the batch's content embeddings). Loss is the per-anchor sum
// over positives (optionally the mean), averaged over the batch.
template <class T>
Var<T> style_nce_loss(const Var<T>& anchors, const Var<T>& positives,
                      const Var<T>& negatives, i64 P, T tau,
                      bool mean_over_positives = false) {
  if (tau <= T(0)) throw std::invalid_argument("style_nce: tau must be > 0");
  const i64 B = anchors.dim(0), D = anchors.dim(1);
  if (P < 1) throw std::invalid_argument("style_nce: at least one positive");
  if (positives.dim(0) != B * P || positives.dim(1) != D)
    throw std::invalid_argument("style_nce: positives shape mismatch");
  const i64 Bn = negatives.dim(0);
  if (negatives.dim(1) != D)
    throw std::invalid_argument("style_nce: negatives shape mismatch");

  const T* pa = anchors.value().data();
  const T* pp = positives.value().data();
  const T* pn = negatives.value().data();

  // similarity caches (scaled by 1/tau) reused in backward
  auto u = std::make_shared<std::vector<double>>(std::size_t(B * P));
  auto v = std::make_shared<std::vector<double>>(std::size_t(B * Bn));
  auto terms = std::make_shared<std::vector<double>>(std::size_t(B * P));

  double loss = 0;
  for (i64 b = 0; b < B; ++b) {
    std::vector<double> vb(static_cast<std::size_t>(Bn));
    for (i64 j = 0; j < Bn; ++j) {
      double dot = 0;
      for (i64 d = 0; d < D; ++d)
        dot += double(pa[b * D + d]) * double(pn[j * D + d]);
      vb[std::size_t(j)] = dot / double(tau);
      (*v)[std::size_t(b * Bn + j)] = vb[std::size_t(j)];
    }
    double bsum = 0;
    for (i64 i = 0; i < P; ++i) {
      double dot = 0;
      for (i64 d = 0; d < D; ++d)
        dot += double(pa[b * D + d]) * double(pp[(b * P + i) * D + d]);
      const double ui = dot / double(tau);
      (*u)[std::size_t(b * P + i)] = ui;
      const double term = detail::nce_term(ui, vb);
      (*terms)[std::size_t(b * P + i)] = term;
      bsum += term;
    }
    loss += mean_over_positives ? bsum / double(P) : bsum;
  }
  loss /= double(B);

  auto node = detail::make_node(
      Tensor<T>::scalar(T(loss)),
      {anchors.handle(), positives.handle(), negatives.handle()}, "style_nce");
  if (node->requires_grad) {
    node->backward = [u, v, terms, B, P, Bn, D, tau,
                      mean_over_positives](Node<T>& nd) {
      const double gscale = double(nd.grad[0]) /
                            (double(B) * (mean_over_positives ? double(P) : 1.0));
      auto& an = *nd.parents[0];
      auto& pn_ = *nd.parents[1];
      auto& nn = *nd.parents[2];
      const T* pa = an.value.data();
      const T* pp = pn_.value.data();
      const T* pneg = nn.value.data();
      T* ga = an.requires_grad ? ensure_grad(an).data() : nullptr;
      T* gp = pn_.requires_grad ? ensure_grad(pn_).data() : nullptr;
      T* gn = nn.requires_grad ? ensure_grad(nn).data() : nullptr;
      const double inv_tau = 1.0 / double(tau);
      std::vector<double> wsum(static_cast<std::size_t>(Bn));
      for (i64 b = 0; b < B; ++b) {
        std::fill(wsum.begin(), wsum.end(), 0.0);
        for (i64 i = 0; i < P; ++i) {
          const double ui = (*u)[std::size_t(b * P + i)];
          const double term = (*terms)[std::size_t(b * P + i)];
          double sig = 0;  // sum over negatives of w_ij
          for (i64 j = 0; j < Bn; ++j) {
            const double w =
                std::exp((*v)[std::size_t(b * Bn + j)] - ui - term);
            wsum[std::size_t(j)] += w;
            sig += w;
            if (ga) {
              const double c = gscale * inv_tau * w;
              for (i64 d = 0; d < D; ++d)
                ga[b * D + d] += T(c * double(pneg[j * D + d]));
            }
          }
          const double cp = -gscale * inv_tau * sig;
          if (gp)
            for (i64 d = 0; d < D; ++d)
              gp[(b * P + i) * D + d] += T(cp * double(pa[b * D + d]));
          if (ga)
            for (i64 d = 0; d < D; ++d)
              ga[b * D + d] += T(cp * double(pp[(b * P + i) * D + d]));
        }
        if (gn) {
          for (i64 j = 0; j < Bn; ++j) {
            const double c = gscale * inv_tau * wsum[std::size_t(j)];
            for (i64 d = 0; d < D; ++d)
              gn[j * D + d] += T(c * double(pa[b * D + d]));
          }
        }
      }
    };
  }
  return Var<T>(node);
}

// Patch-aligned InfoNCE for the identity-preserving content loss. anchors and
// candidates are (B*P, D), grouped per image; for anchor i the positive is
// candidate i and the negatives are the other P-1 candidates of the same
// group (softmax cross-entropy over the group's P x P similarity matrix).
template <class T>
Var<T> patch_nce_loss(const Var<T>& anchors, const Var<T>& candidates, i64 B,
                      i64 P, T tau, bool mean_over_patches = true) {
  if (tau <= T(0)) throw std::invalid_argument("patch_nce: tau must be > 0");
  if (P < 2)
    throw std::invalid_argument(
        "patch_nce: need at least 2 patches (no negatives otherwise)");
  const i64 D = anchors.dim(1);
  if (anchors.dim(0) != B * P || candidates.dim(0) != B * P ||
      candidates.dim(1) != D)
    throw std::invalid_argument("patch_nce: shape mismatch");

  const T* pa = anchors.value().data();
  const T* pc = candidates.value().data();
  auto logits = std::make_shared<std::vector<double>>(std::size_t(B * P * P));

  double loss = 0;
  for (i64 b = 0; b < B; ++b) {
    double bsum = 0;
    for (i64 i = 0; i < P; ++i) {
      double* lrow = logits->data() + (b * P + i) * P;
      double m = -1e300;
      for (i64 j = 0; j < P; ++j) {
        double dot = 0;
        for (i64 d = 0; d < D; ++d)
          dot += double(pa[(b * P + i) * D + d]) *
                 double(pc[(b * P + j) * D + d]);
        lrow[j] = dot / double(tau);
        m = std::max(m, lrow[j]);
      }
      double s = 0;
      for (i64 j = 0; j < P; ++j) s += std::exp(lrow[j] - m);
      bsum += m + std::log(s) - lrow[i];
    }
    loss += mean_over_patches ? bsum / double(P) : bsum;
  }
  loss /= double(B);

  auto node = detail::make_node(Tensor<T>::scalar(T(loss)),
                                {anchors.handle(), candidates.handle()},
                                "patch_nce");
  if (node->requires_grad) {
    node->backward = [logits, B, P, D, tau, mean_over_patches](Node<T>& nd) {
      const double gscale = double(nd.grad[0]) /
                            (double(B) * (mean_over_patches ? double(P) : 1.0));
      auto& an = *nd.parents[0];
      auto& cn = *nd.parents[1];
      const T* pa = an.value.data();
      const T* pc = cn.value.data();
      T* ga = an.requires_grad ? ensure_grad(an).data() : nullptr;
      T* gc = cn.requires_grad ? ensure_grad(cn).data() : nullptr;
      const double inv_tau = 1.0 / double(tau);
      for (i64 b = 0; b < B; ++b) {
        for (i64 i = 0; i < P; ++i) {
          const double* lrow = logits->data() + (b * P + i) * P;
          double m = -1e300;
          for (i64 j = 0; j < P; ++j) m = std::max(m, lrow[j]);
          double s = 0;
          for (i64 j = 0; j < P; ++j) s += std::exp(lrow[j] - m);
          for (i64 j = 0; j < P; ++j) {
            const double soft = std::exp(lrow[j] - m) / s;
            const double dl = gscale * inv_tau * (soft - (i == j ? 1.0 : 0.0));
            if (ga)
              for (i64 d = 0; d < D; ++d)
                ga[(b * P + i) * D + d] += T(dl * double(pc[(b * P + j) * D + d]));
            if (gc)
              for (i64 d = 0; d < D; ++d)
                gc[(b * P + j) * D + d] += T(dl * double(pa[(b * P + i) * D + d]));
          }
        }
      }
    };
  }
  return Var<T>(node);
}

// ---------------------------------------------------------------------------
// objective terms
// ---------------------------------------------------------------------------

// Sum over the designated layers of the per-element-normalized L2 distance
// between refined and reference activations; gradients reach only the
// refined side (the reference pyramid comes from a frozen encoder).
template <class T>
Var<T> feature_regularizer(const FeaturePyramid<T>& refined,
                           const FeaturePyramid<T>& reference,
                           const TapSet& layers) {
  std::vector<std::pair<T, Var<T>>> terms;
  for (LayerTag t : layers)
    terms.emplace_back(T(1), rms_diff_loss(refined.at(t), reference.at(t)));
  return weighted_sum(terms);
}

// Convenience overload: encodes one image with both encoders, returns the
// scalar value.
template <class T>
T feature_regularizer(const Encoder<T>& refined, const Encoder<T>& reference,
                      const Tensor<T>& img, const TapSet& layers) {
  Tensor<T> batched = img.ndim() == 3
                          ? img.reshape(Shape{1, img.dim(0), img.dim(1), img.dim(2)})
                          : img;
  // forward through leaf wrappers; parameters of a trainable refined encoder
  // still build a graph, so take values only
  auto pr = refined.forward(Var<T>::leaf(batched), layers);
  auto po = reference.forward(Var<T>::leaf(batched), layers);
  FeaturePyramid<T> vr, vo;
  for (LayerTag t : layers) {
    vr.set(t, Var<T>::leaf(pr.at(t).value()));
    vo.set(t, Var<T>::leaf(po.at(t).value()));
  }
  return T(feature_regularizer(vr, vo, layers).item());
}

template <class T>
struct AstLosses {
  Var<T> content;
  Var<T> style;
};

// The backbone's own losses. Content: squared-error distance at the decoder
// tap between the re-encoded output and the pre-decoder target t (perfect
// decoder inversion gives exactly 0). Style: summed per-tap channel mean/std
// matching against the style features.
template <class T>
AstLosses<T> ast_losses(const FeaturePyramid<T>& out_pyr, const Var<T>& target_t,
                        const FeaturePyramid<T>& style_pyr,
                        const TapSet& style_taps, LayerTag content_tap) {
  AstLosses<T> l;
  l.content = mse_loss(out_pyr.at(content_tap), target_t);
  std::vector<std::pair<T, Var<T>>> terms;
  for (LayerTag t : style_taps)
    terms.emplace_back(T(1),
                       moment_match_loss(out_pyr.at(t), style_pyr.at(t)));
  l.style = weighted_sum(terms);
  return l;
}

// Per-step record of every objective component.
struct LossBreakdown {
  double ast_content = 0;
  double ast_style = 0;
  double regularizer = 0;
  double style_contrastive = 0;
  double content_contrastive = 0;
  double total = 0;
  i64 step = 0;

  double recompute_total(double lambda_style_ast, double lambda_d,
                         double lambda_sc, double lambda_cc) const {
    return ast_content + lambda_style_ast * ast_style + lambda_d * regularizer +
           lambda_cc * content_contrastive + lambda_sc * style_contrastive;
  }
};

struct LossWeights {
  double lambda_d = 1.0;
  double lambda_sc = 0.3;
  double lambda_cc = 0.3;
  double lambda_style_ast = 10.0;

  void validate() const {
    if (lambda_d < 0 || lambda_sc < 0 || lambda_cc < 0 || lambda_style_ast < 0)
      throw std::invalid_argument("loss weights must be non-negative");
  }
};

// Weighted total per the objective; every component is logged unweighted.
template <class T>
Var<T> total_loss(const Var<T>& ast_content, const Var<T>& ast_style,
                  const Var<T>& regularizer, const Var<T>& style_contrastive,
                  const Var<T>& content_contrastive, const LossWeights& w,
                  LossBreakdown* breakdown = nullptr, i64 step = 0) {
  w.validate();
  Var<T> total = weighted_sum<T>({{T(1), ast_content},
                                  {T(w.lambda_style_ast), ast_style},
                                  {T(w.lambda_d), regularizer},
                                  {T(w.lambda_cc), content_contrastive},
                                  {T(w.lambda_sc), style_contrastive}});
  if (breakdown) {
    breakdown->ast_content = ast_content.item();
    breakdown->ast_style = ast_style.item();
    breakdown->regularizer = regularizer.item();
    breakdown->style_contrastive = style_contrastive.item();
    breakdown->content_contrastive = content_contrastive.item();
    breakdown->total = total.item();
    breakdown->step = step;
  }
  return total;
}

// ---------------------------------------------------------------------------
// image-level convenience assemblies (tests, standalone use)
// ---------------------------------------------------------------------------

// Eq-style assembly over raw images: anchors are the stylized outputs,
// positives the shuffled style copies (P per output), negatives the batch's
// content images (which must include the content image behind each output).
template <class T>
T style_contrastive_loss(const Encoder<T>& enc, const StyleHead<T>& head,
                         const Tensor<T>& outputs, const Tensor<T>& positives,
                         i64 P, const Tensor<T>& content_negatives, T tau,
                         bool mean_over_positives = false) {
  const LayerTag tag = LayerTag::relu4_1;
  auto eo = head.embed(enc.forward(Var<T>::leaf(outputs), {tag}).at(tag), tag);
  auto ep = head.embed(enc.forward(Var<T>::leaf(positives), {tag}).at(tag), tag);
  auto en = head.embed(
      enc.forward(Var<T>::leaf(content_negatives), {tag}).at(tag), tag);
  return T(style_nce_loss(eo, ep, en, P, tau, mean_over_positives).item());
}

// Patch-aligned content loss over one restored/original image pair.
template <class T>
T content_contrastive_loss(const Encoder<T>& enc, const ContentHeads<T>& heads,
                           const Tensor<T>& restored, const Tensor<T>& original,
                           const PatchSpec& spec, const TapSet& taps, T tau,
                           bool mean_over_patches = true) {
  if (spec.count() < 2)
    throw std::invalid_argument(
        "content_contrastive_loss: need at least 2 patches");
  const Tensor<T> pr = extract_patches(restored, spec);
  const Tensor<T> po = extract_patches(original, spec);
  auto pyr_r = enc.forward(Var<T>::leaf(pr), taps);
  auto pyr_o = enc.forward(Var<T>::leaf(po), taps);
  std::vector<std::pair<T, Var<T>>> terms;
  for (LayerTag t : taps) {
    const auto& head = heads.at(t);
    auto ea = head.embed(pyr_r.at(t), t);
    auto ec = head.embed(pyr_o.at(t), t);
    terms.emplace_back(
        T(1), patch_nce_loss(ea, ec, 1, spec.count(), tau, mean_over_patches));
  }
  return T(weighted_sum(terms).item());
}

}  // namespace encore
