#pragma once

#include <cstring>
#include <stdexcept>
#include <vector>

#include "encore/ops.hpp"
#include "encore/rng.hpp"
#include "encore/tensor.hpp"

namespace encore {

// n*n block permutation of an image; the source of "same style, different
// content" positives.
struct ShufflePlan {
  i64 n = 1;
  std::vector<i64> permutation;  // bijection on {0..n*n-1}
  std::uint64_t seed = 0;

  static ShufflePlan sample(i64 n, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("ShufflePlan: n must be >= 1");
    ShufflePlan p;
    p.n = n;
    p.seed = seed;
    Rng rng(seed);
    p.permutation = rng.permutation(n * n);
    return p;
  }

  bool is_identity() const {
    for (i64 i = 0; i < i64(permutation.size()); ++i)
      if (permutation[std::size_t(i)] != i) return false;
    return true;
  }

  void validate() const {
    if (i64(permutation.size()) != n * n)
      throw std::invalid_argument("ShufflePlan: permutation size != n*n");
    std::vector<bool> seen(permutation.size(), false);
    for (i64 v : permutation) {
      if (v < 0 || v >= n * n || seen[std::size_t(v)])
        throw std::invalid_argument("ShufflePlan: not a bijection");
      seen[std::size_t(v)] = true;
    }
  }
};

// Rearranges the n*n blocks of img (C,H,W or N,C,H,W with N=1 semantics per
// sample) according to plan. Output block i is input block permutation[i].
template <class T>
Tensor<T> shuffle_blocks(const Tensor<T>& img, const ShufflePlan& plan) {
  plan.validate();
  const Shape& s = img.shape();
  if (s.ndim() != 3 && s.ndim() != 4)
    throw std::invalid_argument("shuffle_blocks: expected CHW or NCHW");
  const i64 N = s.ndim() == 4 ? s[0] : 1;
  const i64 C = s.ndim() == 4 ? s[1] : s[0];
  const i64 H = s.ndim() == 4 ? s[2] : s[1];
  const i64 W = s.ndim() == 4 ? s[3] : s[2];
  if (H % plan.n || W % plan.n)
    throw std::invalid_argument(
        "shuffle_blocks: image size " + std::to_string(H) + "x" +
        std::to_string(W) + " not divisible into " + std::to_string(plan.n) +
        "x" + std::to_string(plan.n) + " blocks");
  const i64 bh = H / plan.n, bw = W / plan.n;
  Tensor<T> out = Tensor<T>::uninitialized(s);
  const T* src = img.data();
  T* dst = out.data();
  for (i64 nc = 0; nc < N * C; ++nc) {
    const T* in = src + nc * H * W;
    T* o = dst + nc * H * W;
    for (i64 bi = 0; bi < plan.n * plan.n; ++bi) {
      const i64 si = plan.permutation[std::size_t(bi)];
      const i64 dr = (bi / plan.n) * bh, dc = (bi % plan.n) * bw;
      const i64 sr = (si / plan.n) * bh, sc = (si % plan.n) * bw;
      for (i64 r = 0; r < bh; ++r)
        std::memcpy(o + (dr + r) * W + dc, in + (sr + r) * W + sc,
                    std::size_t(bw) * sizeof(T));
    }
  }
  return out;
}

// Produces `count` independently shuffled copies of a style image, each from
// its own seeded plan. The unshuffled original is never included.
template <class T>
std::vector<Tensor<T>> generate_style_positives(const Tensor<T>& style_img,
                                                i64 count, i64 n,
                                                std::uint64_t seed) {
  if (count < 1)
    throw std::invalid_argument("generate_style_positives: count must be >= 1");
  std::vector<Tensor<T>> out;
  out.reserve(std::size_t(count));
  for (i64 i = 0; i < count; ++i) {
    const ShufflePlan plan =
        ShufflePlan::sample(n, derive_seed(seed, RngStream::shuffle_plan, i));
    out.push_back(shuffle_blocks(style_img, plan));
  }
  return out;
}

// Shared anchor positions for aligned patch pairs.
struct PatchSpec {
  std::vector<std::pair<i64, i64>> positions;  // (row, col) anchors
  i64 size = 0;

  i64 count() const { return i64(positions.size()); }
};

inline PatchSpec sample_patch_spec(i64 h, i64 w, i64 count, i64 size,
                                   std::uint64_t seed) {
  if (size > h || size > w)
    throw std::invalid_argument("patch size " + std::to_string(size) +
                                " exceeds image side " + std::to_string(h) +
                                "x" + std::to_string(w));
  if (count < 1) throw std::invalid_argument("patch count must be >= 1");
  PatchSpec spec;
  spec.size = size;
  Rng rng(derive_seed(seed, RngStream::patch_positions));
  for (i64 i = 0; i < count; ++i)
    spec.positions.emplace_back(rng.uniform_int(0, h - size + 1),
                                rng.uniform_int(0, w - size + 1));
  return spec;
}

template <class T>
Tensor<T> extract_patches(const Tensor<T>& img, const PatchSpec& spec) {
  const Shape& s = img.shape();
  const bool batched = s.ndim() == 4;
  const i64 C = batched ? s[1] : s[0];
  const i64 H = batched ? s[2] : s[1];
  const i64 W = batched ? s[3] : s[2];
  Tensor<T> out =
      Tensor<T>::uninitialized(Shape{spec.count(), C, spec.size, spec.size});
  for (i64 k = 0; k < spec.count(); ++k) {
    const auto [r0, c0] = spec.positions[std::size_t(k)];
    if (r0 < 0 || c0 < 0 || r0 + spec.size > H || c0 + spec.size > W)
      throw std::invalid_argument("patch window out of bounds");
    for (i64 c = 0; c < C; ++c) {
      const T* src = img.data() + (c * H + r0) * W + c0;
      T* dst = out.data() + (k * C + c) * spec.size * spec.size;
      for (i64 r = 0; r < spec.size; ++r)
        std::memcpy(dst + r * spec.size, src + r * W,
                    std::size_t(spec.size) * sizeof(T));
    }
  }
  return out;
}

// Aligned crops from two same-sized images at identical seeded anchors.
template <class T>
std::tuple<Tensor<T>, Tensor<T>, PatchSpec> sample_aligned_patches(
    const Tensor<T>& img_a, const Tensor<T>& img_b, i64 count, i64 size,
    std::uint64_t seed) {
  if (img_a.shape() != img_b.shape())
    throw std::invalid_argument("sample_aligned_patches: size mismatch");
  const Shape& s = img_a.shape();
  const i64 H = s[s.ndim() - 2], W = s[s.ndim() - 1];
  PatchSpec spec = sample_patch_spec(H, W, count, size, seed);
  return {extract_patches(img_a, spec), extract_patches(img_b, spec), spec};
}

// Graph-op variant: gathers the spec's windows from one item of a batched
// image var (gradients flow back into the source windows).
template <class T>
Var<T> crop_patches(const Var<T>& img, i64 item, const PatchSpec& spec) {
  std::vector<CropRef> refs;
  refs.reserve(std::size_t(spec.count()));
  for (const auto& [r, c] : spec.positions) refs.push_back({item, r, c});
  return stack_crops(img, refs, spec.size);
}

}  // namespace encore
