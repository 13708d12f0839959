#pragma once

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

#include "encore/blas.hpp"
#include "encore/graph.hpp"

namespace encore {

namespace detail {

template <class T>
std::shared_ptr<Node<T>> make_node(Tensor<T> value,
                                   std::vector<std::shared_ptr<Node<T>>> parents,
                                   const char* op) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = op;
  for (auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->parents = std::move(parents);
  return n;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise / structural ops
// ---------------------------------------------------------------------------

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("add: shape mismatch");
  Tensor<T> out = Tensor<T>::uninitialized(a.shape());
  const i64 n = out.numel();
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  T* po = out.data();
#pragma omp parallel for schedule(static) if (n > 1 << 15)
  for (i64 i = 0; i < n; ++i) po[i] = pa[i] + pb[i];

  auto node = detail::make_node(std::move(out), {a.handle(), b.handle()}, "add");
  if (node->requires_grad) {
    node->backward = [](Node<T>& nd) {
      const T* g = nd.grad.data();
      const i64 m = nd.grad.numel();
      for (auto& p : nd.parents) {
        if (!p->requires_grad) continue;
        T* pg = ensure_grad(*p).data();
        for (i64 i = 0; i < m; ++i) pg[i] += g[i];
      }
    };
  }
  return Var<T>(node);
}

// alpha*a + (1-alpha)*b
template <class T>
Var<T> blend(const Var<T>& a, const Var<T>& b, T alpha) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("blend: shape mismatch");
  Tensor<T> out = Tensor<T>::uninitialized(a.shape());
  const i64 n = out.numel();
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  T* po = out.data();
  const T beta = T(1) - alpha;
#pragma omp parallel for schedule(static) if (n > 1 << 15)
  for (i64 i = 0; i < n; ++i) po[i] = alpha * pa[i] + beta * pb[i];

  auto node = detail::make_node(std::move(out), {a.handle(), b.handle()}, "blend");
  if (node->requires_grad) {
    node->backward = [alpha, beta](Node<T>& nd) {
      const T* g = nd.grad.data();
      const i64 m = nd.grad.numel();
      if (nd.parents[0]->requires_grad) {
        T* pg = ensure_grad(*nd.parents[0]).data();
        for (i64 i = 0; i < m; ++i) pg[i] += alpha * g[i];
      }
      if (nd.parents[1]->requires_grad) {
        T* pg = ensure_grad(*nd.parents[1]).data();
        for (i64 i = 0; i < m; ++i) pg[i] += beta * g[i];
      }
    };
  }
  return Var<T>(node);
}

template <class T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = Tensor<T>::uninitialized(x.shape());
  const i64 n = out.numel();
  const T* px = x.value().data();
  T* po = out.data();
#pragma omp parallel for schedule(static) if (n > 1 << 15)
  for (i64 i = 0; i < n; ++i) po[i] = px[i] > T(0) ? px[i] : T(0);

  auto node = detail::make_node(std::move(out), {x.handle()}, "relu");
  if (node->requires_grad) {
    node->backward = [](Node<T>& nd) {
      const T* g = nd.grad.data();
      const T* y = nd.value.data();
      T* pg = ensure_grad(*nd.parents[0]).data();
      const i64 m = nd.grad.numel();
#pragma omp parallel for schedule(static) if (m > 1 << 15)
      for (i64 i = 0; i < m; ++i) pg[i] += y[i] > T(0) ? g[i] : T(0);
    };
  }
  return Var<T>(node);
}

// 2x2 max pooling, stride 2; input spatial dims must be even
template <class T>
Var<T> maxpool2(const Var<T>& x) {
  const Shape& s = x.shape();
  if (s.ndim() != 4) throw std::invalid_argument("maxpool2: expected NCHW");
  const i64 N = s[0], C = s[1], H = s[2], W = s[3];
  if (H % 2 || W % 2)
    throw std::invalid_argument("maxpool2: spatial dims must be even, got " +
                                s.str());
  const i64 Ho = H / 2, Wo = W / 2;
  Tensor<T> out = Tensor<T>::uninitialized(Shape{N, C, Ho, Wo});
  auto codes = std::make_shared<std::vector<std::uint8_t>>(
      std::size_t(N * C * Ho * Wo));
  const T* px = x.value().data();
  T* po = out.data();
  std::uint8_t* pc = codes->data();
#pragma omp parallel for schedule(static)
  for (i64 nc = 0; nc < N * C; ++nc) {
    const T* in = px + nc * H * W;
    T* o = po + nc * Ho * Wo;
    std::uint8_t* cd = pc + nc * Ho * Wo;
    for (i64 r = 0; r < Ho; ++r) {
      for (i64 c = 0; c < Wo; ++c) {
        const i64 base = (2 * r) * W + 2 * c;
        T best = in[base];
        std::uint8_t code = 0;
        const T v1 = in[base + 1];
        if (v1 > best) { best = v1; code = 1; }
        const T v2 = in[base + W];
        if (v2 > best) { best = v2; code = 2; }
        const T v3 = in[base + W + 1];
        if (v3 > best) { best = v3; code = 3; }
        o[r * Wo + c] = best;
        cd[r * Wo + c] = code;
      }
    }
  }

  auto node = detail::make_node(std::move(out), {x.handle()}, "maxpool2");
  if (node->requires_grad) {
    node->backward = [codes, N, C, H, W, Ho, Wo](Node<T>& nd) {
      const T* g = nd.grad.data();
      T* pg = ensure_grad(*nd.parents[0]).data();
      const std::uint8_t* pc = codes->data();
#pragma omp parallel for schedule(static)
      for (i64 nc = 0; nc < N * C; ++nc) {
        const T* go = g + nc * Ho * Wo;
        T* gi = pg + nc * H * W;
        const std::uint8_t* cd = pc + nc * Ho * Wo;
        for (i64 r = 0; r < Ho; ++r) {
          for (i64 c = 0; c < Wo; ++c) {
            const std::uint8_t code = cd[r * Wo + c];
            const i64 base = (2 * r) * W + 2 * c;
            gi[base + (code & 1) + (code >> 1) * W] += go[r * Wo + c];
          }
        }
      }
    };
  }
  return Var<T>(node);
}

// nearest-neighbor 2x upsampling
template <class T>
Var<T> upsample2(const Var<T>& x) {
  const Shape& s = x.shape();
  if (s.ndim() != 4) throw std::invalid_argument("upsample2: expected NCHW");
  const i64 N = s[0], C = s[1], H = s[2], W = s[3];
  const i64 Ho = H * 2, Wo = W * 2;
  Tensor<T> out = Tensor<T>::uninitialized(Shape{N, C, Ho, Wo});
  const T* px = x.value().data();
  T* po = out.data();
#pragma omp parallel for schedule(static)
  for (i64 nc = 0; nc < N * C; ++nc) {
    const T* in = px + nc * H * W;
    T* o = po + nc * Ho * Wo;
    for (i64 r = 0; r < H; ++r) {
      T* row0 = o + (2 * r) * Wo;
      T* row1 = row0 + Wo;
      const T* irow = in + r * W;
      for (i64 c = 0; c < W; ++c) {
        const T v = irow[c];
        row0[2 * c] = v;
        row0[2 * c + 1] = v;
        row1[2 * c] = v;
        row1[2 * c + 1] = v;
      }
    }
  }

  auto node = detail::make_node(std::move(out), {x.handle()}, "upsample2");
  if (node->requires_grad) {
    node->backward = [N, C, H, W, Ho, Wo](Node<T>& nd) {
      const T* g = nd.grad.data();
      T* pg = ensure_grad(*nd.parents[0]).data();
#pragma omp parallel for schedule(static)
      for (i64 nc = 0; nc < N * C; ++nc) {
        const T* go = g + nc * Ho * Wo;
        T* gi = pg + nc * H * W;
        for (i64 r = 0; r < H; ++r) {
          const T* row0 = go + (2 * r) * Wo;
          const T* row1 = row0 + Wo;
          T* irow = gi + r * W;
          for (i64 c = 0; c < W; ++c) {
            irow[c] += row0[2 * c] + row0[2 * c + 1] + row1[2 * c] +
                       row1[2 * c + 1];
          }
        }
      }
    };
  }
  return Var<T>(node);
}

// y = x W^T + b;  x: (N, Din), W: (Dout, Din), b: (Dout)
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const i64 N = x.dim(0), Din = x.dim(1);
  const i64 Dout = w.dim(0);
  if (w.dim(1) != Din)
    throw std::invalid_argument("linear: weight/input dim mismatch");
  if (b.value().numel() != Dout)
    throw std::invalid_argument("linear: bias dim mismatch");
  Tensor<T> out = Tensor<T>::uninitialized(Shape{N, Dout});
  blas::gemm(false, true, N, Dout, Din, T(1), x.value().data(), Din,
             w.value().data(), Din, T(0), out.data(), Dout);
  const T* pb = b.value().data();
  for (i64 n = 0; n < N; ++n) {
    T* row = out.data() + n * Dout;
    for (i64 j = 0; j < Dout; ++j) row[j] += pb[j];
  }

  auto node = detail::make_node(std::move(out),
                                {x.handle(), w.handle(), b.handle()}, "linear");
  if (node->requires_grad) {
    node->backward = [N, Din, Dout](Node<T>& nd) {
      const T* g = nd.grad.data();
      auto& xn = *nd.parents[0];
      auto& wn = *nd.parents[1];
      auto& bn = *nd.parents[2];
      if (xn.requires_grad) {
        blas::gemm(false, false, N, Din, Dout, T(1), g, Dout,
                   wn.value.data(), Din, T(1), ensure_grad(xn).data(), Din);
      }
      if (wn.requires_grad) {
        blas::gemm(true, false, Dout, Din, N, T(1), g, Dout, xn.value.data(),
                   Din, T(1), ensure_grad(wn).data(), Din);
      }
      if (bn.requires_grad) {
        T* bg = ensure_grad(bn).data();
        for (i64 n = 0; n < N; ++n)
          for (i64 j = 0; j < Dout; ++j) bg[j] += g[n * Dout + j];
      }
    };
  }
  return Var<T>(node);
}

// (N,C,H,W) -> (N,C) spatial mean
template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
  const Shape& s = x.shape();
  if (s.ndim() != 4) throw std::invalid_argument("gap: expected NCHW");
  const i64 N = s[0], C = s[1], M = s[2] * s[3];
  Tensor<T> out = Tensor<T>::uninitialized(Shape{N, C});
  const T* px = x.value().data();
  T* po = out.data();
#pragma omp parallel for schedule(static)
  for (i64 nc = 0; nc < N * C; ++nc) {
    const T* in = px + nc * M;
    T acc = 0;
#pragma omp simd reduction(+ : acc)
    for (i64 i = 0; i < M; ++i) acc += in[i];
    po[nc] = acc / T(M);
  }

  auto node = detail::make_node(std::move(out), {x.handle()}, "gap");
  if (node->requires_grad) {
    node->backward = [N, C, M](Node<T>& nd) {
      const T* g = nd.grad.data();
      T* pg = ensure_grad(*nd.parents[0]).data();
#pragma omp parallel for schedule(static)
      for (i64 nc = 0; nc < N * C; ++nc) {
        const T gv = g[nc] / T(M);
        T* gi = pg + nc * M;
        for (i64 i = 0; i < M; ++i) gi[i] += gv;
      }
    };
  }
  return Var<T>(node);
}

// row-wise L2 normalization of (N, D)
template <class T>
Var<T> l2_normalize(const Var<T>& x, T eps = T(1e-12)) {
  const i64 N = x.dim(0), D = x.dim(1);
  Tensor<T> out = Tensor<T>::uninitialized(x.shape());
  auto norms = std::make_shared<std::vector<T>>(std::size_t(N));
  const T* px = x.value().data();
  T* po = out.data();
  for (i64 n = 0; n < N; ++n) {
    const T* in = px + n * D;
    T s = 0;
#pragma omp simd reduction(+ : s)
    for (i64 j = 0; j < D; ++j) s += in[j] * in[j];
    const T r = std::max(std::sqrt(s), eps);
    (*norms)[std::size_t(n)] = r;
    T* o = po + n * D;
    const T inv = T(1) / r;
    for (i64 j = 0; j < D; ++j) o[j] = in[j] * inv;
  }

  auto node = detail::make_node(std::move(out), {x.handle()}, "l2norm");
  if (node->requires_grad) {
    node->backward = [norms, N, D](Node<T>& nd) {
      const T* g = nd.grad.data();
      const T* y = nd.value.data();
      T* pg = ensure_grad(*nd.parents[0]).data();
      for (i64 n = 0; n < N; ++n) {
        const T inv = T(1) / (*norms)[std::size_t(n)];
        const T* gr = g + n * D;
        const T* yr = y + n * D;
        T dot = 0;
        for (i64 j = 0; j < D; ++j) dot += gr[j] * yr[j];
        T* gi = pg + n * D;
        for (i64 j = 0; j < D; ++j) gi[j] += (gr[j] - dot * yr[j]) * inv;
      }
    };
  }
  return Var<T>(node);
}

// concatenation along the batch dimension
template <class T>
Var<T> concat_n(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_n: empty input");
  Shape s0 = xs[0].shape();
  i64 total = 0;
  i64 item = 1;
  for (i64 d = 1; d < s0.ndim(); ++d) item *= s0[d];
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    if (s.ndim() != s0.ndim())
      throw std::invalid_argument("concat_n: rank mismatch");
    for (i64 d = 1; d < s0.ndim(); ++d)
      if (s[d] != s0[d]) throw std::invalid_argument("concat_n: shape mismatch");
    total += s[0];
  }
  Shape os = s0;
  os[0] = total;
  Tensor<T> out = Tensor<T>::uninitialized(os);
  i64 off = 0;
  for (const auto& x : xs) {
    const i64 cnt = x.dim(0) * item;
    std::memcpy(out.data() + off, x.value().data(),
                std::size_t(cnt) * sizeof(T));
    off += cnt;
  }

  std::vector<std::shared_ptr<Node<T>>> parents;
  std::vector<i64> counts;
  for (const auto& x : xs) {
    parents.push_back(x.handle());
    counts.push_back(x.dim(0) * item);
  }
  auto node = detail::make_node(std::move(out), std::move(parents), "concat_n");
  if (node->requires_grad) {
    node->backward = [counts](Node<T>& nd) {
      const T* g = nd.grad.data();
      i64 off = 0;
      for (std::size_t k = 0; k < nd.parents.size(); ++k) {
        auto& p = *nd.parents[k];
        if (p.requires_grad) {
          T* pg = ensure_grad(p).data();
          for (i64 i = 0; i < counts[k]; ++i) pg[i] += g[off + i];
        }
        off += counts[k];
      }
    };
  }
  return Var<T>(node);
}

// slice [start, start+count) along the batch dimension
template <class T>
Var<T> slice_n(const Var<T>& x, i64 start, i64 count) {
  const Shape& s = x.shape();
  if (start < 0 || start + count > s[0])
    throw std::invalid_argument("slice_n: out of range");
  i64 item = 1;
  for (i64 d = 1; d < s.ndim(); ++d) item *= s[d];
  Shape os = s;
  os[0] = count;
  Tensor<T> out = Tensor<T>::uninitialized(os);
  std::memcpy(out.data(), x.value().data() + start * item,
              std::size_t(count * item) * sizeof(T));

  auto node = detail::make_node(std::move(out), {x.handle()}, "slice_n");
  if (node->requires_grad) {
    node->backward = [start, item, count](Node<T>& nd) {
      const T* g = nd.grad.data();
      T* pg = ensure_grad(*nd.parents[0]).data() + start * item;
      const i64 m = count * item;
      for (i64 i = 0; i < m; ++i) pg[i] += g[i];
    };
  }
  return Var<T>(node);
}

// Gathers square windows from a batched image into a new batch.
struct CropRef {
  i64 item;  // source index in the batch
  i64 row;
  i64 col;
};

template <class T>
Var<T> stack_crops(const Var<T>& img, const std::vector<CropRef>& crops,
                   i64 size) {
  const Shape& s = img.shape();
  if (s.ndim() != 4) throw std::invalid_argument("stack_crops: expected NCHW");
  const i64 C = s[1], H = s[2], W = s[3];
  for (const auto& cr : crops) {
    if (cr.item < 0 || cr.item >= s[0] || cr.row < 0 || cr.col < 0 ||
        cr.row + size > H || cr.col + size > W)
      throw std::invalid_argument("stack_crops: window out of bounds");
  }
  const i64 K = i64(crops.size());
  Tensor<T> out = Tensor<T>::uninitialized(Shape{K, C, size, size});
  const T* px = img.value().data();
  T* po = out.data();
  for (i64 k = 0; k < K; ++k) {
    const auto& cr = crops[std::size_t(k)];
    for (i64 c = 0; c < C; ++c) {
      const T* src = px + ((cr.item * C + c) * H + cr.row) * W + cr.col;
      T* dst = po + (k * C + c) * size * size;
      for (i64 r = 0; r < size; ++r)
        std::memcpy(dst + r * size, src + r * W, std::size_t(size) * sizeof(T));
    }
  }

  auto node = detail::make_node(std::move(out), {img.handle()}, "stack_crops");
  if (node->requires_grad) {
    auto crops_copy = crops;
    node->backward = [crops_copy, C, H, W, size](Node<T>& nd) {
      const T* g = nd.grad.data();
      T* pg = ensure_grad(*nd.parents[0]).data();
      // overlapping windows accumulate; keep this serial
      for (std::size_t k = 0; k < crops_copy.size(); ++k) {
        const auto& cr = crops_copy[k];
        for (i64 c = 0; c < C; ++c) {
          T* dst = pg + ((cr.item * C + c) * H + cr.row) * W + cr.col;
          const T* src = g + (i64(k) * C + c) * size * size;
          for (i64 r = 0; r < size; ++r)
            for (i64 j = 0; j < size; ++j) dst[r * W + j] += src[r * size + j];
        }
      }
    };
  }
  return Var<T>(node);
}

// ---------------------------------------------------------------------------
// scalar losses / reductions
// ---------------------------------------------------------------------------

template <class T>
Var<T> mse_loss(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("mse: shape mismatch");
  const i64 M = a.value().numel();
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  double acc = 0;
#pragma omp parallel for simd schedule(static) reduction(+ : acc) if (M > 1 << 16)
  for (i64 i = 0; i < M; ++i) {
    const double d = double(pa[i]) - double(pb[i]);
    acc += d * d;
  }
  Tensor<T> out = Tensor<T>::scalar(T(acc / double(M)));

  auto node = detail::make_node(std::move(out), {a.handle(), b.handle()}, "mse");
  if (node->requires_grad) {
    node->backward = [M](Node<T>& nd) {
      const T g = nd.grad[0] * T(2) / T(M);
      auto& an = *nd.parents[0];
      auto& bn = *nd.parents[1];
      const T* pa = an.value.data();
      const T* pb = bn.value.data();
      T* ga = an.requires_grad ? ensure_grad(an).data() : nullptr;
      T* gb = bn.requires_grad ? ensure_grad(bn).data() : nullptr;
#pragma omp parallel for schedule(static) if (M > 1 << 16)
      for (i64 i = 0; i < M; ++i) {
        const T d = (pa[i] - pb[i]) * g;
        if (ga) ga[i] += d;
        if (gb) gb[i] -= d;
      }
    };
  }
  return Var<T>(node);
}

// mean over batch items of ||a_n - b_n||_2 / sqrt(per-item element count)
template <class T>
Var<T> rms_diff_loss(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("rms_diff: shape mismatch");
  const i64 N = a.dim(0);
  const i64 M = a.value().numel() / N;
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  auto norms = std::make_shared<std::vector<double>>(std::size_t(N));
  double total = 0;
  for (i64 n = 0; n < N; ++n) {
    const T* xa = pa + n * M;
    const T* xb = pb + n * M;
    double s = 0;
#pragma omp simd reduction(+ : s)
    for (i64 i = 0; i < M; ++i) {
      const double d = double(xa[i]) - double(xb[i]);
      s += d * d;
    }
    const double r = std::sqrt(s / double(M));
    (*norms)[std::size_t(n)] = r;
    total += r;
  }
  Tensor<T> out = Tensor<T>::scalar(T(total / double(N)));

  auto node =
      detail::make_node(std::move(out), {a.handle(), b.handle()}, "rms_diff");
  if (node->requires_grad) {
    node->backward = [norms, N, M](Node<T>& nd) {
      const T g = nd.grad[0];
      auto& an = *nd.parents[0];
      auto& bn = *nd.parents[1];
      const T* pa = an.value.data();
      const T* pb = bn.value.data();
      T* ga = an.requires_grad ? ensure_grad(an).data() : nullptr;
      T* gb = bn.requires_grad ? ensure_grad(bn).data() : nullptr;
      for (i64 n = 0; n < N; ++n) {
        const double r = (*norms)[std::size_t(n)];
        if (r < 1e-12) continue;  // subgradient 0 at the kink
        const T scale = g / T(N * M * r);
        const T* xa = pa + n * M;
        const T* xb = pb + n * M;
        for (i64 i = 0; i < M; ++i) {
          const T d = (xa[i] - xb[i]) * scale;
          if (ga) ga[n * M + i] += d;
          if (gb) gb[n * M + i] -= d;
        }
      }
    };
  }
  return Var<T>(node);
}

// Channel-statistic matching loss: mean over (N,C) of squared mean error plus
// squared std error between x and target. Spatial sizes may differ.
template <class T>
Var<T> moment_match_loss(const Var<T>& x, const Var<T>& t, T eps = T(1e-5)) {
  const Shape& sx = x.shape();
  const Shape& st = t.shape();
  if (sx.ndim() != 4 || st.ndim() != 4 || sx[0] != st[0] || sx[1] != st[1])
    throw std::invalid_argument("moment_match: batch/channel mismatch");
  const i64 N = sx[0], C = sx[1];
  const i64 Mx = sx[2] * sx[3], Mt = st[2] * st[3];
  const T* px = x.value().data();
  const T* pt = t.value().data();

  struct Stats {
    double mu_x, sig_x, mu_t, sig_t;
  };
  auto stats = std::make_shared<std::vector<Stats>>(std::size_t(N * C));
  double acc = 0;
  for (i64 nc = 0; nc < N * C; ++nc) {
    const T* vx = px + nc * Mx;
    const T* vt = pt + nc * Mt;
    double sx1 = 0, sx2 = 0;
#pragma omp simd reduction(+ : sx1, sx2)
    for (i64 i = 0; i < Mx; ++i) {
      sx1 += double(vx[i]);
      sx2 += double(vx[i]) * double(vx[i]);
    }
    double st1 = 0, st2 = 0;
#pragma omp simd reduction(+ : st1, st2)
    for (i64 i = 0; i < Mt; ++i) {
      st1 += double(vt[i]);
      st2 += double(vt[i]) * double(vt[i]);
    }
    const double mux = sx1 / double(Mx);
    const double vxx = std::max(0.0, sx2 / double(Mx) - mux * mux);
    const double mut = st1 / double(Mt);
    const double vtt = std::max(0.0, st2 / double(Mt) - mut * mut);
    const double sigx = std::sqrt(vxx + double(eps));
    const double sigt = std::sqrt(vtt + double(eps));
    (*stats)[std::size_t(nc)] = {mux, sigx, mut, sigt};
    acc += (mux - mut) * (mux - mut) + (sigx - sigt) * (sigx - sigt);
  }
  Tensor<T> out = Tensor<T>::scalar(T(acc / double(N * C)));

  auto node = detail::make_node(std::move(out), {x.handle(), t.handle()},
                                "moment_match");
  if (node->requires_grad) {
    node->backward = [stats, N, C, Mx, Mt](Node<T>& nd) {
      const double g = double(nd.grad[0]) / double(N * C);
      auto& xn = *nd.parents[0];
      auto& tn = *nd.parents[1];
      const T* px = xn.value.data();
      const T* pt = tn.value.data();
      T* gx = xn.requires_grad ? ensure_grad(xn).data() : nullptr;
      T* gt = tn.requires_grad ? ensure_grad(tn).data() : nullptr;
      for (i64 nc = 0; nc < N * C; ++nc) {
        const auto& s = (*stats)[std::size_t(nc)];
        const double dmu = 2.0 * (s.mu_x - s.mu_t) * g;
        const double dsig = 2.0 * (s.sig_x - s.sig_t) * g;
        if (gx) {
          // d sigma/d x_i = (x_i - mu)/(M*sigma)
          const double a = dmu / double(Mx);
          const double b = dsig / (double(Mx) * s.sig_x);
          const T* vx = px + nc * Mx;
          T* gg = gx + nc * Mx;
          for (i64 i = 0; i < Mx; ++i)
            gg[i] += T(a + b * (double(vx[i]) - s.mu_x));
        }
        if (gt) {
          const double a = -dmu / double(Mt);
          const double b = -dsig / (double(Mt) * s.sig_t);
          const T* vt = pt + nc * Mt;
          T* gg = gt + nc * Mt;
          for (i64 i = 0; i < Mt; ++i)
            gg[i] += T(a + b * (double(vt[i]) - s.mu_t));
        }
      }
    };
  }
  return Var<T>(node);
}

// weighted sum of scalar vars
template <class T>
Var<T> weighted_sum(const std::vector<std::pair<T, Var<T>>>& terms) {
  if (terms.empty()) throw std::invalid_argument("weighted_sum: empty");
  double acc = 0;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::vector<T> weights;
  for (const auto& [w, v] : terms) {
    if (v.value().numel() != 1)
      throw std::invalid_argument("weighted_sum: non-scalar term");
    acc += double(w) * double(v.value()[0]);
    parents.push_back(v.handle());
    weights.push_back(w);
  }
  auto node = detail::make_node(Tensor<T>::scalar(T(acc)), std::move(parents),
                                "weighted_sum");
  if (node->requires_grad) {
    node->backward = [weights](Node<T>& nd) {
      const T g = nd.grad[0];
      for (std::size_t k = 0; k < nd.parents.size(); ++k) {
        auto& p = *nd.parents[k];
        if (p.requires_grad) ensure_grad(p)[0] += weights[k] * g;
      }
    };
  }
  return Var<T>(node);
}

}  // namespace encore
