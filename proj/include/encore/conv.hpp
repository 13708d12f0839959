#pragma once

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "encore/ops.hpp"

namespace encore {

// runtime switch, used by tests to cross-check the 3x3 implementations
inline bool& winograd_enabled() {
  static bool enabled = true;
  return enabled;
}

namespace detail {

inline i64 reflect_index(i64 p, i64 n) {
  // padded coordinate p in [0, n+2) -> source coordinate, pad 1, reflect
  // without edge repeat: -1 -> 1, n -> n-2
  const i64 r = p - 1;
  if (r < 0) return -r;
  if (r >= n) return 2 * n - 2 - r;
  return r;
}

// (C,H,W) plane -> (C,H+2,W+2) reflect-padded plane
template <class T>
void reflect_pad1(const T* src, T* dst, i64 C, i64 H, i64 W) {
  const i64 Hp = H + 2, Wp = W + 2;
#pragma omp parallel for schedule(static)
  for (i64 c = 0; c < C; ++c) {
    const T* in = src + c * H * W;
    T* out = dst + c * Hp * Wp;
    for (i64 p = 0; p < Hp; ++p) {
      const i64 r = reflect_index(p, H);
      T* row = out + p * Wp;
      const T* irow = in + r * W;
      row[0] = irow[1];
      std::memcpy(row + 1, irow, std::size_t(W) * sizeof(T));
      row[W + 1] = irow[W - 2];
    }
  }
}

// folds a padded gradient plane back onto the source via the reflect map
template <class T>
void reflect_fold1(const T* gpad, T* gdst, i64 C, i64 H, i64 W) {
  const i64 Hp = H + 2, Wp = W + 2;
#pragma omp parallel for schedule(static)
  for (i64 c = 0; c < C; ++c) {
    const T* in = gpad + c * Hp * Wp;
    T* out = gdst + c * H * W;
    for (i64 p = 0; p < Hp; ++p) {
      const i64 r = reflect_index(p, H);
      const T* row = in + p * Wp;
      T* orow = out + r * W;
      orow[1] += row[0];
      for (i64 q = 1; q <= W; ++q) orow[q - 1] += row[q];
      orow[W - 2] += row[W + 1];
    }
  }
}

// ---------------------------------------------------------------------------
// Winograd F(4x4, 3x3): 36-frequency transform domain, 4x4 output tiles from
// 6x6 input tiles read at stride 4 off the reflect-padded grid. Forward,
// input gradient and weight gradient all run in the transform domain. Used
// on small maps where GEMM efficiency dominates transform traffic.
// ---------------------------------------------------------------------------

// weights (Cout,Cin,3,3) -> U (36,Cout,Cin):  U = G g G^T
template <class T>
Tensor<T> winograd_kernel_transform(const Tensor<T>& w) {
  const i64 Cout = w.dim(0), Cin = w.dim(1);
  Tensor<T> u = Tensor<T>::uninitialized(Shape{36, Cout, Cin});
  const i64 plane = Cout * Cin;
  const T* pw = w.data();
  T* pu = u.data();
  const T c4 = T(1) / T(4), c6 = T(1) / T(6), c12 = T(1) / T(12),
          c24 = T(1) / T(24);
#pragma omp parallel for schedule(static)
  for (i64 oc = 0; oc < plane; ++oc) {
    const T* g = pw + oc * 9;
    T t[6][3];
    for (int c = 0; c < 3; ++c) {
      const T g0 = g[c], g1 = g[3 + c], g2 = g[6 + c];
      t[0][c] = c4 * g0;
      t[1][c] = -c6 * (g0 + g1 + g2);
      t[2][c] = c6 * (-g0 + g1 - g2);
      t[3][c] = c24 * g0 + c12 * g1 + c6 * g2;
      t[4][c] = c24 * g0 - c12 * g1 + c6 * g2;
      t[5][c] = g2;
    }
    for (int r = 0; r < 6; ++r) {
      const T a0 = t[r][0], a1 = t[r][1], a2 = t[r][2];
      pu[(r * 6 + 0) * plane + oc] = c4 * a0;
      pu[(r * 6 + 1) * plane + oc] = -c6 * (a0 + a1 + a2);
      pu[(r * 6 + 2) * plane + oc] = c6 * (-a0 + a1 - a2);
      pu[(r * 6 + 3) * plane + oc] = c24 * a0 + c12 * a1 + c6 * a2;
      pu[(r * 6 + 4) * plane + oc] = c24 * a0 - c12 * a1 + c6 * a2;
      pu[(r * 6 + 5) * plane + oc] = a2;
    }
  }
  return u;
}

// adjoint: dU (36,Cout,Cin) -> accumulate G^T dU G into dw (Cout,Cin,3,3)
template <class T>
void winograd_kernel_transform_adjoint(const Tensor<T>& du, T* dw, i64 Cout,
                                       i64 Cin) {
  const i64 plane = Cout * Cin;
  const T* pu = du.data();
  const T c4 = T(1) / T(4), c6 = T(1) / T(6), c12 = T(1) / T(12),
          c24 = T(1) / T(24);
#pragma omp parallel for schedule(static)
  for (i64 oc = 0; oc < plane; ++oc) {
    T t[3][6];
    for (int c = 0; c < 6; ++c) {
      T u[6];
      for (int r = 0; r < 6; ++r) u[r] = pu[(r * 6 + c) * plane + oc];
      t[0][c] = c4 * u[0] - c6 * (u[1] + u[2]) + c24 * (u[3] + u[4]);
      t[1][c] = c6 * (u[2] - u[1]) + c12 * (u[3] - u[4]);
      t[2][c] = -c6 * (u[1] + u[2]) + c6 * (u[3] + u[4]) + u[5];
    }
    T* g = dw + oc * 9;
    for (int r = 0; r < 3; ++r) {
      const T* a = t[r];
      g[r * 3 + 0] += c4 * a[0] - c6 * (a[1] + a[2]) + c24 * (a[3] + a[4]);
      g[r * 3 + 1] += c6 * (a[2] - a[1]) + c12 * (a[3] - a[4]);
      g[r * 3 + 2] += -c6 * (a[1] + a[2]) + c6 * (a[3] + a[4]) + a[5];
    }
  }
}

// input transform of one padded sample into the V buffer:
// V layout (Cin, 36, cols), this sample occupying columns [col0, col0+nT).
// Per channel: a vertical stencil pass vectorized across the padded width,
// a per-tile horizontal pass into an L2-resident staging block, then one
// linear copy per frequency plane (avoids 64-byte strided plane visits).
template <class T>
void winograd_scatter_input(const T* xpad, i64 Cin, i64 Hp, i64 Wp, T* v,
                            i64 cols, i64 col0, i64 th, i64 tw) {
  const i64 nT = th * tw;
#pragma omp parallel
  {
    std::vector<T> rowbuf(std::size_t(6 * Wp));
    std::vector<T> stage(std::size_t(36 * nT));
#pragma omp for schedule(static)
    for (i64 c = 0; c < Cin; ++c) {
      const T* plane = xpad + c * Hp * Wp;
      for (i64 ti = 0; ti < th; ++ti) {
        const T* prow = plane + (4 * ti) * Wp;
        const T* __restrict d0 = prow;
        const T* __restrict d1 = prow + Wp;
        const T* __restrict d2 = prow + 2 * Wp;
        const T* __restrict d3 = prow + 3 * Wp;
        const T* __restrict d4 = prow + 4 * Wp;
        const T* __restrict d5 = prow + 5 * Wp;
        T* tmp = rowbuf.data();
        T* __restrict t0 = tmp;
        T* __restrict t1 = tmp + Wp;
        T* __restrict t2 = tmp + 2 * Wp;
        T* __restrict t3 = tmp + 3 * Wp;
        T* __restrict t4 = tmp + 4 * Wp;
        T* __restrict t5 = tmp + 5 * Wp;
        for (i64 q = 0; q < Wp; ++q) {
          const T a = d0[q], b = d1[q], e = d2[q], f = d3[q], g = d4[q],
                  h = d5[q];
          t0[q] = T(4) * a - T(5) * e + g;
          t1[q] = T(-4) * (b + e) + f + g;
          t2[q] = T(4) * (b - e) - f + g;
          t3[q] = T(-2) * b - e + T(2) * f + g;
          t4[q] = T(2) * b - e - T(2) * f + g;
          t5[q] = T(4) * b - T(5) * f + h;
        }
        for (i64 tj = 0; tj < tw; ++tj) {
          const i64 col = ti * tw + tj;
          for (int r = 0; r < 6; ++r) {
            const T* a = tmp + r * Wp + 4 * tj;
            T* sb = stage.data() + (r * 6) * nT + col;
            sb[0] = T(4) * a[0] - T(5) * a[2] + a[4];
            sb[nT] = T(-4) * (a[1] + a[2]) + a[3] + a[4];
            sb[2 * nT] = T(4) * (a[1] - a[2]) - a[3] + a[4];
            sb[3 * nT] = T(-2) * a[1] - a[2] + T(2) * a[3] + a[4];
            sb[4 * nT] = T(2) * a[1] - a[2] - T(2) * a[3] + a[4];
            sb[5 * nT] = T(4) * a[1] - T(5) * a[3] + a[5];
          }
        }
      }
      T* vbase = v + c * 36 * cols + col0;
      for (int f = 0; f < 36; ++f)
        std::memcpy(vbase + f * cols, stage.data() + f * nT,
                    std::size_t(nT) * sizeof(T));
    }
  }
}

// adjoint of the input transform: accumulates B dV B^T tiles into the padded
// gradient plane. Tiles overlap by 2 rows/cols, so parallelism stays at the
// channel level.
template <class T>
void winograd_scatter_input_adjoint(const T* v, i64 Cin, T* gxpad, i64 Hp,
                                    i64 Wp, i64 cols, i64 col0, i64 th,
                                    i64 tw) {
  const i64 nT = th * tw;
#pragma omp parallel
  {
    std::vector<T> stage(std::size_t(36 * nT));
    std::vector<T> rows(std::size_t(36 * nT));
#pragma omp for schedule(static)
    for (i64 c = 0; c < Cin; ++c) {
      const T* vbase = v + c * 36 * cols + col0;
      for (int f = 0; f < 36; ++f)
        std::memcpy(stage.data() + f * nT, vbase + f * cols,
                    std::size_t(nT) * sizeof(T));
      // pass 1 (rows: B dV) over every tile at once
      for (int q = 0; q < 6; ++q) {
        const T* __restrict v0 = stage.data() + (0 * 6 + q) * nT;
        const T* __restrict v1 = stage.data() + (1 * 6 + q) * nT;
        const T* __restrict v2 = stage.data() + (2 * 6 + q) * nT;
        const T* __restrict v3 = stage.data() + (3 * 6 + q) * nT;
        const T* __restrict v4 = stage.data() + (4 * 6 + q) * nT;
        const T* __restrict v5 = stage.data() + (5 * 6 + q) * nT;
        for (i64 t = 0; t < nT; ++t) {
          const T a1 = v1[t], a2 = v2[t], a3 = v3[t], a4 = v4[t];
          rows[std::size_t((0 * 6 + q) * nT + t)] = T(4) * v0[t];
          rows[std::size_t((1 * 6 + q) * nT + t)] =
              T(-4) * a1 + T(4) * a2 - T(2) * a3 + T(2) * a4 + T(4) * v5[t];
          rows[std::size_t((2 * 6 + q) * nT + t)] =
              T(-5) * v0[t] - T(4) * (a1 + a2) - a3 - a4;
          rows[std::size_t((3 * 6 + q) * nT + t)] =
              a1 - a2 + T(2) * (a3 - a4) - T(5) * v5[t];
          rows[std::size_t((4 * 6 + q) * nT + t)] = v0[t] + a1 + a2 + a3 + a4;
          rows[std::size_t((5 * 6 + q) * nT + t)] = v5[t];
        }
      }
      // pass 2 (cols), accumulate per tile into the padded plane
      T* plane = gxpad + c * Hp * Wp;
      for (i64 ti = 0; ti < th; ++ti) {
        for (i64 tj = 0; tj < tw; ++tj) {
          const i64 col = ti * tw + tj;
          T* d = plane + (4 * ti) * Wp + 4 * tj;
          for (int r = 0; r < 6; ++r) {
            T a[6];
            for (int q = 0; q < 6; ++q)
              a[q] = rows[std::size_t((r * 6 + q) * nT + col)];
            T* dr = d + r * Wp;
            dr[0] += T(4) * a[0];
            dr[1] += T(-4) * a[1] + T(4) * a[2] - T(2) * a[3] + T(2) * a[4] +
                     T(4) * a[5];
            dr[2] += T(-5) * a[0] - T(4) * (a[1] + a[2]) - a[3] - a[4];
            dr[3] += a[1] - a[2] + T(2) * (a[3] - a[4]) - T(5) * a[5];
            dr[4] += a[0] + a[1] + a[2] + a[3] + a[4];
            dr[5] += a[5];
          }
        }
      }
    }
  }
}

// output gather: y tile (4x4) = A^T M A, plus bias and optional ReLU
template <class T>
void winograd_gather_output(const T* m, i64 Cout, T* out, i64 H, i64 W,
                            const T* bias, bool fuse_relu, i64 cols, i64 col0,
                            i64 th, i64 tw) {
  const i64 nT = th * tw;
#pragma omp parallel
  {
    std::vector<T> stage(std::size_t(36 * nT));
    std::vector<T> rows(std::size_t(24 * nT));
#pragma omp for schedule(static)
    for (i64 c = 0; c < Cout; ++c) {
      const T* mbase = m + c * 36 * cols + col0;
      for (int f = 0; f < 36; ++f)
        std::memcpy(stage.data() + f * nT, mbase + f * cols,
                    std::size_t(nT) * sizeof(T));
      // pass 1 (rows: A^T M) over every tile at once
      for (int q = 0; q < 6; ++q) {
        const T* __restrict m0 = stage.data() + (0 * 6 + q) * nT;
        const T* __restrict m1 = stage.data() + (1 * 6 + q) * nT;
        const T* __restrict m2 = stage.data() + (2 * 6 + q) * nT;
        const T* __restrict m3 = stage.data() + (3 * 6 + q) * nT;
        const T* __restrict m4 = stage.data() + (4 * 6 + q) * nT;
        const T* __restrict m5 = stage.data() + (5 * 6 + q) * nT;
        for (i64 t = 0; t < nT; ++t) {
          const T a1 = m1[t], a2 = m2[t], a3 = m3[t], a4 = m4[t];
          rows[std::size_t((0 * 6 + q) * nT + t)] = m0[t] + a1 + a2 + a3 + a4;
          rows[std::size_t((1 * 6 + q) * nT + t)] = a1 - a2 + T(2) * (a3 - a4);
          rows[std::size_t((2 * 6 + q) * nT + t)] = a1 + a2 + T(4) * (a3 + a4);
          rows[std::size_t((3 * 6 + q) * nT + t)] =
              a1 - a2 + T(8) * (a3 - a4) + m5[t];
        }
      }
      // pass 2 (cols) per tile, plus bias/ReLU epilogue
      T* plane = out + c * H * W;
      const T bv = bias[c];
      for (i64 ti = 0; ti < th; ++ti) {
        for (i64 tj = 0; tj < tw; ++tj) {
          const i64 col = ti * tw + tj;
          T* y = plane + (4 * ti) * W + 4 * tj;
          for (int r = 0; r < 4; ++r) {
            T a[6];
            for (int q = 0; q < 6; ++q)
              a[q] = rows[std::size_t((r * 6 + q) * nT + col)];
            T vals[4];
            vals[0] = a[0] + a[1] + a[2] + a[3] + a[4] + bv;
            vals[1] = a[1] - a[2] + T(2) * (a[3] - a[4]) + bv;
            vals[2] = a[1] + a[2] + T(4) * (a[3] + a[4]) + bv;
            vals[3] = a[1] - a[2] + T(8) * (a[3] - a[4]) + a[5] + bv;
            T* yr = y + r * W;
            if (fuse_relu) {
              for (int q = 0; q < 4; ++q)
                yr[q] = vals[q] > T(0) ? vals[q] : T(0);
            } else {
              for (int q = 0; q < 4; ++q) yr[q] = vals[q];
            }
          }
        }
      }
    }
  }
}

// adjoint of the output gather: dM tile = A dy A^T
template <class T>
void winograd_gather_output_adjoint(const T* gy, i64 Cout, T* m, i64 H, i64 W,
                                    i64 cols, i64 col0, i64 th, i64 tw) {
  const i64 nT = th * tw;
#pragma omp parallel
  {
    std::vector<T> rowbuf(std::size_t(6 * W));
    std::vector<T> stage(std::size_t(36 * nT));
#pragma omp for schedule(static)
    for (i64 c = 0; c < Cout; ++c) {
      const T* plane = gy + c * H * W;
      for (i64 ti = 0; ti < th; ++ti) {
        const T* prow = plane + (4 * ti) * W;
        const T* __restrict y0 = prow;
        const T* __restrict y1 = prow + W;
        const T* __restrict y2 = prow + 2 * W;
        const T* __restrict y3 = prow + 3 * W;
        T* tmp = rowbuf.data();
        {
          T* __restrict t0 = tmp;
          T* __restrict t1 = tmp + W;
          T* __restrict t2 = tmp + 2 * W;
          T* __restrict t3 = tmp + 3 * W;
          T* __restrict t4 = tmp + 4 * W;
          T* __restrict t5 = tmp + 5 * W;
          for (i64 q = 0; q < W; ++q) {
            const T a = y0[q], b = y1[q], e = y2[q], f = y3[q];
            t0[q] = a;
            t1[q] = a + b + e + f;
            t2[q] = a - b + e - f;
            t3[q] = a + T(2) * b + T(4) * e + T(8) * f;
            t4[q] = a - T(2) * b + T(4) * e - T(8) * f;
            t5[q] = f;
          }
        }
        for (i64 tj = 0; tj < tw; ++tj) {
          const i64 col = ti * tw + tj;
          for (int r = 0; r < 6; ++r) {
            const T* a = tmp + r * W + 4 * tj;
            T* sb = stage.data() + (r * 6) * nT + col;
            sb[0] = a[0];
            sb[nT] = a[0] + a[1] + a[2] + a[3];
            sb[2 * nT] = a[0] - a[1] + a[2] - a[3];
            sb[3 * nT] = a[0] + T(2) * a[1] + T(4) * a[2] + T(8) * a[3];
            sb[4 * nT] = a[0] - T(2) * a[1] + T(4) * a[2] - T(8) * a[3];
            sb[5 * nT] = a[3];
          }
        }
      }
      T* mbase = m + c * 36 * cols + col0;
      for (int f = 0; f < 36; ++f)
        std::memcpy(mbase + f * cols, stage.data() + f * nT,
                    std::size_t(nT) * sizeof(T));
    }
  }
}

inline i64 winograd_chunk_samples(i64 N, i64 nT, i64 Cin, i64 Cout) {
  // keep the V + M buffers near ~100 MB
  const i64 cols_max = std::max<i64>(nT, i64(7e5) / (Cin + Cout));
  return std::max<i64>(1, std::min(N, cols_max / nT));
}

// chunk size for the batched-im2col path: column buffer near ~400 MB
inline i64 im2col_chunk_samples(i64 N, i64 Cin, i64 HW) {
  const i64 per_sample = Cin * 9 * HW;
  return std::max<i64>(1, std::min(N, i64(1e8) / per_sample));
}

}  // namespace detail

// 2-D convolution with reflection padding (k-1)/2.
//   3x3 stride 1 dispatch, chosen by measured throughput on 2-core AVX-512:
//     - Cin <= 4 or Cout <= 4: direct vectorized loops (first/last layers)
//     - small maps (<= 32x32, divisible by 4): Winograd F(4x4,3x3)
//     - otherwise: batched im2col with one large GEMM per chunk
//   1x1: plain GEMM.  3x3 stride 2: im2col (projection head, small maps).
// `fuse_relu` applies ReLU in the epilogue and masks the incoming gradient in
// backward, halving stored activations for conv+ReLU chains.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b,
              i64 stride = 1, bool fuse_relu = false) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.ndim() != 4) throw std::invalid_argument("conv2d: expected NCHW input");
  if (ws.ndim() != 4 || ws[2] != ws[3])
    throw std::invalid_argument("conv2d: weight must be (Cout,Cin,k,k)");
  const i64 N = xs[0], Cin = xs[1], H = xs[2], W = xs[3];
  const i64 Cout = ws[0], K = ws[2];
  if (ws[1] != Cin)
    throw std::invalid_argument("conv2d: input channels " + std::to_string(Cin) +
                                " do not match weight " + std::to_string(ws[1]));
  if (b.value().numel() != Cout)
    throw std::invalid_argument("conv2d: bias size mismatch");
  if (K != 1 && K != 3) throw std::invalid_argument("conv2d: kernel must be 1 or 3");
  if (stride != 1 && stride != 2) throw std::invalid_argument("conv2d: stride must be 1 or 2");
  if (K == 3 && (H < 2 || W < 2))
    throw std::invalid_argument("conv2d: input too small for reflection padding");

  const i64 pad = (K - 1) / 2;
  const i64 Ho = (H + 2 * pad - K) / stride + 1;
  const i64 Wo = (W + 2 * pad - K) / stride + 1;

  enum class Path { winograd, direct, im2col, pointwise, strided };
  Path path;
  if (K == 1) {
    path = Path::pointwise;
  } else if (stride == 2) {
    path = Path::strided;
  } else if (Cin <= 4 || Cout <= 4) {
    path = Path::direct;
  } else if (H % 4 == 0 && W % 4 == 0 && winograd_enabled()) {
    path = Path::winograd;
  } else {
    path = Path::im2col;
  }

  Tensor<T> out = Tensor<T>::uninitialized(Shape{N, Cout, Ho, Wo});
  const T* px = x.value().data();
  const T* pb = b.value().data();

  std::shared_ptr<Tensor<T>> packed;  // Winograd U, when applicable

  switch (path) {
    case Path::winograd: {
      packed = std::make_shared<Tensor<T>>(
          detail::winograd_kernel_transform(w.value()));
      const i64 Hp = H + 2, Wp = W + 2;
      const i64 th = H / 4, tw = W / 4, nT = th * tw;
      const i64 chunk = detail::winograd_chunk_samples(N, nT, Cin, Cout);
      const i64 cols = chunk * nT;
      Tensor<T> xpad = Tensor<T>::uninitialized(Shape{Cin, Hp, Wp});
      Tensor<T> vbuf = Tensor<T>::uninitialized(Shape{Cin, 36, cols});
      Tensor<T> mbuf = Tensor<T>::uninitialized(Shape{Cout, 36, cols});
      for (i64 n0 = 0; n0 < N; n0 += chunk) {
        const i64 nb = std::min(chunk, N - n0);
        const i64 ccols = nb * nT;
        for (i64 s = 0; s < nb; ++s) {
          detail::reflect_pad1(px + (n0 + s) * Cin * H * W, xpad.data(), Cin, H, W);
          detail::winograd_scatter_input(xpad.data(), Cin, Hp, Wp, vbuf.data(),
                                         cols, s * nT, th, tw);
        }
        for (int f = 0; f < 36; ++f) {
          blas::gemm(false, false, Cout, ccols, Cin, T(1),
                     packed->data() + f * Cout * Cin, Cin,
                     vbuf.data() + f * cols, 36 * cols, T(0),
                     mbuf.data() + f * cols, 36 * cols);
        }
        for (i64 s = 0; s < nb; ++s) {
          detail::winograd_gather_output(mbuf.data(), Cout,
                                         out.data() + (n0 + s) * Cout * H * W,
                                         H, W, pb, fuse_relu, cols, s * nT, th,
                                         tw);
        }
      }
      break;
    }
    case Path::direct: {
      const i64 Hp = H + 2, Wp = W + 2;
      Tensor<T> xpad = Tensor<T>::uninitialized(Shape{Cin, Hp, Wp});
      const T* pw = w.value().data();
      for (i64 n = 0; n < N; ++n) {
        detail::reflect_pad1(px + n * Cin * H * W, xpad.data(), Cin, H, W);
        T* po = out.data() + n * Cout * H * W;
#pragma omp parallel for schedule(static) collapse(2)
        for (i64 o = 0; o < Cout; ++o) {
          for (i64 r = 0; r < H; ++r) {
            const T bias = pb[o];
            T* __restrict orow = po + o * H * W + r * W;
            for (i64 q = 0; q < W; ++q) orow[q] = bias;
            for (i64 i = 0; i < Cin; ++i) {
              const T* wk = pw + (o * Cin + i) * 9;
              const T* iplane = xpad.data() + i * Hp * Wp;
              for (int dy = 0; dy < 3; ++dy) {
                const T* __restrict irow = iplane + (r + dy) * Wp;
                const T w0 = wk[dy * 3], w1 = wk[dy * 3 + 1], w2 = wk[dy * 3 + 2];
                for (i64 q = 0; q < W; ++q)
                  orow[q] += w0 * irow[q] + w1 * irow[q + 1] + w2 * irow[q + 2];
              }
            }
            if (fuse_relu)
              for (i64 q = 0; q < W; ++q) orow[q] = orow[q] > T(0) ? orow[q] : T(0);
          }
        }
      }
      break;
    }
    case Path::im2col: {
      const i64 Hp = H + 2, Wp = W + 2;
      const i64 HW = H * W;
      const i64 chunk = detail::im2col_chunk_samples(N, Cin, HW);
      Tensor<T> xpad = Tensor<T>::uninitialized(Shape{Cin, Hp, Wp});
      Tensor<T> col = Tensor<T>::uninitialized(Shape{Cin * 9, chunk * HW});
      Tensor<T> ybuf = Tensor<T>::uninitialized(Shape{Cout, chunk * HW});
      for (i64 n0 = 0; n0 < N; n0 += chunk) {
        const i64 nb = std::min(chunk, N - n0);
        const i64 ccols = nb * HW;
        for (i64 s = 0; s < nb; ++s) {
          detail::reflect_pad1(px + (n0 + s) * Cin * H * W, xpad.data(), Cin, H, W);
          T* pcol = col.data() + s * HW;
#pragma omp parallel for schedule(static)
          for (i64 c = 0; c < Cin; ++c) {
            const T* plane = xpad.data() + c * Hp * Wp;
            for (i64 k = 0; k < 9; ++k) {
              const i64 dy = k / 3, dx = k % 3;
              T* crow = pcol + (c * 9 + k) * (chunk * HW);
              for (i64 r = 0; r < H; ++r)
                std::memcpy(crow + r * W, plane + (r + dy) * Wp + dx,
                            std::size_t(W) * sizeof(T));
            }
          }
        }
        blas::gemm(false, false, Cout, ccols, Cin * 9, T(1), w.value().data(),
                   Cin * 9, col.data(), chunk * HW, T(0), ybuf.data(),
                   chunk * HW);
        // redistribute channel-major GEMM output into NCHW with bias/ReLU
#pragma omp parallel for schedule(static) collapse(2)
        for (i64 s = 0; s < nb; ++s) {
          for (i64 c = 0; c < Cout; ++c) {
            const T* src = ybuf.data() + c * (chunk * HW) + s * HW;
            T* dst = out.data() + ((n0 + s) * Cout + c) * HW;
            const T bias = pb[c];
            if (fuse_relu) {
              for (i64 i = 0; i < HW; ++i) {
                const T v = src[i] + bias;
                dst[i] = v > T(0) ? v : T(0);
              }
            } else {
              for (i64 i = 0; i < HW; ++i) dst[i] = src[i] + bias;
            }
          }
        }
      }
      break;
    }
    case Path::pointwise: {
      const i64 M = H * W;
      for (i64 n = 0; n < N; ++n) {
        blas::gemm(false, false, Cout, M, Cin, T(1), w.value().data(), Cin,
                   px + n * Cin * M, M, T(0), out.data() + n * Cout * M, M);
      }
      T* po = out.data();
#pragma omp parallel for schedule(static)
      for (i64 nc = 0; nc < N * Cout; ++nc) {
        const T bias = pb[nc % Cout];
        T* dst = po + nc * M;
        if (fuse_relu) {
          for (i64 i = 0; i < M; ++i) {
            const T v = dst[i] + bias;
            dst[i] = v > T(0) ? v : T(0);
          }
        } else {
          for (i64 i = 0; i < M; ++i) dst[i] += bias;
        }
      }
      break;
    }
    case Path::strided: {
      const i64 Hp = H + 2, Wp = W + 2;
      const i64 Lo = Ho * Wo;
      const i64 chunk = detail::im2col_chunk_samples(N, Cin, Lo);
      Tensor<T> xpad = Tensor<T>::uninitialized(Shape{Cin, Hp, Wp});
      Tensor<T> col = Tensor<T>::uninitialized(Shape{Cin * 9, chunk * Lo});
      Tensor<T> ybuf = Tensor<T>::uninitialized(Shape{Cout, chunk * Lo});
      for (i64 n0 = 0; n0 < N; n0 += chunk) {
        const i64 nb = std::min(chunk, N - n0);
        for (i64 s = 0; s < nb; ++s) {
          detail::reflect_pad1(px + (n0 + s) * Cin * H * W, xpad.data(), Cin,
                               H, W);
          T* pcol = col.data() + s * Lo;
#pragma omp parallel for schedule(static)
          for (i64 c = 0; c < Cin; ++c) {
            const T* plane = xpad.data() + c * Hp * Wp;
            for (i64 k = 0; k < 9; ++k) {
              const i64 dy = k / 3, dx = k % 3;
              T* crow = pcol + (c * 9 + k) * (chunk * Lo);
              for (i64 r = 0; r < Ho; ++r)
                for (i64 q = 0; q < Wo; ++q)
                  crow[r * Wo + q] = plane[(r * 2 + dy) * Wp + (q * 2 + dx)];
            }
          }
        }
        blas::gemm(false, false, Cout, nb * Lo, Cin * 9, T(1),
                   w.value().data(), Cin * 9, col.data(), chunk * Lo, T(0),
                   ybuf.data(), chunk * Lo);
#pragma omp parallel for schedule(static) collapse(2)
        for (i64 s = 0; s < nb; ++s) {
          for (i64 c = 0; c < Cout; ++c) {
            const T* src = ybuf.data() + c * (chunk * Lo) + s * Lo;
            T* dst = out.data() + ((n0 + s) * Cout + c) * Lo;
            const T bias = pb[c];
            if (fuse_relu) {
              for (i64 i = 0; i < Lo; ++i) {
                const T v = src[i] + bias;
                dst[i] = v > T(0) ? v : T(0);
              }
            } else {
              for (i64 i = 0; i < Lo; ++i) dst[i] = src[i] + bias;
            }
          }
        }
      }
      break;
    }
  }

  auto node = detail::make_node(std::move(out),
                                {x.handle(), w.handle(), b.handle()}, "conv2d");
  if (node->requires_grad) {
    const int path_id = int(path);
    node->backward = [N, Cin, Cout, H, W, Ho, Wo, fuse_relu, path_id,
                      packed](Node<T>& nd) {
      enum class Path { winograd, direct, im2col, pointwise, strided };
      const Path path = Path(path_id);
      auto& xn = *nd.parents[0];
      auto& wn = *nd.parents[1];
      auto& bn = *nd.parents[2];
      const T* px = xn.value.data();
      const T* py = nd.value.data();
      const T* pg = nd.grad.data();

      // shared epilogue gradient: ReLU mask + bias gradient
      Tensor<T> gy = Tensor<T>::uninitialized(Shape{N, Cout, Ho, Wo});
      {
        T* pgy = gy.data();
        const i64 M = Ho * Wo;
#pragma omp parallel for schedule(static)
        for (i64 nc = 0; nc < N * Cout; ++nc) {
          const T* g = pg + nc * M;
          T* d = pgy + nc * M;
          if (fuse_relu) {
            const T* y = py + nc * M;
            for (i64 i = 0; i < M; ++i) d[i] = y[i] > T(0) ? g[i] : T(0);
          } else {
            std::memcpy(d, g, std::size_t(M) * sizeof(T));
          }
        }
        if (bn.requires_grad) {
          T* bg = ensure_grad(bn).data();
          for (i64 n = 0; n < N; ++n)
            for (i64 c = 0; c < Cout; ++c) {
              const T* d = pgy + (n * Cout + c) * M;
              T acc = 0;
#pragma omp simd reduction(+ : acc)
              for (i64 i = 0; i < M; ++i) acc += d[i];
              bg[c] += acc;
            }
        }
      }

      // the direct path shares the im2col backward: identical math, and the
      // batched GEMM beats scalar reduction loops on first/last layers
      if (path == Path::winograd) {
        const i64 Hp = H + 2, Wp = W + 2;
        const i64 th = H / 4, tw = W / 4, nT = th * tw;
        const i64 chunk = detail::winograd_chunk_samples(N, nT, Cin, Cout);
        const i64 cols = chunk * nT;
        Tensor<T> xpad = Tensor<T>::uninitialized(Shape{Cin, Hp, Wp});
        Tensor<T> vbuf = Tensor<T>::uninitialized(Shape{Cin, 36, cols});
        Tensor<T> mbuf = Tensor<T>::uninitialized(Shape{Cout, 36, cols});
        Tensor<T> du;
        if (wn.requires_grad) du = Tensor<T>::zeros(Shape{36, Cout, Cin});
        Tensor<T> gxpad;
        if (xn.requires_grad)
          gxpad = Tensor<T>::uninitialized(Shape{Cin, Hp, Wp});
        T* gx = xn.requires_grad ? ensure_grad(xn).data() : nullptr;

        for (i64 n0 = 0; n0 < N; n0 += chunk) {
          const i64 nb = std::min(chunk, N - n0);
          const i64 ccols = nb * nT;
          if (wn.requires_grad) {
            for (i64 s = 0; s < nb; ++s) {
              detail::reflect_pad1(px + (n0 + s) * Cin * H * W, xpad.data(),
                                   Cin, H, W);
              detail::winograd_scatter_input(xpad.data(), Cin, Hp, Wp,
                                             vbuf.data(), cols, s * nT, th, tw);
            }
          }
          for (i64 s = 0; s < nb; ++s) {
            detail::winograd_gather_output_adjoint(
                gy.data() + (n0 + s) * Cout * H * W, Cout, mbuf.data(), H, W,
                cols, s * nT, th, tw);
          }
          if (wn.requires_grad) {
            for (int f = 0; f < 36; ++f) {
              blas::gemm(false, true, Cout, Cin, ccols, T(1),
                         mbuf.data() + f * cols, 36 * cols,
                         vbuf.data() + f * cols, 36 * cols, T(1),
                         du.data() + f * Cout * Cin, Cin);
            }
          }
          if (xn.requires_grad) {
            // dV = U^T dM, reusing the V buffer
            for (int f = 0; f < 36; ++f) {
              blas::gemm(true, false, Cin, ccols, Cout, T(1),
                         packed->data() + f * Cout * Cin, Cin,
                         mbuf.data() + f * cols, 36 * cols, T(0),
                         vbuf.data() + f * cols, 36 * cols);
            }
            for (i64 s = 0; s < nb; ++s) {
              gxpad.zero();
              detail::winograd_scatter_input_adjoint(vbuf.data(), Cin,
                                                     gxpad.data(), Hp, Wp,
                                                     cols, s * nT, th, tw);
              detail::reflect_fold1(gxpad.data(), gx + (n0 + s) * Cin * H * W,
                                    Cin, H, W);
            }
          }
        }
        if (wn.requires_grad)
          detail::winograd_kernel_transform_adjoint(du, ensure_grad(wn).data(),
                                                    Cout, Cin);
      } else if (path == Path::im2col || path == Path::direct) {
        const i64 Hp = H + 2, Wp = W + 2;
        const i64 HW = H * W;
        const i64 chunk = detail::im2col_chunk_samples(N, Cin, HW);
        Tensor<T> xpad = Tensor<T>::uninitialized(Shape{Cin, Hp, Wp});
        Tensor<T> col = Tensor<T>::uninitialized(Shape{Cin * 9, chunk * HW});
        Tensor<T> gybuf = Tensor<T>::uninitialized(Shape{Cout, chunk * HW});
        Tensor<T> gxpad;
        if (xn.requires_grad)
          gxpad = Tensor<T>::uninitialized(Shape{Cin, Hp, Wp});
        T* gx = xn.requires_grad ? ensure_grad(xn).data() : nullptr;
        T* wg = wn.requires_grad ? ensure_grad(wn).data() : nullptr;

        for (i64 n0 = 0; n0 < N; n0 += chunk) {
          const i64 nb = std::min(chunk, N - n0);
          const i64 ccols = nb * HW;
          // gradient into channel-major layout
#pragma omp parallel for schedule(static) collapse(2)
          for (i64 s = 0; s < nb; ++s)
            for (i64 c = 0; c < Cout; ++c)
              std::memcpy(gybuf.data() + c * (chunk * HW) + s * HW,
                          gy.data() + ((n0 + s) * Cout + c) * HW,
                          std::size_t(HW) * sizeof(T));
          if (wg) {
            for (i64 s = 0; s < nb; ++s) {
              detail::reflect_pad1(px + (n0 + s) * Cin * H * W, xpad.data(),
                                   Cin, H, W);
              T* pcol = col.data() + s * HW;
#pragma omp parallel for schedule(static)
              for (i64 c = 0; c < Cin; ++c) {
                const T* plane = xpad.data() + c * Hp * Wp;
                for (i64 k = 0; k < 9; ++k) {
                  const i64 dy = k / 3, dx = k % 3;
                  T* crow = pcol + (c * 9 + k) * (chunk * HW);
                  for (i64 r = 0; r < H; ++r)
                    std::memcpy(crow + r * W, plane + (r + dy) * Wp + dx,
                                std::size_t(W) * sizeof(T));
                }
              }
            }
            blas::gemm(false, true, Cout, Cin * 9, ccols, T(1), gybuf.data(),
                       chunk * HW, col.data(), chunk * HW, T(1), wg, Cin * 9);
          }
          if (gx) {
            // dcol = W^T gy, overwriting the column buffer
            blas::gemm(true, false, Cin * 9, ccols, Cout, T(1),
                       wn.value.data(), Cin * 9, gybuf.data(), chunk * HW,
                       T(0), col.data(), chunk * HW);
            for (i64 s = 0; s < nb; ++s) {
              gxpad.zero();
              const T* pcol = col.data() + s * HW;
#pragma omp parallel for schedule(static)
              for (i64 c = 0; c < Cin; ++c) {
                T* plane = gxpad.data() + c * Hp * Wp;
                for (i64 k = 0; k < 9; ++k) {
                  const i64 dy = k / 3, dx = k % 3;
                  const T* crow = pcol + (c * 9 + k) * (chunk * HW);
                  for (i64 r = 0; r < H; ++r) {
                    T* __restrict prow = plane + (r + dy) * Wp + dx;
                    const T* __restrict grow = crow + r * W;
                    for (i64 q = 0; q < W; ++q) prow[q] += grow[q];
                  }
                }
              }
              detail::reflect_fold1(gxpad.data(), gx + (n0 + s) * Cin * H * W,
                                    Cin, H, W);
            }
          }
        }
      } else if (path == Path::pointwise) {
        const i64 M = H * W;
        T* gx = xn.requires_grad ? ensure_grad(xn).data() : nullptr;
        T* wg = wn.requires_grad ? ensure_grad(wn).data() : nullptr;
        for (i64 n = 0; n < N; ++n) {
          const T* g = gy.data() + n * Cout * M;
          if (wg)
            blas::gemm(false, true, Cout, Cin, M, T(1), g, M, px + n * Cin * M,
                       M, T(1), wg, Cin);
          if (gx)
            blas::gemm(true, false, Cin, M, Cout, T(1), wn.value.data(), Cin,
                       g, M, T(1), gx + n * Cin * M, M);
        }
      } else {
        const i64 Hp = H + 2, Wp = W + 2;
        const i64 Lo = Ho * Wo;
        const i64 chunk = detail::im2col_chunk_samples(N, Cin, Lo);
        Tensor<T> xpad = Tensor<T>::uninitialized(Shape{Cin, Hp, Wp});
        Tensor<T> col = Tensor<T>::uninitialized(Shape{Cin * 9, chunk * Lo});
        Tensor<T> gybuf = Tensor<T>::uninitialized(Shape{Cout, chunk * Lo});
        Tensor<T> gxpad;
        if (xn.requires_grad)
          gxpad = Tensor<T>::uninitialized(Shape{Cin, Hp, Wp});
        T* gx = xn.requires_grad ? ensure_grad(xn).data() : nullptr;
        T* wg = wn.requires_grad ? ensure_grad(wn).data() : nullptr;
        auto build_col = [&](i64 n0, i64 nb) {
          for (i64 s = 0; s < nb; ++s) {
            detail::reflect_pad1(px + (n0 + s) * Cin * H * W, xpad.data(), Cin,
                                 H, W);
            T* pcol = col.data() + s * Lo;
#pragma omp parallel for schedule(static)
            for (i64 c = 0; c < Cin; ++c) {
              const T* plane = xpad.data() + c * Hp * Wp;
              for (i64 k = 0; k < 9; ++k) {
                const i64 dy = k / 3, dx = k % 3;
                T* crow = pcol + (c * 9 + k) * (chunk * Lo);
                for (i64 r = 0; r < Ho; ++r)
                  for (i64 q = 0; q < Wo; ++q)
                    crow[r * Wo + q] = plane[(r * 2 + dy) * Wp + (q * 2 + dx)];
              }
            }
          }
        };
        for (i64 n0 = 0; n0 < N; n0 += chunk) {
          const i64 nb = std::min(chunk, N - n0);
#pragma omp parallel for schedule(static) collapse(2)
          for (i64 s = 0; s < nb; ++s)
            for (i64 c = 0; c < Cout; ++c)
              std::memcpy(gybuf.data() + c * (chunk * Lo) + s * Lo,
                          gy.data() + ((n0 + s) * Cout + c) * Lo,
                          std::size_t(Lo) * sizeof(T));
          if (wg) {
            build_col(n0, nb);
            blas::gemm(false, true, Cout, Cin * 9, nb * Lo, T(1), gybuf.data(),
                       chunk * Lo, col.data(), chunk * Lo, T(1), wg, Cin * 9);
          }
          if (gx) {
            blas::gemm(true, false, Cin * 9, nb * Lo, Cout, T(1),
                       wn.value.data(), Cin * 9, gybuf.data(), chunk * Lo,
                       T(0), col.data(), chunk * Lo);
            for (i64 s = 0; s < nb; ++s) {
              gxpad.zero();
              const T* pcol = col.data() + s * Lo;
#pragma omp parallel for schedule(static)
              for (i64 c = 0; c < Cin; ++c) {
                T* plane = gxpad.data() + c * Hp * Wp;
                for (i64 k = 0; k < 9; ++k) {
                  const i64 dy = k / 3, dx = k % 3;
                  const T* crow = pcol + (c * 9 + k) * (chunk * Lo);
                  for (i64 r = 0; r < Ho; ++r)
                    for (i64 q = 0; q < Wo; ++q)
                      plane[(r * 2 + dy) * Wp + (q * 2 + dx)] +=
                          crow[r * Wo + q];
                }
              }
              detail::reflect_fold1(gxpad.data(), gx + (n0 + s) * Cin * H * W,
                                    Cin, H, W);
            }
          }
        }
      }
    };
  }
  return Var<T>(node);
}

}  // namespace encore
