#pragma once

#include <cstdint>
#include <cstdlib>
#include <mutex>

#if defined(__linux__)
#include <dlfcn.h>
#include <unistd.h>
#endif

namespace encore::blas {

using i64 = std::int64_t;

// cblas constants (row-major only is used)
enum { kRowMajor = 101, kNoTrans = 111, kTrans = 112 };

namespace detail {

using sgemm_fn = void (*)(int, int, int, int, int, int, float, const float*,
                          int, const float*, int, float, float*, int);
using dgemm_fn = void (*)(int, int, int, int, int, int, double, const double*,
                          int, const double*, int, double, double*, int);
using set_threads_fn = void (*)(int);

struct Backend {
  sgemm_fn sgemm = nullptr;
  dgemm_fn dgemm = nullptr;
  set_threads_fn set_threads = nullptr;
};

// OpenBLAS selects its kernel set from OPENBLAS_CORETYPE at library load.
// Distro builds running under virtualized CPUs (cpuid model "unknown") fall
// back to a slow generic kernel, so when the host supports AVX-512 we pin the
// core type before loading the library. Loading via dlopen (instead of a
// link-time dependency) is what makes the env var take effect here.
inline Backend load_backend() {
  Backend b;
#if defined(__linux__)
  if (!std::getenv("OPENBLAS_CORETYPE")) {
#if defined(__x86_64__)
    if (__builtin_cpu_supports("avx512f")) {
      ::setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 0);
    } else if (__builtin_cpu_supports("avx2")) {
      ::setenv("OPENBLAS_CORETYPE", "HASWELL", 0);
    }
#endif
  }
  const char* names[] = {"libopenblas.so.0", "libopenblas.so", "libblas.so.3"};
  void* h = nullptr;
  for (const char* n : names) {
    h = ::dlopen(n, RTLD_NOW | RTLD_LOCAL);
    if (h) break;
  }
  if (h) {
    b.sgemm = reinterpret_cast<sgemm_fn>(::dlsym(h, "cblas_sgemm"));
    b.dgemm = reinterpret_cast<dgemm_fn>(::dlsym(h, "cblas_dgemm"));
    b.set_threads =
        reinterpret_cast<set_threads_fn>(::dlsym(h, "openblas_set_num_threads"));
  }
#endif
  return b;
}

inline Backend& backend() {
  static Backend b = load_backend();
  return b;
}

// Correctness fallback when no BLAS library can be loaded. Blocked ikj loop;
// slow but portable.
template <class T>
void gemm_fallback(bool trans_a, bool trans_b, i64 m, i64 n, i64 k, T alpha,
                   const T* a, i64 lda, const T* bmat, i64 ldb, T beta, T* c,
                   i64 ldc) {
  auto A = [&](i64 i, i64 j) { return trans_a ? a[j * lda + i] : a[i * lda + j]; };
  auto B = [&](i64 i, i64 j) {
    return trans_b ? bmat[j * ldb + i] : bmat[i * ldb + j];
  };
  for (i64 i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    if (beta == T(0)) {
      for (i64 j = 0; j < n; ++j) crow[j] = T(0);
    } else if (beta != T(1)) {
      for (i64 j = 0; j < n; ++j) crow[j] *= beta;
    }
    for (i64 p = 0; p < k; ++p) {
      const T av = alpha * A(i, p);
      if (av == T(0)) continue;
      for (i64 j = 0; j < n; ++j) crow[j] += av * B(p, j);
    }
  }
}

}  // namespace detail

inline bool has_fast_backend() { return detail::backend().sgemm != nullptr; }

inline void set_num_threads(int n) {
  auto& b = detail::backend();
  if (b.set_threads) b.set_threads(n);
}

// Row-major C := alpha * op(A) * op(B) + beta * C
inline void gemm(bool trans_a, bool trans_b, i64 m, i64 n, i64 k, float alpha,
                 const float* a, i64 lda, const float* b, i64 ldb, float beta,
                 float* c, i64 ldc) {
  auto& be = detail::backend();
  if (be.sgemm) {
    be.sgemm(kRowMajor, trans_a ? kTrans : kNoTrans,
             trans_b ? kTrans : kNoTrans, int(m), int(n), int(k), alpha, a,
             int(lda), b, int(ldb), beta, c, int(ldc));
  } else {
    detail::gemm_fallback(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb,
                          beta, c, ldc);
  }
}

inline void gemm(bool trans_a, bool trans_b, i64 m, i64 n, i64 k, double alpha,
                 const double* a, i64 lda, const double* b, i64 ldb,
                 double beta, double* c, i64 ldc) {
  auto& be = detail::backend();
  if (be.dgemm) {
    be.dgemm(kRowMajor, trans_a ? kTrans : kNoTrans,
             trans_b ? kTrans : kNoTrans, int(m), int(n), int(k), alpha, a,
             int(lda), b, int(ldb), beta, c, int(ldc));
  } else {
    detail::gemm_fallback(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb,
                          beta, c, ldc);
  }
}

}  // namespace encore::blas
