#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <initializer_list>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "encore/rng.hpp"

namespace encore {

using i64 = std::int64_t;

// Size-bucketed allocator. Training allocates the same large activation
// buffers every step; recycling them avoids repeated mmap/zero-page traffic.
class BufferPool {
 public:
  static BufferPool& instance() {
    static BufferPool pool;
    return pool;
  }

  void* acquire(std::size_t bytes) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = free_.find(bytes);
      if (it != free_.end() && !it->second.empty()) {
        void* p = it->second.back();
        it->second.pop_back();
        cached_bytes_ -= bytes;
        return p;
      }
    }
    void* p = std::aligned_alloc(64, round_up(bytes));
    if (!p) throw std::bad_alloc();
    return p;
  }

  void release(void* p, std::size_t bytes) {
    std::lock_guard<std::mutex> lock(mu_);
    if (cached_bytes_ + bytes > max_cached_bytes_) {
      std::free(p);
      return;
    }
    free_[bytes].push_back(p);
    cached_bytes_ += bytes;
  }

  void trim() {
    std::lock_guard<std::mutex> lock(mu_);
    for (auto& [sz, v] : free_)
      for (void* p : v) std::free(p);
    free_.clear();
    cached_bytes_ = 0;
  }

  ~BufferPool() { trim(); }

 private:
  static std::size_t round_up(std::size_t b) { return (b + 63) / 64 * 64; }

  std::mutex mu_;
  std::map<std::size_t, std::vector<void*>> free_;
  std::size_t cached_bytes_ = 0;
  std::size_t max_cached_bytes_ = std::size_t(6) << 30;
};

class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<i64> d) : dims_(d) {}
  explicit Shape(std::vector<i64> d) : dims_(std::move(d)) {}

  i64 ndim() const { return i64(dims_.size()); }
  i64 operator[](i64 i) const { return dims_[std::size_t(i)]; }
  i64& operator[](i64 i) { return dims_[std::size_t(i)]; }
  const std::vector<i64>& dims() const { return dims_; }

  i64 numel() const {
    i64 n = 1;
    for (i64 d : dims_) n *= d;
    return dims_.empty() ? 0 : n;
  }

  bool operator==(const Shape& o) const { return dims_ == o.dims_; }
  bool operator!=(const Shape& o) const { return dims_ != o.dims_; }

  std::string str() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) os << ',';
      os << dims_[i];
    }
    os << ')';
    return os.str();
  }

 private:
  std::vector<i64> dims_;
};

// Dense row-major tensor backed by the shared buffer pool. Copying a Tensor
// copies the handle (shared storage); use clone() for a deep copy.
template <class T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape s) {
    Tensor t = uninitialized(std::move(s));
    std::memset(t.data(), 0, std::size_t(t.numel()) * sizeof(T));
    return t;
  }

  static Tensor full(Shape s, T v) {
    Tensor t = uninitialized(std::move(s));
    std::fill(t.data(), t.data() + t.numel(), v);
    return t;
  }

  // Contents are unspecified; caller must overwrite every element.
  static Tensor uninitialized(Shape s) {
    Tensor t;
    t.shape_ = std::move(s);
    t.size_ = t.shape_.numel();
    if (t.size_ > 0) {
      const std::size_t bytes = std::size_t(t.size_) * sizeof(T);
      void* p = BufferPool::instance().acquire(bytes);
      t.data_ = std::shared_ptr<T>(static_cast<T*>(p), [bytes](T* q) {
        BufferPool::instance().release(q, bytes);
      });
    }
    return t;
  }

  static Tensor from_vector(Shape s, const std::vector<T>& v) {
    Tensor t = uninitialized(std::move(s));
    if (i64(v.size()) != t.numel())
      throw std::invalid_argument("from_vector: size mismatch");
    std::copy(v.begin(), v.end(), t.data());
    return t;
  }

  static Tensor randn(Shape s, Rng& rng, double mean = 0.0,
                      double stddev = 1.0) {
    Tensor t = uninitialized(std::move(s));
    for (i64 i = 0; i < t.numel(); ++i)
      t.data()[i] = T(rng.normal(mean, stddev));
    return t;
  }

  static Tensor rand_uniform(Shape s, Rng& rng, double lo = 0.0,
                             double hi = 1.0) {
    Tensor t = uninitialized(std::move(s));
    for (i64 i = 0; i < t.numel(); ++i)
      t.data()[i] = T(lo + (hi - lo) * rng.next_double());
    return t;
  }

  static Tensor scalar(T v) { return full(Shape{1}, v); }

  bool defined() const { return size_ > 0; }
  const Shape& shape() const { return shape_; }
  i64 ndim() const { return shape_.ndim(); }
  i64 dim(i64 i) const { return shape_[i]; }
  i64 numel() const { return size_; }

  T* data() { return data_.get(); }
  const T* data() const { return data_.get(); }

  T& operator[](i64 i) { return data_.get()[i]; }
  const T& operator[](i64 i) const { return data_.get()[i]; }

  // 4-d accessor for tests and debugging
  T& at(i64 n, i64 c, i64 h, i64 w) {
    return data_.get()[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(i64 n, i64 c, i64 h, i64 w) const {
    return data_.get()[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  Tensor clone() const {
    if (!defined()) return {};
    Tensor t = uninitialized(shape_);
    std::memcpy(t.data(), data(), std::size_t(size_) * sizeof(T));
    return t;
  }

  // Shares storage; element count must match.
  Tensor reshape(Shape s) const {
    if (s.numel() != size_) throw std::invalid_argument("reshape: numel mismatch");
    Tensor t = *this;
    t.shape_ = std::move(s);
    return t;
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> t = Tensor<U>::uninitialized(shape_);
    for (i64 i = 0; i < size_; ++i) t.data()[i] = U(data()[i]);
    return t;
  }

  void fill(T v) { std::fill(data(), data() + size_, v); }
  void zero() { std::memset(data(), 0, std::size_t(size_) * sizeof(T)); }

  void release() {
    data_.reset();
    shape_ = Shape{};
    size_ = 0;
  }

  bool all_finite() const {
    for (i64 i = 0; i < size_; ++i)
      if (!std::isfinite(double(data()[i]))) return false;
    return true;
  }

 private:
  Shape shape_;
  std::shared_ptr<T> data_;
  i64 size_ = 0;
};

template <class T>
bool same_data(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  for (i64 i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  for (i64 i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

}  // namespace encore
