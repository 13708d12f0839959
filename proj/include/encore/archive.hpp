#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "encore/tensor.hpp"

namespace encore {

// Named-entry binary container used for both reference weight archives and
// training checkpoints. Little-endian, flat layout:
//
//   magic "ENCA" | u32 format version | u64 entry count |
//   per entry: u32 name length | name | u8 dtype | u32 ndim | i64 dims... |
//              raw payload
//
// Floats round-trip bit-exactly.
class Archive {
 public:
  enum class DType : std::uint8_t { f32 = 0, f64 = 1, i64_t = 2, u8 = 3 };

  static constexpr std::uint32_t kFormatVersion = 1;

  struct Entry {
    DType dtype;
    std::vector<i64> dims;
    std::vector<std::uint8_t> bytes;

    i64 numel() const {
      i64 n = 1;
      for (i64 d : dims) n *= d;
      return dims.empty() ? 1 : n;
    }
  };

  bool contains(const std::string& name) const { return entries_.count(name); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
  }

  template <class T>
  void put_tensor(const std::string& name, const Tensor<T>& t) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    Entry e;
    e.dtype = std::is_same_v<T, float> ? DType::f32 : DType::f64;
    e.dims = t.shape().dims();
    e.bytes.resize(std::size_t(t.numel()) * sizeof(T));
    std::memcpy(e.bytes.data(), t.data(), e.bytes.size());
    entries_[name] = std::move(e);
  }

  void put_i64(const std::string& name, i64 v) {
    Entry e;
    e.dtype = DType::i64_t;
    e.dims = {};
    e.bytes.resize(sizeof(i64));
    std::memcpy(e.bytes.data(), &v, sizeof(i64));
    entries_[name] = std::move(e);
  }

  void put_string(const std::string& name, const std::string& s) {
    Entry e;
    e.dtype = DType::u8;
    e.dims = {i64(s.size())};
    e.bytes.assign(s.begin(), s.end());
    entries_[name] = std::move(e);
  }

  const Entry& get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end())
      throw std::runtime_error("missing " + name);
    return it->second;
  }

  template <class T>
  Tensor<T> get_tensor(const std::string& name) const {
    const Entry& e = get(name);
    const DType want = std::is_same_v<T, float> ? DType::f32 : DType::f64;
    if (e.dtype != want)
      throw std::runtime_error("dtype mismatch for " + name);
    Tensor<T> t = Tensor<T>::uninitialized(Shape(e.dims));
    std::memcpy(t.data(), e.bytes.data(), e.bytes.size());
    return t;
  }

  i64 get_i64(const std::string& name) const {
    const Entry& e = get(name);
    if (e.dtype != DType::i64_t)
      throw std::runtime_error("dtype mismatch for " + name);
    i64 v;
    std::memcpy(&v, e.bytes.data(), sizeof(i64));
    return v;
  }

  std::string get_string(const std::string& name) const {
    const Entry& e = get(name);
    return std::string(e.bytes.begin(), e.bytes.end());
  }

  void save(const std::string& path) const {
    static_assert(std::endian::native == std::endian::little,
                  "archive format assumes a little-endian host");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f.write("ENCA", 4);
    write_u32(f, kFormatVersion);
    write_u64(f, entries_.size());
    for (const auto& [name, e] : entries_) {
      write_u32(f, std::uint32_t(name.size()));
      f.write(name.data(), std::streamsize(name.size()));
      const std::uint8_t dt = std::uint8_t(e.dtype);
      f.write(reinterpret_cast<const char*>(&dt), 1);
      write_u32(f, std::uint32_t(e.dims.size()));
      for (i64 d : e.dims)
        f.write(reinterpret_cast<const char*>(&d), sizeof(i64));
      f.write(reinterpret_cast<const char*>(e.bytes.data()),
              std::streamsize(e.bytes.size()));
    }
    if (!f) throw std::runtime_error("write failed for " + path);
  }

  static Archive load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "ENCA", 4) != 0)
      throw std::runtime_error("corrupt archive " + path + ": bad magic");
    const std::uint32_t version = read_u32(f, path);
    if (version != kFormatVersion)
      throw std::runtime_error("archive version mismatch for " + path +
                               ": file has version " + std::to_string(version) +
                               ", supported version is " +
                               std::to_string(kFormatVersion));
    const std::uint64_t count = read_u64(f, path);
    Archive a;
    for (std::uint64_t i = 0; i < count; ++i) {
      const std::uint32_t name_len = read_u32(f, path);
      if (name_len > (1u << 20)) corrupt(path);
      std::string name(name_len, '\0');
      f.read(name.data(), name_len);
      if (!f) corrupt(path);
      std::uint8_t dt;
      f.read(reinterpret_cast<char*>(&dt), 1);
      if (!f || dt > 3) corrupt(path);
      Entry e;
      e.dtype = DType(dt);
      const std::uint32_t ndim = read_u32(f, path);
      if (ndim > 8) corrupt(path);
      e.dims.resize(ndim);
      for (std::uint32_t d = 0; d < ndim; ++d) {
        f.read(reinterpret_cast<char*>(&e.dims[d]), sizeof(i64));
        if (!f || e.dims[d] < 0) corrupt(path);
      }
      const std::size_t elem =
          e.dtype == DType::f32   ? 4
          : e.dtype == DType::f64 ? 8
          : e.dtype == DType::i64_t ? 8
                                    : 1;
      const std::size_t payload = std::size_t(e.numel()) * elem;
      if (payload > (std::size_t(1) << 33)) corrupt(path);
      e.bytes.resize(payload);
      f.read(reinterpret_cast<char*>(e.bytes.data()), std::streamsize(payload));
      if (!f) corrupt(path);
      a.entries_[name] = std::move(e);
    }
    return a;
  }

 private:
  [[noreturn]] static void corrupt(const std::string& path) {
    throw std::runtime_error("corrupt checkpoint or archive: " + path);
  }

  static void write_u32(std::ofstream& f, std::uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  static void write_u64(std::ofstream& f, std::uint64_t v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  static std::uint32_t read_u32(std::ifstream& f, const std::string& path) {
    std::uint32_t v;
    f.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!f) corrupt(path);
    return v;
  }
  static std::uint64_t read_u64(std::ifstream& f, const std::string& path) {
    std::uint64_t v;
    f.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!f) corrupt(path);
    return v;
  }

  std::map<std::string, Entry> entries_;
};

}  // namespace encore
