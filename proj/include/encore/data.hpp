#pragma once

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "encore/image.hpp"
#include "encore/rng.hpp"

namespace encore {

struct CorpusSpec {
  std::string content_dir;
  std::string style_dir;
  std::vector<std::string> extensions = {".png", ".jpg", ".jpeg"};
  i64 min_side = 512;
  i64 crop = 256;
};

namespace detail {

inline bool has_accepted_extension(const std::filesystem::path& p,
                                   const std::vector<std::string>& exts) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(),
                 [](unsigned char c) { return char(std::tolower(c)); });
  return std::find(exts.begin(), exts.end(), e) != exts.end();
}

}  // namespace detail

// Sorted listing of decodable images. Listings are sorted lexicographically
// by filename before any shuffling so seeds are portable across filesystems.
// Unreadable files are skipped with a warning on stderr.
inline std::vector<std::string> scan_image_dir(
    const std::string& dir, const std::vector<std::string>& extensions) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir))
    throw std::runtime_error("not a directory: " + dir);
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (!detail::has_accepted_extension(entry.path(), extensions)) continue;
    names.push_back(entry.path().string());
  }
  std::sort(names.begin(), names.end());
  std::vector<std::string> decodable;
  for (const auto& p : names) {
    RawImage img;
    if (try_load_image(p, img)) {
      decodable.push_back(p);
    } else {
      std::cerr << "warning: skipping unreadable image " << p << "\n";
    }
  }
  if (decodable.empty())
    throw std::runtime_error("no decodable images in " + dir);
  return decodable;
}

// Optional manifest: one path per line, '#' comments.
inline std::vector<std::string> read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open manifest " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(f, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    while (!line.empty() && std::isspace((unsigned char)line.back()))
      line.pop_back();
    std::size_t b = 0;
    while (b < line.size() && std::isspace((unsigned char)line[b])) ++b;
    line = line.substr(b);
    if (!line.empty()) out.push_back(line);
  }
  if (out.empty()) throw std::runtime_error("empty manifest " + path);
  return out;
}

// A corpus source is either a directory tree or a manifest file of explicit
// paths (kept in file order; a manifest is the caller's reproducible subset).
inline std::vector<std::string> resolve_image_list(
    const std::string& source, const std::vector<std::string>& extensions) {
  namespace fs = std::filesystem;
  if (fs::is_regular_file(source)) {
    std::vector<std::string> ok;
    for (const auto& p : read_manifest(source)) {
      RawImage img;
      if (try_load_image(p, img)) {
        ok.push_back(p);
      } else {
        std::cerr << "warning: skipping unreadable image " << p << "\n";
      }
    }
    if (ok.empty())
      throw std::runtime_error("no decodable images listed in " + source);
    return ok;
  }
  return scan_image_dir(source, extensions);
}

inline std::pair<std::vector<std::string>, std::vector<std::string>>
scan_corpus(const CorpusSpec& spec) {
  return {resolve_image_list(spec.content_dir, spec.extensions),
          resolve_image_list(spec.style_dir, spec.extensions)};
}

// Deterministic preprocessing: rescale so min(h,w) = min_side (bilinear up,
// area down), then a seeded uniform crop. Tiny images upscale.
template <class T>
Tensor<T> preprocess(const RawImage& img, std::uint64_t crop_seed,
                     i64 min_side, i64 crop_size) {
  Tensor<T> t = to_tensor<T>(img);
  t = resize_min_side(t, min_side);
  const i64 H = t.dim(1), W = t.dim(2);
  i64 ch = std::min(crop_size, H), cw = std::min(crop_size, W);
  Rng rng(derive_seed(crop_seed, RngStream::crop));
  const i64 r0 = rng.uniform_int(0, H - ch + 1);
  const i64 c0 = rng.uniform_int(0, W - cw + 1);
  Tensor<T> out = crop(t, r0, c0, ch, cw);
  if (ch != crop_size || cw != crop_size)
    out = resize(out, crop_size, crop_size);
  return out;
}

template <class T>
struct Batch {
  Tensor<T> content;  // (B,3,S,S)
  Tensor<T> style;    // (B,3,S,S)
  std::vector<std::string> content_ids;
  std::vector<std::string> style_ids;
  std::uint64_t step_seed = 0;
};

// Seeded batch stream over two corpora. Content and style streams draw
// without replacement within an epoch, independently; everything is a pure
// function of (seed, sorted listing, step).
template <class T>
class Loader {
 public:
  Loader(CorpusSpec spec, i64 batch_size, std::uint64_t seed)
      : spec_(std::move(spec)), batch_(batch_size), seed_(seed) {
    auto [c, s] = scan_corpus(spec_);
    content_ = std::move(c);
    style_ = std::move(s);
    if (batch_ < 1) throw std::invalid_argument("batch size must be >= 1");
    if (i64(content_.size()) < batch_ || i64(style_.size()) < batch_)
      throw std::runtime_error(
          "batch size " + std::to_string(batch_) + " exceeds corpus size (" +
          std::to_string(content_.size()) + " content, " +
          std::to_string(style_.size()) + " style)");
  }

  i64 batch_size() const { return batch_; }
  i64 content_count() const { return i64(content_.size()); }
  i64 style_count() const { return i64(style_.size()); }

  Batch<T> next_batch(i64 step) {
    Batch<T> b;
    b.step_seed = derive_seed(seed_, 0x5e9ULL, std::uint64_t(step));
    b.content = Tensor<T>::uninitialized(
        Shape{batch_, 3, spec_.crop, spec_.crop});
    b.style = Tensor<T>::uninitialized(Shape{batch_, 3, spec_.crop, spec_.crop});
    for (i64 i = 0; i < batch_; ++i) {
      const std::string cpath = pick(content_, step, i, 0);
      const std::string spath = pick(style_, step, i, 1);
      b.content_ids.push_back(cpath);
      b.style_ids.push_back(spath);
      Tensor<T> c = preprocess<T>(cached(cpath),
                                  derive_seed(seed_, std::uint64_t(step), i, 10),
                                  spec_.min_side, spec_.crop);
      Tensor<T> s = preprocess<T>(cached(spath),
                                  derive_seed(seed_, std::uint64_t(step), i, 11),
                                  spec_.min_side, spec_.crop);
      std::memcpy(b.content.data() + i * c.numel(), c.data(),
                  std::size_t(c.numel()) * sizeof(T));
      std::memcpy(b.style.data() + i * s.numel(), s.data(),
                  std::size_t(s.numel()) * sizeof(T));
    }
    return b;
  }

 private:
  // without-replacement position within the epoch's seeded permutation
  const std::string& pick(const std::vector<std::string>& list, i64 step,
                          i64 item, int role) {
    const i64 n = i64(list.size());
    const i64 flat = step * batch_ + item;
    const i64 epoch = flat / n;
    const i64 pos = flat % n;
    auto& perm = perm_cache_[{role, epoch}];
    if (perm.empty()) {
      Rng rng(derive_seed(seed_, RngStream::corpus_epoch, std::uint64_t(epoch),
                          std::uint64_t(role)));
      perm = rng.permutation(n);
    }
    return list[std::size_t(perm[std::size_t(pos)])];
  }

  const RawImage& cached(const std::string& path) {
    auto it = cache_.find(path);
    if (it != cache_.end()) return it->second;
    return cache_.emplace(path, load_image(path)).first->second;
  }

  CorpusSpec spec_;
  i64 batch_;
  std::uint64_t seed_;
  std::vector<std::string> content_;
  std::vector<std::string> style_;
  std::map<std::pair<int, i64>, std::vector<i64>> perm_cache_;
  std::map<std::string, RawImage> cache_;
};

}  // namespace encore
