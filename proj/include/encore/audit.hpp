#pragma once

#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "encore/augment.hpp"
#include "encore/data.hpp"
#include "encore/losses.hpp"

namespace encore {

// One audited pair: the cross-image style distance against the distance
// between an image and its own block-shuffled copy. A row is inconsistent
// when the latent space puts two different images closer in style than an
// image and its exactly-equal-style rearrangement.
struct TripleRow {
  std::string image_a;
  std::string image_b;
  double d_cross = 0;
  double d_shuffle = 0;
  bool inconsistent = false;
};

struct TripleReport {
  std::vector<TripleRow> rows;
  double inconsistency_rate = 0;
  double mean_d_cross = 0;
  double mean_d_shuffle = 0;
  i64 n_blocks = 0;
  std::uint64_t seed = 0;

  void finalize() {
    double cs = 0, ss = 0;
    i64 bad = 0;
    for (const auto& r : rows) {
      cs += r.d_cross;
      ss += r.d_shuffle;
      bad += r.inconsistent ? 1 : 0;
    }
    const double n = rows.empty() ? 1.0 : double(rows.size());
    mean_d_cross = cs / n;
    mean_d_shuffle = ss / n;
    inconsistency_rate = rows.empty() ? 0.0 : double(bad) / n;
  }
};

namespace detail {

// deterministic sizing: min side to 256, center crop to a side divisible by
// both the pooling factor and the block count
template <class T>
Tensor<T> audit_preprocess(const RawImage& img, i64 n_blocks) {
  Tensor<T> t = resize_min_side(to_tensor<T>(img), 256);
  i64 unit = 8;
  while (unit % n_blocks != 0) unit += 8;  // lcm(8, n_blocks)
  const i64 side = std::max<i64>(unit, 256 / unit * unit);
  return center_crop(t, side, side);
}

}  // namespace detail

// The latent-space consistency measurement: samples `triples` pairs (A, B)
// of distinct images, shuffles A into A', and compares
// d_cross = D_style(A, B) with d_shuffle = D_style(A, A').
template <class T>
TripleReport audit_triples(const Encoder<T>& encoder,
                           const std::vector<std::string>& image_paths,
                           i64 triples, i64 n_blocks, const TapSet& layers,
                           std::uint64_t seed) {
  if (image_paths.size() < 2)
    throw std::invalid_argument("audit needs at least 2 images, got " +
                                std::to_string(image_paths.size()));
  if (triples < 1) throw std::invalid_argument("triples must be >= 1");
  if (n_blocks < 1) throw std::invalid_argument("n_blocks must be >= 1");

  TripleReport report;
  report.n_blocks = n_blocks;
  report.seed = seed;
  Rng rng(derive_seed(seed, RngStream::audit));

  // cache decoded + preprocessed images by index
  std::vector<Tensor<T>> cache(image_paths.size());
  auto image_at = [&](i64 idx) -> const Tensor<T>& {
    auto& slot = cache[std::size_t(idx)];
    if (!slot.defined())
      slot = detail::audit_preprocess<T>(
          load_image(image_paths[std::size_t(idx)]), n_blocks);
    return slot;
  };

  for (i64 k = 0; k < triples; ++k) {
    const i64 ia = rng.uniform_int(0, i64(image_paths.size()));
    i64 ib = rng.uniform_int(0, i64(image_paths.size()) - 1);
    if (ib >= ia) ++ib;  // distinct images
    const Tensor<T>& a = image_at(ia);
    const Tensor<T>& b = image_at(ib);
    const ShufflePlan plan = ShufflePlan::sample(
        n_blocks, derive_seed(seed, RngStream::audit, std::uint64_t(k) + 1));
    const Tensor<T> a_shuffled = shuffle_blocks(a, plan);

    TripleRow row;
    row.image_a = image_paths[std::size_t(ia)];
    row.image_b = image_paths[std::size_t(ib)];
    row.d_cross = double(style_distance(a, b, encoder, layers));
    row.d_shuffle = double(style_distance(a, a_shuffled, encoder, layers));
    row.inconsistent = row.d_cross < row.d_shuffle;
    report.rows.push_back(std::move(row));
  }
  report.finalize();
  return report;
}

inline void write_report_csv(const TripleReport& r, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "image_a,image_b,d_cross,d_shuffle,inconsistent\n";
  f.precision(10);
  for (const auto& row : r.rows)
    f << row.image_a << ',' << row.image_b << ',' << row.d_cross << ','
      << row.d_shuffle << ',' << (row.inconsistent ? 1 : 0) << "\n";
}

inline void write_report_json(const TripleReport& r, const std::string& path) {
  nlohmann::json j;
  j["triples"] = r.rows.size();
  j["inconsistency_rate"] = r.inconsistency_rate;
  j["mean_d_cross"] = r.mean_d_cross;
  j["mean_d_shuffle"] = r.mean_d_shuffle;
  j["n_blocks"] = r.n_blocks;
  j["seed"] = r.seed;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << j.dump(2) << "\n";
}

// Per-pixel channel mean of a tapped feature map, min-max normalized, at
// feature resolution. Constant maps normalize to mid-gray.
template <class T>
Tensor<T> feature_heatmap(const Encoder<T>& encoder, const Tensor<T>& image,
                          LayerTag layer) {
  Tensor<T> batched =
      image.ndim() == 3
          ? image.reshape(Shape{1, image.dim(0), image.dim(1), image.dim(2)})
          : image;
  auto pyr = encoder.forward(Var<T>::leaf(batched), {layer});
  const Tensor<T>& f = pyr.at(layer).value();
  const i64 C = f.dim(1), H = f.dim(2), W = f.dim(3);
  Tensor<T> gray = Tensor<T>::zeros(Shape{H, W});
  for (i64 c = 0; c < C; ++c)
    for (i64 i = 0; i < H * W; ++i) gray[i] += f[c * H * W + i];
  T lo = gray[0], hi = gray[0];
  for (i64 i = 0; i < H * W; ++i) {
    lo = std::min(lo, gray[i]);
    hi = std::max(hi, gray[i]);
  }
  if (hi - lo < T(1e-12)) {
    gray.fill(T(0.5));
  } else {
    for (i64 i = 0; i < H * W; ++i) gray[i] = (gray[i] - lo) / (hi - lo);
  }
  return gray;
}

template <class T>
void dump_features(const Encoder<T>& encoder, const Tensor<T>& image,
                   LayerTag layer, const std::string& out_path) {
  save_gray_png(out_path, feature_heatmap(encoder, image, layer));
}

}  // namespace encore
