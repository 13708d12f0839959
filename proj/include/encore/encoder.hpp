#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "encore/archive.hpp"
#include "encore/conv.hpp"

namespace encore {

// Feature tap points. Ordering is total and fixed.
enum class LayerTag : int {
  relu1_1 = 0,
  relu2_1 = 1,
  relu3_1 = 2,
  relu4_1 = 3,
  relu5_1 = 4,
};

constexpr int kNumLayerTags = 5;

inline int tap_index(LayerTag t) { return static_cast<int>(t); }

inline i64 layer_channels(LayerTag t) {
  constexpr i64 ch[kNumLayerTags] = {64, 128, 256, 512, 512};
  return ch[tap_index(t)];
}

// number of 2x poolings applied before this tap
inline int layer_pools(LayerTag t) {
  return tap_index(t) < 4 ? tap_index(t) : 4;
}

inline std::string to_string(LayerTag t) {
  constexpr const char* names[kNumLayerTags] = {"relu1_1", "relu2_1", "relu3_1",
                                                "relu4_1", "relu5_1"};
  return names[tap_index(t)];
}

inline LayerTag parse_layer_tag(const std::string& s) {
  for (int i = 0; i < kNumLayerTags; ++i) {
    LayerTag t = LayerTag(i);
    if (to_string(t) == s) return t;
  }
  throw std::invalid_argument("unknown layer tag: " + s);
}

using TapSet = std::vector<LayerTag>;

inline TapSet default_content_taps() {
  return {LayerTag::relu1_1, LayerTag::relu2_1, LayerTag::relu3_1,
          LayerTag::relu4_1};
}

// Per-layer activations from one forward pass of one input batch.
template <class T>
struct FeaturePyramid {
  std::array<Var<T>, kNumLayerTags> taps;

  bool has(LayerTag t) const { return taps[std::size_t(tap_index(t))].defined(); }
  const Var<T>& at(LayerTag t) const {
    const Var<T>& v = taps[std::size_t(tap_index(t))];
    if (!v.defined())
      throw std::logic_error("feature pyramid has no tap " + to_string(t));
    return v;
  }
  void set(LayerTag t, Var<T> v) { taps[std::size_t(tap_index(t))] = std::move(v); }
};

enum class EncoderMode { split, full, custom };

template <class T>
struct ConvStage {
  std::string name;       // archive entry prefix, e.g. conv3_1
  Var<T> weight;          // (Cout, Cin, k, k)
  Var<T> bias;            // (Cout)
  bool pool_before = false;
  std::optional<LayerTag> tap;
};

template <class T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

namespace detail {

// VGG-19 prefix: convs per block
inline const std::array<int, 5>& vgg_block_convs() {
  static const std::array<int, 5> counts = {2, 2, 4, 4, 4};
  return counts;
}

inline i64 vgg_block_channels(int block) {
  constexpr i64 ch[5] = {64, 128, 256, 512, 512};
  return ch[block - 1];
}

}  // namespace detail

// VGG-style feature extractor. Two standard layouts plus a free-form one:
//   full  – the standard VGG-19 prefix up to `depth` (frozen reference)
//   split – only the conv{b}_1 layer of each block plus pooling/ReLU
//   custom – arbitrary stage list (toy encoders in tests and audits)
template <class T>
class Encoder {
 public:
  Encoder() = default;

  // Builds the frozen full-mode reference from a named weight archive.
  // Entries conv{b}_{k}.weight (out,in,3,3) and conv{b}_{k}.bias (out) must
  // all be present with the standard shapes up to `depth`.
  static Encoder import_reference(const Archive& a,
                                  LayerTag depth = LayerTag::relu4_1) {
    Encoder e;
    e.mode_ = EncoderMode::full;
    e.depth_ = depth;
    e.trainable_ = false;
    const int last_block = tap_index(depth) + 1;
    i64 in_ch = 3;
    for (int b = 1; b <= last_block; ++b) {
      const i64 out_ch = detail::vgg_block_channels(b);
      const int convs = (b == last_block) ? 1 : detail::vgg_block_convs()[b - 1];
      for (int k = 1; k <= convs; ++k) {
        const std::string name =
            "conv" + std::to_string(b) + "_" + std::to_string(k);
        ConvStage<T> st;
        st.name = name;
        st.pool_before = (k == 1 && b > 1);
        st.weight = Var<T>::leaf(load_checked(a, name + ".weight",
                                              Shape{out_ch, in_ch, 3, 3}));
        st.bias = Var<T>::leaf(load_checked(a, name + ".bias", Shape{out_ch}));
        if (k == 1) st.tap = LayerTag(b - 1);
        e.stages_.push_back(std::move(st));
        in_ch = out_ch;
      }
    }
    return e;
  }

  // Trainable split-mode encoder initialized from the reference's conv{b}_1
  // parameters.
  static Encoder split_from(const Encoder& reference, LayerTag depth) {
    if (reference.mode_ != EncoderMode::full)
      throw std::invalid_argument("split_from: reference must be full-mode");
    if (tap_index(depth) > tap_index(reference.depth_))
      throw std::invalid_argument(
          "split_from: requested depth " + to_string(depth) +
          " exceeds reference depth " + to_string(reference.depth_));
    Encoder e;
    e.mode_ = EncoderMode::split;
    e.depth_ = depth;
    e.trainable_ = true;
    for (int b = 1; b <= tap_index(depth) + 1; ++b) {
      const std::string name = "conv" + std::to_string(b) + "_1";
      const ConvStage<T>* src = reference.find_stage(name);
      if (!src) throw std::logic_error("reference missing stage " + name);
      ConvStage<T> st;
      st.name = name;
      st.pool_before = b > 1;
      st.weight = Var<T>::param(src->weight.value().clone());
      st.bias = Var<T>::param(src->bias.value().clone());
      st.tap = LayerTag(b - 1);
      e.stages_.push_back(std::move(st));
    }
    return e;
  }

  // zero-initialized split layout; used when loading checkpoints
  static Encoder split_shell(LayerTag depth) {
    Encoder e;
    e.mode_ = EncoderMode::split;
    e.depth_ = depth;
    e.trainable_ = true;
    i64 in_ch = 3;
    for (int b = 1; b <= tap_index(depth) + 1; ++b) {
      const i64 out_ch = layer_channels(LayerTag(b - 1));
      ConvStage<T> st;
      st.name = "conv" + std::to_string(b) + "_1";
      st.pool_before = b > 1;
      st.weight = Var<T>::param(Tensor<T>::zeros(Shape{out_ch, in_ch, 3, 3}));
      st.bias = Var<T>::param(Tensor<T>::zeros(Shape{out_ch}));
      st.tap = LayerTag(b - 1);
      e.stages_.push_back(std::move(st));
      in_ch = out_ch;
    }
    return e;
  }

  struct CustomStage {
    i64 in_ch, out_ch, ksize;
    bool pool_before;
    std::optional<LayerTag> tap;
  };

  // Free-form encoder (any channel widths, 1x1 or 3x3 kernels).
  static Encoder custom(const std::vector<CustomStage>& spec, Rng& rng,
                        bool trainable) {
    Encoder e;
    e.mode_ = EncoderMode::custom;
    e.trainable_ = trainable;
    int idx = 0;
    LayerTag deepest = LayerTag::relu1_1;
    for (const auto& cs : spec) {
      ConvStage<T> st;
      st.name = "custom" + std::to_string(idx++);
      st.pool_before = cs.pool_before;
      const double stddev = std::sqrt(2.0 / double(cs.in_ch * cs.ksize * cs.ksize));
      Tensor<T> w = Tensor<T>::randn(Shape{cs.out_ch, cs.in_ch, cs.ksize, cs.ksize},
                                     rng, 0.0, stddev);
      Tensor<T> b = Tensor<T>::zeros(Shape{cs.out_ch});
      st.weight = trainable ? Var<T>::param(std::move(w)) : Var<T>::leaf(std::move(w));
      st.bias = trainable ? Var<T>::param(std::move(b)) : Var<T>::leaf(std::move(b));
      st.tap = cs.tap;
      if (cs.tap) deepest = std::max(deepest, *cs.tap);
      e.stages_.push_back(std::move(st));
    }
    e.depth_ = deepest;
    return e;
  }

  // One forward pass collecting the requested taps. Inputs must be
  // (N,3,H,W) with H and W divisible by 2^(pools up to the encoder depth).
  FeaturePyramid<T> forward(const Var<T>& images, const TapSet& taps) const {
    for (LayerTag t : taps) {
      if (tap_index(t) > tap_index(depth_))
        throw std::invalid_argument("tap " + to_string(t) +
                                    " beyond encoder depth " + to_string(depth_));
    }
    if (mode_ != EncoderMode::custom) {
      const i64 div = i64(1) << layer_pools(depth_);
      if (images.dim(2) % div || images.dim(3) % div)
        throw std::invalid_argument(
            "input spatial size " + std::to_string(images.dim(2)) + "x" +
            std::to_string(images.dim(3)) + " not divisible by " +
            std::to_string(div));
    }
    int deepest = -1;
    for (LayerTag t : taps) deepest = std::max(deepest, tap_index(t));

    FeaturePyramid<T> pyr;
    Var<T> cur = images;
    for (const auto& st : stages_) {
      if (st.pool_before) cur = maxpool2(cur);
      cur = conv2d(cur, st.weight, st.bias, 1, /*fuse_relu=*/true);
      if (st.tap) {
        const bool wanted =
            std::find(taps.begin(), taps.end(), *st.tap) != taps.end();
        if (wanted) pyr.set(*st.tap, cur);
        if (tap_index(*st.tap) >= deepest) break;
      }
    }
    for (LayerTag t : taps)
      if (!pyr.has(t))
        throw std::logic_error("encoder did not produce tap " + to_string(t));
    return pyr;
  }

  EncoderMode mode() const { return mode_; }
  LayerTag depth() const { return depth_; }
  bool trainable() const { return trainable_; }
  const std::vector<ConvStage<T>>& stages() const { return stages_; }

  std::vector<NamedParam<T>> parameters() const {
    std::vector<NamedParam<T>> out;
    for (const auto& st : stages_) {
      out.push_back({st.name + ".weight", st.weight});
      out.push_back({st.name + ".bias", st.bias});
    }
    return out;
  }

  i64 weight_count() const {
    i64 n = 0;
    for (const auto& st : stages_) n += st.weight.value().numel();
    return n;
  }

  i64 bias_count() const {
    i64 n = 0;
    for (const auto& st : stages_) n += st.bias.value().numel();
    return n;
  }

  i64 conv_layer_count() const { return i64(stages_.size()); }

  const ConvStage<T>* find_stage(const std::string& name) const {
    for (const auto& st : stages_)
      if (st.name == name) return &st;
    return nullptr;
  }

 private:
  static Tensor<T> load_checked(const Archive& a, const std::string& name,
                                const Shape& want) {
    if (!a.contains(name)) throw std::runtime_error("missing " + name);
    Tensor<T> t = a.template get_tensor<T>(name);
    if (t.shape() != want)
      throw std::runtime_error("shape mismatch for " + name + ": expected " +
                               want.str() + ", got " + t.shape().str());
    return t;
  }

  EncoderMode mode_ = EncoderMode::full;
  LayerTag depth_ = LayerTag::relu4_1;
  bool trainable_ = false;
  std::vector<ConvStage<T>> stages_;
};

}  // namespace encore
