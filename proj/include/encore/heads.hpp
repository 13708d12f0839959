#pragma once

#include <map>
#include <string>
#include <vector>

#include "encore/encoder.hpp"

namespace encore {

namespace detail {

template <class T>
Tensor<T> fan_in_uniform(Shape s, i64 fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(double(fan_in));
  return Tensor<T>::rand_uniform(std::move(s), rng, -bound, bound);
}

}  // namespace detail

// Style mapping network: strided 3x3 conv + ReLU, global average pooling,
// then a two-layer MLP onto the unit sphere. The strided conv plus global
// pooling discards spatial layout, which is what lets block-shuffled copies
// of a style image share an embedding target.
template <class T>
class StyleHead {
 public:
  StyleHead() = default;

  StyleHead(i64 in_ch, i64 conv_out, i64 hidden, i64 out_dim, Rng& rng)
      : in_ch_(in_ch), out_dim_(out_dim) {
    const double conv_std = std::sqrt(2.0 / double(in_ch * 9));
    conv_w_ = Var<T>::param(
        Tensor<T>::randn(Shape{conv_out, in_ch, 3, 3}, rng, 0.0, conv_std));
    conv_b_ = Var<T>::param(Tensor<T>::zeros(Shape{conv_out}));
    fc1_w_ = Var<T>::param(
        detail::fan_in_uniform<T>(Shape{hidden, conv_out}, conv_out, rng));
    fc1_b_ = Var<T>::param(Tensor<T>::zeros(Shape{hidden}));
    fc2_w_ = Var<T>::param(
        detail::fan_in_uniform<T>(Shape{out_dim, hidden}, hidden, rng));
    fc2_b_ = Var<T>::param(Tensor<T>::zeros(Shape{out_dim}));
  }

  static StyleHead standard(Rng& rng) { return StyleHead(512, 256, 256, 128, rng); }

  // feat: relu4_1 features (N, in_ch, H, W), H and W >= 2.
  // Returns unit-norm embeddings (N, out_dim).
  Var<T> embed(const Var<T>& feat, LayerTag tag) const {
    if (tag != LayerTag::relu4_1 && in_ch_ == 512)
      throw std::invalid_argument("style head expects relu4_1 features, got " +
                                  to_string(tag));
    if (feat.dim(1) != in_ch_)
      throw std::invalid_argument("style head expects " + std::to_string(in_ch_) +
                                  " channels, got " + std::to_string(feat.dim(1)));
    if (feat.dim(2) < 2 || feat.dim(3) < 2)
      throw std::invalid_argument("style head needs spatial side >= 2");
    Var<T> h = conv2d(feat, conv_w_, conv_b_, 2, /*fuse_relu=*/true);
    Var<T> p = global_avg_pool(h);
    Var<T> f = relu(linear(p, fc1_w_, fc1_b_));
    return l2_normalize(linear(f, fc2_w_, fc2_b_));
  }

  i64 output_dim() const { return out_dim_; }

  std::vector<NamedParam<T>> parameters() const {
    return {{"conv.weight", conv_w_}, {"conv.bias", conv_b_},
            {"fc1.weight", fc1_w_},   {"fc1.bias", fc1_b_},
            {"fc2.weight", fc2_w_},   {"fc2.bias", fc2_b_}};
  }

 private:
  i64 in_ch_ = 512;
  i64 out_dim_ = 128;
  Var<T> conv_w_, conv_b_, fc1_w_, fc1_b_, fc2_w_, fc2_b_;
};

// Content mapping network, one instance per tap layer: spatially averaged
// patch features through a two-layer MLP (C -> C -> out_dim), unit-normed.
// Embeddings from different layer heads are never compared to each other.
template <class T>
class ContentHead {
 public:
  ContentHead() = default;

  ContentHead(LayerTag layer, i64 channels, i64 out_dim, Rng& rng)
      : layer_(layer), channels_(channels), out_dim_(out_dim) {
    fc1_w_ = Var<T>::param(
        detail::fan_in_uniform<T>(Shape{channels, channels}, channels, rng));
    fc1_b_ = Var<T>::param(Tensor<T>::zeros(Shape{channels}));
    fc2_w_ = Var<T>::param(
        detail::fan_in_uniform<T>(Shape{out_dim, channels}, channels, rng));
    fc2_b_ = Var<T>::param(Tensor<T>::zeros(Shape{out_dim}));
  }

  static ContentHead standard(LayerTag layer, Rng& rng) {
    return ContentHead(layer, layer_channels(layer), 256, rng);
  }

  // patch_feat: (K, channels, h, w) activations of image patches at this
  // head's layer. Returns unit-norm embeddings (K, out_dim).
  Var<T> embed(const Var<T>& patch_feat, LayerTag tag) const {
    if (tag != layer_)
      throw std::invalid_argument("content head for " + to_string(layer_) +
                                  " got features tagged " + to_string(tag));
    if (patch_feat.dim(1) != channels_)
      throw std::invalid_argument("content head expects " +
                                  std::to_string(channels_) + " channels, got " +
                                  std::to_string(patch_feat.dim(1)));
    Var<T> p = global_avg_pool(patch_feat);
    Var<T> f = relu(linear(p, fc1_w_, fc1_b_));
    return l2_normalize(linear(f, fc2_w_, fc2_b_));
  }

  LayerTag layer() const { return layer_; }
  i64 output_dim() const { return out_dim_; }

  std::vector<NamedParam<T>> parameters() const {
    return {{"fc1.weight", fc1_w_},
            {"fc1.bias", fc1_b_},
            {"fc2.weight", fc2_w_},
            {"fc2.bias", fc2_b_}};
  }

 private:
  LayerTag layer_ = LayerTag::relu1_1;
  i64 channels_ = 64;
  i64 out_dim_ = 256;
  Var<T> fc1_w_, fc1_b_, fc2_w_, fc2_b_;
};

template <class T>
using ContentHeads = std::map<LayerTag, ContentHead<T>>;

template <class T>
ContentHeads<T> make_content_heads(const TapSet& taps, Rng& rng) {
  ContentHeads<T> heads;
  for (LayerTag t : taps) heads.emplace(t, ContentHead<T>::standard(t, rng));
  return heads;
}

}  // namespace encore
