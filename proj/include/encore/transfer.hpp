#pragma once

#include <string>
#include <vector>

#include "encore/encoder.hpp"

namespace encore {

// Adaptive instance normalization: per (sample, channel), rescales content
// activations to the style activations' mean and standard deviation.
// Both standard deviations are computed as sqrt(var + eps), matching the
// reference implementations of the method; this also makes adain(x, x) an
// exact identity.
template <class T>
Var<T> adain(const Var<T>& content, const Var<T>& style, T eps = T(1e-5)) {
  const Shape& cs = content.shape();
  const Shape& ss = style.shape();
  if (cs.ndim() != 4 || ss.ndim() != 4)
    throw std::invalid_argument("adain: expected NCHW inputs");
  if (cs[0] != ss[0])
    throw std::invalid_argument("adain: batch size mismatch");
  if (cs[1] != ss[1])
    throw std::invalid_argument("adain: channel mismatch: content has " +
                                std::to_string(cs[1]) + ", style has " +
                                std::to_string(ss[1]));
  if (eps <= T(0)) throw std::invalid_argument("adain: eps must be positive");
  const i64 N = cs[0], C = cs[1];
  const i64 M = cs[2] * cs[3], Ms = ss[2] * ss[3];

  struct ChannelStats {
    double mu_x, inv_sig_x, mu_s, sig_s;
  };
  auto stats = std::make_shared<std::vector<ChannelStats>>(std::size_t(N * C));

  Tensor<T> out = Tensor<T>::uninitialized(cs);
  const T* pc = content.value().data();
  const T* ps = style.value().data();
  T* po = out.data();
#pragma omp parallel for schedule(static)
  for (i64 nc = 0; nc < N * C; ++nc) {
    const T* xc = pc + nc * M;
    const T* xs = ps + nc * Ms;
    double s1 = 0, s2 = 0;
#pragma omp simd reduction(+ : s1, s2)
    for (i64 i = 0; i < M; ++i) {
      s1 += double(xc[i]);
      s2 += double(xc[i]) * double(xc[i]);
    }
    const double mu_x = s1 / double(M);
    const double var_x = std::max(0.0, s2 / double(M) - mu_x * mu_x);
    double t1 = 0, t2 = 0;
#pragma omp simd reduction(+ : t1, t2)
    for (i64 i = 0; i < Ms; ++i) {
      t1 += double(xs[i]);
      t2 += double(xs[i]) * double(xs[i]);
    }
    const double mu_s = t1 / double(Ms);
    const double var_s = std::max(0.0, t2 / double(Ms) - mu_s * mu_s);
    const double inv_sig_x = 1.0 / std::sqrt(var_x + double(eps));
    const double sig_s = std::sqrt(var_s + double(eps));
    (*stats)[std::size_t(nc)] = {mu_x, inv_sig_x, mu_s, sig_s};
    const T scale = T(sig_s * inv_sig_x);
    const T shift = T(mu_s - mu_x * sig_s * inv_sig_x);
    T* o = po + nc * M;
    for (i64 i = 0; i < M; ++i) o[i] = scale * xc[i] + shift;
  }

  auto node = detail::make_node(std::move(out),
                                {content.handle(), style.handle()}, "adain");
  if (node->requires_grad) {
    node->backward = [stats, N, C, M, Ms](Node<T>& nd) {
      auto& cn = *nd.parents[0];
      auto& sn = *nd.parents[1];
      const T* pc = cn.value.data();
      const T* ps = sn.value.data();
      const T* g = nd.grad.data();
      T* gc = cn.requires_grad ? ensure_grad(cn).data() : nullptr;
      T* gs = sn.requires_grad ? ensure_grad(sn).data() : nullptr;
#pragma omp parallel for schedule(static)
      for (i64 nc = 0; nc < N * C; ++nc) {
        const auto& st = (*stats)[std::size_t(nc)];
        const T* xc = pc + nc * M;
        const T* gr = g + nc * M;
        // gsum = sum g, gxsum = sum g * xhat
        double gsum = 0, gxsum = 0;
#pragma omp simd reduction(+ : gsum, gxsum)
        for (i64 i = 0; i < M; ++i) {
          const double xhat = (double(xc[i]) - st.mu_x) * st.inv_sig_x;
          gsum += double(gr[i]);
          gxsum += double(gr[i]) * xhat;
        }
        if (gc) {
          // instance-norm backward scaled by sig_s
          const double k = st.sig_s * st.inv_sig_x;
          const double a = gsum / double(M);
          const double b = gxsum / double(M);
          T* gg = gc + nc * M;
          for (i64 i = 0; i < M; ++i) {
            const double xhat = (double(xc[i]) - st.mu_x) * st.inv_sig_x;
            gg[i] += T(k * (double(gr[i]) - a - xhat * b));
          }
        }
        if (gs) {
          // y depends on style only through mu_s and sig_s
          const double dmu_s = gsum;
          const double dvar_s = gxsum / (2.0 * st.sig_s);
          const T* xs = ps + nc * Ms;
          T* gg = gs + nc * Ms;
          const double a = dmu_s / double(Ms);
          const double b = 2.0 * dvar_s / double(Ms);
          double mu_s = st.mu_s;
          for (i64 i = 0; i < Ms; ++i)
            gg[i] += T(a + b * (double(xs[i]) - mu_s));
        }
      }
    };
  }
  return Var<T>(node);
}

// Decoder stage: optional 2x nearest upsampling before a 3x3 reflect-padded
// convolution; ReLU on all but the final stage.
template <class T>
struct DecoderStage {
  std::string name;
  Var<T> weight;
  Var<T> bias;
  bool upsample_before = false;
  bool relu_after = true;
};

// Mirror of the split encoder from relu4_1 back to RGB:
// conv(512->256)+ReLU, 2x up, conv(256->128)+ReLU, 2x up, conv(128->64)+ReLU,
// 2x up, conv(64->3). Output spatial size is 8x the feature size.
template <class T>
class Decoder {
 public:
  Decoder() = default;

  static Decoder standard(Rng& rng) {
    const i64 ch[5] = {512, 256, 128, 64, 3};
    Decoder d;
    d.in_channels_ = 512;
    d.in_tag_ = LayerTag::relu4_1;
    for (int i = 0; i < 4; ++i) {
      DecoderStage<T> st;
      st.name = "stage" + std::to_string(i);
      st.upsample_before = i > 0;
      st.relu_after = i < 3;
      const double stddev = std::sqrt(2.0 / double(ch[i] * 9));
      st.weight =
          Var<T>::param(Tensor<T>::randn(Shape{ch[i + 1], ch[i], 3, 3}, rng,
                                         0.0, stddev));
      st.bias = Var<T>::param(Tensor<T>::zeros(Shape{ch[i + 1]}));
      d.stages_.push_back(std::move(st));
    }
    return d;
  }

  struct CustomStage {
    i64 in_ch, out_ch;
    bool upsample_before, relu_after;
  };

  static Decoder custom(const std::vector<CustomStage>& spec, LayerTag in_tag,
                        Rng& rng) {
    Decoder d;
    d.in_tag_ = in_tag;
    d.in_channels_ = spec.empty() ? 0 : spec.front().in_ch;
    int idx = 0;
    for (const auto& cs : spec) {
      DecoderStage<T> st;
      st.name = "stage" + std::to_string(idx++);
      st.upsample_before = cs.upsample_before;
      st.relu_after = cs.relu_after;
      const double stddev = std::sqrt(2.0 / double(cs.in_ch * 9));
      st.weight = Var<T>::param(
          Tensor<T>::randn(Shape{cs.out_ch, cs.in_ch, 3, 3}, rng, 0.0, stddev));
      st.bias = Var<T>::param(Tensor<T>::zeros(Shape{cs.out_ch}));
      d.stages_.push_back(std::move(st));
    }
    return d;
  }

  // feat must be a feature map at the decoder's input tap (relu4_1 for the
  // standard decoder). Raw output is unclamped; clamping happens at export.
  Var<T> forward(const Var<T>& feat, LayerTag tag) const {
    if (tag != in_tag_)
      throw std::invalid_argument("decode: expected " + to_string(in_tag_) +
                                  " features, got " + to_string(tag));
    if (feat.dim(1) != in_channels_)
      throw std::invalid_argument("decode: expected " +
                                  std::to_string(in_channels_) +
                                  " channels, got " + std::to_string(feat.dim(1)));
    Var<T> cur = feat;
    for (const auto& st : stages_) {
      if (st.upsample_before) cur = upsample2(cur);
      cur = conv2d(cur, st.weight, st.bias, 1, /*fuse_relu=*/st.relu_after);
    }
    return cur;
  }

  std::vector<NamedParam<T>> parameters() const {
    std::vector<NamedParam<T>> out;
    for (const auto& st : stages_) {
      out.push_back({st.name + ".weight", st.weight});
      out.push_back({st.name + ".bias", st.bias});
    }
    return out;
  }

  LayerTag input_tag() const { return in_tag_; }
  const std::vector<DecoderStage<T>>& stages() const { return stages_; }

 private:
  std::vector<DecoderStage<T>> stages_;
  i64 in_channels_ = 512;
  LayerTag in_tag_ = LayerTag::relu4_1;
};

template <class T>
struct StylizedPair {
  Tensor<T> image;  // clamped to [0,1]
  std::string content_source;
  std::string style_source;
  T alpha = T(1);
};

template <class T>
Tensor<T> clamp01(const Tensor<T>& t) {
  Tensor<T> out = Tensor<T>::uninitialized(t.shape());
  for (i64 i = 0; i < t.numel(); ++i)
    out[i] = std::min(T(1), std::max(T(0), t[i]));
  return out;
}

// Inference-path stylization: t = adain(E(c), E(s)); decoder input is
// alpha*t + (1-alpha)*E(c). alpha = 1 during all training.
template <class T>
StylizedPair<T> stylize(const Encoder<T>& enc, const Decoder<T>& dec,
                        const Tensor<T>& content, const Tensor<T>& style,
                        T alpha, T eps = T(1e-5)) {
  if (alpha < T(0) || alpha > T(1))
    throw std::invalid_argument("stylize: alpha must lie in [0,1]");
  const LayerTag tag = dec.input_tag();
  Var<T> c = Var<T>::leaf(content);
  Var<T> s = Var<T>::leaf(style);
  auto pc = enc.forward(c, {tag});
  auto ps = enc.forward(s, {tag});
  Var<T> t = adain(pc.at(tag), ps.at(tag), eps);
  Var<T> fed = blend(t, pc.at(tag), alpha);
  Var<T> img = dec.forward(fed, tag);
  StylizedPair<T> out;
  out.image = clamp01(img.value());
  out.alpha = alpha;
  return out;
}

// Identity restoration path: the image stylizes itself.
template <class T>
StylizedPair<T> self_stylize(const Encoder<T>& enc, const Decoder<T>& dec,
                             const Tensor<T>& img, T eps = T(1e-5)) {
  return stylize(enc, dec, img, img, T(1), eps);
}

}  // namespace encore
