#pragma once

#include <iostream>
#include <optional>
#include <string>

#include "encore/archive.hpp"
#include "encore/config.hpp"
#include "encore/heads.hpp"
#include "encore/optim.hpp"
#include "encore/transfer.hpp"

namespace encore {

// Everything the optimizer touches. The frozen reference encoder is not part
// of a checkpoint; it always comes from its weight archive.
template <class T>
struct TrainableModules {
  Encoder<T> encoder;  // split mode
  Decoder<T> decoder;
  StyleHead<T> style_head;
  ContentHeads<T> content_heads;

  std::vector<NamedParam<T>> parameters() const {
    std::vector<NamedParam<T>> out;
    for (auto& p : encoder.parameters())
      out.push_back({"encoder." + p.name, p.var});
    for (auto& p : decoder.parameters())
      out.push_back({"decoder." + p.name, p.var});
    for (auto& p : style_head.parameters())
      out.push_back({"style_head." + p.name, p.var});
    for (auto& [tag, head] : content_heads)
      for (auto& p : head.parameters())
        out.push_back({"content_head." + to_string(tag) + "." + p.name, p.var});
    return out;
  }
};

// Fresh trainable stack: split encoder initialized from the reference,
// decoder and heads randomly initialized from the run seed.
template <class T>
TrainableModules<T> build_trainable(const Encoder<T>& reference, LayerTag depth,
                                    const TapSet& content_taps,
                                    std::uint64_t seed) {
  TrainableModules<T> m;
  m.encoder = Encoder<T>::split_from(reference, depth);
  Rng rng(derive_seed(seed, RngStream::weight_init));
  m.decoder = Decoder<T>::standard(rng);
  m.style_head = StyleHead<T>::standard(rng);
  m.content_heads = make_content_heads<T>(content_taps, rng);
  return m;
}

constexpr i64 kCheckpointVersion = 1;

template <class T>
void save_checkpoint(const std::string& path, const TrainableModules<T>& m,
                     const Adam<T>* optimizer, i64 step,
                     std::uint64_t config_digest_value,
                     const std::string& config_text) {
  Archive a;
  a.put_i64("meta/checkpoint_version", kCheckpointVersion);
  a.put_i64("meta/step", step);
  a.put_i64("meta/config_digest", i64(config_digest_value));
  a.put_string("meta/config_text", config_text);
  a.put_i64("meta/depth", tap_index(m.encoder.depth()));
  std::string taps;
  for (auto& [tag, head] : m.content_heads) {
    if (!taps.empty()) taps += ",";
    taps += to_string(tag);
  }
  a.put_string("meta/content_taps", taps);
  for (const auto& p : m.parameters())
    a.put_tensor("param/" + p.name, p.var.value());
  if (optimizer) optimizer->serialize(a, "optim/");
  a.save(path);
}

template <class T>
struct LoadedCheckpoint {
  TrainableModules<T> modules;
  i64 step = 0;
  std::uint64_t config_digest_value = 0;
  std::string config_text;
  bool has_optimizer = false;
  Archive raw;
};

template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  Archive a = Archive::load(path);
  if (!a.contains("meta/checkpoint_version"))
    throw std::runtime_error("corrupt checkpoint: " + path +
                             " (missing version)");
  const i64 version = a.get_i64("meta/checkpoint_version");
  if (version != kCheckpointVersion)
    throw std::runtime_error(
        "checkpoint version mismatch: file has version " +
        std::to_string(version) + ", this build supports version " +
        std::to_string(kCheckpointVersion));

  LoadedCheckpoint<T> out;
  out.step = a.get_i64("meta/step");
  out.config_digest_value = std::uint64_t(a.get_i64("meta/config_digest"));
  out.config_text = a.get_string("meta/config_text");
  const LayerTag depth = LayerTag(int(a.get_i64("meta/depth")));
  TapSet taps = detail::parse_taps(a.get_string("meta/content_taps"));

  // rebuild shells, then overwrite every parameter tensor
  TrainableModules<T> m;
  {
    Rng rng(0);
    m.encoder = Encoder<T>::split_shell(depth);
    m.decoder = Decoder<T>::standard(rng);
    m.style_head = StyleHead<T>::standard(rng);
    m.content_heads = make_content_heads<T>(taps, rng);
  }
  auto params = m.parameters();
  for (auto& p : params) {
    const std::string name = "param/" + p.name;
    if (!a.contains(name))
      throw std::runtime_error("checkpoint " + path + " is missing " + name +
                               " (incompatible architecture)");
    Tensor<T> t = a.template get_tensor<T>(name);
    if (t.shape() != p.var.value().shape())
      throw std::runtime_error("checkpoint " + path +
                               " has incompatible shape for " + name +
                               ": expected " + p.var.value().shape().str() +
                               ", got " + t.shape().str());
    std::memcpy(p.var.value().data(), t.data(),
                std::size_t(t.numel()) * sizeof(T));
  }
  out.has_optimizer = a.contains("optim/t");
  out.modules = std::move(m);
  out.raw = std::move(a);
  return out;
}

}  // namespace encore
