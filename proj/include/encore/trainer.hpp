#pragma once

#include <chrono>
#include <iomanip>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include "encore/checkpoint.hpp"
#include "encore/data.hpp"
#include "encore/losses.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace encore {

namespace detail {

inline TapSet tap_union(const TapSet& a, const TapSet& b) {
  TapSet out = a;
  for (LayerTag t : b)
    if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
  std::sort(out.begin(), out.end());
  return out;
}

template <class T>
Tensor<T> slice_sample(const Tensor<T>& batch, i64 i) {
  const i64 C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
  Tensor<T> out = Tensor<T>::uninitialized(Shape{C, H, W});
  std::memcpy(out.data(), batch.data() + i * C * H * W,
              std::size_t(C * H * W) * sizeof(T));
  return out;
}

}  // namespace detail

// Builds the step's full loss graph: stylization, identity restorations,
// shuffled style positives, aligned patches, and all five objective terms.
// Shared by the optimizer step and by gradient checks.
template <class T>
Var<T> build_total_loss(TrainableModules<T>& m, const Encoder<T>& reference,
                        const Batch<T>& batch, const TrainingConfig& cfg,
                        i64 step, LossBreakdown* breakdown) {
  const LayerTag tap4 = m.decoder.input_tag();
  const i64 B = batch.content.dim(0);
  const i64 S = batch.content.dim(2);
  const TapSet style_taps = cfg.content_taps;  // backbone style-loss taps
  const bool both_paths = cfg.identity_paths == IdentityPaths::both;

  Var<T> xc = Var<T>::leaf(batch.content);
  Var<T> xs = Var<T>::leaf(batch.style);

  const TapSet c_taps = detail::tap_union({tap4}, cfg.reg_layers);
  const TapSet s_taps =
      detail::tap_union(detail::tap_union(style_taps, {tap4}), cfg.reg_layers);
  auto pyr_c = m.encoder.forward(xc, c_taps);
  auto pyr_s = m.encoder.forward(xs, s_taps);

  // transfer target and both identity paths; adain(x,x) is exact, so the
  // identity decodes match self_stylize bit for bit
  Var<T> t = adain(pyr_c.at(tap4), pyr_s.at(tap4));
  std::vector<Var<T>> dec_inputs = {t, adain(pyr_c.at(tap4), pyr_c.at(tap4))};
  if (both_paths) dec_inputs.push_back(adain(pyr_s.at(tap4), pyr_s.at(tap4)));
  Var<T> dec_out = m.decoder.forward(concat_n(dec_inputs), tap4);
  Var<T> out_img = slice_n(dec_out, 0, B);
  Var<T> restored_c = slice_n(dec_out, B, B);
  Var<T> restored_s = both_paths ? slice_n(dec_out, 2 * B, B) : Var<T>();

  // backbone losses on the stylized output
  const TapSet o_taps = detail::tap_union(style_taps, {tap4});
  auto pyr_o = m.encoder.forward(out_img, o_taps);
  AstLosses<T> ast;
  if (cfg.supervision == Supervision::refined) {
    ast = ast_losses(pyr_o, t, pyr_s, style_taps, tap4);
  } else {
    auto ref_o = reference.forward(out_img, o_taps);
    auto ref_cs = reference.forward(xc, {tap4});
    auto ref_ss = reference.forward(xs, o_taps);
    Var<T> t_ref = adain(ref_cs.at(tap4), ref_ss.at(tap4));
    ast = ast_losses(ref_o, t_ref, ref_ss, style_taps, tap4);
  }

  // frozen-encoder feature regularizer, averaged over the two inputs
  Var<T> reg;
  {
    auto ref_c = reference.forward(xc, cfg.reg_layers);
    auto ref_s = reference.forward(xs, cfg.reg_layers);
    FeaturePyramid<T> own_c, own_s;
    for (LayerTag l : cfg.reg_layers) {
      own_c.set(l, pyr_c.at(l));
      own_s.set(l, pyr_s.at(l));
    }
    reg = weighted_sum<T>(
        {{T(0.5), feature_regularizer(own_c, ref_c, cfg.reg_layers)},
         {T(0.5), feature_regularizer(own_s, ref_s, cfg.reg_layers)}});
  }

  // style contrastive loss: anchors = outputs, positives = fresh shuffles of
  // each pair's style crop, negatives = the batch's content embeddings
  Var<T> l_sc;
  {
    const i64 P = cfg.positives;
    Tensor<T> pos = Tensor<T>::uninitialized(Shape{B * P, 3, S, S});
    for (i64 b = 0; b < B; ++b) {
      Tensor<T> style_img = detail::slice_sample(batch.style, b);
      auto shuffles = generate_style_positives(
          style_img, P, cfg.shuffle_n,
          derive_seed(cfg.seed, RngStream::shuffle_plan, std::uint64_t(step), std::uint64_t(b)));
      for (i64 i = 0; i < P; ++i)
        std::memcpy(pos.data() + (b * P + i) * 3 * S * S,
                    shuffles[std::size_t(i)].data(),
                    std::size_t(3 * S * S) * sizeof(T));
    }
    auto pyr_pos = m.encoder.forward(Var<T>::leaf(pos), {tap4});
    Var<T> emb_anchor = m.style_head.embed(pyr_o.at(tap4), tap4);
    Var<T> emb_pos = m.style_head.embed(pyr_pos.at(tap4), tap4);
    Var<T> emb_neg = m.style_head.embed(pyr_c.at(tap4), tap4);
    l_sc = style_nce_loss(emb_anchor, emb_pos, emb_neg, P, T(cfg.tau),
                          cfg.style_positive_mean);
  }

  // identity-preserving content contrastive loss over aligned patches
  Var<T> l_cc;
  {
    const i64 P = cfg.patch_count;
    auto path_loss = [&](const Var<T>& restored, const Var<T>& original,
                         int path_id) {
      std::vector<Var<T>> anchor_parts, cand_parts;
      for (i64 b = 0; b < B; ++b) {
        PatchSpec spec = sample_patch_spec(
            S, S, P, cfg.patch_size,
            derive_seed(cfg.seed, RngStream::patch_positions,
                        std::uint64_t(step), std::uint64_t(b * 2 + path_id)));
        anchor_parts.push_back(crop_patches(restored, b, spec));
        cand_parts.push_back(crop_patches(original, b, spec));
      }
      // anchors carry gradients into the decoder; candidates are crops of
      // leaf images, so their encode skips input gradients entirely
      auto pyr_a = m.encoder.forward(concat_n(anchor_parts), cfg.content_taps);
      auto pyr_cd = m.encoder.forward(concat_n(cand_parts), cfg.content_taps);
      std::vector<std::pair<T, Var<T>>> terms;
      for (LayerTag l : cfg.content_taps) {
        const auto& head = m.content_heads.at(l);
        Var<T> ea = head.embed(pyr_a.at(l), l);
        Var<T> ec = head.embed(pyr_cd.at(l), l);
        terms.emplace_back(T(1), patch_nce_loss(ea, ec, B, P, T(cfg.tau),
                                                /*mean_over_patches=*/true));
      }
      return weighted_sum(terms);
    };
    Var<T> cc_content = path_loss(restored_c, xc, 0);
    if (both_paths) {
      Var<T> cc_style = path_loss(restored_s, xs, 1);
      l_cc = weighted_sum<T>({{T(0.5), cc_content}, {T(0.5), cc_style}});
    } else {
      l_cc = cc_content;
    }
  }

  LossWeights w{cfg.lambda_d, cfg.lambda_sc, cfg.lambda_cc, cfg.lambda_style_ast};
  return total_loss(ast.content, ast.style, reg, l_sc, l_cc, w, breakdown,
                    step);
}

// One optimization step: loss graph, finiteness checks, backward, one Adam
// update over every trainable group. The frozen reference is only read.
template <class T>
LossBreakdown train_step(TrainableModules<T>& m, const Encoder<T>& reference,
                         const Batch<T>& batch, const TrainingConfig& cfg,
                         Adam<T>& opt, i64 step) {
  LossBreakdown breakdown;
  Var<T> total = build_total_loss(m, reference, batch, cfg, step, &breakdown);

  auto check = [step](const char* name, double v) {
    if (!std::isfinite(v))
      throw std::runtime_error("non-finite " + std::string(name) +
                               " at step " + std::to_string(step));
  };
  check("l_ast_content", breakdown.ast_content);
  check("l_ast_style", breakdown.ast_style);
  check("l_regularizer", breakdown.regularizer);
  check("l_style_contrastive", breakdown.style_contrastive);
  check("l_content_contrastive", breakdown.content_contrastive);

  backward(total);
  opt.step(cfg.grad_clip);
  return breakdown;
}

struct TrainResult {
  std::string final_checkpoint;
  std::string metrics_path;
  std::vector<LossBreakdown> history;
};

namespace detail {

inline std::string metrics_row(const LossBreakdown& b, double wall_ms) {
  std::ostringstream os;
  os.precision(10);
  os << b.step << ',' << b.ast_content << ',' << b.ast_style << ','
     << b.regularizer << ',' << b.style_contrastive << ','
     << b.content_contrastive << ',' << b.total << ',' << i64(wall_ms);
  return os.str();
}

inline std::string log_line(const LossBreakdown& b, double wall_ms) {
  std::ostringstream os;
  os.precision(6);
  os << "step=" << b.step << " l_ast_content=" << b.ast_content
     << " l_ast_style=" << b.ast_style << " l_regularizer=" << b.regularizer
     << " l_style_contrastive=" << b.style_contrastive
     << " l_content_contrastive=" << b.content_contrastive
     << " l_total=" << b.total << " wall_ms=" << i64(wall_ms);
  return os.str();
}

// keeps rows up to and including resume_step, drops later ones
inline std::vector<std::string> load_metrics_rows(const std::string& path,
                                                  i64 resume_step) {
  std::vector<std::string> rows;
  std::ifstream f(path);
  if (!f) return rows;
  std::string line;
  bool header = true;
  while (std::getline(f, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    const i64 s = std::stoll(line.substr(0, line.find(',')));
    if (s <= resume_step) rows.push_back(line);
  }
  return rows;
}

}  // namespace detail

inline const char* kMetricsHeader =
    "step,l_ast_content,l_ast_style,l_regularizer,l_style_contrastive,"
    "l_content_contrastive,l_total,wall_ms";

// Full training run: builds (or resumes) the model stack, iterates
// train_step, writes metrics.csv and periodic checkpoints under
// cfg.output_dir, and returns the final checkpoint path.
template <class T>
TrainResult train(const TrainingConfig& cfg, bool quiet = false) {
  namespace fs = std::filesystem;
  cfg.validate();
  if (cfg.reference_weights.empty())
    throw std::invalid_argument("reference_weights must be set");

#ifdef _OPENMP
  const int prior_omp_threads = omp_get_max_threads();
#endif
  if (cfg.deterministic) {
    blas::set_num_threads(1);
#ifdef _OPENMP
    omp_set_num_threads(1);
#endif
  }
  // restore process-wide thread settings on every exit path
  struct ThreadGuard {
    bool active;
#ifdef _OPENMP
    int omp_threads;
#endif
    ~ThreadGuard() {
      if (!active) return;
#ifdef _OPENMP
      omp_set_num_threads(omp_threads);
#endif
      blas::set_num_threads(
          int(std::max(1u, std::thread::hardware_concurrency())));
    }
  } guard{cfg.deterministic
#ifdef _OPENMP
          ,
          prior_omp_threads
#endif
  };

  fs::create_directories(cfg.output_dir);
  const std::string resolved = resolved_config_text(cfg);
  {
    std::ofstream f(cfg.output_dir + "/resolved.config");
    f << resolved;
  }
  const std::uint64_t digest = config_digest(cfg);

  Archive ref_archive = Archive::load(cfg.reference_weights);
  Encoder<T> reference = Encoder<T>::import_reference(ref_archive);

  TrainableModules<T> mods;
  i64 start_step = 1;
  std::optional<Adam<T>> opt;

  if (!cfg.resume_checkpoint.empty()) {
    LoadedCheckpoint<T> ck = load_checkpoint<T>(cfg.resume_checkpoint);
    if (ck.config_digest_value != digest)
      std::cerr << "warning: checkpoint config digest mismatch ("
                << ck.config_digest_value << " vs " << digest
                << "); resuming anyway\n";
    mods = std::move(ck.modules);
    opt.emplace(mods.parameters(), cfg.lr);
    if (ck.has_optimizer) opt->deserialize(ck.raw, "optim/");
    start_step = ck.step + 1;
  } else {
    mods = build_trainable(reference, LayerTag::relu4_1, cfg.content_taps,
                           cfg.seed);
    opt.emplace(mods.parameters(), cfg.lr);
  }

  CorpusSpec corpus;
  corpus.content_dir = cfg.content_dir;
  corpus.style_dir = cfg.style_dir;
  corpus.min_side = cfg.min_side;
  corpus.crop = cfg.crop;
  Loader<T> loader(corpus, cfg.batch_size, cfg.seed);

  const std::string metrics_path = cfg.output_dir + "/metrics.csv";
  std::vector<std::string> rows =
      detail::load_metrics_rows(metrics_path, start_step - 1);
  fs::create_directories(cfg.output_dir + "/checkpoints");

  TrainResult result;
  result.metrics_path = metrics_path;

  auto flush_metrics = [&]() {
    std::ofstream f(metrics_path, std::ios::trunc);
    f << kMetricsHeader << "\n";
    for (const auto& r : rows) f << r << "\n";
  };

  for (i64 step = start_step; step <= cfg.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    Batch<T> batch = loader.next_batch(step - 1);
    LossBreakdown b = train_step(mods, reference, batch, cfg, *opt, step);
    const double wall_ms =
        cfg.deterministic
            ? 0.0
            : std::chrono::duration<double, std::milli>(
                  std::chrono::steady_clock::now() - t0)
                  .count();
    rows.push_back(detail::metrics_row(b, wall_ms));
    result.history.push_back(b);
    if (!quiet) std::cout << detail::log_line(b, wall_ms) << "\n";
    if (step % cfg.checkpoint_every == 0 && step != cfg.steps) {
      std::ostringstream name;
      name << cfg.output_dir << "/checkpoints/checkpoint_" << std::setw(6)
           << std::setfill('0') << step << ".enca";
      save_checkpoint(name.str(), mods, &*opt, step, digest, resolved);
      flush_metrics();
    }
  }

  result.final_checkpoint = cfg.output_dir + "/checkpoints/checkpoint_final.enca";
  save_checkpoint(result.final_checkpoint, mods, &*opt, cfg.steps, digest,
                  resolved);
  flush_metrics();
  return result;
}

}  // namespace encore
