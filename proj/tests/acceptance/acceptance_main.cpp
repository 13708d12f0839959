// Acceptance suite: one criterion per invocation (or all), one PASS/FAIL
// line each. Exit code is the number of failed criteria.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "encore/encore.hpp"
#include "support/synthetic.hpp"
#include "support/test_utils.hpp"

using namespace encore;
namespace fs = std::filesystem;

namespace {

std::string g_cli_path;
int g_checks_failed = 0;

void expect(bool ok, const std::string& what) {
  if (!ok) {
    std::cout << "    check failed: " << what << "\n";
    ++g_checks_failed;
  }
}

double now_s() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

std::string work_dir(const std::string& tag) {
  const auto dir = fs::temp_directory_path() / ("encore_acceptance_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

// ---------------------------------------------------------------------------
// long-double scalar-loop oracles, independent of the library implementation
// ---------------------------------------------------------------------------

long double oracle_nce(const std::vector<long double>& pos,
                       const std::vector<long double>& neg, long double tau) {
  long double total = 0;
  for (long double sp : pos) {
    long double denom = expl(sp / tau);
    for (long double sn : neg) denom += expl(sn / tau);
    total += -logl(expl(sp / tau) / denom);
  }
  return total;
}

template <class T>
std::vector<long double> row_dots(const T* anchor, const T* rows, i64 count,
                                  i64 dim) {
  std::vector<long double> out;
  for (i64 r = 0; r < count; ++r) {
    long double d = 0;
    for (i64 j = 0; j < dim; ++j)
      d += (long double)anchor[j] * (long double)rows[r * dim + j];
    out.push_back(d);
  }
  return out;
}

template <class T>
Tensor<T> unit_rows(Shape s, std::uint64_t seed) {
  Tensor<T> t = testutil::random_tensor<T>(s, seed, -1, 1);
  const i64 D = s[1];
  for (i64 r = 0; r < s[0]; ++r) {
    double n = 0;
    for (i64 j = 0; j < D; ++j) n += double(t[r * D + j]) * double(t[r * D + j]);
    n = std::sqrt(std::max(n, 1e-30));
    for (i64 j = 0; j < D; ++j) t[r * D + j] = T(double(t[r * D + j]) / n);
  }
  return t;
}

// ---------------------------------------------------------------------------
// criterion 1: vectorized losses match scalar-loop references
// ---------------------------------------------------------------------------

bool criterion_1() {
  const double t0 = now_s();
  Rng rng(1);
  double worst = 0;

  for (int inst = 0; inst < 100; ++inst) {
    // plain single-anchor InfoNCE
    {
      const i64 D = 8 + rng.uniform_int(0, 24);
      const i64 P = 1 + rng.uniform_int(0, 8);
      const i64 Nn = rng.uniform_int(0, 8);
      auto a = unit_rows<double>(Shape{1, D}, 100 + inst).reshape(Shape{D});
      auto p = unit_rows<double>(Shape{P, D}, 200 + inst);
      Tensor<double> n;
      if (Nn) n = unit_rows<double>(Shape{Nn, D}, 300 + inst);
      const double tau = 0.05 + rng.next_double() * 0.3;
      const double got = info_nce(a, p, n, tau);
      const long double want =
          oracle_nce(row_dots(a.data(), p.data(), P, D),
                     Nn ? row_dots(a.data(), n.data(), Nn, D)
                        : std::vector<long double>{},
                     tau);
      worst = std::max(worst, std::abs(got - double(want)) /
                                  std::max(1.0, std::abs(double(want))));
    }
    // batched multi-positive style loss
    {
      const i64 B = 1 + rng.uniform_int(0, 4);
      const i64 P = 1 + rng.uniform_int(0, 6);
      const i64 D = 16;
      auto anchors = unit_rows<double>(Shape{B, D}, 400 + inst);
      auto pos = unit_rows<double>(Shape{B * P, D}, 500 + inst);
      auto neg = unit_rows<double>(Shape{B, D}, 600 + inst);
      const double tau = 0.07;
      const double got =
          style_nce_loss(Var<double>::leaf(anchors), Var<double>::leaf(pos),
                         Var<double>::leaf(neg), P, tau, false)
              .item();
      long double want = 0;
      for (i64 b = 0; b < B; ++b)
        want += oracle_nce(
            row_dots(anchors.data() + b * D, pos.data() + b * P * D, P, D),
            row_dots(anchors.data() + b * D, neg.data(), B, D), tau);
      want /= B;
      worst = std::max(worst, std::abs(got - double(want)) /
                                  std::max(1.0, std::abs(double(want))));
    }
    // patch-aligned content loss
    {
      const i64 B = 1 + rng.uniform_int(0, 3);
      const i64 P = 2 + rng.uniform_int(0, 6);
      const i64 D = 12;
      auto anchors = unit_rows<double>(Shape{B * P, D}, 700 + inst);
      auto cand = unit_rows<double>(Shape{B * P, D}, 800 + inst);
      const double tau = 0.07;
      const double got =
          patch_nce_loss(Var<double>::leaf(anchors), Var<double>::leaf(cand),
                         B, P, tau, true)
              .item();
      long double want = 0;
      for (i64 b = 0; b < B; ++b) {
        long double bsum = 0;
        for (i64 i = 0; i < P; ++i) {
          long double denom = 0, num = 0;
          for (i64 j = 0; j < P; ++j) {
            long double dot = 0;
            for (i64 d = 0; d < D; ++d)
              dot += (long double)anchors[(b * P + i) * D + d] *
                     (long double)cand[(b * P + j) * D + d];
            const long double e = expl(dot / tau);
            denom += e;
            if (i == j) num = e;
          }
          bsum += -logl(num / denom);
        }
        want += bsum / P;
      }
      want /= B;
      worst = std::max(worst, std::abs(got - double(want)) /
                                  std::max(1.0, std::abs(double(want))));
    }
  }
  const double elapsed = now_s() - t0;
  std::cout << "    100 instances x 3 losses, worst relative error " << worst
            << ", " << elapsed << " s\n";
  expect(worst <= 1e-5, "oracle agreement within 1e-5 relative");
  expect(elapsed < 10.0, "runtime under 10 s");
  return g_checks_failed == 0;
}

// ---------------------------------------------------------------------------
// criterion 2: analytic InfoNCE values
// ---------------------------------------------------------------------------

bool criterion_2() {
  using T = double;
  Tensor<T> anchor = Tensor<T>::from_vector(Shape{2}, {1, 0});
  Tensor<T> pos = Tensor<T>::from_vector(Shape{1, 2}, {1, 0});

  Tensor<T> none;
  const double zero_neg = info_nce(anchor, pos, none, 0.07);
  std::cout << "    zero-negative case = " << zero_neg << "\n";
  expect(zero_neg == 0.0, "zero negatives give exactly 0");

  Tensor<T> neg_same = Tensor<T>::from_vector(Shape{1, 2}, {1, 0});
  const double ln2 = info_nce(anchor, pos, neg_same, 0.07);
  std::cout << "    equal-similarity case = " << ln2 << " (ln 2 = "
            << std::log(2.0) << ")\n";
  expect(std::abs(ln2 - std::log(2.0)) <= 1e-9, "equal similarity = ln 2 +- 1e-9");

  Tensor<T> neg_orth = Tensor<T>::from_vector(Shape{1, 2}, {0, 1});
  const double tiny = info_nce(anchor, pos, neg_orth, 0.07);
  std::cout << "    (sim_pos=1, sim_neg=0, tau=0.07) = " << tiny << "\n";
  expect(std::abs(tiny - 6.2e-7) <= 1e-8, "separated case = 6.2e-7 +- 1e-8");
  return g_checks_failed == 0;
}

// ---------------------------------------------------------------------------
// criterion 3: adain statistics contract
// ---------------------------------------------------------------------------

bool criterion_3() {
  Rng rng(3);
  double worst_mean = 0, worst_std = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const i64 C = 6;
    Tensor<float> c = Tensor<float>::uninitialized(Shape{1, C, 16, 12});
    Tensor<float> s = Tensor<float>::uninitialized(Shape{1, C, 14, 10});
    std::vector<double> c_std(C);
    for (i64 ch = 0; ch < C; ++ch) {
      const double mc = rng.normal(0, 1.5);
      const double sc = 0.05 + rng.next_double() * 2.45;
      const double ms = rng.normal(0, 1.5);
      const double ss = 0.05 + rng.next_double() * 2.45;
      for (i64 i = 0; i < 192; ++i) c[ch * 192 + i] = float(rng.normal(mc, sc));
      for (i64 i = 0; i < 140; ++i) s[ch * 140 + i] = float(rng.normal(ms, ss));
    }
    auto out = adain(Var<float>::leaf(c), Var<float>::leaf(s), 1e-5f).value();
    for (i64 ch = 0; ch < C; ++ch) {
      auto stats = [](const Tensor<float>& t, i64 ch, i64 M) {
        double s1 = 0, s2 = 0;
        for (i64 i = 0; i < M; ++i) {
          s1 += t[ch * M + i];
          s2 += double(t[ch * M + i]) * double(t[ch * M + i]);
        }
        const double mu = s1 / M;
        return std::pair<double, double>(
            mu, std::sqrt(std::max(0.0, s2 / M - mu * mu)));
      };
      auto [mc, sc] = stats(c, ch, 192);
      auto [ms, ss] = stats(s, ch, 140);
      auto [mo, so] = stats(out, ch, 192);
      if (sc >= 0.1) {
        worst_mean = std::max(worst_mean, std::abs(mo - ms));
        worst_std = std::max(worst_std, std::abs(so - ss));
      }
    }
  }
  std::cout << "    100 pairs: worst |mean err| = " << worst_mean
            << ", worst |std err| = " << worst_std << "\n";
  expect(worst_mean <= 1e-4, "per-channel mean error <= 1e-4");
  expect(worst_std <= 1e-3, "per-channel std error <= 1e-3");

  auto x = testutil::random_tensor<float>(Shape{2, 5, 12, 12}, 33, -1, 2);
  auto same = adain(Var<float>::leaf(x), Var<float>::leaf(x), 1e-5f).value();
  const double dev = max_abs_diff(same, x);
  std::cout << "    adain(x,x) max deviation = " << dev << "\n";
  expect(dev <= 1e-4, "adain(x,x) within 1e-4 of x");
  return g_checks_failed == 0;
}

// ---------------------------------------------------------------------------
// criterion 4: gram / style-distance contract
// ---------------------------------------------------------------------------

bool criterion_4() {
  Rng rng(4);
  double min_eig = 1e9;
  for (int inst = 0; inst < 50; ++inst) {
    auto f = testutil::random_tensor<double>(Shape{6, 9, 7}, 40 + inst, -2, 2);
    auto g = gram(f);
    for (i64 i = 0; i < 6; ++i)
      for (i64 j = 0; j < 6; ++j)
        expect(g[i * 6 + j] == g[j * 6 + i], "gram symmetry exact");
    min_eig = std::min(min_eig, double(testutil::min_symmetric_eigenvalue(g)));
  }
  std::cout << "    min eigenvalue over 50 grams = " << min_eig << "\n";
  expect(min_eig >= -1e-8, "grams PSD within 1e-8");

  auto enc = testutil::make_rf1_encoder<double>(5);
  auto img = testutil::synthetic_image<double>(44, 64, 64);
  expect(style_distance(img, img, enc, {LayerTag::relu1_1}) == 0.0,
         "style_distance(I, I) = 0");

  // toy receptive-field-1 audit: shuffles are style-identical by construction
  const std::string dir = work_dir("c4");
  testutil::write_corpus(dir, 6, 45, 80, 112);
  auto paths = scan_image_dir(dir, {".png"});
  auto report = audit_triples(enc, paths, 20, 4, {LayerTag::relu1_1}, 46);
  double max_shuffle = 0;
  for (const auto& row : report.rows)
    max_shuffle = std::max(max_shuffle, row.d_shuffle);
  std::cout << "    rf-1 audit: max d_shuffle = " << max_shuffle
            << ", inconsistency_rate = " << report.inconsistency_rate << "\n";
  expect(max_shuffle <= 1e-10, "d_shuffle at numerical zero for every row");
  expect(report.inconsistency_rate == 0.0, "no inconsistent rows");
  return g_checks_failed == 0;
}

// ---------------------------------------------------------------------------
// criterion 5: full-objective gradient check on a miniature configuration
// ---------------------------------------------------------------------------

bool criterion_5() {
  const double t0 = now_s();
  using T = double;
  Rng rng(5);

  // toy 2-layer encoder (3->4, pool, 4->6), mirror decoder, 8-dim heads
  std::vector<Encoder<T>::CustomStage> enc_spec = {
      {3, 4, 3, false, LayerTag::relu1_1}, {4, 6, 3, true, LayerTag::relu2_1}};
  TrainableModules<T> m;
  m.encoder = Encoder<T>::custom(enc_spec, rng, true);
  m.decoder = Decoder<T>::custom({{6, 4, false, true}, {4, 3, true, false}},
                                 LayerTag::relu2_1, rng);
  m.style_head = StyleHead<T>(6, 4, 4, 8, rng);
  m.content_heads.emplace(LayerTag::relu1_1, ContentHead<T>(LayerTag::relu1_1, 4, 8, rng));
  m.content_heads.emplace(LayerTag::relu2_1, ContentHead<T>(LayerTag::relu2_1, 6, 8, rng));

  Rng rng2(55);
  Encoder<T> reference = Encoder<T>::custom(enc_spec, rng2, false);

  TrainingConfig cfg;
  cfg.batch_size = 2;
  cfg.positives = 2;
  cfg.shuffle_n = 2;
  cfg.patch_count = 2;
  cfg.patch_size = 4;
  cfg.content_taps = {LayerTag::relu1_1, LayerTag::relu2_1};
  cfg.reg_layers = {LayerTag::relu2_1};
  cfg.seed = 7;

  Batch<T> batch;
  batch.content = testutil::random_tensor<T>(Shape{2, 3, 8, 8}, 51, 0, 1);
  batch.style = testutil::random_tensor<T>(Shape{2, 3, 8, 8}, 52, 0, 1);

  std::vector<Var<T>> params;
  for (auto& p : m.parameters()) params.push_back(p.var);
  i64 total_params = 0;
  for (auto& p : params) total_params += p.value().numel();

  auto build = [&]() {
    return build_total_loss(m, reference, batch, cfg, 1, nullptr);
  };
  auto rep = testutil::grad_check(params, build, 1e-5, 1e-3);
  const double elapsed = now_s() - t0;
  std::cout << "    " << total_params << " parameters, "
            << rep.frac_within * 100 << "% within 1e-3 relative, max rel err "
            << rep.max_rel_err << ", " << elapsed << " s\n";
  expect(rep.frac_within >= 0.95, "at least 95% of parameters within 1e-3");
  expect(elapsed < 120.0, "runtime under 2 minutes");
  return g_checks_failed == 0;
}

// ---------------------------------------------------------------------------
// criterion 6: structural checks
// ---------------------------------------------------------------------------

bool criterion_6() {
  Archive a = testutil::make_reference_archive(6);
  auto ref = Encoder<float>::import_reference(a);
  auto split = Encoder<float>::split_from(ref, LayerTag::relu4_1);

  // independent per-layer count of the retained conv{b}_1 kernels
  const i64 chans[5] = {3, 64, 128, 256, 512};
  i64 weights = 0, biases = 0;
  for (int b = 0; b < 4; ++b) {
    weights += chans[b] * chans[b + 1] * 3 * 3;
    biases += chans[b + 1];
  }
  std::cout << "    split encoder: " << split.weight_count() << " weights, "
            << split.bias_count() << " biases (independent count: " << weights
            << " + " << biases << ")\n";
  expect(split.weight_count() == weights, "weight count matches per-layer sum");
  expect(split.bias_count() == biases, "bias count matches per-layer sum");
  expect(biases == 960, "bias total is 960");

  // tap shapes per the shape law
  for (i64 side : {64, 128}) {
    auto img = Var<float>::leaf(
        testutil::random_tensor<float>(Shape{1, 3, side, side}, 61, 0, 1));
    auto pyr = split.forward(img, default_content_taps());
    for (LayerTag t : default_content_taps()) {
      expect(pyr.at(t).dim(1) == layer_channels(t), "channel law");
      expect(pyr.at(t).dim(2) == side >> tap_index(t), "spatial law");
    }
  }

  // regularizer at initialization
  auto twin = Encoder<float>::import_reference(a);
  auto img = testutil::synthetic_image<float>(62, 64, 64);
  const float full_reg =
      feature_regularizer(twin, ref, img, {LayerTag::relu4_1});
  const float split_reg =
      feature_regularizer(split, ref, img, {LayerTag::relu4_1});
  std::cout << "    regularizer at init: full mode " << full_reg
            << ", split mode " << split_reg << "\n";
  expect(full_reg == 0.f, "full-mode regularizer exactly 0 at init");
  expect(split_reg > 0.f, "split-mode regularizer > 0 at init");
  return g_checks_failed == 0;
}

// ---------------------------------------------------------------------------
// criterion 7: desk-scale training run
// ---------------------------------------------------------------------------

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

bool criterion_7() {
  const std::string root = work_dir("c7");
  std::cout << "    generating 200+200 synthetic images under " << root << "\n";
  testutil::write_corpus(root + "/content", 200, 71, 136, 200);
  testutil::write_corpus(root + "/style", 200, 72, 136, 200);
  Archive ref_arch = testutil::make_reference_archive(73);
  ref_arch.save(root + "/reference.enca");

  TrainingConfig cfg;
  cfg.content_dir = root + "/content";
  cfg.style_dir = root + "/style";
  cfg.reference_weights = root + "/reference.enca";
  cfg.output_dir = root + "/run";
  cfg.batch_size = 4;
  cfg.steps = 500;
  cfg.crop = 128;
  cfg.min_side = 128;
  cfg.seed = 74;

  const double t0 = now_s();
  TrainResult result = train<float>(cfg, /*quiet=*/true);
  const double minutes = (now_s() - t0) / 60.0;
  std::cout << "    500 steps in " << minutes << " min\n";

  std::vector<double> total_head, total_tail, sc_head, sc_tail, cc_head,
      cc_tail;
  for (const auto& b : result.history) {
    if (b.step <= 50) {
      total_head.push_back(b.total);
      sc_head.push_back(b.style_contrastive);
      cc_head.push_back(b.content_contrastive);
    }
    if (b.step >= 451) {
      total_tail.push_back(b.total);
      sc_tail.push_back(b.style_contrastive);
      cc_tail.push_back(b.content_contrastive);
    }
  }
  const double mt0 = median_of(total_head), mt1 = median_of(total_tail);
  const double ms0 = median_of(sc_head), ms1 = median_of(sc_tail);
  const double mc0 = median_of(cc_head), mc1 = median_of(cc_tail);
  std::cout << "    l_total median: steps 1-50 = " << mt0
            << ", steps 451-500 = " << mt1 << "\n";
  std::cout << "    l_style_contrastive median: " << ms0 << " -> " << ms1
            << "\n";
  std::cout << "    l_content_contrastive median: " << mc0 << " -> " << mc1
            << "\n";
  expect(mt1 < mt0, "(a) median l_total decreases");
  expect(ms1 < ms0, "(b) median l_style_contrastive decreases");
  expect(mc1 < mc0, "(b) median l_content_contrastive decreases");

  // (c) audit comparison on identical seeded triples
  auto ck = load_checkpoint<float>(result.final_checkpoint);
  Archive ra = Archive::load(cfg.reference_weights);
  auto reference = Encoder<float>::import_reference(ra);
  auto paths = scan_image_dir(root + "/style", {".png"});
  auto rep_trained = audit_triples(ck.modules.encoder, paths, 50, 4,
                                   default_content_taps(), 75);
  auto rep_ref =
      audit_triples(reference, paths, 50, 4, default_content_taps(), 75);
  std::cout << "    audit inconsistency_rate: trained = "
            << rep_trained.inconsistency_rate
            << ", reference = " << rep_ref.inconsistency_rate << "\n";
  expect(rep_trained.inconsistency_rate <=
             rep_ref.inconsistency_rate + 0.05,
         "(c) trained rate within +0.05 of the reference rate");

  expect(minutes <= 30.0, "wall time within the 30-minute CPU budget");
  return g_checks_failed == 0;
}

// ---------------------------------------------------------------------------
// criterion 8: determinism and resume
// ---------------------------------------------------------------------------

TrainingConfig small_det_config(const std::string& root, std::uint64_t seed) {
  TrainingConfig cfg;
  cfg.content_dir = root + "/content";
  cfg.style_dir = root + "/style";
  cfg.reference_weights = root + "/reference.enca";
  cfg.batch_size = 2;
  cfg.steps = 8;
  cfg.crop = 64;
  cfg.min_side = 64;
  cfg.patch_size = 32;
  cfg.patch_count = 4;
  cfg.positives = 4;
  cfg.shuffle_n = 2;
  cfg.checkpoint_every = 4;
  cfg.seed = seed;
  cfg.deterministic = true;
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

bool criterion_8() {
  const std::string root = work_dir("c8");
  testutil::write_corpus(root + "/content", 8, 81, 72, 96);
  testutil::write_corpus(root + "/style", 8, 82, 72, 96);
  testutil::make_reference_archive(83).save(root + "/reference.enca");

  auto cfg1 = small_det_config(root, 99);
  cfg1.output_dir = root + "/run1";
  auto cfg2 = small_det_config(root, 99);
  cfg2.output_dir = root + "/run2";
  auto r1 = train<float>(cfg1, true);
  auto r2 = train<float>(cfg2, true);
  const bool identical = slurp(r1.metrics_path) == slurp(r2.metrics_path);
  std::cout << "    two deterministic runs: metrics files "
            << (identical ? "identical" : "differ") << "\n";
  expect(identical, "identical metrics.csv across two runs");

  // interrupted + resumed trajectory
  auto half = small_det_config(root, 99);
  half.output_dir = root + "/run_half";
  half.steps = 4;
  auto rh = train<float>(half, true);
  auto resumed = half;
  resumed.steps = 8;
  resumed.resume_checkpoint = rh.final_checkpoint;
  auto rr = train<float>(resumed, true);
  const bool same = slurp(rr.metrics_path) == slurp(r1.metrics_path);
  std::cout << "    interrupt/resume trajectory "
            << (same ? "matches" : "differs from") << " the full run\n";
  expect(same, "resumed metrics identical to the uninterrupted run");
  return g_checks_failed == 0;
}

// ---------------------------------------------------------------------------
// criterion 9: CLI round trip
// ---------------------------------------------------------------------------

int run_cli(const std::string& args) {
  const std::string cmd = g_cli_path + " " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

bool criterion_9() {
  if (g_cli_path.empty()) {
    expect(false, "CLI path not provided (--cli)");
    return false;
  }
  const std::string root = work_dir("c9");
  testutil::write_corpus(root + "/content", 8, 91, 140, 170);
  testutil::write_corpus(root + "/style", 8, 92, 140, 170);
  testutil::make_reference_archive(93).save(root + "/reference.enca");

  {
    std::ofstream f(root + "/train.config");
    f << "content_dir = " << root << "/content\n"
      << "style_dir = " << root << "/style\n"
      << "reference_weights = " << root << "/reference.enca\n"
      << "output_dir = " << root << "/run\n"
      << "batch_size = 2\nsteps = 6\ncrop = 64\nmin_side = 64\n"
      << "patch_size = 32\npatch_count = 4\npositives = 2\nshuffle_n = 2\n"
      << "checkpoint_every = 3\nseed = 5\n";
  }
  expect(run_cli("train --config " + root + "/train.config") == 0,
         "train exits 0");
  const std::string ckpt = root + "/run/checkpoints/checkpoint_final.enca";
  expect(fs::exists(ckpt), "final checkpoint written");
  expect(fs::exists(root + "/run/metrics.csv"), "metrics.csv written");
  expect(fs::exists(root + "/run/resolved.config"), "resolved.config written");

  // stylize: output PNG sized to the preprocessed content image
  auto contents = scan_image_dir(root + "/content", {".png"});
  auto styles = scan_image_dir(root + "/style", {".png"});
  const std::string out_png = root + "/stylized.png";
  expect(run_cli("stylize --checkpoint " + ckpt + " --content " + contents[0] +
                 " --style " + styles[0] + " --out " + out_png) == 0,
         "stylize exits 0");
  {
    RawImage content = load_image(contents[0]);
    Tensor<float> pre = resize_min_side(to_tensor<float>(content), 512);
    const i64 eh = pre.dim(1) / 8 * 8, ew = pre.dim(2) / 8 * 8;
    RawImage out = load_image(out_png);
    std::cout << "    stylized PNG " << out.width << "x" << out.height
              << " (expected " << ew << "x" << eh << ")\n";
    expect(out.height == eh && out.width == ew,
           "stylized output matches the preprocessed content size");
  }
  // alpha 0 reconstruction path also runs
  expect(run_cli("stylize --checkpoint " + ckpt + " --content " + contents[1] +
                 " --style " + styles[1] + " --out " + root +
                 "/recon.png --alpha 0") == 0,
         "stylize --alpha 0 exits 0");
  expect(run_cli("stylize --checkpoint " + root +
                 "/missing.enca --content " + contents[0] + " --style " +
                 styles[0] + " --out " + root + "/x.png") != 0,
         "missing checkpoint exits nonzero");

  // audit: schema-valid CSV + JSON for both encoder sources
  const std::string report = root + "/audit.csv";
  expect(run_cli("audit --images " + root + "/style --triples 12 --n-blocks 4"
                 " --seed 3 --report " + report + " --reference " + root +
                 "/reference.enca") == 0,
         "audit (reference) exits 0");
  {
    std::ifstream f(report);
    std::string header;
    std::getline(f, header);
    expect(header == "image_a,image_b,d_cross,d_shuffle,inconsistent",
           "audit CSV header");
    int rows = 0;
    std::string line;
    while (std::getline(f, line))
      if (!line.empty()) ++rows;
    expect(rows == 12, "audit CSV has one row per triple");
    std::ifstream j(root + "/audit.json");
    expect(j.good(), "audit JSON exists");
    nlohmann::json parsed = nlohmann::json::parse(j, nullptr, false);
    expect(!parsed.is_discarded(), "audit JSON parses");
    expect(parsed.contains("inconsistency_rate") && parsed.contains("triples") &&
               parsed.contains("mean_d_cross") && parsed.contains("mean_d_shuffle"),
           "audit JSON schema");
  }
  expect(run_cli("audit --images " + root + "/style --triples 6 --report " +
                 root + "/audit_ck.csv --checkpoint " + ckpt) == 0,
         "audit (checkpoint) exits 0");
  // n-blocks 1: shuffles are identities, d_shuffle must be zero
  expect(run_cli("audit --images " + root + "/style --triples 5 --n-blocks 1"
                 " --report " + root + "/audit_id.csv --reference " + root +
                 "/reference.enca") == 0,
         "audit --n-blocks 1 exits 0");
  {
    std::ifstream f(root + "/audit_id.csv");
    std::string line;
    std::getline(f, line);
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      // d_shuffle is the fourth field
      std::stringstream ss(line);
      std::string field;
      for (int i = 0; i < 4; ++i) std::getline(ss, field, ',');
      expect(std::stod(field) == 0.0, "identity shuffle distance is 0");
    }
  }

  // dump-features for all four taps
  const i64 expected[4] = {256, 128, 64, 32};
  for (LayerTag t : default_content_taps()) {
    const std::string out = root + "/feat_" + to_string(t) + ".png";
    expect(run_cli("dump-features --checkpoint " + ckpt + " --image " +
                   contents[0] + " --layer " + to_string(t) + " --out " + out) ==
               0,
           "dump-features exits 0 for " + to_string(t));
    RawImage img = load_image(out);
    expect(img.height == expected[tap_index(t)] &&
               img.width == expected[tap_index(t)],
           "feature map size for " + to_string(t));
  }
  return g_checks_failed == 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> which;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--cli" && i + 1 < argc) {
      g_cli_path = argv[++i];
    } else {
      which.push_back(std::atoi(arg.c_str()));
    }
  }
  if (which.empty())
    for (int c = 1; c <= 9; ++c) which.push_back(c);

  struct Criterion {
    int id;
    const char* name;
    std::function<bool()> run;
  };
  const Criterion table[] = {
      {1, "loss-oracle suite", criterion_1},
      {2, "analytic InfoNCE values", criterion_2},
      {3, "adain statistics contract", criterion_3},
      {4, "gram/style-distance contract", criterion_4},
      {5, "full-objective gradient check", criterion_5},
      {6, "structural checks", criterion_6},
      {7, "desk-scale training run", criterion_7},
      {8, "determinism and resume", criterion_8},
      {9, "CLI round trip", criterion_9},
  };

  int failures = 0;
  for (int id : which) {
    for (const auto& c : table) {
      if (c.id != id) continue;
      g_checks_failed = 0;
      bool ok = false;
      try {
        ok = c.run();
      } catch (const std::exception& e) {
        std::cout << "    exception: " << e.what() << "\n";
        ok = false;
      }
      std::cout << (ok ? "[PASS]" : "[FAIL]") << " criterion " << c.id << ": "
                << c.name << "\n";
      if (!ok) ++failures;
    }
  }
  return failures;
}
