#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "encore/encoder.hpp"

namespace encore {

enum class Supervision { refined, reference };
enum class IdentityPaths { both, content_only };

// Every tunable of a training run, with defaults. Defaults marked "method"
// come from the published configuration of the technique; the rest are
// project choices.
struct TrainingConfig {
  // corpus and run layout
  std::string content_dir;
  std::string style_dir;
  std::string reference_weights;
  std::string output_dir = "run";

  // optimization (Adam with beta1 0.9, beta2 0.999 throughout)
  i64 batch_size = 8;
  i64 steps = 500;
  double lr = 1e-4;

  // contrastive machinery
  double tau = 0.07;     // method
  i64 positives = 8;     // method
  i64 shuffle_n = 4;
  i64 patch_count = 8;
  i64 patch_size = 64;
  bool style_positive_mean = false;  // sum over positives, per the objective

  // loss weights
  double lambda_d = 1.0;
  double lambda_sc = 0.3;
  double lambda_cc = 0.3;
  double lambda_style_ast = 10.0;

  // layer selections
  TapSet reg_layers = {LayerTag::relu4_1};            // method
  TapSet content_taps = default_content_taps();       // method

  // switches
  Supervision supervision = Supervision::refined;
  IdentityPaths identity_paths = IdentityPaths::both;

  // preprocessing sizes
  i64 min_side = 512;  // method
  i64 crop = 256;      // method

  // run control
  std::uint64_t seed = 1;
  i64 checkpoint_every = 100;
  bool deterministic = false;
  double grad_clip = 0.0;  // 0 disables

  // set by the command line, never by the config file
  std::string resume_checkpoint;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (steps < 1) throw std::invalid_argument("steps must be >= 1");
    if (tau <= 0) throw std::invalid_argument("tau must be > 0");
    if (positives < 1) throw std::invalid_argument("positives must be >= 1");
    if (shuffle_n < 1) throw std::invalid_argument("shuffle_n must be >= 1");
    if (patch_count < 2)
      throw std::invalid_argument("patch_count must be >= 2 (negatives)");
    if (lambda_d < 0 || lambda_sc < 0 || lambda_cc < 0 || lambda_style_ast < 0)
      throw std::invalid_argument("loss weights must be non-negative");
    if (crop % 8 != 0)
      throw std::invalid_argument("crop must be divisible by 8");
    if (crop % shuffle_n != 0)
      throw std::invalid_argument("crop must be divisible by shuffle_n");
    if (patch_size % 8 != 0 || patch_size < 8)
      throw std::invalid_argument("patch_size must be a positive multiple of 8");
    if (patch_size > crop)
      throw std::invalid_argument("patch_size must not exceed crop");
    if (min_side < crop)
      throw std::invalid_argument("min_side must be >= crop");
    if (checkpoint_every < 1)
      throw std::invalid_argument("checkpoint_every must be >= 1");
    if (content_taps.empty())
      throw std::invalid_argument("content_taps must not be empty");
    if (reg_layers.empty())
      throw std::invalid_argument("reg_layers must not be empty");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace((unsigned char)s[b])) ++b;
  while (e > b && std::isspace((unsigned char)s[e - 1])) --e;
  return s.substr(b, e - b);
}

inline TapSet parse_taps(const std::string& s) {
  TapSet taps;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) taps.push_back(parse_layer_tag(item));
  }
  return taps;
}

inline std::string taps_to_string(const TapSet& taps) {
  std::string out;
  for (std::size_t i = 0; i < taps.size(); ++i) {
    if (i) out += ",";
    out += to_string(taps[i]);
  }
  return out;
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("invalid boolean for " + key + ": " + v);
}

}  // namespace detail

// Flat key = value file, one per line, '#' starts a comment. Unknown keys are
// rejected so typos never silently fall back to defaults.
inline TrainingConfig parse_config_text(const std::string& text) {
  TrainingConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));

    auto as_i64 = [&]() { return i64(std::stoll(val)); };
    auto as_f64 = [&]() { return std::stod(val); };

    if (key == "content_dir") cfg.content_dir = val;
    else if (key == "style_dir") cfg.style_dir = val;
    else if (key == "reference_weights") cfg.reference_weights = val;
    else if (key == "output_dir") cfg.output_dir = val;
    else if (key == "batch_size") cfg.batch_size = as_i64();
    else if (key == "steps") cfg.steps = as_i64();
    else if (key == "lr") cfg.lr = as_f64();
    else if (key == "tau") cfg.tau = as_f64();
    else if (key == "positives") cfg.positives = as_i64();
    else if (key == "shuffle_n") cfg.shuffle_n = as_i64();
    else if (key == "patch_count") cfg.patch_count = as_i64();
    else if (key == "patch_size") cfg.patch_size = as_i64();
    else if (key == "style_positive_reduction") {
      if (val == "sum") cfg.style_positive_mean = false;
      else if (val == "mean") cfg.style_positive_mean = true;
      else throw std::invalid_argument("style_positive_reduction must be sum|mean");
    }
    else if (key == "lambda_d") cfg.lambda_d = as_f64();
    else if (key == "lambda_sc") cfg.lambda_sc = as_f64();
    else if (key == "lambda_cc") cfg.lambda_cc = as_f64();
    else if (key == "lambda_style_ast") cfg.lambda_style_ast = as_f64();
    else if (key == "reg_layers") cfg.reg_layers = detail::parse_taps(val);
    else if (key == "content_taps") cfg.content_taps = detail::parse_taps(val);
    else if (key == "supervision") {
      if (val == "refined") cfg.supervision = Supervision::refined;
      else if (val == "reference") cfg.supervision = Supervision::reference;
      else throw std::invalid_argument("supervision must be refined|reference");
    }
    else if (key == "identity_paths") {
      if (val == "both") cfg.identity_paths = IdentityPaths::both;
      else if (val == "content_only") cfg.identity_paths = IdentityPaths::content_only;
      else throw std::invalid_argument("identity_paths must be both|content_only");
    }
    else if (key == "min_side") cfg.min_side = as_i64();
    else if (key == "crop") cfg.crop = as_i64();
    else if (key == "seed") cfg.seed = std::uint64_t(std::stoull(val));
    else if (key == "checkpoint_every") cfg.checkpoint_every = as_i64();
    else if (key == "deterministic") cfg.deterministic = detail::parse_bool(val, key);
    else if (key == "grad_clip") cfg.grad_clip = as_f64();
    else throw std::invalid_argument("unknown config key: " + key);
  }
  return cfg;
}

inline TrainingConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

// Canonical fully-resolved echo of a config. Written into the run directory;
// also the input to the config digest.
inline std::string resolved_config_text(const TrainingConfig& c) {
  std::ostringstream os;
  os.precision(17);
  auto src = [](const char* which) { return std::string("  # source: ") + which; };
  os << "# resolved configuration\n";
  os << "content_dir = " << c.content_dir << "\n";
  os << "style_dir = " << c.style_dir << "\n";
  os << "reference_weights = " << c.reference_weights << "\n";
  os << "output_dir = " << c.output_dir << "\n";
  os << "batch_size = " << c.batch_size << src("project") << "\n";
  os << "steps = " << c.steps << src("project") << "\n";
  os << "lr = " << c.lr << src("project") << "\n";
  os << "tau = " << c.tau << src("method") << "\n";
  os << "positives = " << c.positives << src("method") << "\n";
  os << "shuffle_n = " << c.shuffle_n << src("project") << "\n";
  os << "patch_count = " << c.patch_count << src("project") << "\n";
  os << "patch_size = " << c.patch_size << src("project") << "\n";
  os << "style_positive_reduction = "
     << (c.style_positive_mean ? "mean" : "sum") << src("project") << "\n";
  os << "lambda_d = " << c.lambda_d << src("project") << "\n";
  os << "lambda_sc = " << c.lambda_sc << src("project") << "\n";
  os << "lambda_cc = " << c.lambda_cc << src("project") << "\n";
  os << "lambda_style_ast = " << c.lambda_style_ast << src("project") << "\n";
  os << "reg_layers = " << detail::taps_to_string(c.reg_layers) << src("method")
     << "\n";
  os << "content_taps = " << detail::taps_to_string(c.content_taps)
     << src("method") << "\n";
  os << "supervision = "
     << (c.supervision == Supervision::refined ? "refined" : "reference")
     << src("project") << "\n";
  os << "identity_paths = "
     << (c.identity_paths == IdentityPaths::both ? "both" : "content_only")
     << src("project") << "\n";
  os << "min_side = " << c.min_side << src("method") << "\n";
  os << "crop = " << c.crop << src("method") << "\n";
  os << "seed = " << c.seed << "\n";
  os << "checkpoint_every = " << c.checkpoint_every << src("project") << "\n";
  os << "deterministic = " << (c.deterministic ? "true" : "false") << "\n";
  os << "grad_clip = " << c.grad_clip << src("project") << "\n";
  return os.str();
}

// FNV-1a over the resolved text; stable across platforms
inline std::uint64_t config_digest(const TrainingConfig& c) {
  const std::string text = resolved_config_text(c);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace encore
