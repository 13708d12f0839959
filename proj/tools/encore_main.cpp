// Command-line entry point: train, stylize, audit, dump-features.

#include <CLI11.hpp>

#include <iostream>

#include "encore/encore.hpp"

namespace {

using Scalar = float;
using namespace encore;

// stylize-time sizing: min side to 512 (aspect preserved), then center-crop
// both dims down to multiples of 8 so the encoder accepts them
Tensor<Scalar> stylize_preprocess(const std::string& path) {
  Tensor<Scalar> t = resize_min_side(to_tensor<Scalar>(load_image(path)), 512);
  const i64 h = t.dim(1) / 8 * 8;
  const i64 w = t.dim(2) / 8 * 8;
  return center_crop(t, h, w);
}

Encoder<Scalar> load_encoder_for_inspection(const std::string& checkpoint,
                                            const std::string& reference) {
  if (!checkpoint.empty()) {
    auto ck = load_checkpoint<Scalar>(checkpoint);
    return std::move(ck.modules.encoder);
  }
  Archive a = Archive::load(reference);
  return Encoder<Scalar>::import_reference(a);
}

std::string json_path_for(const std::string& csv_path) {
  const std::string suffix = ".csv";
  if (csv_path.size() > suffix.size() &&
      csv_path.substr(csv_path.size() - suffix.size()) == suffix)
    return csv_path.substr(0, csv_path.size() - suffix.size()) + ".json";
  return csv_path + ".json";
}

int cmd_train(const std::string& config_path, const std::string& resume,
              std::optional<std::uint64_t> seed,
              const std::string& out_override) {
  TrainingConfig cfg = load_config(config_path);
  if (seed) cfg.seed = *seed;
  if (!out_override.empty()) cfg.output_dir = out_override;
  cfg.resume_checkpoint = resume;
  cfg.validate();
  TrainResult result = train<Scalar>(cfg);
  std::cout << "final checkpoint: " << result.final_checkpoint << "\n"
            << "metrics: " << result.metrics_path << "\n";
  return 0;
}

int cmd_stylize(const std::string& checkpoint, const std::string& content,
                const std::string& style, const std::string& out,
                double alpha) {
  auto ck = load_checkpoint<Scalar>(checkpoint);
  Rng rng(0);
  Tensor<Scalar> c = stylize_preprocess(content);
  Tensor<Scalar> s = stylize_preprocess(style);
  auto pair = stylize(ck.modules.encoder, ck.modules.decoder,
                      c.reshape(Shape{1, 3, c.dim(1), c.dim(2)}),
                      s.reshape(Shape{1, 3, s.dim(1), s.dim(2)}),
                      Scalar(alpha));
  Tensor<Scalar> img = pair.image.reshape(
      Shape{3, pair.image.dim(2), pair.image.dim(3)});
  save_png(out, img);
  std::cout << "wrote " << out << " (" << img.dim(2) << "x" << img.dim(1)
            << ")\n";
  return 0;
}

int cmd_audit(const std::string& images_dir, i64 triples, i64 n_blocks,
              std::uint64_t seed, const std::string& report,
              const std::string& checkpoint, const std::string& reference,
              const std::string& layers_csv) {
  Encoder<Scalar> enc = load_encoder_for_inspection(checkpoint, reference);
  TapSet layers = layers_csv.empty() ? default_content_taps()
                                     : detail::parse_taps(layers_csv);
  auto paths = resolve_image_list(images_dir, {".png", ".jpg", ".jpeg"});
  TripleReport rep = audit_triples(enc, paths, triples, n_blocks, layers, seed);
  write_report_csv(rep, report);
  write_report_json(rep, json_path_for(report));
  std::cout << "inconsistency_rate=" << rep.inconsistency_rate
            << " mean_d_cross=" << rep.mean_d_cross
            << " mean_d_shuffle=" << rep.mean_d_shuffle << "\n";
  return 0;
}

int cmd_dump_features(const std::string& checkpoint,
                      const std::string& reference, const std::string& image,
                      const std::string& layer, const std::string& out) {
  Encoder<Scalar> enc = load_encoder_for_inspection(checkpoint, reference);
  Tensor<Scalar> t = resize_min_side(to_tensor<Scalar>(load_image(image)), 256);
  t = center_crop(t, 256, 256);
  dump_features(enc, t, parse_layer_tag(layer), out);
  std::cout << "wrote " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contrastive encoder refinement for arbitrary style transfer"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "run a training job");
  std::string config_path, resume, out_override;
  std::optional<std::uint64_t> seed_override;
  train_cmd->add_option("--config", config_path, "config file")->required();
  train_cmd->add_option("--resume", resume, "checkpoint to resume from");
  train_cmd->add_option("--seed", seed_override, "override the config seed");
  train_cmd->add_option("--out", out_override, "override the output directory");

  // stylize
  auto* stylize_cmd = app.add_subcommand("stylize", "stylize one image");
  std::string ckpt, content, style, out_img;
  double alpha = 1.0;
  stylize_cmd->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
  stylize_cmd->add_option("--content", content, "content image")->required();
  stylize_cmd->add_option("--style", style, "style image")->required();
  stylize_cmd->add_option("--out", out_img, "output PNG")->required();
  stylize_cmd->add_option("--alpha", alpha, "style strength in [0,1]")
      ->check(CLI::Range(0.0, 1.0));

  // audit
  auto* audit_cmd =
      app.add_subcommand("audit", "measure latent-space style consistency");
  std::string images_dir, report, audit_ckpt, audit_ref, layers_csv;
  i64 triples = 50, n_blocks = 4;
  std::uint64_t audit_seed = 1;
  audit_cmd->add_option("--images", images_dir, "image directory")->required();
  audit_cmd->add_option("--triples", triples, "number of sampled pairs");
  audit_cmd->add_option("--n-blocks", n_blocks, "shuffle grid size");
  audit_cmd->add_option("--seed", audit_seed, "sampling seed");
  audit_cmd->add_option("--report", report, "output CSV path")->required();
  audit_cmd->add_option("--checkpoint", audit_ckpt, "trained checkpoint");
  audit_cmd->add_option("--reference", audit_ref, "reference weight archive");
  audit_cmd->add_option("--layers", layers_csv,
                        "comma-separated taps (default relu1_1..relu4_1)");

  // dump-features
  auto* dump_cmd =
      app.add_subcommand("dump-features", "export a content-feature heatmap");
  std::string dump_ckpt, dump_ref, dump_image, dump_layer, dump_out;
  dump_cmd->add_option("--checkpoint", dump_ckpt, "trained checkpoint");
  dump_cmd->add_option("--reference", dump_ref, "reference weight archive");
  dump_cmd->add_option("--image", dump_image, "input image")->required();
  dump_cmd->add_option("--layer", dump_layer, "tap name, e.g. relu3_1")
      ->required();
  dump_cmd->add_option("--out", dump_out, "output PNG")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(train_cmd))
      return cmd_train(config_path, resume, seed_override, out_override);
    if (app.got_subcommand(stylize_cmd))
      return cmd_stylize(ckpt, content, style, out_img, alpha);
    if (app.got_subcommand(audit_cmd)) {
      if (audit_ckpt.empty() == audit_ref.empty()) {
        std::cerr << "audit requires exactly one of --checkpoint or --reference\n";
        return 1;
      }
      return cmd_audit(images_dir, triples, n_blocks, audit_seed, report,
                       audit_ckpt, audit_ref, layers_csv);
    }
    if (app.got_subcommand(dump_cmd)) {
      if (dump_ckpt.empty() == dump_ref.empty()) {
        std::cerr
            << "dump-features requires exactly one of --checkpoint or --reference\n";
        return 1;
      }
      return cmd_dump_features(dump_ckpt, dump_ref, dump_image, dump_layer,
                               dump_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
