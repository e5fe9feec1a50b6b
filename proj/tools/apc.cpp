// apc: train, build-bank, score, eval, ablate, synth.
// Exit status: 0 success, 1 runtime failure, 2 usage or missing input.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "apc/error.hpp"
#include "apc/pipeline.hpp"

namespace {

using nlohmann::json;

// Flags shared by every subcommand; each one overrides the config file when given.
struct CommonFlags {
  std::string config;
  json overrides = json::object();
  std::vector<std::function<void()>> collectors;

  template <typename T>
  void flag(CLI::App* app, const std::string& name, const std::string& key, const std::string& help) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app->add_option(name, *value, help);
    collectors.push_back([this, opt, value, key] {
      if (opt->count() > 0) overrides[key] = *value;
    });
  }

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config, "JSON run configuration")->check(CLI::ExistingFile);
    flag<std::string>(app, "--dataset", "dataset", "MVTec-style root directory, or 'synthetic'");
    flag<std::vector<std::string>>(app, "--category", "categories", "category to process (repeatable)");
    flag<int>(app, "--image-size", "image_size", "square input size for real datasets");
    flag<int>(app, "--synth-size", "synth_image_size", "synthetic image size");
    flag<std::string>(app, "--preset", "preset", "backbone preset: desk or resnet50");
    flag<std::string>(app, "--weights", "weights", "encoder weights container");
    flag<std::string>(app, "--skips", "skip_mode", "unet2 or unet4");
    flag<std::string>(app, "--tasks", "tasks", "none, all, or a list of cls,segm,recon");
    flag<bool>(app, "--cutpaste", "cutpaste", "CutPaste augmentation on/off");
    flag<int>(app, "--epochs", "epochs", "training epochs");
    flag<int>(app, "--batch", "batch_size", "batch size (even)");
    flag<double>(app, "--lr", "learning_rate", "AdamW learning rate");
    flag<double>(app, "--wd", "weight_decay", "AdamW weight decay");
    flag<int>(app, "--k-total", "k_total", "anomalous training samples per category");
    flag<int>(app, "--neighborhood", "neighborhood", "patch aggregation window (odd)");
    flag<double>(app, "--ratio", "coreset_ratio", "coreset ratio in (0,1]");
    flag<double>(app, "--sigma", "sigma", "anomaly map smoothing sigma in pixels");
    flag<std::string>(app, "--pixel-mode", "pixel_mode", "histogram or exact");
    flag<std::uint64_t>(app, "--seed", "seed", "seed for data, initialization and sampling");
    flag<std::string>(app, "-o,--out", "output_dir", "output directory (overrides APC_OUT)");
  }

  // File < APC_OUT (output_dir only) < flags.
  apc::RunConfig resolve() {
    json j = json::object();
    if (!config.empty()) {
      j = apc::load_run_config(config).to_json();
    }
    if (const char* env = std::getenv("APC_OUT"); env && *env) j["output_dir"] = env;
    for (auto& c : collectors) c();
    j.merge_patch(overrides);
    return apc::RunConfig::from_json(j);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anomaly detection with a fine-tuned encoder and a patch memory bank"};
  app.require_subcommand(1);

  CommonFlags common;
  auto* train = app.add_subcommand("train", "fine-tune the encoder and write a checkpoint");
  auto* build = app.add_subcommand("build-bank", "build the memory bank from normal training images");
  auto* score = app.add_subcommand("score", "score test images and write anomaly maps");
  auto* eval = app.add_subcommand("eval", "compute metrics from scored maps");
  auto* ablate = app.add_subcommand("ablate", "run the pipeline along one ablation axis");
  auto* synth = app.add_subcommand("synth", "write the synthetic dataset in MVTec layout");
  for (auto* sub : {train, build, score, eval, ablate, synth}) common.attach(sub);

  std::string checkpoint, bank, images;
  bool overlays = false, allow_foreign = false, force = false;
  std::string axis;
  build->add_option("--checkpoint", checkpoint, "checkpoint to load");
  score->add_option("--checkpoint", checkpoint, "checkpoint to load");
  score->add_option("--bank", bank, "memory bank to score against");
  score->add_option("--images", images, "directory of images to score instead of the test split");
  score->add_flag("--overlay", overlays, "write color-mapped overlay PNGs");
  score->add_flag("--allow-foreign-bank", allow_foreign, "score against a bank built from other features");
  eval->add_flag("--force", force, "evaluate manifests produced with another config");
  ablate->add_option("--axis", axis, "tasks, skips, init or augmentation")
      ->required()
      ->check(CLI::IsMember({"tasks", "skips", "init", "augmentation"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const apc::RunConfig cfg = common.resolve();
    auto& log = std::cerr;
    auto path_or_none = [](const std::string& p) {
      return p.empty() ? std::nullopt : std::optional<std::filesystem::path>(p);
    };
    if (train->parsed()) {
      apc::cmd_train(cfg, log);
    } else if (build->parsed()) {
      apc::cmd_build_bank(cfg, path_or_none(checkpoint), log);
    } else if (score->parsed()) {
      apc::ScoreOptions opts;
      opts.checkpoint = path_or_none(checkpoint);
      opts.bank = path_or_none(bank);
      opts.images = path_or_none(images);
      opts.overlays = overlays;
      opts.allow_foreign_bank = allow_foreign;
      apc::cmd_score(cfg, opts, log);
    } else if (eval->parsed()) {
      const auto report = apc::cmd_eval(cfg, force, log);
      std::cout << (std::filesystem::path(cfg.output_dir) / "report.json").string() << "\n";
      std::cout << "average AUROC_im " << report.average.auroc_im << " F1_im " << report.average.f1_im
                << " AUROC_px " << report.average.auroc_px << " F1_px " << report.average.f1_px << "\n";
    } else if (ablate->parsed()) {
      std::cout << apc::cmd_ablate(cfg, axis, log).dump(2) << "\n";
    } else if (synth->parsed()) {
      apc::cmd_synth(cfg, cfg.output_dir, log);
    }
  } catch (const apc::ConfigError& e) {
    std::cerr << "apc: " << e.what() << "\n";
    return 2;
  } catch (const apc::NotFoundError& e) {
    std::cerr << "apc: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "apc: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
