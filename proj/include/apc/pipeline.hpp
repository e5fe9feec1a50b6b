#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "apc/auxdec.hpp"
#include "apc/bank.hpp"
#include "apc/data.hpp"
#include "apc/eval.hpp"
#include "apc/trainer.hpp"

namespace apc {

/// Everything a run needs. Serialized as one flat JSON object; see README for keys.
struct RunConfig {
  std::string dataset = "synthetic";  // MVTec-style root, or "synthetic"
  SynthConfig synth;
  std::vector<std::string> categories;  // empty: every category under the root
  int image_size = 256;                 // real datasets only; synthetic uses synth.image_size

  std::string preset = "desk";
  std::string weights;  // optional encoder weights container (APCWTS1)
  std::string imagenet_weights, mocov3_weights;
  SkipMode skip_mode = SkipMode::TwoSkips;
  TaskMask tasks;

  bool cutpaste = true;
  bool basic_augmentation = true;
  int epochs = 50;
  int batch_size = 8;
  double learning_rate = 1e-4;
  double weight_decay = 1e-2;
  int k_total = 10;

  int neighborhood = 3;
  double coreset_ratio = 0.1;
  double sigma = 4.0;
  PixelMode pixel_mode = PixelMode::Histogram;

  std::uint64_t seed = 0;
  std::string output_dir = "apc_out";

  nlohmann::json to_json() const;
  /// Unknown keys and ill-typed values throw ConfigError.
  static RunConfig from_json(const nlohmann::json& j);
  /// FNV-1a of the canonical JSON without output_dir.
  std::string hash() const;
  void validate() const;

  bool synthetic() const { return dataset == "synthetic"; }
  NetworkConfig network() const;
  TrainConfig train() const;
  AugmentationConfig augmentation() const;
};

RunConfig load_run_config(const std::filesystem::path& path);

struct CategoryPaths {
  std::filesystem::path dir, checkpoint, history, bank, maps, manifest, overlays;
};
CategoryPaths category_paths(const RunConfig& cfg, const std::string& category);

std::vector<std::string> resolve_categories(const RunConfig& cfg);

/// Loads (or generates) a category and fixes its few-shot anomalous training set.
/// When the training split holds no anomalies, k_total test anomalies are moved out of test.
DatasetSplit prepare_split(const RunConfig& cfg, const std::string& category);

/// Fresh network; loads encoder weights when cfg.weights is set.
std::unique_ptr<ApcNetwork<float>> make_network(const RunConfig& cfg);

struct ScoreRecord {
  std::string id;
  double image_score = 0;
  int label = -1;  // -1 when unknown
  std::string anomaly_type;
  std::string map_file;
};

struct ScoreOptions {
  std::optional<std::filesystem::path> checkpoint, bank;
  std::optional<std::filesystem::path> images;  // score a directory instead of the test split
  bool overlays = false;
  bool allow_foreign_bank = false;
};

/// Commands. Each writes its artifacts under cfg.output_dir/<category>/ and is
/// byte-reproducible for a fixed config.
void cmd_train(const RunConfig& cfg, std::ostream& log);
void cmd_build_bank(const RunConfig& cfg, const std::optional<std::filesystem::path>& checkpoint, std::ostream& log);
void cmd_score(const RunConfig& cfg, const ScoreOptions& opts, std::ostream& log);
/// Refuses manifests whose config hash differs from cfg unless `force`.
MetricsReport cmd_eval(const RunConfig& cfg, bool force, std::ostream& log);
/// train, build-bank, score and eval in sequence.
MetricsReport run_pipeline(const RunConfig& cfg, std::ostream& log);

/// Axes: tasks, skips, init, augmentation. Unknown axis throws ConfigError.
nlohmann::json cmd_ablate(const RunConfig& cfg, const std::string& axis, std::ostream& log);
void cmd_synth(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log);

/// Map container IO (APCMAP1).
void save_map(const std::filesystem::path& path, const AnomalyResult& r, const nlohmann::json& meta);
AnomalyResult load_map(const std::filesystem::path& path);

/// Blue-to-red rendering of the min-max normalized map blended over the image.
Image overlay(const Image& img, const GridArray<float>& map);

}  // namespace apc
