#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "apc/image.hpp"

namespace apc {

using Rng = std::mt19937_64;

struct DatasetSplit {
  std::vector<ImageSample> train_normal;
  std::vector<ImageSample> train_anomalous;
  std::vector<ImageSample> test;
  std::string category;
};

struct LoadOptions {
  int image_size = 256;
};

/// Reads an MVTec-style category directory:
///   <root>/<category>/train/good/*          normal training images
///   <root>/<category>/train/<type>/*        optional anomalous training images
///   <root>/<category>/test/<type>/*         test images, "good" = normal
///   <root>/<category>/ground_truth/<type>/<stem>_mask.png
DatasetSplit load_dataset(const std::filesystem::path& root, const std::string& category, const LoadOptions& opts = {});

/// Writes a split in the layout read by load_dataset (PNG images and masks).
void save_dataset(const DatasetSplit& split, const std::filesystem::path& root);

/// Draws k_total anomalous samples spread evenly over anomaly types; the remainder
/// goes to types in lexicographic order. The pool is split.train_anomalous, or the
/// anomalous test samples when no training anomalies exist.
std::vector<ImageSample> sample_anomalous_subset(const DatasetSplit& split, int k_total, std::uint64_t seed);

/// Moves k_total sampled test anomalies into train_anomalous (for layouts like
/// MVTec whose training folders hold normal images only).
void holdout_test_anomalies(DatasetSplit& split, int k_total, std::uint64_t seed);

/// Per-type counts for `k_total` spread over `types` (lexicographic remainder rule).
std::vector<int> allocate_evenly(int k_total, int types);

enum class BasicOp { HorizontalFlip, SmallRotation, BrightnessJitter };

struct AugmentationConfig {
  bool cutpaste_enabled = true;
  double saturation_low = 0.5;
  double saturation_high = 1.5;
  std::vector<BasicOp> basic_ops{BasicOp::HorizontalFlip, BasicOp::SmallRotation, BasicOp::BrightnessJitter};
  double flip_probability = 0.5;
  double rotation_degrees = 5.0;
  double brightness = 0.1;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

/// Pastes the source defect at `offset` (dy, dx) with the given saturation factor.
ImageSample cutpaste_at(const ImageSample& target, const ImageSample& source, int dy, int dx, double saturation_factor);

/// Pastes the source defect at a random position keeping at least half of it in
/// bounds (centered after 10 failed draws), with a random saturation factor.
ImageSample cutpaste_augment(const ImageSample& target, const ImageSample& source, const AugmentationConfig& cfg, Rng& rng);

/// Applies the enabled flip / rotation / brightness operations to image and mask.
ImageSample basic_augment(const ImageSample& sample, const AugmentationConfig& cfg, Rng& rng);

/// Index plan of one balanced batch.
struct BatchPlan {
  std::vector<int> normal;
  std::vector<int> anomalous;  // indices into the anomalous pool, -1 = synthesize
};

/// One epoch of balanced batches: every normal index exactly once (shuffled), each
/// batch paired with an equal number of anomalous draws made with replacement.
std::vector<BatchPlan> balanced_epoch(int n_normal, int n_anomalous, int batch_size, bool synthesize_missing, Rng& rng);

/// Materializes a planned batch, applying augmentation. Anomalous slots are either
/// the drawn sample or, with probability 0.5 when CutPaste is enabled, its defect
/// pasted onto a random normal image.
std::vector<ImageSample> materialize_batch(const BatchPlan& plan, const std::vector<ImageSample>& normal,
                                           const std::vector<ImageSample>& anomalous, const AugmentationConfig& cfg,
                                           Rng& rng);

// --- synthetic data ---------------------------------------------------------

enum class DefectKind { Blob, Scratch, Occlusion };

struct SynthConfig {
  int image_size = 128;
  int n_train_normal = 200;
  int n_train_anomalous = 10;
  int n_test_normal = 50;
  int n_test_anomalous = 50;
  double defect_contrast = 0.35;
  std::string category = "synthetic";

  void validate() const;
};

struct DefectSpec {
  DefectKind kind = DefectKind::Blob;
  double cy = 0, cx = 0;  // center, pixels
  double a = 0, b = 0;    // semi-axes (blob), half-length/half-width (scratch), half-sizes (occlusion)
  double angle = 0;       // radians
};

/// Renders one texture sample; the texture depends only on (cfg, dataset seed, sample seed).
ImageSample synth_render(const SynthConfig& cfg, std::uint64_t dataset_seed, std::uint64_t sample_seed,
                         const DefectSpec* defect);
DefectSpec synth_random_defect(const SynthConfig& cfg, DefectKind kind, std::uint64_t sample_seed);
DatasetSplit synth_generate(const SynthConfig& cfg, std::uint64_t seed);

std::string defect_name(DefectKind k);

/// Deterministic 64-bit mixing used to derive independent per-item seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace apc
