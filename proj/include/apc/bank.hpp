#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "apc/auxdec.hpp"
#include "apc/image.hpp"

namespace apc {

template <typename Scalar>
using GridArray = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct GridGeometry {
  int grid_h = 0, grid_w = 0;
  int stride_px = 16;
  int neighborhood = 3;
};

/// Locally aggregated patch vectors of one image, one row per grid cell (row-major cells).
struct PatchFeatureSet {
  MatrixRM<float> vectors;
  GridGeometry geometry;
  std::string source_id;
  std::string signature;

  Eigen::Index dim() const { return vectors.cols(); }
};

struct MemoryBank {
  MatrixRM<float> patches;
  double coreset_ratio = 1.0;
  Eigen::Index selected_from = 0;
  std::string feature_signature;
  std::string distance = "euclidean";
  int neighborhood = 3;
  std::uint64_t seed = 0;

  Eigen::Index size() const { return patches.rows(); }
  Eigen::Index dim() const { return patches.cols(); }
};

struct AnomalyResult {
  GridArray<float> map;  // H x W
  double image_score = 0;
};

/// Upsamples stage 4 bilinearly to the stage-3 grid and concatenates (stage3, stage4).
template <typename Scalar>
Tensor<Scalar> fuse_stages(const StagedFeatures<Scalar>& staged);

/// Averages each cell's neighborhood x neighborhood window (in-bounds cells only) for
/// image `index` of the fused batch.
template <typename Scalar>
PatchFeatureSet aggregate_patches(const Tensor<Scalar>& fused, int index, int neighborhood, int stride_px = 16);

/// Encoder-only feature extraction (evaluation mode) for a list of samples.
template <typename Scalar>
std::vector<PatchFeatureSet> extract_patches(ApcNetwork<Scalar>& net, std::span<const ImageSample> samples,
                                             int neighborhood, int batch_size = 8);

/// k = max(1, round(ratio * total)).
Eigen::Index coreset_size(Eigen::Index total, double ratio);

/// Greedy k-center selection from `start`: repeatedly adds the point farthest from
/// the selected set, ties broken by lowest index. O(n k d).
std::vector<Eigen::Index> coreset_select_from(const Eigen::Ref<const MatrixRM<float>>& points, Eigen::Index k,
                                              Eigen::Index start);
/// As coreset_select_from with a start index drawn from `seed`.
std::vector<Eigen::Index> coreset_select(const Eigen::Ref<const MatrixRM<float>>& points, Eigen::Index k,
                                         std::uint64_t seed);
/// max over points of the distance to the nearest selected point.
double cover_radius(const Eigen::Ref<const MatrixRM<float>>& points, std::span<const Eigen::Index> selected);

MemoryBank build_bank(std::span<const PatchFeatureSet> sets, double ratio, std::uint64_t seed);

/// Exact Euclidean distance from every patch to its nearest bank row.
GridArray<double> score_patches(const MemoryBank& bank, const PatchFeatureSet& patches, bool allow_foreign = false);

/// image_score = max of the raw grid; map = bilinear upsampling to H x W followed by
/// Gaussian smoothing with the given sigma (pixels).
AnomalyResult assemble_map(const GridArray<double>& grid, const GridGeometry& geometry, int height, int width,
                           double sigma = 4.0);

/// Gaussian smoothing of a map with reflective borders, taps truncated at 4 sigma.
GridArray<float> smooth_map(const GridArray<float>& map, double sigma);

void save_bank(const MemoryBank& bank, const std::filesystem::path& path);
MemoryBank load_bank(const std::filesystem::path& path);

}  // namespace apc
