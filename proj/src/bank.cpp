#include "apc/bank.hpp"

#include <cmath>
#include <random>

#include "apc/container.hpp"
#include "apc/resample.hpp"

namespace apc {

template <typename Scalar>
Tensor<Scalar> fuse_stages(const StagedFeatures<Scalar>& staged) {
  const Tensor<Scalar>& s3 = staged.maps[2];
  const Tensor<Scalar>& s4 = staged.maps[3];
  if (s3.n != s4.n) throw ShapeError("fuse_stages: batch mismatch");
  Tensor<Scalar> up(s4.n, s4.c, s3.h, s3.w);
  for (Eigen::Index p = 0; p < Eigen::Index(s4.n) * s4.c; ++p)
    bilinear_resize_plane(s4.data.data() + p * s4.plane(), s4.h, s4.w, up.data.data() + p * up.plane(), up.h, up.w);
  return concat_channels(s3, up);
}

template <typename Scalar>
PatchFeatureSet aggregate_patches(const Tensor<Scalar>& fused, int index, int neighborhood, int stride_px) {
  if (neighborhood < 1 || neighborhood % 2 == 0) throw ConfigError("neighborhood size must be odd and >= 1");
  if (index < 0 || index >= fused.n) throw ShapeError("aggregate_patches: image index out of range");
  const int h = fused.h, w = fused.w, r = neighborhood / 2;
  PatchFeatureSet out;
  out.geometry = {h, w, stride_px, neighborhood};
  out.vectors.resize(Eigen::Index(h) * w, fused.c);
  const auto m = fused.matrix(index);  // c x hw
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1> acc = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(fused.c);
      int count = 0;
      for (int yy = std::max(0, y - r); yy <= std::min(h - 1, y + r); ++yy)
        for (int xx = std::max(0, x - r); xx <= std::min(w - 1, x + r); ++xx) {
          acc += m.col(Eigen::Index(yy) * w + xx);
          ++count;
        }
      out.vectors.row(Eigen::Index(y) * w + x) = (acc / Scalar(count)).template cast<float>().transpose();
    }
  if (!out.vectors.allFinite()) throw NumericError("non-finite patch features");
  return out;
}

template <typename Scalar>
std::vector<PatchFeatureSet> extract_patches(ApcNetwork<Scalar>& net, std::span<const ImageSample> samples,
                                             int neighborhood, int batch_size) {
  const std::string signature = feature_signature(net);
  const int stride = kStageStrides[2];
  std::vector<PatchFeatureSet> out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += std::size_t(batch_size)) {
    const auto chunk = samples.subspan(start, std::min(samples.size() - start, std::size_t(batch_size)));
    const auto fused = fuse_stages(net.encoder().forward_stages(images_to_tensor<Scalar>(chunk), nn::Mode::Eval));
    for (int i = 0; i < fused.n; ++i) {
      PatchFeatureSet p = aggregate_patches(fused, i, neighborhood, stride);
      p.source_id = chunk[std::size_t(i)].source_id;
      p.signature = signature;
      out.push_back(std::move(p));
    }
  }
  return out;
}

Eigen::Index coreset_size(Eigen::Index total, double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("coreset ratio must lie in (0, 1]");
  return std::max<Eigen::Index>(1, Eigen::Index(std::llround(ratio * double(total))));
}

std::vector<Eigen::Index> coreset_select_from(const Eigen::Ref<const MatrixRM<float>>& points, Eigen::Index k,
                                              Eigen::Index start) {
  const Eigen::Index n = points.rows();
  if (k < 1 || k > n) throw ConfigError("coreset size k=" + std::to_string(k) + " must lie in [1, " + std::to_string(n) + "]");
  if (start < 0 || start >= n) throw ConfigError("coreset start index out of range");
  const MatrixRM<double> P = points.cast<double>();
  Eigen::ArrayXd min_d = Eigen::ArrayXd::Constant(n, std::numeric_limits<double>::infinity());
  std::vector<Eigen::Index> selected{start};
  Eigen::Index current = start;
  while (true) {
    min_d = min_d.min((P.rowwise() - P.row(current)).rowwise().squaredNorm().array());
    for (Eigen::Index s : selected) min_d[s] = -1.0;  // never reselect
    if (Eigen::Index(selected.size()) == k) break;
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < n; ++i)
      if (min_d[i] > min_d[best]) best = i;
    selected.push_back(best);
    current = best;
  }
  return selected;
}

std::vector<Eigen::Index> coreset_select(const Eigen::Ref<const MatrixRM<float>>& points, Eigen::Index k,
                                         std::uint64_t seed) {
  if (points.rows() < 1) throw ConfigError("coreset selection over an empty set");
  std::mt19937_64 rng(seed);
  const Eigen::Index start = std::uniform_int_distribution<Eigen::Index>(0, points.rows() - 1)(rng);
  return coreset_select_from(points, k, start);
}

double cover_radius(const Eigen::Ref<const MatrixRM<float>>& points, std::span<const Eigen::Index> selected) {
  double worst = 0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index s : selected)
      best = std::min(best, (points.row(i).cast<double>() - points.row(s).cast<double>()).squaredNorm());
    worst = std::max(worst, best);
  }
  return std::sqrt(worst);
}

MemoryBank build_bank(std::span<const PatchFeatureSet> sets, double ratio, std::uint64_t seed) {
  if (sets.empty()) throw ConfigError("build_bank needs at least one patch set");
  const Eigen::Index d = sets[0].dim();
  Eigen::Index total = 0;
  for (const auto& s : sets) {
    if (s.dim() != d) throw IncompatibleError("patch sets differ in feature dimension");
    if (s.signature != sets[0].signature) throw IncompatibleError("patch sets carry different feature signatures");
    total += s.vectors.rows();
  }
  MatrixRM<float> all(total, d);
  Eigen::Index row = 0;
  for (const auto& s : sets) {
    all.middleRows(row, s.vectors.rows()) = s.vectors;
    row += s.vectors.rows();
  }
  MemoryBank bank;
  bank.coreset_ratio = ratio;
  bank.selected_from = total;
  bank.feature_signature = sets[0].signature;
  bank.neighborhood = sets[0].geometry.neighborhood;
  bank.seed = seed;
  const Eigen::Index k = coreset_size(total, ratio);
  if (k == total) {
    bank.patches = std::move(all);
    return bank;
  }
  const auto idx = coreset_select(all, k, seed);
  bank.patches.resize(k, d);
  for (Eigen::Index i = 0; i < k; ++i) bank.patches.row(i) = all.row(idx[std::size_t(i)]);
  return bank;
}

GridArray<double> score_patches(const MemoryBank& bank, const PatchFeatureSet& patches, bool allow_foreign) {
  if (patches.dim() != bank.dim())
    throw IncompatibleError("patch dimension " + std::to_string(patches.dim()) + " differs from bank dimension " +
                            std::to_string(bank.dim()));
  if (!allow_foreign && patches.signature != bank.feature_signature)
    throw IncompatibleError("feature signature " + patches.signature + " does not match bank signature " +
                            bank.feature_signature);
  const auto& g = patches.geometry;
  if (Eigen::Index(g.grid_h) * g.grid_w != patches.vectors.rows()) throw ShapeError("patch grid geometry mismatch");
  GridArray<double> out(g.grid_h, g.grid_w);
  const MatrixRM<double> B = bank.patches.cast<double>();
  for (Eigen::Index q = 0; q < patches.vectors.rows(); ++q) {
    const Eigen::RowVectorXd v = patches.vectors.row(q).cast<double>();
    const double best = (B.rowwise() - v).rowwise().squaredNorm().minCoeff();
    out(q / g.grid_w, q % g.grid_w) = std::sqrt(best);
  }
  return out;
}

GridArray<float> smooth_map(const GridArray<float>& map, double sigma) {
  if (sigma <= 0) return map;
  const auto taps = gaussian_taps(2 * int(std::ceil(4.0 * sigma)) + 1, sigma);
  GridArray<float> out(map.rows(), map.cols());
  blur_plane(map.data(), int(map.rows()), int(map.cols()), taps, out.data());
  return out;
}

AnomalyResult assemble_map(const GridArray<double>& grid, const GridGeometry& geometry, int height, int width,
                           double sigma) {
  if (grid.rows() != geometry.grid_h || grid.cols() != geometry.grid_w ||
      geometry.grid_h * geometry.stride_px != height || geometry.grid_w * geometry.stride_px != width)
    throw ShapeError("assemble_map: grid " + std::to_string(grid.rows()) + "x" + std::to_string(grid.cols()) +
                     " with stride " + std::to_string(geometry.stride_px) + " does not cover " + std::to_string(height) +
                     "x" + std::to_string(width));
  AnomalyResult r;
  r.image_score = grid.maxCoeff();
  GridArray<float> up(height, width);
  const GridArray<float> g = grid.cast<float>();
  bilinear_resize_plane(g.data(), int(g.rows()), int(g.cols()), up.data(), height, width);
  r.map = smooth_map(up, sigma);
  return r;
}

void save_bank(const MemoryBank& bank, const std::filesystem::path& path) {
  Container c;
  c.meta = {{"coreset_ratio", bank.coreset_ratio},  {"selected_from", bank.selected_from},
            {"feature_signature", bank.feature_signature}, {"distance", bank.distance},
            {"neighborhood", bank.neighborhood},     {"seed", bank.seed}};
  NamedArray a{"patches", {int(bank.patches.rows()), int(bank.patches.cols())}, {}};
  a.data.assign(bank.patches.data(), bank.patches.data() + bank.patches.size());
  c.arrays.push_back(std::move(a));
  write_container(path, kBankMagic, c);
}

MemoryBank load_bank(const std::filesystem::path& path) {
  const Container c = read_container(path, kBankMagic);
  MemoryBank bank;
  try {
    bank.coreset_ratio = c.meta.at("coreset_ratio").get<double>();
    bank.selected_from = c.meta.at("selected_from").get<Eigen::Index>();
    bank.feature_signature = c.meta.at("feature_signature").get<std::string>();
    bank.distance = c.meta.at("distance").get<std::string>();
    bank.neighborhood = c.meta.at("neighborhood").get<int>();
    bank.seed = c.meta.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(path.string() + ": incomplete bank metadata: " + e.what());
  }
  if (bank.feature_signature.empty()) throw IntegrityError(path.string() + ": bank has no feature signature");
  const NamedArray& a = c.at("patches");
  if (a.shape.size() != 2) throw IntegrityError(path.string() + ": patches must be 2-D");
  bank.patches = Eigen::Map<const MatrixRM<float>>(a.data.data(), a.shape[0], a.shape[1]);
  return bank;
}

template Tensor<float> fuse_stages(const StagedFeatures<float>&);
template Tensor<double> fuse_stages(const StagedFeatures<double>&);
template PatchFeatureSet aggregate_patches(const Tensor<float>&, int, int, int);
template PatchFeatureSet aggregate_patches(const Tensor<double>&, int, int, int);
template std::vector<PatchFeatureSet> extract_patches(ApcNetwork<float>&, std::span<const ImageSample>, int, int);
template std::vector<PatchFeatureSet> extract_patches(ApcNetwork<double>&, std::span<const ImageSample>, int, int);

}  // namespace apc
