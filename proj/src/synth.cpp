#include <cmath>
#include <cstdio>
#include <numbers>

#include "apc/data.hpp"
#include "apc/error.hpp"
#include "apc/resample.hpp"

namespace apc {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (b * 0x9e3779b97f4a7c15ull + 0x632be59bd9b4e019ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::string defect_name(DefectKind k) {
  switch (k) {
    case DefectKind::Blob: return "blob";
    case DefectKind::Scratch: return "scratch";
    case DefectKind::Occlusion: return "occlusion";
  }
  return "unknown";
}

void SynthConfig::validate() const {
  if (image_size <= 0 || image_size % 32 != 0) throw ConfigError("synthetic image size must be a positive multiple of 32");
  if (n_train_normal <= 0 || n_train_anomalous <= 0 || n_test_normal <= 0 || n_test_anomalous <= 0)
    throw ConfigError("synthetic sample counts must be positive");
  if (defect_contrast < 0.3 || defect_contrast > 0.5) throw ConfigError("defect contrast must lie in [0.3, 0.5]");
}

namespace {

struct TextureStyle {
  double tint[3];
  double angle;
  double period;
};

TextureStyle dataset_style(const SynthConfig& cfg, std::uint64_t dataset_seed) {
  Rng rng(mix_seed(dataset_seed, 0x5747));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  TextureStyle s{};
  for (double& t : s.tint) t = 0.55 + 0.45 * u(rng);
  s.angle = u(rng) * std::numbers::pi;
  s.period = (10.0 + 6.0 * u(rng)) * cfg.image_size / 128.0;
  return s;
}

bool inside(const DefectSpec& d, double y, double x) {
  const double dy = y - d.cy, dx = x - d.cx;
  const double u = dy * std::cos(d.angle) + dx * std::sin(d.angle);
  const double v = -dy * std::sin(d.angle) + dx * std::cos(d.angle);
  if (d.kind == DefectKind::Blob) return (u * u) / (d.a * d.a) + (v * v) / (d.b * d.b) <= 1.0;
  return std::abs(u) <= d.a && std::abs(v) <= d.b;
}

}  // namespace

DefectSpec synth_random_defect(const SynthConfig& cfg, DefectKind kind, std::uint64_t sample_seed) {
  Rng rng(mix_seed(sample_seed, 0xdef));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double S = cfg.image_size;
  DefectSpec d;
  d.kind = kind;
  d.cy = (0.2 + 0.6 * u(rng)) * S;
  d.cx = (0.2 + 0.6 * u(rng)) * S;
  switch (kind) {
    case DefectKind::Blob:
      d.a = (0.06 + 0.07 * u(rng)) * S;
      d.b = (0.06 + 0.07 * u(rng)) * S;
      d.angle = u(rng) * std::numbers::pi;
      break;
    case DefectKind::Scratch:
      d.a = (0.15 + 0.15 * u(rng)) * S;
      d.b = std::max(1.0, 0.015 * S);
      d.angle = u(rng) * std::numbers::pi;
      break;
    case DefectKind::Occlusion:
      d.a = (0.05 + 0.05 * u(rng)) * S;
      d.b = (0.05 + 0.05 * u(rng)) * S;
      d.angle = 0.0;
      break;
  }
  return d;
}

ImageSample synth_render(const SynthConfig& cfg, std::uint64_t dataset_seed, std::uint64_t sample_seed,
                         const DefectSpec* defect) {
  const int S = cfg.image_size;
  const TextureStyle style = dataset_style(cfg, dataset_seed);
  Rng rng(mix_seed(sample_seed, 0x7e7));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double phase = u(rng) * 2.0 * std::numbers::pi;
  const double angle = style.angle + (u(rng) - 0.5) * (8.0 * std::numbers::pi / 180.0);

  std::vector<double> noise(std::size_t(S) * S), smooth(noise.size());
  for (double& v : noise) v = gauss(rng);
  const double sigma = 1.5 * S / 128.0;
  blur_plane(noise.data(), S, S, gaussian_taps(2 * int(std::ceil(3 * sigma)) + 1, sigma), smooth.data());
  double var = 0;
  for (double v : smooth) var += v * v;
  const double inv_std = 1.0 / std::sqrt(var / double(smooth.size()) + 1e-12);

  ImageSample s;
  s.pixels = Image(S, S);
  s.mask = Mask(S, S);
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const double g = 0.5 + 0.25 * std::sin(2.0 * std::numbers::pi * (x * ca + y * sa) / style.period + phase) +
                       0.08 * smooth[std::size_t(y) * S + x] * inv_std;
      const double level = std::clamp(g, 0.0, 1.0);
      const bool hit = defect && inside(*defect, y + 0.5, x + 0.5);
      for (int c = 0; c < 3; ++c) {
        double v = level * style.tint[c];
        if (hit) v = v > 0.5 ? v - cfg.defect_contrast : v + cfg.defect_contrast;
        s.pixels.at(y, x, c) = float(std::clamp(v, 0.0, 1.0));
      }
      if (hit) s.mask->at(y, x) = 1;
    }
  if (defect) {
    s.label = Label::Anomalous;
    s.anomaly_type = defect_name(defect->kind);
  }
  return s;
}

DatasetSplit synth_generate(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  DatasetSplit split;
  split.category = cfg.category;
  const DefectKind kinds[3] = {DefectKind::Blob, DefectKind::Occlusion, DefectKind::Scratch};
  char id[96];
  auto make = [&](std::uint64_t stream, int i, bool anomalous, const char* part) {
    const std::uint64_t sample_seed = mix_seed(seed, stream * 1000003ull + std::uint64_t(i));
    ImageSample s;
    if (anomalous) {
      const DefectSpec d = synth_random_defect(cfg, kinds[i % 3], sample_seed);
      s = synth_render(cfg, seed, sample_seed, &d);
    } else {
      s = synth_render(cfg, seed, sample_seed, nullptr);
    }
    std::snprintf(id, sizeof id, "%s/%s/%03d", part, anomalous ? s.anomaly_type->c_str() : "good", i);
    s.source_id = id;
    return s;
  };
  for (int i = 0; i < cfg.n_train_normal; ++i) split.train_normal.push_back(make(1, i, false, "train"));
  for (int i = 0; i < cfg.n_train_anomalous; ++i) split.train_anomalous.push_back(make(2, i, true, "train"));
  for (int i = 0; i < cfg.n_test_normal; ++i) split.test.push_back(make(3, i, false, "test"));
  for (int i = 0; i < cfg.n_test_anomalous; ++i) split.test.push_back(make(4, i, true, "test"));
  return split;
}

}  // namespace apc
