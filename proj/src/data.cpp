#include "apc/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <set>

#include "apc/error.hpp"
#include "apc/resample.hpp"

namespace apc {

namespace fs = std::filesystem;

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return char(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> list_images(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> list_subdirs(const fs::path& dir) {
  std::vector<std::string> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

ImageSample load_sample(const fs::path& base, const fs::path& file, const std::string& type, bool anomalous,
                        const LoadOptions& opts) {
  ImageSample s;
  s.pixels = fit_square(read_image(file), opts.image_size);
  s.source_id = fs::relative(file, base).generic_string();
  if (anomalous) {
    const fs::path mask_path = base / "ground_truth" / type / (file.stem().string() + "_mask.png");
    if (!fs::exists(mask_path))
      throw IntegrityError("anomalous image '" + file.string() + "' has no mask (expected '" + mask_path.string() + "')");
    s.mask = fit_square(read_mask(mask_path), opts.image_size);
    s.label = Label::Anomalous;
    s.anomaly_type = type;
    if (s.mask->count_nonzero() == 0) throw IntegrityError("mask for '" + file.string() + "' is empty");
  } else {
    s.mask = Mask(opts.image_size, opts.image_size);
  }
  return s;
}

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng); }
int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (int i = int(v.size()) - 1; i > 0; --i) std::swap(v[std::size_t(i)], v[std::size_t(uniform_int(rng, 0, i))]);
}

}  // namespace

DatasetSplit load_dataset(const fs::path& root, const std::string& category, const LoadOptions& opts) {
  const fs::path base = root / category;
  if (!fs::is_directory(base)) throw NotFoundError("dataset not found: '" + base.string() + "'");
  const fs::path good = base / "train" / "good";
  const auto train_files = list_images(good);
  if (train_files.empty()) throw NotFoundError("dataset not found: no readable images in '" + good.string() + "'");

  DatasetSplit split;
  split.category = category;
  for (const auto& f : train_files) split.train_normal.push_back(load_sample(base, f, "good", false, opts));
  for (const auto& type : list_subdirs(base / "train")) {
    if (type == "good") continue;
    for (const auto& f : list_images(base / "train" / type))
      split.train_anomalous.push_back(load_sample(base, f, type, true, opts));
  }
  for (const auto& type : list_subdirs(base / "test"))
    for (const auto& f : list_images(base / "test" / type))
      split.test.push_back(load_sample(base, f, type, type != "good", opts));
  return split;
}

void save_dataset(const DatasetSplit& split, const fs::path& root) {
  const fs::path base = root / split.category;
  char name[64];
  auto type_of = [](const ImageSample& s) { return s.anomaly_type.value_or("defect"); };
  for (std::size_t i = 0; i < split.train_normal.size(); ++i) {
    std::snprintf(name, sizeof name, "%03zu.png", i);
    write_png(base / "train" / "good" / name, split.train_normal[i].pixels);
  }
  for (std::size_t i = 0; i < split.train_anomalous.size(); ++i) {
    const auto& s = split.train_anomalous[i];
    std::snprintf(name, sizeof name, "train_%03zu", i);
    write_png(base / "train" / type_of(s) / (std::string(name) + ".png"), s.pixels);
    write_mask_png(base / "ground_truth" / type_of(s) / (std::string(name) + "_mask.png"), *s.mask);
  }
  for (std::size_t i = 0; i < split.test.size(); ++i) {
    const auto& s = split.test[i];
    std::snprintf(name, sizeof name, "%03zu", i);
    if (!s.anomalous()) {
      write_png(base / "test" / "good" / (std::string(name) + ".png"), s.pixels);
      continue;
    }
    write_png(base / "test" / type_of(s) / (std::string(name) + ".png"), s.pixels);
    write_mask_png(base / "ground_truth" / type_of(s) / (std::string(name) + "_mask.png"), *s.mask);
  }
}

std::vector<int> allocate_evenly(int k_total, int types) {
  if (types <= 0) return {};
  std::vector<int> out(std::size_t(types), k_total / types);
  for (int i = 0; i < k_total % types; ++i) ++out[std::size_t(i)];
  return out;
}

std::vector<ImageSample> sample_anomalous_subset(const DatasetSplit& split, int k_total, std::uint64_t seed) {
  if (k_total < 0) throw ConfigError("k_total must be nonnegative");
  if (k_total == 0) return {};
  std::map<std::string, std::vector<const ImageSample*>> by_type;
  if (!split.train_anomalous.empty()) {
    for (const auto& s : split.train_anomalous) by_type[s.anomaly_type.value_or("anomalous")].push_back(&s);
  } else {
    for (const auto& s : split.test)
      if (s.anomalous()) by_type[s.anomaly_type.value_or("anomalous")].push_back(&s);
  }
  if (by_type.empty()) throw EmptyPoolError("no anomalous samples available to draw " + std::to_string(k_total) + " from");

  Rng rng(seed);
  const auto alloc = allocate_evenly(k_total, int(by_type.size()));
  std::vector<ImageSample> out;
  std::size_t t = 0;
  for (auto& [type, pool] : by_type) {
    const int need = alloc[t++];
    std::vector<int> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);
    shuffle(order, rng);
    for (int i = 0; i < need; ++i) {
      const int idx = i < int(order.size()) ? order[std::size_t(i)] : uniform_int(rng, 0, int(pool.size()) - 1);
      out.push_back(*pool[std::size_t(idx)]);
    }
  }
  return out;
}

void holdout_test_anomalies(DatasetSplit& split, int k_total, std::uint64_t seed) {
  DatasetSplit probe;
  probe.test = split.test;
  auto drawn = sample_anomalous_subset(probe, k_total, seed);
  std::set<std::string> taken;
  for (const auto& s : drawn) taken.insert(s.source_id);
  std::erase_if(split.test, [&](const ImageSample& s) { return s.anomalous() && taken.count(s.source_id); });
  for (auto& s : drawn) split.train_anomalous.push_back(std::move(s));
}

// ---------------------------------------------------------------------------

void AugmentationConfig::validate() const {
  if (!(saturation_low > 0) || saturation_low > saturation_high)
    throw ConfigError("saturation range must satisfy 0 < low <= high");
  if (std::abs(rotation_degrees) > 10.0) throw ConfigError("rotation magnitude must be <= 10 degrees");
  if (flip_probability < 0 || flip_probability > 1) throw ConfigError("flip probability must lie in [0,1]");
  if (brightness < 0 || brightness >= 1) throw ConfigError("brightness jitter must lie in [0,1)");
}

namespace {

void scale_saturation(const Image& src, int sy, int sx, double factor, Image& dst, int dy, int dx) {
  if (factor == 1.0) {
    for (int c = 0; c < 3; ++c) dst.at(dy, dx, c) = src.at(sy, sx, c);
    return;
  }
  Hsv hsv = rgb_to_hsv(src.at(sy, sx, 0), src.at(sy, sx, 1), src.at(sy, sx, 2));
  hsv.s = std::min(1.f, float(hsv.s * factor));
  float r, g, b;
  hsv_to_rgb(hsv, r, g, b);
  dst.at(dy, dx, 0) = std::clamp(r, 0.f, 1.f);
  dst.at(dy, dx, 1) = std::clamp(g, 0.f, 1.f);
  dst.at(dy, dx, 2) = std::clamp(b, 0.f, 1.f);
}

struct Box {
  int y0, y1, x0, x1;  // inclusive
};

Box mask_box(const Mask& m) {
  Box b{m.height, -1, m.width, -1};
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(y, x)) {
        b.y0 = std::min(b.y0, y); b.y1 = std::max(b.y1, y);
        b.x0 = std::min(b.x0, x); b.x1 = std::max(b.x1, x);
      }
  return b;
}

Eigen::Index inbounds_count(const Mask& m, int dy, int dx) {
  Eigen::Index n = 0;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(y, x) && y + dy >= 0 && y + dy < m.height && x + dx >= 0 && x + dx < m.width) ++n;
  return n;
}

}  // namespace

ImageSample cutpaste_at(const ImageSample& target, const ImageSample& source, int dy, int dx, double saturation_factor) {
  if (target.label != Label::Normal) throw ConfigError("cutpaste target must be a normal sample");
  if (!source.mask || source.mask->count_nonzero() == 0) throw ConfigError("cutpaste source has no defect mask");
  if (source.pixels.height != target.pixels.height || source.pixels.width != target.pixels.width)
    throw ShapeError("cutpaste source and target differ in size");
  ImageSample out;
  out.pixels = target.pixels;
  out.label = Label::Anomalous;
  out.mask = Mask(target.pixels.height, target.pixels.width);
  out.source_id = target.source_id + "+cutpaste(" + source.source_id + ")";
  out.anomaly_type = source.anomaly_type;
  const Mask& sm = *source.mask;
  for (int y = 0; y < sm.height; ++y)
    for (int x = 0; x < sm.width; ++x) {
      if (!sm.at(y, x)) continue;
      const int ty = y + dy, tx = x + dx;
      if (ty < 0 || ty >= sm.height || tx < 0 || tx >= sm.width) continue;
      scale_saturation(source.pixels, y, x, saturation_factor, out.pixels, ty, tx);
      out.mask->at(ty, tx) = 1;
    }
  return out;
}

ImageSample cutpaste_augment(const ImageSample& target, const ImageSample& source, const AugmentationConfig& cfg, Rng& rng) {
  if (!source.mask || source.mask->count_nonzero() == 0) throw ConfigError("cutpaste source has no defect mask");
  const Mask& m = *source.mask;
  const Box box = mask_box(m);
  const int bh = box.y1 - box.y0 + 1, bw = box.x1 - box.x0 + 1;
  const Eigen::Index total = m.count_nonzero();
  int dy = 0, dx = 0;
  bool placed = false;
  for (int attempt = 0; attempt < 10 && !placed; ++attempt) {
    const int ty = uniform_int(rng, -(bh - 1), m.height - 1);
    const int tx = uniform_int(rng, -(bw - 1), m.width - 1);
    dy = ty - box.y0;
    dx = tx - box.x0;
    placed = 2 * inbounds_count(m, dy, dx) >= total;
  }
  if (!placed) {
    dy = (m.height - bh) / 2 - box.y0;
    dx = (m.width - bw) / 2 - box.x0;
  }
  const double factor = uniform(rng, cfg.saturation_low, cfg.saturation_high);
  return cutpaste_at(target, source, dy, dx, factor);
}

ImageSample basic_augment(const ImageSample& sample, const AugmentationConfig& cfg, Rng& rng) {
  ImageSample out = sample;
  const int h = out.pixels.height, w = out.pixels.width;
  for (BasicOp op : cfg.basic_ops) {
    switch (op) {
      case BasicOp::HorizontalFlip: {
        if (uniform(rng, 0, 1) >= cfg.flip_probability) break;
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w / 2; ++x) {
            for (int c = 0; c < 3; ++c) std::swap(out.pixels.at(y, x, c), out.pixels.at(y, w - 1 - x, c));
            if (out.mask) std::swap(out.mask->at(y, x), out.mask->at(y, w - 1 - x));
          }
        break;
      }
      case BasicOp::SmallRotation: {
        const double theta = uniform(rng, -cfg.rotation_degrees, cfg.rotation_degrees) * std::numbers::pi / 180.0;
        if (theta == 0.0) break;
        const double cs = std::cos(theta), sn = std::sin(theta);
        const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
        Image img(h, w);
        Mask msk(h, w);
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            const double sy = cs * (y - cy) - sn * (x - cx) + cy;
            const double sx = sn * (y - cy) + cs * (x - cx) + cx;
            const int y0 = int(std::floor(sy)), x0 = int(std::floor(sx));
            const double fy = sy - y0, fx = sx - x0;
            for (int c = 0; c < 3; ++c) {
              auto px = [&](int yy, int xx) { return out.pixels.at(reflect_index(yy, h), reflect_index(xx, w), c); };
              img.at(y, x, c) = float((1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
                                      fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1)));
            }
            if (out.mask) {
              const int ny = int(std::lround(sy)), nx = int(std::lround(sx));
              msk.at(y, x) = (ny >= 0 && ny < h && nx >= 0 && nx < w) ? out.mask->at(ny, nx) : 0;
            }
          }
        if (out.anomalous() && msk.count_nonzero() == 0) break;  // rotation would drop the defect
        out.pixels = std::move(img);
        if (out.mask) out.mask = std::move(msk);
        break;
      }
      case BasicOp::BrightnessJitter: {
        const float f = float(uniform(rng, 1.0 - cfg.brightness, 1.0 + cfg.brightness));
        out.pixels.data = (out.pixels.data * f).min(1.f).max(0.f);
        break;
      }
    }
  }
  return out;
}

std::vector<BatchPlan> balanced_epoch(int n_normal, int n_anomalous, int batch_size, bool synthesize_missing, Rng& rng) {
  if (batch_size < 2 || batch_size % 2 != 0) throw ConfigError("batch size must be even and >= 2");
  if (n_normal < 1) throw ConfigError("balanced sampling needs at least one normal sample");
  if (n_anomalous < 1 && !synthesize_missing)
    throw ConfigError("no anomalous samples and CutPaste disabled: cannot build balanced batches");
  const int half = batch_size / 2;
  std::vector<int> order(static_cast<std::size_t>(n_normal));
  for (int i = 0; i < n_normal; ++i) order[std::size_t(i)] = i;
  shuffle(order, rng);
  std::vector<BatchPlan> plans;
  for (int start = 0; start < n_normal; start += half) {
    BatchPlan p;
    const int end = std::min(n_normal, start + half);
    p.normal.assign(order.begin() + start, order.begin() + end);
    for (int i = start; i < end; ++i) p.anomalous.push_back(n_anomalous > 0 ? uniform_int(rng, 0, n_anomalous - 1) : -1);
    plans.push_back(std::move(p));
  }
  return plans;
}

namespace {

ImageSample random_patch_source(const ImageSample& normal, Rng& rng) {
  ImageSample src = normal;
  const int h = normal.pixels.height, w = normal.pixels.width;
  const int ph = std::max(2, int(h * uniform(rng, 0.1, 0.25))), pw = std::max(2, int(w * uniform(rng, 0.1, 0.25)));
  const int y0 = uniform_int(rng, 0, h - ph), x0 = uniform_int(rng, 0, w - pw);
  src.mask = Mask(h, w);
  for (int y = y0; y < y0 + ph; ++y)
    for (int x = x0; x < x0 + pw; ++x) src.mask->at(y, x) = 1;
  src.label = Label::Anomalous;
  src.anomaly_type = "synthetic-patch";
  return src;
}

}  // namespace

std::vector<ImageSample> materialize_batch(const BatchPlan& plan, const std::vector<ImageSample>& normal,
                                           const std::vector<ImageSample>& anomalous, const AugmentationConfig& cfg,
                                           Rng& rng) {
  std::vector<ImageSample> batch;
  batch.reserve(plan.normal.size() + plan.anomalous.size());
  for (int i : plan.normal) batch.push_back(basic_augment(normal[std::size_t(i)], cfg, rng));
  const int n_norm = int(normal.size());
  for (int a : plan.anomalous) {
    ImageSample s;
    if (a < 0) {
      if (!cfg.cutpaste_enabled) throw ConfigError("anomalous pool empty and CutPaste disabled");
      const ImageSample src = random_patch_source(normal[std::size_t(uniform_int(rng, 0, n_norm - 1))], rng);
      s = cutpaste_augment(normal[std::size_t(uniform_int(rng, 0, n_norm - 1))], src, cfg, rng);
    } else if (cfg.cutpaste_enabled && uniform(rng, 0, 1) < 0.5) {
      s = cutpaste_augment(normal[std::size_t(uniform_int(rng, 0, n_norm - 1))], anomalous[std::size_t(a)], cfg, rng);
    } else {
      s = anomalous[std::size_t(a)];
    }
    batch.push_back(basic_augment(s, cfg, rng));
  }
  return batch;
}

}  // namespace apc
