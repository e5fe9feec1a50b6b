#include "apc/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>

#include "apc/container.hpp"
#include "apc/error.hpp"

namespace apc {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

namespace {

std::string skip_name(SkipMode m) { return m == SkipMode::TwoSkips ? "unet2" : "unet4"; }

SkipMode parse_skip(const std::string& s) {
  if (s == "unet2" || s == "2") return SkipMode::TwoSkips;
  if (s == "unet4" || s == "4") return SkipMode::FourSkips;
  throw ConfigError("skip_mode must be unet2 or unet4, got '" + s + "'");
}

PixelMode parse_pixel_mode(const std::string& s) {
  if (s == "histogram") return PixelMode::Histogram;
  if (s == "exact") return PixelMode::Exact;
  throw ConfigError("pixel_mode must be histogram or exact, got '" + s + "'");
}

template <typename T>
void read_into(const json& v, const std::string& key, T& out) {
  try {
    out = v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type: " + v.dump());
  }
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("file not found: '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace

json RunConfig::to_json() const {
  return {{"dataset", dataset},
          {"categories", categories},
          {"image_size", image_size},
          {"synth_image_size", synth.image_size},
          {"synth_train_normal", synth.n_train_normal},
          {"synth_train_anomalous", synth.n_train_anomalous},
          {"synth_test_normal", synth.n_test_normal},
          {"synth_test_anomalous", synth.n_test_anomalous},
          {"synth_contrast", synth.defect_contrast},
          {"synth_category", synth.category},
          {"preset", preset},
          {"weights", weights},
          {"imagenet_weights", imagenet_weights},
          {"mocov3_weights", mocov3_weights},
          {"skip_mode", skip_name(skip_mode)},
          {"tasks", tasks.str()},
          {"cutpaste", cutpaste},
          {"basic_augmentation", basic_augmentation},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"weight_decay", weight_decay},
          {"k_total", k_total},
          {"neighborhood", neighborhood},
          {"coreset_ratio", coreset_ratio},
          {"sigma", sigma},
          {"pixel_mode", pixel_mode == PixelMode::Histogram ? "histogram" : "exact"},
          {"seed", seed},
          {"output_dir", output_dir}};
}

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  RunConfig c;
  std::string text;
  const std::map<std::string, std::function<void(const json&, const std::string&)>> setters{
      {"dataset", [&](const json& v, const std::string& k) { read_into(v, k, c.dataset); }},
      {"categories", [&](const json& v, const std::string& k) { read_into(v, k, c.categories); }},
      {"image_size", [&](const json& v, const std::string& k) { read_into(v, k, c.image_size); }},
      {"synth_image_size", [&](const json& v, const std::string& k) { read_into(v, k, c.synth.image_size); }},
      {"synth_train_normal", [&](const json& v, const std::string& k) { read_into(v, k, c.synth.n_train_normal); }},
      {"synth_train_anomalous", [&](const json& v, const std::string& k) { read_into(v, k, c.synth.n_train_anomalous); }},
      {"synth_test_normal", [&](const json& v, const std::string& k) { read_into(v, k, c.synth.n_test_normal); }},
      {"synth_test_anomalous", [&](const json& v, const std::string& k) { read_into(v, k, c.synth.n_test_anomalous); }},
      {"synth_contrast", [&](const json& v, const std::string& k) { read_into(v, k, c.synth.defect_contrast); }},
      {"synth_category", [&](const json& v, const std::string& k) { read_into(v, k, c.synth.category); }},
      {"preset", [&](const json& v, const std::string& k) { read_into(v, k, c.preset); }},
      {"weights", [&](const json& v, const std::string& k) { read_into(v, k, c.weights); }},
      {"imagenet_weights", [&](const json& v, const std::string& k) { read_into(v, k, c.imagenet_weights); }},
      {"mocov3_weights", [&](const json& v, const std::string& k) { read_into(v, k, c.mocov3_weights); }},
      {"skip_mode", [&](const json& v, const std::string& k) { read_into(v, k, text); c.skip_mode = parse_skip(text); }},
      {"tasks", [&](const json& v, const std::string& k) { read_into(v, k, text); c.tasks = TaskMask::parse(text); }},
      {"cutpaste", [&](const json& v, const std::string& k) { read_into(v, k, c.cutpaste); }},
      {"basic_augmentation", [&](const json& v, const std::string& k) { read_into(v, k, c.basic_augmentation); }},
      {"epochs", [&](const json& v, const std::string& k) { read_into(v, k, c.epochs); }},
      {"batch_size", [&](const json& v, const std::string& k) { read_into(v, k, c.batch_size); }},
      {"learning_rate", [&](const json& v, const std::string& k) { read_into(v, k, c.learning_rate); }},
      {"weight_decay", [&](const json& v, const std::string& k) { read_into(v, k, c.weight_decay); }},
      {"k_total", [&](const json& v, const std::string& k) { read_into(v, k, c.k_total); }},
      {"neighborhood", [&](const json& v, const std::string& k) { read_into(v, k, c.neighborhood); }},
      {"coreset_ratio", [&](const json& v, const std::string& k) { read_into(v, k, c.coreset_ratio); }},
      {"sigma", [&](const json& v, const std::string& k) { read_into(v, k, c.sigma); }},
      {"pixel_mode", [&](const json& v, const std::string& k) { read_into(v, k, text); c.pixel_mode = parse_pixel_mode(text); }},
      {"seed", [&](const json& v, const std::string& k) { read_into(v, k, c.seed); }},
      {"output_dir", [&](const json& v, const std::string& k) { read_into(v, k, c.output_dir); }},
  };
  for (const auto& [key, value] : j.items()) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(value, key);
  }
  c.validate();
  return c;
}

std::string RunConfig::hash() const {
  json j = to_json();
  j.erase("output_dir");
  Fnv1a h;
  const std::string s = j.dump();
  h.update(s.data(), s.size());
  return h.hex();
}

void RunConfig::validate() const {
  if (dataset.empty()) throw ConfigError("dataset must be a path or 'synthetic'");
  if (synthetic()) synth.validate();
  if (image_size < 32 || image_size % 32 != 0) throw ConfigError("image_size must be a positive multiple of 32");
  BackboneConfig::from_preset(preset).validate();
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 2 || batch_size % 2 != 0) throw ConfigError("batch_size must be even and >= 2");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  if (k_total < 0) throw ConfigError("k_total must be >= 0");
  if (neighborhood < 1 || neighborhood % 2 == 0) throw ConfigError("neighborhood must be odd and >= 1");
  if (!(coreset_ratio > 0 && coreset_ratio <= 1)) throw ConfigError("coreset_ratio must lie in (0, 1]");
  if (sigma < 0) throw ConfigError("sigma must be >= 0");
  augmentation().validate();
}

NetworkConfig RunConfig::network() const {
  NetworkConfig n;
  n.backbone = BackboneConfig::from_preset(preset);
  if (!weights.empty()) {
    n.backbone.init_mode = InitMode::ExternalWeights;
    n.backbone.weights_path = weights;
  }
  n.skip_mode = skip_mode;
  return n;
}

TrainConfig RunConfig::train() const {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.learning_rate = learning_rate;
  t.weight_decay = weight_decay;
  t.seed = seed;
  t.tasks = tasks;
  return t;
}

AugmentationConfig RunConfig::augmentation() const {
  AugmentationConfig a;
  a.cutpaste_enabled = cutpaste;
  if (!basic_augmentation) a.basic_ops.clear();
  a.rng_seed = seed;
  return a;
}

RunConfig load_run_config(const fs::path& path) { return RunConfig::from_json(read_json(path)); }

// ---------------------------------------------------------------------------
// Data and artifacts

CategoryPaths category_paths(const RunConfig& cfg, const std::string& category) {
  CategoryPaths p;
  p.dir = fs::path(cfg.output_dir) / category;
  p.checkpoint = p.dir / "checkpoint.apcw";
  p.history = p.dir / "history.json";
  p.bank = p.dir / "bank.apcb";
  p.maps = p.dir / "maps";
  p.manifest = p.dir / "scores.json";
  p.overlays = p.dir / "overlays";
  return p;
}

std::vector<std::string> resolve_categories(const RunConfig& cfg) {
  if (cfg.synthetic()) return {cfg.synth.category};
  const fs::path root(cfg.dataset);
  if (!fs::is_directory(root)) throw NotFoundError("dataset not found: '" + root.string() + "'");
  if (!cfg.categories.empty()) return cfg.categories;
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::is_directory(e.path() / "train")) out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw NotFoundError("no categories (directories with a train/ folder) under '" + root.string() + "'");
  return out;
}

DatasetSplit prepare_split(const RunConfig& cfg, const std::string& category) {
  DatasetSplit split;
  if (cfg.synthetic()) {
    split = synth_generate(cfg.synth, cfg.seed);
  } else {
    LoadOptions opts;
    opts.image_size = cfg.image_size;
    split = load_dataset(fs::path(cfg.dataset), category, opts);
  }
  if (cfg.k_total == 0) {
    split.train_anomalous.clear();
  } else if (split.train_anomalous.empty()) {
    holdout_test_anomalies(split, cfg.k_total, cfg.seed);
  } else {
    split.train_anomalous = sample_anomalous_subset(split, cfg.k_total, cfg.seed);
  }
  return split;
}

std::unique_ptr<ApcNetwork<float>> make_network(const RunConfig& cfg) {
  auto net = std::make_unique<ApcNetwork<float>>(cfg.network(), mix_seed(cfg.seed, 0x6e6574));
  if (!cfg.weights.empty()) load_weights(net->encoder(), fs::path(cfg.weights));
  return net;
}

void save_map(const fs::path& path, const AnomalyResult& r, const json& meta) {
  Container c;
  c.meta = meta;
  c.meta["image_score"] = r.image_score;
  NamedArray a{"map", {int(r.map.rows()), int(r.map.cols())}, {}};
  a.data.assign(r.map.data(), r.map.data() + r.map.size());
  c.arrays.push_back(std::move(a));
  write_container(path, kMapMagic, c);
}

AnomalyResult load_map(const fs::path& path) {
  const Container c = read_container(path, kMapMagic);
  const NamedArray& a = c.at("map");
  if (a.shape.size() != 2) throw IntegrityError(path.string() + ": map must be 2-D");
  AnomalyResult r;
  r.map = Eigen::Map<const GridArray<float>>(a.data.data(), a.shape[0], a.shape[1]);
  r.image_score = c.meta.value("image_score", 0.0);
  return r;
}

Image overlay(const Image& img, const GridArray<float>& map) {
  if (img.height != map.rows() || img.width != map.cols()) throw ShapeError("overlay: map and image sizes differ");
  const float lo = map.minCoeff(), hi = map.maxCoeff();
  const float scale = hi > lo ? 1.f / (hi - lo) : 0.f;
  Image out(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const float t = (map(y, x) - lo) * scale;
      const float color[3] = {t, 0.f, 1.f - t};
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = 0.5f * img.at(y, x, c) + 0.5f * color[c];
    }
  return out;
}

// ---------------------------------------------------------------------------
// Commands

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string map_file_name(const std::string& id) {
  std::string s = id;
  if (const auto dot = s.rfind('.'); dot != std::string::npos && s.find('/', dot) == std::string::npos) s.resize(dot);
  std::replace(s.begin(), s.end(), '/', '_');
  return s + ".apcm";
}

json loss_json(const LossBreakdown& l) {
  return {{"l_cls", l.l_cls}, {"l_segm", l.l_segm}, {"l_recon", l.l_recon}, {"total", l.total}};
}

void load_checkpoint(ApcNetwork<float>& net, const fs::path& path) {
  if (!fs::exists(path))
    throw NotFoundError("checkpoint not found: '" + path.string() + "' (run 'apc train' first)");
  load_network(net, path);
}

std::vector<ImageSample> images_in(const fs::path& dir, int size) {
  if (!fs::is_directory(dir)) throw NotFoundError("image directory not found: '" + dir.string() + "'");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return char(std::tolower(ch)); });
    if (e.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".jpeg")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<ImageSample> out;
  for (const auto& f : files) {
    ImageSample s;
    s.pixels = fit_square(read_image(f), size);
    s.source_id = f.filename().string();
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

void cmd_train(const RunConfig& cfg, std::ostream& log) {
  for (const auto& category : resolve_categories(cfg)) {
    const auto t0 = Clock::now();
    const DatasetSplit split = prepare_split(cfg, category);
    const auto paths = category_paths(cfg, category);
    fs::create_directories(paths.dir);
    auto net_ptr = make_network(cfg);
    auto& net = *net_ptr;
    TrainHistory history;
    if (cfg.tasks.any() && cfg.epochs > 0) {
      history = finetune(net, split, cfg.train(), cfg.augmentation(), [&](int epoch, const LossBreakdown& l) {
        log << category << " epoch " << epoch + 1 << "/" << cfg.epochs << " total " << l.total << " (cls " << l.l_cls
            << ", segm " << l.l_segm << ", recon " << l.l_recon << ")\n";
        log.flush();
      });
    } else {
      log << category << ": no auxiliary task active, keeping the initial encoder\n";
    }
    save_network(net, paths.checkpoint, {{"config_hash", cfg.hash()}, {"category", category}});
    json epochs = json::array();
    for (const auto& e : history.epochs) epochs.push_back(loss_json(e));
    std::vector<std::string> anomalies;
    for (const auto& s : split.train_anomalous) anomalies.push_back(s.source_id);
    write_json(paths.history, {{"config_hash", cfg.hash()},
                               {"category", category},
                               {"tasks", cfg.tasks.str()},
                               {"epochs", epochs},
                               {"train_anomalies", anomalies},
                               {"feature_signature", feature_signature(net)}});
    log << category << ": checkpoint " << paths.checkpoint.string() << " (" << seconds_since(t0) << " s)\n";
  }
}

void cmd_build_bank(const RunConfig& cfg, const std::optional<fs::path>& checkpoint, std::ostream& log) {
  for (const auto& category : resolve_categories(cfg)) {
    const auto t0 = Clock::now();
    const auto paths = category_paths(cfg, category);
    auto net_ptr = make_network(cfg);
    auto& net = *net_ptr;
    load_checkpoint(net, checkpoint.value_or(paths.checkpoint));
    const DatasetSplit split = prepare_split(cfg, category);
    const auto sets = extract_patches(net, std::span<const ImageSample>(split.train_normal), cfg.neighborhood);
    const MemoryBank bank = build_bank(sets, cfg.coreset_ratio, cfg.seed);
    save_bank(bank, paths.bank);
    log << category << ": bank " << bank.size() << " x " << bank.dim() << " from " << bank.selected_from
        << " patches (" << seconds_since(t0) << " s)\n";
  }
}

void cmd_score(const RunConfig& cfg, const ScoreOptions& opts, std::ostream& log) {
  for (const auto& category : resolve_categories(cfg)) {
    const auto t0 = Clock::now();
    const auto paths = category_paths(cfg, category);
    auto net_ptr = make_network(cfg);
    auto& net = *net_ptr;
    load_checkpoint(net, opts.checkpoint.value_or(paths.checkpoint));
    const fs::path bank_path = opts.bank.value_or(paths.bank);
    if (!fs::exists(bank_path)) throw NotFoundError("bank not found: '" + bank_path.string() + "' (run 'apc build-bank')");
    const MemoryBank bank = load_bank(bank_path);

    std::vector<ImageSample> samples;
    if (opts.images) {
      samples = images_in(*opts.images, cfg.synthetic() ? cfg.synth.image_size : cfg.image_size);
    } else {
      samples = prepare_split(cfg, category).test;
    }
    fs::create_directories(paths.maps);
    if (opts.overlays) fs::create_directories(paths.overlays);
    json results = json::array();
    const std::size_t chunk = 8;
    for (std::size_t start = 0; start < samples.size(); start += chunk) {
      const auto part = std::span<const ImageSample>(samples).subspan(start, std::min(chunk, samples.size() - start));
      const auto sets = extract_patches(net, part, cfg.neighborhood);
      for (std::size_t i = 0; i < part.size(); ++i) {
        const ImageSample& s = part[i];
        const auto grid = score_patches(bank, sets[i], opts.allow_foreign_bank);
        const AnomalyResult r = assemble_map(grid, sets[i].geometry, s.pixels.height, s.pixels.width, cfg.sigma);
        const std::string file = map_file_name(s.source_id);
        save_map(paths.maps / file, r, {{"source_id", s.source_id}, {"config_hash", cfg.hash()}});
        if (opts.overlays) write_png(paths.overlays / (file.substr(0, file.size() - 5) + ".png"), overlay(s.pixels, r.map));
        const int label = opts.images ? -1 : int(s.anomalous());
        results.push_back({{"id", s.source_id},
                           {"image_score", r.image_score},
                           {"label", label},
                           {"anomaly_type", s.anomaly_type.value_or(label == 0 ? "good" : "")},
                           {"map", "maps/" + file}});
      }
    }
    write_json(paths.manifest, {{"config_hash", cfg.hash()},
                                {"category", category},
                                {"feature_signature", bank.feature_signature},
                                {"results", results}});
    log << category << ": scored " << samples.size() << " images (" << seconds_since(t0) << " s)\n";
  }
}

MetricsReport cmd_eval(const RunConfig& cfg, bool force, std::ostream& log) {
  std::map<std::string, CategoryMetrics> table;
  const std::string hash = cfg.hash();
  for (const auto& category : resolve_categories(cfg)) {
    const auto paths = category_paths(cfg, category);
    if (!fs::exists(paths.manifest))
      throw NotFoundError("score manifest not found: '" + paths.manifest.string() + "' (run 'apc score')");
    const json manifest = read_json(paths.manifest);
    const std::string found = manifest.value("config_hash", std::string());
    if (found != hash && !force)
      throw IncompatibleError("manifest " + paths.manifest.string() + " was produced with config " + found +
                              ", current config is " + hash + " (use --force to evaluate anyway)");

    // Ground truth comes from the dataset itself, matched by id.
    std::map<std::string, const ImageSample*> truth;
    const DatasetSplit split = prepare_split(cfg, category);
    for (const auto& s : split.test) truth[s.source_id] = &s;

    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    std::vector<std::pair<fs::path, const ImageSample*>> pixel_inputs;
    for (const auto& rec : manifest.at("results")) {
      const std::string id = rec.at("id").get<std::string>();
      const auto it = truth.find(id);
      if (it == truth.end()) throw IntegrityError("scored image '" + id + "' is not part of the test split");
      scores.push_back(rec.at("image_score").get<double>());
      labels.push_back(std::uint8_t(it->second->anomalous()));
      pixel_inputs.emplace_back(paths.dir / rec.at("map").get<std::string>(), it->second);
    }
    CategoryMetrics m;
    m.auroc_im = auroc(scores, labels);
    const auto f1 = f1_max(scores, labels);
    m.f1_im = f1.f1;
    m.threshold_im = f1.threshold;
    const auto px = pixel_metrics(
        [&](std::size_t k) {
          PixelPair p;
          p.map = load_map(pixel_inputs[k].first).map;
          p.mask = pixel_inputs[k].second->mask;
          p.id = pixel_inputs[k].second->source_id;
          return p;
        },
        pixel_inputs.size(), cfg.pixel_mode);
    m.auroc_px = px.auroc_px;
    m.f1_px = px.f1_px;
    m.threshold_px = px.threshold_px;
    table[category] = m;
    log << category << ": AUROC_im " << m.auroc_im << "  F1_im " << m.f1_im << "  AUROC_px " << m.auroc_px
        << "  F1_px " << m.f1_px << "\n";
  }
  const std::string run_id = "run-" + hash.substr(0, 8) + "-seed" + std::to_string(cfg.seed);
  MetricsReport report = make_report(std::move(table), run_id, hash);
  write_report(report, fs::path(cfg.output_dir) / "report.json");
  return report;
}

MetricsReport run_pipeline(const RunConfig& cfg, std::ostream& log) {
  cmd_train(cfg, log);
  cmd_build_bank(cfg, std::nullopt, log);
  cmd_score(cfg, {}, log);
  return cmd_eval(cfg, false, log);
}

// ---------------------------------------------------------------------------
// Ablation

namespace {

struct AblationRow {
  std::string label;
  RunConfig cfg;
  std::string skipped;  // reason, when the row cannot run
};

std::string slug(const std::string& label) {
  std::string s;
  for (char ch : label) s += std::isalnum(static_cast<unsigned char>(ch)) ? char(std::tolower(ch)) : '_';
  return s;
}

}  // namespace

json cmd_ablate(const RunConfig& base, const std::string& axis, std::ostream& log) {
  std::vector<AblationRow> rows;
  auto row = [&](std::string label, auto&& edit) {
    RunConfig c = base;
    edit(c);
    rows.push_back({std::move(label), std::move(c), {}});
  };
  if (axis == "tasks") {
    row("none", [](RunConfig& c) { c.tasks = TaskMask::none(); });
    row("cls", [](RunConfig& c) { c.tasks = {true, false, false}; });
    row("cls+segm", [](RunConfig& c) { c.tasks = {true, true, false}; });
    row("cls+segm+recon", [](RunConfig& c) { c.tasks = {true, true, true}; });
  } else if (axis == "skips") {
    row("U-Net2", [](RunConfig& c) { c.skip_mode = SkipMode::TwoSkips; });
    row("U-Net4", [](RunConfig& c) { c.skip_mode = SkipMode::FourSkips; });
  } else if (axis == "init") {
    row("random", [](RunConfig& c) { c.weights.clear(); });
    row("ImageNet", [](RunConfig& c) { c.weights = c.imagenet_weights; });
    row("MoCo v3", [](RunConfig& c) { c.weights = c.mocov3_weights; });
    for (std::size_t i = 1; i < rows.size(); ++i)
      if (rows[i].cfg.weights.empty())
        rows[i].skipped = "no " + rows[i].label + " encoder weights configured (" +
                          (i == 1 ? "imagenet_weights" : "mocov3_weights") + ")";
  } else if (axis == "augmentation") {
    row("Basic", [](RunConfig& c) { c.basic_augmentation = true; c.cutpaste = false; });
    row("Basic+CutPaste", [](RunConfig& c) { c.basic_augmentation = true; c.cutpaste = true; });
  } else {
    throw ConfigError("unknown ablation axis '" + axis + "' (expected tasks, skips, init or augmentation)");
  }

  json table = json::array();
  for (auto& r : rows) {
    r.cfg.output_dir = (fs::path(base.output_dir) / ("ablate_" + axis) / slug(r.label)).string();
    json entry = {{"label", r.label}, {"config_hash", r.cfg.hash()}};
    if (!r.skipped.empty()) {
      entry["status"] = "skipped";
      entry["reason"] = r.skipped;
      log << "ablate " << axis << " / " << r.label << ": skipped, " << r.skipped << "\n";
    } else {
      log << "ablate " << axis << " / " << r.label << "\n";
      const MetricsReport rep = run_pipeline(r.cfg, log);
      entry["status"] = "ok";
      entry["auroc_im"] = rep.average.auroc_im;
      entry["f1_im"] = rep.average.f1_im;
      entry["auroc_px"] = rep.average.auroc_px;
      entry["f1_px"] = rep.average.f1_px;
    }
    table.push_back(entry);
  }
  json out = {{"axis", axis},
              {"seed", base.seed},
              {"dataset", base.dataset},
              {"config_hash", base.hash()},
              {"rows", table}};
  write_json(fs::path(base.output_dir) / ("ablation_" + axis + ".json"), out);
  return out;
}

void cmd_synth(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  DatasetSplit split = synth_generate(cfg.synth, cfg.seed);
  save_dataset(split, out);
  log << "wrote " << split.train_normal.size() + split.train_anomalous.size() + split.test.size() << " images to "
      << (out / cfg.synth.category).string() << "\n";
}

}  // namespace apc
