#include <doctest.h>

#include <fstream>
#include <sstream>

#include "apc/error.hpp"
#include "apc/pipeline.hpp"
#include "support.hpp"

using namespace apc;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

RunConfig tiny(const fs::path& out) {
  RunConfig c;
  c.synth.image_size = 64;
  c.synth.n_train_normal = 10;
  c.synth.n_train_anomalous = 3;
  c.synth.n_test_normal = 3;
  c.synth.n_test_anomalous = 3;
  c.k_total = 3;
  c.epochs = 1;
  c.seed = 7;
  c.output_dir = out.string();
  return c;
}

std::string bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

}  // namespace

TEST_CASE("run configuration") {
  RunConfig c;
  CHECK(c.epochs == 50);
  CHECK(c.k_total == 10);
  CHECK(c.coreset_ratio == 0.1);
  CHECK(c.neighborhood == 3);
  CHECK(c.sigma == 4.0);
  CHECK(c.tasks == TaskMask{});

  const auto back = RunConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.hash() == c.hash());

  RunConfig moved = c;
  moved.output_dir = "/elsewhere";
  CHECK(moved.hash() == c.hash());
  moved.seed = 1;
  CHECK(moved.hash() != c.hash());

  CHECK_THROWS_AS(RunConfig::from_json(json{{"epoch", 3}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(json{{"epochs", "three"}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(json{{"skip_mode", "unet3"}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(json{{"neighborhood", 4}}), ConfigError);
  CHECK(RunConfig::from_json(json{{"tasks", "cls"}, {"skip_mode", "unet4"}}).skip_mode == SkipMode::FourSkips);
}

TEST_CASE("missing dataset is reported with its path") {
  RunConfig c;
  c.dataset = "/no/such/dataset";
  try {
    resolve_categories(c);
    FAIL("expected NotFoundError");
  } catch (const NotFoundError& e) {
    CHECK(std::string(e.what()).find("/no/such/dataset") != std::string::npos);
  }
}

TEST_CASE("commands produce the documented artifacts") {
  test::TempDir dir("pipeline");
  std::ostringstream log;
  auto cfg = tiny(dir.path);
  const auto paths = category_paths(cfg, "synthetic");

  cmd_train(cfg, log);
  const json hist = read(paths.history);
  CHECK(hist["epochs"].size() == 1);
  CHECK(hist["config_hash"] == cfg.hash());

  SUBCASE("classification-only history has zero segmentation and reconstruction") {
    cfg.tasks = TaskMask{true, false, false};
    cfg.epochs = 2;
    cmd_train(cfg, log);
    const json h = read(paths.history);
    REQUIRE(h["epochs"].size() == 2);
    for (const auto& e : h["epochs"]) {
      CHECK(e["l_segm"] == 0.0);
      CHECK(e["l_recon"] == 0.0);
    }
  }

  SUBCASE("bank, scores and report") {
    cfg.coreset_ratio = 1.0;
    cmd_build_bank(cfg, std::nullopt, log);
    const auto bank = load_bank(paths.bank);
    CHECK(bank.size() == 10 * 4 * 4);  // 64 px images give a 4x4 grid
    const std::string first = bytes_of(paths.bank);
    cmd_build_bank(cfg, std::nullopt, log);
    CHECK(bytes_of(paths.bank) == first);

    cmd_score(cfg, {}, log);
    const json manifest = read(paths.manifest);
    CHECK(manifest["results"].size() == 6);
    for (const auto& r : manifest["results"]) {
      const auto m = load_map(paths.dir / r["map"].get<std::string>());
      CHECK(m.map.rows() == 64);
      CHECK(m.map.cols() == 64);
      CHECK(m.image_score == r["image_score"].get<double>());
    }

    const auto report = cmd_eval(cfg, false, log);
    CHECK(report.categories.count("synthetic") == 1);
    CHECK(fs::exists(fs::path(cfg.output_dir) / "report.json"));

    RunConfig changed = cfg;
    changed.sigma = 2.0;
    CHECK_THROWS_AS(cmd_eval(changed, false, log), IncompatibleError);
    CHECK_NOTHROW(cmd_eval(changed, true, log));
  }

  SUBCASE("training images score zero against a full bank") {
    cfg.coreset_ratio = 1.0;
    cmd_build_bank(cfg, std::nullopt, log);
    const auto split = prepare_split(cfg, "synthetic");
    test::TempDir imgs("train_images");
    for (int i = 0; i < 3; ++i) write_png(imgs / ("n" + std::to_string(i) + ".png"), split.train_normal[std::size_t(i)].pixels);
    ScoreOptions opts;
    opts.images = imgs.path;
    opts.overlays = true;
    cmd_score(cfg, opts, log);
    const json manifest = read(paths.manifest);
    REQUIRE(manifest["results"].size() == 3);
    // PNG quantizes pixels to 8 bits, so distances are small rather than exactly zero
    // (observed about 0.05).
    for (const auto& r : manifest["results"]) CHECK(r["image_score"].get<double>() < 0.1);
    CHECK(fs::exists(paths.overlays / "n0.png"));
  }

  SUBCASE("checkpoint from another backbone is incompatible") {
    RunConfig other = cfg;
    other.preset = "resnet50";
    CHECK_THROWS_AS(cmd_build_bank(other, paths.checkpoint, log), IncompatibleError);
  }
}

TEST_CASE("self-membership: a training image in memory scores zero") {
  auto cfg = tiny(fs::temp_directory_path());
  auto net = make_network(cfg);
  const auto split = prepare_split(cfg, "synthetic");
  const auto sets = extract_patches(*net, std::span<const ImageSample>(split.train_normal), 3);
  const auto bank = build_bank(sets, 1.0, 0);
  for (int i = 0; i < 3; ++i) {
    const auto r = assemble_map(score_patches(bank, sets[std::size_t(i)]), sets[std::size_t(i)].geometry, 64, 64);
    CHECK(r.image_score == 0.0);
  }
}

TEST_CASE("ablation axes") {
  RunConfig c;
  std::ostringstream log;
  CHECK_THROWS_AS(cmd_ablate(c, "depth", log), ConfigError);
  test::TempDir dir("ablate");
  c = tiny(dir.path);
  const json j = cmd_ablate(c, "init", log);
  REQUIRE(j["rows"].size() == 3);
  CHECK(j["rows"][0]["label"] == "random");
  CHECK(j["rows"][0]["status"] == "ok");
  CHECK(j["rows"][1]["status"] == "skipped");
  CHECK(j["rows"][2]["label"] == "MoCo v3");
  CHECK(j["seed"] == 7);
}

TEST_CASE("overlay is blue for low and red for high scores") {
  Image img(2, 2, 0.0f);
  GridArray<float> m(2, 2);
  m << 0, 1, 0.5, 0.25;
  const auto o = overlay(img, m);
  CHECK(o.at(0, 0, 2) == 0.5f);
  CHECK(o.at(0, 0, 0) == 0.0f);
  CHECK(o.at(0, 1, 0) == 0.5f);
  CHECK(o.at(0, 1, 2) == 0.0f);
}

TEST_CASE("synth writes a dataset the pipeline can read back") {
  test::TempDir dir("synth");
  auto cfg = tiny(dir / "out");
  std::ostringstream log;
  cmd_synth(cfg, dir / "data", log);
  CHECK(fs::is_directory(dir / "data" / "synthetic" / "train" / "good"));
  RunConfig disk = cfg;
  disk.dataset = (dir / "data").string();
  disk.image_size = 64;
  CHECK(resolve_categories(disk) == std::vector<std::string>{"synthetic"});
  const auto split = prepare_split(disk, "synthetic");
  CHECK(split.train_normal.size() == 10);
  CHECK(split.train_anomalous.size() == 3);
}
