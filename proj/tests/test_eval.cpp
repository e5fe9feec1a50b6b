#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "apc/error.hpp"
#include "apc/eval.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace apc;
using Labels = std::vector<std::uint8_t>;

TEST_CASE("auroc examples") {
  CHECK(auroc(std::vector<double>{0.8, 0.35, 0.4, 0.1}, Labels{1, 1, 0, 0}) == doctest::Approx(0.75));
  CHECK(auroc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, Labels{1, 1, 0, 0}) == 1.0);
  CHECK(auroc(std::vector<double>{0.3, 0.3, 0.3, 0.3}, Labels{1, 0, 1, 0}) == 0.5);
  CHECK_THROWS_AS(auroc(std::vector<double>{0.1, 0.2}, Labels{1, 1}), UndefinedMetricError);
  CHECK_THROWS_AS(auroc(std::vector<double>{0.1, 0.2}, Labels{0, 0}), UndefinedMetricError);
  CHECK_THROWS_AS(auroc(std::vector<double>{0.1}, Labels{0, 1}), ShapeError);
}

TEST_CASE("f1_max examples") {
  auto r = f1_max(std::vector<double>{0.9, 0.1}, Labels{1, 0});
  CHECK(r.f1 == 1.0);
  CHECK(r.threshold == 0.9);
  r = f1_max(std::vector<double>{0.9, 0.8, 0.1}, Labels{1, 0, 1});
  CHECK(r.f1 == doctest::Approx(0.8));
  CHECK(r.threshold == 0.1);
  // Everything predicted positive at the minimum threshold: F1 = 2p / (p + 1).
  r = f1_max(std::vector<double>{0.5, 0.5, 0.5, 0.5, 0.5}, Labels{1, 0, 0, 1, 0});
  CHECK(r.f1 == doctest::Approx(2 * 0.4 / 1.4));
  CHECK_THROWS_AS(f1_max(std::vector<double>{0.1, 0.2}, Labels{0, 0}), UndefinedMetricError);
}

TEST_CASE("metric invariances") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 5 + int(rng() % 30);
    std::vector<double> s(static_cast<std::size_t>(n));
    Labels y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      y[std::size_t(i)] = std::uint8_t(rng() % 2);
      s[std::size_t(i)] = g(rng) + y[std::size_t(i)];
    }
    y[0] = 0;
    y[1] = 1;
    const double a = auroc(s, y);
    std::vector<double> t(s), neg(s);
    for (auto& v : t) v = 1000 * std::exp(v);
    for (auto& v : neg) v = -v;
    CHECK(std::abs(auroc(t, y) - a) < 1e-12);
    CHECK(std::abs(auroc(neg, y) + a - 1) < 1e-12);  // continuous scores are tie-free
    std::vector<std::size_t> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> ps;
    Labels py;
    for (auto i : perm) ps.push_back(s[i]), py.push_back(y[i]);
    CHECK(auroc(ps, py) == a);
    CHECK(f1_max(ps, py).f1 == f1_max(s, y).f1);
    CHECK(f1_max(ps, py).threshold == f1_max(s, y).threshold);
  }
}

TEST_CASE("metrics agree with brute force on small tied sets") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 2 + int(rng() % 9);
    std::vector<double> s(static_cast<std::size_t>(n));
    Labels y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      s[std::size_t(i)] = double(rng() % 4) / 4;  // heavy ties
      y[std::size_t(i)] = std::uint8_t(rng() % 2);
    }
    y[0] = 1;
    const auto want = oracle::exhaustive_f1(s, y);
    const auto got = f1_max(s, y);
    CHECK(got.f1 == want.f1);
    CHECK(got.threshold == want.threshold);
    if (std::count(y.begin(), y.end(), 0) > 0) CHECK(std::abs(auroc(s, y) - oracle::pairwise_auroc(s, y)) < 1e-12);
  }
}

namespace {

struct PixelSet {
  std::vector<GridArray<float>> maps;
  std::vector<std::optional<Mask>> masks;
  std::function<PixelPair(std::size_t)> fetch() const {
    return [this](std::size_t k) { return PixelPair{maps[k], masks[k], "img" + std::to_string(k)}; };
  }
};

PixelSet random_pixels(int images, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0, 1);
  PixelSet p;
  for (int k = 0; k < images; ++k) {
    Mask m(size, size);
    if (k % 2)
      for (int y = size / 4; y < size / 2; ++y)
        for (int x = size / 3; x < size / 2 + 3; ++x) m.at(y, x) = 1;
    GridArray<float> map(size, size);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) map(y, x) = g(rng) + 1.5f * m.at(y, x);
    p.maps.push_back(map);
    p.masks.push_back(k % 2 ? std::optional<Mask>(m) : std::nullopt);
  }
  return p;
}

}  // namespace

TEST_CASE("pixel metrics") {
  SUBCASE("a map equal to its mask is perfect") {
    PixelSet p;
    Mask m(8, 8);
    m.at(2, 3) = m.at(4, 4) = 1;
    GridArray<float> map = GridArray<float>::Zero(8, 8);
    map(2, 3) = map(4, 4) = 1;
    p.maps = {map};
    p.masks = {m};
    for (auto mode : {PixelMode::Exact, PixelMode::Histogram}) {
      const auto r = pixel_metrics(p.fetch(), 1, mode);
      CHECK(r.auroc_px == 1.0);
      CHECK(r.f1_px == 1.0);
    }
  }
  SUBCASE("no anomalous pixels is undefined") {
    PixelSet p = random_pixels(4, 8, 1);
    for (auto& m : p.masks) m.reset();
    CHECK_THROWS_AS(pixel_metrics(p.fetch(), 4, PixelMode::Histogram), UndefinedMetricError);
    CHECK_THROWS_AS(pixel_metrics(p.fetch(), 4, PixelMode::Exact), UndefinedMetricError);
  }
  SUBCASE("shape mismatch names the image") {
    PixelSet p = random_pixels(3, 8, 2);
    p.masks[1] = Mask(8, 9);
    try {
      pixel_metrics(p.fetch(), 3, PixelMode::Exact);
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find("img1") != std::string::npos);
    }
  }
  SUBCASE("histogram quantization stays within 1e-3 of the exact pool") {
    const PixelSet p = random_pixels(10, 64, 3);
    const auto exact = pixel_metrics(p.fetch(), 10, PixelMode::Exact);
    const auto hist = pixel_metrics(p.fetch(), 10, PixelMode::Histogram);
    CHECK(std::abs(exact.auroc_px - hist.auroc_px) <= 1e-3);
    CHECK(std::abs(exact.f1_px - hist.f1_px) <= 1e-3);
    // Exact mode equals image-level metrics on the flattened pool.
    std::vector<double> s;
    Labels y;
    for (std::size_t k = 0; k < 10; ++k)
      for (Eigen::Index i = 0; i < p.maps[k].size(); ++i) {
        s.push_back(p.maps[k].data()[i]);
        y.push_back(p.masks[k] ? p.masks[k]->data[i] : 0);
      }
    CHECK(exact.auroc_px == auroc(s, y));
    CHECK(exact.f1_px == f1_max(s, y).f1);
  }
  SUBCASE("histogram mode fetches each image twice, one at a time") {
    const PixelSet p = random_pixels(5, 16, 4);
    int calls = 0;
    pixel_metrics(
        [&](std::size_t k) {
          ++calls;
          return p.fetch()(k);
        },
        5, PixelMode::Histogram);
    CHECK(calls == 10);
  }
}

TEST_CASE("reports") {
  CategoryMetrics a{0.9, 0.8, 0.7, 0.3, 1.5, 2.5}, b{1.0, 0.6, 0.9, 0.5, 0.5, 3.5};
  const auto r = make_report({{"bottle", a}, {"tile", b}}, "run-1", "abc");
  CHECK(r.average.auroc_im == doctest::Approx(0.95));
  CHECK(r.average.f1_px == doctest::Approx(0.4));
  const auto single = make_report({{"tile", b}}, "run-2", "abc");
  CHECK(single.average.auroc_im == b.auroc_im);
  CHECK(single.average.f1_im == b.f1_im);
  CHECK_THROWS_AS(make_report({}, "x", "y"), ConfigError);

  test::TempDir dir("report");
  const CategoryMetrics odd{0.1 + 0.2, 1.0 / 3, 2.0 / 3, 1e-17, 123.456789012345678, -0.0};
  const auto rep = make_report({{"odd", odd}, {"tile", b}}, "run-3", "feed");
  write_report(rep, dir / "r.json");
  const auto back = read_report(dir / "r.json");
  CHECK(back.run_id == "run-3");
  CHECK(back.config_hash == "feed");
  CHECK(back.categories.at("odd").auroc_im == odd.auroc_im);
  CHECK(back.categories.at("odd").f1_im == odd.f1_im);
  CHECK(back.categories.at("odd").f1_px == odd.f1_px);
  CHECK(back.categories.at("odd").threshold_im == odd.threshold_im);
  CHECK(back.average.auroc_px == rep.average.auroc_px);
  const auto j = to_json(rep);
  CHECK(j.contains("categories"));
  CHECK(j["categories"]["tile"].contains("thresholds"));
}
