#include <doctest.h>

#include <random>

#include "apc/bank.hpp"
#include "apc/error.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace apc;
using apc::test::random_tensor;

namespace {

PatchFeatureSet patch_set(const MatrixRM<float>& v, int gh, int gw, std::string sig = "sig") {
  PatchFeatureSet p;
  p.vectors = v;
  p.geometry = {gh, gw, 16, 3};
  p.signature = std::move(sig);
  return p;
}

MatrixRM<float> random_points(int n, int d, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  MatrixRM<float> m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

}  // namespace

TEST_CASE("fusion upsamples stage 4 and concatenates") {
  StagedFeatures<double> s;
  s.maps[2] = random_tensor<double>(1, 64, 16, 16, 1);
  s.maps[3] = Tensor<double>(1, 128, 8, 8);
  s.maps[3].data.setConstant(0.7);
  const auto f = fuse_stages(s);
  CHECK(f.c == 192);
  CHECK(f.h == 16);
  CHECK(f.w == 16);
  for (int c = 64; c < 192; ++c)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) CHECK(f.at(0, c, y, x) == doctest::Approx(0.7));
  for (int y = 0; y < 16; ++y) CHECK(f.at(0, 5, y, 3) == s.maps[2].at(0, 5, y, 3));
}

TEST_CASE("fusion of a 2x2 checkerboard matches closed-form bilinear") {
  StagedFeatures<double> s;
  s.maps[2] = Tensor<double>(1, 1, 4, 4);
  s.maps[3] = Tensor<double>(1, 1, 2, 2);
  s.maps[3].data << 0, 1, 1, 0;
  const auto f = fuse_stages(s);
  // Half-pixel centers: output pixel i samples source coordinate (i + 0.5) / 2 - 0.5.
  auto src = [](int i) { return std::clamp((i + 0.5) / 2 - 0.5, 0.0, 1.0); };
  auto cell = [](double u, double v) { return (1 - u) * v + u * (1 - v); };  // bilinear of [[0,1],[1,0]]
  for (int y = 1; y < 3; ++y)
    for (int x = 1; x < 3; ++x) CHECK(f.at(0, 1, y, x) == doctest::Approx(cell(src(y), src(x))).epsilon(1e-12));
}

TEST_CASE("patch aggregation averages in-bounds neighbors") {
  Tensor<double> m(1, 1, 3, 3);
  m.at(0, 0, 1, 1) = 9;
  const auto p = aggregate_patches(m, 0, 3);
  CHECK(p.vectors(4, 0) == doctest::Approx(1.0));
  CHECK(p.vectors(0, 0) == doctest::Approx(2.25));
  CHECK(p.vectors(1, 0) == doctest::Approx(1.5));
  CHECK(p.geometry.grid_h == 3);

  Tensor<double> c(1, 4, 5, 5);
  c.data.setConstant(-1.25);
  CHECK((aggregate_patches(c, 0, 3).vectors.array() == -1.25f).all());

  const auto r = random_tensor<double>(2, 3, 4, 5, 9);
  const auto id = aggregate_patches(r, 1, 1);
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 5; ++x) CHECK(id.vectors(y * 5 + x, ch) == float(r.at(1, ch, y, x)));

  CHECK_THROWS_AS(aggregate_patches(c, 0, 2), ConfigError);
}

TEST_CASE("greedy coreset") {
  SUBCASE("three points on a line") {
    MatrixRM<float> p(3, 1);
    p << 0, 1, 10;
    const auto idx = coreset_select_from(p, 2, 0);
    CHECK(idx == std::vector<Eigen::Index>{0, 2});
    CHECK(cover_radius(p, idx) == doctest::Approx(1.0));
    CHECK(oracle::optimal_cover_radius(p, 2) == doctest::Approx(1.0));
  }
  SUBCASE("k = n returns every index") {
    std::mt19937_64 rng(1);
    const auto p = random_points(7, 3, rng);
    auto idx = coreset_select(p, 7, 5);
    std::sort(idx.begin(), idx.end());
    CHECK(idx == std::vector<Eigen::Index>{0, 1, 2, 3, 4, 5, 6});
  }
  SUBCASE("duplicates fall back to the lowest unused index") {
    MatrixRM<float> p = MatrixRM<float>::Constant(4, 2, 0.5f);
    CHECK(coreset_select_from(p, 2, 2) == std::vector<Eigen::Index>{2, 0});
    CHECK(coreset_select_from(p, 2, 0) == std::vector<Eigen::Index>{0, 1});
  }
  SUBCASE("bad sizes") {
    MatrixRM<float> p(3, 1);
    p << 0, 1, 2;
    CHECK_THROWS_AS(coreset_select(p, 4, 0), ConfigError);
    CHECK_THROWS_AS(coreset_select(p, 0, 0), ConfigError);
  }
  SUBCASE("seeded start is deterministic") {
    std::mt19937_64 rng(2);
    const auto p = random_points(30, 4, rng);
    CHECK(coreset_select(p, 5, 11) == coreset_select(p, 5, 11));
  }
  SUBCASE("within twice the optimal radius") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 40; ++trial) {
      const int n = 3 + int(rng() % 8), k = 1 + int(rng() % 3), d = 1 + int(rng() % 3);
      const auto p = random_points(n, d, rng);
      const auto idx = coreset_select(p, k, rng());
      CHECK(cover_radius(p, idx) <= 2 * oracle::optimal_cover_radius(p, k) + 1e-9);
    }
  }
}

TEST_CASE("bank construction") {
  std::mt19937_64 rng(4);
  SUBCASE("ratio one keeps everything") {
    const auto v = random_points(12, 3, rng);
    const PatchFeatureSet sets[] = {patch_set(v.topRows(6), 2, 3), patch_set(v.bottomRows(6), 2, 3)};
    const auto bank = build_bank(sets, 1.0, 0);
    CHECK(bank.patches == v);
    CHECK(bank.selected_from == 12);
    CHECK(bank.feature_signature == "sig");
  }
  SUBCASE("four vectors at ratio one half") {
    MatrixRM<float> v(4, 2);
    v << 0, 0, 0, 1, 5, 5, 5, 6;
    const PatchFeatureSet sets[] = {patch_set(v, 2, 2)};
    const auto bank = build_bank(sets, 0.5, 3);
    REQUIRE(bank.size() == 2);
    std::vector<Eigen::Index> rows;
    for (Eigen::Index r = 0; r < 2; ++r)
      for (Eigen::Index i = 0; i < 4; ++i)
        if (bank.patches.row(r) == v.row(i)) rows.push_back(i);
    REQUIRE(rows.size() == 2);
    CHECK(cover_radius(v, rows) <= 2 * oracle::optimal_cover_radius(v, 2));
  }
  SUBCASE("coreset size rounds") {
    CHECK(coreset_size(256, 0.01) == 3);
    CHECK(coreset_size(10, 0.01) == 1);
    CHECK(coreset_size(12800, 0.1) == 1280);
    const PatchFeatureSet sets[] = {patch_set(random_points(256, 4, rng), 16, 16)};
    CHECK(build_bank(sets, 0.01, 1).size() == 3);
    CHECK_THROWS_AS(coreset_size(10, 0.0), ConfigError);
    CHECK_THROWS_AS(coreset_size(10, 1.5), ConfigError);
  }
  SUBCASE("mixed signatures are refused") {
    const PatchFeatureSet sets[] = {patch_set(random_points(4, 2, rng), 2, 2, "a"),
                                    patch_set(random_points(4, 2, rng), 2, 2, "b")};
    CHECK_THROWS_AS(build_bank(sets, 1.0, 0), IncompatibleError);
  }
}

TEST_CASE("nearest-neighbor scoring") {
  MemoryBank bank;
  bank.patches.resize(2, 2);
  bank.patches << 0, 0, 1, 1;
  bank.feature_signature = "sig";
  MatrixRM<float> q(2, 2);
  q << 0.5f, 0.5f, 1, 1;
  const auto d = score_patches(bank, patch_set(q, 1, 2));
  CHECK(d(0, 0) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
  CHECK(d(0, 1) == 0.0);

  SUBCASE("signature mismatch needs the override") {
    CHECK_THROWS_AS(score_patches(bank, patch_set(q, 1, 2, "other")), IncompatibleError);
    CHECK_NOTHROW(score_patches(bank, patch_set(q, 1, 2, "other"), true));
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(score_patches(bank, patch_set(MatrixRM<float>::Zero(2, 3), 1, 2)), IncompatibleError);
  }
  SUBCASE("agrees with a triple loop and never grows with more rows") {
    std::mt19937_64 rng(5);
    MemoryBank b;
    b.patches = random_points(40, 6, rng);
    b.feature_signature = "sig";
    const auto queries = random_points(12, 6, rng);
    const auto got = score_patches(b, patch_set(queries, 3, 4));
    const auto ref = oracle::nearest_distances(b.patches, queries);
    for (int i = 0; i < 12; ++i) CHECK(std::abs(got(i / 4, i % 4) - ref[std::size_t(i)]) < 1e-6);
    MemoryBank bigger = b;
    bigger.patches.conservativeResize(50, 6);
    bigger.patches.bottomRows(10) = random_points(10, 6, rng);
    const auto more = score_patches(bigger, patch_set(queries, 3, 4));
    CHECK((more <= got).all());
    CHECK((got >= 0).all());
  }
}

TEST_CASE("anomaly map assembly") {
  SUBCASE("constant grid") {
    GridArray<double> g = GridArray<double>::Constant(4, 4, 0.8);
    const auto r = assemble_map(g, {4, 4, 16, 3}, 64, 64);
    CHECK(r.image_score == 0.8);
    CHECK((r.map - 0.8f).abs().maxCoeff() < 1e-6);
  }
  SUBCASE("score is the raw maximum") {
    GridArray<double> g(1, 3);
    g << 0.2, 0.9, 0.5;
    const auto r = assemble_map(g, {1, 3, 16, 3}, 16, 48);
    CHECK(r.image_score == 0.9);
    CHECK(r.map.rows() == 16);
    CHECK(r.map.cols() == 48);
  }
  SUBCASE("single hot cell stays near its footprint") {
    for (auto [hy, hx] : {std::pair{3, 5}, {0, 0}, {7, 2}}) {
      GridArray<double> g = GridArray<double>::Zero(8, 8);
      g(hy, hx) = 1.0;
      const auto r = assemble_map(g, {8, 8, 16, 3}, 128, 128, 4.0);
      Eigen::Index my, mx;
      r.map.maxCoeff(&my, &mx);
      auto dist = [](Eigen::Index p, int c) { return std::max<double>({0.0, double(c * 16 - p), double(p - (c * 16 + 15))}); };
      CHECK(dist(my, hy) <= 4.0);
      CHECK(dist(mx, hx) <= 4.0);
    }
  }
  SUBCASE("upsampling keeps a dominant maximum inside its cell") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 20; ++trial) {
      GridArray<double> g(6, 6);
      for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = u(rng);
      const int hy = int(rng() % 6), hx = int(rng() % 6);
      g(hy, hx) = 2.0;
      const auto r = assemble_map(g, {6, 6, 16, 3}, 96, 96, 0.0);
      Eigen::Index my, mx;
      r.map.maxCoeff(&my, &mx);
      CHECK(my / 16 == hy);
      CHECK(mx / 16 == hx);
    }
  }
  SUBCASE("geometry must cover the image") {
    CHECK_THROWS_AS(assemble_map(GridArray<double>::Zero(4, 4), {4, 4, 16, 3}, 60, 64), ShapeError);
  }
}

TEST_CASE("bank files") {
  test::TempDir dir("bank");
  std::mt19937_64 rng(7);
  MemoryBank bank;
  bank.patches = random_points(9, 5, rng);
  bank.coreset_ratio = 0.25;
  bank.selected_from = 36;
  bank.feature_signature = "0123456789abcdef";
  bank.seed = 42;
  save_bank(bank, dir / "b.apcb");
  const auto back = load_bank(dir / "b.apcb");
  CHECK(back.patches == bank.patches);
  CHECK(back.coreset_ratio == 0.25);
  CHECK(back.selected_from == 36);
  CHECK(back.feature_signature == bank.feature_signature);
  CHECK(back.distance == "euclidean");
  CHECK(back.seed == 42);

  std::filesystem::resize_file(dir / "b.apcb", std::filesystem::file_size(dir / "b.apcb") - 3);
  CHECK_THROWS_AS(load_bank(dir / "b.apcb"), IntegrityError);
}
