#include <doctest.h>

#include <cmath>
#include <set>

#include "apc/auxdec.hpp"
#include "apc/error.hpp"
#include "support.hpp"

using namespace apc;
using apc::test::random_tensor;

namespace {

template <typename Scalar>
void fill_params(const nn::ParamList<Scalar>& ps, double v) {
  for (auto* p : ps)
    if (!p->buffer) p->value.setConstant(Scalar(v));
}

StagedFeatures<double> random_stages(int n, int size, std::uint64_t seed) {
  StagedFeatures<double> s;
  const std::array<int, 4> ch{16, 32, 64, 128};
  for (int i = 0; i < 4; ++i)
    s.maps[std::size_t(i)] = random_tensor<double>(n, ch[std::size_t(i)], size / kStageStrides[std::size_t(i)],
                                                    size / kStageStrides[std::size_t(i)], seed + std::uint64_t(i));
  return s;
}

LossTargets<double> targets_for(int n, int size, std::uint64_t seed) {
  LossTargets<double> t;
  t.images = random_tensor<double>(n, 3, size, size, seed, 0, 1);
  t.masks = Tensor<double>(n, 1, size, size);
  for (int i = 0; i < n; ++i) {
    t.labels.push_back(i % 2);
    if (i % 2)
      for (int y = 2; y < 6; ++y)
        for (int x = 3; x < 7; ++x) t.masks.at(i, 0, y, x) = 1;
  }
  return t;
}

}  // namespace

TEST_CASE("decoder doubles resolution per step") {
  nn::Rng rng(1);
  Decoder<double> dec({16, 32, 64, 128}, SkipMode::TwoSkips, rng);
  const auto f = dec.decode(random_stages(1, 256, 3), nn::Mode::Eval);
  CHECK(f.tconv1.h == 16);
  CHECK(f.tconv1.c == 64);
  CHECK(f.tconv2.h == 32);
  CHECK(f.tconv2.c == 32);
  CHECK(f.tconv3.h == 64);
  CHECK(f.tconv3.c == 16);
}

TEST_CASE("two-skip mode never reads stage 1") {
  nn::Rng r1(4), r2(4);
  Decoder<double> two({16, 32, 64, 128}, SkipMode::TwoSkips, r1);
  Decoder<double> four({16, 32, 64, 128}, SkipMode::FourSkips, r2);
  CHECK_FALSE(two.reads_stage1());
  CHECK(four.reads_stage1());
  auto s = random_stages(1, 64, 5);
  const auto a = two.decode(s, nn::Mode::Eval);
  const auto b4 = four.decode(s, nn::Mode::Eval);
  s.maps[0].data += 3.0;
  const auto b = two.decode(s, nn::Mode::Eval);
  const auto c = four.decode(s, nn::Mode::Eval);
  CHECK((a.tconv3.data == b.tconv3.data).all());
  CHECK((a.tconv2.data == b.tconv2.data).all());
  // The four-skip variant differs only through the stage-1 fusion at tconv3.
  CHECK((b4.tconv2.data == c.tconv2.data).all());
  CHECK(!(b4.tconv3.data == c.tconv3.data).all());
}

TEST_CASE("zero features and zero biases decode to zero") {
  nn::Rng rng(6);
  Decoder<double> dec({16, 32, 64, 128}, SkipMode::FourSkips, rng);
  for (auto* p : dec.params_upper())
    if (p->name.find("bias") != std::string::npos) p->value.setZero();
  for (auto* p : dec.params_tconv3())
    if (p->name.find("bias") != std::string::npos) p->value.setZero();
  StagedFeatures<double> s = random_stages(1, 64, 1);
  for (auto& m : s.maps) m.data.setZero();
  const auto f = dec.decode(s, nn::Mode::Eval);
  CHECK(f.tconv1.data.abs().maxCoeff() == 0.0);
  CHECK(f.tconv2.data.abs().maxCoeff() == 0.0);
  CHECK(f.tconv3.data.abs().maxCoeff() == 0.0);
}

TEST_CASE("classification head") {
  nn::Rng rng(2);
  ClassifyHead<double> head(32, HeadConfig{}, rng);
  const auto x = random_tensor<double>(3, 32, 8, 8, 4);
  const auto p1 = head.forward(x, nn::Mode::Eval);
  const auto p2 = head.forward(x, nn::Mode::Eval);
  CHECK(p1.n == 3);
  CHECK(p1.size() == 3);
  CHECK((p1.data == p2.data).all());
  CHECK((p1.data > 0).all());
  CHECK((p1.data < 1).all());
  fill_params(head.params(), 0.0);
  const auto z = head.forward(Tensor<double>(1, 32, 8, 8), nn::Mode::Eval);
  CHECK(z.data[0] == 0.5);
}

TEST_CASE("segmentation head") {
  nn::Rng rng(3);
  SegmentHead<double> head(16, HeadConfig{}, rng);
  const auto y = head.forward(random_tensor<double>(1, 16, 64, 64, 5), nn::Mode::Eval);
  CHECK(y.c == 1);
  CHECK(y.h == 256);
  CHECK(y.w == 256);
  CHECK((y.data > 0).all());
  CHECK((y.data < 1).all());
  // Zero weights and a bias of 0.3 on the final conv give sigmoid(0.3) everywhere.
  fill_params(head.params(), 0.0);
  auto ps = head.params();
  ps.back()->value.setConstant(0.3);
  const auto c = head.forward(random_tensor<double>(1, 16, 8, 8, 6), nn::Mode::Eval);
  CHECK((c.data - 1.0 / (1.0 + std::exp(-0.3))).abs().maxCoeff() < 1e-12);
}

TEST_CASE("reconstruction head") {
  nn::Rng rng(3);
  ReconstructHead<double> head(16, HeadConfig{}, rng);
  const auto y = head.forward(random_tensor<double>(2, 16, 16, 16, 5), nn::Mode::Eval);
  CHECK(y.n == 2);
  CHECK(y.c == 3);
  CHECK(y.h == 64);
  CHECK(y.w == 64);
  fill_params(head.params(), 0.0);
  CHECK(head.forward(random_tensor<double>(1, 16, 8, 8, 6), nn::Mode::Eval).data.abs().maxCoeff() == 0.0);
}

TEST_CASE("gaussian smoothing preserves interior mean") {
  // Smoothing a field with a normalized kernel keeps the mean of interior pixels when
  // the field is linear there: the kernel is symmetric.
  const int h = 20, w = 20;
  std::vector<double> in(std::size_t(h * w)), out(in.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) in[std::size_t(y * w + x)] = 0.1 * y - 0.05 * x + 2;
  blur_plane(in.data(), h, w, gaussian_taps(5, 1.0), out.data());
  for (int y = 2; y < h - 2; ++y)
    for (int x = 2; x < w - 2; ++x) CHECK(std::abs(out[std::size_t(y * w + x)] - in[std::size_t(y * w + x)]) < 1e-6);
}

TEST_CASE("composite loss") {
  SUBCASE("weighted identity") {
    CHECK(weighted_total(0.1, 0.2, 0.3) == doctest::Approx(1.5).epsilon(1e-15));
  }
  SUBCASE("closed-form BCE") {
    CHECK(bce(0.5, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(bce(1.0, 1.0) == doctest::Approx(-std::log(1 - kProbClamp)));
    // Monotone in accuracy.
    double prev = 1e9;
    for (double p : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      CHECK(bce(p, 1.0) < prev);
      prev = bce(p, 1.0);
    }
  }
  const int n = 2, size = 32;
  const auto t = targets_for(n, size, 7);
  HeadOutputs<double> out;
  out.class_prob = Tensor<double>(n, 1, 1, 1);
  out.seg_prob = Tensor<double>(n, 1, size, size);
  out.recon = t.images;
  for (int i = 0; i < n; ++i) out.class_prob.data[i] = t.labels[std::size_t(i)];
  out.seg_prob.data = t.masks.data;
  SUBCASE("perfect outputs give the clamp floor") {
    const auto l = composite_loss(out, t, TaskMask{}, LossWeights{}, static_cast<LossGradients<double>*>(nullptr));
    CHECK(l.total <= 12 * bce(1.0, 1.0) + 1e-15);
    CHECK(l.l_recon == 0.0);
  }
  SUBCASE("class probability 0.5 on a positive") {
    out.class_prob.data.setConstant(0.5);
    const auto l = composite_loss(out, t, TaskMask{true, false, false}, LossWeights{}, static_cast<LossGradients<double>*>(nullptr));
    CHECK(l.l_cls == doctest::Approx(std::log(2.0)));
    CHECK(l.l_segm == 0.0);
    CHECK(l.l_recon == 0.0);
    CHECK(l.total == 10 * l.l_cls);
  }
  SUBCASE("terms are nonnegative and the total is the weighted sum") {
    out.class_prob = random_tensor<double>(n, 1, 1, 1, 1, 0.01, 0.99);
    out.seg_prob = random_tensor<double>(n, 1, size, size, 2, 0.01, 0.99);
    out.recon = random_tensor<double>(n, 3, size, size, 3);
    const auto l = composite_loss(out, t, TaskMask{}, LossWeights{}, static_cast<LossGradients<double>*>(nullptr));
    CHECK(l.l_cls >= 0);
    CHECK(l.l_segm >= 0);
    CHECK(l.l_recon >= 0);
    CHECK(l.total == 10 * l.l_cls + l.l_segm + l.l_recon);
  }
  SUBCASE("non-finite output names the head") {
    out.seg_prob.data[5] = std::nan("");
    try {
      composite_loss(out, t, TaskMask{}, LossWeights{}, static_cast<LossGradients<double>*>(nullptr));
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("segment") != std::string::npos);
    }
  }
}

TEST_CASE("task masks parse and print") {
  CHECK(TaskMask::parse("all") == TaskMask{});
  CHECK(TaskMask::parse("none") == TaskMask::none());
  CHECK(TaskMask::parse("cls,segm") == TaskMask{true, true, false});
  CHECK(TaskMask::parse(TaskMask{true, false, true}.str()) == TaskMask{true, false, true});
  CHECK_THROWS_AS(TaskMask::parse("cls,depth"), ConfigError);
}

TEST_CASE("trainable parameters follow the task mask") {
  ApcNetwork<double> net(NetworkConfig{}, 3);
  auto names = [](const nn::ParamList<double>& ps) {
    std::set<std::string> s;
    for (auto* p : ps) s.insert(p->name);
    return s;
  };
  const auto all = names(net.trainable_params(TaskMask{}));
  const auto cls = names(net.trainable_params(TaskMask{true, false, false}));
  for (const auto& n : names(net.head_params('s'))) {
    CHECK(all.count(n));
    CHECK_FALSE(cls.count(n));
  }
  for (const auto& n : names(net.head_params('c'))) CHECK(cls.count(n));
  for (auto* p : net.params())
    if (p->buffer) CHECK_FALSE(all.count(p->name));
}

TEST_CASE("network checkpoints round trip") {
  test::TempDir dir("net");
  ApcNetwork<float> a(NetworkConfig{}, 1), b(NetworkConfig{}, 2);
  save_network(a, dir / "ck.apcw");
  load_network(b, dir / "ck.apcw");
  const auto x = random_tensor<float>(2, 3, 64, 64, 3, 0, 1);
  const auto oa = a.forward(x, TaskMask{}, nn::Mode::Eval);
  const auto ob = b.forward(x, TaskMask{}, nn::Mode::Eval);
  CHECK((oa.class_prob.data == ob.class_prob.data).all());
  CHECK((oa.seg_prob.data == ob.seg_prob.data).all());
  CHECK((oa.recon.data == ob.recon.data).all());
  CHECK(feature_signature(a) == feature_signature(b));

  NetworkConfig other;
  other.backbone.stage_channels = {16, 32, 64, 96};
  ApcNetwork<float> c(other, 1);
  CHECK_THROWS_AS(load_network(c, dir / "ck.apcw"), IncompatibleError);
}
