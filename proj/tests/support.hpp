#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include <unistd.h>

#include "apc/nn.hpp"
#include "apc/tensor.hpp"

namespace apc::test {

// Fresh, empty directory under the system temp dir; removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("apc_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::filesystem::path operator/(const std::string& s) const { return path / s; }
};

template <typename Scalar>
Tensor<Scalar> random_tensor(int n, int c, int h, int w, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<Scalar> t(n, c, h, w);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = Scalar(u(rng));
  return t;
}

// Checks a layer's input and parameter gradients against central differences of
// L = sum(forward(x) * g) for a fixed random g. Returns the max relative error.
inline double layer_grad_error(nn::Layer<double>& layer, Tensor<double> x, std::uint64_t seed, double eps = 1e-6) {
  Tensor<double> y = layer.forward(x, nn::Mode::Train);
  const Tensor<double> g = random_tensor<double>(y.n, y.c, y.h, y.w, seed + 1);
  nn::ParamList<double> ps;
  layer.collect(ps);
  for (auto* p : ps) p->grad.setZero();
  const Tensor<double> dx = layer.backward(g);

  auto loss = [&]() { return (layer.forward(x, nn::Mode::Train).data * g.data).sum(); };
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); };
  double worst = 0;
  std::mt19937_64 rng(seed);
  for (int k = 0; k < 24; ++k) {
    const Eigen::Index i = std::uniform_int_distribution<Eigen::Index>(0, x.size() - 1)(rng);
    const double keep = x.data[i];
    x.data[i] = keep + eps;
    const double up = loss();
    x.data[i] = keep - eps;
    const double down = loss();
    x.data[i] = keep;
    worst = std::max(worst, rel(dx.data[i], (up - down) / (2 * eps)));
  }
  for (auto* p : ps) {
    if (p->buffer) continue;
    for (int k = 0; k < 8; ++k) {
      const Eigen::Index i = std::uniform_int_distribution<Eigen::Index>(0, p->value.size() - 1)(rng);
      const double keep = p->value[i];
      p->value[i] = keep + eps;
      const double up = loss();
      p->value[i] = keep - eps;
      const double down = loss();
      p->value[i] = keep;
      worst = std::max(worst, rel(p->grad[i], (up - down) / (2 * eps)));
    }
  }
  return worst;
}

}  // namespace apc::test
