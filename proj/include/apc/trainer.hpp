#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "apc/auxdec.hpp"
#include "apc/data.hpp"

namespace apc {

enum class Precision { F32, F64 };

struct TrainConfig {
  int epochs = 50;
  int batch_size = 8;
  double learning_rate = 1e-4;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  Precision precision = Precision::F32;
  TaskMask tasks;
  LossWeights weights;

  void validate() const;
};

struct TrainHistory {
  std::vector<LossBreakdown> epochs;  // batch-mean losses per epoch
  double seconds = 0;
  std::string checkpoint_id;
};

/// Decoupled-weight-decay Adam. State is keyed by position in the parameter list,
/// so the same list (same order) must be passed to every step.
template <typename Scalar>
class AdamW {
 public:
  AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(const nn::ParamList<Scalar>& params);
  long steps() const { return t_; }

 private:
  double lr_, wd_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<ArrayX<Scalar>> m_, v_;
};

/// Per-epoch observer: (epoch index, epoch mean losses).
using EpochCallback = std::function<void(int, const LossBreakdown&)>;

/// Fine-tunes encoder, decoder and the active heads on balanced, augmented batches.
/// Parameters unreachable from the active tasks are left untouched. Throws
/// NumericError naming epoch and batch when the loss becomes non-finite.
template <typename Scalar>
TrainHistory finetune(ApcNetwork<Scalar>& net, const DatasetSplit& split, const TrainConfig& cfg,
                      const AugmentationConfig& aug, const EpochCallback& on_epoch = {});

/// Converts a batch of samples into loss targets.
template <typename Scalar>
LossTargets<Scalar> make_targets(std::span<const ImageSample> batch);

/// Central-difference check of analytic gradients.
/// rel_error = |analytic - numeric| / max(|analytic|, |numeric|, floor).
double finite_difference_check(const std::function<double()>& loss, std::span<double* const> params,
                               std::span<const double> analytic, double epsilon, double floor = 1e-6);

struct GradCheckOptions {
  double epsilon = 1e-5;
  int samples = 256;
  std::uint64_t seed = 0;
  double floor = 1e-6;
  /// Inflates the analytic gradient of the largest-magnitude sampled parameter by
  /// (1 + fault_scale) before comparison; used to confirm the harness is sensitive.
  bool inject_fault = false;
  double fault_scale = 0.1;
};

struct GradCheckResult {
  double max_rel_error = 0;
  int checked = 0;
  std::string worst_param;
};

/// Samples parameters stratified over every trainable tensor and compares the
/// composite-loss gradient against central differences (training-mode forward).
GradCheckResult grad_check(ApcNetwork<double>& net, const LossTargets<double>& batch, const TaskMask& tasks,
                           const LossWeights& weights, const GradCheckOptions& opts);

}  // namespace apc
