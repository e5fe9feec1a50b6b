#include "apc/trainer.hpp"

#include <chrono>
#include <cmath>

namespace apc {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 2 || batch_size % 2 != 0) throw ConfigError("batch size must be even and >= 2");
  if (!(learning_rate >= 0)) throw ConfigError("learning rate must be nonnegative");
  if (!(weight_decay >= 0)) throw ConfigError("weight decay must be nonnegative");
  if (!tasks.any()) throw ConfigError("fine-tuning requires at least one auxiliary task");
}

template <typename Scalar>
void AdamW<Scalar>::step(const nn::ParamList<Scalar>& params) {
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.push_back(ArrayX<Scalar>::Zero(p->value.size()));
      v_.push_back(ArrayX<Scalar>::Zero(p->value.size()));
    }
  }
  if (m_.size() != params.size()) throw ConfigError("AdamW: parameter list changed between steps");
  ++t_;
  const Scalar decay = Scalar(1.0 - lr_ * wd_);
  const Scalar c1 = Scalar(1.0 / (1.0 - std::pow(b1_, double(t_))));
  const Scalar c2 = Scalar(1.0 / (1.0 - std::pow(b2_, double(t_))));
  const Scalar b1 = Scalar(b1_), b2 = Scalar(b2_), lr = Scalar(lr_), eps = Scalar(eps_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    p.value *= decay;
    m_[i] = b1 * m_[i] + (Scalar(1) - b1) * p.grad;
    v_[i] = b2 * v_[i] + (Scalar(1) - b2) * p.grad.square();
    p.value -= lr * (m_[i] * c1) / ((v_[i] * c2).sqrt() + eps);
  }
}

template <typename Scalar>
LossTargets<Scalar> make_targets(std::span<const ImageSample> batch) {
  LossTargets<Scalar> t;
  for (const auto& s : batch) t.labels.push_back(s.anomalous() ? 1 : 0);
  t.images = images_to_tensor<Scalar>(batch);
  t.masks = masks_to_tensor<Scalar>(batch);
  return t;
}

template <typename Scalar>
TrainHistory finetune(ApcNetwork<Scalar>& net, const DatasetSplit& split, const TrainConfig& cfg,
                      const AugmentationConfig& aug, const EpochCallback& on_epoch) {
  cfg.validate();
  aug.validate();
  if (split.train_normal.empty()) throw ConfigError("fine-tuning needs normal training samples");
  const auto start = std::chrono::steady_clock::now();
  Rng rng(mix_seed(cfg.seed, aug.rng_seed));
  AdamW<Scalar> opt(cfg.learning_rate, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.adam_eps);
  const nn::ParamList<Scalar> trainable = net.trainable_params(cfg.tasks);

  TrainHistory history;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto plans = balanced_epoch(int(split.train_normal.size()), int(split.train_anomalous.size()), cfg.batch_size,
                                      aug.cutpaste_enabled, rng);
    LossBreakdown sum;
    for (std::size_t b = 0; b < plans.size(); ++b) {
      const auto batch = materialize_batch(plans[b], split.train_normal, split.train_anomalous, aug, rng);
      const auto targets = make_targets<Scalar>(batch);
      net.zero_grad();
      LossGradients<Scalar> grads;
      LossBreakdown loss;
      try {
        const auto out = net.forward(targets.images, cfg.tasks, nn::Mode::Train);
        loss = composite_loss(out, targets, cfg.tasks, cfg.weights, &grads);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                           ": " + e.what());
      }
      net.backward(grads, cfg.tasks);
      opt.step(trainable);
      sum.l_cls += loss.l_cls;
      sum.l_segm += loss.l_segm;
      sum.l_recon += loss.l_recon;
    }
    const double n = double(plans.size());
    LossBreakdown mean{sum.l_cls / n, sum.l_segm / n, sum.l_recon / n, 0};
    mean.total = weighted_total(mean.l_cls, mean.l_segm, mean.l_recon, cfg.weights);
    history.epochs.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  history.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return history;
}

double finite_difference_check(const std::function<double()>& loss, std::span<double* const> params,
                               std::span<const double> analytic, double epsilon, double floor) {
  double worst = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    double& theta = *params[i];
    const double saved = theta;
    theta = saved + epsilon;
    const double up = loss();
    theta = saved - epsilon;
    const double down = loss();
    theta = saved;
    const double numeric = (up - down) / (2 * epsilon);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

GradCheckResult grad_check(ApcNetwork<double>& net, const LossTargets<double>& batch, const TaskMask& tasks,
                           const LossWeights& weights, const GradCheckOptions& opts) {
  // Training-mode forwards update running statistics; restore them afterwards.
  std::vector<ArrayX<double>> buffers;
  auto all = net.params();
  for (auto* p : all)
    if (p->buffer) buffers.push_back(p->value);

  net.zero_grad();
  LossGradients<double> grads;
  composite_loss(net.forward(batch.images, tasks, nn::Mode::Train), batch, tasks, weights, &grads);
  net.backward(grads, tasks);

  const auto trainable = net.trainable_params(tasks);
  Rng rng(opts.seed);
  std::vector<double*> sampled;
  std::vector<double> analytic;
  std::vector<std::string> names;
  for (int k = 0; k < opts.samples; ++k) {
    auto* p = trainable[std::size_t(k) % trainable.size()];
    const auto idx = std::uniform_int_distribution<Eigen::Index>(0, p->value.size() - 1)(rng);
    sampled.push_back(&p->value[idx]);
    analytic.push_back(p->grad[idx]);
    names.push_back(p->name + "[" + std::to_string(idx) + "]");
  }
  if (opts.inject_fault && !analytic.empty()) {
    std::size_t big = 0;
    for (std::size_t i = 1; i < analytic.size(); ++i)
      if (std::abs(analytic[i]) > std::abs(analytic[big])) big = i;
    analytic[big] *= 1.0 + opts.fault_scale;
  }

  auto loss = [&] { return composite_loss(net.forward(batch.images, tasks, nn::Mode::Train), batch, tasks, weights,
                                          static_cast<LossGradients<double>*>(nullptr)).total; };
  GradCheckResult result;
  result.checked = int(sampled.size());
  for (std::size_t i = 0; i < sampled.size(); ++i) {
    const double e = finite_difference_check(loss, std::span<double* const>(&sampled[i], 1),
                                             std::span<const double>(&analytic[i], 1), opts.epsilon, opts.floor);
    if (e > result.max_rel_error) {
      result.max_rel_error = e;
      result.worst_param = names[i];
    }
  }

  std::size_t b = 0;
  for (auto* p : all)
    if (p->buffer) p->value = buffers[b++];
  return result;
}

template class AdamW<float>;
template class AdamW<double>;
template LossTargets<float> make_targets(std::span<const ImageSample>);
template LossTargets<double> make_targets(std::span<const ImageSample>);
template TrainHistory finetune(ApcNetwork<float>&, const DatasetSplit&, const TrainConfig&, const AugmentationConfig&,
                               const EpochCallback&);
template TrainHistory finetune(ApcNetwork<double>&, const DatasetSplit&, const TrainConfig&, const AugmentationConfig&,
                               const EpochCallback&);

}  // namespace apc
