#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "apc/backbone.hpp"

namespace apc {

enum class SkipMode { TwoSkips, FourSkips };

/// Which auxiliary tasks contribute to the loss.
struct TaskMask {
  bool classification = true;
  bool segmentation = true;
  bool reconstruction = true;

  bool any() const { return classification || segmentation || reconstruction; }
  bool needs_tconv3() const { return segmentation || reconstruction; }
  static TaskMask none() { return {false, false, false}; }
  /// Parses "none", "all", or a comma list of cls/segm/recon.
  static TaskMask parse(const std::string& text);
  std::string str() const;
  bool operator==(const TaskMask&) const = default;
};

struct HeadConfig {
  int cls_conv_width = 64;
  int cls_fc_width = 256;
  int smooth_size = 5;
  double smooth_sigma = 1.0;
  double leaky_slope = 0.01;
};

struct LossWeights {
  double cls = 10.0;
  double segm = 1.0;
  double recon = 1.0;
};

struct NetworkConfig {
  BackboneConfig backbone = BackboneConfig::desk();
  SkipMode skip_mode = SkipMode::TwoSkips;
  HeadConfig heads;
};

template <typename Scalar>
struct DecoderFeatures {
  Tensor<Scalar> tconv1;  // stride 16, c3 channels
  Tensor<Scalar> tconv2;  // stride 8, c2 channels
  Tensor<Scalar> tconv3;  // stride 4, c1 channels; empty when not requested
  SkipMode skip_mode = SkipMode::TwoSkips;
};

template <typename Scalar>
struct HeadOutputs {
  Tensor<Scalar> class_prob;  // (n,1,1,1)
  Tensor<Scalar> seg_prob;    // (n,1,H,W)
  Tensor<Scalar> recon;       // (n,3,H,W)
};

struct LossBreakdown {
  double l_cls = 0, l_segm = 0, l_recon = 0, total = 0;
};

/// Supervision for one batch. Normal samples carry an all-zero mask.
template <typename Scalar>
struct LossTargets {
  std::vector<int> labels;
  Tensor<Scalar> masks;   // (n,1,H,W) in {0,1}
  Tensor<Scalar> images;  // (n,3,H,W)
};

template <typename Scalar>
struct LossGradients {
  Tensor<Scalar> class_prob, seg_prob, recon;
};

inline constexpr double kProbClamp = 1e-7;

/// total = w.cls*l_cls + w.segm*l_segm + w.recon*l_recon; inactive terms are zero.
inline double weighted_total(double l_cls, double l_segm, double l_recon, const LossWeights& w = {}) {
  return w.cls * l_cls + w.segm * l_segm + w.recon * l_recon;
}

/// Clamped binary cross-entropy of one probability against a {0,1} target.
inline double bce(double p, double target) {
  p = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return -(target * std::log(p) + (1.0 - target) * std::log(1.0 - p));
}

/// Evaluates the three auxiliary losses (batch means) and, when `grads` is non-null,
/// their gradients with respect to each head output. Throws NumericError on
/// non-finite head outputs, naming the head.
template <typename Scalar>
LossBreakdown composite_loss(const HeadOutputs<Scalar>& out, const LossTargets<Scalar>& target, const TaskMask& tasks,
                             const LossWeights& weights, LossGradients<Scalar>* grads);

/// Transposed-convolution upsampling step, optionally fused with an encoder skip
/// (channel concatenation followed by a 1x1 convolution).
template <typename Scalar>
class UpFuse {
 public:
  UpFuse(const std::string& name, int in, int out, bool with_skip, int skip_channels, nn::Rng& rng);

  Tensor<Scalar> forward(const Tensor<Scalar>& x, const Tensor<Scalar>* skip, nn::Mode mode);
  /// Returns (d_input, d_skip); d_skip is empty without a skip.
  std::pair<Tensor<Scalar>, Tensor<Scalar>> backward(const Tensor<Scalar>& dy);
  void collect(nn::ParamList<Scalar>& ps);
  bool has_skip() const { return static_cast<bool>(fuse_); }

 private:
  int out_;
  nn::ConvTranspose2x2<Scalar> up_;
  nn::ReLU<Scalar> up_act_;
  std::unique_ptr<nn::Conv2d<Scalar>> fuse_;
  nn::ReLU<Scalar> fuse_act_;
};

/// U-Net decoder over the staged encoder features.
template <typename Scalar>
class Decoder {
 public:
  Decoder(const std::array<int, 4>& channels, SkipMode mode, nn::Rng& rng);

  DecoderFeatures<Scalar> decode(const StagedFeatures<Scalar>& staged, nn::Mode mode, bool with_tconv3 = true);
  /// Returns per-stage gradients (empty where a stage is not read).
  std::array<Tensor<Scalar>, 4> backward(const Tensor<Scalar>& d_tconv2, const Tensor<Scalar>& d_tconv3);

  SkipMode skip_mode() const { return mode_; }
  bool reads_stage1() const { return mode_ == SkipMode::FourSkips; }
  nn::ParamList<Scalar> params_upper();  // tconv1 + tconv2
  nn::ParamList<Scalar> params_tconv3();

 private:
  std::array<int, 4> ch_;
  SkipMode mode_;
  UpFuse<Scalar> up1_, up2_, up3_;
  bool ran_tconv3_ = false;
};

template <typename Scalar>
class ClassifyHead {
 public:
  ClassifyHead(int in_channels, const HeadConfig& cfg, nn::Rng& rng);
  Tensor<Scalar> forward(const Tensor<Scalar>& tconv2, nn::Mode mode) { return net_.forward(tconv2, mode); }
  Tensor<Scalar> backward(const Tensor<Scalar>& d_prob) { return net_.backward(d_prob); }
  nn::ParamList<Scalar> params();

 private:
  nn::Sequential<Scalar> net_;
};

template <typename Scalar>
class SegmentHead {
 public:
  SegmentHead(int in_channels, const HeadConfig& cfg, nn::Rng& rng);
  Tensor<Scalar> forward(const Tensor<Scalar>& tconv3, nn::Mode mode) { return net_.forward(tconv3, mode); }
  Tensor<Scalar> backward(const Tensor<Scalar>& d_prob) { return net_.backward(d_prob); }
  nn::ParamList<Scalar> params();

 private:
  nn::Sequential<Scalar> net_;
};

template <typename Scalar>
class ReconstructHead {
 public:
  ReconstructHead(int in_channels, const HeadConfig& cfg, nn::Rng& rng);
  Tensor<Scalar> forward(const Tensor<Scalar>& tconv3, nn::Mode mode) { return net_.forward(tconv3, mode); }
  Tensor<Scalar> backward(const Tensor<Scalar>& d_recon) { return net_.backward(d_recon); }
  nn::ParamList<Scalar> params();

 private:
  nn::Sequential<Scalar> net_;
};

/// Encoder + decoder + the three auxiliary heads. Only the encoder is used at
/// memory-bank and scoring time.
template <typename Scalar>
class ApcNetwork {
 public:
  ApcNetwork(const NetworkConfig& cfg, std::uint64_t seed);

  HeadOutputs<Scalar> forward(const Tensor<Scalar>& images, const TaskMask& tasks, nn::Mode mode);
  void backward(const LossGradients<Scalar>& grads, const TaskMask& tasks);

  Backbone<Scalar>& encoder() { return encoder_; }
  Decoder<Scalar>& decoder() { return decoder_; }
  const NetworkConfig& config() const { return cfg_; }

  nn::ParamList<Scalar> params();
  /// Parameters that receive gradient under `tasks` (excludes normalization buffers).
  nn::ParamList<Scalar> trainable_params(const TaskMask& tasks);
  nn::ParamList<Scalar> head_params(char which);  // 'c', 's' or 'r'
  void zero_grad();

 private:
  NetworkConfig cfg_;
  nn::Rng rng_;
  Backbone<Scalar> encoder_;
  Decoder<Scalar> decoder_;
  ClassifyHead<Scalar> cls_;
  SegmentHead<Scalar> seg_;
  ReconstructHead<Scalar> recon_;
};

template <typename Scalar>
void save_network(ApcNetwork<Scalar>& net, const std::filesystem::path& path, const nlohmann::json& extra_meta = {});
/// Loads a checkpoint written by save_network. Shape or name mismatches throw IncompatibleError.
template <typename Scalar>
void load_network(ApcNetwork<Scalar>& net, const std::filesystem::path& path);

/// Hash of backbone architecture plus current encoder weights; stored in memory banks.
template <typename Scalar>
std::string feature_signature(ApcNetwork<Scalar>& net);

}  // namespace apc
