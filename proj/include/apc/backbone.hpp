#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "apc/nn.hpp"

namespace apc {

enum class BlockKind { Basic, Bottleneck };
enum class InitMode { Random, ExternalWeights };

struct BackboneConfig {
  std::string preset = "desk";
  BlockKind block = BlockKind::Basic;
  int stem_channels = 16;
  int stem_kernel = 3;
  std::array<int, 4> stage_blocks{1, 1, 1, 1};
  std::array<int, 4> stage_channels{16, 32, 64, 128};
  InitMode init_mode = InitMode::Random;
  std::string weights_path;

  /// Basic residual blocks 1/1/1/1, channels 16/32/64/128.
  static BackboneConfig desk();
  /// ResNet-50 staging: bottleneck blocks 3/4/6/3, channels 256/512/1024/2048.
  static BackboneConfig resnet50();
  static BackboneConfig from_preset(const std::string& name);

  void validate() const;
  /// Canonical architecture description; part of every feature signature.
  std::string describe() const;
};

inline constexpr std::array<int, 4> kStageStrides{4, 8, 16, 32};

template <typename Scalar>
struct StagedFeatures {
  std::array<Tensor<Scalar>, 4> maps;
};

/// Staged residual encoder. Stage i output has stride kStageStrides[i].
template <typename Scalar>
class Backbone {
 public:
  Backbone(const BackboneConfig& cfg, nn::Rng& rng);
  Backbone(const Backbone&) = delete;
  Backbone& operator=(const Backbone&) = delete;

  StagedFeatures<Scalar> forward_stages(const Tensor<Scalar>& images, nn::Mode mode);
  /// Backpropagates per-stage output gradients; empty tensors mean "no gradient".
  void backward_stages(std::array<Tensor<Scalar>, 4> grads);

  nn::ParamList<Scalar> params();
  const BackboneConfig& config() const { return cfg_; }

 private:
  BackboneConfig cfg_;
  nn::Sequential<Scalar> stem_;
  std::array<nn::Sequential<Scalar>, 4> stages_;
};

/// Throws ShapeError unless H and W are positive multiples of 32.
void check_input_geometry(int height, int width);

/// Writes the encoder parameters (and normalization statistics) to a weights container.
template <typename Scalar>
void save_weights(Backbone<Scalar>& model, const std::filesystem::path& path);

/// Replaces encoder parameters from a weights container. Throws NotFoundError for a
/// missing file and IncompatibleError naming the first layer whose shape differs.
template <typename Scalar>
void load_weights(Backbone<Scalar>& model, const std::filesystem::path& path);

}  // namespace apc
