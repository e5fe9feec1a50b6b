#include "apc/backbone.hpp"

#include <sstream>

#include "apc/container.hpp"

namespace apc {

namespace {

using nn::Mode;

template <typename Scalar>
class BasicBlock : public nn::Layer<Scalar> {
 public:
  BasicBlock(const std::string& name, int in, int out, int stride, nn::Rng& rng)
      : conv1_(name + ".conv1", in, out, 3, stride, 1, false, rng), bn1_(name + ".bn1", out),
        conv2_(name + ".conv2", out, out, 3, 1, 1, false, rng), bn2_(name + ".bn2", out) {
    if (stride != 1 || in != out) {
      down_conv_ = std::make_unique<nn::Conv2d<Scalar>>(name + ".downsample.conv", in, out, 1, stride, 0, false, rng);
      down_bn_ = std::make_unique<nn::BatchNorm2d<Scalar>>(name + ".downsample.bn", out);
    }
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) override {
    Tensor<Scalar> y = relu1_.forward(bn1_.forward(conv1_.forward(x, mode), mode), mode);
    y = bn2_.forward(conv2_.forward(y, mode), mode);
    if (down_conv_)
      y.data += down_bn_->forward(down_conv_->forward(x, mode), mode).data;
    else
      y.data += x.data;
    return relu_out_.forward(y, mode);
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    Tensor<Scalar> g = relu_out_.backward(dy);
    Tensor<Scalar> dx = conv1_.backward(bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(g)))));
    if (down_conv_)
      dx.data += down_conv_->backward(down_bn_->backward(g)).data;
    else
      dx.data += g.data;
    return dx;
  }

  void collect(nn::ParamList<Scalar>& ps) override {
    conv1_.collect(ps); bn1_.collect(ps); conv2_.collect(ps); bn2_.collect(ps);
    if (down_conv_) { down_conv_->collect(ps); down_bn_->collect(ps); }
  }

 private:
  nn::Conv2d<Scalar> conv1_;
  nn::BatchNorm2d<Scalar> bn1_;
  nn::ReLU<Scalar> relu1_;
  nn::Conv2d<Scalar> conv2_;
  nn::BatchNorm2d<Scalar> bn2_;
  std::unique_ptr<nn::Conv2d<Scalar>> down_conv_;
  std::unique_ptr<nn::BatchNorm2d<Scalar>> down_bn_;
  nn::ReLU<Scalar> relu_out_;
};

template <typename Scalar>
class BottleneckBlock : public nn::Layer<Scalar> {
 public:
  BottleneckBlock(const std::string& name, int in, int out, int stride, nn::Rng& rng) {
    const int mid = std::max(1, out / 4);
    body_.template add<nn::Conv2d<Scalar>>(name + ".conv1", in, mid, 1, 1, 0, false, rng);
    body_.template add<nn::BatchNorm2d<Scalar>>(name + ".bn1", mid);
    body_.template add<nn::ReLU<Scalar>>();
    body_.template add<nn::Conv2d<Scalar>>(name + ".conv2", mid, mid, 3, stride, 1, false, rng);
    body_.template add<nn::BatchNorm2d<Scalar>>(name + ".bn2", mid);
    body_.template add<nn::ReLU<Scalar>>();
    body_.template add<nn::Conv2d<Scalar>>(name + ".conv3", mid, out, 1, 1, 0, false, rng);
    body_.template add<nn::BatchNorm2d<Scalar>>(name + ".bn3", out);
    if (stride != 1 || in != out) {
      shortcut_ = std::make_unique<nn::Sequential<Scalar>>();
      shortcut_->template add<nn::Conv2d<Scalar>>(name + ".downsample.conv", in, out, 1, stride, 0, false, rng);
      shortcut_->template add<nn::BatchNorm2d<Scalar>>(name + ".downsample.bn", out);
    }
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) override {
    Tensor<Scalar> y = body_.forward(x, mode);
    y.data += shortcut_ ? shortcut_->forward(x, mode).data : x.data;
    return relu_out_.forward(y, mode);
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    Tensor<Scalar> g = relu_out_.backward(dy);
    Tensor<Scalar> dx = body_.backward(g);
    dx.data += shortcut_ ? shortcut_->backward(g).data : g.data;
    return dx;
  }

  void collect(nn::ParamList<Scalar>& ps) override {
    body_.collect(ps);
    if (shortcut_) shortcut_->collect(ps);
  }

 private:
  nn::Sequential<Scalar> body_;
  std::unique_ptr<nn::Sequential<Scalar>> shortcut_;
  nn::ReLU<Scalar> relu_out_;
};

std::string block_name(BlockKind k) { return k == BlockKind::Basic ? "basic" : "bottleneck"; }

}  // namespace

BackboneConfig BackboneConfig::desk() { return BackboneConfig{}; }

BackboneConfig BackboneConfig::resnet50() {
  BackboneConfig c;
  c.preset = "resnet50";
  c.block = BlockKind::Bottleneck;
  c.stem_channels = 64;
  c.stem_kernel = 7;
  c.stage_blocks = {3, 4, 6, 3};
  c.stage_channels = {256, 512, 1024, 2048};
  return c;
}

BackboneConfig BackboneConfig::from_preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "resnet50" || name == "full") return resnet50();
  throw ConfigError("unknown backbone preset '" + name + "' (expected desk or resnet50)");
}

void BackboneConfig::validate() const {
  for (int i = 0; i < 4; ++i) {
    if (stage_blocks[i] < 1) throw ConfigError("stage block counts must be >= 1");
    if (stage_channels[i] < 1 || (i > 0 && stage_channels[i] <= stage_channels[i - 1]))
      throw ConfigError("stage channels must be strictly increasing");
  }
  if (stem_channels < 1 || stem_kernel < 1 || stem_kernel % 2 == 0) throw ConfigError("invalid stem configuration");
  if (init_mode == InitMode::ExternalWeights && weights_path.empty())
    throw ConfigError("init_mode external-weights requires a weights path");
}

std::string BackboneConfig::describe() const {
  std::ostringstream s;
  s << block_name(block) << ";stem=" << stem_channels << "x" << stem_kernel << ";blocks=";
  for (int b : stage_blocks) s << b << ",";
  s << ";channels=";
  for (int c : stage_channels) s << c << ",";
  return s.str();
}

void check_input_geometry(int height, int width) {
  if (height <= 0 || width <= 0 || height % 32 != 0 || width % 32 != 0)
    throw ShapeError("input size " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not a positive multiple of 32");
}

template <typename Scalar>
Backbone<Scalar>::Backbone(const BackboneConfig& cfg, nn::Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  stem_.template add<nn::Conv2d<Scalar>>("encoder.stem.conv", 3, cfg_.stem_channels, cfg_.stem_kernel, 2,
                                         cfg_.stem_kernel / 2, false, rng);
  stem_.template add<nn::BatchNorm2d<Scalar>>("encoder.stem.bn", cfg_.stem_channels);
  stem_.template add<nn::ReLU<Scalar>>();
  stem_.template add<nn::MaxPool2d<Scalar>>(3, 2, 1);
  int in = cfg_.stem_channels;
  for (int s = 0; s < 4; ++s) {
    for (int b = 0; b < cfg_.stage_blocks[s]; ++b) {
      const std::string name = "encoder.stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
      const int stride = (b == 0 && s > 0) ? 2 : 1;
      if (cfg_.block == BlockKind::Basic)
        stages_[s].template add<BasicBlock<Scalar>>(name, in, cfg_.stage_channels[s], stride, rng);
      else
        stages_[s].template add<BottleneckBlock<Scalar>>(name, in, cfg_.stage_channels[s], stride, rng);
      in = cfg_.stage_channels[s];
    }
  }
}

template <typename Scalar>
StagedFeatures<Scalar> Backbone<Scalar>::forward_stages(const Tensor<Scalar>& images, nn::Mode mode) {
  if (images.c != 3) throw ShapeError("backbone expects 3-channel input, got " + images.shape_string());
  check_input_geometry(images.h, images.w);
  StagedFeatures<Scalar> out;
  Tensor<Scalar> x = stem_.forward(images, mode);
  for (int s = 0; s < 4; ++s) {
    x = stages_[s].forward(x, mode);
    out.maps[s] = x;
  }
  return out;
}

template <typename Scalar>
void Backbone<Scalar>::backward_stages(std::array<Tensor<Scalar>, 4> grads) {
  Tensor<Scalar> g;
  for (int s = 3; s >= 0; --s) {
    if (!grads[s].empty()) {
      if (g.empty())
        g = std::move(grads[s]);
      else
        g.data += grads[s].data;
    }
    if (!g.empty()) g = stages_[s].backward(g);
  }
  if (!g.empty()) stem_.backward(g);
}

template <typename Scalar>
nn::ParamList<Scalar> Backbone<Scalar>::params() {
  nn::ParamList<Scalar> ps;
  stem_.collect(ps);
  for (auto& s : stages_) s.collect(ps);
  return ps;
}

template <typename Scalar>
void save_weights(Backbone<Scalar>& model, const std::filesystem::path& path) {
  Container c;
  c.meta["backbone"] = model.config().describe();
  for (auto* p : model.params()) {
    NamedArray a{p->name, p->shape, {}};
    a.data.resize(std::size_t(p->value.size()));
    for (Eigen::Index i = 0; i < p->value.size(); ++i) a.data[std::size_t(i)] = float(p->value[i]);
    c.arrays.push_back(std::move(a));
  }
  write_container(path, kWeightsMagic, c);
}

template <typename Scalar>
void load_weights(Backbone<Scalar>& model, const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw NotFoundError("weights file not found: '" + path.string() + "'");
  const Container c = read_container(path, kWeightsMagic);
  auto params = model.params();
  // Validate everything before touching the model so a failed load leaves it intact.
  for (auto* p : params) {
    const NamedArray* a = c.find(p->name);
    if (!a) throw IncompatibleError("weights file lacks layer '" + p->name + "'");
    if (a->shape != p->shape) {
      std::ostringstream s;
      s << "incompatible weights: layer '" << p->name << "' has shape [";
      for (int d : a->shape) s << d << ",";
      s << "] in file but [";
      for (int d : p->shape) s << d << ",";
      s << "] in model";
      throw IncompatibleError(s.str());
    }
  }
  for (auto* p : params) {
    const NamedArray& a = c.at(p->name);
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value[i] = Scalar(a.data[std::size_t(i)]);
  }
}

template class Backbone<float>;
template class Backbone<double>;
template void save_weights(Backbone<float>&, const std::filesystem::path&);
template void save_weights(Backbone<double>&, const std::filesystem::path&);
template void load_weights(Backbone<float>&, const std::filesystem::path&);
template void load_weights(Backbone<double>&, const std::filesystem::path&);

}  // namespace apc
