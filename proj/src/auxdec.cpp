#include "apc/auxdec.hpp"

#include <sstream>

#include "apc/container.hpp"

namespace apc {

using nn::Mode;

TaskMask TaskMask::parse(const std::string& text) {
  if (text == "none" || text.empty()) return none();
  if (text == "all") return {};
  TaskMask m = none();
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok == "cls" || tok == "classification") m.classification = true;
    else if (tok == "segm" || tok == "seg" || tok == "segmentation") m.segmentation = true;
    else if (tok == "recon" || tok == "reconstruction") m.reconstruction = true;
    else throw ConfigError("unknown task '" + tok + "' (expected cls, segm, recon)");
  }
  return m;
}

std::string TaskMask::str() const {
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += ",";
    s += name;
  };
  add(classification, "cls");
  add(segmentation, "segm");
  add(reconstruction, "recon");
  return s.empty() ? "none" : s;
}

namespace {

template <typename Scalar>
void require_finite(const Tensor<Scalar>& t, const char* head) {
  if (!t.data.allFinite()) throw NumericError(std::string(head) + " head produced a non-finite output");
}

template <typename Scalar>
void append(nn::ParamList<Scalar>& dst, const nn::ParamList<Scalar>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

}  // namespace

template <typename Scalar>
LossBreakdown composite_loss(const HeadOutputs<Scalar>& out, const LossTargets<Scalar>& target, const TaskMask& tasks,
                             const LossWeights& weights, LossGradients<Scalar>* grads) {
  LossBreakdown loss;
  const double lo = kProbClamp, hi = 1.0 - kProbClamp;

  if (tasks.classification) {
    require_finite(out.class_prob, "classification");
    const int n = out.class_prob.n;
    if (int(target.labels.size()) != n) throw ShapeError("classification: label count does not match batch");
    if (grads) grads->class_prob = Tensor<Scalar>::zeros_like(out.class_prob);
    for (int i = 0; i < n; ++i) {
      const double p = double(out.class_prob.data[i]);
      const double y = target.labels[std::size_t(i)];
      loss.l_cls += bce(p, y);
      if (grads && p > lo && p < hi)
        grads->class_prob.data[i] = Scalar(weights.cls * (-y / p + (1 - y) / (1 - p)) / n);
    }
    loss.l_cls /= n;
  }

  if (tasks.segmentation) {
    require_finite(out.seg_prob, "segmentation");
    require_same_shape(out.seg_prob, target.masks, "segmentation target");
    const double count = double(out.seg_prob.size());
    if (grads) grads->seg_prob = Tensor<Scalar>::zeros_like(out.seg_prob);
    double sum = 0;
    for (Eigen::Index i = 0; i < out.seg_prob.size(); ++i) {
      const double p = double(out.seg_prob.data[i]);
      const double y = double(target.masks.data[i]);
      sum += bce(p, y);
      if (grads && p > lo && p < hi)
        grads->seg_prob.data[i] = Scalar(weights.segm * (-y / p + (1 - y) / (1 - p)) / count);
    }
    loss.l_segm = sum / count;
  }

  if (tasks.reconstruction) {
    require_finite(out.recon, "reconstruction");
    require_same_shape(out.recon, target.images, "reconstruction target");
    const double count = double(out.recon.size());
    const ArrayX<Scalar> diff = out.recon.data - target.images.data;
    loss.l_recon = diff.template cast<double>().square().sum() / count;
    if (grads) {
      grads->recon = Tensor<Scalar>::zeros_like(out.recon);
      grads->recon.data = diff * Scalar(2.0 * weights.recon / count);
    }
  }

  loss.total = weighted_total(loss.l_cls, loss.l_segm, loss.l_recon, weights);
  if (!std::isfinite(loss.total)) throw NumericError("composite loss is not finite");
  return loss;
}

// ---------------------------------------------------------------------------

template <typename Scalar>
UpFuse<Scalar>::UpFuse(const std::string& name, int in, int out, bool with_skip, int skip_channels, nn::Rng& rng)
    : out_(out), up_(name + ".up", in, out, rng) {
  if (with_skip) fuse_ = std::make_unique<nn::Conv2d<Scalar>>(name + ".fuse", out + skip_channels, out, 1, 1, 0, true, rng);
}

template <typename Scalar>
Tensor<Scalar> UpFuse<Scalar>::forward(const Tensor<Scalar>& x, const Tensor<Scalar>* skip, Mode mode) {
  Tensor<Scalar> up = up_act_.forward(up_.forward(x, mode), mode);
  if (!fuse_) return up;
  if (!skip || skip->h != up.h || skip->w != up.w || skip->n != up.n)
    throw ShapeError("decoder skip " + (skip ? skip->shape_string() : std::string("(none)")) +
                     " does not match upsampled map " + up.shape_string());
  return fuse_act_.forward(fuse_->forward(concat_channels(up, *skip), mode), mode);
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> UpFuse<Scalar>::backward(const Tensor<Scalar>& dy) {
  Tensor<Scalar> d_up, d_skip;
  if (fuse_) {
    auto parts = split_channels(fuse_->backward(fuse_act_.backward(dy)), out_);
    d_up = std::move(parts.first);
    d_skip = std::move(parts.second);
  } else {
    d_up = dy;
  }
  return {up_.backward(up_act_.backward(d_up)), std::move(d_skip)};
}

template <typename Scalar>
void UpFuse<Scalar>::collect(nn::ParamList<Scalar>& ps) {
  up_.collect(ps);
  if (fuse_) fuse_->collect(ps);
}

template <typename Scalar>
Decoder<Scalar>::Decoder(const std::array<int, 4>& ch, SkipMode mode, nn::Rng& rng)
    : ch_(ch), mode_(mode),
      up1_("decoder.tconv1", ch[3], ch[2], true, ch[2], rng),
      up2_("decoder.tconv2", ch[2], ch[1], true, ch[1], rng),
      up3_("decoder.tconv3", ch[1], ch[0], mode == SkipMode::FourSkips, ch[0], rng) {}

template <typename Scalar>
DecoderFeatures<Scalar> Decoder<Scalar>::decode(const StagedFeatures<Scalar>& staged, Mode mode, bool with_tconv3) {
  const auto& m = staged.maps;
  for (int s = 0; s < 3; ++s)
    if (m[s].h != 2 * m[s + 1].h || m[s].w != 2 * m[s + 1].w || m[s].c != ch_[s] || m[s].n != m[s + 1].n)
      throw ShapeError("decoder: inconsistent stage shapes " + m[s].shape_string() + " / " + m[s + 1].shape_string());
  if (m[3].c != ch_[3]) throw ShapeError("decoder: stage-4 channels " + m[3].shape_string());
  DecoderFeatures<Scalar> out;
  out.skip_mode = mode_;
  out.tconv1 = up1_.forward(m[3], &m[2], mode);
  out.tconv2 = up2_.forward(out.tconv1, &m[1], mode);
  ran_tconv3_ = with_tconv3;
  if (with_tconv3) out.tconv3 = up3_.forward(out.tconv2, mode_ == SkipMode::FourSkips ? &m[0] : nullptr, mode);
  return out;
}

template <typename Scalar>
std::array<Tensor<Scalar>, 4> Decoder<Scalar>::backward(const Tensor<Scalar>& d_tconv2, const Tensor<Scalar>& d_tconv3) {
  std::array<Tensor<Scalar>, 4> g;
  Tensor<Scalar> d2 = d_tconv2;
  if (!d_tconv3.empty()) {
    auto [d_in, d_skip] = up3_.backward(d_tconv3);
    g[0] = std::move(d_skip);
    if (d2.empty())
      d2 = std::move(d_in);
    else
      d2.data += d_in.data;
  }
  if (d2.empty()) return g;
  auto [d1, d_s2] = up2_.backward(d2);
  g[1] = std::move(d_s2);
  auto [d_s4, d_s3] = up1_.backward(d1);
  g[2] = std::move(d_s3);
  g[3] = std::move(d_s4);
  return g;
}

template <typename Scalar>
nn::ParamList<Scalar> Decoder<Scalar>::params_upper() {
  nn::ParamList<Scalar> ps;
  up1_.collect(ps);
  up2_.collect(ps);
  return ps;
}

template <typename Scalar>
nn::ParamList<Scalar> Decoder<Scalar>::params_tconv3() {
  nn::ParamList<Scalar> ps;
  up3_.collect(ps);
  return ps;
}

template <typename Scalar>
ClassifyHead<Scalar>::ClassifyHead(int in, const HeadConfig& cfg, nn::Rng& rng) {
  for (int i = 0; i < 3; ++i) {
    net_.template add<nn::Conv2d<Scalar>>("heads.cls.conv" + std::to_string(i + 1), i == 0 ? in : cfg.cls_conv_width,
                                          cfg.cls_conv_width, 3, 1, 1, true, rng);
    net_.template add<nn::ReLU<Scalar>>();
    net_.template add<nn::MaxPool2d<Scalar>>(2, 2, 0, true);
  }
  net_.template add<nn::GlobalAvgPool<Scalar>>();
  net_.template add<nn::Linear<Scalar>>("heads.cls.fc1", cfg.cls_conv_width, cfg.cls_fc_width, rng);
  net_.template add<nn::ReLU<Scalar>>();
  net_.template add<nn::Linear<Scalar>>("heads.cls.fc2", cfg.cls_fc_width, 1, rng);
  net_.template add<nn::Sigmoid<Scalar>>();
}

template <typename Scalar>
nn::ParamList<Scalar> ClassifyHead<Scalar>::params() {
  nn::ParamList<Scalar> ps;
  net_.collect(ps);
  return ps;
}

template <typename Scalar>
SegmentHead<Scalar>::SegmentHead(int in, const HeadConfig& cfg, nn::Rng& rng) {
  net_.template add<nn::ConvTranspose2x2<Scalar>>("heads.segm.up", in, in, rng);
  net_.template add<nn::GaussianBlur<Scalar>>(cfg.smooth_size, cfg.smooth_sigma);
  net_.template add<nn::Conv2d<Scalar>>("heads.segm.conv", in, 1, 3, 1, 1, true, rng);
  net_.template add<nn::Upsample<Scalar>>(2);
  net_.template add<nn::Sigmoid<Scalar>>();
}

template <typename Scalar>
nn::ParamList<Scalar> SegmentHead<Scalar>::params() {
  nn::ParamList<Scalar> ps;
  net_.collect(ps);
  return ps;
}

template <typename Scalar>
ReconstructHead<Scalar>::ReconstructHead(int in, const HeadConfig& cfg, nn::Rng& rng) {
  net_.template add<nn::ConvTranspose2x2<Scalar>>("heads.recon.up", in, in, rng);
  net_.template add<nn::GaussianBlur<Scalar>>(cfg.smooth_size, cfg.smooth_sigma);
  net_.template add<nn::Conv2d<Scalar>>("heads.recon.conv1", in, in, 3, 1, 1, true, rng);
  net_.template add<nn::LeakyReLU<Scalar>>(cfg.leaky_slope);
  net_.template add<nn::GaussianBlur<Scalar>>(cfg.smooth_size, cfg.smooth_sigma);
  net_.template add<nn::Conv2d<Scalar>>("heads.recon.conv2", in, 3, 3, 1, 1, true, rng);
  net_.template add<nn::LeakyReLU<Scalar>>(cfg.leaky_slope);
  net_.template add<nn::Upsample<Scalar>>(2);
}

template <typename Scalar>
nn::ParamList<Scalar> ReconstructHead<Scalar>::params() {
  nn::ParamList<Scalar> ps;
  net_.collect(ps);
  return ps;
}

// ---------------------------------------------------------------------------

template <typename Scalar>
ApcNetwork<Scalar>::ApcNetwork(const NetworkConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), rng_(seed), encoder_(cfg.backbone, rng_),
      decoder_(cfg.backbone.stage_channels, cfg.skip_mode, rng_),
      cls_(cfg.backbone.stage_channels[1], cfg.heads, rng_),
      seg_(cfg.backbone.stage_channels[0], cfg.heads, rng_),
      recon_(cfg.backbone.stage_channels[0], cfg.heads, rng_) {}

template <typename Scalar>
HeadOutputs<Scalar> ApcNetwork<Scalar>::forward(const Tensor<Scalar>& images, const TaskMask& tasks, Mode mode) {
  HeadOutputs<Scalar> out;
  auto staged = encoder_.forward_stages(images, mode);
  if (!tasks.any()) return out;
  auto dec = decoder_.decode(staged, mode, tasks.needs_tconv3());
  if (tasks.classification) out.class_prob = cls_.forward(dec.tconv2, mode);
  if (tasks.segmentation) out.seg_prob = seg_.forward(dec.tconv3, mode);
  if (tasks.reconstruction) out.recon = recon_.forward(dec.tconv3, mode);
  return out;
}

template <typename Scalar>
void ApcNetwork<Scalar>::backward(const LossGradients<Scalar>& grads, const TaskMask& tasks) {
  Tensor<Scalar> d2, d3;
  if (tasks.classification) d2 = cls_.backward(grads.class_prob);
  if (tasks.segmentation) d3 = seg_.backward(grads.seg_prob);
  if (tasks.reconstruction) {
    Tensor<Scalar> dr = recon_.backward(grads.recon);
    if (d3.empty())
      d3 = std::move(dr);
    else
      d3.data += dr.data;
  }
  encoder_.backward_stages(decoder_.backward(d2, d3));
}

template <typename Scalar>
nn::ParamList<Scalar> ApcNetwork<Scalar>::params() {
  nn::ParamList<Scalar> ps = encoder_.params();
  append(ps, decoder_.params_upper());
  append(ps, decoder_.params_tconv3());
  append(ps, cls_.params());
  append(ps, seg_.params());
  append(ps, recon_.params());
  return ps;
}

template <typename Scalar>
nn::ParamList<Scalar> ApcNetwork<Scalar>::head_params(char which) {
  switch (which) {
    case 'c': return cls_.params();
    case 's': return seg_.params();
    case 'r': return recon_.params();
    default: throw ConfigError("unknown head");
  }
}

template <typename Scalar>
nn::ParamList<Scalar> ApcNetwork<Scalar>::trainable_params(const TaskMask& tasks) {
  nn::ParamList<Scalar> ps;
  if (!tasks.any()) return ps;
  append(ps, encoder_.params());
  append(ps, decoder_.params_upper());
  if (tasks.needs_tconv3()) append(ps, decoder_.params_tconv3());
  if (tasks.classification) append(ps, cls_.params());
  if (tasks.segmentation) append(ps, seg_.params());
  if (tasks.reconstruction) append(ps, recon_.params());
  std::erase_if(ps, [](const nn::Param<Scalar>* p) { return p->buffer; });
  return ps;
}

template <typename Scalar>
void ApcNetwork<Scalar>::zero_grad() {
  for (auto* p : params()) p->grad.setZero();
}

namespace {

nlohmann::json network_meta(const NetworkConfig& cfg) {
  return {{"backbone", cfg.backbone.describe()},
          {"skip_mode", cfg.skip_mode == SkipMode::TwoSkips ? "two-skips" : "four-skips"}};
}

}  // namespace

template <typename Scalar>
void save_network(ApcNetwork<Scalar>& net, const std::filesystem::path& path, const nlohmann::json& extra_meta) {
  Container c;
  c.meta = network_meta(net.config());
  if (extra_meta.is_object())
    for (auto it = extra_meta.begin(); it != extra_meta.end(); ++it) c.meta[it.key()] = it.value();
  for (auto* p : net.params()) {
    NamedArray a{p->name, p->shape, std::vector<float>(std::size_t(p->value.size()))};
    for (Eigen::Index i = 0; i < p->value.size(); ++i) a.data[std::size_t(i)] = float(p->value[i]);
    c.arrays.push_back(std::move(a));
  }
  write_container(path, kWeightsMagic, c);
}

template <typename Scalar>
void load_network(ApcNetwork<Scalar>& net, const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw NotFoundError("checkpoint not found: '" + path.string() + "'");
  const Container c = read_container(path, kWeightsMagic);
  const std::string expected = net.config().backbone.describe();
  const std::string found = c.meta.value("backbone", std::string());
  if (found != expected)
    throw IncompatibleError("checkpoint backbone '" + found + "' does not match configured '" + expected + "'");
  auto params = net.params();
  for (auto* p : params) {
    const NamedArray* a = c.find(p->name);
    if (!a) throw IncompatibleError("checkpoint lacks layer '" + p->name + "'");
    if (a->shape != p->shape) throw IncompatibleError("checkpoint layer '" + p->name + "' has a different shape");
  }
  for (auto* p : params) {
    const NamedArray& a = c.at(p->name);
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value[i] = Scalar(a.data[std::size_t(i)]);
  }
}

template <typename Scalar>
std::string feature_signature(ApcNetwork<Scalar>& net) {
  Fnv1a h;
  h.update(net.config().backbone.describe());
  for (auto* p : net.encoder().params()) {
    h.update(p->name);
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const float v = float(p->value[i]);
      h.update(&v, sizeof v);
    }
  }
  return h.hex();
}

#define APC_INSTANTIATE(S)                                                                                       \
  template LossBreakdown composite_loss(const HeadOutputs<S>&, const LossTargets<S>&, const TaskMask&,           \
                                        const LossWeights&, LossGradients<S>*);                                  \
  template class UpFuse<S>;                                                                                      \
  template class Decoder<S>;                                                                                     \
  template class ClassifyHead<S>;                                                                                \
  template class SegmentHead<S>;                                                                                 \
  template class ReconstructHead<S>;                                                                             \
  template class ApcNetwork<S>;                                                                                  \
  template void save_network(ApcNetwork<S>&, const std::filesystem::path&, const nlohmann::json&);               \
  template void load_network(ApcNetwork<S>&, const std::filesystem::path&);                                      \
  template std::string feature_signature(ApcNetwork<S>&);

APC_INSTANTIATE(float)
APC_INSTANTIATE(double)

}  // namespace apc
