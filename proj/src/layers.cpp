#include "gipad/layers.hpp"

#include <cmath>

#include "gipad/error.hpp"

namespace gipad {

namespace {

Tensor4 kaiming_uniform(Shape4 shape, int fan_in, Rng& rng) {
  Tensor4 t(shape);
  const double bound = std::sqrt(6.0 / fan_in);
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

void add_into(Param& p, std::span<const double> g) {
  for (std::size_t i = 0; i < g.size(); ++i) p.grad[i] += g[i];
}

}  // namespace

// --- Conv2d -----------------------------------------------------------------

Conv2d::Conv2d(std::string name, int c_in, int c_out, int k, int stride, int groups, bool bias,
               Rng& rng)
    : c_in_(c_in), c_out_(c_out), k_(k), spec_{groups, stride, k / 2}, has_bias_(bias) {
  if (groups < 1 || c_in % groups != 0 || c_out % groups != 0) {
    throw ConfigError(name + ": channels " + std::to_string(c_in) + "->" + std::to_string(c_out) +
                      " not divisible by " + std::to_string(groups) + " groups");
  }
  const int cin_pg = c_in / groups;
  weight_ = Param(name + ".weight", kaiming_uniform({c_out, cin_pg, k, k}, cin_pg * k * k, rng));
  if (bias) bias_ = Param(name + ".bias", Tensor4(c_out, 1, 1, 1));
}

Tensor4 Conv2d::infer(const Tensor4& x, FieldSink*) const {
  std::span<const double> b = has_bias_ ? bias_.value.data() : std::span<const double>{};
  if (pointwise()) return pointwise_conv(x, weight_.value, b);
  return conv2d(x, weight_.value, b, spec_);
}

Tensor4 Conv2d::forward(const Tensor4& x, Mode) {
  x_ = x;
  return infer(x, nullptr);
}

Tensor4 Conv2d::backward(const Tensor4& grad_y) {
  if (pointwise()) {
    PointwiseGrads g = pointwise_conv_backward(grad_y, x_, weight_.value);
    weight_.grad += g.grad_weights;
    if (has_bias_) add_into(bias_, g.grad_bias);
    return std::move(g.grad_x);
  }
  ConvGrads g = conv2d_backward(grad_y, x_, weight_.value, spec_);
  weight_.grad += g.grad_kernel;
  if (has_bias_) add_into(bias_, g.grad_bias);
  return std::move(g.grad_x);
}

Shape4 Conv2d::output_shape(const Shape4& in) const {
  return {in.n, c_out_, conv_output_size(in.h, k_, spec_.stride, spec_.pad),
          conv_output_size(in.w, k_, spec_.stride, spec_.pad)};
}

void Conv2d::collect_params(std::vector<Param*>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

void Conv2d::describe(const Shape4& in, std::vector<CostEntry>& out) const {
  LayerDesc d;
  d.c_in = c_in_;
  d.c_out = c_out_;
  d.k = k_;
  d.stride = spec_.stride;
  d.groups = spec_.groups;
  if (k_ == 1 && spec_.groups == 1) {
    d.kind = LayerKind::Pointwise;
  } else if (spec_.groups == c_in_ && c_in_ == c_out_) {
    d.kind = LayerKind::Depthwise;
  } else {
    d.kind = LayerKind::Conv;
  }
  out.push_back({d, in});
}

// --- BatchNorm2d -------------------------------------------------------------

BatchNorm2d::BatchNorm2d(std::string name, int channels)
    : name_(std::move(name)),
      gamma_(name_ + ".gamma", Tensor4(channels, 1, 1, 1, 1.0)),
      beta_(name_ + ".beta", Tensor4(channels, 1, 1, 1, 0.0)),
      running_mean_(channels, 1, 1, 1, 0.0),
      running_var_(channels, 1, 1, 1, 1.0) {}

Tensor4 BatchNorm2d::forward(const Tensor4& x, Mode mode) {
  BatchNormStats stats{gamma_.value.data(), beta_.value.data(), running_mean_.data(),
                       running_var_.data()};
  return batch_norm(x, stats, mode, &ctx_);
}

Tensor4 BatchNorm2d::backward(const Tensor4& grad_y) {
  BatchNormGrads g = batch_norm_backward(grad_y, gamma_.value.data(), ctx_);
  add_into(gamma_, g.grad_gamma);
  add_into(beta_, g.grad_beta);
  return std::move(g.grad_x);
}

Tensor4 BatchNorm2d::infer(const Tensor4& x, FieldSink*) const {
  return batch_norm_infer(x, gamma_.value.data(), beta_.value.data(), running_mean_.data(),
                          running_var_.data());
}

void BatchNorm2d::collect_params(std::vector<Param*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

void BatchNorm2d::collect_buffers(std::vector<NamedBuffer>& out) {
  out.push_back({name_ + ".running_mean", &running_mean_});
  out.push_back({name_ + ".running_var", &running_var_});
}

// --- Act ---------------------------------------------------------------------

Tensor4 Act::forward(const Tensor4& x, Mode) {
  x_ = x;
  return activation(x, act_);
}

Tensor4 Act::backward(const Tensor4& grad_y) { return activation_backward(grad_y, x_, act_); }

Tensor4 Act::infer(const Tensor4& x, FieldSink*) const { return activation(x, act_); }

// --- Sequential --------------------------------------------------------------

Tensor4 Sequential::forward(const Tensor4& x, Mode mode) {
  Tensor4 h = x;
  for (auto& l : layers_) h = l->forward(h, mode);
  return h;
}

Tensor4 Sequential::backward(const Tensor4& grad_y) {
  Tensor4 g = grad_y;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

Tensor4 Sequential::infer(const Tensor4& x, FieldSink* sink) const {
  Tensor4 h = x;
  for (const auto& l : layers_) h = l->infer(h, sink);
  return h;
}

Shape4 Sequential::output_shape(const Shape4& in) const {
  Shape4 s = in;
  for (const auto& l : layers_) s = l->output_shape(s);
  return s;
}

void Sequential::collect_params(std::vector<Param*>& out) {
  for (auto& l : layers_) l->collect_params(out);
}

void Sequential::collect_buffers(std::vector<NamedBuffer>& out) {
  for (auto& l : layers_) l->collect_buffers(out);
}

void Sequential::describe(const Shape4& in, std::vector<CostEntry>& out) const {
  Shape4 s = in;
  for (const auto& l : layers_) {
    l->describe(s, out);
    s = l->output_shape(s);
  }
}

// --- SqueezeExcite -----------------------------------------------------------

SqueezeExcite::SqueezeExcite(std::string name, int channels, int squeeze_channels, Rng& rng)
    : channels_(channels),
      squeeze_(squeeze_channels),
      fc1_w_(name + ".fc1.weight", kaiming_uniform({squeeze_channels, channels, 1, 1}, channels, rng)),
      fc1_b_(name + ".fc1.bias", Tensor4(squeeze_channels, 1, 1, 1)),
      fc2_w_(name + ".fc2.weight",
             kaiming_uniform({channels, squeeze_channels, 1, 1}, squeeze_channels, rng)),
      fc2_b_(name + ".fc2.bias", Tensor4(channels, 1, 1, 1)) {}

Tensor4 SqueezeExcite::forward(const Tensor4& x, Mode) {
  x_ = x;
  pooled_ = global_avg_pool(x);
  hidden_pre_ = pointwise_conv(pooled_, fc1_w_.value, fc1_b_.value.data());
  hidden_ = activation(hidden_pre_, Activation::Relu);
  gate_pre_ = pointwise_conv(hidden_, fc2_w_.value, fc2_b_.value.data());
  gate_ = activation(gate_pre_, Activation::Hardsigmoid);
  return channel_scale(x, gate_);
}

Tensor4 SqueezeExcite::backward(const Tensor4& grad_y) {
  const int hw = x_.h() * x_.w();
  Tensor4 grad_x = channel_scale(grad_y, gate_);
  Tensor4 grad_gate(gate_.shape());
  for (int n = 0; n < x_.n(); ++n)
    for (int c = 0; c < x_.c(); ++c) {
      const double* gy = grad_y.plane(n, c);
      const double* xv = x_.plane(n, c);
      double s = 0.0;
      for (int i = 0; i < hw; ++i) s += gy[i] * xv[i];
      grad_gate(n, c, 0, 0) = s;
    }
  Tensor4 g_gate_pre = activation_backward(grad_gate, gate_pre_, Activation::Hardsigmoid);
  PointwiseGrads fc2 = pointwise_conv_backward(g_gate_pre, hidden_, fc2_w_.value);
  fc2_w_.grad += fc2.grad_weights;
  add_into(fc2_b_, fc2.grad_bias);
  Tensor4 g_hidden_pre = activation_backward(fc2.grad_x, hidden_pre_, Activation::Relu);
  PointwiseGrads fc1 = pointwise_conv_backward(g_hidden_pre, pooled_, fc1_w_.value);
  fc1_w_.grad += fc1.grad_weights;
  add_into(fc1_b_, fc1.grad_bias);
  grad_x += global_avg_pool_backward(fc1.grad_x, x_.shape());
  return grad_x;
}

Tensor4 SqueezeExcite::infer(const Tensor4& x, FieldSink*) const {
  Tensor4 pooled = global_avg_pool(x);
  Tensor4 hidden =
      activation(pointwise_conv(pooled, fc1_w_.value, fc1_b_.value.data()), Activation::Relu);
  Tensor4 gate = activation(pointwise_conv(hidden, fc2_w_.value, fc2_b_.value.data()),
                            Activation::Hardsigmoid);
  return channel_scale(x, gate);
}

void SqueezeExcite::collect_params(std::vector<Param*>& out) {
  out.insert(out.end(), {&fc1_w_, &fc1_b_, &fc2_w_, &fc2_b_});
}

void SqueezeExcite::describe(const Shape4& in, std::vector<CostEntry>& out) const {
  LayerDesc fc1{LayerKind::Linear, channels_, squeeze_};
  LayerDesc fc2{LayerKind::Linear, squeeze_, channels_};
  out.push_back({fc1, {in.n, channels_, 1, 1}});
  out.push_back({fc2, {in.n, squeeze_, 1, 1}});
}

// --- InvertedResidual --------------------------------------------------------

InvertedResidual::InvertedResidual(std::string name, int c_in, int expand, int c_out, int k,
                                   int stride, bool use_se, Activation act, Rng& rng)
    : residual_(stride == 1 && c_in == c_out) {
  if (expand != c_in) {
    body_.add(std::make_unique<Conv2d>(name + ".expand", c_in, expand, 1, 1, 1, false, rng));
    body_.add(std::make_unique<BatchNorm2d>(name + ".expand_bn", expand));
    body_.add(std::make_unique<Act>(act));
  }
  body_.add(std::make_unique<Conv2d>(name + ".dw", expand, expand, k, stride, expand, false, rng));
  body_.add(std::make_unique<BatchNorm2d>(name + ".dw_bn", expand));
  body_.add(std::make_unique<Act>(act));
  if (use_se) {
    const int sq = std::max(8, ((expand / 4) + 4) / 8 * 8);
    const int squeeze = sq < 0.9 * (expand / 4) ? sq + 8 : sq;
    body_.add(std::make_unique<SqueezeExcite>(name + ".se", expand, squeeze, rng));
  }
  body_.add(std::make_unique<Conv2d>(name + ".project", expand, c_out, 1, 1, 1, false, rng));
  body_.add(std::make_unique<BatchNorm2d>(name + ".project_bn", c_out));
}

Tensor4 InvertedResidual::forward(const Tensor4& x, Mode mode) {
  Tensor4 y = body_.forward(x, mode);
  if (residual_) y += x;
  return y;
}

Tensor4 InvertedResidual::backward(const Tensor4& grad_y) {
  Tensor4 g = body_.backward(grad_y);
  if (residual_) g += grad_y;
  return g;
}

Tensor4 InvertedResidual::infer(const Tensor4& x, FieldSink* sink) const {
  Tensor4 y = body_.infer(x, sink);
  if (residual_) y += x;
  return y;
}

// --- GroupInvolutionBlock ----------------------------------------------------

GroupInvolutionBlock::GroupInvolutionBlock(std::string name, int channels, int groups,
                                           int reduce, int k, Rng& rng)
    : gen_(GeneratorParams::create(channels, reduce, groups, k, rng, name + ".generator")),
      gmap_(channels, groups),
      bn_(name + ".bn", channels),
      act_(Activation::Hardswish) {}

Tensor4 GroupInvolutionBlock::forward(const Tensor4& x, Mode mode) {
  KernelField field = generate_kernels(x, gen_, mode, &gen_ctx_);
  Tensor4 y = group_involution_forward(x, field, gmap_);
  gi_ctx_.x = x;
  gi_ctx_.field = std::move(field);
  gi_ctx_.gmap = gmap_;
  return act_.forward(bn_.forward(y, mode), mode);
}

Tensor4 GroupInvolutionBlock::backward(const Tensor4& grad_y) {
  Tensor4 g = bn_.backward(act_.backward(grad_y));
  GIGrads gi = gi_backward(g, gi_ctx_);
  Tensor4 grad_x = generate_kernels_backward(gi.grad_field, gen_, gen_ctx_);
  grad_x += gi.grad_x;
  return grad_x;
}

Tensor4 GroupInvolutionBlock::infer(const Tensor4& x, FieldSink* sink) const {
  KernelField field = generate_kernels(x, gen_);
  Tensor4 y = group_involution_forward(x, field, gmap_);
  if (sink != nullptr) sink->push_back(std::move(field));
  return act_.infer(bn_.infer(y, nullptr), nullptr);
}

void GroupInvolutionBlock::collect_params(std::vector<Param*>& out) {
  for (Param* p : gen_.params()) out.push_back(p);
  bn_.collect_params(out);
}

void GroupInvolutionBlock::collect_buffers(std::vector<NamedBuffer>& out) {
  const std::string prefix = gen_.squeeze.name.substr(0, gen_.squeeze.name.rfind(".squeeze"));
  out.push_back({prefix + ".bn.running_mean", &gen_.running_mean});
  out.push_back({prefix + ".bn.running_var", &gen_.running_var});
  bn_.collect_buffers(out);
}

void GroupInvolutionBlock::describe(const Shape4& in, std::vector<CostEntry>& out) const {
  LayerDesc d;
  d.kind = gen_.groups == 1 ? LayerKind::Involution : LayerKind::GroupInvolution;
  d.c_in = gen_.channels;
  d.c_out = gen_.channels;
  d.k = gen_.k;
  d.groups = gen_.groups;
  d.reduce = gen_.reduce;
  out.push_back({d, in});
}

// --- GlobalAvgPool / Linear --------------------------------------------------

Tensor4 GlobalAvgPool::forward(const Tensor4& x, Mode) {
  in_shape_ = x.shape();
  return global_avg_pool(x);
}

Tensor4 GlobalAvgPool::backward(const Tensor4& grad_y) {
  return global_avg_pool_backward(grad_y, in_shape_);
}

Tensor4 GlobalAvgPool::infer(const Tensor4& x, FieldSink*) const { return global_avg_pool(x); }

Linear::Linear(std::string name, int c_in, int c_out, Rng& rng)
    : c_in_(c_in),
      c_out_(c_out),
      weight_(name + ".weight", Tensor4(c_out, c_in, 1, 1)),
      bias_(name + ".bias", Tensor4(c_out, 1, 1, 1)) {
  // classifier init of the reference MobileNetV3: N(0, 0.01)
  for (double& v : weight_.value.data()) v = 0.01 * rng.normal();
}

Tensor4 Linear::forward(const Tensor4& x, Mode) {
  x_ = x;
  return infer(x, nullptr);
}

Tensor4 Linear::backward(const Tensor4& grad_y) {
  PointwiseGrads g = pointwise_conv_backward(grad_y, x_, weight_.value);
  weight_.grad += g.grad_weights;
  add_into(bias_, g.grad_bias);
  return std::move(g.grad_x);
}

Tensor4 Linear::infer(const Tensor4& x, FieldSink*) const {
  if (x.h() != 1 || x.w() != 1) throw ConfigError("linear: expects pooled (N, C, 1, 1) input");
  return pointwise_conv(x, weight_.value, bias_.value.data());
}

void Linear::collect_params(std::vector<Param*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

void Linear::describe(const Shape4& in, std::vector<CostEntry>& out) const {
  out.push_back({LayerDesc{LayerKind::Linear, c_in_, c_out_}, in});
}

}  // namespace gipad
