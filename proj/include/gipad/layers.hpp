#pragma once

// Network modules. Each module caches what its backward pass needs during
// forward(); infer() is a pure evaluation that touches no state.

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "gipad/ops.hpp"
#include "gipad/rng.hpp"
#include "gipad/spatial.hpp"
#include "gipad/tensor.hpp"

namespace gipad {

struct NamedBuffer {
  std::string name;
  Tensor4* tensor;
};

// One costed layer and the input map it sees.
struct CostEntry {
  LayerDesc desc;
  Shape4 input;
};

// Kernel fields captured from GI blocks during infer().
using FieldSink = std::vector<KernelField>;

class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor4 forward(const Tensor4& x, Mode mode) = 0;
  // Accumulates parameter gradients and returns the input gradient. Must
  // follow a forward() call on the same module.
  virtual Tensor4 backward(const Tensor4& grad_y) = 0;
  virtual Tensor4 infer(const Tensor4& x, FieldSink* sink = nullptr) const = 0;

  virtual Shape4 output_shape(const Shape4& in) const = 0;
  virtual void collect_params(std::vector<Param*>& out) { (void)out; }
  virtual void collect_buffers(std::vector<NamedBuffer>& out) { (void)out; }
  virtual void describe(const Shape4& in, std::vector<CostEntry>& out) const {
    (void)in;
    (void)out;
  }
  virtual std::string_view kind() const = 0;
};

using LayerPtr = std::unique_ptr<Layer>;

/// Convolution with optional bias. k == 1, groups == 1, stride == 1 takes the
/// GEMM path; everything else goes through conv2d.
class Conv2d final : public Layer {
 public:
  Conv2d(std::string name, int c_in, int c_out, int k, int stride, int groups, bool bias,
         Rng& rng);

  Tensor4 forward(const Tensor4& x, Mode mode) override;
  Tensor4 backward(const Tensor4& grad_y) override;
  Tensor4 infer(const Tensor4& x, FieldSink* sink) const override;
  Shape4 output_shape(const Shape4& in) const override;
  void collect_params(std::vector<Param*>& out) override;
  void describe(const Shape4& in, std::vector<CostEntry>& out) const override;
  std::string_view kind() const override { return "conv"; }

  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  bool has_bias() const { return has_bias_; }
  int kernel_size() const { return k_; }
  const ConvSpec& spec() const { return spec_; }

 private:
  bool pointwise() const { return k_ == 1 && spec_.groups == 1 && spec_.stride == 1; }

  int c_in_;
  int c_out_;
  int k_;
  ConvSpec spec_;
  bool has_bias_;
  Param weight_;
  Param bias_;
  Tensor4 x_;
};

class BatchNorm2d final : public Layer {
 public:
  BatchNorm2d(std::string name, int channels);

  Tensor4 forward(const Tensor4& x, Mode mode) override;
  Tensor4 backward(const Tensor4& grad_y) override;
  Tensor4 infer(const Tensor4& x, FieldSink* sink) const override;
  Shape4 output_shape(const Shape4& in) const override { return in; }
  void collect_params(std::vector<Param*>& out) override;
  void collect_buffers(std::vector<NamedBuffer>& out) override;
  std::string_view kind() const override { return "batchnorm"; }

  Param& gamma() { return gamma_; }
  Param& beta() { return beta_; }
  Tensor4& running_mean() { return running_mean_; }
  Tensor4& running_var() { return running_var_; }

 private:
  std::string name_;
  Param gamma_;
  Param beta_;
  Tensor4 running_mean_;
  Tensor4 running_var_;
  BatchNormContext ctx_;
};

class Act final : public Layer {
 public:
  explicit Act(Activation a) : act_(a) {}

  Tensor4 forward(const Tensor4& x, Mode mode) override;
  Tensor4 backward(const Tensor4& grad_y) override;
  Tensor4 infer(const Tensor4& x, FieldSink* sink) const override;
  Shape4 output_shape(const Shape4& in) const override { return in; }
  std::string_view kind() const override { return activation_name(act_); }

 private:
  Activation act_;
  Tensor4 x_;
};

class Sequential final : public Layer {
 public:
  Sequential() = default;

  Sequential& add(LayerPtr layer) {
    layers_.push_back(std::move(layer));
    return *this;
  }
  std::size_t size() const { return layers_.size(); }
  Layer& at(std::size_t i) { return *layers_[i]; }
  const Layer& at(std::size_t i) const { return *layers_[i]; }

  Tensor4 forward(const Tensor4& x, Mode mode) override;
  Tensor4 backward(const Tensor4& grad_y) override;
  Tensor4 infer(const Tensor4& x, FieldSink* sink) const override;
  Shape4 output_shape(const Shape4& in) const override;
  void collect_params(std::vector<Param*>& out) override;
  void collect_buffers(std::vector<NamedBuffer>& out) override;
  void describe(const Shape4& in, std::vector<CostEntry>& out) const override;
  std::string_view kind() const override { return "sequential"; }

 private:
  std::vector<LayerPtr> layers_;
};

/// Squeeze-and-excitation: GAP -> 1x1 (bias) -> ReLU -> 1x1 (bias) ->
/// hardsigmoid gate -> channel-wise rescale of the input.
class SqueezeExcite final : public Layer {
 public:
  SqueezeExcite(std::string name, int channels, int squeeze_channels, Rng& rng);

  Tensor4 forward(const Tensor4& x, Mode mode) override;
  Tensor4 backward(const Tensor4& grad_y) override;
  Tensor4 infer(const Tensor4& x, FieldSink* sink) const override;
  Shape4 output_shape(const Shape4& in) const override { return in; }
  void collect_params(std::vector<Param*>& out) override;
  void describe(const Shape4& in, std::vector<CostEntry>& out) const override;
  std::string_view kind() const override { return "se"; }

  // Gate values of the last forward() call, shape (N, C, 1, 1).
  const Tensor4& last_gate() const { return gate_; }
  Param& fc1_weight() { return fc1_w_; }
  Param& fc1_bias() { return fc1_b_; }
  Param& fc2_weight() { return fc2_w_; }
  Param& fc2_bias() { return fc2_b_; }

 private:
  int channels_;
  int squeeze_;
  Param fc1_w_;
  Param fc1_b_;
  Param fc2_w_;
  Param fc2_b_;
  Tensor4 x_;
  Tensor4 pooled_;
  Tensor4 hidden_pre_;
  Tensor4 hidden_;
  Tensor4 gate_pre_;
  Tensor4 gate_;
};

/// MobileNetV3 bottleneck: optional 1x1 expansion, k x k depthwise, optional
/// SE, 1x1 projection; identity shortcut when stride 1 and widths match.
class InvertedResidual final : public Layer {
 public:
  InvertedResidual(std::string name, int c_in, int expand, int c_out, int k, int stride,
                   bool use_se, Activation act, Rng& rng);

  Tensor4 forward(const Tensor4& x, Mode mode) override;
  Tensor4 backward(const Tensor4& grad_y) override;
  Tensor4 infer(const Tensor4& x, FieldSink* sink) const override;
  Shape4 output_shape(const Shape4& in) const override { return body_.output_shape(in); }
  void collect_params(std::vector<Param*>& out) override { body_.collect_params(out); }
  void collect_buffers(std::vector<NamedBuffer>& out) override { body_.collect_buffers(out); }
  void describe(const Shape4& in, std::vector<CostEntry>& out) const override {
    body_.describe(in, out);
  }
  std::string_view kind() const override { return "bneck"; }

  bool residual() const { return residual_; }
  Sequential& body() { return body_; }

 private:
  Sequential body_;
  bool residual_;
};

/// Group-involution block: kernel generator, GI application, batch norm and
/// hardswish. Stride 1 only.
class GroupInvolutionBlock final : public Layer {
 public:
  GroupInvolutionBlock(std::string name, int channels, int groups, int reduce, int k, Rng& rng);

  Tensor4 forward(const Tensor4& x, Mode mode) override;
  Tensor4 backward(const Tensor4& grad_y) override;
  Tensor4 infer(const Tensor4& x, FieldSink* sink) const override;
  Shape4 output_shape(const Shape4& in) const override { return in; }
  void collect_params(std::vector<Param*>& out) override;
  void collect_buffers(std::vector<NamedBuffer>& out) override;
  void describe(const Shape4& in, std::vector<CostEntry>& out) const override;
  std::string_view kind() const override { return "gi"; }

  GeneratorParams& generator() { return gen_; }
  BatchNorm2d& bn() { return bn_; }
  const GroupMap& group_map() const { return gmap_; }
  const KernelField& last_field() const { return gi_ctx_.field; }

 private:
  GeneratorParams gen_;
  GroupMap gmap_;
  BatchNorm2d bn_;
  Act act_;
  GeneratorContext gen_ctx_;
  GIContext gi_ctx_;
};

class GlobalAvgPool final : public Layer {
 public:
  Tensor4 forward(const Tensor4& x, Mode mode) override;
  Tensor4 backward(const Tensor4& grad_y) override;
  Tensor4 infer(const Tensor4& x, FieldSink* sink) const override;
  Shape4 output_shape(const Shape4& in) const override { return {in.n, in.c, 1, 1}; }
  std::string_view kind() const override { return "gap"; }

 private:
  Shape4 in_shape_;
};

/// Fully connected layer acting on (N, C, 1, 1) vectors.
class Linear final : public Layer {
 public:
  Linear(std::string name, int c_in, int c_out, Rng& rng);

  Tensor4 forward(const Tensor4& x, Mode mode) override;
  Tensor4 backward(const Tensor4& grad_y) override;
  Tensor4 infer(const Tensor4& x, FieldSink* sink) const override;
  Shape4 output_shape(const Shape4& in) const override { return {in.n, c_out_, 1, 1}; }
  void collect_params(std::vector<Param*>& out) override;
  void describe(const Shape4& in, std::vector<CostEntry>& out) const override;
  std::string_view kind() const override { return "linear"; }

  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  int in_features() const { return c_in_; }
  int out_features() const { return c_out_; }

 private:
  int c_in_;
  int c_out_;
  Param weight_;
  Param bias_;
  Tensor4 x_;
};

}  // namespace gipad
