#pragma once

// Spatial operators: standard/grouped convolution, involution, group
// involution (GI), and the kernel generator that produces GI kernels from the
// feature map itself. Every operator has an exact hand-derived adjoint.

#include <cstdint>
#include <string_view>
#include <vector>

#include "gipad/ops.hpp"
#include "gipad/rng.hpp"
#include "gipad/tensor.hpp"

namespace gipad {

// ---------------------------------------------------------------------------
// Convolution

struct ConvSpec {
  int groups = 1;
  int stride = 1;
  int pad = 0;
};

int conv_output_size(int input, int k, int stride, int pad);

/// Grouped 2-D convolution with zero padding.
/// `kernel` has shape (C_out, C_in / groups, k, k); output channel o reads the
/// input channels of group o / (C_out / groups). groups == 1 is a standard
/// convolution and groups == C_in == C_out is depthwise.
Tensor4 conv2d(const Tensor4& x, const Tensor4& kernel, std::span<const double> bias,
               const ConvSpec& spec);

struct ConvGrads {
  Tensor4 grad_x;
  Tensor4 grad_kernel;
  std::vector<double> grad_bias;
};
ConvGrads conv2d_backward(const Tensor4& grad_y, const Tensor4& x, const Tensor4& kernel,
                          const ConvSpec& spec);

// ---------------------------------------------------------------------------
// Channel groups

/// Contiguous channel partition: channel c belongs to group c / (C / G).
class GroupMap {
 public:
  GroupMap(int channels, int groups);

  int channels() const { return channels_; }
  int groups() const { return groups_; }
  int group_size() const { return group_size_; }
  int group_of(int c) const { return c / group_size_; }

 private:
  int channels_;
  int groups_;
  int group_size_;
};

// ---------------------------------------------------------------------------
// Kernel fields

/// Per-sample, per-group, per-position k x k kernels H(n, g, u, v, i, j).
///
/// Stored as a Tensor4 of shape (n, G*k*k, h, w) so tap t = u*k + v of group g
/// lives in channel g*k*k + t. Tap indices run over [0, k); the spatial offset
/// they represent is (u - k/2, v - k/2).
class KernelField {
 public:
  KernelField() = default;
  KernelField(int n, int groups, int k, int h, int w, double fill = 0.0);
  KernelField(int groups, int k, Tensor4 values);

  int n() const { return values_.n(); }
  int groups() const { return groups_; }
  int k() const { return k_; }
  int h() const { return values_.h(); }
  int w() const { return values_.w(); }
  int taps() const { return k_ * k_; }

  double& at(int b, int g, int u, int v, int i, int j) {
    return values_(b, (g * k_ + u) * k_ + v, i, j);
  }
  double at(int b, int g, int u, int v, int i, int j) const {
    return values_(b, (g * k_ + u) * k_ + v, i, j);
  }
  // Contiguous h*w plane of one tap.
  const double* tap_plane(int b, int g, int u, int v) const {
    return values_.plane(b, (g * k_ + u) * k_ + v);
  }
  double* tap_plane(int b, int g, int u, int v) { return values_.plane(b, (g * k_ + u) * k_ + v); }

  const Tensor4& values() const { return values_; }
  Tensor4& values() { return values_; }

 private:
  int groups_ = 0;
  int k_ = 0;
  Tensor4 values_;
};

/// Channel-shared involution: one generated kernel per position, applied to
/// every channel. Requires field.groups() == 1; stride 1, same padding.
Tensor4 involution_forward(const Tensor4& x, const KernelField& field);

/// Group involution: channel c is filtered at (i, j) by the kernel of group
/// g(c) at (i, j). No cross-channel summation. Stride 1, same padding.
Tensor4 group_involution_forward(const Tensor4& x, const KernelField& field,
                                 const GroupMap& gmap);

struct GIContext {
  Tensor4 x;
  KernelField field;
  GroupMap gmap{1, 1};
};

struct GIGrads {
  Tensor4 grad_x;
  KernelField grad_field;
};

/// Adjoint of group_involution_forward with respect to both the input and the
/// kernel field.
GIGrads gi_backward(const Tensor4& grad_y, const GIContext& saved);

// ---------------------------------------------------------------------------
// Kernel generator

/// Weights of the kernel generator:
///   pointwise C -> C/r (no bias), batch norm, ReLU, pointwise C/r -> G*k*k
///   (with bias), reshaped into G kernels of k x k per position.
struct GeneratorParams {
  int channels = 0;
  int reduce = 1;
  int groups = 1;
  int k = 1;
  Param squeeze;
  Param bn_gamma;
  Param bn_beta;
  Tensor4 running_mean;
  Tensor4 running_var;
  Param expand;
  Param expand_bias;

  // Zero expand weights and a center-delta expand bias, so every generated
  // kernel starts as the identity. Squeeze weights are Kaiming-uniform.
  static GeneratorParams create(int channels, int reduce, int groups, int k, Rng& rng,
                                const std::string& prefix = "generator");

  int hidden() const { return channels / reduce; }
  BatchNormStats bn_stats();
  std::vector<Param*> params();
};

struct GeneratorContext {
  Tensor4 x;
  Tensor4 squeezed;
  BatchNormContext bn;
  Tensor4 normalized;
  Tensor4 hidden;
};

KernelField generate_kernels(const Tensor4& x, GeneratorParams& params, Mode mode,
                             GeneratorContext* ctx = nullptr);

// Infer-mode generation; leaves the parameters untouched.
KernelField generate_kernels(const Tensor4& x, const GeneratorParams& params);

/// Back-propagates a kernel-field gradient through the generator. Parameter
/// gradients are accumulated into `params`; the input gradient is returned.
Tensor4 generate_kernels_backward(const KernelField& grad_field, GeneratorParams& params,
                                  const GeneratorContext& ctx);

// ---------------------------------------------------------------------------
// FLOP accounting

// One multiply-accumulate counts as two FLOPs.
inline constexpr std::int64_t kFlopsPerMac = 2;

enum class LayerKind { Conv, Pointwise, Depthwise, Involution, GroupInvolution, Linear };

LayerKind parse_layer_kind(std::string_view name);
std::string_view layer_kind_name(LayerKind kind);

struct LayerDesc {
  LayerKind kind = LayerKind::Conv;
  int c_in = 0;
  int c_out = 0;
  int k = 1;
  int stride = 1;
  int groups = 1;  // conv groups, or GI groups
  int reduce = 1;  // generator reduction (involution kinds)
};

/// FLOPs of one layer for a single sample whose input feature map is
/// input.h x input.w. The GI cost is the generator cost plus 2*C*k*k*H*W for
/// applying the kernels.
std::int64_t layer_flops(const LayerDesc& layer, const Shape4& input);

}  // namespace gipad
