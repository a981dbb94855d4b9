#pragma once

// Primitive tensor operations and their hand-derived adjoints.

#include <span>
#include <string_view>
#include <vector>

#include "gipad/tensor.hpp"

namespace gipad {

enum class Mode { Train, Infer };

enum class Activation { Identity, Relu, Hardswish, Hardsigmoid, Sigmoid };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation a);

Tensor4 zero_pad(const Tensor4& x, int pad);
// Removes `pad` rows/cols from every border. Inverse of zero_pad.
Tensor4 crop(const Tensor4& x, int pad);

/// y[n, o, i, j] = bias[o] + sum_ci weights[o, ci] * x[n, ci, i, j].
/// `weights` has shape (C_out, C_in, 1, 1); an empty `bias` means no bias.
Tensor4 pointwise_conv(const Tensor4& x, const Tensor4& weights, std::span<const double> bias);

struct PointwiseGrads {
  Tensor4 grad_x;
  Tensor4 grad_weights;
  std::vector<double> grad_bias;
};
PointwiseGrads pointwise_conv_backward(const Tensor4& grad_y, const Tensor4& x,
                                       const Tensor4& weights);

Tensor4 global_avg_pool(const Tensor4& x);
Tensor4 global_avg_pool_backward(const Tensor4& grad_y, const Shape4& input_shape);

double activate(double t, Activation kind);
// Derivative with respect to the pre-activation t.
double activate_derivative(double t, Activation kind);
Tensor4 activation(const Tensor4& x, Activation kind);
Tensor4 activation_backward(const Tensor4& grad_y, const Tensor4& x, Activation kind);

// Running statistics use exponential averaging with this momentum and the
// unbiased batch variance.
inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBatchNormEps = 1e-5;

struct BatchNormStats {
  std::span<const double> gamma;
  std::span<const double> beta;
  std::span<double> running_mean;
  std::span<double> running_var;
};

struct BatchNormContext {
  Mode mode = Mode::Infer;
  Tensor4 x_hat;
  std::vector<double> inv_std;
};

/// Train mode normalizes with batch statistics and updates the running
/// estimates in `stats`; infer mode uses the running estimates.
Tensor4 batch_norm(const Tensor4& x, const BatchNormStats& stats, Mode mode,
                   BatchNormContext* ctx = nullptr);

// Infer-mode normalization with explicit running statistics.
Tensor4 batch_norm_infer(const Tensor4& x, std::span<const double> gamma,
                         std::span<const double> beta, std::span<const double> running_mean,
                         std::span<const double> running_var);

struct BatchNormGrads {
  Tensor4 grad_x;
  std::vector<double> grad_gamma;
  std::vector<double> grad_beta;
};
BatchNormGrads batch_norm_backward(const Tensor4& grad_y, std::span<const double> gamma,
                                   const BatchNormContext& ctx);

// Bilinear resampling of every (n, c) plane with half-pixel centers; source
// coordinates are clamped to the border.
Tensor4 resize_bilinear(const Tensor4& x, int out_h, int out_w);

// Multiplies every (n, c) plane by scale[n, c] (scale has shape (N, C, 1, 1)).
Tensor4 channel_scale(const Tensor4& x, const Tensor4& scale);

}  // namespace gipad
