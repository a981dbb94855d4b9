#include "gipad/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "gipad/error.hpp"
#include "gipad/parallel.hpp"

namespace gipad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

}  // namespace

Activation parse_activation(std::string_view name) {
  if (name == "identity") return Activation::Identity;
  if (name == "relu") return Activation::Relu;
  if (name == "hardswish") return Activation::Hardswish;
  if (name == "hardsigmoid") return Activation::Hardsigmoid;
  if (name == "sigmoid") return Activation::Sigmoid;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::Hardswish: return "hardswish";
    case Activation::Hardsigmoid: return "hardsigmoid";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "?";
}

Tensor4 zero_pad(const Tensor4& x, int pad) {
  if (pad < 0) throw ConfigError("zero_pad: negative pad");
  if (pad == 0) return x;
  const Shape4 s = x.shape();
  Tensor4 y(s.n, s.c, s.h + 2 * pad, s.w + 2 * pad);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int i = 0; i < s.h; ++i)
        std::copy_n(x.plane(n, c) + i * s.w, s.w, &y(n, c, i + pad, pad));
  return y;
}

Tensor4 crop(const Tensor4& x, int pad) {
  if (pad < 0 || 2 * pad > x.h() || 2 * pad > x.w()) throw ConfigError("crop: invalid pad");
  const Shape4 s = x.shape();
  Tensor4 y(s.n, s.c, s.h - 2 * pad, s.w - 2 * pad);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int i = 0; i < y.h(); ++i)
        std::copy_n(x.plane(n, c) + (i + pad) * s.w + pad, y.w(), &y(n, c, i, 0));
  return y;
}

Tensor4 pointwise_conv(const Tensor4& x, const Tensor4& weights, std::span<const double> bias) {
  const int c_out = weights.n();
  const int c_in = weights.c();
  if (weights.h() != 1 || weights.w() != 1) {
    throw ConfigError("pointwise_conv: weights must be (C_out, C_in, 1, 1), got " +
                      to_string(weights.shape()));
  }
  if (c_in != x.c()) {
    throw ConfigError("pointwise_conv: weights expect " + std::to_string(c_in) +
                      " input channels, got " + std::to_string(x.c()));
  }
  if (!bias.empty() && static_cast<int>(bias.size()) != c_out) {
    throw ConfigError("pointwise_conv: bias length mismatch");
  }
  const int hw = x.h() * x.w();
  Tensor4 y(x.n(), c_out, x.h(), x.w());
  ConstMapMatrix w(weights.data().data(), c_out, c_in);
  parallel_for(0, x.n(), [&](int n) {
    ConstMapMatrix xn(x.plane(n, 0), c_in, hw);
    MapMatrix yn(y.plane(n, 0), c_out, hw);
    yn.noalias() = w * xn;
    if (!bias.empty()) {
      for (int o = 0; o < c_out; ++o) yn.row(o).array() += bias[o];
    }
  });
  return y;
}

PointwiseGrads pointwise_conv_backward(const Tensor4& grad_y, const Tensor4& x,
                                       const Tensor4& weights) {
  const int c_out = weights.n();
  const int c_in = weights.c();
  if (grad_y.c() != c_out || x.c() != c_in || grad_y.n() != x.n() || grad_y.h() != x.h() ||
      grad_y.w() != x.w()) {
    throw InternalError("pointwise_conv_backward: context/shape mismatch");
  }
  const int hw = x.h() * x.w();
  PointwiseGrads g;
  g.grad_x = Tensor4(x.shape());
  g.grad_weights = Tensor4(weights.shape());
  g.grad_bias.assign(static_cast<std::size_t>(c_out), 0.0);
  ConstMapMatrix w(weights.data().data(), c_out, c_in);
  parallel_for(0, x.n(), [&](int n) {
    ConstMapMatrix gy(grad_y.plane(n, 0), c_out, hw);
    MapMatrix gx(g.grad_x.plane(n, 0), c_in, hw);
    gx.noalias() = w.transpose() * gy;
  });
  MapMatrix gw(g.grad_weights.data().data(), c_out, c_in);
  for (int n = 0; n < x.n(); ++n) {
    ConstMapMatrix gy(grad_y.plane(n, 0), c_out, hw);
    ConstMapMatrix xn(x.plane(n, 0), c_in, hw);
    gw.noalias() += gy * xn.transpose();
    for (int o = 0; o < c_out; ++o) g.grad_bias[o] += gy.row(o).sum();
  }
  return g;
}

Tensor4 global_avg_pool(const Tensor4& x) {
  const int hw = x.h() * x.w();
  if (hw < 1) throw ConfigError("global_avg_pool: empty spatial extent");
  Tensor4 y(x.n(), x.c(), 1, 1);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) {
      const double* p = x.plane(n, c);
      double s = 0.0;
      for (int i = 0; i < hw; ++i) s += p[i];
      y(n, c, 0, 0) = s / hw;
    }
  return y;
}

Tensor4 global_avg_pool_backward(const Tensor4& grad_y, const Shape4& input_shape) {
  Tensor4 g(input_shape);
  const int hw = input_shape.h * input_shape.w;
  for (int n = 0; n < input_shape.n; ++n)
    for (int c = 0; c < input_shape.c; ++c) {
      const double v = grad_y(n, c, 0, 0) / hw;
      std::fill_n(g.plane(n, c), hw, v);
    }
  return g;
}

double activate(double t, Activation kind) {
  switch (kind) {
    case Activation::Identity: return t;
    case Activation::Relu: return t > 0.0 ? t : 0.0;
    case Activation::Hardsigmoid: return std::clamp((t + 3.0) / 6.0, 0.0, 1.0);
    case Activation::Hardswish: return t * std::clamp((t + 3.0) / 6.0, 0.0, 1.0);
    case Activation::Sigmoid:
      if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
      {
        const double e = std::exp(t);
        return e / (1.0 + e);
      }
  }
  return t;
}

double activate_derivative(double t, Activation kind) {
  switch (kind) {
    case Activation::Identity: return 1.0;
    case Activation::Relu: return t > 0.0 ? 1.0 : 0.0;
    case Activation::Hardsigmoid: return (t > -3.0 && t < 3.0) ? 1.0 / 6.0 : 0.0;
    case Activation::Hardswish:
      if (t <= -3.0) return 0.0;
      if (t >= 3.0) return 1.0;
      return (2.0 * t + 3.0) / 6.0;
    case Activation::Sigmoid: {
      const double s = activate(t, Activation::Sigmoid);
      return s * (1.0 - s);
    }
  }
  return 1.0;
}

Tensor4 activation(const Tensor4& x, Activation kind) {
  Tensor4 y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = activate(x[i], kind);
  return y;
}

Tensor4 activation_backward(const Tensor4& grad_y, const Tensor4& x, Activation kind) {
  if (grad_y.shape() != x.shape()) throw InternalError("activation_backward: shape mismatch");
  Tensor4 g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = grad_y[i] * activate_derivative(x[i], kind);
  return g;
}

Tensor4 batch_norm(const Tensor4& x, const BatchNormStats& stats, Mode mode,
                   BatchNormContext* ctx) {
  const int channels = x.c();
  const auto cs = static_cast<std::size_t>(channels);
  if (stats.gamma.size() != cs || stats.beta.size() != cs || stats.running_mean.size() != cs ||
      stats.running_var.size() != cs) {
    throw ConfigError("batch_norm: statistics sized for " + std::to_string(stats.gamma.size()) +
                      " channels, input has " + std::to_string(channels));
  }
  const int hw = x.h() * x.w();
  const int count = x.n() * hw;
  Tensor4 y(x.shape());
  Tensor4 x_hat(x.shape());
  std::vector<double> inv_std(cs);
  for (int c = 0; c < channels; ++c) {
    double mean = stats.running_mean[c];
    double var = stats.running_var[c];
    if (mode == Mode::Train) {
      double s = 0.0;
      for (int n = 0; n < x.n(); ++n) {
        const double* p = x.plane(n, c);
        for (int i = 0; i < hw; ++i) s += p[i];
      }
      mean = s / count;
      double ss = 0.0;
      for (int n = 0; n < x.n(); ++n) {
        const double* p = x.plane(n, c);
        for (int i = 0; i < hw; ++i) ss += (p[i] - mean) * (p[i] - mean);
      }
      var = ss / count;
      const double unbiased = count > 1 ? ss / (count - 1) : var;
      stats.running_mean[c] =
          (1.0 - kBatchNormMomentum) * stats.running_mean[c] + kBatchNormMomentum * mean;
      stats.running_var[c] =
          (1.0 - kBatchNormMomentum) * stats.running_var[c] + kBatchNormMomentum * unbiased;
    }
    if (var < 0.0) throw ConfigError("batch_norm: negative variance");
    const double is = 1.0 / std::sqrt(var + kBatchNormEps);
    inv_std[c] = is;
    const double g = stats.gamma[c];
    const double b = stats.beta[c];
    for (int n = 0; n < x.n(); ++n) {
      const double* p = x.plane(n, c);
      double* xh = x_hat.plane(n, c);
      double* q = y.plane(n, c);
      if (mode == Mode::Train) {
        for (int i = 0; i < hw; ++i) {
          xh[i] = (p[i] - mean) * is;
          q[i] = g * xh[i] + b;
        }
      } else {
        // Same arithmetic as batch_norm_infer so both paths agree bitwise.
        const double scale = g * is;
        const double shift = b - mean * scale;
        for (int i = 0; i < hw; ++i) {
          xh[i] = (p[i] - mean) * is;
          q[i] = scale * p[i] + shift;
        }
      }
    }
  }
  if (ctx != nullptr) {
    ctx->mode = mode;
    ctx->x_hat = std::move(x_hat);
    ctx->inv_std = std::move(inv_std);
  }
  return y;
}

Tensor4 batch_norm_infer(const Tensor4& x, std::span<const double> gamma,
                         std::span<const double> beta, std::span<const double> running_mean,
                         std::span<const double> running_var) {
  const auto cs = static_cast<std::size_t>(x.c());
  if (gamma.size() != cs || beta.size() != cs || running_mean.size() != cs ||
      running_var.size() != cs) {
    throw ConfigError("batch_norm: statistics sized for " + std::to_string(gamma.size()) +
                      " channels, input has " + std::to_string(x.c()));
  }
  const int hw = x.h() * x.w();
  Tensor4 y(x.shape());
  for (int c = 0; c < x.c(); ++c) {
    const double is = 1.0 / std::sqrt(running_var[c] + kBatchNormEps);
    const double scale = gamma[c] * is;
    const double shift = beta[c] - running_mean[c] * scale;
    for (int n = 0; n < x.n(); ++n) {
      const double* p = x.plane(n, c);
      double* q = y.plane(n, c);
      for (int i = 0; i < hw; ++i) q[i] = scale * p[i] + shift;
    }
  }
  return y;
}

BatchNormGrads batch_norm_backward(const Tensor4& grad_y, std::span<const double> gamma,
                                   const BatchNormContext& ctx) {
  const Tensor4& x_hat = ctx.x_hat;
  if (grad_y.shape() != x_hat.shape() || gamma.size() != static_cast<std::size_t>(x_hat.c())) {
    throw InternalError("batch_norm_backward: context/shape mismatch");
  }
  const int channels = x_hat.c();
  const int hw = x_hat.h() * x_hat.w();
  const double count = static_cast<double>(x_hat.n()) * hw;
  BatchNormGrads g;
  g.grad_x = Tensor4(x_hat.shape());
  g.grad_gamma.assign(static_cast<std::size_t>(channels), 0.0);
  g.grad_beta.assign(static_cast<std::size_t>(channels), 0.0);
  for (int c = 0; c < channels; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xh = 0.0;
    for (int n = 0; n < x_hat.n(); ++n) {
      const double* dy = grad_y.plane(n, c);
      const double* xh = x_hat.plane(n, c);
      for (int i = 0; i < hw; ++i) {
        sum_dy += dy[i];
        sum_dy_xh += dy[i] * xh[i];
      }
    }
    g.grad_beta[c] = sum_dy;
    g.grad_gamma[c] = sum_dy_xh;
    const double scale = gamma[c] * ctx.inv_std[c];
    for (int n = 0; n < x_hat.n(); ++n) {
      const double* dy = grad_y.plane(n, c);
      const double* xh = x_hat.plane(n, c);
      double* dx = g.grad_x.plane(n, c);
      if (ctx.mode == Mode::Train) {
        for (int i = 0; i < hw; ++i) {
          dx[i] = scale * (dy[i] - sum_dy / count - xh[i] * sum_dy_xh / count);
        }
      } else {
        for (int i = 0; i < hw; ++i) dx[i] = scale * dy[i];
      }
    }
  }
  return g;
}

Tensor4 resize_bilinear(const Tensor4& x, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ConfigError("resize_bilinear: target must be at least 1x1");
  if (x.h() < 1 || x.w() < 1) throw ConfigError("resize_bilinear: empty input");
  struct Tap {
    int lo;
    int hi;
    double frac;
  };
  auto taps = [](int out, int in) {
    std::vector<Tap> t(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      double src = (o + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const int lo = static_cast<int>(std::floor(src));
      const int hi = std::min(lo + 1, in - 1);
      t[o] = {lo, hi, src - lo};
    }
    return t;
  };
  const auto rows = taps(out_h, x.h());
  const auto cols = taps(out_w, x.w());
  Tensor4 y(x.n(), x.c(), out_h, out_w);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) {
      const double* p = x.plane(n, c);
      double lo_v = p[0];
      double hi_v = p[0];
      for (int i = 0; i < x.h() * x.w(); ++i) {
        lo_v = std::min(lo_v, p[i]);
        hi_v = std::max(hi_v, p[i]);
      }
      double* q = y.plane(n, c);
      for (int i = 0; i < out_h; ++i) {
        const Tap& r = rows[i];
        for (int j = 0; j < out_w; ++j) {
          const Tap& cc = cols[j];
          const double top = p[r.lo * x.w() + cc.lo] * (1.0 - cc.frac) + p[r.lo * x.w() + cc.hi] * cc.frac;
          const double bot = p[r.hi * x.w() + cc.lo] * (1.0 - cc.frac) + p[r.hi * x.w() + cc.hi] * cc.frac;
          q[i * out_w + j] = std::clamp(top * (1.0 - r.frac) + bot * r.frac, lo_v, hi_v);
        }
      }
    }
  return y;
}

Tensor4 channel_scale(const Tensor4& x, const Tensor4& scale) {
  if (scale.n() != x.n() || scale.c() != x.c() || scale.h() != 1 || scale.w() != 1) {
    throw ConfigError("channel_scale: scale must be (N, C, 1, 1)");
  }
  Tensor4 y(x.shape());
  const int hw = x.h() * x.w();
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) {
      const double s = scale(n, c, 0, 0);
      const double* p = x.plane(n, c);
      double* q = y.plane(n, c);
      for (int i = 0; i < hw; ++i) q[i] = s * p[i];
    }
  return y;
}

}  // namespace gipad
