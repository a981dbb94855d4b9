#include "gipad/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gipad/error.hpp"
#include "gipad/parallel.hpp"

namespace gipad {

namespace {

// Range [lo, hi) of output indices o for which o*stride + offset lands in
// [0, extent).
struct Range {
  int lo;
  int hi;
};

Range valid_outputs(int out_extent, int in_extent, int stride, int offset) {
  // o*stride + offset >= 0  ->  o >= ceil(-offset / stride)
  int lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  // o*stride + offset <= in_extent - 1
  const int top = in_extent - 1 - offset;
  int hi = top < 0 ? 0 : top / stride + 1;
  lo = std::clamp(lo, 0, out_extent);
  hi = std::clamp(hi, lo, out_extent);
  return {lo, hi};
}

void check_same_field(const Tensor4& x, const KernelField& field, const char* op) {
  if (field.n() != x.n() || field.h() != x.h() || field.w() != x.w()) {
    throw ConfigError(std::string(op) + ": kernel field " + to_string(field.values().shape()) +
                      " does not match input " + to_string(x.shape()));
  }
  if (field.k() % 2 == 0) throw ConfigError(std::string(op) + ": kernel size must be odd");
}

double kaiming_bound(int fan_in) { return std::sqrt(6.0 / fan_in); }

}  // namespace

int conv_output_size(int input, int k, int stride, int pad) {
  return (input + 2 * pad - k) / stride + 1;
}

Tensor4 conv2d(const Tensor4& x, const Tensor4& kernel, std::span<const double> bias,
               const ConvSpec& spec) {
  const int c_out = kernel.n();
  const int cin_pg = kernel.c();
  const int k = kernel.h();
  if (kernel.w() != k || k % 2 == 0) throw ConfigError("conv2d: kernel must be square and odd");
  if (spec.groups < 1 || spec.stride < 1 || spec.pad < 0) throw ConfigError("conv2d: bad spec");
  if (c_out % spec.groups != 0) {
    throw ConfigError("conv2d: " + std::to_string(c_out) + " output channels not divisible by " +
                      std::to_string(spec.groups) + " groups");
  }
  if (x.c() != spec.groups * cin_pg) {
    throw ConfigError("conv2d: input has " + std::to_string(x.c()) + " channels, kernel expects " +
                      std::to_string(spec.groups) + " x " + std::to_string(cin_pg));
  }
  if (!bias.empty() && static_cast<int>(bias.size()) != c_out) {
    throw ConfigError("conv2d: bias length mismatch");
  }
  const int oh = conv_output_size(x.h(), k, spec.stride, spec.pad);
  const int ow = conv_output_size(x.w(), k, spec.stride, spec.pad);
  if (oh < 1 || ow < 1) throw ConfigError("conv2d: empty output");
  const int cout_pg = c_out / spec.groups;
  const int s = spec.stride;
  Tensor4 y(x.n(), c_out, oh, ow);
  parallel_for(0, x.n() * c_out, [&](int job) {
    const int n = job / c_out;
    const int o = job % c_out;
    const int g = o / cout_pg;
    double* out = y.plane(n, o);
    const double b = bias.empty() ? 0.0 : bias[o];
    std::fill_n(out, oh * ow, b);
    for (int ci = 0; ci < cin_pg; ++ci) {
      const double* in = x.plane(n, g * cin_pg + ci);
      for (int u = 0; u < k; ++u) {
        const Range rows = valid_outputs(oh, x.h(), s, u - spec.pad);
        for (int v = 0; v < k; ++v) {
          const double wv = kernel(o, ci, u, v);
          const Range cols = valid_outputs(ow, x.w(), s, v - spec.pad);
          for (int i = rows.lo; i < rows.hi; ++i) {
            const double* src = in + (i * s + u - spec.pad) * x.w();
            double* dst = out + i * ow;
            for (int j = cols.lo; j < cols.hi; ++j) dst[j] += wv * src[j * s + v - spec.pad];
          }
        }
      }
    }
  });
  return y;
}

ConvGrads conv2d_backward(const Tensor4& grad_y, const Tensor4& x, const Tensor4& kernel,
                          const ConvSpec& spec) {
  const int c_out = kernel.n();
  const int cin_pg = kernel.c();
  const int k = kernel.h();
  const int oh = conv_output_size(x.h(), k, spec.stride, spec.pad);
  const int ow = conv_output_size(x.w(), k, spec.stride, spec.pad);
  if (grad_y.n() != x.n() || grad_y.c() != c_out || grad_y.h() != oh || grad_y.w() != ow ||
      x.c() != spec.groups * cin_pg) {
    throw InternalError("conv2d_backward: context/shape mismatch");
  }
  const int cout_pg = c_out / spec.groups;
  const int s = spec.stride;
  ConvGrads g;
  g.grad_x = Tensor4(x.shape());
  g.grad_kernel = Tensor4(kernel.shape());
  g.grad_bias.assign(static_cast<std::size_t>(c_out), 0.0);

  // Input gradient: each (n, input channel) plane is owned by one job.
  parallel_for(0, x.n() * x.c(), [&](int job) {
    const int n = job / x.c();
    const int c = job % x.c();
    const int grp = c / cin_pg;
    const int ci = c % cin_pg;
    double* gx = g.grad_x.plane(n, c);
    for (int oo = 0; oo < cout_pg; ++oo) {
      const int o = grp * cout_pg + oo;
      const double* gy = grad_y.plane(n, o);
      for (int u = 0; u < k; ++u) {
        const Range rows = valid_outputs(oh, x.h(), s, u - spec.pad);
        for (int v = 0; v < k; ++v) {
          const double wv = kernel(o, ci, u, v);
          const Range cols = valid_outputs(ow, x.w(), s, v - spec.pad);
          for (int i = rows.lo; i < rows.hi; ++i) {
            double* dst = gx + (i * s + u - spec.pad) * x.w();
            const double* src = gy + i * ow;
            for (int j = cols.lo; j < cols.hi; ++j) dst[j * s + v - spec.pad] += wv * src[j];
          }
        }
      }
    }
  });

  // Kernel gradient: each output channel is owned by one job; the batch sum
  // runs in order inside it.
  parallel_for(0, c_out, [&](int o) {
    const int grp = o / cout_pg;
    for (int n = 0; n < x.n(); ++n) {
      const double* gy = grad_y.plane(n, o);
      for (int ci = 0; ci < cin_pg; ++ci) {
        const double* in = x.plane(n, grp * cin_pg + ci);
        for (int u = 0; u < k; ++u) {
          const Range rows = valid_outputs(oh, x.h(), s, u - spec.pad);
          for (int v = 0; v < k; ++v) {
            const Range cols = valid_outputs(ow, x.w(), s, v - spec.pad);
            double acc = 0.0;
            for (int i = rows.lo; i < rows.hi; ++i) {
              const double* src = in + (i * s + u - spec.pad) * x.w();
              const double* d = gy + i * ow;
              for (int j = cols.lo; j < cols.hi; ++j) acc += d[j] * src[j * s + v - spec.pad];
            }
            g.grad_kernel(o, ci, u, v) += acc;
          }
        }
      }
      double bs = 0.0;
      for (int i = 0; i < oh * ow; ++i) bs += gy[i];
      g.grad_bias[o] += bs;
    }
  });
  return g;
}

GroupMap::GroupMap(int channels, int groups)
    : channels_(channels), groups_(groups), group_size_(groups > 0 ? channels / groups : 0) {
  if (channels < 1 || groups < 1 || channels % groups != 0) {
    throw ConfigError("channel count " + std::to_string(channels) +
                      " is not divisible by group count " + std::to_string(groups));
  }
}

KernelField::KernelField(int n, int groups, int k, int h, int w, double fill)
    : groups_(groups), k_(k), values_(n, groups * k * k, h, w, fill) {}

KernelField::KernelField(int groups, int k, Tensor4 values)
    : groups_(groups), k_(k), values_(std::move(values)) {
  if (groups < 1 || k < 1 || values_.c() != groups * k * k) {
    throw ConfigError("kernel field: " + std::to_string(values_.c()) +
                      " channels cannot hold " + std::to_string(groups) + " groups of " +
                      std::to_string(k) + "x" + std::to_string(k) + " kernels");
  }
}

Tensor4 involution_forward(const Tensor4& x, const KernelField& field) {
  check_same_field(x, field, "involution_forward");
  if (field.groups() != 1) throw ConfigError("involution_forward: field must have one group");
  const int k = field.k();
  const int p = k / 2;
  const int h = x.h();
  const int w = x.w();
  Tensor4 y(x.shape());
  parallel_for(0, x.n(), [&](int n) {
    std::vector<double> kernel(static_cast<std::size_t>(k * k));
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        for (int u = 0; u < k; ++u)
          for (int v = 0; v < k; ++v) kernel[u * k + v] = field.at(n, 0, u, v, i, j);
        for (int c = 0; c < x.c(); ++c) {
          double acc = 0.0;
          for (int u = 0; u < k; ++u) {
            const int ii = i + u - p;
            if (ii < 0 || ii >= h) continue;
            for (int v = 0; v < k; ++v) {
              const int jj = j + v - p;
              if (jj < 0 || jj >= w) continue;
              acc += kernel[u * k + v] * x(n, c, ii, jj);
            }
          }
          y(n, c, i, j) = acc;
        }
      }
    }
  });
  return y;
}

Tensor4 group_involution_forward(const Tensor4& x, const KernelField& field,
                                 const GroupMap& gmap) {
  check_same_field(x, field, "group_involution_forward");
  if (x.c() != gmap.channels() || field.groups() != gmap.groups()) {
    throw ConfigError("group_involution_forward: input has " + std::to_string(x.c()) +
                      " channels and field " + std::to_string(field.groups()) +
                      " groups, group map expects " + std::to_string(gmap.channels()) + "/" +
                      std::to_string(gmap.groups()));
  }
  const int k = field.k();
  const int p = k / 2;
  const int h = x.h();
  const int w = x.w();
  Tensor4 y(x.shape());
  parallel_for(0, x.n() * x.c(), [&](int job) {
    const int n = job / x.c();
    const int c = job % x.c();
    const int g = gmap.group_of(c);
    const double* in = x.plane(n, c);
    double* out = y.plane(n, c);
    for (int u = 0; u < k; ++u) {
      const Range rows = valid_outputs(h, h, 1, u - p);
      for (int v = 0; v < k; ++v) {
        const Range cols = valid_outputs(w, w, 1, v - p);
        const double* ker = field.tap_plane(n, g, u, v);
        for (int i = rows.lo; i < rows.hi; ++i) {
          const double* src = in + (i + u - p) * w;
          const double* kr = ker + i * w;
          double* dst = out + i * w;
          for (int j = cols.lo; j < cols.hi; ++j) dst[j] += kr[j] * src[j + v - p];
        }
      }
    }
  });
  return y;
}

GIGrads gi_backward(const Tensor4& grad_y, const GIContext& saved) {
  const Tensor4& x = saved.x;
  const KernelField& field = saved.field;
  const GroupMap& gmap = saved.gmap;
  if (grad_y.shape() != x.shape() || field.n() != x.n() || field.h() != x.h() ||
      field.w() != x.w() || field.groups() != gmap.groups() || x.c() != gmap.channels()) {
    throw InternalError("gi_backward: saved context does not match the output gradient");
  }
  const int k = field.k();
  const int p = k / 2;
  const int h = x.h();
  const int w = x.w();
  GIGrads g;
  g.grad_x = Tensor4(x.shape());
  g.grad_field = KernelField(x.n(), field.groups(), k, h, w);

  parallel_for(0, x.n() * x.c(), [&](int job) {
    const int n = job / x.c();
    const int c = job % x.c();
    const int grp = gmap.group_of(c);
    const double* gy = grad_y.plane(n, c);
    double* gx = g.grad_x.plane(n, c);
    for (int u = 0; u < k; ++u) {
      const Range rows = valid_outputs(h, h, 1, u - p);
      for (int v = 0; v < k; ++v) {
        const Range cols = valid_outputs(w, w, 1, v - p);
        const double* ker = field.tap_plane(n, grp, u, v);
        for (int i = rows.lo; i < rows.hi; ++i) {
          double* dst = gx + (i + u - p) * w;
          const double* kr = ker + i * w;
          const double* d = gy + i * w;
          for (int j = cols.lo; j < cols.hi; ++j) dst[j + v - p] += kr[j] * d[j];
        }
      }
    }
  });

  const int s = gmap.group_size();
  parallel_for(0, x.n() * gmap.groups(), [&](int job) {
    const int n = job / gmap.groups();
    const int grp = job % gmap.groups();
    for (int u = 0; u < k; ++u) {
      const Range rows = valid_outputs(h, h, 1, u - p);
      for (int v = 0; v < k; ++v) {
        const Range cols = valid_outputs(w, w, 1, v - p);
        double* gk = g.grad_field.tap_plane(n, grp, u, v);
        for (int c = grp * s; c < (grp + 1) * s; ++c) {
          const double* in = x.plane(n, c);
          const double* gy = grad_y.plane(n, c);
          for (int i = rows.lo; i < rows.hi; ++i) {
            const double* src = in + (i + u - p) * w;
            const double* d = gy + i * w;
            double* dst = gk + i * w;
            for (int j = cols.lo; j < cols.hi; ++j) dst[j] += d[j] * src[j + v - p];
          }
        }
      }
    }
  });
  return g;
}

GeneratorParams GeneratorParams::create(int channels, int reduce, int groups, int k, Rng& rng,
                                        const std::string& prefix) {
  if (reduce < 1 || channels % reduce != 0) {
    throw ConfigError("kernel generator: channel count " + std::to_string(channels) +
                      " is not divisible by reduction " + std::to_string(reduce));
  }
  if (groups < 1 || channels % groups != 0) {
    throw ConfigError("kernel generator: channel count " + std::to_string(channels) +
                      " is not divisible by group count " + std::to_string(groups));
  }
  if (k < 1 || k % 2 == 0) throw ConfigError("kernel generator: kernel size must be odd");
  GeneratorParams p;
  p.channels = channels;
  p.reduce = reduce;
  p.groups = groups;
  p.k = k;
  const int hidden = channels / reduce;
  const int out = groups * k * k;
  Tensor4 squeeze(hidden, channels, 1, 1);
  const double bound = kaiming_bound(channels);
  for (double& v : squeeze.data()) v = rng.uniform(-bound, bound);
  p.squeeze = Param(prefix + ".squeeze.weight", std::move(squeeze));
  p.bn_gamma = Param(prefix + ".bn.gamma", Tensor4(hidden, 1, 1, 1, 1.0));
  p.bn_beta = Param(prefix + ".bn.beta", Tensor4(hidden, 1, 1, 1, 0.0));
  p.running_mean = Tensor4(hidden, 1, 1, 1, 0.0);
  p.running_var = Tensor4(hidden, 1, 1, 1, 1.0);
  p.expand = Param(prefix + ".expand.weight", Tensor4(out, hidden, 1, 1, 0.0));
  Tensor4 bias(out, 1, 1, 1, 0.0);
  const int center = (k / 2) * k + k / 2;
  for (int g = 0; g < groups; ++g) bias[static_cast<std::size_t>(g * k * k + center)] = 1.0;
  p.expand_bias = Param(prefix + ".expand.bias", std::move(bias));
  return p;
}

BatchNormStats GeneratorParams::bn_stats() {
  return {bn_gamma.value.data(), bn_beta.value.data(), running_mean.data(), running_var.data()};
}

std::vector<Param*> GeneratorParams::params() {
  return {&squeeze, &bn_gamma, &bn_beta, &expand, &expand_bias};
}

KernelField generate_kernels(const Tensor4& x, GeneratorParams& params, Mode mode,
                             GeneratorContext* ctx) {
  if (x.c() != params.channels) {
    throw ConfigError("generate_kernels: input has " + std::to_string(x.c()) +
                      " channels, generator expects " + std::to_string(params.channels));
  }
  Tensor4 squeezed = pointwise_conv(x, params.squeeze.value, {});
  BatchNormContext bn_ctx;
  Tensor4 normalized = batch_norm(squeezed, params.bn_stats(), mode, &bn_ctx);
  Tensor4 hidden = activation(normalized, Activation::Relu);
  Tensor4 expanded = pointwise_conv(hidden, params.expand.value, params.expand_bias.value.data());
  if (ctx != nullptr) {
    ctx->x = x;
    ctx->squeezed = std::move(squeezed);
    ctx->bn = std::move(bn_ctx);
    ctx->normalized = std::move(normalized);
    ctx->hidden = std::move(hidden);
  }
  return KernelField(params.groups, params.k, std::move(expanded));
}

KernelField generate_kernels(const Tensor4& x, const GeneratorParams& params) {
  if (x.c() != params.channels) {
    throw ConfigError("generate_kernels: input has " + std::to_string(x.c()) +
                      " channels, generator expects " + std::to_string(params.channels));
  }
  Tensor4 squeezed = pointwise_conv(x, params.squeeze.value, {});
  Tensor4 normalized =
      batch_norm_infer(squeezed, params.bn_gamma.value.data(), params.bn_beta.value.data(),
                       params.running_mean.data(), params.running_var.data());
  Tensor4 hidden = activation(normalized, Activation::Relu);
  Tensor4 expanded = pointwise_conv(hidden, params.expand.value, params.expand_bias.value.data());
  return KernelField(params.groups, params.k, std::move(expanded));
}

Tensor4 generate_kernels_backward(const KernelField& grad_field, GeneratorParams& params,
                                  const GeneratorContext& ctx) {
  if (grad_field.groups() != params.groups || grad_field.k() != params.k ||
      grad_field.n() != ctx.hidden.n() || grad_field.h() != ctx.hidden.h() ||
      grad_field.w() != ctx.hidden.w()) {
    throw InternalError("generate_kernels_backward: context/shape mismatch");
  }
  PointwiseGrads expand = pointwise_conv_backward(grad_field.values(), ctx.hidden,
                                                  params.expand.value);
  params.expand.grad += expand.grad_weights;
  for (std::size_t i = 0; i < expand.grad_bias.size(); ++i) {
    params.expand_bias.grad[i] += expand.grad_bias[i];
  }
  Tensor4 g_norm = activation_backward(expand.grad_x, ctx.normalized, Activation::Relu);
  BatchNormGrads bn = batch_norm_backward(g_norm, params.bn_gamma.value.data(), ctx.bn);
  for (std::size_t i = 0; i < bn.grad_gamma.size(); ++i) {
    params.bn_gamma.grad[i] += bn.grad_gamma[i];
    params.bn_beta.grad[i] += bn.grad_beta[i];
  }
  PointwiseGrads squeeze = pointwise_conv_backward(bn.grad_x, ctx.x, params.squeeze.value);
  params.squeeze.grad += squeeze.grad_weights;
  return std::move(squeeze.grad_x);
}

LayerKind parse_layer_kind(std::string_view name) {
  if (name == "conv") return LayerKind::Conv;
  if (name == "pointwise") return LayerKind::Pointwise;
  if (name == "depthwise") return LayerKind::Depthwise;
  if (name == "involution") return LayerKind::Involution;
  if (name == "gi") return LayerKind::GroupInvolution;
  if (name == "linear") return LayerKind::Linear;
  throw ConfigError("unknown layer kind '" + std::string(name) + "'");
}

std::string_view layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Pointwise: return "pointwise";
    case LayerKind::Depthwise: return "depthwise";
    case LayerKind::Involution: return "involution";
    case LayerKind::GroupInvolution: return "gi";
    case LayerKind::Linear: return "linear";
  }
  return "?";
}

std::int64_t layer_flops(const LayerDesc& layer, const Shape4& input) {
  const std::int64_t h = input.h;
  const std::int64_t w = input.w;
  const int pad = layer.k / 2;
  switch (layer.kind) {
    case LayerKind::Conv: {
      if (layer.groups < 1 || layer.c_in % layer.groups != 0) {
        throw ConfigError("layer_flops: conv channels not divisible by groups");
      }
      const std::int64_t oh = conv_output_size(input.h, layer.k, layer.stride, pad);
      const std::int64_t ow = conv_output_size(input.w, layer.k, layer.stride, pad);
      return kFlopsPerMac * (layer.c_in / layer.groups) * layer.k * layer.k * layer.c_out * oh *
             ow;
    }
    case LayerKind::Pointwise: {
      const std::int64_t oh = conv_output_size(input.h, 1, layer.stride, 0);
      const std::int64_t ow = conv_output_size(input.w, 1, layer.stride, 0);
      return kFlopsPerMac * layer.c_in * layer.c_out * oh * ow;
    }
    case LayerKind::Depthwise: {
      const std::int64_t oh = conv_output_size(input.h, layer.k, layer.stride, pad);
      const std::int64_t ow = conv_output_size(input.w, layer.k, layer.stride, pad);
      return kFlopsPerMac * layer.c_in * layer.k * layer.k * oh * ow;
    }
    case LayerKind::Involution:
    case LayerKind::GroupInvolution: {
      const int groups = layer.kind == LayerKind::Involution ? 1 : layer.groups;
      if (layer.reduce < 1 || layer.c_in % layer.reduce != 0) {
        throw ConfigError("layer_flops: channels not divisible by reduction");
      }
      const std::int64_t hidden = layer.c_in / layer.reduce;
      const std::int64_t taps = static_cast<std::int64_t>(layer.k) * layer.k;
      const std::int64_t generator =
          kFlopsPerMac * (layer.c_in * hidden + hidden * groups * taps) * h * w;
      const std::int64_t apply = kFlopsPerMac * layer.c_in * taps * h * w;
      return generator + apply;
    }
    case LayerKind::Linear:
      return kFlopsPerMac * layer.c_in * layer.c_out;
  }
  throw ConfigError("layer_flops: unknown layer kind");
}

}  // namespace gipad
