#pragma once

// Shared test helpers: random tensors, finite differences and naive
// nested-loop reference operators written independently of the library.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "gipad/rng.hpp"
#include "gipad/spatial.hpp"
#include "gipad/tensor.hpp"

namespace gipad::test {

inline Tensor4 random_tensor(Shape4 s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor4 t(s);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// |a - n| / max(|a|, |n|, floor); the floor keeps entries whose true value is
// ~0 from being judged on round-off alone.
inline double rel_err(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

// Central difference of f with respect to entry i of x.
inline double central_diff(Tensor4& x, std::size_t i, const std::function<double()>& f,
                           double step = 1e-6) {
  const double keep = x[i];
  x[i] = keep + step;
  const double up = f();
  x[i] = keep - step;
  const double down = f();
  x[i] = keep;
  return (up - down) / (2.0 * step);
}

// Max relative error between an analytic gradient and finite differences of
// f over every entry of x (or `samples` random entries when > 0).
inline double fd_max_rel_err(Tensor4& x, const Tensor4& analytic, const std::function<double()>& f,
                             Rng& rng, int samples = 0, double floor = 1e-6) {
  double worst = 0.0;
  const auto check = [&](std::size_t i) {
    worst = std::max(worst, rel_err(analytic[i], central_diff(x, i, f), floor));
  };
  if (samples <= 0) {
    for (std::size_t i = 0; i < x.size(); ++i) check(i);
  } else {
    for (int s = 0; s < samples; ++s) check(rng.uniform_int(x.size()));
  }
  return worst;
}

// y(n,o,i,j) = b[o] + sum over the group's inputs and taps, zero padding.
inline Tensor4 naive_conv(const Tensor4& x, const Tensor4& w, const std::vector<double>& bias,
                          int groups, int stride, int pad) {
  const int cout = w.n(), cin_g = w.c(), k = w.h();
  const int oh = (x.h() + 2 * pad - k) / stride + 1;
  const int ow = (x.w() + 2 * pad - k) / stride + 1;
  const int cout_g = cout / groups;
  Tensor4 y(x.n(), cout, oh, ow);
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < cout; ++o)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          double s = bias.empty() ? 0.0 : bias[o];
          const int g = o / cout_g;
          for (int ci = 0; ci < cin_g; ++ci)
            for (int u = 0; u < k; ++u)
              for (int v = 0; v < k; ++v) {
                const int r = i * stride + u - pad, c = j * stride + v - pad;
                if (r < 0 || r >= x.h() || c < 0 || c >= x.w()) continue;
                s += w(o, ci, u, v) * x(n, g * cin_g + ci, r, c);
              }
          y(n, o, i, j) = s;
        }
  return y;
}

// y(i,j,c) = sum_{u,v} H(i,j,g(c),u,v) x(i+u-p, j+v-p, c), contiguous groups.
inline Tensor4 naive_gi(const Tensor4& x, const KernelField& f) {
  const int k = f.k(), p = k / 2, gs = x.c() / f.groups();
  Tensor4 y(x.shape());
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int i = 0; i < x.h(); ++i)
        for (int j = 0; j < x.w(); ++j) {
          double s = 0.0;
          for (int u = 0; u < k; ++u)
            for (int v = 0; v < k; ++v) {
              const int r = i + u - p, cc = j + v - p;
              if (r < 0 || r >= x.h() || cc < 0 || cc >= x.w()) continue;
              s += f.at(n, c / gs, u, v, i, j) * x(n, c, r, cc);
            }
          y(n, c, i, j) = s;
        }
  return y;
}

inline KernelField random_field(int n, int groups, int k, int h, int w, Rng& rng) {
  KernelField f(n, groups, k, h, w);
  for (double& v : f.values().data()) v = rng.uniform(-1.0, 1.0);
  return f;
}

}  // namespace gipad::test
