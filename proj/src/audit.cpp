#include "gipad/audit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "gipad/error.hpp"

namespace gipad {

namespace {

// Signed frequency of DFT bin p in a length-k transform.
int wrap_frequency(int p, int k) { return p <= (k - 1) / 2 ? p : p - k; }

// Raw (unshifted) |DFT|^2.
std::vector<double> dft_energy(const Kernel2D& kernel) {
  const int k = kernel.k;
  const double step = 2.0 * std::numbers::pi / k;
  std::vector<double> e(static_cast<std::size_t>(k) * k);
  for (int p = 0; p < k; ++p)
    for (int q = 0; q < k; ++q) {
      double re = 0.0, im = 0.0;
      for (int u = 0; u < k; ++u)
        for (int v = 0; v < k; ++v) {
          const double phase = step * ((p * u) % k + (q * v) % k);
          re += kernel.at(u, v) * std::cos(phase);
          im -= kernel.at(u, v) * std::sin(phase);
        }
      e[static_cast<std::size_t>(p) * k + q] = re * re + im * im;
    }
  return e;
}

void require_kernel(const Kernel2D& kernel, const char* what) {
  if (kernel.k < 1 || kernel.w.size() != static_cast<std::size_t>(kernel.k) * kernel.k) {
    throw ConfigError(std::string(what) + ": malformed kernel");
  }
}

}  // namespace

Kernel2D energy_map(const Kernel2D& kernel) {
  require_kernel(kernel, "energy_map");
  const int k = kernel.k;
  const std::vector<double> e = dft_energy(kernel);
  Kernel2D out(k);
  for (int p = 0; p < k; ++p)
    for (int q = 0; q < k; ++q)
      out.at(wrap_frequency(p, k) + k / 2, wrap_frequency(q, k) + k / 2) =
          e[static_cast<std::size_t>(p) * k + q];
  return out;
}

double hf_lf_ratio(const Kernel2D& kernel) {
  require_kernel(kernel, "hf_lf_ratio");
  if (std::all_of(kernel.w.begin(), kernel.w.end(), [](double x) { return x == 0.0; })) {
    throw UndefinedMetricError("hf_lf_ratio: all-zero kernel");
  }
  const int k = kernel.k;
  const std::vector<double> e = dft_energy(kernel);
  double lf = 0.0, hf = 0.0;
  for (int p = 0; p < k; ++p)
    for (int q = 0; q < k; ++q) {
      const int fu = wrap_frequency(p, k);
      const int fv = wrap_frequency(q, k);
      (fu * fu + fv * fv <= 1 ? lf : hf) += e[static_cast<std::size_t>(p) * k + q];
    }
  if (lf < kEnergyFloor) return kRatioOverflow;
  return hf / lf;
}

double anisotropy(const Kernel2D& kernel) {
  require_kernel(kernel, "anisotropy");
  const int k = kernel.k;
  const std::vector<double> e = dft_energy(kernel);
  const auto reps = [k](int p) {
    std::vector<double> f{static_cast<double>(wrap_frequency(p, k))};
    if (k % 2 == 0 && p == k / 2) f = {k / 2.0, -k / 2.0};
    return f;
  };
  double a = 0.0, b = 0.0, c = 0.0, total = 0.0;
  for (int p = 0; p < k; ++p)
    for (int q = 0; q < k; ++q) {
      if (p == 0 && q == 0) continue;
      const double energy = e[static_cast<std::size_t>(p) * k + q];
      total += energy;
      const auto fu = reps(p);
      const auto fv = reps(q);
      const double share = energy / static_cast<double>(fu.size() * fv.size());
      for (double x : fu)
        for (double y : fv) {
          a += share * x * x;
          b += share * x * y;
          c += share * y * y;
        }
    }
  if (total < kEnergyFloor) return 0.0;
  const double spread = std::sqrt((a - c) * (a - c) + 4.0 * b * b);
  return std::clamp(spread / (a + c), 0.0, 1.0);
}

double dc_offset(const KernelField& field) {
  const auto v = field.values().data();
  if (v.empty()) throw ConfigError("dc_offset: empty field");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double position_variance(const KernelField& field) {
  const Tensor4& t = field.values();
  if (t.empty()) throw ConfigError("position_variance: empty field");
  const int hw = t.h() * t.w();
  if (hw < 2) return 0.0;
  double total = 0.0;
  for (int n = 0; n < t.n(); ++n)
    for (int c = 0; c < t.c(); ++c) {
      const double* p = t.plane(n, c);
      double mean = 0.0;
      for (int i = 0; i < hw; ++i) mean += p[i];
      mean /= hw;
      double var = 0.0;
      for (int i = 0; i < hw; ++i) var += (p[i] - mean) * (p[i] - mean);
      total += var / hw;
    }
  return total / (static_cast<double>(t.n()) * t.c());
}

double cohens_d(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) {
    throw UndefinedMetricError("cohens_d: each group needs at least 2 samples");
  }
  const auto moments = [](const std::vector<double>& x) {
    double m = 0.0;
    for (double v : x) m += v;
    m /= static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return std::pair{m, ss};
  };
  const auto [ma, ssa] = moments(a);
  const auto [mb, ssb] = moments(b);
  const double pooled = std::sqrt((ssa + ssb) / static_cast<double>(a.size() + b.size() - 2));
  if (!(pooled > 0.0)) throw UndefinedMetricError("cohens_d: zero pooled standard deviation");
  return (ma - mb) / pooled;
}

Kernel2D mean_kernel(const KernelField& field, int b) {
  const int k = field.k();
  const int hw = field.h() * field.w();
  Kernel2D out(k);
  for (int u = 0; u < k; ++u)
    for (int v = 0; v < k; ++v) {
      double s = 0.0;
      for (int g = 0; g < field.groups(); ++g) {
        const double* p = field.tap_plane(b, g, u, v);
        for (int i = 0; i < hw; ++i) s += p[i];
      }
      out.at(u, v) = s / (static_cast<double>(field.groups()) * hw);
    }
  return out;
}

KernelField sample_field(const KernelField& field, int b) {
  const Tensor4& t = field.values();
  const std::size_t per = static_cast<std::size_t>(t.c()) * t.h() * t.w();
  auto src = t.data().subspan(static_cast<std::size_t>(b) * per, per);
  return KernelField(field.groups(), field.k(),
                     Tensor4({1, t.c(), t.h(), t.w()}, std::vector<double>(src.begin(), src.end())));
}

double indicator(const KernelStats& s, std::size_t i) {
  switch (i) {
    case 0: return s.hf_lf;
    case 1: return s.anisotropy;
    case 2: return s.dc_offset;
    default: return s.position_variance;
  }
}

KernelStats kernel_stats(const KernelField& field, int b) {
  const Kernel2D mk = mean_kernel(field, b);
  KernelStats s;
  s.hf_lf = hf_lf_ratio(mk);
  s.anisotropy = anisotropy(mk);
  double sum = 0.0;
  for (double x : mk.w) sum += x;
  s.dc_offset = sum / static_cast<double>(mk.w.size());
  s.position_variance = position_variance(sample_field(field, b));
  return s;
}

Histogram histogram(const std::vector<double>& bonafide, const std::vector<double>& attack,
                    int bins) {
  Histogram h;
  h.bonafide.assign(bins, 0);
  h.attack.assign(bins, 0);
  bool any = false;
  for (const auto* set : {&bonafide, &attack})
    for (double x : *set) {
      if (!std::isfinite(x)) continue;
      h.lo = any ? std::min(h.lo, x) : x;
      h.hi = any ? std::max(h.hi, x) : x;
      any = true;
    }
  const double width = (h.hi - h.lo) / bins;
  const auto fill = [&](const std::vector<double>& xs, std::vector<int>& counts) {
    for (double x : xs) {
      if (!std::isfinite(x)) continue;
      int i = width > 0.0 ? static_cast<int>((x - h.lo) / width) : 0;
      ++counts[std::clamp(i, 0, bins - 1)];
    }
  };
  fill(bonafide, h.bonafide);
  fill(attack, h.attack);
  return h;
}

AuditReport build_report(const std::vector<KernelField>& fields, const std::vector<int>& labels) {
  if (fields.size() != labels.size() || fields.empty()) {
    throw ConfigError("audit: fields and labels must be non-empty and aligned");
  }
  AuditReport r;
  r.k = fields.front().k();
  r.labels = labels;
  std::array<std::vector<double>, 4> vb, va;
  r.bonafide.mean_kernel = r.bonafide.mean_energy = Kernel2D(r.k);
  r.attack.mean_kernel = r.attack.mean_energy = Kernel2D(r.k);
  for (std::size_t s = 0; s < fields.size(); ++s) {
    const KernelStats ks = kernel_stats(fields[s], 0);
    r.samples.push_back(ks);
    const bool bona = labels[s] == kBonafide;
    ClassSummary& cs = bona ? r.bonafide : r.attack;
    auto& vals = bona ? vb : va;
    ++cs.n;
    for (std::size_t i = 0; i < 4; ++i) vals[i].push_back(indicator(ks, i));
    const Kernel2D mk = mean_kernel(fields[s], 0);
    const Kernel2D em = energy_map(mk);
    for (std::size_t j = 0; j < mk.w.size(); ++j) {
      cs.mean_kernel.w[j] += mk.w[j];
      cs.mean_energy.w[j] += em.w[j];
    }
  }
  for (auto [cs, vals] : {std::pair{&r.bonafide, &vb}, std::pair{&r.attack, &va}}) {
    if (cs->n > 0) {
      for (double& x : cs->mean_kernel.w) x /= static_cast<double>(cs->n);
      for (double& x : cs->mean_energy.w) x /= static_cast<double>(cs->n);
    }
    for (std::size_t i = 0; i < 4; ++i) {
      std::vector<double> finite;
      for (double x : (*vals)[i])
        if (std::isfinite(x)) finite.push_back(x);
      if (i == 0) cs->hf_lf_overflow = (*vals)[i].size() - finite.size();
      double m = 0.0, ss = 0.0;
      for (double x : finite) m += x;
      m = finite.empty() ? NAN : m / static_cast<double>(finite.size());
      for (double x : finite) ss += (x - m) * (x - m);
      cs->mean[i] = m;
      cs->std[i] = finite.size() > 1 ? std::sqrt(ss / static_cast<double>(finite.size() - 1)) : 0.0;
    }
  }
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<double> fa, fb;
    for (double x : va[i])
      if (std::isfinite(x)) fa.push_back(x);
    for (double x : vb[i])
      if (std::isfinite(x)) fb.push_back(x);
    try {
      r.cohens_d[i] = cohens_d(fa, fb);
    } catch (const UndefinedMetricError&) {
      r.cohens_d[i] = NAN;
    }
    r.histograms[i] = histogram(vb[i], va[i]);
  }
  return r;
}

AuditReport audit_run(const Model& model, const Batch& data, int max_samples) {
  if (model.gi_blocks().empty()) {
    throw ConfigError("audit: model has no GI block (placement=none)");
  }
  const int n = std::min(data.images.n(), std::max(0, max_samples));
  if (n == 0) throw ConfigError("audit: no samples");
  const Shape4 s = data.images.shape();
  const std::size_t plane = static_cast<std::size_t>(s.c) * s.h * s.w;
  std::vector<KernelField> fields;
  constexpr int kChunk = 32;
  for (int lo = 0; lo < n; lo += kChunk) {
    const int hi = std::min(n, lo + kChunk);
    auto src = data.images.data().subspan(static_cast<std::size_t>(lo) * plane,
                                          static_cast<std::size_t>(hi - lo) * plane);
    Tensor4 x({hi - lo, s.c, s.h, s.w}, std::vector<double>(src.begin(), src.end()));
    FieldSink sink;
    model.infer(x, &sink);
    const KernelField& f = sink.back();  // end block comes last
    for (int b = 0; b < hi - lo; ++b) fields.push_back(sample_field(f, b));
  }
  return build_report(fields, std::vector<int>(data.labels.begin(), data.labels.begin() + n));
}

namespace {

nlohmann::ordered_json kernel_json(const Kernel2D& k) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (int u = 0; u < k.k; ++u) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (int v = 0; v < k.k; ++v) row.push_back(k.at(u, v));
    rows.push_back(row);
  }
  return rows;
}

nlohmann::ordered_json number(double x) {
  return std::isfinite(x) ? nlohmann::ordered_json(x) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json class_json(const ClassSummary& c) {
  nlohmann::ordered_json j;
  j["n"] = c.n;
  for (std::size_t i = 0; i < 4; ++i) {
    j[kIndicators[i]] = {{"mean", number(c.mean[i])}, {"std", number(c.std[i])}};
  }
  j["hf_lf_overflow"] = c.hf_lf_overflow;
  return j;
}

// Published sign for attack minus bonafide.
nlohmann::ordered_json direction_json(double d, double published_d, const char* published_text) {
  nlohmann::ordered_json j;
  j["published"] = published_text;
  j["published_cohens_d"] = published_d;
  j["cohens_d"] = number(d);
  if (std::isfinite(d) && d != 0.0) {
    j["observed"] = d > 0 ? "attack > bonafide" : "bonafide > attack";
    j["matches_published"] = (d > 0) == (published_d > 0);
  } else {
    j["observed"] = "undetermined";
    j["matches_published"] = nullptr;
  }
  return j;
}

void write_map(const std::filesystem::path& stem, const Kernel2D& k) {
  constexpr int kScale = 16;
  const auto [lo, hi] = std::minmax_element(k.w.begin(), k.w.end());
  Image img(k.k * kScale, k.k * kScale, 1);
  for (int r = 0; r < img.rows; ++r)
    for (int c = 0; c < img.cols; ++c) {
      const double x = k.at(r / kScale, c / kScale);
      img.at(r, c, 0) = *hi > *lo ? 255.0 * (x - *lo) / (*hi - *lo) : 0.0;
    }
  write_pnm(stem.string() + ".pgm", img);
  save_tensor(stem.string() + ".t4d", Tensor4({1, 1, k.k, k.k}, k.w));
}

}  // namespace

std::string audit_json(const AuditReport& r) {
  nlohmann::ordered_json j;
  j["k"] = r.k;
  j["n_samples"] = r.samples.size();
  j["classes"] = {{"bonafide", class_json(r.bonafide)}, {"attack", class_json(r.attack)}};
  nlohmann::ordered_json d;
  for (std::size_t i = 0; i < 4; ++i) d[kIndicators[i]] = number(r.cohens_d[i]);
  j["cohens_d"] = d;
  j["direction"] = {
      {"hf_lf", direction_json(r.cohens_d[0], 0.782, "attack > bonafide")},
      {"anisotropy", direction_json(r.cohens_d[1], -1.486, "bonafide > attack")},
  };
  j["mean_kernel"] = {{"bonafide", kernel_json(r.bonafide.mean_kernel)},
                      {"attack", kernel_json(r.attack.mean_kernel)}};
  j["mean_energy"] = {{"bonafide", kernel_json(r.bonafide.mean_energy)},
                      {"attack", kernel_json(r.attack.mean_energy)}};
  return j.dump(2);
}

void write_audit(const std::filesystem::path& outdir, const AuditReport& r) {
  std::filesystem::create_directories(outdir);
  {
    std::ofstream out(outdir / "audit.json");
    if (!out) throw DataError("cannot write " + (outdir / "audit.json").string());
    out << audit_json(r) << '\n';
  }
  write_map(outdir / "mean_kernel_bonafide", r.bonafide.mean_kernel);
  write_map(outdir / "mean_kernel_attack", r.attack.mean_kernel);
  write_map(outdir / "mean_energy_bonafide", r.bonafide.mean_energy);
  write_map(outdir / "mean_energy_attack", r.attack.mean_energy);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto path = outdir / (std::string("hist_") + kIndicators[i] + ".csv");
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "bin_lo,bin_hi,count_bonafide,count_attack\n";
    const Histogram& h = r.histograms[i];
    const int bins = static_cast<int>(h.bonafide.size());
    char buf[128];
    for (int b = 0; b < bins; ++b) {
      const double lo = h.lo + (h.hi - h.lo) * b / bins;
      const double hi = h.lo + (h.hi - h.lo) * (b + 1) / bins;
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%d,%d\n", lo, hi, h.bonafide[b], h.attack[b]);
      out << buf;
    }
  }
}

void export_field(const std::filesystem::path& path, const KernelField& field) {
  const Tensor4& t = field.values();
  save_tensor(path, t.reshaped({t.n() * field.groups(), field.taps(), t.h(), t.w()}));
  std::ofstream hdr(path.string() + ".hdr");
  if (!hdr) throw DataError("cannot write " + path.string() + ".hdr");
  hdr << "n " << t.n() << "\nG " << field.groups() << "\nk " << field.k() << '\n';
}

}  // namespace gipad
