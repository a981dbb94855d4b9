#pragma once

// Spectral and spatial statistics of generated GI kernels, class-wise
// aggregates and effect sizes.

#include <array>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "gipad/data.hpp"
#include "gipad/model.hpp"

namespace gipad {

/// Square k x k kernel, row-major; (u, v) = (row, col).
struct Kernel2D {
  int k = 0;
  std::vector<double> w;

  Kernel2D() = default;
  explicit Kernel2D(int size, double fill = 0.0)
      : k(size), w(static_cast<std::size_t>(size) * size, fill) {}
  double& at(int u, int v) { return w[static_cast<std::size_t>(u) * k + v]; }
  double at(int u, int v) const { return w[static_cast<std::size_t>(u) * k + v]; }
};

// Returned by hf_lf_ratio when the low-frequency energy vanishes.
inline constexpr double kRatioOverflow = std::numeric_limits<double>::infinity();
inline constexpr double kEnergyFloor = 1e-15;

/// |DFT|^2 of the kernel, shifted so the DC bin sits at (k/2, k/2).
Kernel2D energy_map(const Kernel2D& kernel);

/// High- over low-frequency DFT energy; bins with integer frequency radius
/// <= 1 (DC included) are low frequency. kRatioOverflow when LF < 1e-15.
/// Throws UndefinedMetricError for an all-zero kernel.
double hf_lf_ratio(const Kernel2D& kernel);

/// (l1 - l2) / (l1 + l2) of the energy-weighted second-moment matrix of the
/// non-DC frequencies; 0 when non-DC energy < 1e-15. Energy of Nyquist bins
/// of even kernels is split between the two equivalent frequencies.
double anisotropy(const Kernel2D& kernel);

double dc_offset(const KernelField& field);
/// Mean over (sample, group, tap) of the population variance over positions.
double position_variance(const KernelField& field);

double cohens_d(const std::vector<double>& a, const std::vector<double>& b);

// Kernel of sample b averaged over groups and positions.
Kernel2D mean_kernel(const KernelField& field, int b);
// Single-sample view of a field.
KernelField sample_field(const KernelField& field, int b);

struct KernelStats {
  double hf_lf = 0;
  double anisotropy = 0;
  double dc_offset = 0;
  double position_variance = 0;
};

inline constexpr std::array<const char*, 4> kIndicators = {"hf_lf", "anisotropy", "dc_offset",
                                                           "position_variance"};
double indicator(const KernelStats& s, std::size_t i);

// hf_lf, anisotropy and dc_offset on the averaged kernel; position variance
// on the unaveraged field of the sample.
KernelStats kernel_stats(const KernelField& field, int b);

struct Histogram {
  double lo = 0;
  double hi = 0;
  std::vector<int> bonafide;
  std::vector<int> attack;
};

inline constexpr int kHistogramBins = 30;

// Equal-width bins over the pooled min-max of the finite values.
Histogram histogram(const std::vector<double>& bonafide, const std::vector<double>& attack,
                    int bins = kHistogramBins);

struct ClassSummary {
  std::size_t n = 0;
  std::array<double, 4> mean{};
  std::array<double, 4> std{};
  std::size_t hf_lf_overflow = 0;
  Kernel2D mean_kernel;
  Kernel2D mean_energy;
};

struct AuditReport {
  int k = 0;
  std::vector<KernelStats> samples;
  std::vector<int> labels;
  ClassSummary bonafide;
  ClassSummary attack;
  // attack minus bonafide; NaN when undefined
  std::array<double, 4> cohens_d{};
  std::array<Histogram, 4> histograms;
};

/// Captures the GI kernel field (the end block when present) for up to
/// max_samples frames and builds the report. Throws ConfigError when the
/// model has no GI block.
AuditReport audit_run(const Model& model, const Batch& data, int max_samples);
AuditReport build_report(const std::vector<KernelField>& fields, const std::vector<int>& labels);

std::string audit_json(const AuditReport& r);
/// Writes audit.json, per-class mean kernel and energy maps (PGM, min-max
/// normalized, plus raw T4D1) and one histogram CSV per indicator.
void write_audit(const std::filesystem::path& outdir, const AuditReport& r);

/// Field export: T4D1 tensor of dims (n*G, k*k, h, w) plus a text sidecar
/// `<path>.hdr` naming n, G and k.
void export_field(const std::filesystem::path& path, const KernelField& field);

}  // namespace gipad
