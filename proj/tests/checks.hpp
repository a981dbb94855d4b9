#pragma once

// Oracle comparisons shared by the unit tests and the acceptance runner. Each
// returns the worst discrepancy it saw so callers pick their own tolerance.

#include <cstdint>
#include <string>

namespace gipad::checks {

// Max |GI - nested loop| over random configurations (N<=2, C<=16, H,W<=8,
// k in {3,5}, G a random divisor of C).
double gi_oracle_max_abs(int configs, std::uint64_t seed);

struct ReductionErrors {
  double g1_vs_involution = 0;
  double gc_vs_channel_involution = 0;
  double constant_vs_depthwise = 0;
};
ReductionErrors reduction_errors(int trials, std::uint64_t seed);

// Max relative error of analytic gradients against central differences.
double gi_grad_err(std::uint64_t seed);
double conv_grad_err(std::uint64_t seed);
double generator_grad_err(std::uint64_t seed);
double se_grad_err(std::uint64_t seed);
// Width 0.25, 32x32 input, BN in infer mode; sampled entries of every
// parameter tensor and of the input.
double model_grad_err(std::uint64_t seed, int entries_per_tensor = 1);

// Max relative gap of <gy, GI(x, H)> against <gx, x> and against <gH, H>.
double gi_adjoint_rel(std::uint64_t seed);

struct MetricSweep {
  int trials = 0;
  int mismatches = 0;
  std::string first_failure;
};
// Random score sets with 2..20 samples against brute-force counting.
MetricSweep metric_oracle_sweep(int trials, std::uint64_t seed);

// Grad-CAM of a hand-built conv + relu / GAP + linear model against the
// chain rule worked out by hand.
double gradcam_manual_err(std::uint64_t seed);

}  // namespace gipad::checks
