#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crossfuse/config.hpp"

// Central finite-difference verification of the analytic gradients, for the
// individual primitives (32-bit and 64-bit shadow path) and for a whole model.
namespace crossfuse::gradcheck {

struct Tolerances {
  double step_f32 = 1e-3;
  double step_f64 = 1e-5;
  double tol_f32 = 1e-3;
  double tol_f64 = 1e-6;
  double step_model = 1e-3;
  double tol_model = 1e-2;
};

struct OpResult {
  std::string op;
  std::string precision;  // "f32", "f64"
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error < tolerance; }
};

/// |analytic - numeric| / max(|analytic|, |numeric|, 1).
double relative_error(double analytic, double numeric);

std::vector<std::string> primitive_ops();

/// Checks each named op in both precisions. `corrupt_op` (test hook) perturbs
/// that op's analytic gradient so the check must fail.
std::vector<OpResult> check_primitives(const std::vector<std::string>& ops, const Tolerances& tol = {},
                                       std::uint64_t seed = 7, const std::string& corrupt_op = "");

/// Small config used for the whole-model check: d = 8, h = 2, tiny encoders.
FusionModelConfig tiny_model_config();

/// Samples up to `coords_per_tensor` coordinates of every parameter tensor and
/// compares d(loss)/d(theta) against central differences in 32-bit.
OpResult check_model(const FusionModelConfig& cfg, std::size_t coords_per_tensor = 50, const Tolerances& tol = {},
                     std::uint64_t seed = 11, bool corrupt = false);

}  // namespace crossfuse::gradcheck
