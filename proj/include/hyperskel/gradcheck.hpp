#pragma once

// Analytic-vs-finite-difference gradient suite over every registered
// differentiable op.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace hyperskel {

struct GradcheckEntry {
  std::string name;
  double worst_error = 0.0;
  double threshold = 0.0;
  std::size_t cases = 0;
  bool passed = false;
};

struct GradcheckOptions {
  std::uint64_t seed = 2024;
  /// Threshold for every op except the closed-form distance gradient.
  double threshold = 1e-4;
  double dist_threshold = 1e-5;
  /// Pairs per curvature for the closed-form distance gradient.
  std::size_t dist_pairs = 100;
  /// Negative control: flips the sign of the closed-form distance gradient.
  bool corrupt_dist_grad = false;
  /// Restrict to ops whose name contains this string (empty = all).
  std::string filter;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  bool passed() const;
  double worst(const std::string& name) const;
};

std::vector<std::string> registered_ops();
GradcheckReport run_gradcheck(const GradcheckOptions& opts = {});
std::string format_report(const GradcheckReport& report);

}  // namespace hyperskel
