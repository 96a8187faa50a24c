#pragma once

// Finite-difference verification of every backward pass in the library,
// from the primitive ops up to embedder parameters through the full loss.

#include <cstdint>
#include <string>
#include <vector>

#include "cycas/matrix.hpp"

namespace cycas {

struct GradcheckOptions {
  std::size_t instances = 100;
  std::uint64_t seed = 2024;
  double step = 1e-6;
  double tolerance = 1e-5;
  /// Negates the analytic gradient of the named op. Mutation testing only.
  std::string inject_sign_flip;
};

struct GradcheckEntry {
  std::string op;
  double max_rel_error = 0.0;
  std::size_t instances = 0;
  std::size_t rejected = 0;  // near-tie draws that were resampled
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double seconds = 0.0;

  bool passed() const;
};

/// Names in report order.
std::vector<std::string> gradient_suite_ops();

GradcheckReport run_gradient_suite(const GradcheckOptions& options = {});

/// True when a max or hinge in the margin loss is within `gap` of switching,
/// where finite differences straddle a kink.
bool near_margin_tie(const Matrix& c, double margin, double gap = 1e-4);

}  // namespace cycas
