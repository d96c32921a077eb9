#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "speedmode/nn/tape.hpp"

namespace speedmode::nn {

struct GradInput {
  std::string name;
  Tensor<double> value;
  bool differentiable = true;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_input;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor so entries with near-zero gradient are compared
  /// on an absolute scale.
  double floor = 1e-6;
  std::uint64_t seed = 7;
};

/// Builds a fragment on a fresh tape from leaves holding the inputs (in
/// order) and returns its output.
using Fragment = std::function<Var(Tape<double>&, std::span<const Var>)>;

/// Reduces the fragment output to sum(R * out) with a seeded random R,
/// then compares the analytic gradient of every differentiable input
/// element with a central difference. Relative error per element is
/// |a - n| / max(|a|, |n|, floor).
GradCheckResult gradient_check(const Fragment& fragment, const std::vector<GradInput>& inputs,
                               const GradCheckOptions& options = {});

}  // namespace speedmode::nn
