#pragma once

#include <cstdint>
#include <vector>

#include "v2m/core/rng.hpp"
#include "v2m/core/tensor.hpp"

namespace v2m::contrastive {

/// Admissible temporal shifts s = sign * (k * n + m) for minimal cycle n and
/// clip length N: m in [ceil(0.1n), floor(0.4n)] or [ceil(0.6n), floor(0.9n)],
/// k >= 1, and 0 < |s| < 0.5 N.
struct ShiftRule {
  int cycle = 1;   // n
  int length = 1;  // N

  std::vector<int> residues() const;
  bool valid(long s) const;
  /// All admissible positive magnitudes, ascending.
  std::vector<int> magnitudes() const;
  /// Uniform over admissible magnitudes, then a uniform sign. Throws
  /// FeasibilityError when none exist.
  long sample(Rng& rng) const;
};

/// Circular shift along axis 0 of [N, ...]: out[t] = x[(t - s) mod N].
Tensor apply_shift(const Tensor& x, long s);

}  // namespace v2m::contrastive
