#include "v2m/contrastive/shift.hpp"

#include <cstdlib>

#include "v2m/core/error.hpp"

namespace v2m::contrastive {

std::vector<int> ShiftRule::residues() const {
  std::vector<int> out;
  if (cycle < 1) return out;
  const int n = cycle;
  for (int m = (n + 9) / 10; m <= (4 * n) / 10; ++m) out.push_back(m);
  for (int m = (6 * n + 9) / 10; m <= (9 * n) / 10; ++m) out.push_back(m);
  return out;
}

bool ShiftRule::valid(long s) const {
  if (cycle < 1 || s == 0) return false;
  const long a = std::labs(s);
  if (2 * a >= length || a < cycle) return false;
  const long m = a % cycle;
  for (int r : residues())
    if (r == m) return true;
  return false;
}

std::vector<int> ShiftRule::magnitudes() const {
  std::vector<int> out;
  if (cycle < 1) return out;
  for (long a = cycle; 2 * a < length; ++a)
    if (valid(a)) out.push_back(static_cast<int>(a));
  return out;
}

long ShiftRule::sample(Rng& rng) const {
  const std::vector<int> mags = magnitudes();
  if (mags.empty()) {
    throw FeasibilityError("no admissible shift for cycle " + std::to_string(cycle) + " and length " +
                           std::to_string(length));
  }
  const long a = mags[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(mags.size()) - 1))];
  return rng.bernoulli(0.5) ? a : -a;
}

Tensor apply_shift(const Tensor& x, long s) {
  if (x.ndim() == 0 || x.dim(0) == 0) return x;
  const auto n = static_cast<long>(x.dim(0));
  const std::size_t row = x.size() / x.dim(0);
  Tensor out(x.shape());
  for (long t = 0; t < n; ++t) {
    const long src = ((t - s) % n + n) % n;
    for (std::size_t k = 0; k < row; ++k) out[static_cast<std::size_t>(t) * row + k] = x[static_cast<std::size_t>(src) * row + k];
  }
  return out;
}

}  // namespace v2m::contrastive
