#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace v2m::eval {

/// Throws InputError unless times are non-negative and strictly increasing.
void validate_beats(std::span<const double> times);

/// Maximum exclusive pairing of generated and reference beats with
/// |g - r| < tol. Pairs are (gen index, ref index), ascending.
std::vector<std::pair<std::size_t, std::size_t>> match_beats(std::span<const double> gen, std::span<const double> ref,
                                                             double tol = 0.1);

/// 100 |gen| / |ref|, unclipped. Empty reference: MetricUndefinedError.
double bcs(std::span<const double> gen, std::span<const double> ref);
/// 100 |matching| / |ref|.
double bhs(std::span<const double> gen, std::span<const double> ref, double tol = 0.1);

struct ClipScore {
  std::string clip;
  std::size_t run = 0;
  double bcs = 0.0;
  double bhs = 0.0;
  std::optional<double> sim;
};

struct Report {
  std::vector<ClipScore> clips;
  std::vector<std::string> excluded;  // clips with an empty reference
  std::size_t runs = 0;
  double bcs = 0.0;
  double bhs = 0.0;
  std::optional<double> sim;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

/// Unweighted mean over clips within each run, then over runs.
Report aggregate(std::vector<ClipScore> clips, std::vector<std::string> excluded = {});

}  // namespace v2m::eval
