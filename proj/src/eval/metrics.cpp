#include "v2m/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "v2m/core/error.hpp"

namespace v2m::eval {

void validate_beats(std::span<const double> times) {
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!std::isfinite(times[i]) || times[i] < 0.0) throw InputError("beat times must be finite and non-negative");
    if (i > 0 && !(times[i] > times[i - 1])) throw InputError("beat times must be strictly increasing");
  }
}

std::vector<std::pair<std::size_t, std::size_t>> match_beats(std::span<const double> gen, std::span<const double> ref,
                                                             double tol) {
  if (!(tol > 0.0)) throw InputError("matching tolerance must be positive");
  const std::size_t n = gen.size(), m = ref.size();
  std::vector<std::vector<std::size_t>> dp(n + 1, std::vector<std::size_t>(m + 1, 0));
  auto hit = [&](std::size_t i, std::size_t j) { return std::abs(gen[i] - ref[j]) < tol; };
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j) {
      std::size_t best = std::max(dp[i - 1][j], dp[i][j - 1]);
      if (hit(i - 1, j - 1)) best = std::max(best, dp[i - 1][j - 1] + 1);
      dp[i][j] = best;
    }
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::size_t i = n, j = m;
  while (i > 0 && j > 0) {
    if (dp[i][j] == dp[i][j - 1]) {
      --j;  // a later reference beat is never needed; keeps pairings on earlier ones
    } else if (hit(i - 1, j - 1) && dp[i][j] == dp[i - 1][j - 1] + 1) {
      pairs.emplace_back(i - 1, j - 1);
      --i;
      --j;
    } else {
      --i;
    }
  }
  std::reverse(pairs.begin(), pairs.end());
  return pairs;
}

double bcs(std::span<const double> gen, std::span<const double> ref) {
  if (ref.empty()) throw MetricUndefinedError("reference beat set is empty");
  return 100.0 * static_cast<double>(gen.size()) / static_cast<double>(ref.size());
}

double bhs(std::span<const double> gen, std::span<const double> ref, double tol) {
  if (ref.empty()) throw MetricUndefinedError("reference beat set is empty");
  return 100.0 * static_cast<double>(match_beats(gen, ref, tol).size()) / static_cast<double>(ref.size());
}

Report aggregate(std::vector<ClipScore> clips, std::vector<std::string> excluded) {
  Report r;
  std::sort(clips.begin(), clips.end(), [](const ClipScore& a, const ClipScore& b) {
    return a.run != b.run ? a.run < b.run : a.clip < b.clip;
  });
  std::map<std::size_t, std::vector<const ClipScore*>> by_run;
  for (const ClipScore& c : clips) by_run[c.run].push_back(&c);
  r.runs = by_run.size();
  bool have_sim = !clips.empty();
  for (const ClipScore& c : clips) have_sim = have_sim && c.sim.has_value();
  double sim_total = 0.0;
  for (const auto& [run, list] : by_run) {
    double b = 0.0, h = 0.0, s = 0.0;
    for (const ClipScore* c : list) {
      b += c->bcs;
      h += c->bhs;
      if (have_sim) s += *c->sim;
    }
    const double k = static_cast<double>(list.size());
    r.bcs += b / k;
    r.bhs += h / k;
    sim_total += s / k;
  }
  if (r.runs > 0) {
    r.bcs /= static_cast<double>(r.runs);
    r.bhs /= static_cast<double>(r.runs);
    if (have_sim) r.sim = sim_total / static_cast<double>(r.runs);
  }
  std::sort(excluded.begin(), excluded.end());
  r.clips = std::move(clips);
  r.excluded = std::move(excluded);
  return r;
}

nlohmann::json Report::to_json() const {
  nlohmann::json j;
  j["runs"] = runs;
  j["bcs"] = bcs;
  j["bhs"] = bhs;
  j["sim"] = sim ? nlohmann::json(*sim) : nlohmann::json(nullptr);
  j["excluded"] = excluded;
  nlohmann::json rows = nlohmann::json::array();
  for (const ClipScore& c : clips) {
    rows.push_back({{"clip", c.clip},
                    {"run", c.run},
                    {"bcs", c.bcs},
                    {"bhs", c.bhs},
                    {"sim", c.sim ? nlohmann::json(*c.sim) : nlohmann::json(nullptr)}});
  }
  j["clips"] = rows;
  return j;
}

std::string Report::to_csv() const {
  std::ostringstream out;
  out.precision(10);
  out << "clip,run,bcs,bhs,sim\n";
  for (const ClipScore& c : clips) {
    out << c.clip << ',' << c.run << ',' << c.bcs << ',' << c.bhs << ',';
    if (c.sim) out << *c.sim;
    out << '\n';
  }
  out << "mean,," << bcs << ',' << bhs << ',';
  if (sim) out << *sim;
  out << '\n';
  return out.str();
}

}  // namespace v2m::eval
