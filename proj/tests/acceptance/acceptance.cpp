// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <tuple>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "v2m/adaptor/adaptor.hpp"
#include "v2m/beat/beat.hpp"
#include "v2m/cli/pipeline.hpp"
#include "v2m/cli/run.hpp"
#include "v2m/contrastive/contrastive.hpp"
#include "v2m/contrastive/shift.hpp"
#include "v2m/core/error.hpp"
#include "v2m/core/grad_check.hpp"
#include "v2m/core/ops.hpp"
#include "v2m/core/serialize.hpp"
#include "v2m/eval/metrics.hpp"
#include "v2m/flowgen/flowgen.hpp"
#include "v2m/synth/synth.hpp"

using namespace v2m;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(s));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Tensor normal_tensor(Shape s, Rng& rng) {
  Tensor t(std::move(s));
  for (double& v : t.data()) v = rng.normal();
  return t;
}

// Random positive weighting so no output coordinate has a vanishing gradient by symmetry.
Var probe(Var y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, y.graph().constant(random_tensor(y.shape(), rng, 0.5, 1.5))));
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path work_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("v2m_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// ---- 1 ----------------------------------------------------------------------

struct GradCase {
  std::string name;
  MultiScalarFn f;
  std::vector<Tensor> inputs;
  double h = 1e-5;
};

// Central differences over every entry of every parameter in `store`.
double param_grad_error(ParamStore& store, const std::function<Var(Graph&)>& loss_fn, double h) {
  store.zero_grad();
  {
    Graph g(true);
    g.backward(loss_fn(g));
  }
  double worst = 0.0;
  for (auto& [name, p] : store) {
    const Tensor ad = p.grad;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double x0 = p.value[i];
      p.value[i] = x0 + h;
      double up, down;
      {
        Graph g;
        up = loss_fn(g).value().item();
      }
      p.value[i] = x0 - h;
      {
        Graph g;
        down = loss_fn(g).value().item();
      }
      p.value[i] = x0;
      const double fd = (up - down) / (2.0 * h);
      worst = std::max(worst, std::abs(ad[i] - fd) / (std::abs(fd) + 1e-12));
    }
  }
  store.zero_grad();
  return worst;
}

Outcome criterion_1() {
  const auto t0 = Clock::now();
  Rng rng(101);
  const auto pos = [&](Shape s) { return random_tensor(std::move(s), rng, 0.5, 2.0); };
  const auto rnd = [&](Shape s) { return random_tensor(std::move(s), rng); };
  std::vector<GradCase> cases;
  const auto unary = [&](const std::string& name, std::function<Var(Var)> op, Tensor x) {
    cases.push_back({name, [op](Graph&, std::span<const Var> v) { return probe(op(v[0]), 7); }, {std::move(x)}});
  };
  const auto binary = [&](const std::string& name, std::function<Var(Var, Var)> op, Tensor a, Tensor b) {
    cases.push_back(
        {name, [op](Graph&, std::span<const Var> v) { return probe(op(v[0], v[1]), 8); }, {std::move(a), std::move(b)}});
  };
  binary("add", [](Var a, Var b) { return add(a, b); }, rnd({3, 4}), rnd({4}));
  binary("sub", [](Var a, Var b) { return sub(a, b); }, rnd({2, 3, 4}), rnd({3, 1}));
  binary("mul", [](Var a, Var b) { return mul(a, b); }, rnd({3, 4}), rnd({3, 4}));
  binary("div", [](Var a, Var b) { return div(a, b); }, rnd({3, 4}), pos({1, 4}));
  unary("scale", [](Var x) { return scale(x, -1.7); }, rnd({5}));
  unary("add_scalar", [](Var x) { return add_scalar(x, 0.3); }, rnd({5}));
  unary("exp", [](Var x) { return exp(x); }, rnd({3, 3}));
  unary("log", [](Var x) { return log(x); }, pos({3, 3}));
  unary("sigmoid", [](Var x) { return sigmoid(x); }, rnd({3, 3}));
  unary("square", [](Var x) { return square(x); }, rnd({3, 3}));
  unary("silu", [](Var x) { return silu(x); }, rnd({3, 3}));
  unary("sum", [](Var x) { return sum(x); }, rnd({2, 3}));
  unary("mean", [](Var x) { return mean(x); }, rnd({2, 3}));
  unary("sum_axis", [](Var x) { return sum_axis(x, 1); }, rnd({2, 3, 4}));
  unary("mean_axis", [](Var x) { return mean_axis(x, -1, true); }, rnd({2, 3, 4}));
  unary("reshape", [](Var x) { return reshape(x, {4, 6}); }, rnd({2, 3, 4}));
  unary("permute", [](Var x) { return permute(x, {2, 0, 1}); }, rnd({2, 3, 4}));
  unary("transpose", [](Var x) { return transpose(x); }, rnd({2, 3, 4}));
  unary("slice", [](Var x) { return slice(x, 1, 1, 3); }, rnd({2, 4, 3}));
  binary("concat", [](Var a, Var b) { return concat(std::vector<Var>{a, b}, 0); }, rnd({2, 3}), rnd({4, 3}));
  unary("gather_rows", [](Var x) { return gather_rows(x, {2, 0, -1, 2}); }, rnd({3, 4}));
  binary("matmul", [](Var a, Var b) { return matmul(a, b); }, rnd({2, 3, 4}), rnd({4, 5}));
  binary("bmm", [](Var a, Var b) { return bmm(a, b); }, rnd({2, 3, 4}), rnd({2, 4, 2}));
  unary("softmax", [](Var x) { return softmax(x, 0); }, rnd({4, 3}));
  unary("log_softmax", [](Var x) { return log_softmax(x, -1); }, rnd({4, 3}));
  binary("rms_norm", [](Var a, Var b) { return rms_norm(a, b, 1e-6); }, rnd({3, 6}), pos({6}));
  unary("rope_apply",
        [](Var x) {
          const std::vector<long> p{0, 3, 7};
          return rope_apply(x, p);
        },
        rnd({3, 2, 4}));
  unary("l2_normalize", [](Var x) { return l2_normalize(x, 1e-8); }, rnd({3, 5}));
  binary("cosine_similarity", [](Var a, Var b) { return cosine_similarity(a, b); }, rnd({3, 5}), rnd({3, 5}));
  binary("linear", [](Var a, Var b) { return linear(a, b); }, rnd({3, 4}), rnd({4, 2}));
  cases.push_back({"linear+bias",
                   [](Graph&, std::span<const Var> v) { return probe(linear(v[0], v[1], v[2]), 9); },
                   {rnd({2, 3, 4}), rnd({4, 2}), rnd({2})}});

  // Composed losses.
  cases.push_back({"L_S",
                   [](Graph&, std::span<const Var> v) { return contrastive::loss_semantic(v[0], v[1], v[2]).loss; },
                   {rnd({4, 5, 6}), rnd({4, 5, 6}), Tensor::scalar(std::log(0.1))}});
  cases.push_back({"L_T",
                   [](Graph&, std::span<const Var> v) {
                     return contrastive::loss_temporal(v[0], v[1], v[2], v[3], v[4]).loss;
                   },
                   {rnd({4, 5, 6}), rnd({4, 5, 6}), rnd({4, 5, 6}), rnd({4, 5, 6}), Tensor::scalar(std::log(0.1))}});
  cases.push_back({"L_T symmetric",
                   [](Graph&, std::span<const Var> v) {
                     return contrastive::loss_temporal(v[0], v[1], v[2], v[3], v[4], true).loss;
                   },
                   {rnd({3, 4, 5}), rnd({3, 4, 5}), rnd({3, 4, 5}), rnd({3, 4, 5}), Tensor::scalar(std::log(0.2))}});

  flowgen::DitConfig dc;
  dc.latent_channels = 3;
  dc.cond_dim = 4;
  dc.hidden = 8;
  dc.layers = 1;
  dc.heads = 2;
  dc.ffn = 12;
  dc.time_dim = 6;
  ParamStore store;
  Rng init(5);
  flowgen::VelocityModel model(dc, store, init);
  const Tensor z1 = normal_tensor({2, 5, 3}, rng);
  flowgen::RfmDraw draw;
  draw.t = {0.3, 0.8};
  draw.z0 = normal_tensor({2, 5, 3}, rng);
  draw.dropped = {false, true};
  draw.context = {2, 0};
  cases.push_back({"L_RFM (condition)",
                   [&](Graph& g, std::span<const Var> v) { return flowgen::rfm_loss(model, g, z1, v[0], draw); },
                   {rnd({2, 5, 4})}});

  double worst = 0.0;
  std::string worst_name;
  for (const GradCase& c : cases) {
    const double e = grad_check(c.f, c.inputs, c.h).max_rel_error;
    if (e > worst) {
      worst = e;
      worst_name = c.name;
    }
  }
  const Tensor cond = rnd({2, 5, 4});
  const double perr = param_grad_error(
      store, [&](Graph& g) { return flowgen::rfm_loss(model, g, z1, g.constant(cond), draw); }, 1e-5);
  if (perr > worst) {
    worst = perr;
    worst_name = "L_RFM (parameters)";
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << cases.size() + 1 << " checks, max rel err " << worst << " (" << worst_name << "), " << secs << " s";
  return {worst < 1e-5 && secs < 60.0, d.str()};
}

// ---- 2 ----------------------------------------------------------------------

Outcome criterion_2() {
  const auto ls = [](const Tensor& s) {
    Graph g;
    return contrastive::loss_semantic_from_sims(g.constant(s), g.constant(Tensor::scalar(std::log(0.07))))
        .loss.value()
        .item();
  };
  const auto lt = [](const Tensor& s, const Tensor& a, const Tensor& b) {
    Graph g;
    return contrastive::loss_temporal_from_sims(g.constant(s), g.constant(a), g.constant(b),
                                                g.constant(Tensor::scalar(std::log(0.07))))
        .loss.value()
        .item();
  };
  const double m1 = ls(Tensor({1, 1}, 0.37));
  const double m2 = ls(Tensor({2, 2}, 0.37));
  const Tensor one({1, 1}, 0.37);
  const double t1 = lt(one, one, one);
  Rng rng(202);
  std::size_t ok = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 2 + static_cast<std::size_t>(rng.uniform_int(0, 6));
    Graph g;
    const Var mu = g.constant(random_tensor({m, 6, 5}, rng)), vi = g.constant(random_tensor({m, 6, 5}, rng));
    const Var sh = g.constant(random_tensor({m, 6, 5}, rng)), rp = g.constant(random_tensor({m, 6, 5}, rng));
    const Var tau = g.constant(Tensor::scalar(std::log(rng.uniform(0.03, 0.5))));
    const double s = contrastive::loss_semantic(mu, vi, tau).loss.value().item();
    const double t = contrastive::loss_temporal(mu, vi, sh, rp, tau).loss.value().item();
    ok += t >= s ? 1 : 0;
  }
  const bool pass = m1 == 0.0 && std::abs(m2 - std::log(2.0)) <= 1e-9 && std::abs(t1 - 0.5 * std::log(3.0)) <= 1e-9 &&
                    ok == 100;
  std::ostringstream d;
  d.precision(12);
  d << "L_S(M=1)=" << m1 << ", L_S(M=2)=" << m2 << ", L_T(M=1)=" << t1 << ", L_T>=L_S in " << ok << "/100";
  return {pass, d.str()};
}

// ---- 3 ----------------------------------------------------------------------

Outcome criterion_3() {
  Rng rng(303);
  std::size_t bad = 0, total = 0;
  for (int n : {3, 10, 24})
    for (int N : {60, 100, 300}) {
      // Allowed offsets within a beat cycle, excluding the half-beat band.
      std::set<long> allowed;
      for (long m = 0; m < n; ++m) {
        const double f = static_cast<double>(m) / n;
        if ((f >= 0.1 - 1e-12 && f <= 0.4 + 1e-12) || (f >= 0.6 - 1e-12 && f <= 0.9 + 1e-12)) allowed.insert(m);
      }
      const contrastive::ShiftRule rule{n, N};
      for (int i = 0; i < 10000; ++i) {
        const long s = rule.sample(rng);
        const long a = std::labs(s);
        const bool ok = s != 0 && 2 * a < N && a >= n && allowed.count(a % n) == 1;
        bad += ok ? 0 : 1;
        ++total;
      }
    }
  return {bad == 0, std::to_string(total - bad) + "/" + std::to_string(total) + " samples admissible"};
}

// ---- 4 ----------------------------------------------------------------------

Outcome criterion_4() {
  Rng rng(404);
  std::size_t bad = 0;
  double worst_gain = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(40, 300));
    const auto dn = static_cast<std::size_t>(rng.uniform_int(static_cast<long>(n / 2), static_cast<long>(2 * n)));
    const Tensor x = random_tensor({n, 4}, rng);
    const Tensor donor = random_tensor({dn, 4}, rng);
    const contrastive::Replacement r = contrastive::random_replacement(x, donor, rng);
    const double N = static_cast<double>(n);
    if (static_cast<double>(r.length) < 0.2 * N || static_cast<double>(r.length) > 0.4 * N) ++bad;
    for (std::size_t t = 0; t < n; ++t) {
      if (t + r.fade >= r.start && t < r.start + r.length + r.fade) continue;
      for (std::size_t c = 0; c < 4; ++c)
        if (r.music.at({t, c}) != x.at({t, c})) ++bad;
    }
    for (std::size_t k = 0; k < r.fade; ++k) {
      const auto [g1, g2] = contrastive::crossfade_gains(k, r.fade);
      worst_gain = std::max(worst_gain, std::abs(g1 * g1 + g2 * g2 - 1.0));
      // The faded frames are exactly the stated mix.
      const std::size_t t = r.start - r.fade + k;
      const double expect = g1 * x.at({t, 0}) + g2 * donor.at({r.donor_offset + k, 0});
      if (std::abs(r.music.at({t, 0}) - expect) > 1e-12) ++bad;
    }
  }
  std::ostringstream d;
  d << "1000 replacements, " << bad << " violations, max |g1^2+g2^2-1| " << worst_gain;
  return {bad == 0 && worst_gain <= 1e-9, d.str()};
}

// ---- 5 ----------------------------------------------------------------------

Outcome criterion_5() {
  const auto t0 = Clock::now();
  bool pass = true;
  std::ostringstream d;
  for (int sr : {16000, 24000, 44100, 48000})
    for (double bpm : {60.0, 90.0, 120.0, 180.0}) {
      std::vector<double> truth;
      for (double t = 0.3; t < 9.95; t += 60.0 / bpm) truth.push_back(t);
      const std::vector<double> pcm = synth::render_click(truth, sr, 10.0);
      const beat::OnsetEnvelope env = beat::onset_envelope(pcm, sr);
      const beat::TempoCurve tempo = beat::estimate_tempo(env);
      const beat::BeatGrid grid = beat::track_beats(env, tempo);
      double worst = 0.0;
      for (double b : tempo.bpm) worst = std::max(worst, std::abs(b - bpm));
      std::size_t hits = 0;
      for (double b : truth) {
        bool hit = false;
        for (double x : grid.beat_times) hit |= std::abs(x - b) <= 0.020;
        hits += hit ? 1 : 0;
      }
      const double frac = static_cast<double>(hits) / static_cast<double>(truth.size());
      if (worst > 2.0 || frac < 0.9 || tempo.bpm.empty()) {
        pass = false;
        d << "[" << sr << " Hz " << bpm << " BPM: tempo err " << worst << ", hits " << frac << "] ";
      }
    }
  const double secs = seconds_since(t0);
  d << "16 tracks, " << secs << " s";
  return {pass && secs < 30.0, d.str()};
}

// ---- 6 ----------------------------------------------------------------------

std::size_t brute_force_matching(const std::vector<double>& gen, const std::vector<double>& ref, double tol) {
  std::vector<bool> used(ref.size(), false);
  std::function<std::size_t(std::size_t)> go = [&](std::size_t i) -> std::size_t {
    if (i == gen.size()) return 0;
    std::size_t best = go(i + 1);
    for (std::size_t j = 0; j < ref.size(); ++j) {
      if (used[j] || !(std::abs(gen[i] - ref[j]) < tol)) continue;
      used[j] = true;
      best = std::max(best, 1 + go(i + 1));
      used[j] = false;
    }
    return best;
  };
  return go(0);
}

std::vector<double> random_beats(Rng& rng, std::size_t lo, std::size_t hi, double span) {
  const auto n = static_cast<std::size_t>(rng.uniform_int(static_cast<long>(lo), static_cast<long>(hi)));
  std::vector<double> t;
  for (std::size_t i = 0; i < n; ++i) t.push_back(rng.uniform(0.0, span));
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  return t;
}

Outcome criterion_6() {
  Rng rng(606);
  std::size_t agree = 0;
  for (int i = 0; i < 500; ++i) {
    const auto g = random_beats(rng, 0, 8, 1.5), r = random_beats(rng, 0, 8, 1.5);
    agree += eval::match_beats(g, r).size() == brute_force_matching(g, r, 0.1) ? 1 : 0;
  }
  std::size_t bounded = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto g = random_beats(rng, 0, 30, 10.0), r = random_beats(rng, 1, 30, 10.0);
    bounded += eval::bhs(g, r) <= std::min(eval::bcs(g, r), 100.0) ? 1 : 0;
  }
  const std::vector<double> ref{1.0, 2.0, 3.0}, gen{1.05, 2.5, 2.95};
  const double h = eval::bhs(gen, ref), c = eval::bcs(gen, ref);
  const bool example = std::abs(h - 66.67) < 0.005 && c == 100.0;
  std::ostringstream d;
  d << "DP=brute force " << agree << "/500, BHS<=min(BCS,100) " << bounded << "/1000, example BHS " << h << " BCS "
    << c;
  return {agree == 500 && bounded == 1000 && example, d.str()};
}

// ---- 7 ----------------------------------------------------------------------

Outcome criterion_7() {
  Rng rng(707);
  const Tensor z0 = normal_tensor({6, 4}, rng), z1 = normal_tensor({6, 4}, rng);
  Tensor v(z0.shape());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = z1[i] - z0[i];
  const Tensor one = flowgen::euler_integrate([&](const Tensor&, double) { return v; }, z0, 1);
  double exact_err = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) exact_err = std::max(exact_err, std::abs(one[i] - z1[i]));

  const Tensor x0 = normal_tensor({3, 2}, rng);
  const auto decay = [](const Tensor& z, double) {
    Tensor d = z;
    for (double& x : d.data()) x = -x;
    return d;
  };
  std::vector<double> err;
  for (std::size_t steps : {10u, 20u, 40u, 80u}) {
    const Tensor out = flowgen::euler_integrate(decay, x0, steps);
    double e = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) e = std::max(e, std::abs(out[i] - x0[i] * std::exp(-1.0)));
    err.push_back(e);
  }
  bool ratios_ok = true;
  std::ostringstream d;
  d << "one-step error " << exact_err << ", ratios";
  for (std::size_t i = 1; i < err.size(); ++i) {
    const double r = err[i - 1] / err[i];
    ratios_ok &= r >= 1.8 && r <= 2.2;
    d << " " << r;
  }
  return {exact_err < 1e-12 && ratios_ok, d.str()};
}

// ---- 8 ----------------------------------------------------------------------

Outcome criterion_8() {
  Rng rng(808);
  ParamStore store;
  flowgen::VelocityModel model(flowgen::DitConfig{}, store, rng);
  const Tensor z = normal_tensor({12, 8}, rng), c = normal_tensor({12, 64}, rng);
  const Tensor vc = model.velocity(z, 0.37, &c), vn = model.velocity(z, 0.37, nullptr);
  const bool g1 = flowgen::cfg_velocity(model, z, 0.37, c, 1.0) == vc;
  const bool g0 = flowgen::cfg_velocity(model, z, 0.37, c, 0.0) == vn;
  const Tensor v4 = flowgen::cfg_velocity(model, z, 0.37, c, 4.0);
  double err = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) err = std::max(err, std::abs(v4[i] - (4.0 * vc[i] - 3.0 * vn[i])));
  std::ostringstream d;
  d << "gamma=1 exact " << (g1 ? "yes" : "no") << ", gamma=0 exact " << (g0 ? "yes" : "no") << ", gamma=4 err " << err;
  return {g1 && g0 && err < 1e-12 && vc != vn, d.str()};
}

// ---- 9 ----------------------------------------------------------------------

Outcome criterion_9() {
  Rng rng(909);
  ParamStore store;
  flowgen::VelocityModel model(flowgen::DitConfig{}, store, rng);
  const std::size_t n = 40, p = 12;
  const Tensor cond = normal_tensor({n, 64}, rng), z0 = normal_tensor({n, 8}, rng), prompt = normal_tensor({p, 8}, rng);
  const Tensor out = flowgen::sample(model, cond, {25, 4.0}, z0, &prompt);
  bool prefix = true;
  for (std::size_t i = 0; i < p * 8; ++i) prefix &= out[i] == prompt[i];

  // Training: gradients of the objective with respect to context-frame
  // predictions are exactly zero, and an all-context batch has zero loss and
  // zero parameter gradients.
  const Tensor z1 = normal_tensor({2, n, 8}, rng);
  flowgen::RfmDraw draw;
  draw.t = {0.25, 0.75};
  draw.z0 = normal_tensor({2, n, 8}, rng);
  draw.dropped = {false, false};
  draw.context = {p, 0};
  bool ctx_zero = true;
  {
    Graph g;
    const Var v = g.input(normal_tensor({2, n, 8}, rng));
    Tensor target(z1.shape());
    for (std::size_t i = 0; i < target.size(); ++i) target[i] = z1[i] - draw.z0[i];
    const Var loss = flowgen::rfm_objective(v, target, draw.context);
    g.backward(loss);
    const Tensor gv = g.grad(v);
    for (std::size_t t = 0; t < p; ++t)
      for (std::size_t c = 0; c < 8; ++c) ctx_zero &= gv.at({0, t, c}) == 0.0;
  }
  flowgen::RfmDraw all = draw;
  all.context = {n, n};
  store.zero_grad();
  double all_loss;
  {
    Graph g;
    const Var loss = flowgen::rfm_loss(model, g, z1, g.constant(normal_tensor({2, n, 64}, rng)), all);
    all_loss = loss.value().item();
    g.backward(loss);
  }
  bool grads_zero = true;
  for (const auto& [name, prm] : store)
    for (double x : prm.grad.data()) grads_zero &= x == 0.0;
  std::ostringstream d;
  d << "prompt prefix bit-equal " << (prefix ? "yes" : "no") << ", context grads zero " << (ctx_zero ? "yes" : "no")
    << ", all-context loss " << all_loss << ", param grads zero " << (grads_zero ? "yes" : "no");
  return {prefix && ctx_zero && all_loss == 0.0 && grads_zero, d.str()};
}

// ---- 10 ---------------------------------------------------------------------

cli::Config trend_config(std::uint64_t seed) {
  cli::Config cfg;
  cfg.set_value("seed", seed);
  cfg.set_value("threads", 1);
  cfg.set_value("data.min_s", 4.0);
  cfg.set_value("data.max_s", 12.0);
  cfg.set_value("pretrain.steps", 2000);
  cfg.set_value("pretrain.batch", 16);
  cfg.set_value("pretrain.lr", 1e-3);
  cfg.set_value("pretrain.window_min_s", 4.0);
  cfg.set_value("pretrain.window_max_s", 6.0);
  cfg.set_value("pretrain.log_every", 500);
  cfg.set_value("train.steps", 400);
  cfg.set_value("train.uncond_steps", 600);
  cfg.set_value("train.batch", 8);
  cfg.set_value("train.lr", 1e-3);
  cfg.set_value("train.window_min_s", 4.0);
  cfg.set_value("train.window_max_s", 8.0);
  cfg.set_value("train.log_every", 200);
  cfg.set_value("sample.runs", 1);
  return cfg;
}

struct TrendSeed {
  cli::ContrastiveProbe probe;
  double bhs_full = 0.0, bhs_scratch = 0.0, sim_full = 0.0, sim_scratch = 0.0;
  double bhs_aligned = 0.0, bhs_shifted = 0.0;
};

// BHS of generated latents against reference beats, as generated and after a
// sampled temporal shift. Clips whose latent admits no shift are skipped in both.
std::pair<double, double> shift_sensitivity(const fs::path& run_dir, const cli::Dataset& ref, std::uint64_t seed) {
  double aligned = 0.0, shifted = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < ref.ids.size(); ++i) {
    const Tensor latent = io::read_tensor(run_dir / (ref.ids[i] + ".mvt"));
    const std::vector<double> truth = ref.clips[i].beat_times(ref.world.fps);
    if (truth.empty()) continue;
    Rng rng(Rng::derive(seed, 3000 + i));
    long s = 0;
    try {
      s = cli::sample_shift(latent, ref.world.fps, rng);
    } catch (const FeasibilityError&) {
      continue;
    }
    aligned += eval::bhs(cli::beats_from_latent(latent, ref.world.fps), truth);
    shifted += eval::bhs(cli::beats_from_latent(contrastive::apply_shift(latent, s), ref.world.fps), truth);
    ++used;
  }
  if (used == 0) return {0.0, 0.0};
  return {aligned / static_cast<double>(used), shifted / static_cast<double>(used)};
}

TrendSeed trend_seed(std::uint64_t seed, std::ostream& log) {
  const cli::Config cfg = trend_config(seed);
  const fs::path dir = work_dir("trend_" + std::to_string(seed));
  const cli::Dataset train_set = cli::synthesize(cfg, 48, Rng::derive(seed, 1), 1);
  const cli::Dataset held = cli::synthesize(cfg, 12, Rng::derive(seed, 2), 1);
  cli::write_dataset(dir / "held", held);

  cli::pretrain(cfg, train_set, dir / "pre", log);
  const fs::path pre = dir / "pre" / "pretrain.mvt";
  TrendSeed r;
  r.probe = cli::probe_contrastive(*cli::ContrastiveModel::load(pre), held, Rng::derive(seed, 3));

  cli::train(cfg, train_set, pre, dir / "full", log);
  cli::train(cfg, train_set, std::nullopt, dir / "scratch", log);
  cli::sample(cfg, dir / "full" / "model.mvt", held, dir / "gen_full");
  cli::sample(cfg, dir / "scratch" / "model.mvt", held, dir / "gen_scratch");
  const eval::Report full = cli::evaluate(cfg, dir / "gen_full", dir / "held", pre, std::nullopt, log);
  const eval::Report scratch = cli::evaluate(cfg, dir / "gen_scratch", dir / "held", pre, std::nullopt, log);
  r.bhs_full = full.bhs;
  r.bhs_scratch = scratch.bhs;
  r.sim_full = full.sim.value_or(0.0);
  r.sim_scratch = scratch.sim.value_or(0.0);
  std::tie(r.bhs_aligned, r.bhs_shifted) = shift_sensitivity(dir / "gen_full" / "run0", held, Rng::derive(seed, 4));
  fs::remove_all(dir);
  return r;
}

std::vector<Outcome> criterion_10() {
  const auto t0 = Clock::now();
  std::vector<TrendSeed> seeds;
  std::ostringstream sink;
  std::ostringstream per_a, per_b, per_c;
  per_a.precision(4);
  per_b.precision(4);
  per_c.precision(4);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const TrendSeed r = trend_seed(seed, sink);
    seeds.push_back(r);
    per_a << " seed " << seed << ": pos " << r.probe.positive << " shift " << r.probe.shifted << " repl "
          << r.probe.replaced << ";";
    per_b << " seed " << seed << ": BHS " << r.bhs_full << " vs " << r.bhs_scratch << ", SIM " << r.sim_full << " vs "
          << r.sim_scratch << ";";
    per_c << " seed " << seed << ": " << r.bhs_aligned << " vs " << r.bhs_shifted << ";";
  }
  const auto mean = [&](auto field) {
    double acc = 0.0;
    for (const TrendSeed& r : seeds) acc += field(r);
    return acc / static_cast<double>(seeds.size());
  };
  const double gap_shift = mean([](const TrendSeed& r) { return r.probe.positive - r.probe.shifted; });
  const double gap_repl = mean([](const TrendSeed& r) { return r.probe.positive - r.probe.replaced; });
  const double bhs_f = mean([](const TrendSeed& r) { return r.bhs_full; });
  const double bhs_s = mean([](const TrendSeed& r) { return r.bhs_scratch; });
  const double sim_f = mean([](const TrendSeed& r) { return r.sim_full; });
  const double sim_s = mean([](const TrendSeed& r) { return r.sim_scratch; });
  const double gap_c = mean([](const TrendSeed& r) { return r.bhs_aligned - r.bhs_shifted; });
  const double secs = seconds_since(t0);

  std::ostringstream a, b, c;
  a.precision(4);
  b.precision(4);
  c.precision(4);
  a << "mean SIM gap vs shifted " << gap_shift << ", vs replaced " << gap_repl << " (need >= 10);" << per_a.str();
  b << "mean BHS " << bhs_f << " vs " << bhs_s << ", mean SIM " << sim_f << " vs " << sim_s << ";" << per_b.str()
    << " total " << secs << " s";
  c << "mean BHS drop under shift " << gap_c << " (need >= 10);" << per_c.str();
  return {{gap_shift >= 10.0 && gap_repl >= 10.0, a.str()},
          {bhs_f > bhs_s && sim_f > sim_s, b.str()},
          {gap_c >= 10.0, c.str()}};
}

// ---- 11 ---------------------------------------------------------------------

// Every regular file under `root`, keyed by relative path.
std::map<std::string, std::vector<std::uint8_t>> tree_bytes(const fs::path& root) {
  std::map<std::string, std::vector<std::uint8_t>> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = io::read_file(e.path());
  return out;
}

int invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int rc = cli::run(args, out, err);
  if (rc != 0) std::cerr << err.str();
  return rc;
}

Outcome criterion_11() {
  const auto t0 = Clock::now();
  const fs::path root = work_dir("determinism");
  bool ran = true;
  for (const char* name : {"a", "b"}) {
    const fs::path d = root / name;
    const std::vector<std::string> common{"--seed", "7", "--set", "data.max_s=12", "--set", "train.window_max_s=8",
                                          "--set", "pretrain.window_max_s=6"};
    const auto with = [&](std::vector<std::string> sub) {
      std::vector<std::string> args = common;
      args.insert(args.begin(), sub.begin(), sub.begin() + 1);
      args.insert(args.end(), sub.begin() + 1, sub.end());
      return args;
    };
    ran &= invoke(with({"synth", "--clips", "16", "--out", (d / "data").string()})) == 0;
    ran &= invoke(with({"pretrain", "--data", (d / "data").string(), "--steps", "200", "--out", (d / "pre").string()})) == 0;
    ran &= invoke(with({"train", "--data", (d / "data").string(), "--pretrained", (d / "pre" / "pretrain.mvt").string(),
                        "--steps", "500", "--out", (d / "model").string()})) == 0;
    ran &= invoke(with({"sample", "--model", (d / "model" / "model.mvt").string(), "--data", (d / "data").string(),
                        "--runs", "2", "--out", (d / "gen").string()})) == 0;
    ran &= invoke(with({"eval", "--gen", (d / "gen").string(), "--ref", (d / "data").string(), "--sim-checkpoint",
                        (d / "pre" / "pretrain.mvt").string(), "--out", (d / "report").string()})) == 0;
  }
  const auto a = tree_bytes(root / "a"), b = tree_bytes(root / "b");
  std::size_t differing = 0;
  for (const auto& [path, bytes] : a) {
    const auto it = b.find(path);
    if (it == b.end() || it->second != bytes) ++differing;
  }
  const bool same_set = a.size() == b.size();
  const double secs = seconds_since(t0);
  fs::remove_all(root);
  std::ostringstream d;
  d << a.size() << " files compared, " << differing << " differ, " << secs << " s";
  return {ran && same_set && differing == 0 && !a.empty(), d.str()};
}

void report(int n, const std::string& tag, const Outcome& o, int& failures) {
  std::cout << (o.pass ? "[PASS]" : "[FAIL]") << " criterion " << n << tag << ": " << o.detail << std::endl;
  failures += o.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::stoi(argv[i]));
  const auto want = [&](int n) { return wanted.empty() || wanted.count(n) == 1; };
  const std::vector<std::pair<int, std::function<Outcome()>>> simple{
      {1, criterion_1}, {2, criterion_2}, {3, criterion_3}, {4, criterion_4}, {5, criterion_5},
      {6, criterion_6}, {7, criterion_7}, {8, criterion_8}, {9, criterion_9}};
  int failures = 0;
  for (const auto& [n, fn] : simple) {
    if (!want(n)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    report(n, "", o, failures);
  }
  if (want(10)) {
    std::vector<Outcome> parts;
    try {
      parts = criterion_10();
    } catch (const std::exception& e) {
      parts.assign(3, Outcome{false, std::string("exception: ") + e.what()});
    }
    report(10, "a", parts[0], failures);
    report(10, "b", parts[1], failures);
    report(10, "c", parts[2], failures);
  }
  if (want(11)) {
    Outcome o;
    try {
      o = criterion_11();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    report(11, "", o, failures);
  }
  return failures == 0 ? 0 : 1;
}
