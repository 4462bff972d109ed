#include "v2m/beat/beat.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <numeric>

#include "v2m/core/error.hpp"

namespace v2m::beat {

namespace {

constexpr std::size_t kMelBands = 40;

// FFTW planning is not thread-safe.
std::mutex& plan_mutex() {
  static std::mutex m;
  return m;
}

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Triangular filters [bands][bins] spanning 0 .. sr/2.
std::vector<std::vector<double>> mel_filterbank(std::size_t n_fft, int sr) {
  const std::size_t bins = n_fft / 2 + 1;
  const double top = hz_to_mel(sr / 2.0);
  std::vector<double> edges(kMelBands + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) edges[i] = mel_to_hz(top * static_cast<double>(i) / (kMelBands + 1));
  std::vector<std::vector<double>> fb(kMelBands, std::vector<double>(bins, 0.0));
  for (std::size_t b = 0; b < kMelBands; ++b) {
    const double lo = edges[b], mid = edges[b + 1], hi = edges[b + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sr / static_cast<double>(n_fft);
      if (f > lo && f < hi) fb[b][k] = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
    }
  }
  return fb;
}

double lag_score_prior(double bpm, const TrackerConfig& cfg) {
  const double o = std::log2(bpm / cfg.prior_bpm) / cfg.prior_octaves;
  return std::exp(-0.5 * o * o);
}

double window_tempo(std::span<const double> x, double hop_s, const TrackerConfig& cfg) {
  const std::size_t n = x.size();
  const double mean = n ? std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n) : 0.0;
  std::vector<double> e(n);
  for (std::size_t i = 0; i < n; ++i) e[i] = x[i] - mean;

  const auto lmin = static_cast<std::size_t>(std::ceil(60.0 / (cfg.max_bpm * hop_s)));
  const auto lmax = static_cast<std::size_t>(std::floor(60.0 / (cfg.min_bpm * hop_s)));
  if (lmin < 1 || lmin + 1 >= n) return cfg.prior_bpm;
  const std::size_t top = std::min(lmax + 1, n - 1);
  std::vector<double> ac(top + 1, 0.0);
  for (std::size_t l = lmin - 1; l <= top; ++l) {
    double s = 0.0;
    for (std::size_t i = 0; i + l < n; ++i) s += e[i] * e[i + l];
    ac[l] = s;
  }

  struct Cand {
    std::size_t lag;
    double score;
  };
  std::vector<Cand> cands;
  double best = 0.0;
  for (std::size_t l = lmin; l < top && l <= lmax; ++l) {
    if (ac[l] <= 0.0 || ac[l] <= ac[l - 1] || ac[l] < ac[l + 1]) continue;
    const double s = ac[l] * lag_score_prior(60.0 / (static_cast<double>(l) * hop_s), cfg);
    cands.push_back({l, s});
    best = std::max(best, s);
  }
  if (cands.empty()) return cfg.prior_bpm;
  std::size_t lag = 0;
  for (const Cand& c : cands) {
    if (c.score >= cfg.octave_ratio * best) {
      lag = c.lag;
      break;
    }
  }
  double frac = 0.0;
  const double a = ac[lag - 1], b = ac[lag], c = ac[lag + 1];
  const double denom = a - 2.0 * b + c;
  if (denom < 0.0) frac = std::clamp(0.5 * (a - c) / denom, -0.5, 0.5);
  const double bpm = 60.0 / ((static_cast<double>(lag) + frac) * hop_s);
  return std::clamp(bpm, cfg.min_bpm, cfg.max_bpm);
}

}  // namespace

double TempoCurve::min_bpm() const {
  if (bpm.empty()) return 0.0;
  return *std::min_element(bpm.begin(), bpm.end());
}

double TempoCurve::bpm_at(double t) const {
  if (bpm.empty()) throw InputError("empty tempo curve");
  if (t <= times_s.front()) return bpm.front();
  if (t >= times_s.back()) return bpm.back();
  const auto it = std::upper_bound(times_s.begin(), times_s.end(), t);
  const std::size_t i = static_cast<std::size_t>(it - times_s.begin());
  const double u = (t - times_s[i - 1]) / (times_s[i] - times_s[i - 1]);
  return bpm[i - 1] + u * (bpm[i] - bpm[i - 1]);
}

OnsetEnvelope onset_envelope(std::span<const double> pcm, int sr) {
  if (sr != 16000 && sr != 24000 && sr != 44100 && sr != 48000) {
    throw InputError("unsupported sample rate " + std::to_string(sr) + " (expected 16000, 24000, 44100 or 48000)");
  }
  if (pcm.empty()) throw InputError("onset_envelope: empty input");
  const auto n_fft = static_cast<std::size_t>(std::lround(1024.0 * sr / 24000.0));
  const auto hop = static_cast<std::size_t>(std::lround(256.0 * sr / 24000.0));
  const std::size_t frames = pcm.size() / hop + 1;
  const std::size_t bins = n_fft / 2 + 1;
  const auto fb = mel_filterbank(n_fft, sr);

  std::vector<double> window(n_fft);
  for (std::size_t i = 0; i < n_fft; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n_fft));
  }

  double* in = fftw_alloc_real(n_fft);
  fftw_complex* out = fftw_alloc_complex(bins);
  fftw_plan plan;
  {
    std::lock_guard lock(plan_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n_fft), in, out, FFTW_ESTIMATE);
  }
  std::vector<std::vector<double>> mel(frames, std::vector<double>(kMelBands, 0.0));
  double peak = 0.0;
  const long half = static_cast<long>(n_fft / 2);
  for (std::size_t f = 0; f < frames; ++f) {
    const long centre = static_cast<long>(f * hop);
    for (std::size_t i = 0; i < n_fft; ++i) {
      const long s = centre - half + static_cast<long>(i);
      in[i] = (s >= 0 && s < static_cast<long>(pcm.size())) ? pcm[static_cast<std::size_t>(s)] * window[i] : 0.0;
    }
    fftw_execute(plan);
    for (std::size_t b = 0; b < kMelBands; ++b) {
      double acc = 0.0;
      for (std::size_t k = 0; k < bins; ++k) {
        if (fb[b][k] != 0.0) acc += fb[b][k] * (out[k][0] * out[k][0] + out[k][1] * out[k][1]);
      }
      mel[f][b] = acc;
      peak = std::max(peak, acc);
    }
  }
  {
    std::lock_guard lock(plan_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(out);

  OnsetEnvelope env;
  env.hop_s = static_cast<double>(hop) / sr;
  env.sample_rate = sr;
  env.values.assign(frames, 0.0);
  if (peak <= 0.0) return env;

  for (auto& row : mel)
    for (double& v : row) v = std::log1p(v / peak);
  std::vector<double> flux(frames, 0.0);
  for (std::size_t f = 1; f < frames; ++f) {
    double s = 0.0;
    for (std::size_t b = 0; b < kMelBands; ++b) s += std::max(0.0, mel[f][b] - mel[f - 1][b]);
    flux[f] = s;
  }
  const auto w = static_cast<std::size_t>(std::lround(0.5 / env.hop_s));
  for (std::size_t f = 0; f < frames; ++f) {
    const std::size_t lo = f >= w ? f - w : 0;
    const std::size_t hi = std::min(frames, f + w + 1);
    const double m = std::accumulate(flux.begin() + static_cast<long>(lo), flux.begin() + static_cast<long>(hi), 0.0) /
                     static_cast<double>(hi - lo);
    env.values[f] = std::max(0.0, flux[f] - m);
  }
  return env;
}

TempoCurve estimate_tempo(const OnsetEnvelope& env, const TrackerConfig& cfg) {
  if (env.hop_s <= 0.0) throw InputError("estimate_tempo: envelope hop must be positive");
  const std::size_t n = env.values.size();
  const auto w = static_cast<std::size_t>(std::lround(cfg.window_s / env.hop_s));
  const std::size_t stride = std::max<std::size_t>(1, cfg.stride_frames);
  std::vector<std::size_t> starts;
  std::size_t len = w;
  if (n <= w) {
    starts.push_back(0);
    len = n;
  } else {
    for (std::size_t s = 0; s + w <= n; s += stride) starts.push_back(s);
    if (starts.back() + w < n) starts.push_back(n - w);
  }
  TempoCurve curve;
  for (std::size_t s : starts) {
    std::span<const double> x(env.values.data() + s, len);
    curve.times_s.push_back((static_cast<double>(s) + static_cast<double>(len) / 2.0) * env.hop_s);
    curve.bpm.push_back(window_tempo(x, env.hop_s, cfg));
  }
  return curve;
}

BeatGrid track_beats(const OnsetEnvelope& env, const TempoCurve& tempo, const TrackerConfig& cfg) {
  BeatGrid grid;
  grid.min_bpm = tempo.min_bpm();
  grid.minimal_cycle_frames = minimal_cycle(grid.min_bpm > 0 ? grid.min_bpm : cfg.prior_bpm, cfg.latent_fps);
  const std::size_t n = env.values.size();
  if (n == 0 || tempo.bpm.empty()) return grid;

  const double mean = std::accumulate(env.values.begin(), env.values.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double v : env.values) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(n));
  if (!(sd > 0.0)) return grid;

  std::vector<double> period(n);
  for (std::size_t t = 0; t < n; ++t) {
    period[t] = 60.0 / (tempo.bpm_at(static_cast<double>(t) * env.hop_s) * env.hop_s);
  }

  std::vector<double> local(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    const long r = std::lround(period[t]);
    for (long k = -r; k <= r; ++k) {
      const long s = static_cast<long>(t) + k;
      if (s < 0 || s >= static_cast<long>(n)) continue;
      const double z = static_cast<double>(k) * 32.0 / period[t];
      local[t] += std::exp(-0.5 * z * z) * env.values[static_cast<std::size_t>(s)] / sd;
    }
  }

  std::vector<double> cum(n, 0.0);
  std::vector<long> back(n, -1);
  for (std::size_t t = 0; t < n; ++t) {
    const long lo = static_cast<long>(t) - std::lround(2.0 * period[t]);
    const long hi = static_cast<long>(t) - std::lround(period[t] / 2.0);
    double best = 0.0;
    long arg = -1;
    for (long p = std::max(0L, lo); p <= hi; ++p) {
      const double d = std::log(static_cast<double>(static_cast<long>(t) - p) / period[t]);
      const double s = cum[static_cast<std::size_t>(p)] - cfg.tightness * d * d;
      if (arg < 0 || s > best) {
        best = s;
        arg = p;
      }
    }
    cum[t] = local[t] + (arg >= 0 ? best : 0.0);
    back[t] = arg;
  }

  std::vector<std::size_t> peaks;
  for (std::size_t t = 0; t < n; ++t) {
    const bool left = t == 0 || cum[t] > cum[t - 1];
    const bool right = t + 1 == n || cum[t] >= cum[t + 1];
    if (left && right) peaks.push_back(t);
  }
  if (peaks.empty()) return grid;
  std::vector<double> pv;
  for (std::size_t p : peaks) pv.push_back(cum[p]);
  std::nth_element(pv.begin(), pv.begin() + static_cast<long>(pv.size() / 2), pv.end());
  const double med = pv[pv.size() / 2];
  std::size_t last = peaks.back();
  for (auto it = peaks.rbegin(); it != peaks.rend(); ++it) {
    if (cum[*it] >= 0.5 * med) {
      last = *it;
      break;
    }
  }

  std::vector<std::size_t> beats;
  for (long t = static_cast<long>(last); t >= 0; t = back[static_cast<std::size_t>(t)]) {
    beats.push_back(static_cast<std::size_t>(t));
  }
  std::reverse(beats.begin(), beats.end());

  double ms = 0.0;
  for (std::size_t b : beats) ms += local[b] * local[b];
  const double thr = 0.5 * std::sqrt(ms / static_cast<double>(beats.size()));
  std::size_t a = 0, z = beats.size();
  while (a < z && local[beats[a]] < thr) ++a;
  while (z > a && local[beats[z - 1]] < thr) --z;
  for (std::size_t i = a; i < z; ++i) grid.beat_times.push_back(static_cast<double>(beats[i]) * env.hop_s);
  return grid;
}

BeatGrid track(const OnsetEnvelope& env, const TrackerConfig& cfg) {
  return track_beats(env, estimate_tempo(env, cfg), cfg);
}

int minimal_cycle(double min_bpm, double fps) {
  if (!(min_bpm > 0.0) || !(fps > 0.0)) throw InputError("minimal_cycle needs positive bpm and frame rate");
  return std::max(1, static_cast<int>(std::lround(60.0 / min_bpm * fps)));
}

OnsetEnvelope latent_envelope(const Tensor& latent, double fps) {
  if (latent.ndim() != 2 || latent.dim(1) == 0) {
    throw DimensionError("latent_envelope expects [N, C], got " + shape_str(latent.shape()));
  }
  OnsetEnvelope env;
  env.hop_s = 1.0 / fps;
  env.values.resize(latent.dim(0));
  for (std::size_t t = 0; t < latent.dim(0); ++t) env.values[t] = std::max(0.0, latent.at({t, 0}));
  return env;
}

}  // namespace v2m::beat
