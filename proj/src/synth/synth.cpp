#include "v2m/synth/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>

#include "v2m/contrastive/shift.hpp"
#include "v2m/core/error.hpp"

namespace v2m::synth {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr std::array<double, 4> kToneDecay{1.0, 0.5, 0.25, 0.125};
constexpr std::array<double, 3> kFlashDecay{1.0, 0.5, 0.25};
constexpr int kMaxAttempts = 64;

// Fixed per-world appearance of each event type in patch feature space.
Tensor event_looks(const WorldConfig& cfg) {
  Rng rng(Rng::derive(cfg.world_seed, 1));
  Tensor looks({cfg.event_types, cfg.patch_channels});
  for (double& v : looks.data()) v = rng.normal() * 0.8;
  return looks;
}

// True when the clean music onset track correlates with the visual timing
// track strictly better unshifted than under every admissible shift.
bool shift_separable(const SyntheticClip& clip, std::size_t event_types) {
  const std::vector<double> m = music_onset_track(clip.music, event_types);
  const std::vector<double> v = event_track(clip);
  const double base = correlation(m, v);
  const contrastive::ShiftRule rule{clip.period, static_cast<int>(clip.frames())};
  const std::size_t n = m.size();
  std::vector<double> shifted(n);
  for (int a : rule.magnitudes()) {
    for (long s : {static_cast<long>(a), -static_cast<long>(a)}) {
      for (std::size_t t = 0; t < n; ++t) {
        const long src = ((static_cast<long>(t) - s) % static_cast<long>(n) + static_cast<long>(n)) % static_cast<long>(n);
        shifted[t] = m[static_cast<std::size_t>(src)];
      }
      if (!(correlation(shifted, v) < base)) return false;
    }
  }
  return true;
}

void validate(const WorldConfig& cfg) {
  if (cfg.period_min < 2 || cfg.period_max < cfg.period_min) throw ConfigError("beat period range must satisfy 2 <= min <= max");
  if (cfg.grid.h % 2 != 0 || cfg.grid.w % 2 != 0 || cfg.grid.patches() == 0) throw ConfigError("patch grid must be even");
  if (cfg.latent_channels < cfg.event_types + 2) {
    throw ConfigError("latent channels must hold the impulse, one tone per event type and the decoy channel");
  }
  if (!(cfg.fps > 0.0)) throw ConfigError("frame rate must be positive");
}

}  // namespace

std::vector<double> SyntheticClip::beat_times(double fps) const {
  std::vector<double> out;
  out.reserve(beat_frames.size());
  for (std::size_t b : beat_frames) out.push_back(static_cast<double>(b) * (1.0 / fps));
  return out;
}

SyntheticClip gen_pair(const WorldConfig& cfg, double duration_s, Rng& rng) {
  validate(cfg);
  if (!(duration_s >= 4.0 && duration_s <= 30.0)) {
    throw InputError("clip duration must lie in [4, 30] s, got " + std::to_string(duration_s));
  }
  const auto n = static_cast<std::size_t>(std::lround(duration_s * cfg.fps));
  const std::size_t L = cfg.grid.patches(), C = cfg.patch_channels, Cz = cfg.latent_channels;
  const Tensor looks = event_looks(cfg);

  SyntheticClip clip;
  for (int attempt = 0;; ++attempt) {
    if (attempt == kMaxAttempts) throw FeasibilityError("could not draw a shift-separable clip");
    clip = SyntheticClip{};
    clip.period = static_cast<int>(rng.uniform_int(cfg.period_min, cfg.period_max));
    const auto phase = static_cast<std::size_t>(rng.uniform_int(0, clip.period - 1));
    for (std::size_t b = phase; b < n; b += static_cast<std::size_t>(clip.period)) clip.beat_frames.push_back(b);
    for (std::size_t b : clip.beat_frames) {
      if (rng.bernoulli(cfg.event_prob)) {
        clip.events.push_back({b, static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(L) - 1)),
                               static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(cfg.event_types) - 1))});
      }
    }
    if (clip.events.size() < 2) continue;

    clip.music = Tensor({n, Cz});
    for (std::size_t b : clip.beat_frames) clip.music.at({b, 0}) = 1.0;
    for (const Event& e : clip.events)
      for (std::size_t k = 0; k < kToneDecay.size() && e.frame + k < n; ++k) {
        clip.music.at({e.frame + k, 1 + e.type}) += kToneDecay[k];
      }
    if (shift_separable(clip, cfg.event_types)) break;
  }

  // Decoy instrument: a slow tone plus bursts at random frames, independent of
  // the visual events.
  const std::size_t decoy = Cz - 1;
  const double f = rng.uniform(0.1, 0.6), ph = rng.uniform(0.0, kTwoPi);
  for (std::size_t t = 0; t < n; ++t) {
    clip.music.at({t, decoy}) = 0.5 * std::sin(kTwoPi * f * static_cast<double>(t) / cfg.fps + ph);
    if (rng.bernoulli(0.08)) clip.music.at({t, decoy}) += 1.0;
  }

  Tensor video({n, L, C});
  for (std::size_t p = 0; p < L; ++p)
    for (std::size_t c = 0; c < C; ++c) {
      const double amp = rng.uniform(0.1, 0.4), fr = rng.uniform(0.02, 0.2), phs = rng.uniform(0.0, kTwoPi);
      for (std::size_t t = 0; t < n; ++t) {
        video.at({t, p, c}) = amp * std::sin(kTwoPi * fr * static_cast<double>(t) / cfg.fps + phs);
      }
    }
  const std::size_t pulse_channels = std::min<std::size_t>(4, C);
  for (std::size_t b : clip.beat_frames)
    for (std::size_t k = 0; k < kFlashDecay.size() && b + k < n; ++k)
      for (std::size_t p = 0; p < L; ++p)
        for (std::size_t c = 0; c < pulse_channels; ++c) video.at({b + k, p, c}) += 0.6 * kFlashDecay[k];
  for (const Event& e : clip.events)
    for (std::size_t k = 0; k < kFlashDecay.size() && e.frame + k < n; ++k)
      for (std::size_t c = 0; c < C; ++c) video.at({e.frame + k, e.patch, c}) += kFlashDecay[k] * looks.at({e.type, c});

  if (cfg.noise > 0.0) {
    for (double& v : clip.music.data()) v += cfg.noise * rng.normal();
    for (double& v : video.data()) v += cfg.noise * rng.normal();
  }

  Tensor cls({n, C});
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t p = 0; p < L; ++p)
      for (std::size_t c = 0; c < C; ++c) cls.at({t, c}) += video.at({t, p, c}) / static_cast<double>(L);

  clip.video = adaptor::PatchFeatureSequence{cfg.grid, std::move(video)};
  clip.cls = adaptor::ClsSequence{std::move(cls)};
  return clip;
}

std::vector<double> music_onset_track(const Tensor& music, std::size_t event_types) {
  const std::size_t n = music.dim(0), c = music.dim(1);
  std::vector<double> out(n, 0.0);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t k = 0; k <= event_types && k < c; ++k) out[t] += music[t * c + k];
  return out;
}

std::vector<double> event_track(const SyntheticClip& clip) {
  std::vector<double> out(clip.frames(), 0.0);
  for (std::size_t b : clip.beat_frames) out[b] += 1.0;
  for (const Event& e : clip.events) out[e.frame] += 1.0;
  return out;
}

double correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw DimensionError("correlation needs equal non-empty sequences");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += (a[i] - ma) * (b[i] - mb);
    aa += (a[i] - ma) * (a[i] - ma);
    bb += (b[i] - mb) * (b[i] - mb);
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

SyntheticClip crop(const SyntheticClip& clip, std::size_t start, std::size_t length) {
  if (length == 0 || start + length > clip.frames()) {
    throw InputError("crop window [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") exceeds clip of " + std::to_string(clip.frames()) + " frames");
  }
  SyntheticClip out;
  out.source = clip.source;
  out.period = clip.period;
  const std::size_t L = clip.video.data.dim(1), C = clip.video.data.dim(2);
  const std::size_t Cz = clip.music.dim(1), Cc = clip.cls.data.dim(1);
  auto slice_rows = [&](const Tensor& t, Shape shape, std::size_t row) {
    std::vector<double> d(t.vec().begin() + static_cast<long>(start * row),
                          t.vec().begin() + static_cast<long>((start + length) * row));
    return Tensor(std::move(shape), std::move(d));
  };
  out.video = adaptor::PatchFeatureSequence{clip.video.grid, slice_rows(clip.video.data, {length, L, C}, L * C)};
  out.cls = adaptor::ClsSequence{slice_rows(clip.cls.data, {length, Cc}, Cc)};
  out.music = slice_rows(clip.music, {length, Cz}, Cz);
  for (std::size_t b : clip.beat_frames)
    if (b >= start && b < start + length) out.beat_frames.push_back(b - start);
  for (Event e : clip.events)
    if (e.frame >= start && e.frame < start + length) {
      e.frame -= start;
      out.events.push_back(e);
    }
  return out;
}

namespace {

std::size_t pick_weighted(std::span<const SyntheticClip> pool, const std::vector<bool>& taken, Rng& rng) {
  double total = 0.0;
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (!taken[i]) total += static_cast<double>(pool[i].frames());
  double u = rng.uniform() * total;
  std::size_t last = pool.size();
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (taken[i]) continue;
    last = i;
    u -= static_cast<double>(pool[i].frames());
    if (u < 0.0) return i;
  }
  return last;
}

std::pair<std::size_t, std::size_t> window_bounds(const SegmentSpec& spec, double fps, std::size_t limit) {
  const auto lo = static_cast<std::size_t>(std::ceil(spec.min_s * fps - 1e-9));
  const std::size_t hi = std::min(limit, static_cast<std::size_t>(std::floor(spec.max_s * fps + 1e-9)));
  if (lo == 0 || lo > hi) {
    throw InputError("source of " + std::to_string(limit) + " frames cannot hold a " + std::to_string(spec.min_s) +
                     " s window");
  }
  return {lo, hi};
}

}  // namespace

SyntheticClip sample_segment(std::span<const SyntheticClip> pool, const WorldConfig& cfg, Rng& rng, SegmentSpec spec) {
  if (pool.empty()) throw InputError("sample_segment: empty clip pool");
  std::vector<bool> taken(pool.size(), false);
  const std::size_t i = pick_weighted(pool, taken, rng);
  const auto [lo, hi] = window_bounds(spec, cfg.fps, pool[i].frames());
  const auto len = static_cast<std::size_t>(rng.uniform_int(static_cast<long>(lo), static_cast<long>(hi)));
  const auto start = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(pool[i].frames() - len)));
  SyntheticClip out = crop(pool[i], start, len);
  out.source = i;
  return out;
}

std::vector<SyntheticClip> sample_batch(std::span<const SyntheticClip> pool, std::size_t m, const WorldConfig& cfg,
                                        Rng& rng, SegmentSpec spec) {
  if (m == 0) throw InputError("batch size must be positive");
  if (pool.size() < m) {
    throw InputError("batch of " + std::to_string(m) + " needs at least as many distinct clips, pool has " +
                     std::to_string(pool.size()));
  }
  std::vector<bool> taken(pool.size(), false);
  std::vector<std::size_t> ids;
  std::size_t shortest = pool[0].frames();
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t i = pick_weighted(pool, taken, rng);
    taken[i] = true;
    ids.push_back(i);
    shortest = k == 0 ? pool[i].frames() : std::min(shortest, pool[i].frames());
  }
  const auto [lo, hi] = window_bounds(spec, cfg.fps, shortest);
  const auto len = static_cast<std::size_t>(rng.uniform_int(static_cast<long>(lo), static_cast<long>(hi)));
  std::vector<SyntheticClip> out;
  for (std::size_t i : ids) {
    const auto start = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(pool[i].frames() - len)));
    out.push_back(crop(pool[i], start, len));
    out.back().source = i;
  }
  return out;
}

std::vector<double> render_click(std::span<const double> beat_times, int sample_rate, double duration_s) {
  if (beat_times.empty()) throw InputError("render_click: no beats");
  if (sample_rate <= 0) throw InputError("render_click: sample rate must be positive");
  const std::size_t len = static_cast<std::size_t>(std::lround(0.01 * sample_rate)) | 1u;
  const double last = *std::max_element(beat_times.begin(), beat_times.end());
  const double dur = duration_s > 0.0 ? duration_s : last + static_cast<double>(len) / sample_rate;
  std::vector<double> pcm(static_cast<std::size_t>(std::ceil(dur * sample_rate)), 0.0);
  for (double t : beat_times) {
    const auto s0 = static_cast<std::size_t>(std::lround(t * sample_rate));
    for (std::size_t i = 0; i < len && s0 + i < pcm.size(); ++i) {
      pcm[s0 + i] = 0.9 * 0.5 * (1.0 - std::cos(kTwoPi * static_cast<double>(i) / static_cast<double>(len - 1)));
    }
  }
  return pcm;
}

}  // namespace v2m::synth
