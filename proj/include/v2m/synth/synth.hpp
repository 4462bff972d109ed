#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "v2m/adaptor/adaptor.hpp"
#include "v2m/core/rng.hpp"
#include "v2m/core/tensor.hpp"

// Paired synthetic video features and music latents sharing beat and event
// timing.
namespace v2m::synth {

struct WorldConfig {
  double fps = 10.0;
  std::size_t latent_channels = 8;
  adaptor::Grid grid{4, 4};
  std::size_t patch_channels = 16;
  int period_min = 4;  // beat period in latent frames
  int period_max = 8;
  /// Probability that a beat carries a visual event.
  double event_prob = 0.5;
  std::size_t event_types = 6;
  double noise = 0.05;
  /// Seed of the fixed per-world appearance vectors (event looks, tones).
  std::uint64_t world_seed = 1234;
};

struct Event {
  std::size_t frame = 0;
  std::size_t patch = 0;
  std::size_t type = 0;
};

struct SyntheticClip {
  std::size_t source = 0;  // index of the originating clip in a pool
  adaptor::PatchFeatureSequence video;
  adaptor::ClsSequence cls;
  Tensor music;                      // [N, C_z]
  std::vector<std::size_t> beat_frames;
  int period = 0;
  std::vector<Event> events;

  std::size_t frames() const { return music.dim(0); }
  double duration(double fps) const { return static_cast<double>(frames()) / fps; }
  /// Beat times in seconds, frame / fps.
  std::vector<double> beat_times(double fps) const;
};

/// Duration in [4, 30] s, rounded to whole frames. Deterministic in `rng`.
SyntheticClip gen_pair(const WorldConfig& cfg, double duration_s, Rng& rng);

/// Music onset signal (impulse channel plus event tone channels) per frame.
std::vector<double> music_onset_track(const Tensor& music, std::size_t event_types);
/// Per-frame count of beats and events, the ground-truth visual timing track.
std::vector<double> event_track(const SyntheticClip& clip);
/// Pearson correlation of two equal-length sequences (0 when either is flat).
double correlation(std::span<const double> a, std::span<const double> b);

/// Window [start, start + length) of a clip with beats and events re-based.
SyntheticClip crop(const SyntheticClip& clip, std::size_t start, std::size_t length);

struct SegmentSpec {
  double min_s = 4.0;
  double max_s = 30.0;
};

/// Picks a source with probability proportional to duration, then a uniform
/// window of min_s .. min(max_s, source duration) seconds.
SyntheticClip sample_segment(std::span<const SyntheticClip> pool, const WorldConfig& cfg, Rng& rng,
                             SegmentSpec spec = {});

/// M windows from M distinct sources (duration-weighted, without
/// replacement) sharing one window length.
std::vector<SyntheticClip> sample_batch(std::span<const SyntheticClip> pool, std::size_t m, const WorldConfig& cfg,
                                        Rng& rng, SegmentSpec spec = {});

/// 10 ms raised-cosine clicks peaking at 0.9 at the given times.
std::vector<double> render_click(std::span<const double> beat_times, int sample_rate, double duration_s = -1.0);

}  // namespace v2m::synth
