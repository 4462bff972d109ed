#pragma once

#include <span>
#include <vector>

#include "v2m/core/tensor.hpp"

// Onset strength, windowed tempo estimation and dynamic-programming beat
// tracking.
namespace v2m::beat {

struct OnsetEnvelope {
  std::vector<double> values;  // >= 0
  double hop_s = 0.0;
  int sample_rate = 0;  // 0 for envelopes not derived from audio

  double duration() const { return static_cast<double>(values.size()) * hop_s; }
};

struct TempoCurve {
  std::vector<double> times_s;  // window centres, increasing
  std::vector<double> bpm;

  double min_bpm() const;
  /// Piecewise-linear in time, held constant beyond the ends.
  double bpm_at(double t) const;
};

struct BeatGrid {
  std::vector<double> beat_times;  // seconds, strictly increasing
  int minimal_cycle_frames = 1;
  double min_bpm = 0.0;
};

struct TrackerConfig {
  double window_s = 8.0;
  std::size_t stride_frames = 512;
  double min_bpm = 30.0;
  double max_bpm = 240.0;
  double prior_bpm = 120.0;
  /// Width of the log-normal tempo prior, in octaves.
  double prior_octaves = 1.0;
  /// Among autocorrelation peaks, the shortest period whose weighted score
  /// reaches this fraction of the best one wins.
  double octave_ratio = 0.8;
  double tightness = 100.0;
  double latent_fps = 10.0;
};

/// STFT (1024/256 at 24 kHz, scaled with the rate), 40 mel bands, compressed
/// magnitude, rectified first difference summed over bands, local mean removed
/// and rectified again. Frame k is centred on sample k * hop.
OnsetEnvelope onset_envelope(std::span<const double> pcm, int sample_rate);

/// Per-window tempo from the prior-weighted envelope autocorrelation.
TempoCurve estimate_tempo(const OnsetEnvelope& env, const TrackerConfig& cfg = {});

/// Dynamic programming tracker; returns an empty grid on silence.
BeatGrid track_beats(const OnsetEnvelope& env, const TempoCurve& tempo, const TrackerConfig& cfg = {});

/// Both stages in one call.
BeatGrid track(const OnsetEnvelope& env, const TrackerConfig& cfg = {});

/// round(60 / min_bpm * fps), at least 1.
int minimal_cycle(double min_bpm, double fps);

/// Beat envelope of a music latent [N, C]: the rectified impulse channel 0 at
/// the latent frame rate.
OnsetEnvelope latent_envelope(const Tensor& latent, double fps = 10.0);

}  // namespace v2m::beat
