#pragma once

#include <string>

#include "v2m/contrastive/shift.hpp"
#include "v2m/core/graph.hpp"
#include "v2m/core/params.hpp"

namespace v2m::contrastive {

/// Frozen stand-in for a pretrained audio encoder: latent [N, C_z] ->
/// feature [C', F, N'] with N' = upsample * N. Each frequency bin is a fixed
/// random affine mix of the time-upsampled latent followed by tanh.
struct EncoderConfig {
  std::size_t latent_channels = 8;
  std::size_t channels = 8;  // C'
  std::size_t freq_bins = 4;  // F
  std::size_t upsample = 2;
  std::uint64_t seed = 0x5eed;
};

class AudioEncoder {
 public:
  explicit AudioEncoder(EncoderConfig cfg = {});
  const EncoderConfig& config() const noexcept { return cfg_; }
  Tensor encode(const Tensor& latent) const;
  /// Encoder output for an all-zero latent of `frames` frames.
  Tensor silence(std::size_t frames) const;

 private:
  EncoderConfig cfg_;
  Tensor mix_;   // [F, C_z, C']
  Tensor bias_;  // [F, C']
};

/// Learnable head: mean over frequency, linear resample to the video frame
/// count, then a linear map C' -> out_dim.
class AudioHead {
 public:
  AudioHead(std::size_t in_channels, std::size_t out_dim, ParamStore& store, Rng& rng,
            std::string prefix = "head.");
  /// x[B, C', F, N'] -> [B, target_len, out_dim].
  Var forward(Graph& g, Var x, std::size_t target_len) const;

 private:
  std::size_t in_, out_;
  ParamStore* store_;
  std::string prefix_;
};

/// Mean frame-wise cosine similarity of a[N, C] and b[N, C].
double sim(const Tensor& a, const Tensor& b);
/// S[i, j] = SIM(music_i, video_j) for music, video [M, N, C].
Var sim_matrix(Var music, Var video);

struct LossResult {
  Var loss;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

/// Symmetric InfoNCE over the diagonal of `sims` [M, M] with temperature
/// exp(log_tau); averaged over the M positives.
LossResult loss_semantic_from_sims(Var sims, Var log_tau);
/// As above with the video-anchored denominator widened by the shifted and
/// replaced music sims (each [M, M], rows music, columns video). `symmetric`
/// widens the music-anchored denominator too.
LossResult loss_temporal_from_sims(Var sims, Var shifted, Var replaced, Var log_tau, bool symmetric = false);

LossResult loss_semantic(Var music, Var video, Var log_tau);
LossResult loss_temporal(Var music, Var video, Var shifted_music, Var replaced_music, Var log_tau,
                         bool symmetric = false);

struct Replacement {
  Tensor music;
  std::size_t start = 0;   // first fully replaced frame
  std::size_t length = 0;  // replaced frames
  std::size_t fade = 0;    // crossfade width on each side
  std::size_t donor_offset = 0;
};

/// Splices a donor segment of length in [ceil(0.2N), floor(0.4N)] into
/// `music` with equal-power crossfades of max(1, round(0.05 L)) frames,
/// keeping ceil(0.05N) frames untouched at both ends. Throws FeasibilityError
/// when the geometry does not fit.
Replacement random_replacement(const Tensor& music, const Tensor& donor, Rng& rng);

/// Crossfade gains (outgoing, incoming) at fade index k of width w.
std::pair<double, double> crossfade_gains(std::size_t k, std::size_t w);

}  // namespace v2m::contrastive
