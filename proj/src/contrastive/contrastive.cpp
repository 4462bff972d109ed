#include "v2m/contrastive/contrastive.hpp"

#include <algorithm>
#include <cmath>

#include "v2m/adaptor/adaptor.hpp"
#include "v2m/core/error.hpp"
#include "v2m/core/ops.hpp"

namespace v2m::contrastive {

namespace {

constexpr double kNormEps = 1e-8;

Tensor identity_mask(std::size_t rows, std::size_t cols) {
  Tensor m({rows, cols});
  for (std::size_t i = 0; i < std::min(rows, cols); ++i) m.at({i, i}) = 1.0;
  return m;
}

Var inv_temperature(Var log_tau) { return exp(scale(log_tau, -1.0)); }

void check_square(Var s, std::size_t m, const char* what) {
  if (s.ndim() != 2 || s.dim(0) != m || s.dim(1) != m) {
    throw DimensionError(std::string(what) + " must be [M, M], got " + shape_str(s.shape()));
  }
}

}  // namespace

AudioEncoder::AudioEncoder(EncoderConfig cfg) : cfg_(cfg) {
  if (cfg.latent_channels == 0 || cfg.channels == 0 || cfg.freq_bins == 0 || cfg.upsample == 0) {
    throw ConfigError("audio encoder sizes must be positive");
  }
  Rng rng(cfg.seed);
  mix_ = Tensor({cfg.freq_bins, cfg.latent_channels, cfg.channels});
  const double a = 1.0 / std::sqrt(static_cast<double>(cfg.latent_channels));
  for (double& v : mix_.data()) v = rng.uniform(-a, a) * 2.0;
  bias_ = Tensor({cfg.freq_bins, cfg.channels});
  for (double& v : bias_.data()) v = rng.uniform(-0.1, 0.1);
}

Tensor AudioEncoder::encode(const Tensor& latent) const {
  if (latent.ndim() != 2 || latent.dim(1) != cfg_.latent_channels) {
    throw DimensionError("audio encoder expects [N, " + std::to_string(cfg_.latent_channels) + "], got " +
                         shape_str(latent.shape()));
  }
  const std::size_t n = latent.dim(0);
  const std::size_t np = cfg_.upsample * n;
  const Tensor up = n >= 2 ? adaptor::resample_linear(latent, np) : latent;
  const std::size_t tn = up.dim(0);
  const std::size_t F = cfg_.freq_bins, Cz = cfg_.latent_channels, Cp = cfg_.channels;
  Tensor out({Cp, F, tn});
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t c = 0; c < Cp; ++c)
      for (std::size_t t = 0; t < tn; ++t) {
        double s = bias_.at({f, c});
        for (std::size_t k = 0; k < Cz; ++k) s += mix_.at({f, k, c}) * up.at({t, k});
        out.at({c, f, t}) = std::tanh(s);
      }
  return out;
}

Tensor AudioEncoder::silence(std::size_t frames) const { return encode(Tensor({frames, cfg_.latent_channels})); }

AudioHead::AudioHead(std::size_t in_channels, std::size_t out_dim, ParamStore& store, Rng& rng, std::string prefix)
    : in_(in_channels), out_(out_dim), store_(&store), prefix_(std::move(prefix)) {
  store.add(prefix_ + "w", xavier_uniform({in_channels, out_dim}, in_channels, out_dim, rng));
  store.add(prefix_ + "b", Tensor({out_dim}));
}

Var AudioHead::forward(Graph& g, Var x, std::size_t target_len) const {
  if (x.ndim() != 4 || x.dim(1) != in_) {
    throw DimensionError("audio head expects [B, " + std::to_string(in_) + ", F, N'], got " + shape_str(x.shape()));
  }
  Var seq = transpose(mean_axis(x, 2));  // [B, N', C']
  if (seq.dim(1) != target_len) seq = adaptor::resample_linear(seq, target_len);
  return linear(seq, g.param(store_->get(prefix_ + "w")), g.param(store_->get(prefix_ + "b")));
}

double sim(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.ndim() != 2) {
    throw DimensionError("sim expects two equal [N, C] sequences, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t n = a.dim(0), c = a.dim(1);
  if (n == 0) throw InputError("sim of empty sequences");
  double total = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double x = a[t * c + k], y = b[t * c + k];
      ab += x * y;
      aa += x * x;
      bb += y * y;
    }
    total += ab / (std::max(std::sqrt(aa), kNormEps) * std::max(std::sqrt(bb), kNormEps));
  }
  return total / static_cast<double>(n);
}

Var sim_matrix(Var music, Var video) {
  if (music.ndim() != 3 || video.ndim() != 3 || music.dim(1) != video.dim(1) || music.dim(2) != video.dim(2)) {
    throw DimensionError("sim_matrix needs [M, N, C] inputs with equal N and C, got " + shape_str(music.shape()) +
                         " and " + shape_str(video.shape()));
  }
  const std::size_t n = music.dim(1), c = music.dim(2);
  Var a = reshape(l2_normalize(music, kNormEps), {music.dim(0), n * c});
  Var b = reshape(l2_normalize(video, kNormEps), {video.dim(0), n * c});
  return scale(matmul(a, transpose(b)), 1.0 / static_cast<double>(n));
}

LossResult loss_semantic_from_sims(Var sims, Var log_tau) {
  const std::size_t m = sims.ndim() == 2 ? sims.dim(0) : 0;
  if (m == 0) throw InputError("contrastive loss needs at least one pair");
  check_square(sims, m, "similarity matrix");
  Graph& g = sims.graph();
  Var logits = mul(sims, inv_temperature(log_tau));
  Var eye = g.constant(identity_mask(m, m));
  Var music_anchored = sum(mul(log_softmax(logits, 1), eye));
  Var video_anchored = sum(mul(log_softmax(logits, 0), eye));
  Var loss = scale(add(music_anchored, video_anchored), -0.5 / static_cast<double>(m));
  return {loss, m, m * m - m};
}

LossResult loss_temporal_from_sims(Var sims, Var shifted, Var replaced, Var log_tau, bool symmetric) {
  const std::size_t m = sims.ndim() == 2 ? sims.dim(0) : 0;
  if (m == 0) throw InputError("contrastive loss needs at least one pair");
  check_square(sims, m, "similarity matrix");
  check_square(shifted, m, "shifted similarity matrix");
  check_square(replaced, m, "replaced similarity matrix");
  Graph& g = sims.graph();
  Var inv_tau = inv_temperature(log_tau);
  Var l = mul(sims, inv_tau);
  Var ls = mul(shifted, inv_tau);
  Var lr = mul(replaced, inv_tau);

  std::vector<Var> rows{l, ls, lr};
  Var col_block = log_softmax(concat(rows, 0), 0);  // [3M, M]
  Var video_anchored = sum(mul(col_block, g.constant(identity_mask(3 * m, m))));

  Var music_anchored;
  std::size_t negatives = 3 * m * m - m;
  if (symmetric) {
    // Row i of the shifted/replaced blocks pairs music i's negatives with every video.
    Var row_block = log_softmax(concat(rows, 1), 1);  // [M, 3M]
    music_anchored = sum(mul(row_block, g.constant(identity_mask(m, 3 * m))));
    negatives += 2 * m * m;
  } else {
    music_anchored = sum(mul(log_softmax(l, 1), g.constant(identity_mask(m, m))));
  }
  Var loss = scale(add(music_anchored, video_anchored), -0.5 / static_cast<double>(m));
  return {loss, m, negatives};
}

LossResult loss_semantic(Var music, Var video, Var log_tau) {
  return loss_semantic_from_sims(sim_matrix(music, video), log_tau);
}

LossResult loss_temporal(Var music, Var video, Var shifted_music, Var replaced_music, Var log_tau, bool symmetric) {
  return loss_temporal_from_sims(sim_matrix(music, video), sim_matrix(shifted_music, video),
                                 sim_matrix(replaced_music, video), log_tau, symmetric);
}

std::pair<double, double> crossfade_gains(std::size_t k, std::size_t w) {
  const double alpha = static_cast<double>(k + 1) / static_cast<double>(w + 1);
  return {std::sqrt(1.0 - alpha), std::sqrt(alpha)};
}

Replacement random_replacement(const Tensor& music, const Tensor& donor, Rng& rng) {
  if (music.ndim() != 2 || donor.ndim() != 2 || music.dim(1) != donor.dim(1)) {
    throw DimensionError("random_replacement needs [N, C] inputs with equal C, got " + shape_str(music.shape()) +
                         " and " + shape_str(donor.shape()));
  }
  const std::size_t n = music.dim(0), c = music.dim(1);
  const std::size_t lmin = (2 * n + 9) / 10;  // ceil(0.2 N)
  const std::size_t lmax = (4 * n) / 10;      // floor(0.4 N)
  const std::size_t margin = (5 * n + 99) / 100;
  if (lmin == 0 || lmin > lmax) throw FeasibilityError("clip of " + std::to_string(n) + " frames is too short to replace");
  const auto len = static_cast<std::size_t>(rng.uniform_int(static_cast<long>(lmin), static_cast<long>(lmax)));
  const std::size_t w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.05 * static_cast<double>(len))));
  const std::size_t first = margin + w;
  if (first + len + w + margin > n) {
    throw FeasibilityError("replacement of " + std::to_string(len) + " frames does not fit in " + std::to_string(n));
  }
  const std::size_t last = n - margin - w - len;
  const std::size_t span = len + 2 * w;
  if (donor.dim(0) < span) throw FeasibilityError("donor clip shorter than the replaced span");

  Replacement r;
  r.start = static_cast<std::size_t>(rng.uniform_int(static_cast<long>(first), static_cast<long>(last)));
  r.length = len;
  r.fade = w;
  r.donor_offset = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(donor.dim(0) - span)));
  r.music = music;
  const std::size_t lo = r.start - w;
  for (std::size_t i = 0; i < span; ++i) {
    const std::size_t t = lo + i;
    const std::size_t d = r.donor_offset + i;
    double g_orig = 0.0, g_donor = 1.0;
    if (i < w) {
      std::tie(g_orig, g_donor) = crossfade_gains(i, w);
    } else if (i >= w + len) {
      std::tie(g_donor, g_orig) = crossfade_gains(i - w - len, w);
    }
    for (std::size_t k = 0; k < c; ++k) {
      r.music[t * c + k] = g_orig * music[t * c + k] + g_donor * donor[d * c + k];
    }
  }
  return r;
}

}  // namespace v2m::contrastive
