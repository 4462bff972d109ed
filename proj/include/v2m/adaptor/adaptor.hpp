#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "v2m/core/graph.hpp"
#include "v2m/core/params.hpp"
#include "v2m/core/tensor.hpp"

// Visual adaptor: compresses per-frame patch grids into one vector per frame,
// projects to the generator width and resamples to the latent frame count.
namespace v2m::adaptor {

enum class Strategy { kSoftmaxGated, kSigmoidGated, kAttentionPool, kAveragePool, kClsPool };

Strategy parse_strategy(std::string_view name);
std::string to_string(Strategy s);
bool needs_cls(Strategy s);

/// How sigmoid gate weights are normalized.
///  kPerGroup: each group's weights are divided by that group's sum, then
///             the group outputs are averaged.
///  kPooled:   the group-averaged weighted sum is divided by the
///             group-averaged weight sum.
enum class SigmoidNorm { kPerGroup, kPooled };

struct Grid {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t patches() const { return h * w; }
};

/// Patch features x[N, L, C] with L = h * w laid out row-major over the grid.
struct PatchFeatureSequence {
  Grid grid;
  Tensor data;

  std::size_t frames() const { return data.dim(0); }
  std::size_t channels() const { return data.dim(2); }
  void validate() const;
};

struct ClsSequence {
  Tensor data;  // [N, C]
};

struct ConditionSequence {
  Tensor data;  // [N_lat, C_model]
  double fps = 10.0;
};

struct AdaptorConfig {
  Strategy strategy = Strategy::kSoftmaxGated;
  std::size_t in_channels = 16;
  std::size_t model_dim = 64;
  std::size_t heads = 4;
  std::size_t gate_filters = 4;
  SigmoidNorm sigmoid_norm = SigmoidNorm::kPerGroup;
};

struct Aggregation {
  Var pooled;   // [F, C]
  Var weights;  // gated: [F, L, groups]; attention: [F * heads, 1, L]
};

/// Stride-2 2x2 convolution over the patch grid, C -> C channels.
/// x[F, L, C] with `grid`; kernel[4C, C] rows ordered (di, dj, c_in); bias[C].
Var downsample_patches(Var x, Grid grid, Var kernel, Var bias);

/// Gate conv (3x3, zero padding, `groups` filters) followed by softmax over
/// patches or sigmoid + normalization; groups are averaged.
/// kernel[9C, groups] rows ordered (di, dj, c_in).
Aggregation aggregate_gated(Var x, Grid grid, Var kernel, Var bias, Strategy nonlinearity,
                            SigmoidNorm norm = SigmoidNorm::kPerGroup);

/// Single-query multi-head cross-attention: query from CLS, keys/values from patches.
Aggregation attention_pool(Var x, Var cls, Var wq, Var wk, Var wv, std::size_t heads);

/// Mean over patches.
Var average_pool(Var x);

/// Channelwise linear interpolation along axis -2 onto `target_len` uniformly
/// spaced points with both endpoints aligned. Requires at least 2 frames.
Var resample_linear(Var seq, std::size_t target_len);
Tensor resample_linear(const Tensor& seq, std::size_t target_len);
/// Interpolation matrix [target_len, n].
Tensor resample_matrix(std::size_t n, std::size_t target_len);

/// Learnable adaptor; parameters live in an external store under `prefix`.
class VisualAdaptor {
 public:
  VisualAdaptor(AdaptorConfig cfg, Grid grid, ParamStore& store, Rng& rng, std::string prefix = "adaptor.");

  const AdaptorConfig& config() const noexcept { return cfg_; }
  Grid grid() const noexcept { return grid_; }

  /// patches[B, N, L, C], cls[B, N, C] (may be invalid unless the strategy
  /// needs it) -> [B, target_len, model_dim].
  Var forward(Graph& g, Var patches, std::optional<Var> cls, std::size_t target_len) const;

  /// Inference on one clip.
  ConditionSequence adapt(const PatchFeatureSequence& x, const ClsSequence* cls, std::size_t target_len,
                          double fps = 10.0) const;

 private:
  Var p(Graph& g, const char* name) const;

  AdaptorConfig cfg_;
  Grid grid_;
  ParamStore* store_;
  std::string prefix_;
};

}  // namespace v2m::adaptor
