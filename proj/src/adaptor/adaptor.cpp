#include "v2m/adaptor/adaptor.hpp"

#include <array>
#include <cmath>

#include "v2m/core/error.hpp"
#include "v2m/core/ops.hpp"

namespace v2m::adaptor {

namespace {

constexpr std::array<std::pair<Strategy, std::string_view>, 5> kNames{{
    {Strategy::kSoftmaxGated, "softmax"},
    {Strategy::kSigmoidGated, "sigmoid"},
    {Strategy::kAttentionPool, "attention"},
    {Strategy::kAveragePool, "average"},
    {Strategy::kClsPool, "cls"},
}};

// im2col indices over a grid for all F frames; -1 marks zero padding.
std::vector<long> conv_rows(std::size_t frames, Grid in, std::size_t out_h, std::size_t out_w, int k, int stride,
                            int pad) {
  std::vector<long> idx;
  idx.reserve(frames * out_h * out_w * static_cast<std::size_t>(k * k));
  const long L = static_cast<long>(in.patches());
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t i = 0; i < out_h; ++i)
      for (std::size_t j = 0; j < out_w; ++j)
        for (int di = 0; di < k; ++di)
          for (int dj = 0; dj < k; ++dj) {
            const long si = static_cast<long>(i) * stride + di - pad;
            const long sj = static_cast<long>(j) * stride + dj - pad;
            if (si < 0 || sj < 0 || si >= static_cast<long>(in.h) || sj >= static_cast<long>(in.w)) {
              idx.push_back(-1);
            } else {
              idx.push_back(static_cast<long>(f) * L + si * static_cast<long>(in.w) + sj);
            }
          }
  return idx;
}

}  // namespace

Strategy parse_strategy(std::string_view name) {
  for (const auto& [s, n] : kNames)
    if (n == name) return s;
  throw ConfigError("unknown adaptor strategy '" + std::string(name) +
                    "' (expected softmax, sigmoid, attention, average or cls)");
}

std::string to_string(Strategy s) {
  for (const auto& [k, n] : kNames)
    if (k == s) return std::string(n);
  return "unknown";
}

bool needs_cls(Strategy s) { return s == Strategy::kAttentionPool || s == Strategy::kClsPool; }

void PatchFeatureSequence::validate() const {
  if (data.ndim() != 3) throw DimensionError("patch features must be [N, L, C], got " + shape_str(data.shape()));
  if (grid.h % 2 != 0 || grid.w % 2 != 0) {
    throw ConfigError("patch grid " + std::to_string(grid.h) + "x" + std::to_string(grid.w) +
                      " must be even along both axes for 2x2 downsampling");
  }
  if (grid.patches() != data.dim(1)) {
    throw DimensionError("patch count " + std::to_string(data.dim(1)) + " does not match grid " +
                         std::to_string(grid.h) + "x" + std::to_string(grid.w));
  }
}

Var downsample_patches(Var x, Grid grid, Var kernel, Var bias) {
  if (grid.h % 2 != 0 || grid.w % 2 != 0) {
    throw ConfigError("downsample_patches: grid " + std::to_string(grid.h) + "x" + std::to_string(grid.w) +
                      " is not even");
  }
  if (x.ndim() != 3 || x.dim(1) != grid.patches()) {
    throw DimensionError("downsample_patches: input " + shape_str(x.shape()) + " does not match grid");
  }
  const std::size_t F = x.dim(0), C = x.dim(2);
  const std::size_t oh = grid.h / 2, ow = grid.w / 2;
  Var rows = gather_rows(reshape(x, {F * grid.patches(), C}), conv_rows(F, grid, oh, ow, 2, 2, 0));
  Var cols = reshape(rows, {F * oh * ow, 4 * C});
  Var y = linear(cols, kernel, bias);
  return reshape(y, {F, oh * ow, kernel.dim(1)});
}

Aggregation aggregate_gated(Var x, Grid grid, Var kernel, Var bias, Strategy nonlinearity, SigmoidNorm norm) {
  if (nonlinearity != Strategy::kSoftmaxGated && nonlinearity != Strategy::kSigmoidGated) {
    throw ConfigError("aggregate_gated needs the softmax or sigmoid strategy");
  }
  const std::size_t F = x.dim(0), L = x.dim(1), C = x.dim(2);
  if (L != grid.patches()) throw DimensionError("aggregate_gated: patch count does not match grid");
  const std::size_t groups = kernel.dim(1);
  Var rows = gather_rows(reshape(x, {F * L, C}), conv_rows(F, grid, grid.h, grid.w, 3, 1, 1));
  Var logits = reshape(linear(reshape(rows, {F * L, 9 * C}), kernel, bias), {F, L, groups});

  Var weights;
  Var pooled;
  if (nonlinearity == Strategy::kSoftmaxGated) {
    weights = softmax(logits, 1);
    pooled = mean_axis(bmm(transpose(weights), x), 1);
  } else if (norm == SigmoidNorm::kPerGroup) {
    Var w = sigmoid(logits);
    weights = div(w, sum_axis(w, 1, true));
    pooled = mean_axis(bmm(transpose(weights), x), 1);
  } else {
    Var w = sigmoid(logits);
    weights = w;
    Var num = mean_axis(bmm(transpose(w), x), 1);             // [F, C]
    Var den = mean_axis(sum_axis(w, 1, false), 1, true);      // [F, 1]
    pooled = div(num, den);
  }
  return {pooled, weights};
}

Aggregation attention_pool(Var x, Var cls, Var wq, Var wk, Var wv, std::size_t heads) {
  const std::size_t F = x.dim(0), L = x.dim(1);
  const std::size_t D = wq.dim(1);
  if (heads == 0 || D % heads != 0) {
    throw ConfigError("attention_pool: width " + std::to_string(D) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
  if (cls.ndim() != 2 || cls.dim(0) != F) {
    throw DimensionError("attention_pool: CLS sequence " + shape_str(cls.shape()) + " does not match patches " +
                         shape_str(x.shape()));
  }
  const std::size_t dh = D / heads;
  Var q = reshape(matmul(cls, wq), {F * heads, 1, dh});
  Var k = reshape(permute(reshape(matmul(x, wk), {F, L, heads, dh}), {0, 2, 3, 1}), {F * heads, dh, L});
  Var v = reshape(permute(reshape(matmul(x, wv), {F, L, heads, dh}), {0, 2, 1, 3}), {F * heads, L, dh});
  Var w = softmax(scale(bmm(q, k), 1.0 / std::sqrt(static_cast<double>(dh))), -1);
  Var out = reshape(bmm(w, v), {F, D});
  return {out, w};
}

Var average_pool(Var x) { return mean_axis(x, 1); }

Tensor resample_matrix(std::size_t n, std::size_t target_len) {
  if (n < 2) throw InputError("resample_linear needs at least 2 frames, got " + std::to_string(n));
  if (target_len == 0) throw InputError("resample_linear target length must be positive");
  Tensor r(Shape{target_len, n});
  for (std::size_t t = 0; t < target_len; ++t) {
    if (target_len == 1) {
      r.at({0, 0}) = 1.0;
      break;
    }
    const double u = static_cast<double>(t * (n - 1)) / static_cast<double>(target_len - 1);
    std::size_t i = static_cast<std::size_t>(std::floor(u));
    if (i >= n - 1) i = n - 2;
    const double frac = u - static_cast<double>(i);
    r.at({t, i}) += 1.0 - frac;
    r.at({t, i + 1}) += frac;
  }
  return r;
}

Var resample_linear(Var seq, std::size_t target_len) {
  const std::size_t nd = seq.ndim();
  if (nd < 2) throw DimensionError("resample_linear expects [..., N, C], got " + shape_str(seq.shape()));
  const std::size_t n = seq.dim(nd - 2);
  if (n < 2) throw InputError("resample_linear needs at least 2 frames, got " + std::to_string(n));
  if (n == target_len) return seq;
  Var rt = seq.graph().constant(
      resample_matrix(n, target_len).reshaped({target_len, n}));
  // Move time last, contract with R^T, move it back.
  Var moved = transpose(seq);  // [..., C, N]
  Var rtt = transpose(rt);     // [N, T]
  return transpose(matmul(moved, rtt));
}

Tensor resample_linear(const Tensor& seq, std::size_t target_len) {
  Graph g(false);
  return resample_linear(g.constant(seq), target_len).value();
}

VisualAdaptor::VisualAdaptor(AdaptorConfig cfg, Grid grid, ParamStore& store, Rng& rng, std::string prefix)
    : cfg_(cfg), grid_(grid), store_(&store), prefix_(std::move(prefix)) {
  if (grid.h % 2 != 0 || grid.w % 2 != 0) {
    throw ConfigError("adaptor grid " + std::to_string(grid.h) + "x" + std::to_string(grid.w) + " must be even");
  }
  const std::size_t C = cfg.in_channels, D = cfg.model_dim;
  store.add(prefix_ + "down.w", xavier_uniform({4 * C, C}, 4 * C, C, rng));
  store.add(prefix_ + "down.b", Tensor(Shape{C}));
  std::size_t pooled_dim = C;
  switch (cfg.strategy) {
    case Strategy::kSoftmaxGated:
    case Strategy::kSigmoidGated:
      store.add(prefix_ + "gate.w", xavier_uniform({9 * C, cfg.gate_filters}, 9 * C, cfg.gate_filters, rng));
      store.add(prefix_ + "gate.b", Tensor(Shape{cfg.gate_filters}));
      break;
    case Strategy::kAttentionPool:
      if (cfg.heads == 0 || D % cfg.heads != 0) {
        throw ConfigError("adaptor width " + std::to_string(D) + " not divisible by " + std::to_string(cfg.heads) +
                          " attention heads");
      }
      store.add(prefix_ + "attn.q", xavier_uniform({C, D}, C, D, rng));
      store.add(prefix_ + "attn.k", xavier_uniform({C, D}, C, D, rng));
      store.add(prefix_ + "attn.v", xavier_uniform({C, D}, C, D, rng));
      pooled_dim = D;
      break;
    case Strategy::kAveragePool:
    case Strategy::kClsPool:
      break;
  }
  store.add(prefix_ + "out.w", xavier_uniform({pooled_dim, D}, pooled_dim, D, rng));
  store.add(prefix_ + "out.b", Tensor(Shape{D}));
}

Var VisualAdaptor::p(Graph& g, const char* name) const { return g.param(store_->get(prefix_ + name)); }

Var VisualAdaptor::forward(Graph& g, Var patches, std::optional<Var> cls, std::size_t target_len) const {
  if (patches.ndim() != 4 || patches.dim(2) != grid_.patches() || patches.dim(3) != cfg_.in_channels) {
    throw DimensionError("adaptor input " + shape_str(patches.shape()) + " does not match grid/channels");
  }
  const std::size_t B = patches.dim(0), N = patches.dim(1), C = cfg_.in_channels;
  const std::size_t F = B * N;
  if (needs_cls(cfg_.strategy) && !cls) {
    throw ConfigError("adaptor strategy '" + to_string(cfg_.strategy) + "' requires a CLS sequence");
  }
  Var pooled;
  if (cfg_.strategy == Strategy::kClsPool) {
    pooled = reshape(*cls, {F, C});
  } else {
    Var x = reshape(patches, {F, grid_.patches(), C});
    Var down = downsample_patches(x, grid_, p(g, "down.w"), p(g, "down.b"));
    const Grid dg{grid_.h / 2, grid_.w / 2};
    switch (cfg_.strategy) {
      case Strategy::kSoftmaxGated:
      case Strategy::kSigmoidGated:
        pooled = aggregate_gated(down, dg, p(g, "gate.w"), p(g, "gate.b"), cfg_.strategy, cfg_.sigmoid_norm).pooled;
        break;
      case Strategy::kAttentionPool:
        pooled = attention_pool(down, reshape(*cls, {F, C}), p(g, "attn.q"), p(g, "attn.k"), p(g, "attn.v"),
                                cfg_.heads)
                     .pooled;
        break;
      default:
        pooled = average_pool(down);
        break;
    }
  }
  Var out = reshape(linear(pooled, p(g, "out.w"), p(g, "out.b")), {B, N, cfg_.model_dim});
  return resample_linear(out, target_len);
}

ConditionSequence VisualAdaptor::adapt(const PatchFeatureSequence& x, const ClsSequence* cls, std::size_t target_len,
                                       double fps) const {
  x.validate();
  if (x.grid.h != grid_.h || x.grid.w != grid_.w) throw DimensionError("adapt: grid differs from adaptor grid");
  if (cls && cls->data.dim(0) != x.frames()) {
    throw DimensionError("adapt: CLS frame count does not match patch features");
  }
  Graph g(false);
  const std::size_t N = x.frames();
  Var patches = g.constant(x.data.reshaped({1, N, x.grid.patches(), x.channels()}));
  std::optional<Var> c;
  if (cls) c = g.constant(cls->data.reshaped({1, N, cls->data.dim(1)}));
  Var y = forward(g, patches, c, target_len);
  return ConditionSequence{y.value().reshaped({target_len, cfg_.model_dim}), fps};
}

}  // namespace v2m::adaptor
