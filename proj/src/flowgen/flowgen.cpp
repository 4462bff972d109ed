#include "v2m/flowgen/flowgen.hpp"

#include <cmath>

#include "v2m/core/error.hpp"
#include "v2m/core/ops.hpp"

namespace v2m::flowgen {

namespace {

void add_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  store.add(name + ".w", xavier_uniform({in, out}, in, out, rng));
  store.add(name + ".b", Tensor({out}));
}

}  // namespace

VelocityModel::VelocityModel(DitConfig cfg, ParamStore& store, Rng& rng, std::string prefix)
    : cfg_(cfg), store_(&store), prefix_(std::move(prefix)) {
  if (cfg.heads == 0 || cfg.hidden % cfg.heads != 0 || (cfg.hidden / cfg.heads) % 2 != 0) {
    throw ConfigError("hidden size " + std::to_string(cfg.hidden) + " must split into " + std::to_string(cfg.heads) +
                      " heads of even width");
  }
  if (cfg.time_dim % 2 != 0) throw ConfigError("time embedding width must be even");
  const std::size_t H = cfg.hidden;
  add_linear(store, prefix_ + "in_z", cfg.latent_channels, H, rng);
  add_linear(store, prefix_ + "in_c", cfg.cond_dim, H, rng);
  store.add(prefix_ + "null", xavier_uniform({H}, 1, H, rng));
  add_linear(store, prefix_ + "time1", cfg.time_dim, H, rng);
  add_linear(store, prefix_ + "time2", H, H, rng);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string b = prefix_ + "block" + std::to_string(l) + ".";
    store.add(b + "norm1", Tensor({H}, 1.0));
    add_linear(store, b + "q", H, H, rng);
    add_linear(store, b + "k", H, H, rng);
    add_linear(store, b + "v", H, H, rng);
    add_linear(store, b + "o", H, H, rng);
    store.add(b + "norm2", Tensor({H}, 1.0));
    add_linear(store, b + "ff1", H, cfg.ffn, rng);
    add_linear(store, b + "ff2", cfg.ffn, H, rng);
  }
  store.add(prefix_ + "norm_out", Tensor({H}, 1.0));
  add_linear(store, prefix_ + "out", H, cfg.latent_channels, rng);
}

Var VelocityModel::p(Graph& g, const std::string& name) const { return g.param(store_->get(prefix_ + name)); }

Var VelocityModel::time_embedding(Graph& g, const std::vector<double>& t) const {
  const std::size_t half = cfg_.time_dim / 2;
  Tensor feats({t.size(), cfg_.time_dim});
  for (std::size_t b = 0; b < t.size(); ++b)
    for (std::size_t i = 0; i < half; ++i) {
      const double w = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
      feats.at({b, i}) = std::sin(1000.0 * t[b] * w);
      feats.at({b, half + i}) = std::cos(1000.0 * t[b] * w);
    }
  Var h = silu(linear(g.constant(std::move(feats)), p(g, "time1.w"), p(g, "time1.b")));
  return linear(h, p(g, "time2.w"), p(g, "time2.b"));
}

Var VelocityModel::forward(Graph& g, Var z, const std::vector<double>& t, std::optional<Var> cond,
                           const Tensor* null_mask) const {
  if (z.ndim() != 3 || z.dim(2) != cfg_.latent_channels) {
    throw DimensionError("velocity model expects z [B, N, " + std::to_string(cfg_.latent_channels) + "], got " +
                         shape_str(z.shape()));
  }
  const std::size_t B = z.dim(0), N = z.dim(1), H = cfg_.hidden, heads = cfg_.heads, dh = H / heads;
  if (t.size() != B) throw DimensionError("velocity model got " + std::to_string(t.size()) + " times for batch " + std::to_string(B));
  if (cond && (cond->ndim() != 3 || cond->dim(0) != B || cond->dim(1) != N || cond->dim(2) != cfg_.cond_dim)) {
    throw DimensionError("condition " + shape_str(cond->shape()) + " does not match latent " + shape_str(z.shape()));
  }
  if (null_mask && (null_mask->ndim() != 2 || null_mask->dim(0) != B || null_mask->dim(1) != N)) {
    throw DimensionError("null mask must be [B, N]");
  }

  Var null = p(g, "null");
  Var c;
  if (!cond) {
    c = add(g.constant(Tensor({B, N, H})), null);
  } else {
    c = linear(*cond, p(g, "in_c.w"), p(g, "in_c.b"));
    if (null_mask) {
      Tensor keep({B, N, 1});
      Tensor drop({B, N, 1});
      for (std::size_t i = 0; i < B * N; ++i) {
        drop[i] = (*null_mask)[i] != 0.0 ? 1.0 : 0.0;
        keep[i] = 1.0 - drop[i];
      }
      c = add(mul(c, g.constant(std::move(keep))), mul(g.constant(std::move(drop)), null));
    }
  }
  Var temb = reshape(time_embedding(g, t), {B, 1, H});
  Var x = add(add(linear(z, p(g, "in_z.w"), p(g, "in_z.b")), c), temb);

  std::vector<long> pos(B * N);
  for (std::size_t i = 0; i < B * N; ++i) pos[i] = static_cast<long>(i % N);
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const std::string b = "block" + std::to_string(l) + ".";
    Var h = rms_norm(x, p(g, b + "norm1"), cfg_.norm_eps);
    Var q = rope_apply(reshape(linear(h, p(g, b + "q.w"), p(g, b + "q.b")), {B * N, heads, dh}), pos, cfg_.rope_base);
    Var k = rope_apply(reshape(linear(h, p(g, b + "k.w"), p(g, b + "k.b")), {B * N, heads, dh}), pos, cfg_.rope_base);
    Var v = linear(h, p(g, b + "v.w"), p(g, b + "v.b"));
    q = reshape(permute(reshape(q, {B, N, heads, dh}), {0, 2, 1, 3}), {B * heads, N, dh});
    k = reshape(permute(reshape(k, {B, N, heads, dh}), {0, 2, 3, 1}), {B * heads, dh, N});
    v = reshape(permute(reshape(v, {B, N, heads, dh}), {0, 2, 1, 3}), {B * heads, N, dh});
    Var w = softmax(scale(bmm(q, k), att_scale), -1);
    Var a = reshape(permute(reshape(bmm(w, v), {B, heads, N, dh}), {0, 2, 1, 3}), {B, N, H});
    x = add(x, linear(a, p(g, b + "o.w"), p(g, b + "o.b")));

    Var h2 = rms_norm(x, p(g, b + "norm2"), cfg_.norm_eps);
    Var f = linear(silu(linear(h2, p(g, b + "ff1.w"), p(g, b + "ff1.b"))), p(g, b + "ff2.w"), p(g, b + "ff2.b"));
    x = add(x, f);
  }
  return linear(rms_norm(x, p(g, "norm_out"), cfg_.norm_eps), p(g, "out.w"), p(g, "out.b"));
}

Tensor VelocityModel::velocity(const Tensor& z, double t, const Tensor* cond, const Tensor* null_mask) const {
  if (z.ndim() != 2) throw DimensionError("velocity expects z [N, C], got " + shape_str(z.shape()));
  const std::size_t N = z.dim(0);
  Graph g(false);
  Var zv = g.constant(z.reshaped({1, N, z.dim(1)}));
  std::optional<Var> c;
  if (cond) {
    if (cond->ndim() != 2 || cond->dim(0) != N) {
      throw DimensionError("condition " + shape_str(cond->shape()) + " does not match latent " + shape_str(z.shape()));
    }
    c = g.constant(cond->reshaped({1, N, cond->dim(1)}));
  }
  std::optional<Tensor> mask;
  if (null_mask) mask = null_mask->reshaped({1, N});
  return forward(g, zv, {t}, c, mask ? &*mask : nullptr).value().reshaped({N, cfg_.latent_channels});
}

Tensor interpolate(const Tensor& z0, const Tensor& z1, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw InputError("interpolation time must lie in [0, 1], got " + std::to_string(t));
  if (z0.shape() != z1.shape()) {
    throw DimensionError("interpolate shapes differ: " + shape_str(z0.shape()) + " vs " + shape_str(z1.shape()));
  }
  Tensor out(z0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = z0[i] == z1[i] ? z0[i] : (1.0 - t) * z0[i] + t * z1[i];
  return out;
}

RfmDraw draw_rfm(std::size_t batch, std::size_t frames, std::size_t channels, const RfmConfig& cfg, Rng& rng) {
  RfmDraw d;
  d.z0 = Tensor({batch, frames, channels});
  for (std::size_t b = 0; b < batch; ++b) {
    d.t.push_back(rng.uniform());
    d.dropped.push_back(rng.bernoulli(cfg.cond_drop));
    std::size_t ctx = 0;
    if (cfg.icl_prob > 0.0 && rng.bernoulli(cfg.icl_prob)) {
      const auto lo = static_cast<long>(std::lround(cfg.icl_min_s * cfg.fps));
      const auto hi = static_cast<long>(std::lround(cfg.icl_max_s * cfg.fps));
      const auto span = static_cast<std::size_t>(rng.uniform_int(lo, hi));
      const auto cap = static_cast<std::size_t>(std::floor(cfg.icl_max_fraction * static_cast<double>(frames)));
      ctx = std::min(span, cap);
    }
    d.context.push_back(ctx);
  }
  for (double& v : d.z0.data()) v = rng.normal();
  return d;
}

Var rfm_objective(Var v, const Tensor& target, const std::vector<std::size_t>& context) {
  if (v.shape() != target.shape() || v.ndim() != 3) {
    throw DimensionError("rfm objective: prediction " + shape_str(v.shape()) + " vs target " + shape_str(target.shape()));
  }
  const std::size_t B = v.dim(0), N = v.dim(1);
  if (context.size() != B) throw DimensionError("rfm objective: context list does not match batch");
  Tensor mask({B, N, 1});
  std::size_t active = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = std::min(context[b], N); t < N; ++t) {
      mask.at({b, t, 0}) = 1.0;
      ++active;
    }
  Graph& g = v.graph();
  Var err = sum(mul(square(sub(g.constant(target), v)), g.constant(std::move(mask))));
  return scale(err, active ? 1.0 / static_cast<double>(active) : 0.0);
}

Var rfm_loss(const VelocityModel& model, Graph& g, const Tensor& z1, std::optional<Var> cond, const RfmDraw& draw) {
  if (z1.ndim() != 3) throw DimensionError("rfm_loss expects z1 [B, N, C], got " + shape_str(z1.shape()));
  const std::size_t B = z1.dim(0), N = z1.dim(1), C = z1.dim(2);
  if (draw.z0.shape() != z1.shape() || draw.t.size() != B) throw DimensionError("rfm draw does not match batch");
  Tensor zt(z1.shape());
  Tensor target(z1.shape());
  Tensor null_mask({B, N});
  for (std::size_t b = 0; b < B; ++b) {
    const double t = draw.t[b];
    for (std::size_t n = 0; n < N; ++n) {
      const bool ctx = n < draw.context[b];
      null_mask.at({b, n}) = (draw.dropped[b] || ctx) ? 1.0 : 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t i = (b * N + n) * C + c;
        zt[i] = ctx ? z1[i] : (1.0 - t) * draw.z0[i] + t * z1[i];
        target[i] = z1[i] - draw.z0[i];
      }
    }
  }
  Var v = model.forward(g, g.constant(std::move(zt)), draw.t, cond, &null_mask);
  return rfm_objective(v, target, draw.context);
}

RfmStep rfm_loss(const VelocityModel& model, Graph& g, const Tensor& z1, std::optional<Var> cond, const RfmConfig& cfg,
                 Rng& rng) {
  RfmDraw d = draw_rfm(z1.dim(0), z1.dim(1), z1.dim(2), cfg, rng);
  Var loss = rfm_loss(model, g, z1, cond, d);
  return {loss, std::move(d)};
}

Tensor cfg_combine(const Tensor& v_cond, const Tensor& v_null, double gamma) {
  if (gamma < 0.0) throw InputError("guidance scale must be non-negative");
  if (gamma == 1.0) return v_cond;
  if (gamma == 0.0) return v_null;
  if (v_cond.shape() != v_null.shape()) throw DimensionError("cfg: velocity shapes differ");
  Tensor out(v_cond.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gamma * v_cond[i] + (1.0 - gamma) * v_null[i];
  return out;
}

Tensor cfg_velocity(const VelocityModel& model, const Tensor& z, double t, const Tensor& cond, double gamma,
                    const Tensor* null_mask) {
  if (gamma < 0.0) throw InputError("guidance scale must be non-negative");
  if (gamma == 0.0) return model.velocity(z, t, nullptr);
  Tensor vc = model.velocity(z, t, &cond, null_mask);
  if (gamma == 1.0) return vc;
  return cfg_combine(vc, model.velocity(z, t, nullptr), gamma);
}

Tensor euler_integrate(const VelocityField& field, Tensor z, std::size_t steps, const Tensor* prompt) {
  if (steps == 0) throw InputError("euler_integrate needs at least one step");
  std::size_t P = 0;
  std::size_t row = z.ndim() ? z.size() / z.dim(0) : 0;
  if (prompt) {
    if (prompt->ndim() != 2 || z.ndim() != 2 || prompt->dim(1) != z.dim(1) || prompt->dim(0) >= z.dim(0)) {
      throw DimensionError("prompt " + shape_str(prompt->shape()) + " must be shorter than latent " + shape_str(z.shape()) +
                           " with equal channels");
    }
    P = prompt->dim(0);
  }
  auto clamp_prompt = [&] {
    for (std::size_t i = 0; i < P * row; ++i) z[i] = (*prompt)[i];
  };
  clamp_prompt();
  const double dt = 1.0 / static_cast<double>(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    const Tensor v = field(z, static_cast<double>(s) * dt);
    if (v.shape() != z.shape()) throw DimensionError("velocity field changed the latent shape");
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += dt * v[i];
    clamp_prompt();
  }
  return z;
}

Tensor sample(const VelocityModel& model, const Tensor& cond, const SamplerConfig& cfg, const Tensor& z0,
              const Tensor* prompt) {
  const std::size_t N = z0.dim(0);
  if (cond.ndim() != 2 || cond.dim(0) != N) {
    throw DimensionError("condition " + shape_str(cond.shape()) + " does not match latent " + shape_str(z0.shape()));
  }
  Tensor mask({N});
  const std::size_t P = prompt ? prompt->dim(0) : 0;
  for (std::size_t i = 0; i < P && i < N; ++i) mask[i] = 1.0;
  const Tensor* m = P ? &mask : nullptr;
  return euler_integrate(
      [&](const Tensor& z, double t) { return cfg_velocity(model, z, t, cond, cfg.guidance, m); }, z0, cfg.steps,
      prompt);
}

}  // namespace v2m::flowgen
