#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "v2m/core/graph.hpp"
#include "v2m/core/params.hpp"

// Rectified flow matching over music latents with a small diffusion
// transformer velocity model.
namespace v2m::flowgen {

struct DitConfig {
  std::size_t latent_channels = 8;
  std::size_t cond_dim = 64;
  std::size_t hidden = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn = 256;
  std::size_t time_dim = 32;
  double rope_base = 10000.0;
  double norm_eps = 1e-6;
};

/// v(z_t | c; theta). The null embedding lives in hidden space and replaces
/// the projected condition on masked frames.
class VelocityModel {
 public:
  VelocityModel(DitConfig cfg, ParamStore& store, Rng& rng, std::string prefix = "dit.");

  const DitConfig& config() const noexcept { return cfg_; }

  /// z[B, N, C_z], t[B], cond[B, N, cond_dim] or nullopt (all frames null).
  /// null_mask[B, N] selects frames whose condition is replaced by the null
  /// embedding; may be null.
  Var forward(Graph& g, Var z, const std::vector<double>& t, std::optional<Var> cond,
              const Tensor* null_mask = nullptr) const;

  /// Single-sequence inference: z[N, C_z], cond[N, cond_dim] or null.
  Tensor velocity(const Tensor& z, double t, const Tensor* cond, const Tensor* null_mask = nullptr) const;

 private:
  Var p(Graph& g, const std::string& name) const;
  Var time_embedding(Graph& g, const std::vector<double>& t) const;

  DitConfig cfg_;
  ParamStore* store_;
  std::string prefix_;
};

/// (1 - t) z0 + t z1; t outside [0, 1] is an input error.
Tensor interpolate(const Tensor& z0, const Tensor& z1, double t);

struct RfmConfig {
  double cond_drop = 0.2;
  /// Probability of partial denoising with a clean prompt prefix; 0 disables.
  double icl_prob = 0.0;
  double icl_min_s = 1.0;
  double icl_max_s = 4.0;
  double icl_max_fraction = 0.33;
  double fps = 10.0;
};

/// Random quantities of one RFM training step for a batch.
struct RfmDraw {
  std::vector<double> t;             // [B]
  Tensor z0;                         // [B, N, C_z]
  std::vector<bool> dropped;         // condition replaced by null
  std::vector<std::size_t> context;  // clean prompt frames per sample
};

RfmDraw draw_rfm(std::size_t batch, std::size_t frames, std::size_t channels, const RfmConfig& cfg, Rng& rng);

/// Mean over non-context frames of the channel-summed squared error between
/// v[B, N, C] and target; exactly zero (with zero gradients) when every frame
/// is context.
Var rfm_objective(Var v, const Tensor& target, const std::vector<std::size_t>& context);

struct RfmStep {
  Var loss;
  RfmDraw draw;
};

/// One Monte-Carlo estimate of the RFM loss on clean latents z1[B, N, C_z].
RfmStep rfm_loss(const VelocityModel& model, Graph& g, const Tensor& z1, std::optional<Var> cond, const RfmConfig& cfg,
                 Rng& rng);
/// Same with caller-provided randomness.
Var rfm_loss(const VelocityModel& model, Graph& g, const Tensor& z1, std::optional<Var> cond, const RfmDraw& draw);

using VelocityField = std::function<Tensor(const Tensor& z, double t)>;

/// gamma * v_c + (1 - gamma) * v_null. gamma == 1 and gamma == 0 return the
/// respective field unchanged.
Tensor cfg_combine(const Tensor& v_cond, const Tensor& v_null, double gamma);
Tensor cfg_velocity(const VelocityModel& model, const Tensor& z, double t, const Tensor& cond, double gamma,
                    const Tensor* null_mask = nullptr);

struct SamplerConfig {
  std::size_t steps = 25;
  double guidance = 4.0;
};

/// Fixed-step Euler from t = 0 to 1. With a prompt[P, C], the first P frames
/// are set to the prompt before the first step and after every step.
Tensor euler_integrate(const VelocityField& field, Tensor z0, std::size_t steps, const Tensor* prompt = nullptr);

/// Guided sampling from noise z0[N, C_z] conditioned on cond[N, cond_dim].
/// Prompt frames use the null condition.
Tensor sample(const VelocityModel& model, const Tensor& cond, const SamplerConfig& cfg, const Tensor& z0,
              const Tensor* prompt = nullptr);

}  // namespace v2m::flowgen
