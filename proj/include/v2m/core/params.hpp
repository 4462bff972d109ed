#pragma once

#include <map>
#include <string>
#include <string_view>

#include "v2m/core/graph.hpp"
#include "v2m/core/rng.hpp"
#include "v2m/core/serialize.hpp"

namespace v2m {

/// Named parameters with stable addresses, iterated in name order.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  void zero_grad();
  std::size_t count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  /// Copies every tensor under `prefix` into `out`.
  void export_to(io::Bundle& out, const std::string& prefix = "") const;
  /// Loads matching names; throws InputError when a name is missing or a
  /// shape differs.
  void import_from(const io::Bundle& in, const std::string& prefix = "");

 private:
  std::map<std::string, Parameter> params_;
};

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

struct AdamWConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  /// Global gradient-norm clip; <= 0 disables.
  double grad_clip = 1.0;
};

/// Decoupled weight decay Adam. Decay applies to tensors of rank >= 2.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}
  /// Updates only parameters whose name starts with `prefix`.
  void step(ParamStore& params, std::string_view prefix = {});
  std::size_t steps() const noexcept { return t_; }
  const AdamWConfig& config() const noexcept { return cfg_; }

 private:
  struct Moments {
    Tensor m, v;
  };
  AdamWConfig cfg_;
  std::size_t t_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace v2m
