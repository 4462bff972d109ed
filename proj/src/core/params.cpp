#include "v2m/core/params.hpp"

#include <cmath>

#include "v2m/core/error.hpp"

namespace v2m {

Parameter& ParamStore::add(const std::string& name, Tensor init) {
  auto [it, inserted] = params_.try_emplace(name, std::move(init));
  if (!inserted) throw ConfigError("duplicate parameter name '" + name + "'");
  return it->second;
}

Parameter& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

const Parameter& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& [_, p] : params_) p.zero_grad();
}

std::size_t ParamStore::count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.value.size();
  return n;
}

void ParamStore::export_to(io::Bundle& out, const std::string& prefix) const {
  for (const auto& [name, p] : params_) out.tensors[prefix + name] = p.value;
}

void ParamStore::import_from(const io::Bundle& in, const std::string& prefix) {
  for (auto& [name, p] : params_) {
    auto it = in.tensors.find(prefix + name);
    if (it == in.tensors.end()) throw InputError("checkpoint is missing parameter '" + prefix + name + "'");
    if (it->second.shape() != p.value.shape()) {
      throw InputError("checkpoint parameter '" + prefix + name + "' has shape " + shape_str(it->second.shape()) +
                       ", expected " + shape_str(p.value.shape()));
    }
    p.value = it->second;
    p.zero_grad();
  }
}

Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-a, a);
  return t;
}

void AdamW::step(ParamStore& params, std::string_view prefix) {
  auto selected = [&](const std::string& name) { return name.compare(0, prefix.size(), prefix) == 0; };
  ++t_;
  double scale = 1.0;
  if (cfg_.grad_clip > 0) {
    double sq = 0.0;
    for (const auto& [name, p] : params)
      if (selected(name))
        for (double g : p.grad.data()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > cfg_.grad_clip) scale = cfg_.grad_clip / norm;
  }
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& [name, p] : params) {
    if (!selected(name)) continue;
    Moments& st = state_[name];
    if (st.m.size() != p.value.size()) {
      st.m = Tensor::zeros_like(p.value);
      st.v = Tensor::zeros_like(p.value);
    }
    const bool decay = p.value.ndim() >= 2;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad.size() == p.value.size() ? p.grad[i] * scale : 0.0;
      st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g;
      st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = st.m[i] / bc1;
      const double vhat = st.v[i] / bc2;
      if (decay) p.value[i] -= cfg_.lr * cfg_.weight_decay * p.value[i];
      p.value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace v2m
