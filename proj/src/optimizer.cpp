#include "zhmt/optimizer.hpp"

#include <cmath>
#include <numbers>

#include "zhmt/errors.hpp"

namespace zhmt {

void OptimizerConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("optimizer config: " + m); };
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) fail("betas must lie in (0,1)");
  if (!(epsilon > 0.0)) fail("epsilon must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be nonnegative");
  if (!(peak_lr >= 0.0)) fail("peak_lr must be nonnegative");
  if (total_steps == 0) fail("total_steps must be positive");
  if (warmup_steps > total_steps) fail("warmup_steps must not exceed total_steps");
  if (batch_size == 0) fail("batch_size must be positive");
  if (clip_gradients && !(grad_clip_norm > 0.0)) fail("grad_clip_norm must be positive");
}

double lr_at(std::size_t step, const OptimizerConfig& opt) {
  if (step > opt.total_steps)
    throw Error("lr_at: step " + std::to_string(step) + " beyond total_steps " + std::to_string(opt.total_steps));
  const auto s = static_cast<double>(step);
  if (step < opt.warmup_steps) return opt.peak_lr * s / static_cast<double>(opt.warmup_steps);
  if (opt.total_steps == opt.warmup_steps) return opt.peak_lr;
  const double progress =
      (s - static_cast<double>(opt.warmup_steps)) / static_cast<double>(opt.total_steps - opt.warmup_steps);
  return opt.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamState init_adam_state(const TensorMap& params) {
  AdamState s;
  for (const auto& [name, t] : params) {
    s.m[name] = Tensor(t.shape);
    s.v[name] = Tensor(t.shape);
  }
  return s;
}

double global_norm(const TensorMap& grads) {
  double sq = 0.0;
  for (const auto& [_, g] : grads)
    for (double v : g.data) sq += v * v;
  return std::sqrt(sq);
}

double clip_by_global_norm(TensorMap& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double k = max_norm / norm;
    for (auto& [_, g] : grads)
      for (double& v : g.data) v *= k;
  }
  return norm;
}

void adamw_step(TensorMap& params, const TensorMap& grads, AdamState& state, const OptimizerConfig& opt, double lr) {
  const std::size_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) throw Error("no gradient for trainable tensor '" + name + "'");
    const Tensor& g = git->second;
    Tensor& m = state.m.at(name);
    Tensor& v = state.v.at(name);
    if (g.shape != p.shape || m.shape != p.shape || v.shape != p.shape)
      throw Error("shape mismatch in optimizer state for '" + name + "'");
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double gi = g.data[i];
      m.data[i] = opt.beta1 * m.data[i] + (1.0 - opt.beta1) * gi;
      v.data[i] = opt.beta2 * v.data[i] + (1.0 - opt.beta2) * gi * gi;
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      double next = p.data[i] * (1.0 - lr * opt.weight_decay);
      next -= lr * mhat / (std::sqrt(vhat) + opt.epsilon);
      if (!std::isfinite(next)) throw NumericError("non-finite update in tensor '" + name + "'");
      p.data[i] = next;
    }
  }
  state.step = t;
}

}  // namespace zhmt
