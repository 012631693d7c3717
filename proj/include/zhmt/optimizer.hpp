#pragma once

#include <cstddef>

#include "zhmt/tensor.hpp"

namespace zhmt {

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-8;
  double weight_decay = 3e-7;
  double peak_lr = 5e-5;
  std::size_t warmup_steps = 1000;
  std::size_t total_steps = 10000;
  std::size_t batch_size = 8;
  double grad_clip_norm = 1.0;
  bool clip_gradients = true;

  void validate() const;
  bool operator==(const OptimizerConfig&) const = default;
};

// Linear warmup to peak_lr, then cosine decay to 0 at total_steps.
double lr_at(std::size_t step, const OptimizerConfig& opt);

struct AdamState {
  TensorMap m;
  TensorMap v;
  std::size_t step = 0;  // number of updates applied

  bool operator==(const AdamState&) const = default;
};

AdamState init_adam_state(const TensorMap& params);

double global_norm(const TensorMap& grads);
// Scales grads in place so their global norm is at most max_norm. Returns the pre-clip norm.
double clip_by_global_norm(TensorMap& grads, double max_norm);

// Decoupled weight decay AdamW update of every tensor in `params` from the matching grad.
void adamw_step(TensorMap& params, const TensorMap& grads, AdamState& state, const OptimizerConfig& opt, double lr);

}  // namespace zhmt
