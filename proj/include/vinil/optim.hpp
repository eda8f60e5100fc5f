#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "vinil/tensor.hpp"

namespace vinil {

/// lr(epoch) = min_lr + (base_lr - min_lr) * (1 + cos(pi * epoch/total)) / 2.
/// Exact at the endpoints; epochs past the horizon clamp to min_lr.
inline double cosine_anneal_lr(double base_lr, double min_lr, int epoch, int total_epochs) {
  check(total_epochs > 0, "cosine_anneal_lr: total_epochs must be positive");
  check(min_lr <= base_lr, "cosine_anneal_lr: min_lr ", min_lr, " exceeds base_lr ", base_lr);
  check(epoch >= 0, "cosine_anneal_lr: negative epoch");
  if (epoch >= total_epochs) return min_lr;
  if (epoch == 0) return base_lr;
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(M_PI * epoch / total_epochs));
}

/// SGD-with-momentum state: v <- momentum*v + g; theta <- theta - lr*v.
struct OptimizerState {
  double momentum = 0.9;
  double base_lr = 1e-3;
  double min_lr = 0.0;
  int epoch = 0;
  int total_epochs = 1;
  std::map<std::string, std::vector<double>> velocity;

  double current_lr() const { return cosine_anneal_lr(base_lr, min_lr, epoch, total_epochs); }
};

inline void sgd_momentum_step(std::map<std::string, Tensor>& params,
                              const std::map<std::string, std::vector<double>>& grads,
                              OptimizerState& state) {
  check(state.momentum >= 0.0 && state.momentum < 1.0, "sgd_momentum_step: momentum ",
        state.momentum, " outside [0, 1)");
  const double lr = state.current_lr();
  for (auto& [name, param] : params) {
    auto git = grads.find(name);
    check(git != grads.end(), "sgd_momentum_step: missing gradient for parameter '", name, "'");
    const std::vector<double>& g = git->second;
    check(g.size() == param.values.size(), "sgd_momentum_step: gradient size ", g.size(),
          " does not match parameter '", name, "' of size ", param.values.size());
    std::vector<double>& v = state.velocity[name];
    if (v.empty()) v.assign(param.values.size(), 0.0);
    check(v.size() == param.values.size(), "sgd_momentum_step: stale velocity for '", name, "'");
    for (size_t i = 0; i < v.size(); ++i) {
      v[i] = state.momentum * v[i] + g[i];
      param.values[i] -= lr * v[i];
    }
  }
}

}  // namespace vinil
