#pragma once

// Central finite-difference oracle for gradient checks. Kept independent
// of the tape's backward pass: it only ever calls the forward path.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vinil/rng.hpp"
#include "vinil/tape.hpp"

namespace testsupport {

using GraphFn = std::function<vinil::Tensor(vinil::Tape&, std::vector<vinil::Tensor>&)>;

struct GradCheckResult {
  bool ok = true;
  double worst_rel = 0.0;
  std::string detail;
};

/// Compares reverse-mode gradients of fn's scalar output against central
/// differences for every element of every input. Relative error uses an
/// absolute floor of 1 in the denominator.
inline GradCheckResult check_gradients(const GraphFn& fn, std::vector<vinil::Tensor> inputs,
                                       double h = 1e-5, double tol = 1e-4) {
  using namespace vinil;
  GradCheckResult result;

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    std::vector<Tensor> xs = inputs;
    for (auto& x : xs) tape.watch(x);
    Tensor loss = fn(tape, xs);
    tape.backward(loss);
    for (auto& x : xs) analytic.push_back(tape.grad(x));
  }

  auto eval = [&](const std::vector<Tensor>& xs) {
    Tape tape;
    std::vector<Tensor> copy = xs;
    Tensor loss = fn(tape, copy);
    return loss.values[0];
  };

  for (size_t t = 0; t < inputs.size(); ++t) {
    for (size_t i = 0; i < inputs[t].values.size(); ++i) {
      std::vector<Tensor> xs = inputs;
      const double orig = xs[t].values[i];
      xs[t].values[i] = orig + h;
      const double up = eval(xs);
      xs[t].values[i] = orig - h;
      const double down = eval(xs);
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[t][i];
      const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      result.worst_rel = std::max(result.worst_rel, rel);
      if (rel > tol) {
        result.ok = false;
        result.detail = vinil::str("input ", t, " element ", i, ": analytic ", a, " numeric ",
                                   numeric, " rel ", rel);
        return result;
      }
    }
  }
  return result;
}

inline vinil::Tensor random_tensor(std::vector<int> shape, vinil::Rng& rng, double lo = -2.0,
                                   double hi = 2.0, double avoid_zero_margin = 0.0) {
  vinil::Tensor t(std::move(shape));
  for (auto& v : t.values) {
    do {
      v = rng.uniform(lo, hi);
    } while (avoid_zero_margin > 0.0 && std::abs(v) < avoid_zero_margin);
  }
  return t;
}

}  // namespace testsupport
