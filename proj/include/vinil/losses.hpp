#pragma once

#include <cmath>
#include <vector>

#include "vinil/tape.hpp"

namespace vinil {

struct HyperParams {
  double w_c = 0.7;   // instance-loss weight in the combined objective
  double w_b = 0.03;  // off-diagonal redundancy weight in BarlowTwins
  int batch_size = 64;
  int epochs_per_session = 20;

  void validate() const {
    check(w_c >= 0.0 && w_c <= 1.0, "HyperParams: w_c ", w_c, " outside [0, 1]");
    check(w_b > 0.0, "HyperParams: w_b must be positive, got ", w_b);
    check(batch_size > 0, "HyperParams: batch_size must be positive");
    check(epochs_per_session >= 0, "HyperParams: negative epochs_per_session");
  }
};

/// Mean cross-entropy of logits (B,N) against integer labels.
inline Tensor cross_entropy(Tape& tape, const Tensor& logits, const std::vector<int>& labels) {
  check(logits.rank() == 2, "cross_entropy: expected rank-2 logits, got ",
        shape_str(logits.shape));
  return tape.nll(tape.log_softmax(logits), labels);
}

/// Column-wise standardization over the batch (see Tape::batch_normalize).
inline Tensor batch_normalize(Tape& tape, const Tensor& z) { return tape.batch_normalize(z); }

/// C = (1/B) z_norm^T z'_norm, the cross-correlation of two views.
/// Entries lie in [-1, 1] up to roundoff; C_ii = 1 when column i of both
/// views matches and is non-constant.
inline Tensor cross_correlation(Tape& tape, const Tensor& z, const Tensor& z_prime) {
  check(same_shape(z, z_prime), "cross_correlation: shape mismatch ", shape_str(z.shape), " vs ",
        shape_str(z_prime.shape));
  check(z.rank() == 2 && z.shape[0] >= 2, "cross_correlation: need a (B>=2, D) batch, got ",
        shape_str(z.shape));
  const double inv_b = 1.0 / z.shape[0];
  return tape.matmul_tn(tape.batch_normalize(z), tape.batch_normalize(z_prime), inv_b);
}

/// BT = sum_i (1 - C_ii)^2 + w_b sum_{i != j} C_ij^2. Zero exactly when
/// the cross-correlation is the identity.
inline Tensor barlow_twins(Tape& tape, const Tensor& z, const Tensor& z_prime, double w_b) {
  check(w_b > 0.0, "barlow_twins: w_b must be positive, got ", w_b);
  return tape.barlow_penalty(cross_correlation(tape, z, z_prime), w_b);
}

/// L = w_c * L_inst + (1 - w_c) * L_incr.
inline Tensor combined_objective(Tape& tape, const Tensor& l_inst, const Tensor& l_incr,
                                 double w_c) {
  check(w_c >= 0.0 && w_c <= 1.0, "combined_objective: w_c ", w_c, " outside [0, 1]");
  check(is_scalar(l_inst) && is_scalar(l_incr), "combined_objective: both losses must be scalar");
  check(std::isfinite(l_inst.values[0]) && std::isfinite(l_incr.values[0]),
        "combined_objective: non-finite loss input");
  if (w_c == 1.0) return l_inst;
  if (w_c == 0.0) return l_incr;
  return tape.add(tape.scale(l_inst, w_c), tape.scale(l_incr, 1.0 - w_c));
}

}  // namespace vinil
