#pragma once

#include <map>
#include <string>
#include <vector>

#include "vinil/data.hpp"
#include "vinil/losses.hpp"
#include "vinil/model.hpp"

namespace vinil {

enum class Method { finetune, ewc, replay };
enum class Supervision { label, self_sup };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::finetune: return "finetune";
    case Method::ewc: return "ewc";
    default: return "replay";
  }
}

inline const char* supervision_name(Supervision s) {
  return s == Supervision::label ? "label" : "self";
}

inline Method parse_method(const std::string& s) {
  if (s == "finetune") return Method::finetune;
  if (s == "ewc") return Method::ewc;
  if (s == "replay") return Method::replay;
  fail("unknown method '", s, "' (expected finetune|ewc|replay)");
}

inline Supervision parse_supervision(const std::string& s) {
  if (s == "label") return Supervision::label;
  if (s == "self") return Supervision::self_sup;
  fail("unknown supervision '", s, "' (expected label|self)");
}

struct StrategyConfig {
  Method method = Method::finetune;
  Supervision supervision = Supervision::self_sup;
  double memory_fraction = 0.10;  // replay only
  HyperParams hyper;

  void validate() const {
    hyper.validate();
    check(memory_fraction > 0.0 && memory_fraction <= 1.0, "StrategyConfig: memory_fraction ",
          memory_fraction, " outside (0, 1]");
  }
};

// ---- EwC -------------------------------------------------------------------

/// Anchor weights and per-parameter importance from the previous session.
/// Self-supervised mode uses the identity importance (all ones); label
/// mode uses the diagonal empirical Fisher of the predicted class.
struct EwCState {
  bool initialized = false;
  std::map<std::string, Tensor> theta_prev;
  std::map<std::string, Tensor> omega;
};

namespace detail {

// The classifier grows along its last axis between sessions; anchors are
// re-laid-out against the current shape with zero importance for new slots.
inline bool expansion_compatible(const std::vector<int>& old_shape,
                                 const std::vector<int>& new_shape) {
  if (old_shape.size() != new_shape.size() || old_shape.empty()) return false;
  for (size_t i = 0; i + 1 < old_shape.size(); ++i)
    if (old_shape[i] != new_shape[i]) return false;
  return new_shape.back() >= old_shape.back();
}

inline void align_to_current(const Tensor& old_t, const std::vector<int>& new_shape, Tensor& out) {
  out = Tensor(new_shape);
  const int old_last = old_t.shape.back(), new_last = new_shape.back();
  const int64_t rows = old_t.size() / old_last;
  for (int64_t r = 0; r < rows; ++r)
    for (int j = 0; j < old_last; ++j)
      out.values[static_cast<size_t>(r) * new_last + j] =
          old_t.values[static_cast<size_t>(r) * old_last + j];
}

}  // namespace detail

/// Reg = sum_p Omega_p (theta_p - theta_prev_p)^2, on the tape so it can
/// join the training objective. Zero before the first snapshot.
inline Tensor ewc_penalty(Tape& tape, const ModelState& model, const EwCState& state) {
  if (!state.initialized) return Tensor::scalar(0.0);
  Tensor total = Tensor::scalar(0.0);
  bool any = false;
  for (const auto& [name, prev] : state.theta_prev) {
    auto it = model.params.find(name);
    check(it != model.params.end(), "ewc_penalty: parameter '", name,
          "' from the snapshot is missing from the model");
    const Tensor& current = it->second;
    const Tensor& omega = state.omega.at(name);
    Tensor prev_aligned, omega_aligned;
    const Tensor* prev_use = &prev;
    const Tensor* omega_use = &omega;
    if (prev.shape != current.shape) {
      check(detail::expansion_compatible(prev.shape, current.shape),
            "ewc_penalty: shape mismatch for '", name, "': snapshot ", shape_str(prev.shape),
            " vs model ", shape_str(current.shape));
      detail::align_to_current(prev, current.shape, prev_aligned);
      detail::align_to_current(omega, current.shape, omega_aligned);
      prev_use = &prev_aligned;
      omega_use = &omega_aligned;
    }
    Tensor diff = tape.sub(current, *prev_use);
    Tensor term = tape.sum(tape.mul(*omega_use, tape.mul(diff, diff)));
    total = any ? tape.add(total, term) : term;
    any = true;
  }
  return total;
}

/// Snapshots the model at a session boundary. Label mode estimates the
/// diagonal empirical Fisher from per-sample gradients of the predicted
/// class log-likelihood over the just-finished task.
inline EwCState ewc_update_after_session(ModelState& model, const std::vector<Sample>& task_data,
                                         Supervision supervision) {
  EwCState state;
  state.initialized = true;
  for (const auto& [name, p] : model.params) {
    Tensor snap(p.shape, p.values);  // exact copy, no tape linkage
    state.theta_prev[name] = std::move(snap);
  }
  if (supervision == Supervision::self_sup) {
    for (const auto& [name, p] : model.params) state.omega[name] = Tensor::full(p.shape, 1.0);
    return state;
  }
  check(!task_data.empty(), "ewc_update_after_session: empty task data under label supervision");
  for (const auto& [name, p] : model.params) state.omega[name] = Tensor(p.shape);
  for (const Sample& sample : task_data) {
    Tape tape;
    ParameterBinding binding(tape, model);
    Tensor batch = tape.reshape(sample.image, {1, sample.image.shape[0], sample.image.shape[1],
                                               sample.image.shape[2]});
    Tensor logp = tape.log_softmax(classify(tape, model, encode(tape, model, batch)));
    int argmax = 0;
    for (int j = 1; j < logp.shape[1]; ++j)
      if (logp.at(0, j) > logp.at(0, argmax)) argmax = j;
    tape.backward(tape.nll(logp, {argmax}));
    for (auto& [name, omega] : state.omega) {
      const std::vector<double>& g = tape.grad(model.params.at(name));
      for (size_t i = 0; i < g.size(); ++i) omega.values[i] += g[i] * g[i];
    }
  }
  const double inv_n = 1.0 / static_cast<double>(task_data.size());
  for (auto& [name, omega] : state.omega)
    for (auto& v : omega.values) v *= inv_n;
  return state;
}

// ---- Replay ----------------------------------------------------------------

/// Stored exemplar: image always, label only under label supervision.
struct MemoryItem {
  Tensor image;
  int label = -1;  // instance id, or -1 when labels are not stored
  int task_id = 0;
};

struct MemoryBuffer {
  Supervision supervision = Supervision::self_sup;
  std::vector<MemoryItem> items;
};

/// Appends round(fraction * |task|) items drawn uniformly without
/// replacement from the completed task. Deterministic in the seed.
inline void buffer_update(MemoryBuffer& buffer, const Task& task, double fraction,
                          uint64_t rng_seed) {
  check(fraction > 0.0 && fraction <= 1.0, "buffer_update: fraction ", fraction,
        " outside (0, 1]");
  const size_t n = task.train.size();
  if (n == 0) return;
  const size_t k = static_cast<size_t>(std::lround(fraction * static_cast<double>(n)));
  if (k == 0) return;
  Rng rng(mix_seed(rng_seed, 0x6d656d6full + static_cast<uint64_t>(task.task_id)));
  std::vector<size_t> picks = rng.sample_without_replacement(n, k);
  std::sort(picks.begin(), picks.end());
  for (size_t idx : picks) {
    const Sample& s = task.train[idx];
    MemoryItem item;
    item.image = s.image;
    item.label = buffer.supervision == Supervision::label ? s.instance_id : -1;
    item.task_id = task.task_id;
    buffer.items.push_back(std::move(item));
  }
}

struct MemoryBatch {
  std::vector<const MemoryItem*> items;
  std::vector<int> labels;  // instance ids; empty under self supervision
};

/// Uniform draw from the buffer: without replacement when it is large
/// enough, with replacement otherwise.
inline MemoryBatch replay_batch(const MemoryBuffer& buffer, int batch_size, Rng& rng) {
  check(!buffer.items.empty(), "replay_batch: memory buffer is empty");
  check(batch_size >= 1, "replay_batch: batch_size must be >= 1");
  MemoryBatch batch;
  const size_t n = buffer.items.size();
  if (static_cast<size_t>(batch_size) <= n) {
    for (size_t idx : rng.sample_without_replacement(n, static_cast<size_t>(batch_size)))
      batch.items.push_back(&buffer.items[idx]);
  } else {
    for (int i = 0; i < batch_size; ++i)
      batch.items.push_back(&buffer.items[rng.uniform_int(n)]);
  }
  if (buffer.supervision == Supervision::label) {
    for (const MemoryItem* item : batch.items) {
      check(item->label >= 0, "replay_batch: label-mode buffer holds an unlabeled item");
      batch.labels.push_back(item->label);
    }
  }
  return batch;
}

// ---- session loss ------------------------------------------------------------

/// A training batch with its two views. Labels are classifier slot
/// indices and stay empty under self supervision.
struct ViewBatch {
  Tensor x;      // (B,C,H,W)
  Tensor x_aug;  // (B,C,H,W)
  std::vector<int> labels;
};

struct SessionInputs {
  const EwCState* ewc = nullptr;        // ewc method only
  const ViewBatch* memory = nullptr;    // replay method only; null while empty
};

namespace detail {

inline Tensor self_embedding(Tape& tape, const ModelState& model, const Tensor& batch) {
  Tensor h = encode(tape, model, batch);
  return model.config.projector.enabled ? project(tape, model, h) : h;
}

inline Tensor instance_loss(Tape& tape, const ModelState& model, const ViewBatch& batch,
                            const StrategyConfig& strategy) {
  if (strategy.supervision == Supervision::label) {
    check(!batch.labels.empty(), "session_loss: label supervision requires labeled samples");
    Tensor logits = classify(tape, model, encode(tape, model, batch.x_aug));
    return cross_entropy(tape, logits, batch.labels);
  }
  Tensor z = self_embedding(tape, model, batch.x);
  Tensor z_prime = self_embedding(tape, model, batch.x_aug);
  return barlow_twins(tape, z, z_prime, strategy.hyper.w_b);
}

}  // namespace detail

/// The per-step objective, exactly one row of the method/supervision
/// table. When the incremental term does not exist yet (first session for
/// EwC, empty memory for Replay) the loss reduces to plain fine-tuning.
inline Tensor session_loss(Tape& tape, const ModelState& model, const ViewBatch& batch,
                           const StrategyConfig& strategy, const SessionInputs& inputs) {
  strategy.validate();
  Tensor l_inst = detail::instance_loss(tape, model, batch, strategy);
  switch (strategy.method) {
    case Method::finetune:
      return l_inst;
    case Method::ewc: {
      if (!inputs.ewc || !inputs.ewc->initialized) return l_inst;
      Tensor reg = ewc_penalty(tape, model, *inputs.ewc);
      return combined_objective(tape, l_inst, reg, strategy.hyper.w_c);
    }
    default: {
      if (!inputs.memory) return l_inst;
      Tensor l_mem = detail::instance_loss(tape, model, *inputs.memory, strategy);
      return combined_objective(tape, l_inst, l_mem, strategy.hyper.w_c);
    }
  }
}

}  // namespace vinil
