#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vinil/optim.hpp"
#include "vinil/rng.hpp"
#include "vinil/tape.hpp"

namespace vinil {

enum class EncoderKind { mlp, smallconv };

struct ProjectorConfig {
  bool enabled = true;
  int hidden = 256;
  int out = 128;
};

struct EncoderConfig {
  EncoderKind kind = EncoderKind::mlp;
  int channels = 3;
  int height = 32;
  int width = 32;
  // Hidden widths: fully-connected widths for `mlp`, channel counts for
  // `smallconv` (3x3 kernels, stride 2, zero padding 1).
  std::vector<int> hidden = {256, 128};
  int embed_dim = 64;
  ProjectorConfig projector;

  void validate() const {
    check(embed_dim >= 2, "EncoderConfig: embed_dim must be >= 2, got ", embed_dim);
    check(!hidden.empty(), "EncoderConfig: hidden widths must be nonempty");
    for (int h : hidden) check(h > 0, "EncoderConfig: nonpositive hidden width ", h);
    check(channels > 0 && height > 0 && width > 0, "EncoderConfig: bad input dims (", channels,
          ", ", height, ", ", width, ")");
  }
};

inline std::vector<int> default_hidden(EncoderKind kind) {
  return kind == EncoderKind::mlp ? std::vector<int>{256, 128} : std::vector<int>{16, 32};
}

/// Named parameters of encoder + projector + expandable instance
/// classifier. Classifier parameters only exist once instances have been
/// registered (the classifier starts empty).
struct ModelState {
  EncoderConfig config;
  std::map<std::string, Tensor> params;
  int num_instances = 0;
  std::vector<int> instance_slots;  // slot -> instance id, in registration order
  uint64_t init_seed = 0;
  uint64_t expand_counter = 0;

  int slot_of(int instance_id) const {
    for (size_t i = 0; i < instance_slots.size(); ++i)
      if (instance_slots[i] == instance_id) return static_cast<int>(i);
    return -1;
  }
};

namespace detail {

inline Tensor uniform_tensor(std::vector<int> shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values) v = rng.uniform(-bound, bound);
  return t;
}

// One linear layer, torch-style init: U(+-1/sqrt(fan_in)) for both w and b.
inline void init_linear(ModelState& m, const std::string& prefix, int in, int out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  m.params[prefix + ".w"] = uniform_tensor({in, out}, bound, rng);
  m.params[prefix + ".b"] = uniform_tensor({out}, bound, rng);
}

inline void init_conv(ModelState& m, const std::string& prefix, int in_ch, int out_ch, int k,
                      Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch * k * k));
  m.params[prefix + ".w"] = uniform_tensor({out_ch, in_ch, k, k}, bound, rng);
  m.params[prefix + ".b"] = uniform_tensor({out_ch}, bound, rng);
}

}  // namespace detail

inline ModelState make_model(const EncoderConfig& config, uint64_t seed) {
  config.validate();
  ModelState m;
  m.config = config;
  m.init_seed = seed;
  Rng rng(mix_seed(seed, 0x6d6f64656cull));  // "model"
  if (config.kind == EncoderKind::mlp) {
    int in = config.channels * config.height * config.width;
    for (size_t i = 0; i < config.hidden.size(); ++i) {
      detail::init_linear(m, str("encoder.fc", i), in, config.hidden[i], rng);
      in = config.hidden[i];
    }
    detail::init_linear(m, "encoder.out", in, config.embed_dim, rng);
  } else {
    int in = config.channels;
    for (size_t i = 0; i < config.hidden.size(); ++i) {
      detail::init_conv(m, str("encoder.conv", i), in, config.hidden[i], 3, rng);
      in = config.hidden[i];
    }
    detail::init_linear(m, "encoder.out", in, config.embed_dim, rng);
  }
  if (config.projector.enabled) {
    detail::init_linear(m, "projector.fc0", config.embed_dim, config.projector.hidden, rng);
    detail::init_linear(m, "projector.fc1", config.projector.hidden, config.projector.out, rng);
  }
  return m;
}

/// Embedding h = f_theta(x): (B,C,H,W) -> (B,D). The classifier plays no
/// part here, so expanding it never changes embeddings.
inline Tensor encode(Tape& tape, const ModelState& m, const Tensor& batch) {
  const EncoderConfig& c = m.config;
  check(batch.rank() == 4 && batch.shape[1] == c.channels && batch.shape[2] == c.height &&
            batch.shape[3] == c.width,
        "encode: batch shape ", shape_str(batch.shape), " does not match configured input (B, ",
        c.channels, ", ", c.height, ", ", c.width, ")");
  auto p = [&](const std::string& name) -> const Tensor& {
    auto it = m.params.find(name);
    check(it != m.params.end(), "encode: missing parameter '", name, "'");
    return it->second;
  };
  if (c.kind == EncoderKind::mlp) {
    Tensor h = tape.flatten(batch);
    for (size_t i = 0; i < c.hidden.size(); ++i) {
      h = tape.relu(tape.affine(h, p(str("encoder.fc", i, ".w")), p(str("encoder.fc", i, ".b"))));
    }
    return tape.affine(h, p("encoder.out.w"), p("encoder.out.b"));
  }
  Tensor h = batch;
  for (size_t i = 0; i < c.hidden.size(); ++i) {
    h = tape.relu(tape.conv2d(h, p(str("encoder.conv", i, ".w")), p(str("encoder.conv", i, ".b")),
                              /*stride=*/2, /*pad=*/1));
  }
  h = tape.spatial_mean(h);
  return tape.affine(h, p("encoder.out.w"), p("encoder.out.b"));
}

/// Two-layer relu projector for self-supervision: (B,D) -> (B,P).
inline Tensor project(Tape& tape, const ModelState& m, const Tensor& h) {
  check(m.config.projector.enabled, "project: projector is disabled in this model");
  check(h.rank() == 2 && h.shape[1] == m.config.embed_dim, "project: expected (B, ",
        m.config.embed_dim, "), got ", shape_str(h.shape));
  Tensor z = tape.relu(tape.affine(h, m.params.at("projector.fc0.w"), m.params.at("projector.fc0.b")));
  return tape.affine(z, m.params.at("projector.fc1.w"), m.params.at("projector.fc1.b"));
}

/// Instance logits: (B,D) -> (B, num_instances).
inline Tensor classify(Tape& tape, const ModelState& m, const Tensor& h) {
  check(m.num_instances >= 1, "classify: classifier is empty, no instances registered");
  check(h.rank() == 2 && h.shape[1] == m.config.embed_dim, "classify: expected (B, ",
        m.config.embed_dim, "), got ", shape_str(h.shape));
  return tape.affine(h, m.params.at("classifier.w"), m.params.at("classifier.b"));
}

/// Widens the classifier by n_new slots. Existing weights are preserved
/// bit-exactly, new slots draw U(+-1/sqrt(D)), and any optimizer velocity
/// is re-laid-out with zeros for the new slots.
inline void expand_classifier(ModelState& m, int n_new, OptimizerState* opt = nullptr) {
  check(n_new >= 1, "expand_classifier: n_new must be >= 1, got ", n_new);
  const int D = m.config.embed_dim;
  const int old_n = m.num_instances;
  const int new_n = old_n + n_new;
  const double bound = 1.0 / std::sqrt(static_cast<double>(D));
  Rng rng(mix_seed(m.init_seed, 0x636c73ull + m.expand_counter++));

  Tensor w({D, new_n});
  Tensor b({new_n});
  const Tensor* old_w = old_n > 0 ? &m.params.at("classifier.w") : nullptr;
  const Tensor* old_b = old_n > 0 ? &m.params.at("classifier.b") : nullptr;
  for (int d = 0; d < D; ++d)
    for (int j = 0; j < new_n; ++j)
      w.at(d, j) = j < old_n ? old_w->at(d, j) : rng.uniform(-bound, bound);
  for (int j = 0; j < new_n; ++j)
    b.values[static_cast<size_t>(j)] = j < old_n ? old_b->values[static_cast<size_t>(j)]
                                                 : rng.uniform(-bound, bound);

  if (opt) {
    auto wv = opt->velocity.find("classifier.w");
    std::vector<double> nv(static_cast<size_t>(D) * new_n, 0.0);
    if (wv != opt->velocity.end() && !wv->second.empty())
      for (int d = 0; d < D; ++d)
        for (int j = 0; j < old_n; ++j)
          nv[static_cast<size_t>(d) * new_n + j] = wv->second[static_cast<size_t>(d) * old_n + j];
    opt->velocity["classifier.w"] = std::move(nv);
    auto bv = opt->velocity.find("classifier.b");
    std::vector<double> nb(static_cast<size_t>(new_n), 0.0);
    if (bv != opt->velocity.end() && !bv->second.empty())
      for (int j = 0; j < old_n; ++j) nb[static_cast<size_t>(j)] = bv->second[static_cast<size_t>(j)];
    opt->velocity["classifier.b"] = std::move(nb);
  }

  m.params["classifier.w"] = std::move(w);
  m.params["classifier.b"] = std::move(b);
  m.num_instances = new_n;
}

/// Registers unseen instance ids, expanding the classifier as needed.
/// Returns the number of newly added slots.
inline int register_instances(ModelState& m, const std::vector<int>& ids,
                              OptimizerState* opt = nullptr) {
  std::vector<int> fresh;
  for (int id : ids)
    if (m.slot_of(id) < 0) {
      bool dup = false;
      for (int f : fresh) dup = dup || f == id;
      if (!dup) fresh.push_back(id);
    }
  if (fresh.empty()) return 0;
  expand_classifier(m, static_cast<int>(fresh.size()), opt);
  for (int id : fresh) m.instance_slots.push_back(id);
  check(static_cast<int>(m.instance_slots.size()) == m.num_instances,
        "register_instances: slot bookkeeping out of sync");
  return static_cast<int>(fresh.size());
}

/// Watches every parameter on the tape for the duration of a training
/// step; node handles are cleared on destruction (the tape dies with the
/// step, so stale handles must not survive it).
class ParameterBinding {
 public:
  ParameterBinding(Tape& tape, ModelState& m) : model_(m) {
    for (auto& [name, p] : m.params) tape.watch(p);
  }
  ~ParameterBinding() {
    for (auto& [name, p] : model_.params) p.node = -1;
  }
  ParameterBinding(const ParameterBinding&) = delete;
  ParameterBinding& operator=(const ParameterBinding&) = delete;

 private:
  ModelState& model_;
};

inline std::map<std::string, std::vector<double>> collect_grads(const Tape& tape,
                                                                const ModelState& m) {
  std::map<std::string, std::vector<double>> grads;
  for (const auto& [name, p] : m.params) grads[name] = tape.grad(p);
  return grads;
}

}  // namespace vinil
