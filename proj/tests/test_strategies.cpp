#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "support/gradcheck.hpp"
#include "vinil/strategies.hpp"

using namespace vinil;
using testsupport::random_tensor;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig c;
  c.channels = 3;
  c.height = 12;
  c.width = 12;
  c.hidden = {16, 12};
  c.embed_dim = 8;
  c.projector.hidden = 16;
  c.projector.out = 12;
  return c;
}

DatasetConfig tiny_dataset() {
  DatasetConfig cfg;
  cfg.seed = 0;
  cfg.n_categories = 4;
  cfg.instances_per_category = 2;
  cfg.views_per_instance = 6;
  cfg.image_size = 12;
  return cfg;
}

Task make_task(int task_id, int n_samples, int image_size = 8) {
  Task task;
  task.task_id = task_id;
  Rng rng(900 + static_cast<uint64_t>(task_id));
  for (int i = 0; i < n_samples; ++i) {
    Sample s;
    s.image = random_tensor({3, image_size, image_size}, rng, 0.0, 1.0);
    s.category_id = task_id;
    s.instance_id = task_id * 1000 + i % 4;
    s.view_id = i;
    task.train.push_back(std::move(s));
  }
  return task;
}

ViewBatch batch_from(const std::vector<Sample>& samples, const ModelState& model,
                     Supervision sup, Rng& rng) {
  ViewBatch b;
  const int C = samples[0].image.shape[0], H = samples[0].image.shape[1],
            W = samples[0].image.shape[2];
  const int B = static_cast<int>(samples.size());
  b.x = Tensor({B, C, H, W});
  b.x_aug = Tensor({B, C, H, W});
  for (int i = 0; i < B; ++i) {
    std::copy(samples[(size_t)i].image.values.begin(), samples[(size_t)i].image.values.end(),
              b.x.values.begin() + (int64_t)i * C * H * W);
    Tensor aug = augment(samples[(size_t)i].image, rng);
    std::copy(aug.values.begin(), aug.values.end(),
              b.x_aug.values.begin() + (int64_t)i * C * H * W);
    if (sup == Supervision::label) b.labels.push_back(model.slot_of(samples[(size_t)i].instance_id));
  }
  return b;
}

double scalar_loss(const ModelState& model_in, const ViewBatch& batch,
                   const StrategyConfig& strategy, const SessionInputs& inputs) {
  ModelState model = model_in;
  Tape tape;
  return session_loss(tape, model, batch, strategy, inputs).values[0];
}

}  // namespace

TEST_CASE("ewc penalty is zero at the anchor") {
  ModelState m = make_model(tiny_config(), 3);
  EwCState state = ewc_update_after_session(m, {}, Supervision::self_sup);
  Tape tape;
  CHECK(ewc_penalty(tape, m, state).values[0] == 0.0);
}

TEST_CASE("ewc penalty squares a single drifted parameter") {
  ModelState m;
  m.params["p"] = Tensor({1}, {1.5});
  EwCState state;
  state.initialized = true;
  state.theta_prev["p"] = Tensor({1}, {1.0});
  state.omega["p"] = Tensor({1}, {1.0});
  Tape tape;
  CHECK(ewc_penalty(tape, m, state).values[0] == Catch::Approx(0.25).margin(1e-15));
}

TEST_CASE("ewc penalty matches the direct elementwise sum") {
  Rng rng(5);
  ModelState m;
  m.params["a"] = random_tensor({3, 4}, rng);
  m.params["b"] = random_tensor({5}, rng);
  EwCState state;
  state.initialized = true;
  double expect = 0.0;
  for (const auto& [name, p] : m.params) {
    Tensor prev = random_tensor(p.shape, rng);
    Tensor omega = random_tensor(p.shape, rng, 0.0, 2.0);
    for (size_t i = 0; i < p.values.size(); ++i) {
      const double d = p.values[i] - prev.values[i];
      expect += omega.values[i] * d * d;
    }
    state.theta_prev[name] = std::move(prev);
    state.omega[name] = std::move(omega);
  }
  Tape tape;
  CHECK(ewc_penalty(tape, m, state).values[0] == Catch::Approx(expect).epsilon(1e-12));
}

TEST_CASE("ewc penalty before any snapshot is defined as zero") {
  ModelState m = make_model(tiny_config(), 4);
  EwCState state;
  Tape tape;
  CHECK(ewc_penalty(tape, m, state).values[0] == 0.0);
}

TEST_CASE("ewc penalty ignores freshly expanded classifier slots") {
  ModelState m = make_model(tiny_config(), 5);
  register_instances(m, {1, 2});
  EwCState state = ewc_update_after_session(m, {}, Supervision::self_sup);
  register_instances(m, {3, 4, 5});
  Tape t1;
  CHECK(ewc_penalty(t1, m, state).values[0] == 0.0);  // new slots carry no anchor

  // Drift one old slot: the penalty sees exactly that drift.
  m.params.at("classifier.w").at(0, 0) += 0.5;
  Tape t2;
  CHECK(ewc_penalty(t2, m, state).values[0] == Catch::Approx(0.25).margin(1e-12));
}

TEST_CASE("ewc penalty rejects genuinely mismatched shapes") {
  ModelState m;
  m.params["p"] = Tensor({2, 2});
  EwCState state;
  state.initialized = true;
  state.theta_prev["p"] = Tensor({3, 2});
  state.omega["p"] = Tensor({3, 2});
  Tape tape;
  CHECK_THROWS_AS(ewc_penalty(tape, m, state), Error);
}

TEST_CASE("self-supervised importance is the identity") {
  ModelState m = make_model(tiny_config(), 6);
  EwCState state = ewc_update_after_session(m, {}, Supervision::self_sup);
  for (const auto& [name, omega] : state.omega)
    for (double v : omega.values) CHECK(v == 1.0);
  // Anchor snapshots the parameters bit-exactly.
  for (const auto& [name, p] : m.params) CHECK(state.theta_prev.at(name).values == p.values);
}

TEST_CASE("label importance is zero for a single-class degenerate model") {
  ModelState m = make_model(tiny_config(), 7);
  register_instances(m, {42});  // one class: log p(c|x) == 0 identically
  Task task = make_task(0, 3, 12);
  EwCState state = ewc_update_after_session(m, task.train, Supervision::label);
  for (const auto& [name, omega] : state.omega)
    for (double v : omega.values) CHECK(v == 0.0);
}

TEST_CASE("label importance with one sample is that sample's squared gradient") {
  ModelState m = make_model(tiny_config(), 8);
  register_instances(m, {1, 2, 3});
  Task task = make_task(0, 1, 12);
  EwCState state = ewc_update_after_session(m, task.train, Supervision::label);

  // Recompute the same gradient by hand.
  Tape tape;
  ParameterBinding binding(tape, m);
  const Sample& s = task.train[0];
  Tensor batch = tape.reshape(s.image, {1, 3, 12, 12});
  Tensor logp = tape.log_softmax(classify(tape, m, encode(tape, m, batch)));
  int argmax = 0;
  for (int j = 1; j < logp.shape[1]; ++j)
    if (logp.at(0, j) > logp.at(0, argmax)) argmax = j;
  tape.backward(tape.nll(logp, {argmax}));
  for (const auto& [name, omega] : state.omega) {
    const std::vector<double>& g = tape.grad(m.params.at(name));
    for (size_t i = 0; i < g.size(); ++i)
      CHECK(omega.values[i] == Catch::Approx(g[i] * g[i]).margin(1e-15));
  }
}

TEST_CASE("label importance requires task data") {
  ModelState m = make_model(tiny_config(), 9);
  register_instances(m, {1});
  CHECK_THROWS_AS(ewc_update_after_session(m, {}, Supervision::label), Error);
}

TEST_CASE("buffer stores round(fraction * task size) items") {
  MemoryBuffer buffer;
  buffer.supervision = Supervision::label;
  Task task = make_task(0, 250);
  buffer_update(buffer, task, 0.1, 0);
  CHECK(buffer.items.size() == 25);
  for (const auto& item : buffer.items) CHECK(item.label >= 0);
}

TEST_CASE("fraction 1.0 stores the whole task") {
  MemoryBuffer buffer;
  Task task = make_task(2, 17);
  buffer_update(buffer, task, 1.0, 0);
  CHECK(buffer.items.size() == 17);
  for (const auto& item : buffer.items) {
    CHECK(item.task_id == 2);
    CHECK(item.label == -1);  // self supervision stores inputs only
  }
}

TEST_CASE("buffer updates are deterministic in the seed") {
  Task task = make_task(1, 40);
  MemoryBuffer a, b, c;
  buffer_update(a, task, 0.25, 7);
  buffer_update(b, task, 0.25, 7);
  buffer_update(c, task, 0.25, 8);
  REQUIRE(a.items.size() == b.items.size());
  bool same_ab = true, same_ac = a.items.size() == c.items.size();
  for (size_t i = 0; i < a.items.size(); ++i) {
    same_ab = same_ab && a.items[i].image.values == b.items[i].image.values;
    if (same_ac) same_ac = a.items[i].image.values == c.items[i].image.values;
  }
  CHECK(same_ab);
  CHECK_FALSE(same_ac);
}

TEST_CASE("empty task leaves the buffer unchanged") {
  MemoryBuffer buffer;
  Task task;
  task.task_id = 3;
  buffer_update(buffer, task, 0.1, 0);
  CHECK(buffer.items.empty());
}

TEST_CASE("buffer holds provenance from every completed task") {
  MemoryBuffer buffer;
  for (int t = 0; t < 5; ++t) buffer_update(buffer, make_task(t, 50), 0.1, 0);
  CHECK(buffer.items.size() == 25);
  std::set<int> tasks;
  for (const auto& item : buffer.items) tasks.insert(item.task_id);
  CHECK(tasks == std::set<int>{0, 1, 2, 3, 4});
}

TEST_CASE("replay batch repeats a single stored item") {
  MemoryBuffer buffer;
  buffer_update(buffer, make_task(0, 1), 1.0, 0);
  Rng rng(4);
  MemoryBatch batch = replay_batch(buffer, 4, rng);
  REQUIRE(batch.items.size() == 4);
  for (const MemoryItem* item : batch.items) CHECK(item == &buffer.items[0]);
}

TEST_CASE("replay batch within buffer size has no duplicates") {
  MemoryBuffer buffer;
  buffer_update(buffer, make_task(0, 20), 1.0, 0);
  Rng rng(5);
  MemoryBatch batch = replay_batch(buffer, 12, rng);
  std::set<const MemoryItem*> unique(batch.items.begin(), batch.items.end());
  CHECK(unique.size() == 12);
}

TEST_CASE("replay batch carries labels only under label supervision") {
  MemoryBuffer labelled;
  labelled.supervision = Supervision::label;
  buffer_update(labelled, make_task(0, 10), 1.0, 0);
  MemoryBuffer plain;
  buffer_update(plain, make_task(0, 10), 1.0, 0);
  Rng rng(6);
  CHECK(replay_batch(labelled, 4, rng).labels.size() == 4);
  CHECK(replay_batch(plain, 4, rng).labels.empty());
}

TEST_CASE("replay batch on an empty buffer is an error") {
  MemoryBuffer buffer;
  Rng rng(7);
  CHECK_THROWS_AS(replay_batch(buffer, 4, rng), Error);
}

TEST_CASE("fine-tuning label loss is plain cross-entropy") {
  ModelState m = make_model(tiny_config(), 10);
  Task task = make_task(0, 6, 12);
  std::vector<int> ids;
  for (const auto& s : task.train) ids.push_back(s.instance_id);
  register_instances(m, ids);
  Rng rng(10);
  ViewBatch batch = batch_from(task.train, m, Supervision::label, rng);

  StrategyConfig ft;
  ft.method = Method::finetune;
  ft.supervision = Supervision::label;
  const double loss = scalar_loss(m, batch, ft, {});

  Tape tape;
  Tensor logits = classify(tape, m, encode(tape, m, batch.x_aug));
  const double ce = cross_entropy(tape, logits, batch.labels).values[0];
  CHECK(loss == Catch::Approx(ce).epsilon(1e-12));
}

TEST_CASE("label strategies reject unlabeled batches") {
  ModelState m = make_model(tiny_config(), 11);
  register_instances(m, {1});
  Task task = make_task(0, 4, 12);
  Rng rng(11);
  ViewBatch batch = batch_from(task.train, m, Supervision::self_sup, rng);  // no labels
  StrategyConfig ft;
  ft.method = Method::finetune;
  ft.supervision = Supervision::label;
  ModelState copy = m;
  Tape tape;
  CHECK_THROWS_AS(session_loss(tape, copy, batch, ft, {}), Error);
}

TEST_CASE("ewc at session one reduces to fine-tuning") {
  ModelState m = make_model(tiny_config(), 12);
  Task task = make_task(0, 5, 12);
  Rng rng(12);
  ViewBatch batch = batch_from(task.train, m, Supervision::self_sup, rng);

  StrategyConfig ewc;
  ewc.method = Method::ewc;
  ewc.supervision = Supervision::self_sup;
  StrategyConfig ft = ewc;
  ft.method = Method::finetune;

  EwCState empty;
  SessionInputs inputs;
  inputs.ewc = &empty;
  CHECK(scalar_loss(m, batch, ewc, inputs) == scalar_loss(m, batch, ft, {}));
}

TEST_CASE("replay without memory reduces to fine-tuning") {
  ModelState m = make_model(tiny_config(), 13);
  Task task = make_task(0, 5, 12);
  Rng rng(13);
  ViewBatch batch = batch_from(task.train, m, Supervision::self_sup, rng);
  StrategyConfig replay;
  replay.method = Method::replay;
  replay.supervision = Supervision::self_sup;
  StrategyConfig ft = replay;
  ft.method = Method::finetune;
  CHECK(scalar_loss(m, batch, replay, {}) == scalar_loss(m, batch, ft, {}));
}

TEST_CASE("replay with the current batch as memory equals plain BT") {
  ModelState m = make_model(tiny_config(), 14);
  Task task = make_task(0, 5, 12);
  Rng rng(14);
  ViewBatch batch = batch_from(task.train, m, Supervision::self_sup, rng);
  StrategyConfig replay;
  replay.method = Method::replay;
  replay.supervision = Supervision::self_sup;
  SessionInputs inputs;
  inputs.memory = &batch;
  StrategyConfig ft = replay;
  ft.method = Method::finetune;
  CHECK(scalar_loss(m, batch, replay, inputs) ==
        Catch::Approx(scalar_loss(m, batch, ft, {})).epsilon(1e-12));
}

TEST_CASE("replay mixes current and memory terms with w_c") {
  ModelState m = make_model(tiny_config(), 15);
  register_instances(m, {0, 1, 2, 3});
  Task cur = make_task(0, 5, 12);
  Task mem = make_task(0, 4, 12);
  Rng rng(15);
  ViewBatch batch = batch_from(cur.train, m, Supervision::label, rng);
  ViewBatch memory = batch_from(mem.train, m, Supervision::label, rng);
  StrategyConfig replay;
  replay.method = Method::replay;
  replay.supervision = Supervision::label;
  SessionInputs inputs;
  inputs.memory = &memory;
  const double mixed = scalar_loss(m, batch, replay, inputs);

  StrategyConfig ft = replay;
  ft.method = Method::finetune;
  const double cur_ce = scalar_loss(m, batch, ft, {});
  const double mem_ce = scalar_loss(m, memory, ft, {});
  CHECK(mixed == Catch::Approx(0.7 * cur_ce + 0.3 * mem_ce).epsilon(1e-12));
}

TEST_CASE("ewc drift after session two stays below fine-tuning drift") {
  auto run = [](Method method) {
    DatasetConfig dc = tiny_dataset();
    auto samples = generate_dataset(dc);
    TaskStream stream = split_protocol(samples, 2, 2, 1, 0);
    ModelState model = make_model(tiny_config(), 0);
    StrategyConfig strategy;
    strategy.method = method;
    strategy.supervision = Supervision::self_sup;
    strategy.hyper.batch_size = 8;
    strategy.hyper.epochs_per_session = 3;

    OptimizerState opt;
    opt.momentum = 0.9;
    opt.base_lr = 0.01;
    opt.total_epochs = strategy.hyper.epochs_per_session;
    EwCState ewc;
    std::map<std::string, Tensor> after_s1;
    Rng rng(77);

    for (int session = 0; session < 2; ++session) {
      for (int epoch = 0; epoch < strategy.hyper.epochs_per_session; ++epoch) {
        opt.epoch = epoch;
        const Task& task = stream.tasks[(size_t)session];
        for (size_t start = 0; start < task.train.size();
             start += (size_t)strategy.hyper.batch_size) {
          const size_t stop = std::min(task.train.size(), start + (size_t)strategy.hyper.batch_size);
          std::vector<Sample> chunk(task.train.begin() + (int64_t)start,
                                    task.train.begin() + (int64_t)stop);
          ViewBatch batch = batch_from(chunk, model, Supervision::self_sup, rng);
          SessionInputs inputs;
          inputs.ewc = &ewc;
          Tape tape;
          {
            ParameterBinding binding(tape, model);
            Tensor loss = session_loss(tape, model, batch, strategy, inputs);
            tape.backward(loss);
            auto grads = collect_grads(tape, model);
            sgd_momentum_step(model.params, grads, opt);
          }
        }
      }
      if (session == 0) {
        after_s1 = model.params;
        if (method == Method::ewc)
          ewc = ewc_update_after_session(model, stream.tasks[0].train, Supervision::self_sup);
      }
    }
    double drift = 0.0;
    for (const auto& [name, p] : model.params)
      for (size_t i = 0; i < p.values.size(); ++i) {
        const double d = p.values[i] - after_s1.at(name).values[i];
        drift += d * d;
      }
    return std::sqrt(drift);
  };
  const double ewc_drift = run(Method::ewc);
  const double ft_drift = run(Method::finetune);
  INFO("ewc drift " << ewc_drift << " vs ft drift " << ft_drift);
  CHECK(ewc_drift <= ft_drift);
}
