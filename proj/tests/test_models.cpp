#include <catch2/catch_amalgamated.hpp>

#include "support/gradcheck.hpp"
#include "vinil/model.hpp"

using namespace vinil;
using testsupport::random_tensor;

namespace {

EncoderConfig mlp_config() {
  EncoderConfig c;
  c.kind = EncoderKind::mlp;
  c.channels = 3;
  c.height = 8;
  c.width = 8;
  c.hidden = {16, 12};
  c.embed_dim = 6;
  c.projector.hidden = 10;
  c.projector.out = 8;
  return c;
}

Tensor encode_now(const ModelState& m, const Tensor& batch) {
  Tape tape;
  return encode(tape, m, batch);
}

}  // namespace

TEST_CASE("zero image through zero-initialized encoder gives zero embedding") {
  ModelState m = make_model(mlp_config(), 0);
  for (auto& [name, p] : m.params)
    for (auto& v : p.values) v = 0.0;
  Tensor batch({2, 3, 8, 8});
  Tensor h = encode_now(m, batch);
  for (double v : h.values) CHECK(v == 0.0);
}

TEST_CASE("identical images produce identical embeddings") {
  ModelState m = make_model(mlp_config(), 1);
  Rng rng(5);
  Tensor one = random_tensor({3, 8, 8}, rng, 0.0, 1.0);
  Tensor batch({2, 3, 8, 8});
  std::copy(one.values.begin(), one.values.end(), batch.values.begin());
  std::copy(one.values.begin(), one.values.end(), batch.values.begin() + one.size());
  Tensor h = encode_now(m, batch);
  for (int d = 0; d < 6; ++d) CHECK(h.at(0, d) == h.at(1, d));
}

TEST_CASE("encode output shape is (B, D) for both encoder kinds") {
  ModelState m = make_model(mlp_config(), 2);
  Rng rng(6);
  Tensor batch = random_tensor({5, 3, 8, 8}, rng, 0.0, 1.0);
  CHECK(encode_now(m, batch).shape == std::vector<int>{5, 6});

  EncoderConfig conv = mlp_config();
  conv.kind = EncoderKind::smallconv;
  conv.hidden = {4, 8};
  ModelState mc = make_model(conv, 3);
  CHECK(encode_now(mc, batch).shape == std::vector<int>{5, 6});
}

TEST_CASE("encode rejects mismatched batch shapes") {
  ModelState m = make_model(mlp_config(), 2);
  Tensor bad({2, 3, 4, 4});
  Tape tape;
  CHECK_THROWS_AS(encode(tape, m, bad), Error);
}

TEST_CASE("identity projector copies nonnegative embeddings") {
  EncoderConfig c = mlp_config();
  c.projector.hidden = c.embed_dim;
  c.projector.out = c.embed_dim;
  ModelState m = make_model(c, 4);
  const int D = c.embed_dim;
  for (const char* name : {"projector.fc0", "projector.fc1"}) {
    Tensor w({D, D});
    for (int i = 0; i < D; ++i) w.at(i, i) = 1.0;
    m.params[str(name, ".w")] = w;
    m.params[str(name, ".b")] = Tensor({D});
  }
  Rng rng(7);
  Tensor h = random_tensor({3, D}, rng, 0.0, 1.0);
  Tape tape;
  Tensor z = project(tape, m, h);
  REQUIRE(z.shape == h.shape);
  for (size_t i = 0; i < z.values.size(); ++i) CHECK(z.values[i] == h.values[i]);
}

TEST_CASE("projector output is (B, P) and finite") {
  ModelState m = make_model(mlp_config(), 8);
  Rng rng(9);
  Tensor h = random_tensor({7, 6}, rng);
  Tape tape;
  Tensor z = project(tape, m, h);
  CHECK(z.shape == std::vector<int>{7, 8});
  for (double v : z.values) CHECK(std::isfinite(v));
}

TEST_CASE("project errors when the projector is disabled") {
  EncoderConfig c = mlp_config();
  c.projector.enabled = false;
  ModelState m = make_model(c, 1);
  Rng rng(2);
  Tensor h = random_tensor({2, 6}, rng);
  Tape tape;
  CHECK_THROWS_AS(project(tape, m, h), Error);
}

TEST_CASE("classify on an empty classifier is an error") {
  ModelState m = make_model(mlp_config(), 5);
  Rng rng(8);
  Tensor h = random_tensor({2, 6}, rng);
  Tape tape;
  CHECK_THROWS_AS(classify(tape, m, h), Error);
}

TEST_CASE("zero classifier weights give uniform (all-zero) logits") {
  ModelState m = make_model(mlp_config(), 6);
  expand_classifier(m, 4);
  for (auto& v : m.params.at("classifier.w").values) v = 0.0;
  for (auto& v : m.params.at("classifier.b").values) v = 0.0;
  Rng rng(9);
  Tensor h = random_tensor({3, 6}, rng);
  Tape tape;
  Tensor logits = classify(tape, m, h);
  CHECK(logits.shape == std::vector<int>{3, 4});
  for (double v : logits.values) CHECK(v == 0.0);
}

TEST_CASE("classifier width tracks expansion") {
  ModelState m = make_model(mlp_config(), 7);
  expand_classifier(m, 10);
  CHECK(m.num_instances == 10);
  CHECK(m.params.at("classifier.w").shape == std::vector<int>{6, 10});
  Rng rng(10);
  Tensor h = random_tensor({2, 6}, rng);
  Tape tape;
  CHECK(classify(tape, m, h).shape == std::vector<int>{2, 10});
}

TEST_CASE("distinct embeddings give distinct logits under random weights") {
  ModelState m = make_model(mlp_config(), 11);
  expand_classifier(m, 5);
  Rng rng(11);
  Tensor h = random_tensor({2, 6}, rng);
  Tape tape;
  Tensor logits = classify(tape, m, h);
  bool any_diff = false;
  for (int j = 0; j < 5; ++j) any_diff = any_diff || logits.at(0, j) != logits.at(1, j);
  CHECK(any_diff);
}

TEST_CASE("expansion preserves old logits bit-exactly") {
  ModelState m = make_model(mlp_config(), 12);
  expand_classifier(m, 3);
  Rng rng(12);
  Tensor h = random_tensor({4, 6}, rng);
  Tape t1;
  Tensor before = classify(t1, m, h);
  expand_classifier(m, 2);
  Tape t2;
  Tensor after = classify(t2, m, h);
  REQUIRE(after.shape == std::vector<int>{4, 5});
  for (int b = 0; b < 4; ++b)
    for (int j = 0; j < 3; ++j) CHECK(after.at(b, j) == before.at(b, j));
}

TEST_CASE("two expansions match one expansion in width") {
  ModelState a = make_model(mlp_config(), 13);
  expand_classifier(a, 2);
  expand_classifier(a, 3);
  ModelState b = make_model(mlp_config(), 13);
  expand_classifier(b, 5);
  CHECK(a.num_instances == b.num_instances);
  CHECK(a.params.at("classifier.w").shape == b.params.at("classifier.w").shape);
}

TEST_CASE("expansion rejects nonpositive n_new") {
  ModelState m = make_model(mlp_config(), 14);
  CHECK_THROWS_AS(expand_classifier(m, 0), Error);
  CHECK_THROWS_AS(expand_classifier(m, -2), Error);
}

TEST_CASE("expansion zeroes optimizer velocity for new slots only") {
  ModelState m = make_model(mlp_config(), 15);
  expand_classifier(m, 2);
  OptimizerState opt;
  opt.velocity["classifier.w"] = std::vector<double>(12, 3.5);
  opt.velocity["classifier.b"] = std::vector<double>(2, 1.5);
  expand_classifier(m, 1, &opt);
  const auto& vw = opt.velocity.at("classifier.w");
  REQUIRE(vw.size() == 18);
  for (int d = 0; d < 6; ++d) {
    CHECK(vw[(size_t)d * 3 + 0] == 3.5);
    CHECK(vw[(size_t)d * 3 + 1] == 3.5);
    CHECK(vw[(size_t)d * 3 + 2] == 0.0);
  }
  CHECK(opt.velocity.at("classifier.b") == std::vector<double>{1.5, 1.5, 0.0});
}

TEST_CASE("embeddings are independent of classifier width") {
  ModelState m = make_model(mlp_config(), 16);
  Rng rng(16);
  Tensor batch = random_tensor({3, 3, 8, 8}, rng, 0.0, 1.0);
  Tensor before = encode_now(m, batch);
  expand_classifier(m, 7);
  Tensor after = encode_now(m, batch);
  CHECK(before.values == after.values);
}

TEST_CASE("register_instances expands once per unseen id") {
  ModelState m = make_model(mlp_config(), 17);
  CHECK(register_instances(m, {4, 9, 4}) == 2);
  CHECK(m.num_instances == 2);
  CHECK(register_instances(m, {9, 11}) == 1);
  CHECK(m.num_instances == 3);
  CHECK(m.slot_of(4) == 0);
  CHECK(m.slot_of(9) == 1);
  CHECK(m.slot_of(11) == 2);
  CHECK(m.slot_of(5) == -1);
}

TEST_CASE("training step through encoder+projector passes gradcheck") {
  EncoderConfig c = mlp_config();
  c.hidden = {5};
  c.embed_dim = 4;
  c.projector.hidden = 4;
  c.projector.out = 3;
  ModelState m = make_model(c, 18);
  Rng rng(18);
  Tensor batch = random_tensor({3, 3, 8, 8}, rng, 0.0, 1.0);

  std::map<std::string, std::vector<double>> analytic;
  {
    Tape tape;
    ParameterBinding binding(tape, m);
    Tensor z = project(tape, m, encode(tape, m, batch));
    Tensor loss = tape.mean(tape.mul(z, z));
    tape.backward(loss);
    analytic = collect_grads(tape, m);
  }

  // Finite differences over a few sampled parameter coordinates.
  auto loss_value = [&](const ModelState& model) {
    Tape t;
    Tensor zz = project(t, model, encode(t, model, batch));
    Tensor l = t.mean(t.mul(zz, zz));
    return l.values[0];
  };
  const double h = 1e-5;
  for (const auto& [name, p] : m.params) {
    for (size_t i = 0; i < std::min<size_t>(p.values.size(), 4); ++i) {
      ModelState probe = m;
      probe.params.at(name).values[i] = p.values[i] + h;
      const double up = loss_value(probe);
      probe.params.at(name).values[i] = p.values[i] - h;
      const double down = loss_value(probe);
      const double numeric = (up - down) / (2 * h);
      const double a = analytic.at(name)[i];
      INFO(name << "[" << i << "]");
      CHECK(std::abs(a - numeric) <= 1e-4 * std::max({1.0, std::abs(a), std::abs(numeric)}));
    }
  }
}
