#include <doctest.h>

#include <cmath>
#include <sstream>

#include "activeduel/enn.hpp"
#include "gradcheck.hpp"

using namespace activeduel;

namespace {

EnnConfig tiny(int heads = 3, int d = 4, int hidden = 8) {
  EnnConfig c;
  c.num_heads = heads;
  c.hidden_size = hidden;
  c.feature_dim = d;
  return c;
}

// Zero weights everywhere; the output bias alone sets the head's value.
Head constant_head(const EnnConfig& c, double value) {
  Head h;
  int in = c.feature_dim;
  for (int l = 0; l < c.layers_per_head; ++l) {
    h.push_back({Eigen::MatrixXd::Zero(c.hidden_size, in), Eigen::VectorXd::Zero(c.hidden_size)});
    in = c.hidden_size;
  }
  h.push_back({Eigen::MatrixXd::Zero(1, in), Eigen::VectorXd::Constant(1, value)});
  return h;
}

// Outputs x_0 for x_0 >= 0 by routing it through hidden unit 0.
Head passthrough_head(const EnnConfig& c) {
  Head h = constant_head(c, 0.0);
  h[0].weight(0, 0) = 1.0;
  for (int l = 1; l < c.layers_per_head; ++l) h[l].weight(0, 0) = 1.0;
  h.back().weight(0, 0) = 1.0;
  return h;
}

ReplayBuffer filled_buffer(std::size_t n, int d) {
  ReplayBuffer buf;
  Rng rng(3);
  for (std::size_t i = 0; i < n; ++i) {
    ReplayItem item;
    item.chosen.resize(d);
    item.rejected.resize(d);
    for (int k = 0; k < d; ++k) {
      item.chosen[k] = rng.normal() + 0.5;
      item.rejected[k] = rng.normal() - 0.5;
    }
    item.triplet.prompt_id = static_cast<int>(i);
    item.triplet.rejected_id = 1;
    buf.append(std::move(item));
  }
  return buf;
}

}  // namespace

TEST_CASE("config validation") {
  CHECK_NOTHROW(tiny().validate());
  auto c = tiny();
  c.num_heads = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny();
  c.feature_dim = 0;
  CHECK_THROWS_AS(EnnModel::init(c, 0), ConfigError);
  c = tiny();
  c.beta = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny();
  c.zeta_decay = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny();
  c.rho = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny();
  c.gamma = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("init: deterministic, anchored, correctly sized") {
  const auto c = tiny();
  const auto a = EnnModel::init(c, 9);
  const auto b = EnnModel::init(c, 9);
  const auto other = EnnModel::init(c, 10);
  CHECK(a == b);
  CHECK_FALSE(a == other);
  REQUIRE(a.heads().size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(parameter_count(a.heads()[k]) == 121);
    CHECK(squared_distance(a.heads()[k], a.anchors()[k]) == 0.0);
  }
  CHECK(flatten(a.heads()[0]) != flatten(a.heads()[1]));
  CHECK(a.iteration_count() == 0);
  CHECK(a.zeta() == 1.0);
}

TEST_CASE("flatten and unflatten are inverse") {
  const auto m = EnnModel::init(tiny(), 1);
  Head h = m.heads()[0];
  auto p = flatten(h);
  for (auto& v : p) v *= 2.0;
  unflatten(h, p);
  CHECK(flatten(h) == p);
  CHECK_THROWS_AS(unflatten(h, std::vector<double>(3)), Error);
}

TEST_CASE("predict: identical heads have zero spread") {
  const auto c = tiny(4);
  const auto base = EnnModel::init(c, 2).heads()[0];
  const auto m = EnnModel::from_heads(c, std::vector<Head>(4, base));
  const std::vector<double> x{0.3, -1.2, 0.8, 0.1};
  const auto e = m.predict(x);
  CHECK(e.std() == 0.0);
  CHECK(e.lower() == e.mean());
  CHECK(e.upper() == e.mean());
}

TEST_CASE("predict: crafted constant heads give mean 2 and std 1") {
  auto c = tiny(2);
  for (double beta : {1.0, 2.0}) {
    c.beta = beta;
    const auto m = EnnModel::from_heads(c, {constant_head(c, 1.0), constant_head(c, 3.0)});
    const std::vector<double> x{0.5, 0.5, 0.5, 0.5};
    const auto e = m.predict(x);
    CHECK(e.mean() == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(e.std() == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(e.lower() == doctest::Approx(2.0 - beta));
    CHECK(e.upper() == doctest::Approx(2.0 + beta));
  }
}

TEST_CASE("predict: dimension mismatch and batch agreement") {
  const auto m = EnnModel::init(tiny(), 4);
  CHECK_THROWS_AS(m.predict(std::vector<double>{1.0, 2.0}), Error);
  Eigen::MatrixXd X(4, 3);
  X << 0.1, -0.5, 2.0, 0.3, 0.0, -1.0, 1.2, 0.7, 0.4, -0.2, 0.9, 0.0;
  const auto batch = m.predict_batch(X);
  for (int j = 0; j < 3; ++j) {
    const std::vector<double> col(X.col(j).data(), X.col(j).data() + 4);
    const auto one = m.predict(col);
    CHECK(batch[j].mean() == doctest::Approx(one.mean()).epsilon(1e-12));
    CHECK(batch[j].std() == doctest::Approx(one.std()).epsilon(1e-12));
  }
}

TEST_CASE("beta scales the upper bound linearly") {
  auto c = tiny();
  const auto m1 = EnnModel::init(c, 6);
  c.beta = 2.0;
  const auto m2 = EnnModel::from_heads(c, m1.heads());
  const std::vector<double> x{0.2, 0.4, -0.6, 1.0};
  const auto e1 = m1.predict(x), e2 = m2.predict(x);
  CHECK(e2.upper() - e2.mean() == doctest::Approx(2.0 * (e1.upper() - e1.mean())).epsilon(1e-12));
}

TEST_CASE("loss: untrained constant-zero heads give ln 2") {
  const auto c = tiny();
  const auto m = EnnModel::from_heads(c, std::vector<Head>(3, constant_head(c, 0.0)));
  Rng rng(0);
  const auto batch = gradcheck::random_batch(4, 10, rng);
  const auto l = enn_loss(m, batch);
  CHECK(l.nll == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(l.centering == 0.0);
  CHECK(l.anchor == 0.0);
  CHECK(l.total == doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("loss: unit reward gap gives -log s(1) plus centering") {
  const auto c = tiny();
  const auto m = EnnModel::from_heads(c, std::vector<Head>(3, passthrough_head(c)));
  PairBatch b;
  b.chosen = Eigen::MatrixXd::Zero(4, 1);
  b.rejected = Eigen::MatrixXd::Zero(4, 1);
  b.chosen(0, 0) = 1.0;
  const auto l = enn_loss(m, b);
  CHECK(l.nll == doctest::Approx(0.3132616875182228).epsilon(1e-14));
  CHECK(l.centering == doctest::Approx(c.gamma * 1.0).epsilon(1e-14));
  CHECK(l.total == doctest::Approx(0.3132616875182228 + 0.01).epsilon(1e-14));
}

TEST_CASE("analytic gradient matches central differences") {
  auto c = tiny(3, 6, 8);
  c.gamma = 0.3;
  c.zeta0 = 0.5;
  c.zeta_decay = 0.9;
  c.learning_rate = 1e-2;
  c.train_steps = 5;
  auto m = EnnModel::init(c, 17);
  Rng rng(4);
  const auto batch = gradcheck::random_batch(6, 20, rng);
  enn_train_on(m, batch);  // move heads off their anchors so every term contributes
  const auto l = enn_loss(m, batch);
  CHECK(l.anchor > 0.0);
  CHECK(l.centering > 0.0);
  const auto r = gradcheck::run(m, batch);
  CHECK(r.parameters == 3 * parameter_count(m.heads()[0]));
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("with_heads keeps anchors and schedule") {
  auto c = tiny();
  c.train_steps = 2;
  auto m = EnnModel::init(c, 1);
  Rng rng(2);
  enn_train_on(m, gradcheck::random_batch(4, 8, rng));
  const auto fresh = EnnModel::init(c, 99).heads();
  const auto swapped = m.with_heads(fresh);
  CHECK(swapped.heads().size() == 3);
  CHECK(squared_distance(swapped.heads()[0], fresh[0]) == 0.0);
  CHECK(squared_distance(swapped.anchors()[0], m.anchors()[0]) == 0.0);
  CHECK(swapped.iteration_count() == m.iteration_count());
  CHECK_THROWS_AS(m.with_heads({}), ConfigError);
}

TEST_CASE("training: descent, anchors frozen, zeta decays once per call") {
  auto c = tiny(3, 4, 16);
  c.learning_rate = 1e-3;
  auto m = EnnModel::init(c, 5);
  const auto anchors = m.anchors();
  Rng rng(8);
  auto batch = gradcheck::random_batch(4, 64, rng);
  batch.chosen.array() += 0.5;
  const auto report = enn_train_on(m, batch);
  REQUIRE(report.step_losses.size() == 100);
  CHECK(report.step_losses.back() < report.step_losses.front());
  CHECK(report.zeta == 1.0);
  CHECK(m.iteration_count() == 1);
  CHECK(m.adam_steps() == 100);
  for (int t = 1; t < 6; ++t) enn_train_on(m, batch);
  CHECK(m.zeta() == c.zeta0 * std::pow(c.zeta_decay, 6.0));
  for (std::size_t k = 0; k < anchors.size(); ++k) {
    CHECK(flatten(m.anchors()[k]) == flatten(anchors[k]));
    CHECK(squared_distance(m.heads()[k], anchors[k]) > 0.0);
  }
}

TEST_CASE("centering term pulls pair sums toward zero") {
  auto c = tiny(3, 4, 8);
  c.gamma = 5.0;
  c.zeta0 = 0.0;
  c.learning_rate = 1e-2;
  c.train_steps = 300;
  auto m = EnnModel::from_heads(c, std::vector<Head>(3, constant_head(c, 2.0)));
  Rng rng(1);
  const auto batch = gradcheck::random_batch(4, 16, rng);
  const double before = enn_loss(m, batch).centering;
  enn_train_on(m, batch);
  CHECK(enn_loss(m, batch).centering < 0.05 * before);
}

TEST_CASE("replay_sample sizes and distinctness") {
  const auto buf = filled_buffer(500, 4);
  Rng rng(1);
  CHECK(replay_sample(buf, 4, 100, rng).size() == 400);
  CHECK(replay_sample(buf, 64, 1000, rng).size() == 500);
  CHECK(replay_sample(buf, 2, 1, rng).size() == 2);
  const auto idx = replay_sample(buf, 8, 10, rng);
  std::vector<bool> seen(500, false);
  for (auto i : idx) {
    REQUIRE(i < 500);
    REQUIRE_FALSE(seen[i]);
    seen[i] = true;
  }
  CHECK(replay_sample(ReplayBuffer{}, 64, 100, rng).empty());
  CHECK_THROWS_AS(replay_sample(buf, 0, 100, rng), ConfigError);
  CHECK_THROWS_AS(replay_sample(buf, 64, 0, rng), ConfigError);
}

TEST_CASE("enn_train on a replay buffer") {
  auto c = tiny(3, 4, 8);
  c.train_steps = 10;
  c.rho = 2;
  auto m = EnnModel::init(c, 3);
  const auto buf = filled_buffer(300, 4);
  Rng rng(5);
  const auto r = enn_train(m, buf, 64, rng);
  CHECK(r.train_size == 128);
  CHECK(r.step_losses.size() == 10);
  CHECK(m.iteration_count() == 1);

  auto again = EnnModel::init(c, 3);
  Rng rng2(5);
  enn_train(again, buf, 64, rng2);
  CHECK(again == m);

  auto empty = EnnModel::init(c, 3);
  Rng rng3(5);
  const auto none = enn_train(empty, ReplayBuffer{}, 64, rng3);
  CHECK(none.train_size == 0);
  CHECK(empty.iteration_count() == 1);
}

TEST_CASE("diverging weights surface as a numeric error") {
  const auto c = tiny();
  auto heads = std::vector<Head>(3, constant_head(c, 0.0));
  heads[1].back().bias(0) = std::numeric_limits<double>::infinity();
  const auto m = EnnModel::from_heads(c, heads);
  Rng rng(0);
  const auto batch = gradcheck::random_batch(4, 4, rng);
  CHECK_THROWS_AS(enn_loss(m, batch), NumericError);
}

TEST_CASE("checkpoint round-trips bitwise") {
  auto c = tiny();
  c.train_steps = 3;
  auto m = EnnModel::init(c, 12);
  Rng rng(1);
  enn_train_on(m, gradcheck::random_batch(4, 8, rng));
  std::stringstream ss;
  m.save(ss);
  const std::string bytes = ss.str();
  const auto back = EnnModel::load(ss);
  CHECK(back == m);
  CHECK(back.iteration_count() == 1);
  CHECK(back.adam_steps() == 3);
  std::stringstream again;
  back.save(again);
  CHECK(again.str() == bytes);

  std::stringstream junk("not a checkpoint at all");
  CHECK_THROWS_AS(EnnModel::load(junk), Error);
  std::stringstream cut(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(EnnModel::load(cut), Error);
}
