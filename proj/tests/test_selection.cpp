#include <doctest.h>

#include <cmath>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "activeduel/selection.hpp"
#include "reference.hpp"

using namespace activeduel;

namespace {

CandidateSet make_set(std::size_t m) {
  CandidateSet s;
  for (std::size_t j = 0; j < m; ++j) {
    Candidate c;
    c.candidate_id = static_cast<int>(j);
    c.generator_id = static_cast<int>(j);
    s.candidates.push_back(c);
  }
  return s;
}

class FixedJudge final : public JudgeHandle {
 public:
  explicit FixedJudge(std::vector<double> scores) : scores_(std::move(scores)) {}
  double overall(std::size_t j) override {
    ++queries;
    return scores_.at(j);
  }
  int queries = 0;

 private:
  std::vector<double> scores_;
};

std::vector<RewardEstimate> estimates(const std::vector<double>& means, const std::vector<double>& stds,
                                      double beta) {
  std::vector<RewardEstimate> out;
  for (std::size_t j = 0; j < means.size(); ++j) out.push_back(RewardEstimate::from_moments(means[j], stds[j], beta));
  return out;
}

struct Fixture {
  CandidateSet set;
  std::vector<RewardEstimate> est;
  Rng rng{0};
  SelectionContext ctx;

  Fixture(const std::vector<double>& means, const std::vector<double>& stds, double beta, std::uint64_t seed = 0)
      : set(make_set(means.size())), est(estimates(means, stds, beta)), rng(seed) {
    ctx.candidates = &set;
    ctx.estimates = est;
    ctx.rng = &rng;
  }
};

std::pair<std::size_t, std::size_t> as_pair(const SelectedPair& p) { return {p.first, p.second}; }

}  // namespace

TEST_CASE("method registry round-trips names") {
  for (auto m : kAllMethods) {
    auto parsed = parse_method(method_name(m));
    REQUIRE(parsed.has_value());
    CHECK(*parsed == m);
  }
  CHECK_FALSE(parse_method("bogus").has_value());
  CHECK(method_list().find("deltaucb") != std::string::npos);
}

TEST_CASE("random: m=2 always gives the only pair") {
  auto set = make_set(2);
  Rng rng(3);
  SelectionContext ctx;
  ctx.candidates = &set;
  ctx.rng = &rng;
  for (int i = 0; i < 1000; ++i) {
    auto p = select_random(ctx);
    CHECK(std::set<std::size_t>{p.first, p.second} == std::set<std::size_t>{0, 1});
    CHECK(p.annotations_spent == 0);
  }
}

TEST_CASE("random: unordered pairs are uniform and orientation is fair") {
  auto set = make_set(4);
  Rng rng(17);
  SelectionContext ctx;
  ctx.candidates = &set;
  ctx.rng = &rng;
  std::map<std::pair<std::size_t, std::size_t>, long> counts;
  long forward = 0;
  const long n = 40000;
  for (long i = 0; i < n; ++i) {
    auto p = select_random(ctx);
    REQUIRE(p.first != p.second);
    counts[{std::min(p.first, p.second), std::max(p.first, p.second)}]++;
    forward += p.first < p.second;
  }
  REQUIRE(counts.size() == 6);
  std::vector<long> obs;
  for (auto& [k, v] : counts) obs.push_back(v);
  CHECK(ref::chi_square_p(obs, std::vector<double>(6, 1.0 / 6)) > 0.01);
  CHECK(ref::binomial_two_sided_p(forward, n, 0.5) > 0.01);
}

TEST_CASE("random: too few candidates is an error") {
  auto set = make_set(1);
  Rng rng(0);
  SelectionContext ctx;
  ctx.candidates = &set;
  ctx.rng = &rng;
  CHECK_THROWS_AS(select_random(ctx), Error);
}

TEST_CASE("maxmin examples") {
  auto set = make_set(3);
  FixedJudge judge({3.1, 4.9, 1.2});
  SelectionContext ctx;
  ctx.candidates = &set;
  ctx.judge = &judge;
  auto p = select_maxmin(ctx);
  CHECK(as_pair(p) == std::pair<std::size_t, std::size_t>{1, 2});
  CHECK(p.annotations_spent == 3);
  CHECK(judge.queries == 3);

  FixedJudge flat({2.0, 2.0, 2.0, 2.0});
  auto set4 = make_set(4);
  ctx.candidates = &set4;
  ctx.judge = &flat;
  CHECK(as_pair(select_maxmin(ctx)) == std::pair<std::size_t, std::size_t>{0, 1});
}

TEST_CASE("maxmin matches brute force on random score vectors") {
  std::mt19937_64 gen(101);
  std::uniform_real_distribution<double> score(1.0, 5.0);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t m = 2 + i % 7;
    std::vector<double> s(m);
    for (auto& v : s) v = score(gen);
    auto set = make_set(m);
    FixedJudge judge(s);
    SelectionContext ctx;
    ctx.candidates = &set;
    ctx.judge = &judge;
    REQUIRE(as_pair(select_maxmin(ctx)) == ref::maxmin(s));
  }
}

TEST_CASE("ultrafeedback: m=4 picks the global best first") {
  auto set = make_set(4);
  FixedJudge judge({2.0, 3.5, 4.4, 1.0});
  Rng rng(8);
  SelectionContext ctx;
  ctx.candidates = &set;
  ctx.judge = &judge;
  ctx.rng = &rng;
  for (int i = 0; i < 200; ++i) {
    auto p = select_ultrafeedback(ctx);
    CHECK(p.first == 2);
    CHECK(p.second != 2);
    CHECK(p.annotations_spent == 4);
  }
}

TEST_CASE("ultrafeedback: second pick is uniform over the non-best three") {
  auto set = make_set(4);
  FixedJudge judge({2.0, 3.5, 4.4, 1.0});
  Rng rng(9);
  SelectionContext ctx;
  ctx.candidates = &set;
  ctx.judge = &judge;
  ctx.rng = &rng;
  std::map<std::size_t, long> counts;
  for (int i = 0; i < 30000; ++i) counts[select_ultrafeedback(ctx).second]++;
  REQUIRE(counts.size() == 3);
  std::vector<long> obs;
  for (auto& [k, v] : counts) obs.push_back(v);
  CHECK(ref::chi_square_p(obs, std::vector<double>(3, 1.0 / 3)) > 0.01);
}

TEST_CASE("ultrafeedback: chosen beats the other sampled scores; needs four candidates") {
  std::mt19937_64 gen(4);
  std::uniform_real_distribution<double> score(1.0, 5.0);
  for (int i = 0; i < 500; ++i) {
    std::vector<double> s(10);
    for (auto& v : s) v = score(gen);
    auto set = make_set(10);
    FixedJudge judge(s);
    Rng rng(i);
    SelectionContext ctx;
    ctx.candidates = &set;
    ctx.judge = &judge;
    ctx.rng = &rng;
    auto p = select_ultrafeedback(ctx);
    CHECK(s[p.first] >= s[p.second]);
    CHECK(judge.queries == 4);
  }
  auto small = make_set(3);
  FixedJudge judge({1, 2, 3});
  Rng rng(0);
  SelectionContext ctx;
  ctx.candidates = &small;
  ctx.judge = &judge;
  ctx.rng = &rng;
  CHECK_THROWS_AS(select_ultrafeedback(ctx), Error);
}

TEST_CASE("deltaqwen picks the designated generators in order") {
  auto set = make_set(10);
  SelectionContext ctx;
  ctx.candidates = &set;
  ctx.strong_generator = 7;
  ctx.weak_generator = 2;
  auto p = select_deltaqwen(ctx);
  CHECK(as_pair(p) == std::pair<std::size_t, std::size_t>{7, 2});
  CHECK(p.annotations_spent == 0);

  set.candidates[3].generator_id = 7;
  CHECK_THROWS_AS(select_deltaqwen(ctx), Error);
  set.candidates[3].generator_id = 3;
  ctx.weak_generator = 42;
  CHECK_THROWS_AS(select_deltaqwen(ctx), Error);
}

TEST_CASE("infomax examples") {
  Fixture zero({0.3, 1.0, -2.0}, {0, 0, 0}, 1.0);
  CHECK(as_pair(select_infomax(zero.ctx)) == std::pair<std::size_t, std::size_t>{0, 1});

  Fixture f({0, 0, 0}, {0.5, 0.1, 0.1}, 1.0);
  auto p = select_infomax(f.ctx);
  CHECK((p.first == 0 || p.second == 0));
  CHECK(p.annotations_spent == 0);
}

TEST_CASE("deltaucb examples") {
  Fixture zero({0.5, 2.0, -1.0, 1.0}, {0, 0, 0, 0}, 1.0);
  CHECK(as_pair(select_deltaucb(zero.ctx)) == std::pair<std::size_t, std::size_t>{1, 2});

  Fixture tie({0, 0}, {1.0, 0.2}, 1.0);
  CHECK(as_pair(select_deltaucb(tie.ctx)) == std::pair<std::size_t, std::size_t>{0, 1});
}

TEST_CASE("maxminlcb worked example") {
  for (double beta : {0.5, 1.0, 3.0}) {
    Fixture f({3, 1, 2}, {0, 0, 0}, beta);
    f.ctx.epsilon = 0.0;
    // candidate 0 has the best worst case, attained against the runner-up 2
    CHECK(as_pair(select_maxminlcb(f.ctx)) == std::pair<std::size_t, std::size_t>{0, 2});
  }
}

TEST_CASE("deterministic methods agree with exhaustive scans on random instances") {
  std::mt19937_64 gen(2024);
  std::uniform_real_distribution<double> mean(-3.0, 3.0), sd(0.0, 1.5), beta(0.5, 2.0);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t m = 2 + i % 7;
    const double b = beta(gen);
    std::vector<double> means(m), stds(m);
    std::vector<ref::Interval> iv(m);
    for (std::size_t j = 0; j < m; ++j) {
      means[j] = mean(gen);
      stds[j] = sd(gen);
      iv[j] = {means[j], stds[j], b};
    }
    Fixture f(means, stds, b, i);
    f.ctx.epsilon = 0.0;
    REQUIRE(as_pair(select_infomax(f.ctx)) == ref::infomax(iv));
    REQUIRE(as_pair(select_deltaucb(f.ctx)) == ref::deltaucb(iv));
    REQUIRE(as_pair(select_maxminlcb(f.ctx)) == ref::maxminlcb(iv));
  }
}

TEST_CASE("maxminlcb: identical estimates give uniform first and opponent") {
  Fixture f({0.4, 0.4, 0.4, 0.4}, {0.2, 0.2, 0.2, 0.2}, 1.0, 55);
  std::vector<long> first(4, 0);
  std::map<std::pair<std::size_t, std::size_t>, long> pairs;
  const long n = 36000;
  for (long i = 0; i < n; ++i) {
    auto p = select_maxminlcb(f.ctx);
    REQUIRE(p.first != p.second);
    first[p.first]++;
    pairs[as_pair(p)]++;
  }
  CHECK(ref::chi_square_p(first, std::vector<double>(4, 0.25)) > 0.01);
  REQUIRE(pairs.size() == 12);
  std::vector<long> obs;
  for (auto& [k, v] : pairs) obs.push_back(v);
  CHECK(ref::chi_square_p(obs, std::vector<double>(12, 1.0 / 12)) > 0.01);
}

TEST_CASE("maxminlcb: epsilon widens the tie set") {
  Fixture f({1.0, 1.0 + 1e-6, -3.0}, {0, 0, 0}, 1.0, 3);
  f.ctx.epsilon = 0.0;
  std::set<std::size_t> strict;
  for (int i = 0; i < 200; ++i) strict.insert(select_maxminlcb(f.ctx).first);
  CHECK(strict == std::set<std::size_t>{1});
  f.ctx.epsilon = 1e-3;
  std::set<std::size_t> loose;
  for (int i = 0; i < 200; ++i) loose.insert(select_maxminlcb(f.ctx).first);
  CHECK(loose == std::set<std::size_t>{0, 1});
  f.ctx.epsilon = -1.0;
  CHECK_THROWS_AS(select_maxminlcb(f.ctx), ConfigError);
}

TEST_CASE("thompson_draw examples") {
  Rng rng(12);
  const std::vector<double> lo0{0.2, 1.5, 0.9}, hi0{0.2, 1.5, 0.9};
  CHECK(thompson_draw(lo0, hi0, rng) == 1);
  const std::vector<double> lo{0.0, 2.0}, hi{1.0, 3.0};
  for (int i = 0; i < 1000; ++i) CHECK(thompson_draw(lo, hi, rng) == 1);

  const std::vector<double> olo{0.0, 1.0}, ohi{2.0, 3.0};
  long second = 0;
  const long n = 100000;
  for (long i = 0; i < n; ++i) second += thompson_draw(olo, ohi, rng) == 1;
  CHECK(std::abs(static_cast<double>(second) / n - 7.0 / 8.0) < 0.01);
  CHECK(ref::chi_square_p({n - second, second}, {1.0 / 8, 7.0 / 8}) > 0.01);

  const std::vector<double> bad_lo{1.0}, bad_hi{0.0};
  CHECK_THROWS_AS(thompson_draw(bad_lo, bad_hi, rng), Error);
}

TEST_CASE("thompson_draw law on three overlapping intervals") {
  // P(argmax) by fine-grid integration of prod_{k != j} F_k(x) f_j(x)
  const std::vector<double> lo{0.0, 0.5, 0.25}, hi{1.0, 1.25, 2.0};
  std::vector<double> probs(3, 0.0);
  const int grid = 200000;
  for (std::size_t j = 0; j < 3; ++j) {
    const double h = (hi[j] - lo[j]) / grid;
    for (int i = 0; i < grid; ++i) {
      const double x = lo[j] + (i + 0.5) * h;
      double p = 1.0 / (hi[j] - lo[j]);
      for (std::size_t k = 0; k < 3; ++k) {
        if (k != j) p *= std::clamp((x - lo[k]) / (hi[k] - lo[k]), 0.0, 1.0);
      }
      probs[j] += p * h;
    }
  }
  Rng rng(77);
  std::vector<long> counts(3, 0);
  for (int i = 0; i < 60000; ++i) counts[thompson_draw(lo, hi, rng)]++;
  CHECK(ref::chi_square_p(counts, probs) > 0.01);
}

TEST_CASE("dts: zero-width unique argmax forces a uniform fallback") {
  Fixture f({0.0, 3.0, 1.0, -1.0}, {0, 0, 0, 0}, 1.0, 21);
  std::vector<long> second(4, 0);
  for (int i = 0; i < 30000; ++i) {
    auto p = select_dts(f.ctx);
    REQUIRE(p.first == 1);
    REQUIRE(p.fallback_used);
    second[p.second]++;
  }
  CHECK(second[1] == 0);
  std::vector<long> obs{second[0], second[2], second[3]};
  CHECK(ref::chi_square_p(obs, std::vector<double>(3, 1.0 / 3)) > 0.01);
}

TEST_CASE("drts examples") {
  Fixture f({5, 1, 3}, {0, 0, 0}, 1.0);
  for (int i = 0; i < 50; ++i) {
    auto p = select_drts(f.ctx);
    CHECK(as_pair(p) == std::pair<std::size_t, std::size_t>{0, 1});
    CHECK_FALSE(p.fallback_used);
  }
  Fixture two({0.7, 0.7}, {0, 0}, 1.0);
  auto p = select_drts(two.ctx);
  CHECK(p.first == 0);
  CHECK(p.second == 1);
}

TEST_CASE("dts and drts follow the reference step-through under recorded uniforms") {
  std::mt19937_64 gen(99);
  std::uniform_real_distribution<double> mean(-1.0, 1.0), sd(0.0, 0.6);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t m = 2 + i % 7;
    std::vector<double> means(m), stds(m), lo(m), hi(m);
    for (std::size_t j = 0; j < m; ++j) {
      means[j] = mean(gen);
      stds[j] = (i % 5 == 0) ? 0.0 : sd(gen);  // some degenerate instances exercise the fallback
    }
    Fixture f(means, stds, 1.0);
    for (std::size_t j = 0; j < m; ++j) {
      lo[j] = f.est[j].lower();
      hi[j] = f.est[j].upper();
    }
    f.ctx.maxiter = 1 + i % 4;
    for (Method method : {Method::kDts, Method::kDrts}) {
      Rng base(static_cast<std::uint64_t>(i) * 2 + (method == Method::kDrts));
      RecordingSource recorder(base);
      f.ctx.rng = &recorder;
      const auto got = select(method, f.ctx);
      RecordedUniforms replay(recorder.log());
      f.ctx.rng = &replay;
      REQUIRE(select(method, f.ctx) == got);
      REQUIRE(replay.consumed() == recorder.log().size());

      ref::Tape tape{recorder.log()};
      const auto want = method == Method::kDts ? ref::dts(lo, hi, f.ctx.maxiter, tape) : ref::drts(lo, hi, f.ctx.maxiter, tape);
      REQUIRE(got.first == want.first);
      REQUIRE(got.second == want.second);
      REQUIRE(got.fallback_used == want.fallback);
      REQUIRE(tape.at == recorder.log().size());
    }
  }
}

TEST_CASE("every method returns distinct indices") {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> mean(-1.0, 1.0), sd(0.0, 0.5), score(1.0, 5.0);
  for (int i = 0; i < 2000; ++i) {
    const std::size_t m = 4 + i % 5;
    std::vector<double> means(m), stds(m), scores(m);
    for (std::size_t j = 0; j < m; ++j) {
      means[j] = mean(gen);
      stds[j] = sd(gen);
      scores[j] = score(gen);
    }
    Fixture f(means, stds, 1.0, i);
    FixedJudge judge(scores);
    f.ctx.judge = &judge;
    f.ctx.strong_generator = 0;
    f.ctx.weak_generator = 1;
    for (auto method : kAllMethods) {
      auto p = select(method, f.ctx);
      REQUIRE(p.first != p.second);
      REQUIRE(p.first < m);
      REQUIRE(p.second < m);
    }
  }
}

TEST_CASE("annotation budget per method") {
  auto set = make_set(6);
  FixedJudge judge({1, 2, 3, 4, 5, 2.5});
  Rng rng(1);
  std::vector<RewardEstimate> est(6, RewardEstimate::from_moments(0.0, 0.1, 1.0));
  SelectionContext ctx;
  ctx.candidates = &set;
  ctx.estimates = est;
  ctx.judge = &judge;
  ctx.rng = &rng;
  ctx.strong_generator = 4;
  ctx.weak_generator = 0;
  const std::map<Method, int> want = {{Method::kRandom, 0},  {Method::kMaxMin, 6},  {Method::kUltraFeedback, 4},
                                      {Method::kDeltaQwen, 0}, {Method::kInfoMax, 0}, {Method::kDts, 0},
                                      {Method::kMaxMinLcb, 0}, {Method::kDrts, 0},    {Method::kDeltaUcb, 0}};
  for (auto [method, spent] : want) {
    judge.queries = 0;
    CHECK(select(method, ctx).annotations_spent == spent);
    CHECK(judge.queries == spent);
  }
}

TEST_CASE("property: shifting every mean leaves argmax-based choices unchanged") {
  std::mt19937_64 gen(31);
  std::uniform_real_distribution<double> mean(-2.0, 2.0), sd(0.0, 1.0), shift(-10.0, 10.0);
  for (int i = 0; i < 500; ++i) {
    const std::size_t m = 2 + i % 7;
    std::vector<double> means(m), shifted(m), stds(m), zero(m, 0.0);
    const double c = shift(gen);
    for (std::size_t j = 0; j < m; ++j) {
      means[j] = mean(gen);
      shifted[j] = means[j] + c;
      stds[j] = sd(gen);
    }
    Fixture a(means, stds, 1.0), b(shifted, stds, 1.0);
    a.ctx.epsilon = b.ctx.epsilon = 0.0;
    CHECK(as_pair(select_infomax(a.ctx)) == as_pair(select_infomax(b.ctx)));
    CHECK(as_pair(select_deltaucb(a.ctx)) == as_pair(select_deltaucb(b.ctx)));
    CHECK(as_pair(select_maxminlcb(a.ctx)) == as_pair(select_maxminlcb(b.ctx)));

    Fixture za(means, zero, 1.0, 1), zb(shifted, zero, 1.0, 1);
    CHECK(as_pair(select_drts(za.ctx)) == as_pair(select_drts(zb.ctx)));
    CHECK(select_dts(za.ctx).first == select_dts(zb.ctx).first);
  }
}
