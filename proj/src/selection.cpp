#include "activeduel/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace activeduel {

namespace {

constexpr std::array<std::string_view, 9> kNames = {"random",    "maxmin",    "ultrafeedback",
                                                    "deltaqwen", "infomax",   "dts",
                                                    "maxminlcb", "drts",      "deltaucb"};

std::size_t candidate_count(const SelectionContext& ctx) {
  if (ctx.candidates == nullptr) throw Error("selection: no candidate set");
  const std::size_t m = ctx.candidates->size();
  if (m < 2) throw Error("selection: need at least 2 candidates, got " + std::to_string(m));
  return m;
}

UniformSource& rng_of(const SelectionContext& ctx) {
  if (ctx.rng == nullptr) throw Error("selection: method needs a random stream");
  return *ctx.rng;
}

JudgeHandle& judge_of(const SelectionContext& ctx) {
  if (ctx.judge == nullptr) throw Error("selection: method needs judge access");
  return *ctx.judge;
}

std::span<const RewardEstimate> estimates_of(const SelectionContext& ctx, std::size_t m) {
  if (ctx.estimates.size() != m) {
    throw Error("selection: expected " + std::to_string(m) + " reward estimates, got " +
                std::to_string(ctx.estimates.size()));
  }
  return ctx.estimates;
}

// Uniform over {0..m-1} \ {excluded}.
std::size_t uniform_other(std::size_t m, std::size_t excluded, UniformSource& rng) {
  std::size_t k = rng.below(m - 1);
  if (k >= excluded) ++k;
  return k;
}

template <typename Score>
SelectedPair argmax_ordered_pair(std::size_t m, Score&& score) {
  SelectedPair best;
  double best_value = -std::numeric_limits<double>::infinity();
  bool found = false;
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t k = 0; k < m; ++k) {
      if (j == k) continue;
      const double v = score(j, k);
      if (!found || v > best_value) {
        best_value = v;
        best.first = j;
        best.second = k;
        found = true;
      }
    }
  }
  return best;
}

struct Bounds {
  std::vector<double> lower;
  std::vector<double> upper;
};

Bounds bounds_of(std::span<const RewardEstimate> est) {
  Bounds b;
  b.lower.reserve(est.size());
  b.upper.reserve(est.size());
  for (const auto& e : est) {
    b.lower.push_back(e.lower());
    b.upper.push_back(e.upper());
  }
  return b;
}

bool within(double diff, double epsilon) { return diff < epsilon || diff == 0.0; }

}  // namespace

std::string_view method_name(Method m) { return kNames[static_cast<std::size_t>(m)]; }

std::optional<Method> parse_method(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (kNames[i] == name) return static_cast<Method>(i);
  }
  return std::nullopt;
}

std::string method_list() {
  std::string out;
  for (auto n : kNames) {
    if (!out.empty()) out += ", ";
    out += n;
  }
  return out;
}

bool uses_estimates(Method m) {
  switch (m) {
    case Method::kInfoMax:
    case Method::kDts:
    case Method::kMaxMinLcb:
    case Method::kDrts:
    case Method::kDeltaUcb:
      return true;
    default:
      return false;
  }
}

std::size_t thompson_draw(std::span<const double> lower, std::span<const double> upper, UniformSource& rng) {
  if (lower.size() != upper.size() || lower.empty()) throw Error("thompson_draw: bound vectors mismatch");
  std::size_t best = 0;
  double best_value = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < lower.size(); ++j) {
    if (lower[j] > upper[j]) throw Error("thompson_draw: lower bound above upper bound");
    const double u = lower[j] + (upper[j] - lower[j]) * rng.uniform();
    if (j == 0 || u > best_value) {
      best_value = u;
      best = j;
    }
  }
  return best;
}

SelectedPair select_random(const SelectionContext& ctx) {
  const std::size_t m = candidate_count(ctx);
  auto& rng = rng_of(ctx);
  SelectedPair p;
  p.first = rng.below(m);
  p.second = uniform_other(m, p.first, rng);
  return p;
}

SelectedPair select_maxmin(const SelectionContext& ctx) {
  const std::size_t m = candidate_count(ctx);
  auto& judge = judge_of(ctx);
  std::vector<double> scores(m);
  for (std::size_t j = 0; j < m; ++j) scores[j] = judge.overall(j);
  SelectedPair p;
  p.annotations_spent = static_cast<int>(m);
  p.first = static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
  bool have = false;
  for (std::size_t j = 0; j < m; ++j) {
    if (j == p.first) continue;
    if (!have || scores[j] < scores[p.second]) {
      p.second = j;
      have = true;
    }
  }
  return p;
}

SelectedPair select_ultrafeedback(const SelectionContext& ctx) {
  const std::size_t m = candidate_count(ctx);
  if (m < 4) throw Error("ultrafeedback: needs at least 4 candidates, got " + std::to_string(m));
  auto& rng = rng_of(ctx);
  auto& judge = judge_of(ctx);
  auto subset = sample_without_replacement(m, 4, rng);
  std::sort(subset.begin(), subset.end());
  std::array<double, 4> scores{};
  for (std::size_t i = 0; i < 4; ++i) scores[i] = judge.overall(subset[i]);
  const auto best = static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
  std::size_t other = rng.below(3);
  if (other >= best) ++other;
  SelectedPair p;
  p.first = subset[best];
  p.second = subset[other];
  p.annotations_spent = 4;
  return p;
}

SelectedPair select_deltaqwen(const SelectionContext& ctx) {
  candidate_count(ctx);
  if (ctx.strong_generator < 0 || ctx.weak_generator < 0 || ctx.strong_generator == ctx.weak_generator) {
    throw ConfigError("deltaqwen: strong and weak generators must be set and distinct");
  }
  auto locate = [&](int generator, const char* role) {
    std::optional<std::size_t> found;
    for (std::size_t j = 0; j < ctx.candidates->size(); ++j) {
      if ((*ctx.candidates)[j].generator_id != generator) continue;
      if (found) throw Error(std::string("deltaqwen: duplicate ") + role + " generator candidates");
      found = j;
    }
    if (!found) throw Error(std::string("deltaqwen: ") + role + " generator missing from candidate set");
    return *found;
  };
  SelectedPair p;
  p.first = locate(ctx.strong_generator, "strong");
  p.second = locate(ctx.weak_generator, "weak");
  return p;
}

SelectedPair select_infomax(const SelectionContext& ctx) {
  const std::size_t m = candidate_count(ctx);
  const auto est = estimates_of(ctx, m);
  return argmax_ordered_pair(m, [&](std::size_t j, std::size_t k) { return pair_width(est[j], est[k]); });
}

SelectedPair select_deltaucb(const SelectionContext& ctx) {
  const std::size_t m = candidate_count(ctx);
  const auto est = estimates_of(ctx, m);
  return argmax_ordered_pair(m, [&](std::size_t j, std::size_t k) { return ucb_pref_prob(est[j], est[k]); });
}

SelectedPair select_dts(const SelectionContext& ctx) {
  const std::size_t m = candidate_count(ctx);
  const auto b = bounds_of(estimates_of(ctx, m));
  auto& rng = rng_of(ctx);
  SelectedPair p;
  p.first = thompson_draw(b.lower, b.upper, rng);
  for (int t = 0; t < ctx.maxiter; ++t) {
    const std::size_t j = thompson_draw(b.lower, b.upper, rng);
    if (j != p.first) {
      p.second = j;
      return p;
    }
  }
  p.second = uniform_other(m, p.first, rng);
  p.fallback_used = true;
  return p;
}

SelectedPair select_drts(const SelectionContext& ctx) {
  const std::size_t m = candidate_count(ctx);
  const auto b = bounds_of(estimates_of(ctx, m));
  std::vector<double> rev_lower(m), rev_upper(m);
  for (std::size_t j = 0; j < m; ++j) {
    rev_lower[j] = -b.upper[j];
    rev_upper[j] = -b.lower[j];
  }
  auto& rng = rng_of(ctx);
  SelectedPair p;
  p.first = thompson_draw(b.lower, b.upper, rng);
  for (int t = 0; t < ctx.maxiter; ++t) {
    const std::size_t j = thompson_draw(rev_lower, rev_upper, rng);
    if (j != p.first) {
      p.second = j;
      return p;
    }
  }
  p.second = uniform_other(m, p.first, rng);
  p.fallback_used = true;
  return p;
}

SelectedPair select_maxminlcb(const SelectionContext& ctx) {
  const std::size_t m = candidate_count(ctx);
  const auto est = estimates_of(ctx, m);
  if (!(ctx.epsilon >= 0.0)) throw ConfigError("maxminlcb: epsilon must be >= 0");
  auto& rng = rng_of(ctx);

  std::vector<double> lcb(m * m, -std::numeric_limits<double>::infinity());
  std::vector<double> worst(m, std::numeric_limits<double>::infinity());
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t k = 0; k < m; ++k) {
      if (j == k) continue;
      lcb[j * m + k] = lcb_pref_prob(est[j], est[k]);
      worst[j] = std::min(worst[j], lcb[j * m + k]);
    }
  }
  const double best_worst = *std::max_element(worst.begin(), worst.end());
  std::vector<std::size_t> tied;
  for (std::size_t j = 0; j < m; ++j) {
    if (within(std::abs(worst[j] - best_worst), ctx.epsilon)) tied.push_back(j);
  }
  SelectedPair p;
  p.first = tied[rng.below(tied.size())];

  const double weakest = worst[p.first];
  tied.clear();
  for (std::size_t k = 0; k < m; ++k) {
    if (k == p.first) continue;
    if (within(std::abs(lcb[p.first * m + k] - weakest), ctx.epsilon)) tied.push_back(k);
  }
  p.second = tied[rng.below(tied.size())];
  return p;
}

SelectedPair select(Method method, const SelectionContext& ctx) {
  switch (method) {
    case Method::kRandom: return select_random(ctx);
    case Method::kMaxMin: return select_maxmin(ctx);
    case Method::kUltraFeedback: return select_ultrafeedback(ctx);
    case Method::kDeltaQwen: return select_deltaqwen(ctx);
    case Method::kInfoMax: return select_infomax(ctx);
    case Method::kDts: return select_dts(ctx);
    case Method::kMaxMinLcb: return select_maxminlcb(ctx);
    case Method::kDrts: return select_drts(ctx);
    case Method::kDeltaUcb: return select_deltaucb(ctx);
  }
  throw Error("select: unknown method");
}

}  // namespace activeduel
