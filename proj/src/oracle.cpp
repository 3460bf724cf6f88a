#include "activeduel/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace activeduel {

namespace {

// Base qualities span [-kQualityRange, kQualityRange] * skill_spread.
constexpr double kQualityRange = 3.0;
// Std of the prompt-dependent skill term skill . context, relative to skill_spread.
constexpr double kSkillScale = 0.15;
constexpr int kMaxEmbeddingDim = 4;

}  // namespace

void EnvConfig::validate() const {
  std::ostringstream err;
  if (num_generators < 2) err << "env.num_generators must be >= 2; ";
  if (context_dim < 1) err << "env.context_dim must be >= 1; ";
  if (feature_dim < context_dim + 1) err << "env.feature_dim must be >= context_dim + 1; ";
  if (!(quality_noise_std >= 0.0)) err << "env.quality_noise_std must be >= 0; ";
  if (!(aspect_noise_std >= 0.0)) err << "env.aspect_noise_std must be >= 0; ";
  if (!(logit_sharpness > 0.0)) err << "env.logit_sharpness must be > 0; ";
  if (!(skill_spread > 0.0)) err << "env.skill_spread must be > 0; ";
  if (!err.str().empty()) throw ConfigError(err.str());
}

double likert_expected_score(std::span<const double, 5> logits) {
  double peak = logits[0];
  for (double l : logits) {
    if (std::isnan(l)) throw NumericError("likert_expected_score: NaN logit");
    peak = std::max(peak, l);
  }
  double z = 0.0;
  double weighted = 0.0;
  for (int k = 0; k < 5; ++k) {
    const double w = std::exp(logits[k] - peak);
    z += w;
    weighted += (k + 1) * w;
  }
  return std::clamp(weighted / z, 1.0, 5.0);
}

Environment::Environment(EnvConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng(config_.seed, Stream::kEnvSetup);
  const int m = config_.num_generators;
  const int dx = config_.context_dim;

  std::vector<int> rank(m);
  std::iota(rank.begin(), rank.end(), 0);
  std::shuffle(rank.begin(), rank.end(), rng.engine());

  const double skill_sd = kSkillScale * config_.skill_spread / std::sqrt(static_cast<double>(dx));
  generators_.resize(m);
  for (int g = 0; g < m; ++g) {
    auto& p = generators_[g];
    p.generator_id = g;
    const double frac = static_cast<double>(rank[g]) / static_cast<double>(m - 1);
    p.base_quality = config_.skill_spread * kQualityRange * (2.0 * frac - 1.0);
    p.skill.resize(dx);
    for (auto& s : p.skill) s = rng.normal(0.0, skill_sd);
  }

  const int embed_dim = std::clamp(config_.feature_dim - 1 - dx, 0, kMaxEmbeddingDim);
  generator_embeddings_.assign(m, std::vector<double>(embed_dim));
  for (auto& e : generator_embeddings_) {
    for (auto& v : e) v = rng.normal();
  }

  latent_dim_ = 1 + dx + embed_dim;
  projection_.resize(static_cast<std::size_t>(config_.feature_dim) * latent_dim_);
  const double scale = 1.0 / std::sqrt(static_cast<double>(latent_dim_));
  for (auto& v : projection_) v = rng.normal(0.0, scale);
}

PromptContext Environment::prompt(int id) const {
  Rng rng(config_.seed, Stream::kPromptContext, {static_cast<std::uint64_t>(id)});
  PromptContext p;
  p.prompt_id = id;
  p.context.resize(config_.context_dim);
  for (auto& v : p.context) v = rng.normal();
  return p;
}

double Environment::expected_utility(int generator_id, std::span<const double> context) const {
  const auto& g = generators_.at(generator_id);
  if (context.size() != g.skill.size()) throw Error("expected_utility: context dimension mismatch");
  return g.base_quality + std::inner_product(g.skill.begin(), g.skill.end(), context.begin(), 0.0);
}

CandidateSet Environment::generate(const PromptContext& prompt, Rng& rng) const {
  if (static_cast<int>(prompt.context.size()) != config_.context_dim) {
    throw Error("generate: prompt context has wrong dimension");
  }
  CandidateSet set;
  set.prompt_id = prompt.prompt_id;
  set.candidates.resize(config_.num_generators);
  std::vector<double> latent(latent_dim_);
  for (int g = 0; g < config_.num_generators; ++g) {
    Candidate& c = set.candidates[g];
    c.candidate_id = g;
    c.generator_id = g;
    c.true_utility_ = expected_utility(g, prompt.context) + rng.normal(0.0, config_.quality_noise_std);

    latent[0] = c.true_utility_;
    std::copy(prompt.context.begin(), prompt.context.end(), latent.begin() + 1);
    std::copy(generator_embeddings_[g].begin(), generator_embeddings_[g].end(),
              latent.begin() + 1 + config_.context_dim);

    c.features.assign(config_.feature_dim, 0.0);
    for (int r = 0; r < config_.feature_dim; ++r) {
      const double* row = projection_.data() + static_cast<std::size_t>(r) * latent_dim_;
      c.features[r] = std::inner_product(latent.begin(), latent.end(), row, 0.0);
    }
  }
  return set;
}

double Environment::target_score(double utility) const {
  return std::clamp(1.0 + 4.0 * sigmoid(utility / config_.skill_spread), 1.0, 5.0);
}

std::array<double, 5> Environment::judge_logits(const Candidate& c, Aspect aspect, Rng& rng) const {
  (void)aspect;  // every aspect shares the utility -> score mapping
  const double t = target_score(c.true_utility_ + rng.normal(0.0, config_.aspect_noise_std));
  std::array<double, 5> logits{};
  for (int k = 1; k <= 5; ++k) {
    const double d = k - t;
    logits[k - 1] = -config_.logit_sharpness * d * d;
  }
  return logits;
}

AspectScores Environment::judge_score(const Candidate& c, Rng& rng) const {
  AspectScores s;
  double sum = 0.0;
  for (Aspect a : kAspects) {
    const auto logits = judge_logits(c, a, rng);
    const double v = likert_expected_score(logits);
    s.aspect[static_cast<int>(a)] = v;
    sum += v;
  }
  s.overall = sum / 4.0;
  return s;
}

PreferenceTriplet resolve_preference(int prompt_id, const Candidate& a, double score_a,
                                     const Candidate& b, double score_b, Rng& rng) {
  if (a.candidate_id == b.candidate_id) throw Error("annotate: identical candidate ids");
  PreferenceTriplet t;
  t.prompt_id = prompt_id;
  bool a_wins;
  if (std::abs(score_a - score_b) < kTieTolerance) {
    t.tie = true;
    a_wins = rng.uniform() < 0.5;
  } else {
    a_wins = score_a > score_b;
  }
  const Candidate& w = a_wins ? a : b;
  const Candidate& l = a_wins ? b : a;
  t.chosen_id = w.candidate_id;
  t.rejected_id = l.candidate_id;
  t.chosen_generator = w.generator_id;
  t.rejected_generator = l.generator_id;
  t.chosen_score = a_wins ? score_a : score_b;
  t.rejected_score = a_wins ? score_b : score_a;
  return t;
}

PreferenceTriplet Environment::annotate_pair(int prompt_id, const Candidate& a, const Candidate& b,
                                             Rng& rng) const {
  const double sa = judge_score(a, rng).overall;
  const double sb = judge_score(b, rng).overall;
  return resolve_preference(prompt_id, a, sa, b, sb, rng);
}

PreferenceTriplet Environment::annotate_bernoulli(int prompt_id, const Candidate& a, double score_a,
                                                  const Candidate& b, double score_b, Rng& rng) const {
  if (a.candidate_id == b.candidate_id) throw Error("annotate: identical candidate ids");
  const bool a_wins = rng.uniform() < sigmoid(a.true_utility_ - b.true_utility_);
  PreferenceTriplet t;
  t.prompt_id = prompt_id;
  const Candidate& w = a_wins ? a : b;
  const Candidate& l = a_wins ? b : a;
  t.chosen_id = w.candidate_id;
  t.rejected_id = l.candidate_id;
  t.chosen_generator = w.generator_id;
  t.rejected_generator = l.generator_id;
  t.chosen_score = a_wins ? score_a : score_b;
  t.rejected_score = a_wins ? score_b : score_a;
  return t;
}

int Environment::strongest_generator() const {
  auto it = std::max_element(generators_.begin(), generators_.end(),
                             [](const auto& x, const auto& y) { return x.base_quality < y.base_quality; });
  return it->generator_id;
}

int Environment::weakest_generator() const {
  auto it = std::min_element(generators_.begin(), generators_.end(),
                             [](const auto& x, const auto& y) { return x.base_quality < y.base_quality; });
  return it->generator_id;
}

}  // namespace activeduel
