#pragma once

// Simulated environment: synthetic response generators with latent skill and
// a Likert-scoring judge. Latent quality is oracle-private; the selection and
// ENN modules only ever see Candidate::features.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "activeduel/core.hpp"
#include "activeduel/rng.hpp"

namespace activeduel {

class Environment;

struct PromptContext {
  int prompt_id = 0;
  std::vector<double> context;
};

/// A candidate response as seen by everything outside the oracle.
class Candidate {
 public:
  int candidate_id = 0;
  int generator_id = 0;
  std::vector<double> features;

 private:
  double true_utility_ = 0.0;
  friend class Environment;
};

struct CandidateSet {
  int prompt_id = 0;
  std::vector<Candidate> candidates;

  std::size_t size() const { return candidates.size(); }
  const Candidate& operator[](std::size_t j) const { return candidates[j]; }
};

struct EnvConfig {
  int num_generators = 30;
  int feature_dim = 16;
  int context_dim = 4;
  double quality_noise_std = 0.1;
  double aspect_noise_std = 0.1;
  double logit_sharpness = 2.0;
  double skill_spread = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const EnvConfig&, const EnvConfig&) = default;
};

/// Oracle-private description of one generator.
struct GeneratorProfile {
  int generator_id = 0;
  std::vector<double> skill;
  double base_quality = 0.0;
};

enum class Aspect : int { kHelpfulness = 0, kTruthfulness, kHonesty, kInstructionFollowing };
inline constexpr std::array<Aspect, 4> kAspects = {Aspect::kHelpfulness, Aspect::kTruthfulness,
                                                   Aspect::kHonesty, Aspect::kInstructionFollowing};

struct AspectScores {
  std::array<double, 4> aspect{};
  double overall = 0.0;
};

/// Expected Likert score sum_k k * softmax(logits)_k over k = 1..5.
double likert_expected_score(std::span<const double, 5> logits);

class Environment {
 public:
  explicit Environment(EnvConfig config);

  const EnvConfig& config() const { return config_; }
  const std::vector<GeneratorProfile>& generators() const { return generators_; }

  /// Context vector for prompt `id`; a pure function of (env seed, id).
  PromptContext prompt(int id) const;

  /// One candidate per generator, in generator-id order.
  CandidateSet generate(const PromptContext& prompt, Rng& rng) const;

  std::array<double, 5> judge_logits(const Candidate& c, Aspect aspect, Rng& rng) const;
  AspectScores judge_score(const Candidate& c, Rng& rng) const;

  /// Judges both candidates, then resolves the preference from their overall scores.
  PreferenceTriplet annotate_pair(int prompt_id, const Candidate& a, const Candidate& b, Rng& rng) const;

  /// Preference drawn as Bernoulli(s(u_a - u_b)) on the latent utilities.
  /// Scores are recorded for analytics; they do not determine the preference.
  PreferenceTriplet annotate_bernoulli(int prompt_id, const Candidate& a, double score_a,
                                       const Candidate& b, double score_b, Rng& rng) const;

  /// Latent utility; analytics and tests only.
  double true_utility(const Candidate& c) const { return c.true_utility_; }
  double expected_utility(int generator_id, std::span<const double> context) const;

  /// Generators with the highest / lowest base quality.
  int strongest_generator() const;
  int weakest_generator() const;

  /// Noise-free target score t in [1, 5] for a latent utility.
  double target_score(double utility) const;

 private:
  EnvConfig config_;
  std::vector<GeneratorProfile> generators_;
  std::vector<std::vector<double>> generator_embeddings_;
  std::vector<double> projection_;  // feature_dim x latent_dim, row-major
  int latent_dim_ = 0;
};

/// Orders two judged candidates. Ties within kTieTolerance are broken by a
/// fair coin from `rng` and flagged.
PreferenceTriplet resolve_preference(int prompt_id, const Candidate& a, double score_a,
                                     const Candidate& b, double score_b, Rng& rng);

}  // namespace activeduel
