#pragma once

// The batched collection loop: generate -> predict -> select -> annotate -> retrain.

#include <cstdint>
#include <span>
#include <vector>

#include "activeduel/enn.hpp"
#include "activeduel/oracle.hpp"
#include "activeduel/selection.hpp"

namespace activeduel {

enum class Annotator { kLikert, kBernoulli };

struct RunConfig {
  EnvConfig env;
  EnnConfig enn;  // feature_dim must match env.feature_dim
  Method method = Method::kRandom;
  double epsilon = 1e-9;
  int maxiter = 16;
  int strong_generator = -1;  // -1: highest base quality
  int weak_generator = -1;    // -1: lowest base quality
  int num_prompts = 2000;
  int batch_size = 64;
  std::uint64_t seed = 0;
  Annotator annotator = Annotator::kLikert;

  void validate() const;
};

struct IterationMetrics {
  int iteration = 0;
  int prompts = 0;
  long long cumulative_annotations = 0;
  long long selection_queries = 0;     // judge queries spent inside selection this iteration
  long long metrics_only_queries = 0;  // scoring done purely for analytics
  double mean_chosen_score = 0.0;
  double mean_rejected_score = 0.0;
  double mean_delta = 0.0;
  double dueling_regret = 0.0;
  double cumulative_dueling_regret = 0.0;
  double mean_ensemble_std = 0.0;
  double fallback_rate = 0.0;
  double tie_rate = 0.0;
  double best_chosen_rate = 0.0;     // chosen is the prompt's highest-utility candidate
  double mean_selected_width = 0.0;  // pair_width of the selected pair
  double mean_pair_width = 0.0;      // pair_width averaged over all ordered pairs
  double zeta = 0.0;                 // anchor weight used by this iteration's training
  std::size_t replay_size = 0;
  std::vector<int> chosen_counts;    // per generator
  std::vector<int> rejected_counts;  // per generator

  friend bool operator==(const IterationMetrics&, const IterationMetrics&) = default;
};

/// Everything recorded for one prompt of one iteration.
struct PromptRecord {
  PreferenceTriplet triplet;
  SelectedPair pair;
  std::vector<double> utilities;  // oracle-side, analytics only
  std::vector<RewardEstimate> estimates;
  std::vector<double> chosen_features;
  std::vector<double> rejected_features;
  long long judge_queries = 0;
};

struct RegretTerm {
  std::span<const double> utilities;
  std::size_t first = 0;
  std::size_t second = 0;
};

/// Sum over prompts of max_j u_j - (u_first + u_second) / 2, each term clamped at 0.
double dueling_regret(std::span<const RegretTerm> terms);

/// Fills an IterationMetrics from one iteration's records. `previous` carries
/// the cumulative quantities (null for the first iteration).
IterationMetrics compute_metrics(int iteration, std::span<const PromptRecord> records, int num_generators,
                                 const IterationMetrics* previous);

/// Resumable loop state.
struct PipelineState {
  EnnModel model;
  ReplayBuffer buffer;
  std::vector<PreferenceTriplet> dataset;
  std::vector<IterationMetrics> metrics;
  int next_iteration = 0;
};

class Pipeline {
 public:
  explicit Pipeline(RunConfig config);
  Pipeline(RunConfig config, PipelineState state);

  const RunConfig& config() const { return config_; }
  const Environment& environment() const { return env_; }
  const PipelineState& state() const { return state_; }
  const EnnModel& model() const { return state_.model; }
  const ReplayBuffer& buffer() const { return state_.buffer; }
  const std::vector<PreferenceTriplet>& dataset() const { return state_.dataset; }
  const std::vector<IterationMetrics>& metrics() const { return state_.metrics; }
  /// Records of the most recent iteration.
  const std::vector<PromptRecord>& last_records() const { return records_; }

  int num_iterations() const;
  int next_iteration() const { return state_.next_iteration; }
  bool done() const { return next_iteration() >= num_iterations(); }

  /// Prompt ids of iteration t, in processing order.
  std::vector<int> batch_prompts(int iteration) const;

  const IterationMetrics& step();
  /// Runs until done, or for at most `max_iterations` more iterations when >= 0.
  void run(int max_iterations = -1);

 private:
  PromptRecord process_prompt(int iteration, int prompt_id) const;

  RunConfig config_;
  Environment env_;
  std::vector<int> order_;
  int strong_ = -1;
  int weak_ = -1;
  PipelineState state_;
  std::vector<PromptRecord> records_;
};

}  // namespace activeduel
