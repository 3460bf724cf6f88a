#include "activeduel/pipeline.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <sstream>

#include <spdlog/spdlog.h>

namespace activeduel {

void RunConfig::validate() const {
  env.validate();
  enn.validate();
  std::ostringstream err;
  if (enn.feature_dim != env.feature_dim) err << "enn.feature_dim must equal env.feature_dim; ";
  if (batch_size < 1) err << "batch_size must be >= 1; ";
  if (num_prompts < batch_size) err << "num_prompts must be >= batch_size; ";
  if (maxiter < 1) err << "maxiter must be >= 1; ";
  if (!(epsilon >= 0.0)) err << "epsilon must be >= 0; ";
  if (method == Method::kUltraFeedback && env.num_generators < 4) {
    err << "ultrafeedback needs env.num_generators >= 4; ";
  }
  for (int g : {strong_generator, weak_generator}) {
    if (g < -1 || g >= env.num_generators) err << "generator id " << g << " out of range; ";
  }
  if (strong_generator >= 0 && strong_generator == weak_generator) {
    err << "strong_generator and weak_generator must differ; ";
  }
  if (!err.str().empty()) throw ConfigError(err.str());
}

double dueling_regret(std::span<const RegretTerm> terms) {
  double total = 0.0;
  for (const auto& t : terms) {
    if (t.utilities.empty()) continue;
    const double best = *std::max_element(t.utilities.begin(), t.utilities.end());
    const double got = 0.5 * (t.utilities[t.first] + t.utilities[t.second]);
    total += std::max(0.0, best - got);
  }
  return total;
}

IterationMetrics compute_metrics(int iteration, std::span<const PromptRecord> records, int num_generators,
                                 const IterationMetrics* previous) {
  if (records.empty()) throw Error("compute_metrics: empty iteration");
  IterationMetrics out;
  out.iteration = iteration;
  out.prompts = static_cast<int>(records.size());
  out.chosen_counts.assign(num_generators, 0);
  out.rejected_counts.assign(num_generators, 0);

  long long queries = 0;
  double chosen = 0.0, rejected = 0.0, std_sum = 0.0, sel_width = 0.0, all_width = 0.0;
  std::size_t std_count = 0;
  int fallbacks = 0, ties = 0, best_hits = 0;
  std::vector<RegretTerm> regret_terms;
  regret_terms.reserve(records.size());
  for (const auto& r : records) {
    const auto& t = r.triplet;
    chosen += t.chosen_score;
    rejected += t.rejected_score;
    queries += r.judge_queries;
    out.selection_queries += r.pair.annotations_spent;
    fallbacks += r.pair.fallback_used ? 1 : 0;
    ties += t.tie ? 1 : 0;
    out.chosen_counts.at(t.chosen_generator) += 1;
    out.rejected_counts.at(t.rejected_generator) += 1;
    if (!r.utilities.empty()) {
      const auto best = std::max_element(r.utilities.begin(), r.utilities.end()) - r.utilities.begin();
      best_hits += (best == t.chosen_id) ? 1 : 0;
      regret_terms.push_back({r.utilities, r.pair.first, r.pair.second});
    }
    if (!r.estimates.empty()) {
      const std::size_t m = r.estimates.size();
      for (const auto& e : r.estimates) std_sum += e.std();
      std_count += m;
      sel_width += pair_width(r.estimates[r.pair.first], r.estimates[r.pair.second]);
      double w = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t k = 0; k < m; ++k) {
          if (j != k) w += pair_width(r.estimates[j], r.estimates[k]);
        }
      }
      all_width += w / static_cast<double>(m * (m - 1));
    }
  }
  const double n = static_cast<double>(records.size());
  out.mean_chosen_score = chosen / n;
  out.mean_rejected_score = rejected / n;
  out.mean_delta = (chosen - rejected) / n;
  out.fallback_rate = fallbacks / n;
  out.tie_rate = ties / n;
  out.best_chosen_rate = best_hits / n;
  out.mean_ensemble_std = std_count ? std_sum / static_cast<double>(std_count) : 0.0;
  out.mean_selected_width = sel_width / n;
  out.mean_pair_width = all_width / n;
  out.dueling_regret = dueling_regret(regret_terms);
  out.cumulative_dueling_regret = out.dueling_regret + (previous ? previous->cumulative_dueling_regret : 0.0);
  out.cumulative_annotations = queries + (previous ? previous->cumulative_annotations : 0);
  return out;
}

namespace {

// Per-prompt judge access with a score cache; each candidate's score comes
// from its own stream, so re-judging reproduces it exactly.
class ScoreBoard final : public JudgeHandle {
 public:
  ScoreBoard(const Environment& env, const CandidateSet& set, std::uint64_t seed)
      : env_(env), set_(set), seed_(seed), cache_(set.size()) {}

  double overall(std::size_t j) override {
    if (!cache_.at(j)) {
      Rng rng(seed_, Stream::kJudge,
              {static_cast<std::uint64_t>(set_.prompt_id), static_cast<std::uint64_t>(j)});
      cache_[j] = env_.judge_score(set_[j], rng).overall;
      ++queries_;
    }
    return *cache_[j];
  }

  long long queries() const { return queries_; }

 private:
  const Environment& env_;
  const CandidateSet& set_;
  std::uint64_t seed_;
  std::vector<std::optional<double>> cache_;
  long long queries_ = 0;
};

std::vector<int> prompt_order(const RunConfig& c) {
  std::vector<int> order(c.num_prompts);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(c.seed, Stream::kPromptOrder);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

PipelineState fresh_state(const RunConfig& c) {
  c.validate();
  return PipelineState{EnnModel::init(c.enn, c.seed), {}, {}, {}, 0};
}

}  // namespace

Pipeline::Pipeline(RunConfig config) : Pipeline(config, fresh_state(config)) {}

Pipeline::Pipeline(RunConfig config, PipelineState state)
    : config_(std::move(config)), env_(config_.env), state_(std::move(state)) {
  config_.validate();
  if (!(state_.model.config() == config_.enn)) throw ConfigError("pipeline state: model config differs from run config");
  order_ = prompt_order(config_);
  strong_ = config_.strong_generator >= 0 ? config_.strong_generator : env_.strongest_generator();
  weak_ = config_.weak_generator >= 0 ? config_.weak_generator : env_.weakest_generator();
}

int Pipeline::num_iterations() const { return (config_.num_prompts + config_.batch_size - 1) / config_.batch_size; }

std::vector<int> Pipeline::batch_prompts(int iteration) const {
  const int begin = iteration * config_.batch_size;
  const int end = std::min(config_.num_prompts, begin + config_.batch_size);
  if (iteration < 0 || begin >= end) throw Error("batch_prompts: iteration out of range");
  return {order_.begin() + begin, order_.begin() + end};
}

PromptRecord Pipeline::process_prompt(int iteration, int prompt_id) const {
  const auto pid = static_cast<std::uint64_t>(prompt_id);
  const std::uint64_t seed = config_.seed;

  Rng gen_rng(seed, Stream::kGenerate, {pid});
  const CandidateSet cands = env_.generate(env_.prompt(prompt_id), gen_rng);
  const std::size_t m = cands.size();

  PromptRecord rec;
  Eigen::MatrixXd features(config_.env.feature_dim, static_cast<Eigen::Index>(m));
  for (std::size_t j = 0; j < m; ++j) {
    features.col(static_cast<Eigen::Index>(j)) =
        Eigen::Map<const Eigen::VectorXd>(cands[j].features.data(), config_.env.feature_dim);
  }
  rec.estimates = state_.model.predict_batch(features);

  ScoreBoard board(env_, cands, seed);
  Rng select_rng(seed, Stream::kSelect, {pid});
  SelectionContext ctx;
  ctx.candidates = &cands;
  ctx.estimates = rec.estimates;
  ctx.judge = &board;
  ctx.rng = &select_rng;
  ctx.epsilon = config_.epsilon;
  ctx.maxiter = config_.maxiter;
  ctx.strong_generator = strong_;
  ctx.weak_generator = weak_;
  rec.pair = select(config_.method, ctx);

  const Candidate& a = cands[rec.pair.first];
  const Candidate& b = cands[rec.pair.second];
  Rng annotate_rng(seed, Stream::kAnnotate, {pid});
  if (config_.method == Method::kDeltaQwen) {
    // Structural preference: no annotation; scores are for analytics only.
    ScoreBoard metrics_board(env_, cands, seed);
    rec.triplet.prompt_id = prompt_id;
    rec.triplet.chosen_id = a.candidate_id;
    rec.triplet.rejected_id = b.candidate_id;
    rec.triplet.chosen_generator = a.generator_id;
    rec.triplet.rejected_generator = b.generator_id;
    rec.triplet.chosen_score = metrics_board.overall(rec.pair.first);
    rec.triplet.rejected_score = metrics_board.overall(rec.pair.second);
    rec.triplet.metrics_only = true;
  } else if (config_.annotator == Annotator::kBernoulli) {
    const double sa = board.overall(rec.pair.first);
    const double sb = board.overall(rec.pair.second);
    rec.triplet = env_.annotate_bernoulli(prompt_id, a, sa, b, sb, annotate_rng);
  } else {
    const double sa = board.overall(rec.pair.first);
    const double sb = board.overall(rec.pair.second);
    rec.triplet = resolve_preference(prompt_id, a, sa, b, sb, annotate_rng);
  }
  rec.triplet.iteration = iteration;
  rec.triplet.method = std::string(method_name(config_.method));
  validate_triplet(rec.triplet, config_.annotator == Annotator::kLikert && !rec.triplet.metrics_only);
  rec.judge_queries = board.queries();
  rec.chosen_features = cands[rec.triplet.chosen_id].features;
  rec.rejected_features = cands[rec.triplet.rejected_id].features;

  rec.utilities.reserve(m);
  for (const auto& c : cands.candidates) rec.utilities.push_back(env_.true_utility(c));
  return rec;
}

const IterationMetrics& Pipeline::step() {
  if (done()) throw Error("pipeline: all iterations already processed");
  const int t = next_iteration();
  const auto prompts = batch_prompts(t);

  records_.clear();
  records_.reserve(prompts.size());
  for (int pid : prompts) {
    try {
      records_.push_back(process_prompt(t, pid));
    } catch (const Error& e) {
      std::ostringstream os;
      os << "iteration " << t << ", prompt " << pid << ": " << e.what();
      throw Error(os.str());
    }
  }

  for (const auto& r : records_) {
    state_.buffer.append({r.chosen_features, r.rejected_features, r.triplet});
    state_.dataset.push_back(r.triplet);
  }

  Rng train_rng(config_.seed, Stream::kTrain, {static_cast<std::uint64_t>(t)});
  TrainReport report;
  try {
    report = enn_train(state_.model, state_.buffer, config_.batch_size, train_rng);
  } catch (const Error& e) {
    throw Error("iteration " + std::to_string(t) + ", training: " + e.what());
  }

  const IterationMetrics* prev = state_.metrics.empty() ? nullptr : &state_.metrics.back();
  IterationMetrics m = compute_metrics(t, records_, config_.env.num_generators, prev);
  m.zeta = report.zeta;
  m.replay_size = state_.buffer.size();
  if (config_.method == Method::kDeltaQwen) m.metrics_only_queries = 2 * static_cast<long long>(records_.size());
  state_.metrics.push_back(std::move(m));
  state_.next_iteration = t + 1;

  const auto& last = state_.metrics.back();
  spdlog::debug("iteration {}: delta={:.4f} chosen={:.4f} std={:.4f} loss={:.4f}", t, last.mean_delta,
                last.mean_chosen_score, last.mean_ensemble_std,
                report.step_losses.empty() ? 0.0 : report.step_losses.back());
  return last;
}

void Pipeline::run(int max_iterations) {
  for (int i = 0; !done() && (max_iterations < 0 || i < max_iterations); ++i) step();
}

}  // namespace activeduel
