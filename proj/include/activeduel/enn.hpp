#pragma once

// Epistemic ensemble reward model: K independent perceptron heads over a
// shared frozen feature space. The ensemble mean is the reward estimate and
// the spread between heads is the epistemic uncertainty.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "activeduel/core.hpp"
#include "activeduel/rng.hpp"

namespace activeduel {

struct EnnConfig {
  int num_heads = 20;
  int layers_per_head = 2;  // hidden layers; the output layer is extra
  int hidden_size = 128;
  double beta = 1.0;
  double learning_rate = 5e-5;
  int train_steps = 100;
  int minibatch_size = 64;  // pairs per optimizer step
  double gamma = 0.01;
  double zeta0 = 1.0;
  double zeta_decay = 0.999;
  int rho = 1000;
  int feature_dim = 0;

  void validate() const;
  friend bool operator==(const EnnConfig&, const EnnConfig&) = default;
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

/// d -> hidden (ReLU) -> ... -> hidden (ReLU) -> 1 (linear)
using Head = std::vector<DenseLayer>;

std::size_t parameter_count(const Head& head);
/// Squared L2 distance over every weight and bias.
double squared_distance(const Head& a, const Head& b);
/// Head outputs for each column of `inputs` (d x n).
Eigen::RowVectorXd head_forward(const Head& head, const Eigen::MatrixXd& inputs);

/// Flat parameter vector in layer order, weights column-major then bias.
std::vector<double> flatten(const Head& head);
void unflatten(Head& head, std::span<const double> params);

/// Adam moments for one head; same shapes as the head.
struct AdamState {
  Head first;
  Head second;
};

class EnnModel {
 public:
  static EnnModel init(const EnnConfig& config, std::uint64_t seed);
  /// Builds a model from explicit heads; anchors become copies of them.
  static EnnModel from_heads(const EnnConfig& config, std::vector<Head> heads);
  /// Copy with the trainable heads replaced; anchors, schedule and optimizer state are kept.
  EnnModel with_heads(std::vector<Head> heads) const;

  const EnnConfig& config() const { return config_; }
  const std::vector<Head>& heads() const { return heads_; }
  const std::vector<Head>& anchors() const { return anchors_; }
  std::size_t iteration_count() const { return iteration_count_; }
  std::uint64_t adam_steps() const { return adam_steps_; }

  /// Anchor-term weight zeta0 * zeta_decay^iteration_count.
  double zeta() const;

  RewardEstimate predict(std::span<const double> features) const;
  /// Estimates for each column of `features` (d x n).
  std::vector<RewardEstimate> predict_batch(const Eigen::MatrixXd& features) const;
  /// Raw per-head outputs, K values.
  std::vector<double> head_outputs(std::span<const double> features) const;

  void save(std::ostream& out) const;
  static EnnModel load(std::istream& in);

  friend bool operator==(const EnnModel& a, const EnnModel& b);

 private:
  friend struct EnnTrainer;
  EnnModel() = default;

  EnnConfig config_;
  std::vector<Head> heads_;
  std::vector<Head> anchors_;
  std::vector<AdamState> adam_;
  std::uint64_t adam_steps_ = 0;
  std::size_t iteration_count_ = 0;
};

/// One stored comparison with the features the ENN was shown.
struct ReplayItem {
  std::vector<double> chosen;
  std::vector<double> rejected;
  PreferenceTriplet triplet;
};

/// Append-only store of every comparison collected so far.
class ReplayBuffer {
 public:
  void append(ReplayItem item) { items_.push_back(std::move(item)); }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const ReplayItem& operator[](std::size_t i) const { return items_[i]; }
  const std::vector<ReplayItem>& items() const { return items_; }

 private:
  std::vector<ReplayItem> items_;
};

/// Indices of min(|B|, batch_size * rho) distinct buffer items, uniformly.
std::vector<std::size_t> replay_sample(const ReplayBuffer& buffer, int batch_size, int rho, UniformSource& rng);

/// Column-stacked features of a set of comparisons.
struct PairBatch {
  Eigen::MatrixXd chosen;    // d x n
  Eigen::MatrixXd rejected;  // d x n
  Eigen::Index size() const { return chosen.cols(); }
};

PairBatch make_batch(const ReplayBuffer& buffer, std::span<const std::size_t> indices);

struct LossBreakdown {
  double total = 0.0;
  // Each term already averaged over heads; total = nll + centering + anchor.
  double nll = 0.0;
  double centering = 0.0;
  double anchor = 0.0;
  double zeta = 0.0;
};

/// Regularized Bradley-Terry objective averaged over the heads.
LossBreakdown enn_loss(const EnnModel& model, const PairBatch& batch);

/// Objective plus its gradient with respect to every head.
LossBreakdown enn_loss_gradient(const EnnModel& model, const PairBatch& batch, std::vector<Head>& grads);

struct TrainReport {
  std::vector<double> step_losses;
  double zeta = 0.0;
  std::size_t train_size = 0;
};

/// One pipeline iteration of training: draws the replay sample once, runs
/// train_steps Adam steps over minibatches of it, and advances the zeta
/// schedule by one. `batch_size` is the pipeline batch size b.
TrainReport enn_train(EnnModel& model, const ReplayBuffer& buffer, int batch_size, Rng& rng);

/// Trains on an explicit batch (every step uses all of it); still advances the schedule.
TrainReport enn_train_on(EnnModel& model, const PairBatch& batch);

}  // namespace activeduel
