#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace activeduel {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or violated precondition on user-supplied values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite arithmetic (NaN rewards, diverging training).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Scores closer than this are a tie at annotation time.
inline constexpr double kTieTolerance = 1e-9;

/// Stable logistic function 1 / (1 + exp(-x)). Throws NumericError on NaN.
double sigmoid(double x);

/// -log(sigmoid(x)) without cancellation for large |x|.
double neg_log_sigmoid(double x);

/// Ensemble reward estimate for a single response.
///
/// The bounds are always derived from (mean, std, beta) so that
/// lower = mean - beta * std and upper = mean + beta * std hold exactly.
class RewardEstimate {
 public:
  RewardEstimate() = default;

  static RewardEstimate from_moments(double mean, double std, double beta);

  double mean() const { return mean_; }
  double std() const { return std_; }
  double lower() const { return lower_; }
  double upper() const { return upper_; }
  double beta() const { return beta_; }

  friend bool operator==(const RewardEstimate&, const RewardEstimate&) = default;

 private:
  RewardEstimate(double mean, double std, double beta)
      : mean_(mean), std_(std), lower_(mean - beta * std), upper_(mean + beta * std), beta_(beta) {}

  double mean_ = 0.0;
  double std_ = 0.0;
  double lower_ = 0.0;
  double upper_ = 0.0;
  double beta_ = 1.0;
};

/// Optimistic win probability s(upper(a) - lower(b)).
double ucb_pref_prob(const RewardEstimate& a, const RewardEstimate& b);

/// Pessimistic win probability s(lower(a) - upper(b)).
double lcb_pref_prob(const RewardEstimate& a, const RewardEstimate& b);

/// Width of the preference-probability confidence interval for (a, b).
double pair_width(const RewardEstimate& a, const RewardEstimate& b);

/// One annotated comparison: the unit appended to the dataset each loop.
struct PreferenceTriplet {
  int prompt_id = 0;
  int chosen_id = 0;
  int rejected_id = 0;
  int chosen_generator = 0;
  int rejected_generator = 0;
  double chosen_score = 1.0;
  double rejected_score = 1.0;
  bool tie = false;
  int iteration = 0;
  std::string method;
  // Scores were recorded for analytics only; the preference is structural.
  bool metrics_only = false;

  friend bool operator==(const PreferenceTriplet&, const PreferenceTriplet&) = default;
};

/// Checks the triplet invariants. `check_order` enables the
/// chosen_score >= rejected_score rule, which only holds for score-based judges.
void validate_triplet(const PreferenceTriplet& t, bool check_order = true);

}  // namespace activeduel
