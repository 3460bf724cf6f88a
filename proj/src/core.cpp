#include "activeduel/core.hpp"

#include <cmath>
#include <sstream>
#include <utility>

namespace activeduel {

double sigmoid(double x) {
  if (std::isnan(x)) {
    throw NumericError("sigmoid: NaN input (invalid reward arithmetic upstream)");
  }
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double neg_log_sigmoid(double x) {
  if (std::isnan(x)) {
    throw NumericError("neg_log_sigmoid: NaN input");
  }
  // softplus(-x)
  return std::log1p(std::exp(-std::abs(x))) + std::max(-x, 0.0);
}

RewardEstimate RewardEstimate::from_moments(double mean, double std, double beta) {
  if (!std::isfinite(mean) || !std::isfinite(std)) {
    throw NumericError("RewardEstimate: non-finite mean or std");
  }
  if (std < 0.0) {
    throw ConfigError("RewardEstimate: std must be >= 0");
  }
  if (!(beta >= 0.0) || !std::isfinite(beta)) {
    throw ConfigError("RewardEstimate: beta must be finite and >= 0");
  }
  return RewardEstimate(mean, std, beta);
}

namespace {

void require_same_beta(const RewardEstimate& a, const RewardEstimate& b) {
  if (a.beta() != b.beta()) {
    std::ostringstream os;
    os << "reward estimates built with different beta (" << a.beta() << " vs " << b.beta() << ")";
    throw ConfigError(os.str());
  }
}

}  // namespace

double ucb_pref_prob(const RewardEstimate& a, const RewardEstimate& b) {
  require_same_beta(a, b);
  return sigmoid(a.upper() - b.lower());
}

double lcb_pref_prob(const RewardEstimate& a, const RewardEstimate& b) {
  require_same_beta(a, b);
  return sigmoid(a.lower() - b.upper());
}

double pair_width(const RewardEstimate& a, const RewardEstimate& b) {
  // Evaluate in a canonical operand order so the width is bitwise symmetric,
  // and as ucb - lcb so that zero-std pairs give exactly zero.
  const bool swap = std::pair(b.mean(), b.std()) < std::pair(a.mean(), a.std());
  const auto& x = swap ? b : a;
  const auto& y = swap ? a : b;
  return ucb_pref_prob(x, y) - lcb_pref_prob(x, y);
}

void validate_triplet(const PreferenceTriplet& t, bool check_order) {
  auto fail = [&](const std::string& what) {
    std::ostringstream os;
    os << "invalid triplet (prompt " << t.prompt_id << ", iteration " << t.iteration << "): " << what;
    throw Error(os.str());
  };
  if (t.chosen_id == t.rejected_id) fail("chosen_id equals rejected_id");
  if (!(t.chosen_score >= 1.0 && t.chosen_score <= 5.0)) fail("chosen_score outside [1,5]");
  if (!(t.rejected_score >= 1.0 && t.rejected_score <= 5.0)) fail("rejected_score outside [1,5]");
  if (t.iteration < 0) fail("negative iteration");
  if (t.tie) {
    if (std::abs(t.chosen_score - t.rejected_score) >= kTieTolerance) fail("tie flag set on unequal scores");
  } else if (check_order && t.chosen_score < t.rejected_score) {
    fail("chosen_score below rejected_score");
  }
}

}  // namespace activeduel
