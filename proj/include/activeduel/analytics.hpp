#pragma once

// Dataset-level reports: per-method score summaries, per-generator
// chosen/rejected counts, and prefix (sample-efficiency) trajectories.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "activeduel/core.hpp"
#include "activeduel/io.hpp"

namespace activeduel {

struct MethodSummary {
  std::string method;
  std::size_t count = 0;
  double mean_chosen = 0.0;
  double mean_rejected = 0.0;
  double mean_overall = 0.0;
  double mean_delta = 0.0;
  double tie_rate = 0.0;
  std::vector<int> chosen_counts;    // indexed by generator id
  std::vector<int> rejected_counts;  // indexed by generator id
  std::optional<double> mean_expected_regret;  // needs an env dump
};

struct AnalysisReport {
  std::vector<MethodSummary> methods;  // sorted by method name
  bool empty() const { return methods.empty(); }
};

AnalysisReport analyze_dataset(std::span<const PreferenceTriplet> triplets, const EnvDump* env = nullptr);
void print_report(std::ostream& out, const AnalysisReport& report);

struct PrefixRow {
  std::size_t prefix = 0;
  double mean_chosen = 0.0;
  double std_chosen = 0.0;
  double mean_rejected = 0.0;
  double mean_delta = 0.0;
  double tie_rate = 0.0;
};

/// Statistics over the first k triplets for each requested k.
std::vector<PrefixRow> prefix_eval(std::span<const PreferenceTriplet> triplets, std::span<const std::size_t> sizes);
void write_prefix_csv(std::ostream& out, std::span<const PrefixRow> rows);

}  // namespace activeduel
