#include "activeduel/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>

#include <fmt/format.h>

namespace activeduel {

AnalysisReport analyze_dataset(std::span<const PreferenceTriplet> triplets, const EnvDump* env) {
  std::map<std::string, std::vector<const PreferenceTriplet*>> by_method;
  for (const auto& t : triplets) by_method[t.method].push_back(&t);

  AnalysisReport report;
  for (const auto& [method, rows] : by_method) {
    MethodSummary s;
    s.method = method;
    s.count = rows.size();
    double chosen = 0.0, rejected = 0.0, regret = 0.0;
    int ties = 0;
    for (const auto* t : rows) {
      chosen += t->chosen_score;
      rejected += t->rejected_score;
      ties += t->tie ? 1 : 0;
      const auto need = static_cast<std::size_t>(std::max(t->chosen_generator, t->rejected_generator)) + 1;
      if (s.chosen_counts.size() < need) {
        s.chosen_counts.resize(need, 0);
        s.rejected_counts.resize(need, 0);
      }
      ++s.chosen_counts[t->chosen_generator];
      ++s.rejected_counts[t->rejected_generator];
      if (env) {
        double best = -HUGE_VAL;
        for (const auto& g : env->generators) best = std::max(best, env->expected_utility(g.generator_id, t->prompt_id));
        const double got = 0.5 * (env->expected_utility(t->chosen_generator, t->prompt_id) +
                                  env->expected_utility(t->rejected_generator, t->prompt_id));
        regret += std::max(0.0, best - got);
      }
    }
    const double n = static_cast<double>(rows.size());
    s.mean_chosen = chosen / n;
    s.mean_rejected = rejected / n;
    s.mean_overall = 0.5 * (s.mean_chosen + s.mean_rejected);
    s.mean_delta = (chosen - rejected) / n;
    s.tie_rate = ties / n;
    if (env) s.mean_expected_regret = regret / n;
    report.methods.push_back(std::move(s));
  }
  return report;
}

void print_report(std::ostream& out, const AnalysisReport& report) {
  if (report.empty()) {
    out << "no data\n";
    return;
  }
  const bool regret = report.methods.front().mean_expected_regret.has_value();
  out << "method,count,mean_chosen,mean_rejected,mean_overall,mean_delta,tie_rate";
  if (regret) out << ",mean_expected_regret";
  out << '\n';
  for (const auto& s : report.methods) {
    out << fmt::format("{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}", s.method, s.count, s.mean_chosen, s.mean_rejected,
                       s.mean_overall, s.mean_delta, s.tie_rate);
    if (regret) out << fmt::format(",{:.6f}", *s.mean_expected_regret);
    out << '\n';
  }
  out << "\nmethod,generator_id,chosen,rejected\n";
  for (const auto& s : report.methods) {
    for (std::size_t g = 0; g < s.chosen_counts.size(); ++g) {
      out << s.method << ',' << g << ',' << s.chosen_counts[g] << ',' << s.rejected_counts[g] << '\n';
    }
  }
}

std::vector<PrefixRow> prefix_eval(std::span<const PreferenceTriplet> triplets, std::span<const std::size_t> sizes) {
  std::vector<PrefixRow> rows;
  for (std::size_t k : sizes) {
    if (k == 0) throw Error("prefix-eval: prefix size must be positive");
    if (k > triplets.size()) {
      throw Error("prefix-eval: prefix " + std::to_string(k) + " exceeds dataset length " +
                  std::to_string(triplets.size()));
    }
    PrefixRow r;
    r.prefix = k;
    double chosen = 0.0, chosen_sq = 0.0, rejected = 0.0;
    int ties = 0;
    for (std::size_t i = 0; i < k; ++i) {
      chosen += triplets[i].chosen_score;
      chosen_sq += triplets[i].chosen_score * triplets[i].chosen_score;
      rejected += triplets[i].rejected_score;
      ties += triplets[i].tie ? 1 : 0;
    }
    const double n = static_cast<double>(k);
    r.mean_chosen = chosen / n;
    r.std_chosen = std::sqrt(std::max(0.0, chosen_sq / n - r.mean_chosen * r.mean_chosen));
    r.mean_rejected = rejected / n;
    r.mean_delta = (chosen - rejected) / n;
    r.tie_rate = ties / n;
    rows.push_back(r);
  }
  return rows;
}

void write_prefix_csv(std::ostream& out, std::span<const PrefixRow> rows) {
  out << "prefix,mean_chosen,std_chosen,mean_rejected,mean_delta,tie_rate\n";
  for (const auto& r : rows) {
    out << fmt::format("{},{},{},{},{},{}\n", r.prefix, r.mean_chosen, r.std_chosen, r.mean_rejected, r.mean_delta,
                       r.tie_rate);
  }
}

}  // namespace activeduel
