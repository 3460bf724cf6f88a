#pragma once

// Response-pair selection methods. Each maps one prompt's candidate set, plus
// reward estimates or judge access depending on the method, to an ordered pair.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "activeduel/core.hpp"
#include "activeduel/oracle.hpp"
#include "activeduel/rng.hpp"

namespace activeduel {

enum class Method { kRandom, kMaxMin, kUltraFeedback, kDeltaQwen, kInfoMax, kDts, kMaxMinLcb, kDrts, kDeltaUcb };

inline constexpr std::array<Method, 9> kAllMethods = {Method::kRandom,   Method::kMaxMin,    Method::kUltraFeedback,
                                                      Method::kDeltaQwen, Method::kInfoMax,  Method::kDts,
                                                      Method::kMaxMinLcb, Method::kDrts,     Method::kDeltaUcb};

std::string_view method_name(Method m);
std::optional<Method> parse_method(std::string_view name);
/// "random, maxmin, ..." for diagnostics.
std::string method_list();
/// Whether the method reads ensemble reward estimates.
bool uses_estimates(Method m);

/// Access to judge scores for the heuristics that annotate candidates
/// themselves (MaxMin, UltraFeedback).
class JudgeHandle {
 public:
  virtual ~JudgeHandle() = default;
  /// Overall score of candidate j.
  virtual double overall(std::size_t j) = 0;
};

struct SelectionContext {
  const CandidateSet* candidates = nullptr;
  std::span<const RewardEstimate> estimates;
  JudgeHandle* judge = nullptr;
  UniformSource* rng = nullptr;
  double epsilon = 1e-9;
  int maxiter = 16;
  int strong_generator = -1;
  int weak_generator = -1;
};

struct SelectedPair {
  std::size_t first = 0;
  std::size_t second = 1;
  int annotations_spent = 0;
  bool fallback_used = false;

  friend bool operator==(const SelectedPair&, const SelectedPair&) = default;
};

SelectedPair select_random(const SelectionContext& ctx);
SelectedPair select_maxmin(const SelectionContext& ctx);
SelectedPair select_ultrafeedback(const SelectionContext& ctx);
SelectedPair select_deltaqwen(const SelectionContext& ctx);
SelectedPair select_infomax(const SelectionContext& ctx);
SelectedPair select_dts(const SelectionContext& ctx);
SelectedPair select_maxminlcb(const SelectionContext& ctx);
SelectedPair select_drts(const SelectionContext& ctx);
SelectedPair select_deltaucb(const SelectionContext& ctx);

SelectedPair select(Method method, const SelectionContext& ctx);

/// u_j ~ Uniform[lower_j, upper_j] independently; returns argmax (lowest index on ties).
std::size_t thompson_draw(std::span<const double> lower, std::span<const double> upper, UniformSource& rng);

}  // namespace activeduel
