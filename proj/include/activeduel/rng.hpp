#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace activeduel {

/// Source of uniform variates on [0, 1). Every stochastic choice in the
/// selection module is expressed through this interface so draws can be
/// recorded and replayed.
class UniformSource {
 public:
  virtual ~UniformSource() = default;
  virtual double uniform() = 0;

  /// Index in [0, n) derived from a single uniform draw.
  std::size_t below(std::size_t n);
};

/// Purposes that get their own independent stream.
enum class Stream : std::uint32_t {
  kEnvSetup = 1,
  kPromptContext,
  kPromptOrder,
  kGenerate,
  kSelect,
  kJudge,
  kAnnotate,
  kTrain,
  kEnnInit,
};

/// Seeded pseudo-random stream. There is no global generator: callers derive
/// a stream per (seed, purpose, indices) so per-prompt work is reproducible
/// regardless of evaluation order.
class Rng final : public UniformSource {
 public:
  explicit Rng(std::uint64_t seed);
  Rng(std::uint64_t seed, Stream purpose, std::initializer_list<std::uint64_t> indices = {});

  double uniform() override;
  double normal(double mean = 0.0, double stddev = 1.0);
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

/// Replays a fixed sequence of uniforms; throws when exhausted.
class RecordedUniforms final : public UniformSource {
 public:
  explicit RecordedUniforms(std::vector<double> values) : values_(std::move(values)) {}
  double uniform() override;
  std::size_t consumed() const { return cursor_; }

 private:
  std::vector<double> values_;
  std::size_t cursor_ = 0;
};

/// Forwards to another source and keeps a log of every draw.
class RecordingSource final : public UniformSource {
 public:
  explicit RecordingSource(UniformSource& inner) : inner_(inner) {}
  double uniform() override;
  const std::vector<double>& log() const { return log_; }

 private:
  UniformSource& inner_;
  std::vector<double> log_;
};

/// k distinct indices from [0, n), uniformly without replacement (partial Fisher-Yates).
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, UniformSource& rng);

}  // namespace activeduel
