#include "activeduel/rng.hpp"

#include <algorithm>
#include <numeric>

#include "activeduel/core.hpp"

namespace activeduel {

std::size_t UniformSource::below(std::size_t n) {
  if (n == 0) throw Error("UniformSource::below: empty range");
  const auto idx = static_cast<std::size_t>(uniform() * static_cast<double>(n));
  return std::min(idx, n - 1);
}

namespace {

std::mt19937_64 seeded_engine(std::uint64_t seed, std::uint32_t purpose,
                              std::initializer_list<std::uint64_t> indices) {
  std::vector<std::uint32_t> words;
  words.reserve(3 + 2 * indices.size());
  words.push_back(static_cast<std::uint32_t>(seed));
  words.push_back(static_cast<std::uint32_t>(seed >> 32));
  words.push_back(purpose);
  for (auto v : indices) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

}  // namespace

Rng::Rng(std::uint64_t seed) : engine_(seeded_engine(seed, 0, {})) {}

Rng::Rng(std::uint64_t seed, Stream purpose, std::initializer_list<std::uint64_t> indices)
    : engine_(seeded_engine(seed, static_cast<std::uint32_t>(purpose), indices)) {}

double Rng::uniform() {
  // 53 random mantissa bits -> [0, 1)
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal(double mean, double stddev) {
  return mean + stddev * normal_(engine_);
}

double RecordedUniforms::uniform() {
  if (cursor_ >= values_.size()) {
    throw Error("RecordedUniforms: recorded draw sequence exhausted");
  }
  return values_[cursor_++];
}

double RecordingSource::uniform() {
  const double u = inner_.uniform();
  log_.push_back(u);
  return u;
}

std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, UniformSource& rng) {
  if (k > n) throw Error("sample_without_replacement: k exceeds population");
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.below(n - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace activeduel
