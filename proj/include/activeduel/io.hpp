#pragma once

// Serialized forms: run config (JSON), triplets (JSONL), metrics (CSV),
// resumable checkpoints (binary), oracle environment dumps (JSON).

#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "activeduel/pipeline.hpp"

namespace activeduel {

// ---- run config ----------------------------------------------------------

nlohmann::ordered_json run_config_to_json(const RunConfig& config);
/// Missing keys take their defaults; unknown keys, wrong types and range
/// violations are collected and reported together as a ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

std::string_view annotator_name(Annotator a);

// ---- hashing -------------------------------------------------------------

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);
/// SHA-256 of the canonical config JSON.
std::string config_hash(const RunConfig& config);

// ---- triplets ------------------------------------------------------------

/// One JSON object, fixed field order, no trailing newline.
std::string triplet_to_json_line(const PreferenceTriplet& t);
/// Parses one line; errors name `line_no`.
PreferenceTriplet triplet_from_json_line(std::string_view line, std::size_t line_no);

void write_jsonl(std::ostream& out, std::span<const PreferenceTriplet> triplets);
std::vector<PreferenceTriplet> read_jsonl(std::istream& in);
std::vector<PreferenceTriplet> read_jsonl_file(const std::filesystem::path& path);

// ---- metrics -------------------------------------------------------------

/// Column order of metrics.csv.
const std::vector<std::string>& metrics_columns();
void write_metrics_csv(std::ostream& out, std::span<const IterationMetrics> metrics);
/// Reads metrics.csv; rejects unknown or missing columns. Per-generator counts
/// live in generator_counts.csv and are left empty here.
std::vector<IterationMetrics> read_metrics_csv(std::istream& in);

/// iteration,generator_id,chosen,rejected
void write_generator_counts_csv(std::ostream& out, std::span<const IterationMetrics> metrics);

// ---- checkpoints ---------------------------------------------------------

void save_checkpoint(std::ostream& out, const Pipeline& pipeline);
Pipeline load_checkpoint(std::istream& in);

// ---- oracle environment dump ---------------------------------------------

struct EnvDump {
  std::vector<GeneratorProfile> generators;
  std::map<int, std::vector<double>> prompt_contexts;

  /// base_quality + skill . context for a prompt in the dump.
  double expected_utility(int generator_id, int prompt_id) const;
};

nlohmann::ordered_json env_dump_json(const Environment& env, int num_prompts);
EnvDump env_dump_from_json(const nlohmann::json& j);
EnvDump load_env_dump(const std::filesystem::path& path);

}  // namespace activeduel
