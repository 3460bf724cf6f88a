// activeduel: run the active preference-collection loop and analyze its datasets.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "activeduel/analytics.hpp"
#include "activeduel/io.hpp"
#include "activeduel/logging.hpp"
#include "activeduel/pipeline.hpp"

namespace fs = std::filesystem;
using namespace activeduel;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

std::ofstream open_out(const fs::path& p, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(p, mode);
  if (!out) throw Error("cannot write " + p.string());
  return out;
}

void write_outputs(const Pipeline& pipeline, const fs::path& dir) {
  fs::create_directories(dir);
  const fs::path triplets = dir / "triplets.jsonl";
  {
    auto out = open_out(triplets);
    write_jsonl(out, pipeline.dataset());
  }
  {
    auto out = open_out(dir / "metrics.csv");
    write_metrics_csv(out, pipeline.metrics());
  }
  {
    auto out = open_out(dir / "generator_counts.csv");
    write_generator_counts_csv(out, pipeline.metrics());
  }
  {
    auto out = open_out(dir / "checkpoint.bin", std::ios::out | std::ios::binary);
    save_checkpoint(out, pipeline);
  }

  long long selection = 0, metrics_only = 0;
  for (const auto& m : pipeline.metrics()) {
    selection += m.selection_queries;
    metrics_only += m.metrics_only_queries;
  }
  nlohmann::ordered_json manifest;
  manifest["config_sha256"] = config_hash(pipeline.config());
  manifest["seed"] = pipeline.config().seed;
  manifest["method"] = std::string(method_name(pipeline.config().method));
  manifest["iterations_completed"] = pipeline.next_iteration();
  manifest["iterations_total"] = pipeline.num_iterations();
  manifest["complete"] = pipeline.done();
  manifest["triplets"] = pipeline.dataset().size();
  manifest["judge_queries"] = pipeline.metrics().empty() ? 0 : pipeline.metrics().back().cumulative_annotations;
  manifest["selection_judge_queries"] = selection;
  manifest["metrics_only_queries"] = metrics_only;
  manifest["triplets_sha256"] = sha256_file(triplets);
  manifest["config"] = run_config_to_json(pipeline.config());
  auto out = open_out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
}

void drive(Pipeline& pipeline, int stop_after) {
  const auto t0 = std::chrono::steady_clock::now();
  pipeline.run(stop_after);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  spdlog::info("processed up to iteration {}/{} in {:.2f}s", pipeline.next_iteration(), pipeline.num_iterations(),
               secs);
}

std::vector<std::size_t> parse_sizes(const std::string& list) {
  std::vector<std::size_t> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v <= 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::logic_error&) {
      throw ConfigError("--prefix-sizes: '" + item + "' is not a positive integer");
    }
  }
  if (out.empty()) throw ConfigError("--prefix-sizes: empty list");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"Active preference-data collection with epistemic reward ensembles"};
  app.require_subcommand(1);

  std::string config_path, method, out_dir = "out", oracle, checkpoint_path, dataset_path, env_dump_path, sizes;
  std::optional<std::uint64_t> seed;
  int stop_after = -1;

  auto* run = app.add_subcommand("run", "Run the collection loop");
  run->add_option("--config", config_path, "JSON run config (defaults when omitted)");
  run->add_option("--seed", seed, "Override the run seed");
  run->add_option("--method", method, "Selection method: " + method_list());
  run->add_option("--oracle", oracle, "Annotator: likert or bernoulli");
  run->add_option("--out", out_dir, "Output directory");
  run->add_option("--stop-after", stop_after, "Stop after this many iterations (resume later)");

  auto* resume = app.add_subcommand("resume", "Continue a run from its checkpoint");
  resume->add_option("--checkpoint", checkpoint_path, "checkpoint.bin written by run")->required();
  resume->add_option("--out", out_dir, "Output directory");
  resume->add_option("--stop-after", stop_after, "Stop after this many more iterations");

  auto* analyze = app.add_subcommand("analyze", "Summarize a triplet dataset");
  analyze->add_option("dataset", dataset_path, "triplets.jsonl")->required();
  analyze->add_option("--env-dump", env_dump_path, "Oracle env dump for regret columns");

  auto* prefix = app.add_subcommand("prefix-eval", "Statistics over dataset prefixes");
  prefix->add_option("dataset", dataset_path, "triplets.jsonl")->required();
  prefix->add_option("--prefix-sizes", sizes, "Comma-separated prefix lengths")->required();

  auto* dump = app.add_subcommand("dump-env", "Write oracle-side generator profiles and prompt contexts");
  dump->add_option("--config", config_path, "JSON run config (defaults when omitted)");
  dump->add_option("--out", out_dir, "Output file")->default_val("env_dump.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) {
      RunConfig config = config_path.empty() ? RunConfig{} : load_run_config(config_path);
      if (config_path.empty()) config.enn.feature_dim = config.env.feature_dim;
      if (seed) config.seed = *seed;
      if (!method.empty()) {
        auto m = parse_method(method);
        if (!m) throw ConfigError("--method '" + method + "' is not one of: " + method_list());
        config.method = *m;
      }
      if (!oracle.empty()) {
        if (oracle == "likert") {
          config.annotator = Annotator::kLikert;
        } else if (oracle == "bernoulli") {
          config.annotator = Annotator::kBernoulli;
        } else {
          throw ConfigError("--oracle '" + oracle + "' is not one of: likert, bernoulli");
        }
      }
      config = run_config_from_json(run_config_to_json(config));  // full validation with field names
      Pipeline pipeline(config);
      drive(pipeline, stop_after);
      write_outputs(pipeline, out_dir);
    } else if (*resume) {
      std::ifstream in(checkpoint_path, std::ios::binary);
      if (!in) throw Error("cannot open checkpoint " + checkpoint_path);
      Pipeline pipeline = load_checkpoint(in);
      drive(pipeline, stop_after);
      write_outputs(pipeline, out_dir);
    } else if (*analyze) {
      const auto data = read_jsonl_file(dataset_path);
      std::optional<EnvDump> env;
      if (!env_dump_path.empty()) env = load_env_dump(env_dump_path);
      print_report(std::cout, analyze_dataset(data, env ? &*env : nullptr));
    } else if (*prefix) {
      const auto wanted = parse_sizes(sizes);
      const auto data = read_jsonl_file(dataset_path);
      write_prefix_csv(std::cout, prefix_eval(data, wanted));
    } else if (*dump) {
      RunConfig config = config_path.empty() ? RunConfig{} : load_run_config(config_path);
      Environment env(config.env);
      auto out = open_out(out_dir);
      out << env_dump_json(env, config.num_prompts).dump(2) << '\n';
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
