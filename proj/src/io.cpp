#include "activeduel/io.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "activeduel/binary_io.hpp"

namespace activeduel {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr char kCheckpointMagic[8] = {'A', 'D', 'R', 'U', 'N', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

// Collects field-level problems while reading a config object.
class FieldReader {
 public:
  FieldReader(const json& obj, std::string prefix, std::vector<std::string>& errors)
      : obj_(obj), prefix_(std::move(prefix)), errors_(errors) {}

  template <typename T>
  void read(const char* key, T& target) {
    seen_.push_back(key);
    if (!obj_.contains(key)) return;
    const json& v = obj_.at(key);
    if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) return error(key, "expected a number");
      target = v.get<double>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) return error(key, "expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_unsigned() || v.get<long long>() >= 0) {
          target = v.get<T>();
        } else {
          error(key, "expected a non-negative integer");
        }
      } else {
        target = v.get<T>();
      }
    } else {
      if (!v.is_string()) return error(key, "expected a string");
      target = v.get<std::string>();
    }
  }

  const json* object(const char* key) {
    seen_.push_back(key);
    if (!obj_.contains(key)) return nullptr;
    if (!obj_.at(key).is_object()) {
      error(key, "expected an object");
      return nullptr;
    }
    return &obj_.at(key);
  }

  void reject_unknown() {
    for (const auto& [k, v] : obj_.items()) {
      if (std::find(seen_.begin(), seen_.end(), k) == seen_.end()) error(k.c_str(), "unknown field");
    }
  }

  void error(const char* key, const std::string& what) { errors_.push_back(prefix_ + key + ": " + what); }

 private:
  const json& obj_;
  std::string prefix_;
  std::vector<std::string>& errors_;
  std::vector<std::string> seen_;
};

template <typename Fn>
void collect(std::vector<std::string>& errors, Fn&& check) {
  try {
    check();
  } catch (const ConfigError& e) {
    std::istringstream parts(e.what());
    std::string part;
    while (std::getline(parts, part, ';')) {
      const auto first = part.find_first_not_of(' ');
      if (first != std::string::npos) errors.push_back(part.substr(first));
    }
  }
}

std::string fmt_double(double v) { return fmt::format("{}", v); }

}  // namespace

std::string_view annotator_name(Annotator a) { return a == Annotator::kLikert ? "likert" : "bernoulli"; }

ordered_json run_config_to_json(const RunConfig& c) {
  ordered_json j;
  j["method"] = std::string(method_name(c.method));
  j["seed"] = c.seed;
  j["num_prompts"] = c.num_prompts;
  j["batch_size"] = c.batch_size;
  j["epsilon"] = c.epsilon;
  j["maxiter"] = c.maxiter;
  j["strong_generator"] = c.strong_generator;
  j["weak_generator"] = c.weak_generator;
  j["oracle"] = std::string(annotator_name(c.annotator));
  auto& e = j["env"];
  e["num_generators"] = c.env.num_generators;
  e["feature_dim"] = c.env.feature_dim;
  e["context_dim"] = c.env.context_dim;
  e["quality_noise_std"] = c.env.quality_noise_std;
  e["aspect_noise_std"] = c.env.aspect_noise_std;
  e["logit_sharpness"] = c.env.logit_sharpness;
  e["skill_spread"] = c.env.skill_spread;
  e["seed"] = c.env.seed;
  auto& n = j["enn"];
  n["num_heads"] = c.enn.num_heads;
  n["layers_per_head"] = c.enn.layers_per_head;
  n["hidden_size"] = c.enn.hidden_size;
  n["beta"] = c.enn.beta;
  n["learning_rate"] = c.enn.learning_rate;
  n["train_steps"] = c.enn.train_steps;
  n["minibatch_size"] = c.enn.minibatch_size;
  n["gamma"] = c.enn.gamma;
  n["zeta0"] = c.enn.zeta0;
  n["zeta_decay"] = c.enn.zeta_decay;
  n["rho"] = c.enn.rho;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  std::vector<std::string> errors;
  RunConfig c;
  if (!j.is_object()) throw ConfigError("config: top level must be an object");

  FieldReader top(j, "", errors);
  std::string method = std::string(method_name(c.method));
  std::string oracle = "likert";
  top.read("method", method);
  top.read("seed", c.seed);
  top.read("num_prompts", c.num_prompts);
  top.read("batch_size", c.batch_size);
  top.read("epsilon", c.epsilon);
  top.read("maxiter", c.maxiter);
  top.read("strong_generator", c.strong_generator);
  top.read("weak_generator", c.weak_generator);
  top.read("oracle", oracle);
  if (auto m = parse_method(method)) {
    c.method = *m;
  } else {
    top.error("method", "'" + method + "' is not one of: " + method_list());
  }
  if (oracle == "likert") {
    c.annotator = Annotator::kLikert;
  } else if (oracle == "bernoulli") {
    c.annotator = Annotator::kBernoulli;
  } else {
    top.error("oracle", "'" + oracle + "' is not one of: likert, bernoulli");
  }

  if (const json* e = top.object("env")) {
    FieldReader env(*e, "env.", errors);
    env.read("num_generators", c.env.num_generators);
    env.read("feature_dim", c.env.feature_dim);
    env.read("context_dim", c.env.context_dim);
    env.read("quality_noise_std", c.env.quality_noise_std);
    env.read("aspect_noise_std", c.env.aspect_noise_std);
    env.read("logit_sharpness", c.env.logit_sharpness);
    env.read("skill_spread", c.env.skill_spread);
    env.read("seed", c.env.seed);
    env.reject_unknown();
  }
  c.enn.feature_dim = c.env.feature_dim;
  if (const json* n = top.object("enn")) {
    FieldReader enn(*n, "enn.", errors);
    enn.read("num_heads", c.enn.num_heads);
    enn.read("layers_per_head", c.enn.layers_per_head);
    enn.read("hidden_size", c.enn.hidden_size);
    enn.read("beta", c.enn.beta);
    enn.read("learning_rate", c.enn.learning_rate);
    enn.read("train_steps", c.enn.train_steps);
    enn.read("minibatch_size", c.enn.minibatch_size);
    enn.read("gamma", c.enn.gamma);
    enn.read("zeta0", c.enn.zeta0);
    enn.read("zeta_decay", c.enn.zeta_decay);
    enn.read("rho", c.enn.rho);
    enn.read("feature_dim", c.enn.feature_dim);
    enn.reject_unknown();
  }
  top.reject_unknown();

  if (errors.empty()) collect(errors, [&] { c.validate(); });
  if (!errors.empty()) {
    std::string msg = "invalid config:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256: digest failed");
  }
  std::string hex;
  hex.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return sha256_hex(buf.str());
}

std::string config_hash(const RunConfig& config) { return sha256_hex(run_config_to_json(config).dump()); }

std::string triplet_to_json_line(const PreferenceTriplet& t) {
  ordered_json j;
  j["prompt_id"] = t.prompt_id;
  j["iteration"] = t.iteration;
  j["method"] = t.method;
  j["chosen"] = {{"candidate_id", t.chosen_id}, {"generator_id", t.chosen_generator}, {"score", t.chosen_score}};
  j["rejected"] = {{"candidate_id", t.rejected_id}, {"generator_id", t.rejected_generator}, {"score", t.rejected_score}};
  j["tie"] = t.tie;
  return j.dump();
}

PreferenceTriplet triplet_from_json_line(std::string_view line, std::size_t line_no) {
  const std::string where = "line " + std::to_string(line_no) + ": ";
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw Error(where + "malformed JSON (" + e.what() + ")");
  }
  try {
    PreferenceTriplet t;
    t.prompt_id = j.at("prompt_id").get<int>();
    t.iteration = j.at("iteration").get<int>();
    t.method = j.at("method").get<std::string>();
    const auto& c = j.at("chosen");
    const auto& r = j.at("rejected");
    t.chosen_id = c.at("candidate_id").get<int>();
    t.chosen_generator = c.at("generator_id").get<int>();
    t.chosen_score = c.at("score").get<double>();
    t.rejected_id = r.at("candidate_id").get<int>();
    t.rejected_generator = r.at("generator_id").get<int>();
    t.rejected_score = r.at("score").get<double>();
    t.tie = j.at("tie").get<bool>();
    t.metrics_only = t.method == method_name(Method::kDeltaQwen);
    validate_triplet(t, false);
    return t;
  } catch (const json::exception& e) {
    throw Error(where + "schema error (" + e.what() + ")");
  } catch (const Error& e) {
    throw Error(where + e.what());
  }
}

void write_jsonl(std::ostream& out, std::span<const PreferenceTriplet> triplets) {
  for (const auto& t : triplets) out << triplet_to_json_line(t) << '\n';
}

std::vector<PreferenceTriplet> read_jsonl(std::istream& in) {
  std::vector<PreferenceTriplet> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(triplet_from_json_line(line, line_no));
  }
  return out;
}

std::vector<PreferenceTriplet> read_jsonl_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset " + path.string());
  return read_jsonl(in);
}

const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols = {
      "iteration",          "prompts",           "cumulative_annotations", "selection_queries",
      "metrics_only_queries", "mean_chosen_score", "mean_rejected_score",  "mean_delta",
      "dueling_regret",     "cumulative_dueling_regret", "mean_ensemble_std", "fallback_rate",
      "tie_rate",           "best_chosen_rate",  "mean_selected_width",    "mean_pair_width",
      "zeta",               "replay_size"};
  return cols;
}

void write_metrics_csv(std::ostream& out, std::span<const IterationMetrics> metrics) {
  const auto& cols = metrics_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const auto& m : metrics) {
    out << m.iteration << ',' << m.prompts << ',' << m.cumulative_annotations << ',' << m.selection_queries << ','
        << m.metrics_only_queries << ',' << fmt_double(m.mean_chosen_score) << ',' << fmt_double(m.mean_rejected_score)
        << ',' << fmt_double(m.mean_delta) << ',' << fmt_double(m.dueling_regret) << ','
        << fmt_double(m.cumulative_dueling_regret) << ',' << fmt_double(m.mean_ensemble_std) << ','
        << fmt_double(m.fallback_rate) << ',' << fmt_double(m.tie_rate) << ',' << fmt_double(m.best_chosen_rate) << ','
        << fmt_double(m.mean_selected_width) << ',' << fmt_double(m.mean_pair_width) << ',' << fmt_double(m.zeta)
        << ',' << m.replay_size << '\n';
  }
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::vector<IterationMetrics> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error("metrics csv: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv(line);
  const auto& cols = metrics_columns();
  for (const auto& h : header) {
    if (std::find(cols.begin(), cols.end(), h) == cols.end()) throw Error("metrics csv: unknown column '" + h + "'");
  }
  if (header != cols) throw Error("metrics csv: columns missing or out of order");

  std::vector<IterationMetrics> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != cols.size()) throw Error("metrics csv line " + std::to_string(line_no) + ": wrong cell count");
    try {
      IterationMetrics m;
      std::size_t i = 0;
      m.iteration = std::stoi(cells[i++]);
      m.prompts = std::stoi(cells[i++]);
      m.cumulative_annotations = std::stoll(cells[i++]);
      m.selection_queries = std::stoll(cells[i++]);
      m.metrics_only_queries = std::stoll(cells[i++]);
      for (double* d : {&m.mean_chosen_score, &m.mean_rejected_score, &m.mean_delta, &m.dueling_regret,
                        &m.cumulative_dueling_regret, &m.mean_ensemble_std, &m.fallback_rate, &m.tie_rate,
                        &m.best_chosen_rate, &m.mean_selected_width, &m.mean_pair_width, &m.zeta}) {
        *d = std::stod(cells[i++]);
      }
      m.replay_size = std::stoull(cells[i++]);
      out.push_back(std::move(m));
    } catch (const std::logic_error&) {
      throw Error("metrics csv line " + std::to_string(line_no) + ": unparsable value");
    }
  }
  return out;
}

void write_generator_counts_csv(std::ostream& out, std::span<const IterationMetrics> metrics) {
  out << "iteration,generator_id,chosen,rejected\n";
  for (const auto& m : metrics) {
    for (std::size_t g = 0; g < m.chosen_counts.size(); ++g) {
      out << m.iteration << ',' << g << ',' << m.chosen_counts[g] << ',' << m.rejected_counts[g] << '\n';
    }
  }
}

namespace {

ordered_json metrics_to_json(const IterationMetrics& m) {
  ordered_json j;
  j["iteration"] = m.iteration;
  j["prompts"] = m.prompts;
  j["cumulative_annotations"] = m.cumulative_annotations;
  j["selection_queries"] = m.selection_queries;
  j["metrics_only_queries"] = m.metrics_only_queries;
  j["mean_chosen_score"] = m.mean_chosen_score;
  j["mean_rejected_score"] = m.mean_rejected_score;
  j["mean_delta"] = m.mean_delta;
  j["dueling_regret"] = m.dueling_regret;
  j["cumulative_dueling_regret"] = m.cumulative_dueling_regret;
  j["mean_ensemble_std"] = m.mean_ensemble_std;
  j["fallback_rate"] = m.fallback_rate;
  j["tie_rate"] = m.tie_rate;
  j["best_chosen_rate"] = m.best_chosen_rate;
  j["mean_selected_width"] = m.mean_selected_width;
  j["mean_pair_width"] = m.mean_pair_width;
  j["zeta"] = m.zeta;
  j["replay_size"] = m.replay_size;
  j["chosen_counts"] = m.chosen_counts;
  j["rejected_counts"] = m.rejected_counts;
  return j;
}

IterationMetrics metrics_from_json(const json& j) {
  IterationMetrics m;
  m.iteration = j.at("iteration").get<int>();
  m.prompts = j.at("prompts").get<int>();
  m.cumulative_annotations = j.at("cumulative_annotations").get<long long>();
  m.selection_queries = j.at("selection_queries").get<long long>();
  m.metrics_only_queries = j.at("metrics_only_queries").get<long long>();
  m.mean_chosen_score = j.at("mean_chosen_score").get<double>();
  m.mean_rejected_score = j.at("mean_rejected_score").get<double>();
  m.mean_delta = j.at("mean_delta").get<double>();
  m.dueling_regret = j.at("dueling_regret").get<double>();
  m.cumulative_dueling_regret = j.at("cumulative_dueling_regret").get<double>();
  m.mean_ensemble_std = j.at("mean_ensemble_std").get<double>();
  m.fallback_rate = j.at("fallback_rate").get<double>();
  m.tie_rate = j.at("tie_rate").get<double>();
  m.best_chosen_rate = j.at("best_chosen_rate").get<double>();
  m.mean_selected_width = j.at("mean_selected_width").get<double>();
  m.mean_pair_width = j.at("mean_pair_width").get<double>();
  m.zeta = j.at("zeta").get<double>();
  m.replay_size = j.at("replay_size").get<std::size_t>();
  m.chosen_counts = j.at("chosen_counts").get<std::vector<int>>();
  m.rejected_counts = j.at("rejected_counts").get<std::vector<int>>();
  return m;
}

}  // namespace

void save_checkpoint(std::ostream& out, const Pipeline& pipeline) {
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  binio::write_pod(out, kCheckpointVersion);
  binio::write_string(out, run_config_to_json(pipeline.config()).dump());
  binio::write_pod<std::int64_t>(out, pipeline.next_iteration());
  pipeline.model().save(out);

  const auto& buffer = pipeline.buffer();
  binio::write_pod<std::uint64_t>(out, buffer.size());
  for (const auto& item : buffer.items()) {
    binio::write_doubles(out, item.chosen.data(), item.chosen.size());
    binio::write_doubles(out, item.rejected.data(), item.rejected.size());
    binio::write_string(out, triplet_to_json_line(item.triplet));
  }
  ordered_json metrics = ordered_json::array();
  for (const auto& m : pipeline.metrics()) metrics.push_back(metrics_to_json(m));
  binio::write_string(out, metrics.dump());
  if (!out) throw Error("checkpoint: write failed");
}

Pipeline load_checkpoint(std::istream& in) {
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(std::begin(magic), std::end(magic), std::begin(kCheckpointMagic))) {
    throw Error("checkpoint: not a pipeline checkpoint");
  }
  const auto version = binio::read_pod<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw Error("checkpoint: unsupported version " + std::to_string(version));
  RunConfig config = run_config_from_json(json::parse(binio::read_string(in)));
  const auto next = binio::read_pod<std::int64_t>(in);
  EnnModel model = EnnModel::load(in);

  PipelineState state{std::move(model), {}, {}, {}, static_cast<int>(next)};
  const auto n = binio::read_pod<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < n; ++i) {
    ReplayItem item;
    item.chosen = binio::read_doubles(in);
    item.rejected = binio::read_doubles(in);
    item.triplet = triplet_from_json_line(binio::read_string(in), i + 1);
    state.dataset.push_back(item.triplet);
    state.buffer.append(std::move(item));
  }
  for (const auto& m : json::parse(binio::read_string(in))) state.metrics.push_back(metrics_from_json(m));
  return Pipeline(std::move(config), std::move(state));
}

double EnvDump::expected_utility(int generator_id, int prompt_id) const {
  const auto& g = generators.at(static_cast<std::size_t>(generator_id));
  const auto it = prompt_contexts.find(prompt_id);
  if (it == prompt_contexts.end()) throw Error("env dump: no context for prompt " + std::to_string(prompt_id));
  double u = g.base_quality;
  for (std::size_t i = 0; i < g.skill.size(); ++i) u += g.skill[i] * it->second.at(i);
  return u;
}

ordered_json env_dump_json(const Environment& env, int num_prompts) {
  ordered_json j;
  j["oracle_side"] = true;
  j["note"] = "latent generator profiles; not visible to selection or the reward model";
  ordered_json gens = ordered_json::array();
  for (const auto& g : env.generators()) {
    ordered_json o;
    o["generator_id"] = g.generator_id;
    o["base_quality"] = g.base_quality;
    o["skill"] = g.skill;
    gens.push_back(o);
  }
  j["generators"] = gens;
  j["strongest_generator"] = env.strongest_generator();
  j["weakest_generator"] = env.weakest_generator();
  ordered_json prompts = ordered_json::array();
  for (int i = 0; i < num_prompts; ++i) {
    ordered_json o;
    o["prompt_id"] = i;
    o["context"] = env.prompt(i).context;
    prompts.push_back(o);
  }
  j["prompts"] = prompts;
  return j;
}

EnvDump env_dump_from_json(const json& j) {
  try {
    EnvDump d;
    for (const auto& g : j.at("generators")) {
      GeneratorProfile p;
      p.generator_id = g.at("generator_id").get<int>();
      p.base_quality = g.at("base_quality").get<double>();
      p.skill = g.at("skill").get<std::vector<double>>();
      if (p.generator_id != static_cast<int>(d.generators.size())) throw Error("env dump: generator ids not dense");
      d.generators.push_back(std::move(p));
    }
    for (const auto& p : j.at("prompts")) {
      d.prompt_contexts[p.at("prompt_id").get<int>()] = p.at("context").get<std::vector<double>>();
    }
    return d;
  } catch (const json::exception& e) {
    throw Error(std::string("env dump: ") + e.what());
  }
}

EnvDump load_env_dump(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open env dump " + path.string());
  try {
    return env_dump_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error("env dump " + path.string() + ": " + e.what());
  }
}

}  // namespace activeduel
