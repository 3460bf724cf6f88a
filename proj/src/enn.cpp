#include "activeduel/enn.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "activeduel/binary_io.hpp"

namespace activeduel {

namespace {

constexpr char kMagic[8] = {'A', 'D', 'E', 'N', 'N', 'C', 'K', 'P'};
constexpr std::uint32_t kFormatVersion = 1;

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

Head zeros_like(const Head& h) {
  Head z(h.size());
  for (std::size_t l = 0; l < h.size(); ++l) {
    z[l].weight = Eigen::MatrixXd::Zero(h[l].weight.rows(), h[l].weight.cols());
    z[l].bias = Eigen::VectorXd::Zero(h[l].bias.size());
  }
  return z;
}

std::vector<int> layer_widths(const EnnConfig& c) {
  std::vector<int> w{c.feature_dim};
  for (int l = 0; l < c.layers_per_head; ++l) w.push_back(c.hidden_size);
  w.push_back(1);
  return w;
}

void check_head_shape(const EnnConfig& c, const Head& h) {
  const auto widths = layer_widths(c);
  if (h.size() != widths.size() - 1) throw ConfigError("head has wrong number of layers");
  for (std::size_t l = 0; l < h.size(); ++l) {
    if (h[l].weight.rows() != widths[l + 1] || h[l].weight.cols() != widths[l] ||
        h[l].bias.size() != widths[l + 1]) {
      throw ConfigError("head layer " + std::to_string(l) + " has wrong shape");
    }
  }
}

// Forward pass keeping pre-activations for backprop.
struct Trace {
  std::vector<Eigen::MatrixXd> pre;  // z_l
  std::vector<Eigen::MatrixXd> act;  // a_l, act[0] = inputs
};

Eigen::RowVectorXd forward_trace(const Head& head, const Eigen::MatrixXd& inputs, Trace& tr) {
  tr.pre.resize(head.size());
  tr.act.resize(head.size());
  tr.act[0] = inputs;
  for (std::size_t l = 0; l < head.size(); ++l) {
    tr.pre[l] = (head[l].weight * tr.act[l]).colwise() + head[l].bias;
    if (l + 1 < head.size()) tr.act[l + 1] = tr.pre[l].cwiseMax(0.0);
  }
  return tr.pre.back().row(0);
}

}  // namespace

void EnnConfig::validate() const {
  std::ostringstream err;
  if (num_heads < 2) err << "enn.num_heads must be >= 2; ";
  if (layers_per_head < 1) err << "enn.layers_per_head must be >= 1; ";
  if (hidden_size < 1) err << "enn.hidden_size must be >= 1; ";
  if (!(beta > 0.0) || !std::isfinite(beta)) err << "enn.beta must be > 0; ";
  if (!(learning_rate > 0.0)) err << "enn.learning_rate must be > 0; ";
  if (train_steps < 0) err << "enn.train_steps must be >= 0; ";
  if (minibatch_size < 1) err << "enn.minibatch_size must be >= 1; ";
  if (!(gamma >= 0.0)) err << "enn.gamma must be >= 0; ";
  if (!(zeta0 >= 0.0)) err << "enn.zeta0 must be >= 0; ";
  if (!(zeta_decay > 0.0 && zeta_decay <= 1.0)) err << "enn.zeta_decay must be in (0, 1]; ";
  if (rho < 1) err << "enn.rho must be > 0; ";
  if (feature_dim <= 0) err << "enn.feature_dim must be > 0; ";
  if (!err.str().empty()) throw ConfigError(err.str());
}

std::size_t parameter_count(const Head& head) {
  std::size_t n = 0;
  for (const auto& l : head) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

double squared_distance(const Head& a, const Head& b) {
  double s = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l) {
    s += (a[l].weight - b[l].weight).squaredNorm() + (a[l].bias - b[l].bias).squaredNorm();
  }
  return s;
}

Eigen::RowVectorXd head_forward(const Head& head, const Eigen::MatrixXd& inputs) {
  Eigen::MatrixXd a = inputs;
  for (std::size_t l = 0; l < head.size(); ++l) {
    Eigen::MatrixXd z = (head[l].weight * a).colwise() + head[l].bias;
    a = (l + 1 < head.size()) ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z;
  }
  return a.row(0);
}

std::vector<double> flatten(const Head& head) {
  std::vector<double> out;
  out.reserve(parameter_count(head));
  for (const auto& l : head) {
    out.insert(out.end(), l.weight.data(), l.weight.data() + l.weight.size());
    out.insert(out.end(), l.bias.data(), l.bias.data() + l.bias.size());
  }
  return out;
}

void unflatten(Head& head, std::span<const double> params) {
  if (params.size() != parameter_count(head)) throw Error("unflatten: parameter count mismatch");
  std::size_t at = 0;
  for (auto& l : head) {
    std::copy_n(params.begin() + at, l.weight.size(), l.weight.data());
    at += l.weight.size();
    std::copy_n(params.begin() + at, l.bias.size(), l.bias.data());
    at += l.bias.size();
  }
}

EnnModel EnnModel::init(const EnnConfig& config, std::uint64_t seed) {
  config.validate();
  const auto widths = layer_widths(config);
  std::vector<Head> heads(config.num_heads);
  for (int k = 0; k < config.num_heads; ++k) {
    Rng rng(seed, Stream::kEnnInit, {static_cast<std::uint64_t>(k)});
    Head& h = heads[k];
    h.resize(widths.size() - 1);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const int fan_in = widths[l];
      const int fan_out = widths[l + 1];
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      h[l].weight.resize(fan_out, fan_in);
      for (Eigen::Index i = 0; i < h[l].weight.size(); ++i) {
        h[l].weight.data()[i] = limit * (2.0 * rng.uniform() - 1.0);
      }
      h[l].bias = Eigen::VectorXd::Zero(fan_out);
    }
  }
  return from_heads(config, std::move(heads));
}

EnnModel EnnModel::from_heads(const EnnConfig& config, std::vector<Head> heads) {
  config.validate();
  if (static_cast<int>(heads.size()) != config.num_heads) throw ConfigError("from_heads: head count != num_heads");
  for (const auto& h : heads) check_head_shape(config, h);
  EnnModel m;
  m.config_ = config;
  m.anchors_ = heads;
  m.heads_ = std::move(heads);
  m.adam_.reserve(m.heads_.size());
  for (const auto& h : m.heads_) m.adam_.push_back({zeros_like(h), zeros_like(h)});
  return m;
}

EnnModel EnnModel::with_heads(std::vector<Head> heads) const {
  if (heads.size() != heads_.size()) throw ConfigError("with_heads: head count != num_heads");
  for (const auto& h : heads) check_head_shape(config_, h);
  EnnModel m = *this;
  m.heads_ = std::move(heads);
  return m;
}

double EnnModel::zeta() const {
  return config_.zeta0 * std::pow(config_.zeta_decay, static_cast<double>(iteration_count_));
}

std::vector<double> EnnModel::head_outputs(std::span<const double> features) const {
  if (static_cast<int>(features.size()) != config_.feature_dim) {
    throw Error("enn_predict: feature dimension " + std::to_string(features.size()) + " != " +
                std::to_string(config_.feature_dim));
  }
  const Eigen::Map<const Eigen::MatrixXd> x(features.data(), config_.feature_dim, 1);
  std::vector<double> out(heads_.size());
  for (std::size_t k = 0; k < heads_.size(); ++k) out[k] = head_forward(heads_[k], x)(0);
  return out;
}

namespace {

RewardEstimate summarize(std::span<const double> outputs, double beta) {
  const double k = static_cast<double>(outputs.size());
  const double mean = std::accumulate(outputs.begin(), outputs.end(), 0.0) / k;
  const auto [lo, hi] = std::minmax_element(outputs.begin(), outputs.end());
  double var = 0.0;
  if (*lo != *hi) {
    for (double o : outputs) var += (o - mean) * (o - mean);
    var /= k;
  }
  if (!std::isfinite(mean) || !std::isfinite(var)) throw NumericError("enn_predict: non-finite head output");
  return RewardEstimate::from_moments(mean, std::sqrt(var), beta);
}

}  // namespace

RewardEstimate EnnModel::predict(std::span<const double> features) const {
  const auto outs = head_outputs(features);
  return summarize(outs, config_.beta);
}

std::vector<RewardEstimate> EnnModel::predict_batch(const Eigen::MatrixXd& features) const {
  if (features.rows() != config_.feature_dim) throw Error("enn_predict: feature dimension mismatch");
  const Eigen::Index n = features.cols();
  Eigen::MatrixXd outs(static_cast<Eigen::Index>(heads_.size()), n);
  for (std::size_t k = 0; k < heads_.size(); ++k) outs.row(static_cast<Eigen::Index>(k)) = head_forward(heads_[k], features);
  std::vector<RewardEstimate> est;
  est.reserve(static_cast<std::size_t>(n));
  std::vector<double> col(heads_.size());
  for (Eigen::Index j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < heads_.size(); ++k) col[k] = outs(static_cast<Eigen::Index>(k), j);
    est.push_back(summarize(col, config_.beta));
  }
  return est;
}

bool operator==(const EnnModel& a, const EnnModel& b) {
  auto same = [](const std::vector<Head>& x, const std::vector<Head>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t k = 0; k < x.size(); ++k) {
      if (flatten(x[k]) != flatten(y[k])) return false;
    }
    return true;
  };
  if (!(a.config_ == b.config_) || a.iteration_count_ != b.iteration_count_ || a.adam_steps_ != b.adam_steps_) {
    return false;
  }
  if (!same(a.heads_, b.heads_) || !same(a.anchors_, b.anchors_)) return false;
  for (std::size_t k = 0; k < a.adam_.size(); ++k) {
    if (flatten(a.adam_[k].first) != flatten(b.adam_[k].first)) return false;
    if (flatten(a.adam_[k].second) != flatten(b.adam_[k].second)) return false;
  }
  return true;
}

namespace {

void write_head(std::ostream& out, const Head& h) {
  binio::write_pod<std::uint64_t>(out, h.size());
  for (const auto& l : h) {
    binio::write_matrix(out, l.weight);
    binio::write_vector(out, l.bias);
  }
}

Head read_head(std::istream& in) {
  const auto n = binio::read_pod<std::uint64_t>(in);
  if (n > 64) throw Error("checkpoint: implausible layer count");
  Head h(n);
  for (auto& l : h) {
    l.weight = binio::read_matrix(in);
    l.bias = binio::read_vector(in);
  }
  return h;
}

}  // namespace

void EnnModel::save(std::ostream& out) const {
  out.write(kMagic, sizeof(kMagic));
  binio::write_pod(out, kFormatVersion);
  const auto& c = config_;
  for (int v : {c.num_heads, c.layers_per_head, c.hidden_size, c.train_steps, c.minibatch_size, c.rho, c.feature_dim}) {
    binio::write_pod<std::int64_t>(out, v);
  }
  for (double v : {c.beta, c.learning_rate, c.gamma, c.zeta0, c.zeta_decay}) binio::write_pod(out, v);
  binio::write_pod<std::uint64_t>(out, iteration_count_);
  binio::write_pod<std::uint64_t>(out, adam_steps_);
  for (std::size_t k = 0; k < heads_.size(); ++k) {
    write_head(out, heads_[k]);
    write_head(out, anchors_[k]);
    write_head(out, adam_[k].first);
    write_head(out, adam_[k].second);
  }
  if (!out) throw Error("checkpoint: write failed");
}

EnnModel EnnModel::load(std::istream& in) {
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(std::begin(magic), std::end(magic), std::begin(kMagic))) {
    throw Error("checkpoint: not an ENN model checkpoint");
  }
  const auto version = binio::read_pod<std::uint32_t>(in);
  if (version != kFormatVersion) throw Error("checkpoint: unsupported ENN format version " + std::to_string(version));
  EnnConfig c;
  for (int* v : {&c.num_heads, &c.layers_per_head, &c.hidden_size, &c.train_steps, &c.minibatch_size, &c.rho,
                 &c.feature_dim}) {
    *v = static_cast<int>(binio::read_pod<std::int64_t>(in));
  }
  for (double* v : {&c.beta, &c.learning_rate, &c.gamma, &c.zeta0, &c.zeta_decay}) *v = binio::read_pod<double>(in);
  c.validate();

  EnnModel m;
  m.config_ = c;
  m.iteration_count_ = binio::read_pod<std::uint64_t>(in);
  m.adam_steps_ = binio::read_pod<std::uint64_t>(in);
  for (int k = 0; k < c.num_heads; ++k) {
    m.heads_.push_back(read_head(in));
    m.anchors_.push_back(read_head(in));
    AdamState s;
    s.first = read_head(in);
    s.second = read_head(in);
    m.adam_.push_back(std::move(s));
    check_head_shape(c, m.heads_.back());
    check_head_shape(c, m.anchors_.back());
  }
  return m;
}

std::vector<std::size_t> replay_sample(const ReplayBuffer& buffer, int batch_size, int rho, UniformSource& rng) {
  if (batch_size <= 0 || rho <= 0) throw ConfigError("replay_sample: batch size and rho must be positive");
  const std::size_t cap = static_cast<std::size_t>(batch_size) * static_cast<std::size_t>(rho);
  const std::size_t n = std::min(buffer.size(), cap);
  return sample_without_replacement(buffer.size(), n, rng);
}

PairBatch make_batch(const ReplayBuffer& buffer, std::span<const std::size_t> indices) {
  PairBatch b;
  if (indices.empty()) return b;
  const auto d = static_cast<Eigen::Index>(buffer[indices[0]].chosen.size());
  const auto n = static_cast<Eigen::Index>(indices.size());
  b.chosen.resize(d, n);
  b.rejected.resize(d, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& item = buffer[indices[static_cast<std::size_t>(i)]];
    if (static_cast<Eigen::Index>(item.chosen.size()) != d || static_cast<Eigen::Index>(item.rejected.size()) != d) {
      throw Error("make_batch: inconsistent feature dimensions in replay buffer");
    }
    b.chosen.col(i) = Eigen::Map<const Eigen::VectorXd>(item.chosen.data(), d);
    b.rejected.col(i) = Eigen::Map<const Eigen::VectorXd>(item.rejected.data(), d);
  }
  return b;
}

namespace {

// Shared by the loss-only and loss+gradient entry points.
LossBreakdown evaluate(const EnnModel& model, const PairBatch& batch, std::vector<Head>* grads) {
  if (batch.size() == 0) throw Error("enn_loss: empty batch");
  const auto& cfg = model.config();
  const Eigen::Index n = batch.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  const double inv_k = 1.0 / static_cast<double>(cfg.num_heads);
  const double zeta = model.zeta();

  Eigen::MatrixXd inputs(batch.chosen.rows(), 2 * n);
  inputs << batch.chosen, batch.rejected;

  LossBreakdown out;
  out.zeta = zeta;
  if (grads) grads->resize(model.heads().size());
  Trace tr;
  for (std::size_t k = 0; k < model.heads().size(); ++k) {
    const Head& head = model.heads()[k];
    const Eigen::RowVectorXd r = forward_trace(head, inputs, tr);
    double nll = 0.0;
    double cent = 0.0;
    Eigen::RowVectorXd g(2 * n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double delta = r(i) - r(n + i);
      const double sum = r(i) + r(n + i);
      nll += neg_log_sigmoid(delta);
      cent += sum * sum;
      const double p_wrong = sigmoid(-delta);
      g(i) = inv_k * inv_n * (-p_wrong + 2.0 * cfg.gamma * sum);
      g(n + i) = inv_k * inv_n * (p_wrong + 2.0 * cfg.gamma * sum);
    }
    nll *= inv_n;
    cent *= inv_n;
    const double anchor = squared_distance(head, model.anchors()[k]);
    const double head_loss = nll + cfg.gamma * cent + zeta * anchor;
    if (!std::isfinite(head_loss)) {
      throw NumericError("enn_loss: non-finite loss in head " + std::to_string(k));
    }
    out.nll += inv_k * nll;
    out.centering += inv_k * cfg.gamma * cent;
    out.anchor += inv_k * zeta * anchor;

    if (!grads) continue;
    Head& gh = (*grads)[k];
    gh.resize(head.size());
    Eigen::MatrixXd upstream = g;
    for (std::size_t l = head.size(); l-- > 0;) {
      gh[l].weight = upstream * tr.act[l].transpose();
      gh[l].bias = upstream.rowwise().sum();
      gh[l].weight += (2.0 * zeta * inv_k) * (head[l].weight - model.anchors()[k][l].weight);
      gh[l].bias += (2.0 * zeta * inv_k) * (head[l].bias - model.anchors()[k][l].bias);
      if (l > 0) {
        upstream = (head[l].weight.transpose() * upstream).cwiseProduct(
            (tr.pre[l - 1].array() > 0.0).cast<double>().matrix());
      }
    }
    for (std::size_t l = 0; l < gh.size(); ++l) {
      if (!gh[l].weight.allFinite() || !gh[l].bias.allFinite()) {
        throw NumericError("enn_train: non-finite gradient in head " + std::to_string(k) + ", layer " +
                           std::to_string(l));
      }
    }
  }
  out.total = out.nll + out.centering + out.anchor;
  return out;
}

}  // namespace

LossBreakdown enn_loss(const EnnModel& model, const PairBatch& batch) { return evaluate(model, batch, nullptr); }

LossBreakdown enn_loss_gradient(const EnnModel& model, const PairBatch& batch, std::vector<Head>& grads) {
  return evaluate(model, batch, &grads);
}

struct EnnTrainer {
  static void adam_step(EnnModel& m, const std::vector<Head>& grads) {
    const double lr = m.config_.learning_rate;
    ++m.adam_steps_;
    const double t = static_cast<double>(m.adam_steps_);
    const double c1 = 1.0 - std::pow(kAdamBeta1, t);
    const double c2 = 1.0 - std::pow(kAdamBeta2, t);
    auto update = [&](auto& param, auto& mom1, auto& mom2, const auto& grad) {
      mom1 = kAdamBeta1 * mom1 + (1.0 - kAdamBeta1) * grad;
      mom2 = kAdamBeta2 * mom2 + (1.0 - kAdamBeta2) * grad.cwiseProduct(grad);
      param.array() -= lr * (mom1.array() / c1) / ((mom2.array() / c2).sqrt() + kAdamEps);
    };
    for (std::size_t k = 0; k < m.heads_.size(); ++k) {
      for (std::size_t l = 0; l < m.heads_[k].size(); ++l) {
        auto& p = m.heads_[k][l];
        auto& s1 = m.adam_[k].first[l];
        auto& s2 = m.adam_[k].second[l];
        update(p.weight, s1.weight, s2.weight, grads[k][l].weight);
        update(p.bias, s1.bias, s2.bias, grads[k][l].bias);
      }
    }
  }

  static void finish_iteration(EnnModel& m) { ++m.iteration_count_; }
};

TrainReport enn_train(EnnModel& model, const ReplayBuffer& buffer, int batch_size, Rng& rng) {
  TrainReport report;
  report.zeta = model.zeta();
  const auto idx = replay_sample(buffer, batch_size, model.config().rho, rng);
  report.train_size = idx.size();
  if (idx.empty()) {
    EnnTrainer::finish_iteration(model);
    return report;
  }
  const PairBatch data = make_batch(buffer, idx);
  const Eigen::Index n = data.size();
  const Eigen::Index mb = std::min<Eigen::Index>(model.config().minibatch_size, n);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::size_t cursor = order.size();  // forces a shuffle on the first step
  PairBatch mini;
  mini.chosen.resize(data.chosen.rows(), mb);
  mini.rejected.resize(data.rejected.rows(), mb);
  std::vector<Head> grads;
  for (int step = 0; step < model.config().train_steps; ++step) {
    if (mb == n) {
      mini.chosen = data.chosen;
      mini.rejected = data.rejected;
    } else {
      if (cursor + static_cast<std::size_t>(mb) > order.size()) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        cursor = 0;
      }
      for (Eigen::Index i = 0; i < mb; ++i) {
        const Eigen::Index src = order[cursor + static_cast<std::size_t>(i)];
        mini.chosen.col(i) = data.chosen.col(src);
        mini.rejected.col(i) = data.rejected.col(src);
      }
      cursor += static_cast<std::size_t>(mb);
    }
    const auto loss = enn_loss_gradient(model, mini, grads);
    report.step_losses.push_back(loss.total);
    EnnTrainer::adam_step(model, grads);
  }
  EnnTrainer::finish_iteration(model);
  return report;
}

TrainReport enn_train_on(EnnModel& model, const PairBatch& batch) {
  TrainReport report;
  report.zeta = model.zeta();
  report.train_size = static_cast<std::size_t>(batch.size());
  std::vector<Head> grads;
  for (int step = 0; step < model.config().train_steps && batch.size() > 0; ++step) {
    report.step_losses.push_back(enn_loss_gradient(model, batch, grads).total);
    EnnTrainer::adam_step(model, grads);
  }
  EnnTrainer::finish_iteration(model);
  return report;
}

}  // namespace activeduel
