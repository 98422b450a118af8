#include "sthfl/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

#include <fmt/format.h>

namespace sthfl {

namespace {

Layer zero_layer(std::size_t out_dim, std::size_t in_dim) {
  return Layer{Matrix(out_dim, in_dim), Vec(out_dim, 0.0)};
}

double log_sum_exp(std::span<const double> v, double scale) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : v) hi = std::max(hi, x * scale);
  double sum = 0.0;
  for (double x : v) sum += std::exp(x * scale - hi);
  return hi + std::log(sum);
}

// softmax(v * scale)
Vec softmax(std::span<const double> v, double scale) {
  const double lse = log_sum_exp(v, scale);
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::exp(v[i] * scale - lse);
  return out;
}

struct ClassStat {
  Vec mean;
  std::int64_t count = 0;
};

// Shared by loss_total and grad_total so the two cannot drift apart.
LossBreakdown evaluate(const ModelParams& params, const Batch& batch,
                       const PrototypeMap& old_protos, const PrototypeMap& global_protos,
                       const LossWeights& weights, ModelGrad* grad) {
  const std::size_t n = batch.labels.size();
  require_same_size(batch.inputs.rows(), n, "batch: inputs/labels mismatch");
  require_same_size(batch.inputs.cols(), params.input_dim(), "batch: input width mismatch");
  if (n == 0) throw DataError("empty batch");
  const std::size_t hidden = params.hidden_dim();
  const std::size_t z = params.num_classes();
  const double inv_n = 1.0 / static_cast<double>(n);
  const double inv_tau = 1.0 / weights.temperature;

  Matrix pre, emb, out;
  kernels::parallel::affine(params.rep, batch.inputs, pre);
  kernels::parallel::relu(pre, emb);
  kernels::parallel::affine(params.head, emb, out);

  LossBreakdown loss;
  Matrix dlogits(n, z);
  for (std::size_t j = 0; j < n; ++j) {
    const int y = batch.labels[j];
    if (y < 0 || static_cast<std::size_t>(y) >= z) throw ShapeError("label outside head range");
    auto row = out.row(j);
    const double lse = log_sum_exp(row, 1.0);
    loss.ce += lse - row[static_cast<std::size_t>(y)];
    for (std::size_t k = 0; k < z; ++k) {
      dlogits(j, k) = std::exp(row[k] - lse) * inv_n;
    }
    dlogits(j, static_cast<std::size_t>(y)) -= inv_n;
  }
  loss.ce *= inv_n;

  // Batch-level class prototypes.
  std::map<int, ClassStat> stats;
  for (std::size_t j = 0; j < n; ++j) {
    auto& s = stats[batch.labels[j]];
    if (s.mean.empty()) s.mean.assign(hidden, 0.0);
    auto e = emb.row(j);
    for (std::size_t d = 0; d < hidden; ++d) s.mean[d] += e[d];
    ++s.count;
  }
  for (auto& [cls, s] : stats) {
    for (double& v : s.mean) v /= static_cast<double>(s.count);
  }

  const double lp_w = weights.lp_weight();
  const double gp_w = weights.gp_weight();
  std::map<int, Vec> dproto;

  std::size_t overlap = 0;
  for (const auto& [cls, s] : stats) overlap += old_protos.contains(cls) ? 1 : 0;
  for (const auto& [cls, s] : stats) {
    auto it = old_protos.find(cls);
    if (it == old_protos.end()) continue;
    require_same_size(it->second.size(), hidden, "old prototype dimension mismatch");
    Vec p = softmax(it->second, inv_tau);
    Vec q = softmax(s.mean, inv_tau);
    const double lse_p = log_sum_exp(it->second, inv_tau);
    const double lse_q = log_sum_exp(s.mean, inv_tau);
    double kl = 0.0;
    for (std::size_t d = 0; d < hidden; ++d) {
      const double log_p = it->second[d] * inv_tau - lse_p;
      const double log_q = s.mean[d] * inv_tau - lse_q;
      kl += p[d] * (log_p - log_q);
    }
    loss.lp += kl / static_cast<double>(overlap);
    if (grad != nullptr && lp_w != 0.0) {
      auto& g = dproto.try_emplace(cls, Vec(hidden, 0.0)).first->second;
      const double scale = lp_w * inv_tau / static_cast<double>(overlap);
      for (std::size_t d = 0; d < hidden; ++d) g[d] += scale * (q[d] - p[d]);
    }
  }

  for (const auto& [cls, s] : stats) {
    auto it = global_protos.find(cls);
    if (it == global_protos.end()) continue;
    require_same_size(it->second.size(), hidden, "global prototype dimension mismatch");
    const double share = static_cast<double>(s.count) * inv_n;
    double mse = 0.0;
    for (std::size_t d = 0; d < hidden; ++d) {
      const double diff = s.mean[d] - it->second[d];
      mse += diff * diff;
    }
    mse /= static_cast<double>(hidden);
    loss.gp += share * mse;
    if (grad != nullptr && gp_w != 0.0) {
      auto& g = dproto.try_emplace(cls, Vec(hidden, 0.0)).first->second;
      const double scale = gp_w * share * 2.0 / static_cast<double>(hidden);
      for (std::size_t d = 0; d < hidden; ++d) g[d] += scale * (s.mean[d] - it->second[d]);
    }
  }

  loss.total = loss.ce + lp_w * loss.lp + gp_w * loss.gp;
  if (grad == nullptr) return loss;

  Matrix demb;
  kernels::parallel::backprop(params.head, dlogits, demb);
  for (std::size_t j = 0; j < n; ++j) {
    auto it = dproto.find(batch.labels[j]);
    if (it == dproto.end()) continue;
    const double inv_count = 1.0 / static_cast<double>(stats[batch.labels[j]].count);
    auto row = demb.row(j);
    for (std::size_t d = 0; d < hidden; ++d) row[d] += it->second[d] * inv_count;
  }
  auto dpre = demb.values();
  auto pre_v = pre.values();
  for (std::size_t i = 0; i < dpre.size(); ++i) {
    if (!(pre_v[i] > 0.0)) dpre[i] = 0.0;
  }

  *grad = zero_params(params.input_dim(), hidden, z);
  kernels::parallel::accumulate_grad(dlogits, emb, grad->head);
  kernels::parallel::accumulate_grad(demb, batch.inputs, grad->rep);
  return loss;
}

void sgd_step(Layer& layer, const Layer& grad, const Layer* anchor, double step,
              double weight_decay, double prox) {
  auto w = layer.weight.values();
  auto g = grad.weight.values();
  for (std::size_t i = 0; i < w.size(); ++i) {
    double d = g[i] + weight_decay * w[i];
    if (anchor != nullptr) d += prox * (w[i] - anchor->weight.values()[i]);
    w[i] -= step * d;
  }
  for (std::size_t i = 0; i < layer.bias.size(); ++i) {
    double d = grad.bias[i] + weight_decay * layer.bias[i];
    if (anchor != nullptr) d += prox * (layer.bias[i] - anchor->bias[i]);
    layer.bias[i] -= step * d;
  }
}

}  // namespace

ModelParams zero_params(std::size_t input_dim, std::size_t hidden_dim, std::size_t num_classes) {
  return ModelParams{zero_layer(hidden_dim, input_dim), zero_layer(num_classes, hidden_dim)};
}

ModelParams init_params(std::size_t input_dim, std::size_t hidden_dim, std::size_t num_classes,
                        std::uint64_t seed) {
  Rng rng(seed);
  ModelParams p = zero_params(input_dim, hidden_dim, num_classes);
  const double rep_scale = std::sqrt(2.0 / static_cast<double>(input_dim));
  const double head_scale = std::sqrt(1.0 / static_cast<double>(hidden_dim));
  for (double& w : p.rep.weight.values()) w = rep_scale * rng.normal();
  for (double& w : p.head.weight.values()) w = head_scale * rng.normal();
  return p;
}

void OptimizerConfig::validate() const {
  if (!(step_size >= 0.0)) throw ConfigError("step_size must be >= 0");
  if (mu_epochs < 0) throw ConfigError("mu_epochs must be >= 0");
  if (nu_epochs < 0) throw ConfigError("nu_epochs must be >= 0");
  if (mu_epochs + nu_epochs < 1) throw ConfigError("local epoch budget must be >= 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

void LossWeights::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
}

ForwardResult forward(const ModelParams& params, std::span<const double> x) {
  require_same_size(x.size(), params.input_dim(), "forward: input has wrong length");
  ForwardResult r;
  r.embedding.resize(params.hidden_dim());
  for (std::size_t h = 0; h < params.hidden_dim(); ++h) {
    double a = params.rep.bias[h] + dot(params.rep.weight.row(h), x);
    r.embedding[h] = a > 0.0 ? a : 0.0;
  }
  r.logits.resize(params.num_classes());
  for (std::size_t k = 0; k < params.num_classes(); ++k) {
    r.logits[k] = params.head.bias[k] + dot(params.head.weight.row(k), r.embedding);
  }
  return r;
}

Matrix embed(const Layer& rep, const Matrix& inputs) {
  Matrix pre, emb;
  kernels::parallel::affine(rep, inputs, pre);
  kernels::parallel::relu(pre, emb);
  return emb;
}

Matrix logits(const ModelParams& params, const Matrix& inputs) {
  Matrix out;
  kernels::parallel::affine(params.head, embed(params.rep, inputs), out);
  return out;
}

double loss_ce(std::span<const double> logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw ShapeError("loss_ce: label outside logits range");
  }
  return log_sum_exp(logits, 1.0) - logits[static_cast<std::size_t>(label)];
}

double loss_lp(std::span<const double> old_proto, std::span<const double> new_proto,
               double temperature) {
  require_same_size(old_proto.size(), new_proto.size(), "loss_lp: prototype length mismatch");
  const double scale = 1.0 / temperature;
  const double lse_p = log_sum_exp(old_proto, scale);
  const double lse_q = log_sum_exp(new_proto, scale);
  double kl = 0.0;
  for (std::size_t d = 0; d < old_proto.size(); ++d) {
    const double log_p = old_proto[d] * scale - lse_p;
    const double log_q = new_proto[d] * scale - lse_q;
    kl += std::exp(log_p) * (log_p - log_q);
  }
  return std::max(0.0, kl);
}

double loss_lp(const PrototypeMap& old_protos, const PrototypeMap& new_protos,
               double temperature) {
  double sum = 0.0;
  std::size_t overlap = 0;
  for (const auto& [cls, fresh] : new_protos) {
    auto it = old_protos.find(cls);
    if (it == old_protos.end()) continue;
    sum += loss_lp(it->second, fresh, temperature);
    ++overlap;
  }
  return overlap == 0 ? 0.0 : sum / static_cast<double>(overlap);
}

double loss_gp(const PrototypeMap& local, const PrototypeMap& global, const ClassCounts& counts,
               std::int64_t total) {
  if (total <= 0) throw DataError("loss_gp: total sample count must be positive");
  double sum = 0.0;
  for (const auto& [cls, v] : local) {
    auto g = global.find(cls);
    if (g == global.end()) continue;
    auto c = counts.find(cls);
    const double share =
        c == counts.end() ? 0.0 : static_cast<double>(c->second) / static_cast<double>(total);
    sum += share * squared_distance(v, g->second) / static_cast<double>(v.size());
  }
  return sum;
}

LossBreakdown loss_total(const ModelParams& params, const Batch& batch,
                         const PrototypeMap& old_protos, const PrototypeMap& global_protos,
                         const LossWeights& weights) {
  return evaluate(params, batch, old_protos, global_protos, weights, nullptr);
}

GradResult grad_total(const ModelParams& params, const Batch& batch,
                      const PrototypeMap& old_protos, const PrototypeMap& global_protos,
                      const LossWeights& weights) {
  GradResult r;
  r.loss = evaluate(params, batch, old_protos, global_protos, weights, &r.grad);
  return r;
}

ModelParams train_phases(ModelParams params, const LabeledSet& train,
                         const PrototypeMap& old_protos, const PrototypeMap& global_protos,
                         std::span<const TrainPhase> phases, const OptimizerConfig& opt,
                         const LossWeights& weights, Rng& rng, const ProximalTerm& prox) {
  if (train.empty()) throw DataError("local update on an empty training set");
  const std::size_t n = train.size();
  const auto batch_size = static_cast<std::size_t>(opt.batch_size);
  std::vector<std::size_t> order(n);
  std::vector<int> labels;
  for (const TrainPhase& phase : phases) {
    const bool move_rep = phase.group != ParamGroup::kHead;
    const bool move_head = phase.group != ParamGroup::kRep;
    for (int epoch = 0; epoch < phase.epochs; ++epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      rng.shuffle(order);
      for (std::size_t start = 0; start < n; start += batch_size) {
        std::span<const std::size_t> rows(order.data() + start, std::min(batch_size, n - start));
        Matrix inputs = gather_rows(train.inputs, rows);
        labels.clear();
        for (std::size_t r : rows) labels.push_back(train.labels[r]);
        GradResult g = grad_total(params, Batch{inputs, labels}, old_protos, global_protos, weights);
        const ModelParams* anchor = prox.coefficient != 0.0 ? prox.anchor : nullptr;
        if (move_rep) {
          sgd_step(params.rep, g.grad.rep, anchor ? &anchor->rep : nullptr, opt.step_size,
                   opt.weight_decay, prox.coefficient);
        }
        if (move_head) {
          sgd_step(params.head, g.grad.head, anchor ? &anchor->head : nullptr, opt.step_size,
                   opt.weight_decay, prox.coefficient);
        }
      }
    }
  }
  return params;
}

LocalUpdate local_update(const ModelParams& params, const StageTask& stage,
                         const PrototypeMap& old_protos, const PrototypeMap& global_protos,
                         const OptimizerConfig& opt, const LossWeights& weights, Rng& rng) {
  opt.validate();
  weights.validate();
  const TrainPhase phases[] = {{ParamGroup::kRep, opt.mu_epochs},
                               {ParamGroup::kHead, opt.nu_epochs}};
  LocalUpdate out;
  out.params = train_phases(params, stage.train, old_protos, global_protos, phases, opt, weights, rng);
  out.prototypes = compute_prototypes(embed(out.params.rep, stage.train.inputs),
                                      stage.train.labels, &out.class_counts);
  return out;
}

namespace {

void write_tensor(std::ostream& out, const char* name, const Matrix& m) {
  out << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) {
      out << (c == 0 ? "" : ",") << fmt::format("{}", row[c]);
    }
    out << '\n';
  }
}

Matrix read_tensor(std::istream& in, const std::string& name) {
  std::string header;
  if (!std::getline(in, header)) throw DataError("checkpoint truncated before " + name);
  std::istringstream hs(header);
  std::string got;
  std::size_t rows = 0, cols = 0;
  if (!(hs >> got >> rows >> cols) || got != name) {
    throw DataError("checkpoint: expected header for " + name);
  }
  Matrix m(rows, cols);
  std::string line;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!std::getline(in, line)) throw DataError("checkpoint truncated in " + name);
    const char* p = line.data();
    const char* end = p + line.size();
    for (std::size_t c = 0; c < cols; ++c) {
      if (c > 0) {
        if (p == end || *p != ',') throw DataError("checkpoint: short row in " + name);
        ++p;
      }
      auto [q, ec] = std::from_chars(p, end, m(r, c));
      if (ec != std::errc()) throw DataError("checkpoint: bad number in " + name);
      p = q;
    }
  }
  return m;
}

Matrix bias_row(const Vec& b) {
  Matrix m(1, b.size());
  std::copy(b.begin(), b.end(), m.row(0).begin());
  return m;
}

}  // namespace

void write_checkpoint(std::ostream& out, const ModelParams& params) {
  out << "sthfl-checkpoint 1\n";
  write_tensor(out, "rep.weight", params.rep.weight);
  write_tensor(out, "rep.bias", bias_row(params.rep.bias));
  write_tensor(out, "head.weight", params.head.weight);
  write_tensor(out, "head.bias", bias_row(params.head.bias));
}

ModelParams read_checkpoint(std::istream& in) {
  std::string magic;
  if (!std::getline(in, magic) || magic != "sthfl-checkpoint 1") {
    throw DataError("not a version-1 checkpoint");
  }
  ModelParams p;
  p.rep.weight = read_tensor(in, "rep.weight");
  auto rb = read_tensor(in, "rep.bias");
  p.head.weight = read_tensor(in, "head.weight");
  auto hb = read_tensor(in, "head.bias");
  p.rep.bias.assign(rb.values().begin(), rb.values().end());
  p.head.bias.assign(hb.values().begin(), hb.values().end());
  if (p.rep.bias.size() != p.rep.out_dim() || p.head.bias.size() != p.head.out_dim() ||
      p.head.in_dim() != p.rep.out_dim()) {
    throw DataError("checkpoint: inconsistent tensor shapes");
  }
  return p;
}

}  // namespace sthfl
