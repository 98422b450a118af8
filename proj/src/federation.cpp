#include "sthfl/federation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <exception>
#include <numeric>
#include <unordered_set>

#include <fmt/format.h>

namespace sthfl {

namespace {

// Stream tags for derive_seed.
enum SeedTag : std::uint64_t {
  kTagData = 11,
  kTagPartition = 12,
  kTagLongtail = 13,
  kTagInit = 14,
  kTagSelect = 15,
  kTagClient = 16,
};

bool has_global_head(Algorithm a) { return a == Algorithm::kFedAvg || a == Algorithm::kFedProx; }

LossWeights ce_only() {
  LossWeights w;
  w.use_lp = false;
  w.use_gp = false;
  return w;
}

Vec flatten(const Layer& layer) {
  Vec out(layer.weight.values().begin(), layer.weight.values().end());
  out.insert(out.end(), layer.bias.begin(), layer.bias.end());
  return out;
}

}  // namespace

const char* algorithm_name(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::kGldp:
      return "GLDP";
    case Algorithm::kFedAvg:
      return "FedAvg";
    case Algorithm::kFedRep:
      return "FedRep";
    case Algorithm::kFedProx:
      return "FedProx";
  }
  return "?";
}

Algorithm parse_algorithm(const std::string& name) {
  std::string lower = name;
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "gldp") return Algorithm::kGldp;
  if (lower == "fedavg") return Algorithm::kFedAvg;
  if (lower == "fedrep") return Algorithm::kFedRep;
  if (lower == "fedprox") return Algorithm::kFedProx;
  throw ConfigError("unknown algorithm '" + name + "' (expected GLDP, FedAvg, FedRep or FedProx)");
}

const char* inference_name(InferenceMode mode) {
  return mode == InferenceMode::kGlobal ? "gp" : "lp";
}

InferenceMode parse_inference(const std::string& name) {
  if (name == "gp" || name == "GP") return InferenceMode::kGlobal;
  if (name == "lp" || name == "LP") return InferenceMode::kLocal;
  throw ConfigError("unknown inference mode '" + name + "' (expected gp or lp)");
}

void ExperimentConfig::validate() const {
  if (rounds < 0) throw ConfigError("rounds must be >= 0");
  data.validate();
  plan.validate(data.num_classes);
  if (clients_per_round < 1 || clients_per_round > plan.num_clients) {
    throw ConfigError(fmt::format("clients_per_round must lie in [1, {}]", plan.num_clients));
  }
  if (hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1");
  opt.validate();
  weights.validate();
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0, 1]");
  if (!(fedprox_mu >= 0.0)) throw ConfigError("fedprox_mu must be >= 0");
  if (summary_window < 1) throw ConfigError("summary_window must be >= 1");
}

std::string ExperimentConfig::display_name() const {
  if (!label.empty()) return label;
  if (algorithm == Algorithm::kGldp) {
    return inference == InferenceMode::kGlobal ? "GLDP-GP" : "GLDP-LP";
  }
  return algorithm_name(algorithm);
}

std::vector<int> select_clients(std::uint64_t seed, int num_clients, int count, int round) {
  if (count < 0 || count > num_clients) throw ConfigError("cannot select more clients than exist");
  Rng rng(derive_seed(seed, {kTagSelect, static_cast<std::uint64_t>(round)}));
  std::vector<int> pool(static_cast<std::size_t>(num_clients));
  std::iota(pool.begin(), pool.end(), 0);
  for (int j = 0; j < count; ++j) {
    auto pick = static_cast<std::size_t>(j) +
                rng.below(static_cast<std::uint64_t>(num_clients - j));
    std::swap(pool[static_cast<std::size_t>(j)], pool[pick]);
  }
  pool.resize(static_cast<std::size_t>(count));
  std::sort(pool.begin(), pool.end());
  return pool;
}

Layer aggregate_mu(std::span<const Layer> uploads) {
  if (uploads.empty()) throw ProtocolError("aggregate_mu: no uploads");
  const Layer& first = uploads.front();
  for (const Layer& u : uploads) {
    if (u.weight.rows() != first.weight.rows() || u.weight.cols() != first.weight.cols() ||
        u.bias.size() != first.bias.size()) {
      throw ProtocolError("aggregate_mu: uploads disagree on shape");
    }
  }
  const double count = static_cast<double>(uploads.size());
  std::vector<double> column(uploads.size());
  auto mean_of = [&](auto&& value_at) {
    for (std::size_t i = 0; i < uploads.size(); ++i) column[i] = value_at(uploads[i]);
    std::sort(column.begin(), column.end());
    if (column.front() == column.back()) return column.front();  // exact for equal uploads
    double sum = 0.0;
    for (double v : column) sum += v;
    return sum / count;
  };
  Layer out{Matrix(first.weight.rows(), first.weight.cols()), Vec(first.bias.size())};
  auto w = out.weight.values();
  for (std::size_t k = 0; k < w.size(); ++k) {
    w[k] = mean_of([k](const Layer& l) { return l.weight.values()[k]; });
  }
  for (std::size_t k = 0; k < out.bias.size(); ++k) {
    out.bias[k] = mean_of([k](const Layer& l) { return l.bias[k]; });
  }
  return out;
}

ModelParams baseline_update(Algorithm mode, const ModelParams& params, const Layer& theta,
                            const std::optional<Layer>& global_head, const StageTask& stage,
                            const OptimizerConfig& opt, double fedprox_mu, Rng& rng) {
  opt.validate();
  const PrototypeMap none;
  ModelParams start = params;
  start.rep = theta;
  switch (mode) {
    case Algorithm::kFedRep: {
      const TrainPhase phases[] = {{ParamGroup::kRep, opt.mu_epochs},
                                   {ParamGroup::kHead, opt.nu_epochs}};
      return train_phases(start, stage.train, none, none, phases, opt, ce_only(), rng);
    }
    case Algorithm::kFedAvg:
    case Algorithm::kFedProx: {
      if (!global_head) throw ProtocolError("full-model baseline needs a broadcast head");
      start.head = *global_head;
      const TrainPhase phases[] = {{ParamGroup::kAll, opt.mu_epochs + opt.nu_epochs}};
      const ModelParams anchor = start;
      const ProximalTerm prox{&anchor, mode == Algorithm::kFedProx ? fedprox_mu : 0.0};
      return train_phases(start, stage.train, none, none, phases, opt, ce_only(), rng, prox);
    }
    case Algorithm::kGldp:
      break;
  }
  throw ConfigError("GLDP is not a baseline mode");
}

AuditReport audit_uploads(const MessageLog& log, const PrivacyTrail& trail,
                          std::span<const ClientTimeline> timelines) {
  std::vector<std::unordered_set<std::uint64_t>> inputs_by_client(timelines.size());
  auto is_trivial = [](std::uint64_t bits) { return (bits << 1) == 0; };  // +0.0 / -0.0
  for (std::size_t i = 0; i < timelines.size(); ++i) {
    for (const auto& st : timelines[i].stages) {
      for (const LabeledSet* set : {&st.train, &st.test}) {
        for (double v : set->inputs.values()) {
          auto bits = std::bit_cast<std::uint64_t>(v);
          if (!is_trivial(bits)) inputs_by_client[i].insert(bits);
        }
      }
    }
  }

  AuditReport report;
  std::size_t upload_index = 0;
  for (const auto& msg : log.messages()) {
    if (msg.direction != Direction::kClientToServer) continue;
    ++report.uploads_checked;
    std::vector<SectionTag> tags;
    try {
      tags = section_tags(msg.payload);
    } catch (const ProtocolError&) {
      ++report.label_fields;  // unparseable payloads count as unaccounted fields
    }
    for (SectionTag t : tags) {
      if (t == SectionTag::kHead) ++report.head_sections;
    }
    if (upload_index >= trail.uploads.size()) {
      throw ProtocolError("privacy trail shorter than the upload log");
    }
    const auto& record = trail.uploads[upload_index++];
    std::unordered_set<std::uint64_t> head_bits;
    for (double v : record.head_values) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      if (!is_trivial(bits)) head_bits.insert(bits);
    }
    const auto client = static_cast<std::size_t>(record.client_id);
    const auto* inputs = client < inputs_by_client.size() ? &inputs_by_client[client] : nullptr;
    const auto& bytes = msg.payload;
    for (std::size_t off = 0; off + 8 <= bytes.size(); ++off) {
      std::uint64_t word = 0;
      for (int b = 0; b < 8; ++b) word |= static_cast<std::uint64_t>(bytes[off + static_cast<std::size_t>(b)]) << (8 * b);
      if (head_bits.contains(word)) ++report.head_value_hits;
      if (inputs != nullptr && inputs->contains(word)) ++report.input_value_hits;
    }
  }
  return report;
}

namespace {

struct ClientOutcome {
  std::optional<Bytes> upload;
  Vec head_values;
  std::string warning;
  std::exception_ptr error;
};

ClientOutcome client_step(ClientState& client, std::span<const std::uint8_t> broadcast,
                          int stage, const ExperimentConfig& config) {
  ClientOutcome outcome;
  BroadcastMessage bc = decode_broadcast(broadcast);
  const StageTask& task = client.timeline->stages.at(static_cast<std::size_t>(stage - 1));
  if (task.train.empty()) {
    outcome.warning = fmt::format("round {} stage {}: client {} has no training data, skipped",
                                  bc.round, stage, client.client_id);
    return outcome;
  }
  Rng rng(derive_seed(config.seed, {kTagClient, static_cast<std::uint64_t>(client.client_id),
                                    static_cast<std::uint64_t>(bc.round),
                                    static_cast<std::uint64_t>(stage)}));
  UploadMessage up;
  up.round = bc.round;
  up.stage = stage;
  up.client_id = client.client_id;

  if (config.algorithm == Algorithm::kGldp) {
    ModelParams start = client.params;
    start.rep = bc.theta;
    LocalUpdate upd = local_update(start, task, client.local_protos.snapshot(), bc.global_protos,
                                   config.opt, config.weights, rng);
    client.params = std::move(upd.params);
    client.local_protos.update_local(upd.prototypes, &upd.class_counts);
    up.prototypes = std::move(upd.prototypes);
    up.class_counts = std::move(upd.class_counts);
  } else {
    client.params = baseline_update(config.algorithm, client.params, bc.theta, bc.head, task,
                                    config.opt, config.fedprox_mu, rng);
    if (has_global_head(config.algorithm)) up.head = client.params.head;
  }
  client.current_stage = stage;
  up.rep = client.params.rep;
  outcome.upload = encode(up);
  outcome.head_values = flatten(client.params.head);
  return outcome;
}

}  // namespace

StageReport run_stage(ServerState& server, std::vector<ClientState>& clients,
                      std::span<const int> selected, int stage, const ExperimentConfig& config,
                      const StageOptions& options) {
  if (!std::is_sorted(selected.begin(), selected.end()) ||
      std::adjacent_find(selected.begin(), selected.end()) != selected.end()) {
    throw ProtocolError("selected clients must be distinct and ascending");
  }
  for (int id : selected) {
    if (id < 0 || static_cast<std::size_t>(id) >= clients.size()) {
      throw ProtocolError(fmt::format("selected client {} does not exist", id));
    }
  }
  const bool gldp = config.algorithm == Algorithm::kGldp;

  BroadcastMessage bc;
  bc.round = server.round_index;
  bc.stage = stage;
  bc.theta = server.theta;
  if (has_global_head(config.algorithm)) bc.head = server.head;
  if (gldp) bc.global_protos = server.global_protos.snapshot();
  const Bytes bc_bytes = encode(bc);
  if (options.log != nullptr) options.log->record(Direction::kServerToClient, bc_bytes);

  std::vector<ClientOutcome> outcomes(selected.size());
  auto work = [&](std::size_t idx) {
    try {
      outcomes[idx] = client_step(clients[static_cast<std::size_t>(selected[idx])], bc_bytes,
                                  stage, config);
    } catch (...) {
      outcomes[idx].error = std::current_exception();
    }
  };
  const auto n = static_cast<std::ptrdiff_t>(selected.size());
  if (options.parallel) {
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t idx = 0; idx < n; ++idx) work(static_cast<std::size_t>(idx));
  } else if (options.reverse_order) {
    for (std::ptrdiff_t idx = n - 1; idx >= 0; --idx) work(static_cast<std::size_t>(idx));
  } else {
    for (std::ptrdiff_t idx = 0; idx < n; ++idx) work(static_cast<std::size_t>(idx));
  }

  StageReport report;
  std::vector<Layer> reps;
  std::vector<Layer> heads;
  std::vector<PrototypeUpload> protos;
  for (std::size_t idx = 0; idx < outcomes.size(); ++idx) {
    auto& o = outcomes[idx];
    if (o.error) std::rethrow_exception(o.error);
    if (!o.warning.empty()) report.warnings.push_back(o.warning);
    if (!o.upload) continue;
    if (options.log != nullptr) options.log->record(Direction::kClientToServer, *o.upload);
    if (options.trail != nullptr) options.trail->uploads.push_back({selected[idx], o.head_values});
    UploadMessage up = decode_upload(*o.upload);
    report.trained.push_back(up.client_id);
    reps.push_back(std::move(up.rep));
    if (has_global_head(config.algorithm)) {
      if (!up.head) throw ProtocolError("baseline upload without head");
      heads.push_back(std::move(*up.head));
    }
    if (gldp) protos.push_back({up.client_id, std::move(up.prototypes)});
  }
  if (reps.empty()) return report;

  server.theta = aggregate_mu(reps);
  if (has_global_head(config.algorithm)) server.head = aggregate_mu(heads);
  if (gldp) server.global_protos.update_global(protos);
  return report;
}

Classifier personal_classifier(const ClientState& client, const ServerState& server,
                               const ExperimentConfig& config) {
  switch (config.algorithm) {
    case Algorithm::kGldp: {
      PrototypeMap protos = config.inference == InferenceMode::kGlobal
                                ? server.global_protos.snapshot()
                                : merge_with_fallback(client.local_protos.snapshot(),
                                                      server.global_protos.snapshot());
      if (protos.empty()) return head_classifier(client.params);
      return prototype_classifier(client.params.rep, std::move(protos));
    }
    case Algorithm::kFedRep:
      return head_classifier(client.params);
    case Algorithm::kFedAvg:
    case Algorithm::kFedProx:
      return head_classifier(ModelParams{server.theta, *server.head});
  }
  throw ConfigError("unknown algorithm");
}

Classifier global_classifier(const ClientState& client, const ServerState& server,
                             const ExperimentConfig& config) {
  if (has_global_head(config.algorithm)) {
    return head_classifier(ModelParams{server.theta, *server.head});
  }
  if (config.algorithm == Algorithm::kGldp && !server.global_protos.empty()) {
    return prototype_classifier(server.theta, server.global_protos.snapshot());
  }
  return head_classifier(ModelParams{server.theta, client.params.head});
}

FederatedData build_federated_data(const ExperimentConfig& config) {
  FederatedData out;
  out.spec = config.data;
  out.spec.seed = derive_seed(config.seed, {kTagData});
  out.plan = config.plan;
  out.plan.seed = derive_seed(config.seed, {kTagPartition});
  LabeledSet balanced = make_synthetic_dataset(out.spec);
  LabeledSet tail = apply_longtail(balanced, out.plan.imbalance_factor,
                                   derive_seed(config.seed, {kTagLongtail}));
  out.timelines = partition_clients(tail, out.plan);
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const ExperimentOptions& options) {
  config.validate();
  return run_experiment(config, build_federated_data(config), options);
}

ExperimentResult run_experiment(const ExperimentConfig& config, const FederatedData& data,
                                const ExperimentOptions& options) {
  config.validate();
  if (static_cast<int>(data.timelines.size()) != config.plan.num_clients) {
    throw ConfigError("partition client count disagrees with the config");
  }
  const std::string name = config.display_name();
  const int num_stages = config.plan.num_stages;
  ModelParams init = init_params(static_cast<std::size_t>(data.spec.input_dim),
                                 static_cast<std::size_t>(config.hidden_dim),
                                 static_cast<std::size_t>(data.spec.num_classes),
                                 derive_seed(config.seed, {kTagInit}));

  ExperimentResult result;
  ServerState& server = result.server;
  server.theta = init.rep;
  if (has_global_head(config.algorithm)) server.head = init.head;
  server.global_protos = PrototypeStore(config.beta);
  server.seed = config.seed;

  auto& clients = result.clients;
  for (const auto& tl : data.timelines) {
    if (static_cast<int>(tl.stages.size()) != num_stages) {
      throw ConfigError("partition stage count disagrees with the config");
    }
    clients.push_back(ClientState{tl.client_id, init, PrototypeStore(config.beta),
                                  std::make_shared<const ClientTimeline>(tl), 0});
  }
  std::vector<LabeledSet> full_tests;
  for (const auto& tl : data.timelines) full_tests.push_back(test_union(tl, num_stages));
  std::vector<const LabeledSet*> test_ptrs;
  for (const auto& t : full_tests) test_ptrs.push_back(&t);

  auto evaluate_round = [&](int round) {
    std::vector<Classifier> global, personal;
    for (const auto& c : clients) {
      global.push_back(global_classifier(c, server, config));
      personal.push_back(personal_classifier(c, server, config));
    }
    result.metrics.add({round, num_stages, name, kMetricGlobal, kScopeAll,
                        mean_client_accuracy(global, test_ptrs)});
    result.metrics.add({round, num_stages, name, kMetricLocal, kScopeAll,
                        acc_local(personal, test_ptrs)});
  };

  evaluate_round(0);

  StageOptions stage_options;
  stage_options.parallel = options.parallel;
  stage_options.log = options.keep_message_log || options.keep_privacy_trail ? &result.messages : nullptr;
  stage_options.trail = options.keep_privacy_trail ? &result.trail : nullptr;

  for (int round = 1; round <= config.rounds; ++round) {
    server.round_index = round;
    auto selected = select_clients(config.seed, config.plan.num_clients, config.clients_per_round, round);
    std::map<int, std::vector<double>> history;
    for (int stage = 1; stage <= num_stages; ++stage) {
      StageReport report = run_stage(server, clients, selected, stage, config, stage_options);
      result.warnings.insert(result.warnings.end(), report.warnings.begin(), report.warnings.end());

      double sel_sum = 0.0, forget_sum = 0.0;
      int evaluated = 0;
      for (int id : selected) {
        const auto& client = clients[static_cast<std::size_t>(id)];
        LabeledSet seen = test_union(*client.timeline, stage);
        if (seen.empty()) continue;
        const double sel = accuracy(personal_classifier(client, server, config), seen);
        auto& h = history[id];
        h.resize(static_cast<std::size_t>(stage), sel);
        h[static_cast<std::size_t>(stage - 1)] = sel;
        const double fg = forgetting(h, stage);
        const std::string scope = std::to_string(id);
        result.metrics.add({round, stage, name, kMetricSelected, scope, sel});
        result.metrics.add({round, stage, name, kMetricForgetting, scope, fg});
        sel_sum += sel;
        forget_sum += fg;
        ++evaluated;
      }
      if (evaluated > 0) {
        result.metrics.add({round, stage, name, kMetricSelected, kScopeAll, sel_sum / evaluated});
        result.metrics.add({round, stage, name, kMetricForgetting, kScopeAll, forget_sum / evaluated});
      }
    }
    evaluate_round(round);
  }
  return result;
}

}  // namespace sthfl
