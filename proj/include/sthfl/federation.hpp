#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sthfl/datagen.hpp"
#include "sthfl/metrics.hpp"
#include "sthfl/model.hpp"
#include "sthfl/prototypes.hpp"
#include "sthfl/wire.hpp"

namespace sthfl {

enum class Algorithm { kGldp, kFedAvg, kFedRep, kFedProx };
enum class InferenceMode { kGlobal, kLocal };

const char* algorithm_name(Algorithm algorithm);
Algorithm parse_algorithm(const std::string& name);
const char* inference_name(InferenceMode mode);
InferenceMode parse_inference(const std::string& name);

struct ExperimentConfig {
  Algorithm algorithm = Algorithm::kGldp;
  InferenceMode inference = InferenceMode::kGlobal;
  std::string label;  // overrides the algorithm column in metric rows
  int rounds = 50;
  int clients_per_round = 10;
  DatasetSpec data;     // data.seed is derived from `seed`
  PartitionPlan plan;   // plan.seed is derived from `seed`
  int hidden_dim = 32;
  OptimizerConfig opt;
  LossWeights weights;
  double beta = 0.5;
  double fedprox_mu = 0.01;
  int summary_window = 10;
  std::uint64_t seed = 1;

  void validate() const;
  std::string display_name() const;
  bool operator==(const ExperimentConfig&) const = default;
};

struct ServerState {
  Layer theta;
  std::optional<Layer> head;  // FedAvg/FedProx keep a global head too
  PrototypeStore global_protos;
  int round_index = 0;
  std::uint64_t seed = 0;

  bool operator==(const ServerState&) const = default;
};

struct ClientState {
  int client_id = 0;
  ModelParams params;
  PrototypeStore local_protos;
  std::shared_ptr<const ClientTimeline> timeline;
  int current_stage = 0;  // last stage trained, 0 before any
};

// Uniform sample of `count` distinct ids from [0, num_clients), sorted;
// a pure function of (seed, round).
std::vector<int> select_clients(std::uint64_t seed, int num_clients, int count, int round);

// Coordinate-wise mean. Each coordinate is summed in sorted order, so the
// result does not depend on the order of `uploads`.
Layer aggregate_mu(std::span<const Layer> uploads);

// One client's training for a stage under a baseline algorithm; returns the
// new parameters. GLDP itself goes through local_update.
ModelParams baseline_update(Algorithm mode, const ModelParams& params, const Layer& theta,
                            const std::optional<Layer>& global_head, const StageTask& stage,
                            const OptimizerConfig& opt, double fedprox_mu, Rng& rng);

// Values a client must never send: its head and its raw inputs.
struct PrivacyTrail {
  struct Upload {
    int client_id;
    Vec head_values;
  };
  std::vector<Upload> uploads;  // in message-log order of client->server payloads
};

struct AuditReport {
  std::size_t uploads_checked = 0;
  std::size_t head_sections = 0;
  std::size_t head_value_hits = 0;
  std::size_t input_value_hits = 0;
  std::size_t label_fields = 0;

  bool clean() const noexcept {
    return head_sections == 0 && head_value_hits == 0 && input_value_hits == 0 &&
           label_fields == 0;
  }
};

// Scans every client->server payload: structural check of its sections and a
// byte-level search for the sender's head parameters and raw input values.
AuditReport audit_uploads(const MessageLog& log, const PrivacyTrail& trail,
                          std::span<const ClientTimeline> timelines);

struct StageOptions {
  bool parallel = true;         // run selected clients concurrently
  bool reverse_order = false;   // sequential runs visit clients in reverse
  MessageLog* log = nullptr;
  PrivacyTrail* trail = nullptr;
};

struct StageReport {
  std::vector<int> trained;  // clients that uploaded, ascending
  std::vector<std::string> warnings;
};

// One pass of the stage loop: broadcast, local updates on the selected
// clients, aggregation of the shared layer and the prototypes.
StageReport run_stage(ServerState& server, std::vector<ClientState>& clients,
                      std::span<const int> selected, int stage, const ExperimentConfig& config,
                      const StageOptions& options = {});

// Classifier for a client's personalised model under `config`.
Classifier personal_classifier(const ClientState& client, const ServerState& server,
                               const ExperimentConfig& config);
// Classifier for the global model as seen by `client`.
Classifier global_classifier(const ClientState& client, const ServerState& server,
                             const ExperimentConfig& config);

struct FederatedData {
  DatasetSpec spec;
  PartitionPlan plan;
  std::vector<ClientTimeline> timelines;
};

// Synthetic data, long tail and client partition derived from config.seed.
FederatedData build_federated_data(const ExperimentConfig& config);

struct ExperimentOptions {
  bool parallel = true;
  bool keep_message_log = false;
  bool keep_privacy_trail = false;
};

struct ExperimentResult {
  MetricsLog metrics;
  ServerState server;
  std::vector<ClientState> clients;
  MessageLog messages;
  PrivacyTrail trail;
  std::vector<std::string> warnings;
};

ExperimentResult run_experiment(const ExperimentConfig& config, const ExperimentOptions& options = {});

// Same, on already-built data (used for imported partitions).
ExperimentResult run_experiment(const ExperimentConfig& config, const FederatedData& data,
                                const ExperimentOptions& options = {});

}  // namespace sthfl
