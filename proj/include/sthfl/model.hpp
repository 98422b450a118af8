#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>

#include "sthfl/datagen.hpp"
#include "sthfl/kernels.hpp"
#include "sthfl/prototypes.hpp"
#include "sthfl/rng.hpp"

namespace sthfl {

// Two-layer split network. `rep` is the shared representation layer (its
// output goes through a ReLU to give the embedding); `head` is the
// personalised classifier on top of the embedding.
struct ModelParams {
  Layer rep;   // hidden_dim x input_dim
  Layer head;  // num_classes x hidden_dim

  std::size_t input_dim() const noexcept { return rep.in_dim(); }
  std::size_t hidden_dim() const noexcept { return rep.out_dim(); }
  std::size_t num_classes() const noexcept { return head.out_dim(); }

  bool operator==(const ModelParams&) const = default;
};

// Gradients share the parameter layout.
using ModelGrad = ModelParams;

ModelParams zero_params(std::size_t input_dim, std::size_t hidden_dim, std::size_t num_classes);

// He-scaled Gaussian weights, zero biases.
ModelParams init_params(std::size_t input_dim, std::size_t hidden_dim, std::size_t num_classes,
                        std::uint64_t seed);

struct OptimizerConfig {
  double step_size = 0.01;
  int mu_epochs = 2;
  int nu_epochs = 4;
  double weight_decay = 1e-4;
  int batch_size = 32;

  void validate() const;
  bool operator==(const OptimizerConfig&) const = default;
};

struct LossWeights {
  double lambda = 0.5;
  double temperature = 1.0;
  bool use_lp = true;
  bool use_gp = true;

  double lp_weight() const noexcept { return use_lp ? lambda : 0.0; }
  double gp_weight() const noexcept { return use_gp ? 1.0 - lambda : 0.0; }

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct ForwardResult {
  Vec embedding;
  Vec logits;
};

ForwardResult forward(const ModelParams& params, std::span<const double> x);

// Batched forward pass: embeddings (n x H) and optionally logits (n x z).
Matrix embed(const Layer& rep, const Matrix& inputs);
Matrix logits(const ModelParams& params, const Matrix& inputs);

// -log softmax(logits)[label]
double loss_ce(std::span<const double> logits, int label);

// KL(softmax(old / tau) || softmax(fresh / tau)) for one prototype pair.
double loss_lp(std::span<const double> old_proto, std::span<const double> new_proto,
               double temperature);

// Mean of the pairwise loss_lp over classes present in both maps (0 if none).
double loss_lp(const PrototypeMap& old_protos, const PrototypeMap& new_protos,
               double temperature);

// sum over classes with a global prototype of (count / total) * MSE(local, global).
double loss_gp(const PrototypeMap& local, const PrototypeMap& global, const ClassCounts& counts,
               std::int64_t total);

// Mini-batch view: rows of `inputs` with matching `labels`.
struct Batch {
  const Matrix& inputs;
  std::span<const int> labels;
};

struct LossBreakdown {
  double ce = 0.0;
  double lp = 0.0;
  double gp = 0.0;
  double total = 0.0;
};

// CE averaged over the batch plus the weighted prototype terms, where the
// prototype terms use the batch's own class-mean embeddings.
LossBreakdown loss_total(const ModelParams& params, const Batch& batch,
                         const PrototypeMap& old_protos, const PrototypeMap& global_protos,
                         const LossWeights& weights);

struct GradResult {
  LossBreakdown loss;
  ModelGrad grad;
};

GradResult grad_total(const ModelParams& params, const Batch& batch,
                      const PrototypeMap& old_protos, const PrototypeMap& global_protos,
                      const LossWeights& weights);

enum class ParamGroup { kRep, kHead, kAll };

struct TrainPhase {
  ParamGroup group;
  int epochs;
};

// Optional proximal pull toward an anchor model: adds coef * (w - anchor).
struct ProximalTerm {
  const ModelParams* anchor = nullptr;
  double coefficient = 0.0;
};

// Mini-batch SGD with weight decay over the given phases. Only the phase's
// parameter group moves; the rest stay bit-identical.
ModelParams train_phases(ModelParams params, const LabeledSet& train,
                         const PrototypeMap& old_protos, const PrototypeMap& global_protos,
                         std::span<const TrainPhase> phases, const OptimizerConfig& opt,
                         const LossWeights& weights, Rng& rng,
                         const ProximalTerm& prox = {});

struct LocalUpdate {
  ModelParams params;
  PrototypeMap prototypes;  // class means over the whole stage train set
  ClassCounts class_counts;
};

// mu_epochs on the representation layer (head frozen), then nu_epochs on the
// head (representation frozen), then fresh prototypes of the stage.
LocalUpdate local_update(const ModelParams& params, const StageTask& stage,
                         const PrototypeMap& old_protos, const PrototypeMap& global_protos,
                         const OptimizerConfig& opt, const LossWeights& weights, Rng& rng);

// Text checkpoint of all four tensors; see docs/formats.md.
void write_checkpoint(std::ostream& out, const ModelParams& params);
ModelParams read_checkpoint(std::istream& in);

}  // namespace sthfl
