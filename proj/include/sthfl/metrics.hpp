#pragma once

#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sthfl/datagen.hpp"
#include "sthfl/model.hpp"
#include "sthfl/prototypes.hpp"

namespace sthfl {

inline constexpr const char* kMetricGlobal = "A_glo";
inline constexpr const char* kMetricLocal = "A_loc";
inline constexpr const char* kMetricSelected = "A_sel";
inline constexpr const char* kMetricForgetting = "forgetting";
inline constexpr const char* kScopeAll = "ALL";

struct MetricRow {
  int round = 0;
  int stage = 0;
  std::string algorithm;
  std::string metric;
  std::string scope;  // client id or "ALL"
  double value = 0.0;

  bool operator==(const MetricRow&) const = default;
};

class MetricsLog {
 public:
  void add(MetricRow row);
  const std::vector<MetricRow>& rows() const noexcept { return rows_; }
  bool empty() const noexcept { return rows_.empty(); }

  // Header: round,stage,algorithm,metric,scope,value
  void write_csv(std::ostream& out) const;
  static MetricsLog read_csv(std::istream& in);

 private:
  std::vector<MetricRow> rows_;
};

// Maps a batch of inputs to predicted classes.
using Classifier = std::function<std::vector<int>(const Matrix&)>;

// Nearest prototype on the embeddings of `rep`.
Classifier prototype_classifier(Layer rep, PrototypeMap prototypes);
// argmax of the head logits.
Classifier head_classifier(ModelParams params);

// Fraction of rows classified correctly. Throws DataError on an empty set.
double accuracy(const Classifier& classify, const LabeledSet& data);

// Mean over clients of per-client accuracy; clients with empty test sets are
// left out of the mean. classifiers[i] is applied to tests[i].
double mean_client_accuracy(std::span<const Classifier> classifiers,
                            std::span<const LabeledSet* const> tests);

// Global representation + global prototype store on every client's test data.
double acc_global(const Layer& theta, const PrototypeMap& global_protos,
                  std::span<const LabeledSet* const> tests);

// Each personalised model on its own client's test data.
double acc_local(std::span<const Classifier> personal, std::span<const LabeledSet* const> tests);

// Union (by sample id) of a client's test sets for stages 1..stage.
LabeledSet test_union(const ClientTimeline& timeline, int stage);

// Accuracy on the union of the client's test sets for stages 1..stage.
double acc_sel(const Classifier& model, const ClientTimeline& timeline, int stage);

// history[j] is A_sel recorded after stage j + 1. Returns
// max_{j < stage} (history[j-1] - history[stage-1]) floored at 0.
double forgetting(std::span<const double> history, int stage);

// Per-metric averages over the final `window` rounds of the ALL-scope rows.
// A_sel and forgetting use the last stage only.
std::map<std::string, double> summarize(const MetricsLog& log, int window);

}  // namespace sthfl
