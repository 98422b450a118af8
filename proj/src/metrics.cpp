#include "sthfl/metrics.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include <fmt/format.h>

namespace sthfl {

void MetricsLog::add(MetricRow row) { rows_.push_back(std::move(row)); }

void MetricsLog::write_csv(std::ostream& out) const {
  out << "round,stage,algorithm,metric,scope,value\n";
  for (const auto& r : rows_) {
    out << fmt::format("{},{},{},{},{},{}\n", r.round, r.stage, r.algorithm, r.metric, r.scope,
                       r.value);
  }
}

MetricsLog MetricsLog::read_csv(std::istream& in) {
  MetricsLog log;
  std::string line;
  if (!std::getline(in, line)) return log;
  if (line != "round,stage,algorithm,metric,scope,value") {
    throw DataError("metrics CSV: unexpected header '" + line + "'");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw DataError(fmt::format("metrics CSV line {}: expected 6 fields", line_no));
    try {
      log.add({std::stoi(cells[0]), std::stoi(cells[1]), cells[2], cells[3], cells[4],
               std::stod(cells[5])});
    } catch (const std::logic_error&) {
      throw DataError(fmt::format("metrics CSV line {}: bad number", line_no));
    }
  }
  return log;
}

Classifier prototype_classifier(Layer rep, PrototypeMap prototypes) {
  return [rep = std::move(rep), protos = std::move(prototypes)](const Matrix& x) {
    return predict_classes(embed(rep, x), protos);
  };
}

Classifier head_classifier(ModelParams params) {
  return [params = std::move(params)](const Matrix& x) {
    Matrix out = logits(params, x);
    std::vector<int> pred(out.rows());
    for (std::size_t j = 0; j < out.rows(); ++j) {
      auto row = out.row(j);
      pred[j] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return pred;
  };
}

double accuracy(const Classifier& classify, const LabeledSet& data) {
  if (data.empty()) throw DataError("accuracy of an empty test set");
  auto pred = classify(data.inputs);
  std::size_t correct = 0;
  for (std::size_t j = 0; j < pred.size(); ++j) correct += pred[j] == data.labels[j] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double mean_client_accuracy(std::span<const Classifier> classifiers,
                            std::span<const LabeledSet* const> tests) {
  require_same_size(classifiers.size(), tests.size(), "one classifier per client test set");
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < tests.size(); ++i) {
    if (tests[i]->empty()) continue;
    sum += accuracy(classifiers[i], *tests[i]);
    ++counted;
  }
  if (counted == 0) throw DataError("no client has test data");
  return sum / static_cast<double>(counted);
}

double acc_global(const Layer& theta, const PrototypeMap& global_protos,
                  std::span<const LabeledSet* const> tests) {
  if (global_protos.empty()) throw DataError("no prototypes available");
  std::vector<Classifier> shared(tests.size(), prototype_classifier(theta, global_protos));
  return mean_client_accuracy(shared, tests);
}

double acc_local(std::span<const Classifier> personal, std::span<const LabeledSet* const> tests) {
  return mean_client_accuracy(personal, tests);
}

LabeledSet test_union(const ClientTimeline& timeline, int stage) {
  if (stage < 1 || static_cast<std::size_t>(stage) > timeline.stages.size()) {
    throw DataError(fmt::format("stage {} outside [1, {}]", stage, timeline.stages.size()));
  }
  std::vector<const LabeledSet*> parts;
  for (int m = 0; m < stage; ++m) parts.push_back(&timeline.stages[static_cast<std::size_t>(m)].test);
  return union_by_id(parts);
}

double acc_sel(const Classifier& model, const ClientTimeline& timeline, int stage) {
  return accuracy(model, test_union(timeline, stage));
}

double forgetting(std::span<const double> history, int stage) {
  if (stage < 1 || static_cast<std::size_t>(stage) > history.size()) {
    throw DataError("forgetting: stage outside recorded history");
  }
  const double now = history[static_cast<std::size_t>(stage - 1)];
  double worst = 0.0;
  for (int j = 0; j + 1 < stage; ++j) worst = std::max(worst, history[static_cast<std::size_t>(j)] - now);
  return worst;
}

std::map<std::string, double> summarize(const MetricsLog& log, int window) {
  int last_round = 0;
  int last_stage = 0;
  for (const auto& r : log.rows()) {
    last_round = std::max(last_round, r.round);
    last_stage = std::max(last_stage, r.stage);
  }
  const int first = last_round == 0 ? 0 : std::max(1, last_round - window + 1);
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& r : log.rows()) {
    if (r.scope != kScopeAll || r.round < first || r.round > last_round) continue;
    const bool per_stage = r.metric == kMetricSelected || r.metric == kMetricForgetting;
    if (per_stage && r.stage != last_stage) continue;
    auto& a = acc[r.metric];
    a.first += r.value;
    ++a.second;
  }
  std::map<std::string, double> out;
  for (const auto& [name, a] : acc) out[name] = a.first / a.second;
  return out;
}

}  // namespace sthfl
