#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "sthfl/linalg.hpp"

namespace sthfl {

using SampleId = std::int64_t;

struct DatasetSpec {
  int num_classes = 10;
  int input_dim = 16;
  int samples_per_class = 100;
  double class_center_scale = 4.0;
  double noise_sigma = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const DatasetSpec&) const = default;
};

// Rows of `inputs` pair with `labels` and with `ids`. Ids identify a sample
// across every split derived from the generated dataset.
struct LabeledSet {
  int num_classes = 0;
  Matrix inputs;
  std::vector<int> labels;
  std::vector<SampleId> ids;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
  std::vector<std::size_t> class_counts() const;

  // Throws DataError if the row/label/id counts disagree or a label is out of range.
  void validate() const;
};

// Copies the listed rows (inputs, labels and ids).
LabeledSet subset(const LabeledSet& data, std::span<const std::size_t> rows);

// Concatenates sets, dropping rows whose id was already taken.
LabeledSet union_by_id(std::span<const LabeledSet* const> parts);

enum class StageLayout {
  kSliding,     // stage m holds a window of the client's classes starting at m
  kReplicated,  // every stage is a copy of the same split (degenerate timeline)
};

struct PartitionPlan {
  int num_clients = 20;
  int classes_per_client = 4;
  int num_stages = 5;
  double imbalance_factor = 1.0;
  StageLayout layout = StageLayout::kSliding;
  std::uint64_t seed = 0;

  void validate(int num_classes) const;
  bool operator==(const PartitionPlan&) const = default;
};

struct StageTask {
  int stage_index = 1;  // 1-based
  LabeledSet train;
  LabeledSet test;
  std::vector<int> class_set;  // sorted

  std::size_t sample_count() const noexcept { return train.size(); }
};

struct ClientTimeline {
  int client_id = 0;
  std::vector<int> classes;  // the client's S classes in assignment order
  std::vector<StageTask> stages;
};

// Balanced Gaussian-mixture data: z * n_max rows, grouped by class.
LabeledSet make_synthetic_dataset(const DatasetSpec& spec);

// The generative class centers used by make_synthetic_dataset (z x U).
Matrix synthetic_class_centers(const DatasetSpec& spec);

// Fresh isotropic draws around given centers; `per_class` rows per class.
LabeledSet sample_around_centers(const Matrix& centers, int per_class, double sigma,
                                 std::uint64_t seed);

// Number of samples class k keeps under the long-tail rule.
int longtail_count(int samples_per_class, double imbalance_factor, int class_index,
                   int num_classes);

LabeledSet apply_longtail(const LabeledSet& data, double imbalance_factor,
                          std::uint64_t seed);

// Class window held by each stage of a client (before emptiness filtering).
std::vector<std::vector<int>> stage_class_windows(std::span<const int> client_classes,
                                                  int num_stages, StageLayout layout);

std::vector<ClientTimeline> partition_clients(const LabeledSet& data,
                                              const PartitionPlan& plan);

// Partition files: client_<i>/stage_<m>_{train,test}.csv plus manifest.json.
void export_partitions(const std::filesystem::path& dir, const DatasetSpec& spec,
                       const PartitionPlan& plan,
                       std::span<const ClientTimeline> timelines);

struct ImportedPartitions {
  DatasetSpec spec;
  PartitionPlan plan;
  std::vector<ClientTimeline> timelines;
};

ImportedPartitions import_partitions(const std::filesystem::path& dir);

}  // namespace sthfl
