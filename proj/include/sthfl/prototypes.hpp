#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "sthfl/linalg.hpp"

namespace sthfl {

// class index -> prototype vector
using PrototypeMap = std::map<int, Vec>;
// class index -> number of samples
using ClassCounts = std::map<int, std::int64_t>;

struct PrototypeUpload {
  int client_id = 0;
  PrototypeMap prototypes;
};

// Per-class means of `embeddings` rows grouped by `labels`. Also reports the
// per-class sample counts when `counts` is non-null.
PrototypeMap compute_prototypes(const Matrix& embeddings, std::span<const int> labels,
                                ClassCounts* counts = nullptr);

// A set of class prototypes maintained by moving average. Local stores live
// on a client, the global store on the server.
class PrototypeStore {
 public:
  struct Entry {
    Vec vector;
    // Samples (local store) or uploading clients (global store) behind the
    // most recent value blended in.
    std::int64_t sample_weight = 0;
    bool operator==(const Entry&) const = default;
  };

  explicit PrototypeStore(double beta = 0.5);

  double beta() const noexcept { return beta_; }
  bool empty() const noexcept { return entries_.empty(); }
  std::size_t size() const noexcept { return entries_.size(); }
  bool contains(int cls) const { return entries_.contains(cls); }
  const Vec& at(int cls) const;
  const std::map<int, Entry>& entries() const noexcept { return entries_; }
  // Embedding dimension, 0 while empty.
  std::size_t dim() const noexcept;

  PrototypeMap snapshot() const;

  // Blends classes already present: v <- beta * v + (1 - beta) * fresh;
  // classes seen for the first time are inserted as given.
  void update_local(const PrototypeMap& fresh, const ClassCounts* counts = nullptr);

  // Server-side rule: per class, the mean over uploading clients (in
  // client-id order) is blended in the same way, or inserted when new.
  void update_global(std::span<const PrototypeUpload> uploads);

  // Inserts or overwrites an entry without blending.
  void set(int cls, Vec vector, std::int64_t sample_weight = 0);

  bool operator==(const PrototypeStore&) const = default;

 private:
  void blend(int cls, const Vec& fresh, std::int64_t weight);

  double beta_;
  std::map<int, Entry> entries_;
};

// Nearest prototype (Euclidean); ties resolve to the lowest class index.
// Throws DataError("no prototypes available") for an empty map.
int predict_class(std::span<const double> embedding, const PrototypeMap& prototypes);

// Rows of `embeddings` classified by nearest prototype.
std::vector<int> predict_classes(const Matrix& embeddings, const PrototypeMap& prototypes);

// Local store overlaid on the global one: local vectors where present,
// global ones for every other class.
PrototypeMap merge_with_fallback(const PrototypeMap& local, const PrototypeMap& global);

// CSV: header "class,coord0,...,coord{H-1}", one row per class.
void write_prototypes_csv(std::ostream& out, const PrototypeMap& prototypes);
PrototypeMap read_prototypes_csv(std::istream& in);

}  // namespace sthfl
