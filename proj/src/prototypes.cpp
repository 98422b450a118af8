#include "sthfl/prototypes.hpp"

#include <algorithm>
#include <charconv>
#include <istream>
#include <limits>
#include <ostream>
#include <string>

#include <fmt/format.h>

#include "sthfl/error.hpp"
#include "sthfl/kernels.hpp"

namespace sthfl {

PrototypeMap compute_prototypes(const Matrix& embeddings, std::span<const int> labels,
                                ClassCounts* counts) {
  require_same_size(embeddings.rows(), labels.size(),
                    "compute_prototypes: embeddings/labels mismatch");
  PrototypeMap sums;
  ClassCounts n;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    auto [it, inserted] = sums.try_emplace(labels[j], Vec(embeddings.cols(), 0.0));
    auto row = embeddings.row(j);
    for (std::size_t d = 0; d < row.size(); ++d) it->second[d] += row[d];
    ++n[labels[j]];
  }
  for (auto& [cls, v] : sums) {
    const double count = static_cast<double>(n[cls]);
    for (double& x : v) x /= count;
  }
  if (counts != nullptr) *counts = std::move(n);
  return sums;
}

PrototypeStore::PrototypeStore(double beta) : beta_(beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0, 1]");
}

const Vec& PrototypeStore::at(int cls) const {
  auto it = entries_.find(cls);
  if (it == entries_.end()) throw DataError(fmt::format("no prototype for class {}", cls));
  return it->second.vector;
}

std::size_t PrototypeStore::dim() const noexcept {
  return entries_.empty() ? 0 : entries_.begin()->second.vector.size();
}

PrototypeMap PrototypeStore::snapshot() const {
  PrototypeMap out;
  for (const auto& [cls, e] : entries_) out.emplace(cls, e.vector);
  return out;
}

void PrototypeStore::blend(int cls, const Vec& fresh, std::int64_t weight) {
  if (!entries_.empty() && fresh.size() != dim()) {
    throw ProtocolError(fmt::format("prototype for class {} has dimension {}, store has {}",
                                    cls, fresh.size(), dim()));
  }
  auto it = entries_.find(cls);
  if (it == entries_.end()) {
    entries_.emplace(cls, Entry{fresh, weight});
    return;
  }
  Vec& v = it->second.vector;
  for (std::size_t d = 0; d < v.size(); ++d) {
    // Equal coordinates are left alone so re-blending a value is exact.
    if (v[d] != fresh[d]) v[d] = beta_ * v[d] + (1.0 - beta_) * fresh[d];
  }
  it->second.sample_weight = weight;
}

void PrototypeStore::update_local(const PrototypeMap& fresh, const ClassCounts* counts) {
  for (const auto& [cls, v] : fresh) {
    std::int64_t w = 0;
    if (counts != nullptr) {
      auto c = counts->find(cls);
      if (c != counts->end()) w = c->second;
    }
    blend(cls, v, w);
  }
}

void PrototypeStore::update_global(std::span<const PrototypeUpload> uploads) {
  std::vector<const PrototypeUpload*> ordered;
  for (const auto& u : uploads) ordered.push_back(&u);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](auto* a, auto* b) { return a->client_id < b->client_id; });

  std::map<int, std::pair<Vec, std::int64_t>> means;
  for (const auto* u : ordered) {
    for (const auto& [cls, v] : u->prototypes) {
      auto [it, inserted] = means.try_emplace(cls, Vec(v.size(), 0.0), 0);
      if (it->second.first.size() != v.size()) {
        throw ProtocolError(fmt::format("class {} uploads disagree on dimension", cls));
      }
      for (std::size_t d = 0; d < v.size(); ++d) it->second.first[d] += v[d];
      ++it->second.second;
    }
  }
  for (auto& [cls, acc] : means) {
    const double clients = static_cast<double>(acc.second);
    for (double& x : acc.first) x /= clients;
    blend(cls, acc.first, acc.second);
  }
}

void PrototypeStore::set(int cls, Vec vector, std::int64_t sample_weight) {
  if (!entries_.empty() && vector.size() != dim() &&
      !(entries_.size() == 1 && entries_.contains(cls))) {
    throw ProtocolError("prototype dimension mismatch");
  }
  entries_[cls] = Entry{std::move(vector), sample_weight};
}

int predict_class(std::span<const double> embedding, const PrototypeMap& prototypes) {
  if (prototypes.empty()) throw DataError("no prototypes available");
  int best_class = prototypes.begin()->first;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [cls, v] : prototypes) {
    double d = squared_distance(embedding, v);
    if (d < best) {
      best = d;
      best_class = cls;
    }
  }
  return best_class;
}

std::vector<int> predict_classes(const Matrix& embeddings, const PrototypeMap& prototypes) {
  if (prototypes.empty()) throw DataError("no prototypes available");
  Matrix centers(0, embeddings.cols());
  std::vector<int> classes;
  for (const auto& [cls, v] : prototypes) {
    centers.append_row(v);
    classes.push_back(cls);
  }
  auto idx = kernels::parallel::nearest(embeddings, centers);
  std::vector<int> out(idx.size());
  for (std::size_t j = 0; j < idx.size(); ++j) out[j] = classes[idx[j]];
  return out;
}

PrototypeMap merge_with_fallback(const PrototypeMap& local, const PrototypeMap& global) {
  PrototypeMap out = global;
  for (const auto& [cls, v] : local) out[cls] = v;
  return out;
}

void write_prototypes_csv(std::ostream& out, const PrototypeMap& prototypes) {
  const std::size_t dim = prototypes.empty() ? 0 : prototypes.begin()->second.size();
  out << "class";
  for (std::size_t d = 0; d < dim; ++d) out << ",coord" << d;
  out << '\n';
  for (const auto& [cls, v] : prototypes) {
    out << cls;
    for (double x : v) out << ',' << fmt::format("{}", x);
    out << '\n';
  }
}

PrototypeMap read_prototypes_csv(std::istream& in) {
  PrototypeMap out;
  std::string line;
  if (!std::getline(in, line) || line.rfind("class", 0) != 0) {
    throw DataError("prototype CSV: missing header");
  }
  const auto dim = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const char* p = line.data();
    const char* end = p + line.size();
    int cls = 0;
    auto [q, ec] = std::from_chars(p, end, cls);
    if (ec != std::errc()) throw DataError(fmt::format("prototype CSV line {}: bad class", line_no));
    Vec v(dim);
    p = q;
    for (std::size_t d = 0; d < dim; ++d) {
      if (p == end || *p != ',') {
        throw DataError(fmt::format("prototype CSV line {}: expected {} coordinates", line_no, dim));
      }
      ++p;
      auto [r, ec2] = std::from_chars(p, end, v[d]);
      if (ec2 != std::errc()) {
        throw DataError(fmt::format("prototype CSV line {}: bad coordinate", line_no));
      }
      p = r;
    }
    out.emplace(cls, std::move(v));
  }
  return out;
}

}  // namespace sthfl
