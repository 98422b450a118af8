#include "sthfl/datagen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>

#include <fmt/format.h>
#include <json.hpp>

#include "sthfl/rng.hpp"

namespace sthfl {

void DatasetSpec::validate() const {
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (input_dim < 2) throw ConfigError("input_dim must be >= 2");
  if (samples_per_class < 1) throw ConfigError("samples_per_class must be >= 1");
  if (!(class_center_scale > 0.0)) throw ConfigError("class_center_scale must be > 0");
  if (!(noise_sigma > 0.0)) throw ConfigError("noise_sigma must be > 0");
}

std::vector<std::size_t> LabeledSet::class_counts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (int label : labels) ++counts[static_cast<std::size_t>(label)];
  return counts;
}

void LabeledSet::validate() const {
  if (inputs.rows() != labels.size()) throw DataError("inputs/labels row count mismatch");
  if (ids.size() != labels.size()) throw DataError("ids/labels row count mismatch");
  for (int label : labels) {
    if (label < 0 || label >= num_classes) {
      throw DataError(fmt::format("label {} outside [0, {})", label, num_classes));
    }
  }
}

LabeledSet subset(const LabeledSet& data, std::span<const std::size_t> rows) {
  LabeledSet out;
  out.num_classes = data.num_classes;
  out.inputs = gather_rows(data.inputs, rows);
  out.labels.reserve(rows.size());
  out.ids.reserve(rows.size());
  for (std::size_t r : rows) {
    out.labels.push_back(data.labels[r]);
    out.ids.push_back(data.ids[r]);
  }
  return out;
}

LabeledSet union_by_id(std::span<const LabeledSet* const> parts) {
  LabeledSet out;
  std::unordered_set<SampleId> seen;
  for (const LabeledSet* part : parts) {
    if (out.inputs.cols() == 0 && out.inputs.rows() == 0) {
      out.inputs = Matrix(0, part->inputs.cols());
    }
    out.num_classes = std::max(out.num_classes, part->num_classes);
    for (std::size_t r = 0; r < part->size(); ++r) {
      if (!seen.insert(part->ids[r]).second) continue;
      out.inputs.append_row(part->inputs.row(r));
      out.labels.push_back(part->labels[r]);
      out.ids.push_back(part->ids[r]);
    }
  }
  return out;
}

void PartitionPlan::validate(int num_classes) const {
  if (num_clients < 1) throw ConfigError("num_clients must be >= 1");
  if (classes_per_client < 1) throw ConfigError("classes_per_client must be >= 1");
  if (classes_per_client > num_classes) {
    throw ConfigError(fmt::format("classes_per_client ({}) exceeds num_classes ({})",
                                  classes_per_client, num_classes));
  }
  if (num_stages < 1) throw ConfigError("num_stages must be >= 1");
  if (num_stages > 1 && classes_per_client < 2 && layout == StageLayout::kSliding) {
    throw ConfigError("classes_per_client must be >= 2 when num_stages > 1");
  }
  if (!(imbalance_factor >= 1.0)) throw ConfigError("imbalance_factor must be >= 1");
}

Matrix synthetic_class_centers(const DatasetSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, {1}));
  const auto z = static_cast<std::size_t>(spec.num_classes);
  const auto dim = static_cast<std::size_t>(spec.input_dim);
  Matrix centers(z, dim);
  for (std::size_t c = 0; c < z; ++c) {
    bool distinct = false;
    while (!distinct) {
      for (double& v : centers.row(c)) v = spec.class_center_scale * rng.normal();
      distinct = true;
      for (std::size_t other = 0; other < c; ++other) {
        if (squared_distance(centers.row(c), centers.row(other)) == 0.0) distinct = false;
      }
    }
  }
  return centers;
}

LabeledSet sample_around_centers(const Matrix& centers, int per_class, double sigma,
                                 std::uint64_t seed) {
  Rng rng(seed);
  LabeledSet out;
  out.num_classes = static_cast<int>(centers.rows());
  const auto n = centers.rows() * static_cast<std::size_t>(per_class);
  out.inputs = Matrix(n, centers.cols());
  out.labels.reserve(n);
  out.ids.reserve(n);
  std::size_t row = 0;
  for (std::size_t c = 0; c < centers.rows(); ++c) {
    for (int i = 0; i < per_class; ++i, ++row) {
      auto dst = out.inputs.row(row);
      auto center = centers.row(c);
      for (std::size_t d = 0; d < dst.size(); ++d) dst[d] = center[d] + sigma * rng.normal();
      out.labels.push_back(static_cast<int>(c));
      out.ids.push_back(static_cast<SampleId>(row));
    }
  }
  return out;
}

LabeledSet make_synthetic_dataset(const DatasetSpec& spec) {
  Matrix centers = synthetic_class_centers(spec);
  return sample_around_centers(centers, spec.samples_per_class, spec.noise_sigma,
                               derive_seed(spec.seed, {2}));
}

int longtail_count(int samples_per_class, double imbalance_factor, int class_index,
                   int num_classes) {
  if (!(imbalance_factor >= 1.0)) throw ConfigError("imbalance_factor must be >= 1");
  double exponent = -static_cast<double>(class_index) / static_cast<double>(num_classes - 1);
  double kept = std::round(samples_per_class * std::pow(imbalance_factor, exponent));
  return std::max(1, static_cast<int>(kept));
}

LabeledSet apply_longtail(const LabeledSet& data, double imbalance_factor,
                          std::uint64_t seed) {
  if (!(imbalance_factor >= 1.0)) throw ConfigError("imbalance_factor must be >= 1");
  data.validate();
  auto counts = data.class_counts();
  const std::size_t per_class = counts.empty() ? 0 : counts.front();
  if (per_class == 0 ||
      std::any_of(counts.begin(), counts.end(), [&](auto c) { return c != per_class; })) {
    throw DataError("apply_longtail expects a balanced dataset");
  }

  Rng rng(seed);
  std::vector<std::vector<std::size_t>> by_class(counts.size());
  for (std::size_t r = 0; r < data.size(); ++r) {
    by_class[static_cast<std::size_t>(data.labels[r])].push_back(r);
  }
  std::vector<std::size_t> keep;
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    auto& rows = by_class[k];
    rng.shuffle(rows);
    auto kept = static_cast<std::size_t>(
        longtail_count(static_cast<int>(per_class), imbalance_factor, static_cast<int>(k),
                       data.num_classes));
    keep.insert(keep.end(), rows.begin(), rows.begin() + static_cast<long>(kept));
  }
  std::sort(keep.begin(), keep.end());
  return subset(data, keep);
}

std::vector<std::vector<int>> stage_class_windows(std::span<const int> client_classes,
                                                  int num_stages, StageLayout layout) {
  const auto s = static_cast<int>(client_classes.size());
  std::vector<std::vector<int>> windows(static_cast<std::size_t>(num_stages));
  if (num_stages == 1 || layout == StageLayout::kReplicated) {
    for (auto& w : windows) w.assign(client_classes.begin(), client_classes.end());
    return windows;
  }
  // Half the classes per stage, widened when there are too few stages for
  // the windows to reach every class.
  const int width = std::min(s, std::max({1, s / 2, s - num_stages + 1}));
  for (int m = 0; m < num_stages; ++m) {
    for (int j = 0; j < width; ++j) {
      windows[static_cast<std::size_t>(m)].push_back(
          client_classes[static_cast<std::size_t>((m + j) % s)]);
    }
  }
  return windows;
}

namespace {

constexpr double kTestFraction = 0.2;

std::vector<std::vector<int>> draw_class_assignment(const PartitionPlan& plan, int z,
                                                    Rng& rng) {
  const bool need_cover = plan.num_clients * plan.classes_per_client >= z;
  for (int attempt = 0; attempt < 10000; ++attempt) {
    std::vector<std::vector<int>> assignment;
    std::vector<int> holders(static_cast<std::size_t>(z), 0);
    for (int i = 0; i < plan.num_clients; ++i) {
      std::vector<int> pool(static_cast<std::size_t>(z));
      std::iota(pool.begin(), pool.end(), 0);
      // Partial Fisher-Yates: the first S slots become the client's classes.
      for (int j = 0; j < plan.classes_per_client; ++j) {
        auto pick = static_cast<std::size_t>(j) + rng.below(static_cast<std::uint64_t>(z - j));
        std::swap(pool[static_cast<std::size_t>(j)], pool[pick]);
        ++holders[static_cast<std::size_t>(pool[static_cast<std::size_t>(j)])];
      }
      pool.resize(static_cast<std::size_t>(plan.classes_per_client));
      assignment.push_back(std::move(pool));
    }
    if (!need_cover || std::all_of(holders.begin(), holders.end(), [](int h) { return h > 0; })) {
      return assignment;
    }
  }
  throw DataError("could not draw a class assignment covering every class");
}

}  // namespace

std::vector<ClientTimeline> partition_clients(const LabeledSet& data,
                                              const PartitionPlan& plan) {
  data.validate();
  plan.validate(data.num_classes);
  const int z = data.num_classes;
  Rng rng(plan.seed);

  auto assignment = draw_class_assignment(plan, z, rng);

  // Disjoint per-class shards, dealt to the holders in client-id order.
  std::vector<std::vector<std::size_t>> rows_by_class(static_cast<std::size_t>(z));
  for (std::size_t r = 0; r < data.size(); ++r) {
    rows_by_class[static_cast<std::size_t>(data.labels[r])].push_back(r);
  }
  // shards[client][class] -> row indices
  std::vector<std::map<int, std::vector<std::size_t>>> shards(
      static_cast<std::size_t>(plan.num_clients));
  for (int c = 0; c < z; ++c) {
    std::vector<int> holders;
    for (int i = 0; i < plan.num_clients; ++i) {
      const auto& cls = assignment[static_cast<std::size_t>(i)];
      if (std::find(cls.begin(), cls.end(), c) != cls.end()) holders.push_back(i);
    }
    auto& rows = rows_by_class[static_cast<std::size_t>(c)];
    rng.shuffle(rows);
    if (holders.empty()) continue;
    const std::size_t base = rows.size() / holders.size();
    const std::size_t extra = rows.size() % holders.size();
    std::size_t offset = 0;
    for (std::size_t h = 0; h < holders.size(); ++h) {
      std::size_t take = base + (h < extra ? 1 : 0);
      shards[static_cast<std::size_t>(holders[h])][c].assign(
          rows.begin() + static_cast<long>(offset),
          rows.begin() + static_cast<long>(offset + take));
      offset += take;
    }
  }

  std::vector<ClientTimeline> timelines;
  timelines.reserve(static_cast<std::size_t>(plan.num_clients));
  const auto m_count = static_cast<std::size_t>(plan.num_stages);
  for (int i = 0; i < plan.num_clients; ++i) {
    ClientTimeline tl;
    tl.client_id = i;
    tl.classes = assignment[static_cast<std::size_t>(i)];
    const bool replicated = plan.layout == StageLayout::kReplicated;
    auto windows = stage_class_windows(tl.classes, plan.num_stages, plan.layout);

    std::vector<std::vector<std::size_t>> train_rows(m_count), test_rows(m_count);
    for (const auto& [cls, rows] : shards[static_cast<std::size_t>(i)]) {
      std::vector<std::size_t> holding;  // stages whose window contains cls
      for (std::size_t m = 0; m < m_count; ++m) {
        if (std::find(windows[m].begin(), windows[m].end(), cls) != windows[m].end()) {
          holding.push_back(m);
        }
      }
      if (replicated) holding.assign(1, 0);
      std::vector<std::vector<std::size_t>> dealt(holding.size());
      for (std::size_t k = 0; k < rows.size(); ++k) dealt[k % holding.size()].push_back(rows[k]);
      for (std::size_t h = 0; h < holding.size(); ++h) {
        const auto& part = dealt[h];
        auto n_test = static_cast<std::size_t>(std::round(kTestFraction * static_cast<double>(part.size())));
        std::size_t n_train = part.size() - n_test;
        auto& tr = train_rows[holding[h]];
        auto& te = test_rows[holding[h]];
        tr.insert(tr.end(), part.begin(), part.begin() + static_cast<long>(n_train));
        te.insert(te.end(), part.begin() + static_cast<long>(n_train), part.end());
      }
    }
    if (replicated) {
      for (std::size_t m = 1; m < m_count; ++m) {
        train_rows[m] = train_rows[0];
        test_rows[m] = test_rows[0];
      }
    }

    for (std::size_t m = 0; m < m_count; ++m) {
      std::sort(train_rows[m].begin(), train_rows[m].end());
      std::sort(test_rows[m].begin(), test_rows[m].end());
      if (train_rows[m].empty() && test_rows[m].empty()) {
        throw DataError(fmt::format("client {} stage {} has no samples", i, m + 1));
      }
      StageTask task;
      task.stage_index = static_cast<int>(m) + 1;
      task.train = subset(data, train_rows[m]);
      task.test = subset(data, test_rows[m]);
      std::set<int> present(task.train.labels.begin(), task.train.labels.end());
      present.insert(task.test.labels.begin(), task.test.labels.end());
      task.class_set.assign(present.begin(), present.end());
      tl.stages.push_back(std::move(task));
    }
    timelines.push_back(std::move(tl));
  }
  return timelines;
}

namespace {

using nlohmann::json;

const char* layout_name(StageLayout layout) {
  return layout == StageLayout::kReplicated ? "replicated" : "sliding";
}

StageLayout parse_layout(const std::string& name) {
  if (name == "sliding") return StageLayout::kSliding;
  if (name == "replicated") return StageLayout::kReplicated;
  throw DataError("unknown stage layout '" + name + "'");
}

void write_set_csv(const std::filesystem::path& path, const LabeledSet& set, int dim) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (int d = 0; d < dim; ++d) out << 'f' << d << ',';
  out << "label\n";
  for (std::size_t r = 0; r < set.size(); ++r) {
    for (double v : set.inputs.row(r)) out << fmt::format("{}", v) << ',';
    out << set.labels[r] << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

LabeledSet read_set_csv(const std::filesystem::path& path, int dim, int num_classes,
                        const std::vector<SampleId>& ids) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  LabeledSet set;
  set.num_classes = num_classes;
  set.inputs = Matrix(0, static_cast<std::size_t>(dim));
  std::string line;
  std::getline(in, line);  // header
  std::vector<double> row(static_cast<std::size_t>(dim));
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (int d = 0; d <= dim; ++d) {
      const char* stop = std::find(p, end, ',');
      if (d < dim) {
        auto [ptr, ec] = std::from_chars(p, stop, row[static_cast<std::size_t>(d)]);
        if (ec != std::errc() || stop == end) {
          throw DataError(fmt::format("{}:{}: malformed feature", path.string(), line_no));
        }
        p = stop + 1;
      } else {
        int label = 0;
        auto [ptr, ec] = std::from_chars(p, stop, label);
        if (ec != std::errc()) {
          throw DataError(fmt::format("{}:{}: malformed label", path.string(), line_no));
        }
        set.labels.push_back(label);
      }
    }
    set.inputs.append_row(row);
  }
  if (ids.size() != set.labels.size()) {
    throw DataError(path.string() + ": row count disagrees with manifest");
  }
  set.ids = ids;
  set.validate();
  return set;
}

}  // namespace

void export_partitions(const std::filesystem::path& dir, const DatasetSpec& spec,
                       const PartitionPlan& plan,
                       std::span<const ClientTimeline> timelines) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  json manifest;
  manifest["format_version"] = 1;
  manifest["spec"] = {{"num_classes", spec.num_classes},
                      {"input_dim", spec.input_dim},
                      {"samples_per_class", spec.samples_per_class},
                      {"class_center_scale", spec.class_center_scale},
                      {"noise_sigma", spec.noise_sigma},
                      {"seed", spec.seed}};
  manifest["plan"] = {{"num_clients", plan.num_clients},
                      {"classes_per_client", plan.classes_per_client},
                      {"num_stages", plan.num_stages},
                      {"imbalance_factor", plan.imbalance_factor},
                      {"stage_layout", layout_name(plan.layout)},
                      {"seed", plan.seed}};
  json clients = json::array();
  for (const auto& tl : timelines) {
    auto client_dir = dir / fmt::format("client_{}", tl.client_id);
    std::filesystem::create_directories(client_dir, ec);
    if (ec) throw IoError("cannot create " + client_dir.string());
    json stages = json::array();
    for (const auto& st : tl.stages) {
      write_set_csv(client_dir / fmt::format("stage_{}_train.csv", st.stage_index), st.train,
                    spec.input_dim);
      write_set_csv(client_dir / fmt::format("stage_{}_test.csv", st.stage_index), st.test,
                    spec.input_dim);
      stages.push_back({{"stage_index", st.stage_index},
                        {"class_set", st.class_set},
                        {"train_ids", st.train.ids},
                        {"test_ids", st.test.ids}});
    }
    clients.push_back({{"client_id", tl.client_id}, {"classes", tl.classes}, {"stages", stages}});
  }
  manifest["clients"] = std::move(clients);
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  out << manifest.dump(1) << '\n';
}

ImportedPartitions import_partitions(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json", std::ios::binary);
  if (!in) throw IoError("missing manifest.json in " + dir.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest.json: ") + e.what());
  }
  ImportedPartitions out;
  try {
    const auto& s = manifest.at("spec");
    out.spec.num_classes = s.at("num_classes");
    out.spec.input_dim = s.at("input_dim");
    out.spec.samples_per_class = s.at("samples_per_class");
    out.spec.class_center_scale = s.at("class_center_scale");
    out.spec.noise_sigma = s.at("noise_sigma");
    out.spec.seed = s.at("seed");
    const auto& p = manifest.at("plan");
    out.plan.num_clients = p.at("num_clients");
    out.plan.classes_per_client = p.at("classes_per_client");
    out.plan.num_stages = p.at("num_stages");
    out.plan.imbalance_factor = p.at("imbalance_factor");
    out.plan.layout = parse_layout(p.at("stage_layout"));
    out.plan.seed = p.at("seed");
    for (const auto& c : manifest.at("clients")) {
      ClientTimeline tl;
      tl.client_id = c.at("client_id");
      tl.classes = c.at("classes").get<std::vector<int>>();
      auto client_dir = dir / fmt::format("client_{}", tl.client_id);
      for (const auto& st : c.at("stages")) {
        StageTask task;
        task.stage_index = st.at("stage_index");
        task.class_set = st.at("class_set").get<std::vector<int>>();
        task.train = read_set_csv(client_dir / fmt::format("stage_{}_train.csv", task.stage_index),
                                  out.spec.input_dim, out.spec.num_classes,
                                  st.at("train_ids").get<std::vector<SampleId>>());
        task.test = read_set_csv(client_dir / fmt::format("stage_{}_test.csv", task.stage_index),
                                 out.spec.input_dim, out.spec.num_classes,
                                 st.at("test_ids").get<std::vector<SampleId>>());
        tl.stages.push_back(std::move(task));
      }
      out.timelines.push_back(std::move(tl));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest.json: ") + e.what());
  }
  return out;
}

}  // namespace sthfl
