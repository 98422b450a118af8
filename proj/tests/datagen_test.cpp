#include "sthfl/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sthfl/error.hpp"

namespace sthfl {
namespace {

DatasetSpec spec_of(int z, int u, int n, double sigma, std::uint64_t seed) {
  DatasetSpec s;
  s.num_classes = z;
  s.input_dim = u;
  s.samples_per_class = n;
  s.noise_sigma = sigma;
  s.seed = seed;
  return s;
}

TEST(SyntheticData, CountsAndLabels) {
  LabeledSet d = make_synthetic_dataset(spec_of(2, 2, 3, 0.5, 7));
  EXPECT_EQ(d.size(), 6u);
  EXPECT_EQ(d.labels, (std::vector<int>{0, 0, 0, 1, 1, 1}));
  EXPECT_EQ(d.inputs.rows(), 6u);
  EXPECT_EQ(d.inputs.cols(), 2u);
  std::set<SampleId> ids(d.ids.begin(), d.ids.end());
  EXPECT_EQ(ids.size(), 6u);
}

TEST(SyntheticData, DeterministicInSeed) {
  auto a = make_synthetic_dataset(spec_of(3, 4, 10, 0.5, 9));
  auto b = make_synthetic_dataset(spec_of(3, 4, 10, 0.5, 9));
  auto c = make_synthetic_dataset(spec_of(3, 4, 10, 0.5, 10));
  EXPECT_EQ(a.inputs, b.inputs);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_FALSE(a.inputs == c.inputs);
}

TEST(SyntheticData, CentersAreDistinct) {
  Matrix centers = synthetic_class_centers(spec_of(10, 16, 5, 0.5, 3));
  for (std::size_t i = 0; i < centers.rows(); ++i) {
    for (std::size_t j = i + 1; j < centers.rows(); ++j) {
      EXPECT_GT(squared_distance(centers.row(i), centers.row(j)), 0.0);
    }
  }
}

TEST(SyntheticData, NearestTrueCenterSeparatesHeldOutDraws) {
  DatasetSpec s = spec_of(10, 16, 100, 0.5, 21);
  s.class_center_scale = 4.0;
  Matrix centers = synthetic_class_centers(s);
  LabeledSet held_out = sample_around_centers(centers, 100, s.noise_sigma, 999);
  EXPECT_GT(oracle::nearest_centroid_accuracy(centers, held_out.inputs, held_out.labels), 0.95);
}

TEST(SyntheticData, InvalidFieldsAreReported) {
  DatasetSpec s = spec_of(0, 2, 3, 0.5, 1);
  try {
    s.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("num_classes"), std::string::npos);
  }
  EXPECT_THROW(make_synthetic_dataset(spec_of(2, 2, 3, -1.0, 1)), ConfigError);
}

TEST(LongTail, CountRule) {
  for (int k = 0; k < 10; ++k) {
    EXPECT_EQ(longtail_count(100, 100.0, k, 10),
              static_cast<int>(std::lround(100.0 * std::pow(100.0, -k / 9.0))));
  }
  EXPECT_EQ(longtail_count(100, 100.0, 0, 10), 100);
  EXPECT_EQ(longtail_count(100, 100.0, 3, 10), 22);
  EXPECT_EQ(longtail_count(100, 100.0, 9, 10), 1);
  EXPECT_EQ(longtail_count(3, 1000.0, 9, 10), 1);  // floor of one sample
}

TEST(LongTail, AppliedCountsAreMonotone) {
  LabeledSet d = make_synthetic_dataset(spec_of(10, 4, 100, 0.5, 2));
  LabeledSet identity = apply_longtail(d, 1.0, 5);
  EXPECT_EQ(identity.class_counts(), std::vector<std::size_t>(10, 100));
  LabeledSet tail = apply_longtail(d, 100.0, 5);
  auto counts = tail.class_counts();
  for (int k = 0; k < 10; ++k) {
    EXPECT_EQ(counts[k], static_cast<std::size_t>(longtail_count(100, 100.0, k, 10)));
    if (k > 0) EXPECT_LE(counts[k], counts[k - 1]);
  }
  EXPECT_THROW(apply_longtail(d, 0.5, 5), ConfigError);
}

TEST(LongTail, KeepsOriginalRows) {
  LabeledSet d = make_synthetic_dataset(spec_of(3, 2, 20, 0.5, 2));
  LabeledSet tail = apply_longtail(d, 10.0, 1);
  for (std::size_t j = 0; j < tail.size(); ++j) {
    auto it = std::find(d.ids.begin(), d.ids.end(), tail.ids[j]);
    ASSERT_NE(it, d.ids.end());
    std::size_t src = static_cast<std::size_t>(it - d.ids.begin());
    EXPECT_EQ(d.labels[src], tail.labels[j]);
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(d.inputs(src, c), tail.inputs(j, c));
  }
}

PartitionPlan plan_of(int n, int s, int m, std::uint64_t seed) {
  PartitionPlan p;
  p.num_clients = n;
  p.classes_per_client = s;
  p.num_stages = m;
  p.seed = seed;
  return p;
}

TEST(Partition, SmallSingleStagePlan) {
  LabeledSet d = make_synthetic_dataset(spec_of(4, 2, 20, 0.5, 1));
  auto tl = partition_clients(d, plan_of(2, 2, 1, 3));
  ASSERT_EQ(tl.size(), 2u);
  for (const auto& t : tl) {
    ASSERT_EQ(t.stages.size(), 1u);
    EXPECT_EQ(t.stages[0].class_set.size(), 2u);
    EXPECT_EQ(t.stages[0].stage_index, 1);
  }
}

TEST(Partition, DisjointClassesCoverTheDataExactly) {
  LabeledSet d = make_synthetic_dataset(spec_of(4, 2, 25, 0.5, 1));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto tl = partition_clients(d, plan_of(2, 2, 1, seed));
    std::set<int> a(tl[0].classes.begin(), tl[0].classes.end());
    std::set<int> b(tl[1].classes.begin(), tl[1].classes.end());
    bool disjoint = std::none_of(a.begin(), a.end(), [&](int c) { return b.contains(c); });
    if (!disjoint) continue;
    std::multiset<SampleId> seen;
    for (const auto& t : tl) {
      for (const auto& st : t.stages) {
        seen.insert(st.train.ids.begin(), st.train.ids.end());
        seen.insert(st.test.ids.begin(), st.test.ids.end());
      }
    }
    EXPECT_EQ(seen, std::multiset<SampleId>(d.ids.begin(), d.ids.end()));
    return;
  }
  FAIL() << "no seed produced disjoint class assignments";
}

TEST(Partition, TwentyClientPlanProperties) {
  LabeledSet d = apply_longtail(make_synthetic_dataset(spec_of(10, 4, 1000, 0.5, 1)), 50.0, 2);
  auto tl = partition_clients(d, plan_of(20, 4, 5, 7));
  ASSERT_EQ(tl.size(), 20u);
  std::set<SampleId> seen;
  std::set<int> covered;
  bool heterogeneous = false;
  for (const auto& t : tl) {
    EXPECT_EQ(std::set<int>(t.classes.begin(), t.classes.end()).size(), 4u);
    covered.insert(t.classes.begin(), t.classes.end());
    ASSERT_EQ(t.stages.size(), 5u);
    for (std::size_t m = 0; m < t.stages.size(); ++m) {
      const StageTask& st = t.stages[m];
      EXPECT_EQ(st.stage_index, static_cast<int>(m) + 1);
      EXPECT_EQ(st.sample_count(), st.train.size());
      for (int y : st.train.labels) EXPECT_TRUE(std::binary_search(st.class_set.begin(), st.class_set.end(), y));
      for (int y : st.test.labels) EXPECT_TRUE(std::binary_search(st.class_set.begin(), st.class_set.end(), y));
      for (const LabeledSet* part : {&st.train, &st.test}) {
        for (SampleId id : part->ids) EXPECT_TRUE(seen.insert(id).second) << "duplicate id " << id;
      }
      if (m > 0 && st.class_set != t.stages[m - 1].class_set) heterogeneous = true;
    }
  }
  EXPECT_EQ(covered.size(), 10u);
  EXPECT_TRUE(heterogeneous);
}

TEST(Partition, EightyTwentySplit) {
  LabeledSet d = make_synthetic_dataset(spec_of(4, 2, 50, 0.5, 1));
  auto tl = partition_clients(d, plan_of(2, 2, 1, 1));
  for (const auto& t : tl) {
    const StageTask& st = t.stages[0];
    const double total = static_cast<double>(st.train.size() + st.test.size());
    EXPECT_NEAR(st.test.size() / total, 0.2, 0.03);
  }
}

TEST(Partition, SlidingWindowsIntroduceNewClasses) {
  std::vector<int> cls{3, 7, 1, 5};
  auto w = stage_class_windows(cls, 5, StageLayout::kSliding);
  ASSERT_EQ(w.size(), 5u);
  for (std::size_t m = 1; m < w.size(); ++m) {
    std::set<int> before;
    for (std::size_t j = 0; j < m; ++j) before.insert(w[j].begin(), w[j].end());
    if (m < cls.size() - 1) {
      EXPECT_TRUE(std::any_of(w[m].begin(), w[m].end(), [&](int c) { return !before.contains(c); }));
    }
    EXPECT_NE(w[m], w[m - 1]);
  }
  auto single = stage_class_windows(cls, 1, StageLayout::kSliding);
  ASSERT_EQ(single.size(), 1u);
  EXPECT_EQ(single[0].size(), 4u);
  // Few stages: the windows still reach every class.
  for (int m = 1; m <= 4; ++m) {
    std::set<int> all;
    for (const auto& stage : stage_class_windows(cls, m, StageLayout::kSliding)) {
      all.insert(stage.begin(), stage.end());
    }
    EXPECT_EQ(all.size(), 4u) << m << " stages";
  }
  auto rep = stage_class_windows(cls, 3, StageLayout::kReplicated);
  for (const auto& stage : rep) EXPECT_EQ(stage.size(), 4u);
}

TEST(Partition, ReplicatedStagesAreCopies) {
  LabeledSet d = make_synthetic_dataset(spec_of(4, 2, 30, 0.5, 1));
  PartitionPlan p = plan_of(2, 2, 3, 4);
  p.layout = StageLayout::kReplicated;
  for (const auto& t : partition_clients(d, p)) {
    for (const auto& st : t.stages) {
      EXPECT_EQ(st.train.ids, t.stages[0].train.ids);
      EXPECT_EQ(st.test.ids, t.stages[0].test.ids);
      EXPECT_EQ(st.train.inputs, t.stages[0].train.inputs);
    }
  }
}

TEST(Partition, DeterministicInSeed) {
  LabeledSet d = make_synthetic_dataset(spec_of(6, 2, 40, 0.5, 1));
  auto a = partition_clients(d, plan_of(5, 3, 2, 11));
  auto b = partition_clients(d, plan_of(5, 3, 2, 11));
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].classes, b[i].classes);
    for (std::size_t m = 0; m < a[i].stages.size(); ++m) {
      EXPECT_EQ(a[i].stages[m].train.ids, b[i].stages[m].train.ids);
      EXPECT_EQ(a[i].stages[m].test.ids, b[i].stages[m].test.ids);
    }
  }
}

TEST(Partition, InvalidPlans) {
  LabeledSet d = make_synthetic_dataset(spec_of(4, 2, 10, 0.5, 1));
  EXPECT_THROW(partition_clients(d, plan_of(2, 5, 1, 1)), ConfigError);
  EXPECT_THROW(partition_clients(d, plan_of(2, 2, 0, 1)), ConfigError);
}

TEST(Partition, EmptyStageIsADataError) {
  // One sample per class cannot fill five stages for every client.
  LabeledSet d = make_synthetic_dataset(spec_of(4, 2, 1, 0.5, 1));
  EXPECT_THROW(partition_clients(d, plan_of(4, 2, 5, 1)), DataError);
}

TEST(Partition, ExportImportRoundTrip) {
  DatasetSpec s = spec_of(4, 3, 20, 0.5, 5);
  PartitionPlan p = plan_of(3, 2, 2, 6);
  auto tl = partition_clients(make_synthetic_dataset(s), p);
  auto dir = std::filesystem::temp_directory_path() / "sthfl_export_roundtrip";
  std::filesystem::remove_all(dir);
  export_partitions(dir, s, p, tl);
  EXPECT_TRUE(std::filesystem::exists(dir / "manifest.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "client_0" / "stage_1_train.csv"));
  auto back = import_partitions(dir);
  EXPECT_EQ(back.spec, s);
  EXPECT_EQ(back.plan, p);
  ASSERT_EQ(back.timelines.size(), tl.size());
  for (std::size_t i = 0; i < tl.size(); ++i) {
    ASSERT_EQ(back.timelines[i].stages.size(), tl[i].stages.size());
    for (std::size_t m = 0; m < tl[i].stages.size(); ++m) {
      const auto& x = tl[i].stages[m];
      const auto& y = back.timelines[i].stages[m];
      EXPECT_EQ(x.train.inputs, y.train.inputs);
      EXPECT_EQ(x.train.labels, y.train.labels);
      EXPECT_EQ(x.train.ids, y.train.ids);
      EXPECT_EQ(x.test.inputs, y.test.inputs);
      EXPECT_EQ(x.class_set, y.class_set);
    }
  }
  std::filesystem::remove_all(dir);
}

TEST(Partition, ImportOfMissingDirectoryFails) {
  EXPECT_THROW(import_partitions("/nonexistent/sthfl/partitions"), IoError);
}

}  // namespace
}  // namespace sthfl
