#include "sthfl/metrics.hpp"

#include <sstream>

#include <gtest/gtest.h>

#include "sthfl/error.hpp"

namespace sthfl {
namespace {

// Identity representation; with non-negative inputs the embedding equals the input.
Layer identity(std::size_t dim) {
  Layer l{Matrix(dim, dim), Vec(dim, 0.0)};
  for (std::size_t i = 0; i < dim; ++i) l.weight(i, i) = 1.0;
  return l;
}

Matrix far_centers(int z, std::size_t dim) {
  Matrix c(static_cast<std::size_t>(z), dim);
  for (int k = 0; k < z; ++k) {
    for (std::size_t d = 0; d < dim; ++d) c(static_cast<std::size_t>(k), d) = 50.0;
    c(static_cast<std::size_t>(k), static_cast<std::size_t>(k) % dim) += 20.0 * (1 + k / static_cast<int>(dim));
  }
  return c;
}

PrototypeMap prototypes_at(const Matrix& centers) {
  PrototypeMap p;
  for (std::size_t k = 0; k < centers.rows(); ++k) {
    p[static_cast<int>(k)] = Vec(centers.row(k).begin(), centers.row(k).end());
  }
  return p;
}

LabeledSet only_class(const LabeledSet& d, int cls) {
  std::vector<std::size_t> rows;
  for (std::size_t j = 0; j < d.size(); ++j) {
    if (d.labels[j] == cls) rows.push_back(j);
  }
  return subset(d, rows);
}

TEST(Accuracy, CountsCorrectRows) {
  LabeledSet d;
  d.num_classes = 2;
  d.inputs = Matrix(4, 1);
  d.labels = {0, 1, 1, 0};
  d.ids = {0, 1, 2, 3};
  Classifier always_one = [](const Matrix& x) { return std::vector<int>(x.rows(), 1); };
  EXPECT_DOUBLE_EQ(accuracy(always_one, d), 0.5);
  LabeledSet empty;
  empty.inputs = Matrix(0, 1);
  EXPECT_THROW(accuracy(always_one, empty), DataError);
}

TEST(Accuracy, PerfectStoreOnSeparatedData) {
  Matrix centers = far_centers(6, 4);
  LabeledSet test = sample_around_centers(centers, 50, 1.0, 5);
  const LabeledSet* tests[] = {&test};
  EXPECT_GE(acc_global(identity(4), prototypes_at(centers), tests), 0.99);
}

TEST(Accuracy, SingleClassWithItsPrototype) {
  Matrix centers = far_centers(3, 3);
  LabeledSet one = only_class(sample_around_centers(centers, 20, 1.0, 6), 2);
  const LabeledSet* tests[] = {&one};
  EXPECT_EQ(acc_global(identity(3), prototypes_at(centers), tests), 1.0);
  const Classifier personal[] = {prototype_classifier(identity(3), prototypes_at(centers))};
  EXPECT_EQ(acc_local(personal, tests), 1.0);
}

TEST(Accuracy, EmptyStoreIsAnError) {
  Matrix centers = far_centers(2, 2);
  LabeledSet test = sample_around_centers(centers, 5, 1.0, 6);
  const LabeledSet* tests[] = {&test};
  EXPECT_THROW(acc_global(identity(2), {}, tests), DataError);
  const Classifier personal[] = {prototype_classifier(identity(2), {})};
  EXPECT_THROW(acc_local(personal, tests), DataError);
}

TEST(Accuracy, ClientMeanSkipsEmptyTestSets) {
  Matrix centers = far_centers(2, 2);
  LabeledSet a = sample_around_centers(centers, 10, 1.0, 1);
  LabeledSet empty;
  empty.inputs = Matrix(0, 2);
  Classifier always_zero = [](const Matrix& x) { return std::vector<int>(x.rows(), 0); };
  const Classifier cls[] = {always_zero, always_zero};
  const LabeledSet* tests[] = {&a, &empty};
  EXPECT_DOUBLE_EQ(mean_client_accuracy(cls, tests), 0.5);
}

ClientTimeline two_stage_timeline(const LabeledSet& d, std::vector<int> first, std::vector<int> second) {
  ClientTimeline tl;
  for (int m = 0; m < 2; ++m) {
    const auto& classes = m == 0 ? first : second;
    std::vector<std::size_t> rows;
    for (std::size_t j = 0; j < d.size(); ++j) {
      if (std::find(classes.begin(), classes.end(), d.labels[j]) != classes.end()) rows.push_back(j);
    }
    StageTask st;
    st.stage_index = m + 1;
    st.train = subset(d, rows);
    st.test = subset(d, rows);
    st.class_set = classes;
    tl.stages.push_back(st);
  }
  return tl;
}

TEST(SelectedAccuracy, FirstStageIsPlainAccuracy) {
  Matrix centers = far_centers(4, 4);
  LabeledSet d = sample_around_centers(centers, 30, 3.0, 2);
  ClientTimeline tl = two_stage_timeline(d, {0, 1}, {2, 3});
  Classifier c = prototype_classifier(identity(4), prototypes_at(centers));
  EXPECT_EQ(acc_sel(c, tl, 1), accuracy(c, tl.stages[0].test));
}

TEST(SelectedAccuracy, ForgetfulModelScoresTheNewStageShare) {
  Matrix centers = far_centers(4, 4);
  LabeledSet d = sample_around_centers(centers, 30, 1.0, 2);
  d = union_by_id(std::vector<const LabeledSet*>{&d});
  // Drop some stage-two rows so the shares are uneven.
  std::vector<std::size_t> rows;
  for (std::size_t j = 0; j < d.size(); ++j) {
    if (d.labels[j] < 2 || j % 3 != 0) rows.push_back(j);
  }
  d = subset(d, rows);
  ClientTimeline tl = two_stage_timeline(d, {0, 1}, {2, 3});
  PrototypeMap stage_two{{2, prototypes_at(centers)[2]}, {3, prototypes_at(centers)[3]}};
  Classifier forgetful = prototype_classifier(identity(4), stage_two);
  const double n1 = static_cast<double>(tl.stages[0].test.size());
  const double n2 = static_cast<double>(tl.stages[1].test.size());
  EXPECT_NEAR(acc_sel(forgetful, tl, 2), n2 / (n1 + n2), 1e-12);
}

TEST(SelectedAccuracy, IdenticalStagesGiveStageAccuracy) {
  Matrix centers = far_centers(3, 3);
  LabeledSet d = sample_around_centers(centers, 20, 30.0, 4);
  ClientTimeline tl = two_stage_timeline(d, {0, 1, 2}, {0, 1, 2});
  Classifier c = prototype_classifier(identity(3), prototypes_at(centers));
  const double stage_acc = accuracy(c, tl.stages[0].test);
  EXPECT_LT(stage_acc, 1.0);  // noisy enough that the check is not vacuous
  EXPECT_EQ(acc_sel(c, tl, 2), stage_acc);
  EXPECT_EQ(test_union(tl, 2).size(), tl.stages[0].test.size());
}

TEST(Forgetting, Arithmetic) {
  const double drop[] = {0.8, 0.5};
  EXPECT_DOUBLE_EQ(forgetting(drop, 2), 0.8 - 0.5);
  const double rising[] = {0.2, 0.4, 0.9};
  EXPECT_EQ(forgetting(rising, 3), 0.0);
  const double same[] = {0.6, 0.6, 0.6};
  EXPECT_EQ(forgetting(same, 3), 0.0);
  const double peak[] = {0.3, 0.9, 0.7, 0.4};
  EXPECT_DOUBLE_EQ(forgetting(peak, 4), 0.9 - 0.4);
  EXPECT_EQ(forgetting(peak, 1), 0.0);
  EXPECT_THROW(forgetting(peak, 5), DataError);
}

TEST(Summary, AveragesFinalWindow) {
  MetricsLog log;
  for (int r = 0; r <= 4; ++r) {
    log.add({r, 2, "X", kMetricGlobal, kScopeAll, 0.1 * r});
    log.add({r, 2, "X", kMetricGlobal, "3", 1.0});
    if (r > 0) {
      log.add({r, 1, "X", kMetricSelected, kScopeAll, 0.0});
      log.add({r, 2, "X", kMetricSelected, kScopeAll, 0.2 * r});
    }
  }
  auto s = summarize(log, 2);
  EXPECT_NEAR(s[kMetricGlobal], (0.3 + 0.4) / 2, 1e-12);
  EXPECT_NEAR(s[kMetricSelected], (0.6 + 0.8) / 2, 1e-12);
  MetricsLog initial;
  initial.add({0, 1, "X", kMetricLocal, kScopeAll, 0.25});
  EXPECT_EQ(summarize(initial, 10)[kMetricLocal], 0.25);
}

TEST(MetricsCsv, RoundTrip) {
  MetricsLog log;
  log.add({1, 2, "GLDP-GP", kMetricSelected, "4", 1.0 / 3.0});
  log.add({1, 2, "GLDP-GP", kMetricSelected, kScopeAll, 0.125});
  std::stringstream ss;
  log.write_csv(ss);
  EXPECT_EQ(MetricsLog::read_csv(ss).rows(), log.rows());
  std::stringstream bad("round,stage\n");
  EXPECT_THROW(MetricsLog::read_csv(bad), DataError);
}

}  // namespace
}  // namespace sthfl
