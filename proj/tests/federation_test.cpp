#include "sthfl/federation.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "sthfl/error.hpp"
#include "sthfl/rng.hpp"

namespace sthfl {
namespace {

ExperimentConfig small_config(Algorithm a = Algorithm::kGldp) {
  ExperimentConfig c;
  c.algorithm = a;
  c.rounds = 2;
  c.clients_per_round = 3;
  c.data.num_classes = 4;
  c.data.input_dim = 4;
  c.data.samples_per_class = 60;
  c.data.noise_sigma = 1.0;
  c.plan.num_clients = 5;
  c.plan.classes_per_client = 2;
  c.plan.num_stages = 2;
  c.plan.imbalance_factor = 2.0;
  c.hidden_dim = 6;
  c.opt.mu_epochs = 1;
  c.opt.nu_epochs = 2;
  c.opt.batch_size = 8;
  c.opt.step_size = 0.05;
  c.seed = 3;
  return c;
}

Layer random_layer(std::size_t out, std::size_t in, Rng& rng) {
  Layer l{Matrix(out, in), Vec(out)};
  for (double& v : l.weight.values()) v = rng.normal();
  for (double& v : l.bias) v = rng.normal();
  return l;
}

std::string metrics_csv(const MetricsLog& log) {
  std::ostringstream out;
  log.write_csv(out);
  return out.str();
}

TEST(SelectClients, AllWhenCountIsN) {
  auto s = select_clients(1, 7, 7, 3);
  EXPECT_EQ(s, (std::vector<int>{0, 1, 2, 3, 4, 5, 6}));
}

TEST(SelectClients, DeterministicSortedAndDistinct) {
  EXPECT_EQ(select_clients(5, 20, 1, 4), select_clients(5, 20, 1, 4));
  auto s = select_clients(5, 20, 10, 9);
  EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
  EXPECT_EQ(std::set<int>(s.begin(), s.end()).size(), 10u);
  EXPECT_THROW(select_clients(5, 3, 4, 1), ConfigError);
}

TEST(SelectClients, SelectionFrequencyConcentrates) {
  std::vector<int> hits(100, 0);
  for (int round = 1; round <= 1000; ++round) {
    for (int id : select_clients(42, 100, 10, round)) ++hits[static_cast<std::size_t>(id)];
  }
  for (int h : hits) {
    EXPECT_GE(h, 70);
    EXPECT_LE(h, 130);
  }
}

TEST(AggregateMu, SmallCases) {
  Layer a{Matrix(1, 1), Vec{2.0}}, b{Matrix(1, 1), Vec{4.0}};
  a.weight(0, 0) = 1.0;
  b.weight(0, 0) = 3.0;
  const Layer both[] = {a, b};
  Layer m = aggregate_mu(both);
  EXPECT_EQ(m.weight(0, 0), 2.0);
  EXPECT_EQ(m.bias[0], 3.0);
  const Layer one[] = {a};
  EXPECT_EQ(aggregate_mu(one), a);
}

TEST(AggregateMu, MatchesSummationOracleAndIgnoresOrder) {
  Rng rng(7);
  std::vector<Layer> ups;
  for (int i = 0; i < 7; ++i) ups.push_back(random_layer(3, 5, rng));
  Layer m = aggregate_mu(ups);
  for (std::size_t k = 0; k < m.weight.values().size(); ++k) {
    double sum = 0.0;
    for (const auto& u : ups) sum += u.weight.values()[k];
    EXPECT_NEAR(m.weight.values()[k], sum / 7.0, 1e-12);
  }
  for (int trial = 0; trial < 20; ++trial) {
    rng.shuffle(std::span<Layer>(ups));
    EXPECT_EQ(aggregate_mu(ups), m);
  }
}

TEST(AggregateMu, Errors) {
  EXPECT_THROW(aggregate_mu(std::span<const Layer>{}), ProtocolError);
  const Layer mixed[] = {Layer{Matrix(1, 2), Vec(1)}, Layer{Matrix(2, 1), Vec(2)}};
  EXPECT_THROW(aggregate_mu(mixed), ProtocolError);
}

struct Harness {
  ExperimentConfig config;
  FederatedData data;
  ServerState server;
  std::vector<ClientState> clients;

  explicit Harness(ExperimentConfig c) : config(std::move(c)), data(build_federated_data(config)) {
    ModelParams init = init_params(static_cast<std::size_t>(config.data.input_dim),
                                   static_cast<std::size_t>(config.hidden_dim),
                                   static_cast<std::size_t>(config.data.num_classes), 99);
    server.theta = init.rep;
    if (config.algorithm == Algorithm::kFedAvg || config.algorithm == Algorithm::kFedProx) {
      server.head = init.head;
    }
    server.global_protos = PrototypeStore(config.beta);
    server.round_index = 1;
    for (const auto& tl : data.timelines) {
      clients.push_back(ClientState{tl.client_id, init, PrototypeStore(config.beta),
                                    std::make_shared<const ClientTimeline>(tl), 0});
    }
  }
};

TEST(RunStage, ZeroStepSizeKeepsTheta) {
  ExperimentConfig c = small_config();
  c.opt.step_size = 0.0;
  Harness h(c);
  const Layer before = h.server.theta;
  const int sel[] = {0, 2, 4};
  run_stage(h.server, h.clients, sel, 1, h.config);
  EXPECT_EQ(h.server.theta, before);
  EXPECT_FALSE(h.server.global_protos.empty());
}

TEST(RunStage, SingleClientThetaIsItsRepresentation) {
  Harness h(small_config());
  const int sel[] = {3};
  run_stage(h.server, h.clients, sel, 1, h.config);
  EXPECT_EQ(h.server.theta, h.clients[3].params.rep);
  EXPECT_NE(h.clients[3].params.rep, h.clients[0].params.rep);
  EXPECT_EQ(h.clients[3].current_stage, 1);
  EXPECT_EQ(h.clients[0].current_stage, 0);
}

TEST(RunStage, TwoClientsMatchHandSteppedTrace) {
  ExperimentConfig c = small_config();
  c.opt.batch_size = 1000;  // one batch per epoch
  c.opt.weight_decay = 0.0;
  Harness h(c);
  const Layer theta0 = h.server.theta;
  const int sel[] = {1, 2};
  auto before = h.clients;
  run_stage(h.server, h.clients, sel, 1, h.config);

  Vec sum(theta0.weight.values().size() + theta0.bias.size(), 0.0);
  for (int id : sel) {
    const StageTask& st = before[static_cast<std::size_t>(id)].timeline->stages[0];
    ModelParams p = before[static_cast<std::size_t>(id)].params;
    p.rep = theta0;
    Batch batch{st.train.inputs, st.train.labels};
    auto g = grad_total(p, batch, {}, {}, c.weights).grad;
    for (std::size_t k = 0; k < g.rep.weight.values().size(); ++k) {
      p.rep.weight.values()[k] -= c.opt.step_size * g.rep.weight.values()[k];
    }
    for (std::size_t k = 0; k < g.rep.bias.size(); ++k) p.rep.bias[k] -= c.opt.step_size * g.rep.bias[k];
    std::size_t k = 0;
    for (double v : p.rep.weight.values()) sum[k++] += v;
    for (double v : p.rep.bias) sum[k++] += v;
  }
  std::size_t k = 0;
  for (double v : h.server.theta.weight.values()) EXPECT_NEAR(v, sum[k++] / 2.0, 1e-12);
  for (double v : h.server.theta.bias) EXPECT_NEAR(v, sum[k++] / 2.0, 1e-12);
}

TEST(RunStage, ScheduleDoesNotChangeTheResult) {
  for (Algorithm a : {Algorithm::kGldp, Algorithm::kFedAvg, Algorithm::kFedRep}) {
    Harness p(small_config(a)), r(small_config(a));
    const int sel[] = {0, 1, 3, 4};
    StageOptions par;
    par.parallel = true;
    StageOptions rev;
    rev.parallel = false;
    rev.reverse_order = true;
    for (int stage = 1; stage <= 2; ++stage) {
      run_stage(p.server, p.clients, sel, stage, p.config, par);
      run_stage(r.server, r.clients, sel, stage, r.config, rev);
    }
    EXPECT_EQ(p.server, r.server) << algorithm_name(a);
    for (std::size_t i = 0; i < p.clients.size(); ++i) {
      EXPECT_EQ(p.clients[i].params, r.clients[i].params);
      EXPECT_EQ(p.clients[i].local_protos, r.clients[i].local_protos);
    }
  }
}

TEST(RunStage, RejectsUnsortedOrUnknownSelection) {
  Harness h(small_config());
  const int unsorted[] = {2, 1};
  EXPECT_THROW(run_stage(h.server, h.clients, unsorted, 1, h.config), ProtocolError);
  const int unknown[] = {9};
  EXPECT_THROW(run_stage(h.server, h.clients, unknown, 1, h.config), ProtocolError);
}

TEST(RunStage, EmptyTrainingStageIsSkippedWithWarning) {
  Harness h(small_config());
  auto tl = std::make_shared<ClientTimeline>(*h.clients[0].timeline);
  tl->stages[0].train = subset(tl->stages[0].train, std::span<const std::size_t>{});
  h.clients[0].timeline = tl;
  const int sel[] = {0, 1};
  StageReport rep = run_stage(h.server, h.clients, sel, 1, h.config);
  EXPECT_EQ(rep.trained, std::vector<int>{1});
  ASSERT_EQ(rep.warnings.size(), 1u);
  EXPECT_NE(rep.warnings[0].find("client 0"), std::string::npos);
  EXPECT_EQ(h.server.theta, h.clients[1].params.rep);
}

TEST(RunStage, SeenClassesHaveLocalPrototypes) {
  Harness h(small_config());
  const int sel[] = {0, 1, 2, 3, 4};
  for (int stage = 1; stage <= 2; ++stage) {
    run_stage(h.server, h.clients, sel, stage, h.config);
    for (const auto& c : h.clients) {
      for (int m = 0; m < stage; ++m) {
        for (int cls : c.timeline->stages[static_cast<std::size_t>(m)].train.labels) {
          EXPECT_TRUE(c.local_protos.contains(cls));
          EXPECT_TRUE(h.server.global_protos.contains(cls));
        }
      }
    }
  }
}

TEST(Experiment, FrozenRunIsAFixedPoint) {
  ExperimentConfig c = small_config();
  c.opt.step_size = 0.0;
  c.beta = 1.0;
  c.clients_per_round = c.plan.num_clients;  // every class is seen in round 1
  c.rounds = 1;
  ServerState after_first = run_experiment(c).server;
  for (int k = 2; k <= 6; ++k) {
    c.rounds = k;
    ServerState s = run_experiment(c).server;
    s.round_index = after_first.round_index;
    EXPECT_EQ(s, after_first) << "after " << k << " rounds";
  }
}

TEST(Experiment, DeterministicInSeed) {
  ExperimentConfig c = small_config();
  auto a = run_experiment(c);
  auto b = run_experiment(c);
  EXPECT_EQ(metrics_csv(a.metrics), metrics_csv(b.metrics));
  ExperimentOptions serial;
  serial.parallel = false;
  EXPECT_EQ(metrics_csv(run_experiment(c, serial).metrics), metrics_csv(a.metrics));
  c.seed = 4;
  EXPECT_NE(metrics_csv(run_experiment(c).metrics), metrics_csv(a.metrics));
}

TEST(Experiment, ZeroRoundsAgreeAcrossAlgorithms) {
  std::vector<std::string> values;
  for (Algorithm a : {Algorithm::kGldp, Algorithm::kFedAvg, Algorithm::kFedRep, Algorithm::kFedProx}) {
    ExperimentConfig c = small_config(a);
    c.rounds = 0;
    std::string v;
    for (const auto& r : run_experiment(c).metrics.rows()) v += r.metric + "=" + std::to_string(r.value) + ";";
    values.push_back(v);
  }
  for (const auto& v : values) EXPECT_EQ(v, values[0]);
}

TEST(Experiment, FedProxWithoutPenaltyIsFedAvg) {
  ExperimentConfig avg = small_config(Algorithm::kFedAvg);
  ExperimentConfig prox = small_config(Algorithm::kFedProx);
  prox.fedprox_mu = 0.0;
  auto a = run_experiment(avg);
  auto p = run_experiment(prox);
  EXPECT_EQ(a.server, p.server);
  ASSERT_EQ(a.metrics.rows().size(), p.metrics.rows().size());
  for (std::size_t i = 0; i < a.metrics.rows().size(); ++i) {
    EXPECT_EQ(a.metrics.rows()[i].value, p.metrics.rows()[i].value);
  }
  prox.fedprox_mu = 1.0;
  EXPECT_NE(run_experiment(prox).server.theta, a.server.theta);
}

TEST(Experiment, FedRepTrainsLikeGldpWithoutPrototypeLosses) {
  ExperimentConfig off = small_config(Algorithm::kGldp);
  off.weights.use_lp = false;
  off.weights.use_gp = false;
  auto g = run_experiment(off);
  auto f = run_experiment(small_config(Algorithm::kFedRep));
  EXPECT_EQ(g.server.theta, f.server.theta);
  for (std::size_t i = 0; i < g.clients.size(); ++i) EXPECT_EQ(g.clients[i].params, f.clients[i].params);
}

TEST(Experiment, LossTermsChangeTraining) {
  ExperimentConfig off = small_config();
  off.weights.use_lp = off.weights.use_gp = false;
  EXPECT_NE(run_experiment(off).server.theta, run_experiment(small_config()).server.theta);
}

TEST(Experiment, MetricsAreWellFormed) {
  auto r = run_experiment(small_config());
  std::set<std::tuple<int, int, std::string, std::string>> keys;
  for (const auto& row : r.metrics.rows()) {
    EXPECT_GE(row.value, 0.0);
    EXPECT_LE(row.value, 1.0);
    EXPECT_TRUE(keys.insert({row.round, row.stage, row.metric, row.scope}).second)
        << "duplicate row " << row.round << " " << row.stage << " " << row.metric << " " << row.scope;
  }
  auto s = summarize(r.metrics, 10);
  EXPECT_TRUE(s.contains(kMetricGlobal));
  EXPECT_TRUE(s.contains(kMetricLocal));
  EXPECT_TRUE(s.contains(kMetricSelected));
}

TEST(Privacy, GldpUploadsCarryNoHeadInputsOrLabels) {
  ExperimentOptions opt;
  opt.keep_privacy_trail = true;
  ExperimentConfig c = small_config();
  auto r = run_experiment(c, opt);
  auto data = build_federated_data(c);
  AuditReport rep = audit_uploads(r.messages, r.trail, data.timelines);
  EXPECT_GT(rep.uploads_checked, 0u);
  EXPECT_TRUE(rep.clean()) << rep.head_sections << " " << rep.head_value_hits << " "
                           << rep.input_value_hits << " " << rep.label_fields;
}

TEST(Privacy, AuditCatchesFullModelUploads) {
  ExperimentOptions opt;
  opt.keep_privacy_trail = true;
  ExperimentConfig c = small_config(Algorithm::kFedAvg);
  auto r = run_experiment(c, opt);
  auto data = build_federated_data(c);
  AuditReport rep = audit_uploads(r.messages, r.trail, data.timelines);
  EXPECT_GT(rep.head_sections, 0u);
  EXPECT_GT(rep.head_value_hits, 0u);
}

TEST(Privacy, AuditCatchesRawInputsAndGarbage) {
  ExperimentConfig c = small_config();
  auto data = build_federated_data(c);
  const LabeledSet& train = data.timelines[2].stages[0].train;
  UploadMessage leak;
  leak.client_id = 2;
  leak.rep = Layer{Matrix(1, 2), Vec(1)};
  leak.rep.weight(0, 1) = train.inputs(0, 3);
  MessageLog log;
  log.record(Direction::kClientToServer, encode(leak));
  log.record(Direction::kClientToServer, Bytes{'S', 'T', 'H', 'M', 1});
  PrivacyTrail trail;
  trail.uploads = {{2, {}}, {2, {}}};
  AuditReport rep = audit_uploads(log, trail, data.timelines);
  EXPECT_EQ(rep.input_value_hits, 1u);
  EXPECT_EQ(rep.label_fields, 1u);
  EXPECT_FALSE(rep.clean());
}

TEST(Names, ParseRoundTrip) {
  for (Algorithm a : {Algorithm::kGldp, Algorithm::kFedAvg, Algorithm::kFedRep, Algorithm::kFedProx}) {
    EXPECT_EQ(parse_algorithm(algorithm_name(a)), a);
  }
  EXPECT_EQ(parse_algorithm("fedavg"), Algorithm::kFedAvg);
  EXPECT_EQ(parse_inference("lp"), InferenceMode::kLocal);
  EXPECT_EQ(parse_inference("GP"), InferenceMode::kGlobal);
  EXPECT_THROW(parse_algorithm("sgd"), ConfigError);
  ExperimentConfig c;
  EXPECT_EQ(c.display_name(), "GLDP-GP");
  c.inference = InferenceMode::kLocal;
  EXPECT_EQ(c.display_name(), "GLDP-LP");
}

}  // namespace
}  // namespace sthfl
