#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "clbruno/continual.hpp"
#include "clbruno/errors.hpp"
#include "clbruno/persist.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace clbruno;

namespace {

UpdateConfig quick(std::size_t epochs = 3) {
  UpdateConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 16;
  cfg.pseudo_size = 16;
  cfg.learning_rate = 1e-2;
  return cfg;
}

// Replay NLL written out from the flow and latent primitives.
double replay_reference(const ClBrunoModel& model, const PseudoDataset& p) {
  const TaskRecord& rec = model.task(p.task);
  double total = 0.0;
  for (std::size_t i = 0; i < p.labels.size(); ++i) {
    const auto [z, ld] = model.flow().forward(p.features.row(i), p.task, p.labels[i]);
    const Tensor d = latent_log_density(rec.latent.variance(), rec.latent.covariance(), rec.state,
                                        Tensor::row_vector(z), LatentConditioning::kIndependent);
    total += d[0] + ld;
  }
  return -total;
}

}  // namespace

TEST(Pseudo, DeterministicAndConsistentWithInverse) {
  std::mt19937_64 rng(31);
  ClBrunoModel model = fixture::random_model(4, {3}, 1);
  fixture::fill_states(model, rng);
  std::mt19937_64 r1(5);
  std::mt19937_64 r2(5);
  const PseudoDataset a = generate_pseudo(model, 1, 20, r1);
  const PseudoDataset b = generate_pseudo(model, 1, 20, r2);
  EXPECT_EQ(a.latents, b.latents);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.features, b.features);
  for (std::size_t i = 0; i < 20; ++i) {
    const auto x = model.flow().inverse(a.latents.row(i), 1, a.labels[i]);
    for (std::size_t d = 0; d < 4; ++d) {
      EXPECT_NEAR(a.features(i, d), x[d], 1e-12);
    }
  }
}

TEST(Pseudo, LabelsFollowPrior) {
  ClBrunoModel single(fixture::small_flow(3), 2);
  single.register_task(1, {{4, 10}});
  std::mt19937_64 rng(32);
  for (Label y : generate_pseudo(single, 1, 50, rng).labels) {
    EXPECT_EQ(y, 4);
  }

  ClBrunoModel model(fixture::small_flow(3), 2);
  model.register_task(1, {{1, 30}, {2, 10}});
  const PseudoDataset p = generate_pseudo(model, 1, 20000, rng);
  const double ones = static_cast<double>(std::count(p.labels.begin(), p.labels.end(), 1));
  EXPECT_NEAR(ones / 20000.0, 0.75, 0.015);
}

TEST(Pseudo, LatentsFollowPredictiveAndLeaveState) {
  std::mt19937_64 rng(33);
  ClBrunoModel model = fixture::random_model(2, {2}, 3);
  fixture::fill_states(model, rng, 8);
  const LatentState before = model.task(1).state;
  const Predictive pred = predictive(model.task(1).latent, before);
  const PseudoDataset p = generate_pseudo(model, 1, 20000, rng);
  EXPECT_EQ(model.task(1).state, before);
  for (std::size_t d = 0; d < 2; ++d) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 20000; ++i) {
      mean += p.latents(i, d);
    }
    mean /= 20000.0;
    double var = 0.0;
    for (std::size_t i = 0; i < 20000; ++i) {
      var += (p.latents(i, d) - mean) * (p.latents(i, d) - mean);
    }
    var /= 20000.0;
    EXPECT_NEAR(mean, pred.mean[d], 4.0 * std::sqrt(pred.variance[d] / 20000.0));
    EXPECT_NEAR(var / pred.variance[d], 1.0, 0.05);
  }
}

TEST(Replay, AtSnapshotEqualsSnapshotNll) {
  std::mt19937_64 rng(34);
  ClBrunoModel model = fixture::random_model(4, {2, 3}, 4);
  fixture::fill_states(model, rng);
  const ModelSnapshot snapshot(model);
  std::vector<PseudoDataset> pseudo;
  double want = 0.0;
  for (TaskId t : {1, 2}) {
    pseudo.push_back(generate_pseudo(snapshot, t, 12, rng));
    want += replay_reference(snapshot.model(), pseudo.back());
  }
  Tape tape(false);
  EXPECT_NEAR(replay_nll(tape, model, snapshot, pseudo).scalar(), want, 1e-9);
  EXPECT_LT(functional_reg(tape, model, pseudo).scalar(), 1e-18);
}

TEST(Replay, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(35);
  ClBrunoModel model = fixture::random_model(4, {2}, 5, 2);
  fixture::fill_states(model, rng);
  const ModelSnapshot snapshot(model);
  std::vector<PseudoDataset> pseudo = {generate_pseudo(snapshot, 1, 4, rng)};
  fixture::perturb(model, rng, 0.1);

  auto loss = [&](Tape& tape) {
    return ops::add(replay_nll(tape, model, snapshot, pseudo),
                    functional_reg(tape, model, pseudo));
  };
  Tape tape;
  tape.backward(loss(tape));
  std::vector<double> analytic;
  std::vector<double> numeric;
  for (Parameter* p : model.flow().parameters()) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      analytic.push_back(p->grad[i]);
      numeric.push_back(oracle::central_difference(
          [&] {
            Tape t2(false);
            return loss(t2).scalar();
          },
          p->value.data()[i], 1e-6));
    }
  }
  EXPECT_LT(oracle::relative_error(analytic, numeric), 1e-6);
}

TEST(Til, FirstTaskLearnsFromScratch) {
  std::mt19937_64 rng(36);
  ClBrunoModel model(fixture::small_flow(4), 6);
  const Dataset data = fixture::blobs(1, 64, 4, {1, 2}, rng);
  const double before = [&] {
    ClBrunoModel probe = model;
    probe.register_task(1, data.label_counts());
    return task_nll(probe, 1, data.features, data.labels, LatentState(4));
  }();
  const auto history = til_update(model, 1, data, quick(10), rng);
  ASSERT_EQ(history.size(), 10u);
  for (const EpochMetrics& m : history) {
    EXPECT_EQ(m.replay, 0.0);
    EXPECT_EQ(m.functional, 0.0);
    EXPECT_DOUBLE_EQ(m.total, m.nll);
  }
  EXPECT_LT(task_nll(model, 1, data.features, data.labels, LatentState(4)), before);
  EXPECT_EQ(model.task(1).state.count, 64u);
  EXPECT_EQ(model.task(1).prior(), (std::vector<double>{0.5, 0.5}));
}

TEST(Til, SecondTaskUsesRegularizers) {
  std::mt19937_64 rng(37);
  ClBrunoModel model(fixture::small_flow(4), 7);
  til_update(model, 1, fixture::blobs(1, 32, 4, {1, 2}, rng), quick(2), rng);
  const auto history = til_update(model, 2, fixture::blobs(2, 32, 4, {1, 2, 3}, rng), quick(2), rng);
  for (const EpochMetrics& m : history) {
    EXPECT_GT(m.replay, 0.0);
    EXPECT_GE(m.functional, 0.0);
    EXPECT_NEAR(m.total, m.nll + m.replay + m.functional, 1e-9 * std::abs(m.total));
  }
  EXPECT_EQ(model.task_ids(), (std::vector<TaskId>{1, 2}));
}

TEST(Til, ZeroWeightsSkipReplay) {
  std::mt19937_64 rng(38);
  ClBrunoModel model(fixture::small_flow(4), 8);
  til_update(model, 1, fixture::blobs(1, 32, 4, {1, 2}, rng), quick(1), rng);
  UpdateConfig cfg = quick(2);
  cfg.alpha1 = 0.0;
  cfg.alpha2 = 0.0;
  for (const EpochMetrics& m : til_update(model, 2, fixture::blobs(2, 32, 4, {1}, rng), cfg, rng)) {
    EXPECT_EQ(m.replay, 0.0);
    EXPECT_EQ(m.functional, 0.0);
  }
}

TEST(Til, RejectsBadInput) {
  std::mt19937_64 rng(39);
  ClBrunoModel model(fixture::small_flow(4), 9);
  til_update(model, 1, fixture::blobs(1, 16, 4, {1, 2}, rng), quick(1), rng);
  EXPECT_THROW(til_update(model, 1, fixture::blobs(1, 16, 4, {3}, rng), quick(1), rng),
               ContractError);
  EXPECT_THROW(til_update(model, 2, Dataset{2, Tensor(0, 4), {}, ""}, quick(1), rng), DataError);
  EXPECT_THROW(til_update(model, 2, fixture::blobs(2, 16, 5, {1}, rng), quick(1), rng),
               DimensionError);
  UpdateConfig bad = quick(1);
  bad.alpha1 = -1.0;
  EXPECT_THROW(til_update(model, 2, fixture::blobs(2, 16, 4, {1}, rng), bad, rng), ConfigError);
  EXPECT_FALSE(model.has_task(2));
}

TEST(Til, NonFiniteLossDiverges) {
  std::mt19937_64 rng(40);
  ClBrunoModel model(fixture::small_flow(4), 10);
  Dataset data = fixture::blobs(1, 16, 4, {1, 2}, rng);
  data.features(3, 2) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(til_update(model, 1, data, quick(1), rng), DivergenceError);
}

TEST(Cil, ExtendsTaskWithFrozenLatent) {
  std::mt19937_64 rng(41);
  ClBrunoModel model(fixture::small_flow(4), 11);
  til_update(model, 1, fixture::blobs(1, 40, 4, {1, 2}, rng), quick(2), rng);
  const Tensor nu_pre = model.task(1).latent.variance_pre.value;
  const Tensor rho_pre = model.task(1).latent.correlation_pre.value;
  const auto history = cil_update(model, 1, fixture::blobs(1, 20, 4, {3}, rng), quick(2), rng);
  EXPECT_EQ(history.size(), 2u);
  EXPECT_EQ(model.task(1).latent.variance_pre.value, nu_pre);
  EXPECT_EQ(model.task(1).latent.correlation_pre.value, rho_pre);
  EXPECT_EQ(model.task(1).labels(), (std::vector<Label>{1, 2, 3}));
  EXPECT_EQ(model.task(1).state.count, 60u);
  EXPECT_EQ(model.task(1).prior(), (std::vector<double>{1.0 / 3, 1.0 / 3, 1.0 / 3}));
}

TEST(Cil, FirstStepLossIsConditionalNll) {
  std::mt19937_64 rng(42);
  ClBrunoModel model(fixture::small_flow(4), 12);
  til_update(model, 1, fixture::blobs(1, 40, 4, {1, 2}, rng), quick(2), rng);
  const Dataset batch = fixture::blobs(1, 8, 4, {3}, rng);
  ClBrunoModel probe = model;
  probe.register_task(1, batch.label_counts());
  const double want = task_nll(probe, 1, batch.features, batch.labels, probe.task(1).state);
  UpdateConfig cfg = quick(1);
  cfg.batch_size = 8;
  cfg.learning_rate = 1e-12;
  const auto history = cil_update(model, 1, batch, cfg, rng);
  // One step over one permutation of the batch; the NLL is order-free.
  EXPECT_NEAR(history[0].nll, want, 1e-8 * std::abs(want));
}

TEST(Cil, ContractsAndEmptyBatch) {
  std::mt19937_64 rng(43);
  ClBrunoModel model(fixture::small_flow(4), 13);
  til_update(model, 1, fixture::blobs(1, 16, 4, {1, 2}, rng), quick(1), rng);
  EXPECT_THROW(cil_update(model, 1, fixture::blobs(1, 8, 4, {2, 3}, rng), quick(1), rng),
               ContractError);
  EXPECT_THROW(cil_update(model, 4, fixture::blobs(4, 8, 4, {3}, rng), quick(1), rng),
               UnknownConditionError);
  const auto bytes = serialize(model);
  EXPECT_TRUE(cil_update(model, 1, Dataset{1, Tensor(0, 4), {}, ""}, quick(1), rng).empty());
  EXPECT_EQ(serialize(model), bytes);
}
