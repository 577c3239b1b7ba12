#include "clbruno/continual.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "clbruno/errors.hpp"
#include "clbruno/optimizer.hpp"

namespace clbruno {

PseudoDataset generate_pseudo(const ClBrunoModel& source, TaskId t, std::size_t n,
                              std::mt19937_64& rng) {
  const TaskRecord& rec = source.task(t);
  const std::vector<Label> labels = rec.labels();
  const std::vector<double> prior = rec.prior();
  const Predictive pred = predictive(rec.latent, rec.state);
  const std::size_t dim = source.dim();

  std::discrete_distribution<std::size_t> pick(prior.begin(), prior.end());
  std::normal_distribution<double> normal(0.0, 1.0);
  PseudoDataset out{t, Tensor(n, dim), {}, {}};
  out.labels.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    out.labels.push_back(labels[pick(rng)]);
    auto z = out.latents.row(j);
    for (std::size_t d = 0; d < dim; ++d) {
      z[d] = pred.mean[d] + std::sqrt(pred.variance[d]) * normal(rng);
    }
  }
  if (n == 0) {
    out.features = Tensor(0, dim);
    return out;
  }
  Tape tape(false);
  const auto conds = conditions_for(t, out.labels);
  out.features = source.flow().inverse(tape, tape.constant(out.latents), conds).output.value();
  return out;
}

PseudoDataset generate_pseudo(const ModelSnapshot& snapshot, TaskId t, std::size_t n,
                              std::mt19937_64& rng) {
  return generate_pseudo(snapshot.model(), t, n, rng);
}

Var replay_nll(Tape& tape, ClBrunoModel& training, const ModelSnapshot& snapshot,
               std::span<const PseudoDataset> pseudo) {
  Var total = tape.constant(Tensor(1, 1, 0.0));
  for (const PseudoDataset& p : pseudo) {
    if (p.labels.empty()) {
      continue;
    }
    const TaskRecord& old = snapshot.model().task(p.task);
    const auto conds = conditions_for(p.task, p.labels);
    const FlowPass pass = training.flow().forward(tape, tape.constant(p.features), conds);
    const LatentVars lv = bind_latent(tape, old.latent);
    const Var log_density =
        ops::latent_log_density(pass.output, lv, old.state, LatentConditioning::kIndependent);
    total = ops::add(total, ops::add(ops::sum(log_density), ops::sum(pass.log_det)));
  }
  return ops::scale(total, -1.0);
}

Var functional_reg(Tape& tape, ClBrunoModel& training, std::span<const PseudoDataset> pseudo) {
  Var total = tape.constant(Tensor(1, 1, 0.0));
  for (const PseudoDataset& p : pseudo) {
    if (p.labels.empty()) {
      continue;
    }
    const auto conds = conditions_for(p.task, p.labels);
    const FlowPass pass = training.flow().inverse(tape, tape.constant(p.latents), conds);
    const Var gap = ops::sub(pass.output, tape.constant(p.features));
    total = ops::add(total, ops::sum(ops::square(gap)));
  }
  return total;
}

namespace {

std::vector<EpochMetrics> train_increment(ClBrunoModel& model, const ModelSnapshot& snapshot,
                                          TaskId t, const Dataset& data,
                                          const LatentState& initial, LatentTraining latent_mode,
                                          const UpdateConfig& cfg, std::mt19937_64& rng,
                                          const EpochCallback& on_epoch) {
  std::vector<Parameter*> params = model.flow().parameters();
  if (latent_mode == LatentTraining::kTrainable) {
    TaskRecord& rec = model.task(t);
    params.push_back(&rec.latent.variance_pre);
    params.push_back(&rec.latent.correlation_pre);
  }
  Adam optimizer(params, AdamOptions{cfg.learning_rate});
  optimizer.zero_grad();

  const std::vector<TaskId> old_tasks = snapshot.model().task_ids();
  const bool use_pseudo = !old_tasks.empty() && (cfg.alpha1 > 0.0 || cfg.alpha2 > 0.0);
  std::vector<PseudoDataset> pseudo;
  auto draw_pseudo = [&] {
    pseudo.clear();
    for (TaskId old : old_tasks) {
      pseudo.push_back(generate_pseudo(snapshot, old, cfg.pseudo_size, rng));
    }
  };
  if (use_pseudo && !cfg.resample_pseudo) {
    draw_pseudo();
  }

  std::vector<EpochMetrics> history;
  std::vector<std::size_t> order(data.size());
  Tape tape;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    EpochMetrics m;
    m.epoch = epoch + 1;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const Dataset batch = data.subset(idx);

      tape.reset();
      const Var nll =
          task_nll(tape, model, t, batch.features, batch.labels, initial, latent_mode);
      Var total = nll;
      m.nll += nll.scalar();
      if (use_pseudo) {
        if (cfg.resample_pseudo) {
          draw_pseudo();
        }
        if (cfg.alpha1 > 0.0) {
          const Var replay = replay_nll(tape, model, snapshot, pseudo);
          m.replay += replay.scalar();
          total = ops::add(total, ops::scale(replay, cfg.alpha1));
        }
        if (cfg.alpha2 > 0.0) {
          const Var reg = functional_reg(tape, model, pseudo);
          m.functional += reg.scalar();
          total = ops::add(total, ops::scale(reg, cfg.alpha2));
        }
      }
      const double loss = total.scalar();
      if (!std::isfinite(loss)) {
        throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch + 1));
      }
      m.total += loss;
      tape.backward(total);
      optimizer.step();
      optimizer.zero_grad();
      ++steps;
    }
    if (steps > 0) {
      const double s = static_cast<double>(steps);
      m.total /= s;
      m.nll /= s;
      m.replay /= s;
      m.functional /= s;
    }
    history.push_back(m);
    if (on_epoch) {
      on_epoch(m);
    }
  }
  return history;
}

void check_dimension(const ClBrunoModel& model, const Dataset& data) {
  if (!data.empty() && data.dim() != model.dim()) {
    throw DimensionError("data dimension " + std::to_string(data.dim()) +
                         " does not match model dimension " + std::to_string(model.dim()));
  }
}

}  // namespace

std::vector<EpochMetrics> til_update(ClBrunoModel& model, TaskId t, const Dataset& data,
                                     const UpdateConfig& cfg, std::mt19937_64& rng,
                                     const EpochCallback& on_epoch) {
  cfg.validate();
  if (model.has_task(t)) {
    throw ContractError("task " + std::to_string(t) + " is already registered");
  }
  if (data.empty()) {
    throw DataError("task " + std::to_string(t) + " has no examples");
  }
  check_dimension(model, data);

  const ModelSnapshot snapshot(model);
  model.register_task(t, data.label_counts());
  auto history = train_increment(model, snapshot, t, data, LatentState(model.dim()),
                                 LatentTraining::kTrainable, cfg, rng, on_epoch);
  model.finalize_task_state(t, data.features, data.labels);
  return history;
}

std::vector<EpochMetrics> cil_update(ClBrunoModel& model, TaskId k, const Dataset& batch,
                                     const UpdateConfig& cfg, std::mt19937_64& rng,
                                     const EpochCallback& on_epoch) {
  cfg.validate();
  const TaskRecord& existing = model.task(k);
  if (batch.empty()) {
    return {};
  }
  check_dimension(model, batch);
  const auto counts = batch.label_counts();
  for (const auto& [y, n] : counts) {
    if (existing.label_counts.contains(y)) {
      throw ContractError("task " + std::to_string(k) + " already has label " +
                          std::to_string(y) + "; class-incremental batches must be disjoint");
    }
  }

  const ModelSnapshot snapshot(model);
  model.register_task(k, counts);
  const LatentState stored = model.task(k).state;
  auto history = train_increment(model, snapshot, k, batch, stored, LatentTraining::kFrozen, cfg,
                                 rng, on_epoch);
  model.finalize_task_state(k, batch.features, batch.labels);
  return history;
}

}  // namespace clbruno
