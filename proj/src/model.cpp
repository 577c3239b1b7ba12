#include "clbruno/model.hpp"

#include <cmath>
#include <limits>
#include <utility>

#include "clbruno/errors.hpp"

namespace clbruno {

void UpdateConfig::validate() const {
  if (alpha1 < 0.0 || alpha2 < 0.0 || !std::isfinite(alpha1) || !std::isfinite(alpha2)) {
    throw ConfigError("regularization weights must be finite and non-negative");
  }
  if (pseudo_size == 0) {
    throw ConfigError("pseudo_size must be at least 1");
  }
  if (batch_size == 0) {
    throw ConfigError("batch_size must be at least 1");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be positive");
  }
}

std::vector<Label> TaskRecord::labels() const {
  std::vector<Label> out;
  out.reserve(label_counts.size());
  for (const auto& [y, n] : label_counts) {
    out.push_back(y);
  }
  return out;
}

std::vector<double> TaskRecord::prior() const {
  double total = 0.0;
  for (const auto& [y, n] : label_counts) {
    total += static_cast<double>(n);
  }
  std::vector<double> out;
  out.reserve(label_counts.size());
  for (const auto& [y, n] : label_counts) {
    out.push_back(static_cast<double>(n) / total);
  }
  return out;
}

double TaskRecord::log_prior(Label y) const {
  auto it = label_counts.find(y);
  if (it == label_counts.end()) {
    throw UnknownConditionError("label " + std::to_string(y) + " not in task " +
                                std::to_string(id));
  }
  double total = 0.0;
  for (const auto& [label, n] : label_counts) {
    total += static_cast<double>(n);
  }
  return std::log(static_cast<double>(it->second) / total);
}

ClBrunoModel::ClBrunoModel(const FlowConfig& flow_config, std::uint64_t seed)
    : flow_(flow_config, seed), seed_(seed) {}

const TaskRecord& ClBrunoModel::task(TaskId t) const {
  auto it = tasks_.find(t);
  if (it == tasks_.end()) {
    throw UnknownConditionError("unknown task " + std::to_string(t));
  }
  return it->second;
}

TaskRecord& ClBrunoModel::task(TaskId t) {
  return const_cast<TaskRecord&>(std::as_const(*this).task(t));
}

std::vector<TaskId> ClBrunoModel::task_ids() const {
  std::vector<TaskId> ids;
  for (const auto& [t, rec] : tasks_) {
    ids.push_back(t);
  }
  return ids;
}

TaskId ClBrunoModel::next_task_id() const {
  return tasks_.empty() ? 1 : tasks_.rbegin()->first + 1;
}

void ClBrunoModel::register_task(TaskId t, const std::map<Label, std::uint64_t>& counts) {
  if (counts.empty()) {
    throw ContractError("register_task: no labels for task " + std::to_string(t));
  }
  std::vector<Label> labels;
  for (const auto& [y, n] : counts) {
    if (n == 0) {
      throw ContractError("register_task: label " + std::to_string(y) + " has zero count");
    }
    labels.push_back(y);
  }

  auto it = tasks_.find(t);
  if (it == tasks_.end()) {
    TaskRecord rec;
    rec.id = t;
    rec.label_counts = counts;
    rec.latent = LatentParams(dim(), "task" + std::to_string(t) + ".latent");
    rec.state = LatentState(dim());
    tasks_.emplace(t, std::move(rec));
    flow_.add_condition(t, labels);
    return;
  }

  TaskRecord& rec = it->second;
  for (Label y : labels) {
    if (rec.label_counts.contains(y)) {
      throw ContractError("task " + std::to_string(t) + " already has label " +
                          std::to_string(y) + "; class-incremental batches must be disjoint");
    }
  }
  for (const auto& [y, n] : counts) {
    rec.label_counts.emplace(y, n);
  }
  flow_.add_condition(t, labels);
}

std::vector<Condition> conditions_for(TaskId t, std::span<const Label> labels) {
  std::vector<Condition> conds;
  conds.reserve(labels.size());
  for (Label y : labels) {
    conds.push_back({t, y});
  }
  return conds;
}

Tensor ClBrunoModel::latents(TaskId t, const Tensor& features,
                             std::span<const Label> labels) const {
  if (features.rows() == 0) {
    return Tensor(0, dim());
  }
  Tape tape(false);
  const auto conds = conditions_for(t, labels);
  return flow_.forward(tape, tape.constant(features), conds).output.value();
}

void ClBrunoModel::finalize_task_state(TaskId t, const Tensor& features,
                                       std::span<const Label> labels) {
  TaskRecord& rec = task(t);
  const Tensor z = latents(t, features, labels);
  rec.state.absorb_rows(z);
}

namespace {

template <class Model, class Latent>
Var task_nll_impl(Tape& tape, Model& model, TaskId t, const Tensor& features,
                  std::span<const Label> labels, const LatentState& initial, Latent& latent) {
  if (features.rows() != labels.size()) {
    throw DimensionError("task_nll: feature and label counts differ");
  }
  if (features.rows() > 0 && features.cols() != model.dim()) {
    throw DimensionError("task_nll: feature width " + std::to_string(features.cols()) +
                         " != model dimension " + std::to_string(model.dim()));
  }
  if (features.rows() == 0) {
    return tape.constant(Tensor(1, 1, 0.0));
  }
  const auto conds = conditions_for(t, labels);
  const FlowPass pass = model.flow().forward(tape, tape.constant(features), conds);
  const LatentVars lv = bind_latent(tape, latent);
  const Var log_density =
      ops::latent_log_density(pass.output, lv, initial, LatentConditioning::kSequential);
  return ops::scale(ops::add(ops::sum(log_density), ops::sum(pass.log_det)), -1.0);
}

}  // namespace

Var task_nll(Tape& tape, ClBrunoModel& model, TaskId t, const Tensor& features,
             std::span<const Label> labels, const LatentState& initial, LatentTraining latent) {
  TaskRecord& rec = model.task(t);
  if (latent == LatentTraining::kTrainable) {
    return task_nll_impl(tape, model, t, features, labels, initial, rec.latent);
  }
  const LatentParams& frozen = rec.latent;
  return task_nll_impl(tape, model, t, features, labels, initial, frozen);
}

Var task_nll(Tape& tape, const ClBrunoModel& model, TaskId t, const Tensor& features,
             std::span<const Label> labels, const LatentState& initial) {
  const LatentParams& frozen = model.task(t).latent;
  return task_nll_impl(tape, model, t, features, labels, initial, frozen);
}

double task_nll(const ClBrunoModel& model, TaskId t, const Tensor& features,
                std::span<const Label> labels, const LatentState& initial) {
  Tape tape(false);
  return task_nll(tape, model, t, features, labels, initial).scalar();
}

}  // namespace clbruno
