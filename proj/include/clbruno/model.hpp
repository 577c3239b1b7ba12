#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "clbruno/autodiff.hpp"
#include "clbruno/data.hpp"
#include "clbruno/flow.hpp"
#include "clbruno/latent.hpp"

namespace clbruno {

/// Training controls for one incremental update.
struct UpdateConfig {
  double alpha1 = 1.0;  // replay likelihood weight
  double alpha2 = 1.0;  // functional regularizer weight
  std::size_t pseudo_size = 128;
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  bool resample_pseudo = true;

  /// Throws ConfigError on negative weights or zero sizes.
  void validate() const;
};

/// Everything the model knows about one task.
struct TaskRecord {
  TaskId id = 0;
  std::map<Label, std::uint64_t> label_counts;
  LatentParams latent;
  LatentState state;

  std::size_t class_count() const { return label_counts.size(); }
  std::vector<Label> labels() const;
  /// Empirical label proportions, in ascending label order.
  std::vector<double> prior() const;
  double log_prior(Label y) const;
};

/// Conditional flow plus per-task exchangeable latent laws.
class ClBrunoModel {
 public:
  ClBrunoModel() = default;
  ClBrunoModel(const FlowConfig& flow_config, std::uint64_t seed);

  std::size_t dim() const { return flow_.dim(); }
  ConditionalFlow& flow() { return flow_; }
  const ConditionalFlow& flow() const { return flow_; }

  const std::map<TaskId, TaskRecord>& tasks() const { return tasks_; }
  std::map<TaskId, TaskRecord>& tasks() { return tasks_; }
  bool has_task(TaskId t) const { return tasks_.contains(t); }
  /// Throws UnknownConditionError.
  const TaskRecord& task(TaskId t) const;
  TaskRecord& task(TaskId t);
  std::vector<TaskId> task_ids() const;
  /// One past the largest registered id; 1 for an empty model.
  TaskId next_task_id() const;

  /// New task: prior from counts, fresh latent parameters, new embeddings.
  /// Existing task (class-incremental path): labels must be disjoint from the
  /// task's labels (ContractError otherwise); counts merge, latent untouched.
  void register_task(TaskId t, const std::map<Label, std::uint64_t>& counts);

  /// Latents of the examples under the current flow (no gradient).
  Tensor latents(TaskId t, const Tensor& features, std::span<const Label> labels) const;

  /// Absorbs the examples' latents under the current flow into task t's state.
  void finalize_task_state(TaskId t, const Tensor& features, std::span<const Label> labels);

  UpdateConfig& hyperparameters() { return hyper_; }
  const UpdateConfig& hyperparameters() const { return hyper_; }
  std::uint64_t seed() const { return seed_; }

  /// Input transform applied by the command-line pipeline, if any.
  std::optional<Standardizer>& preprocessing() { return preprocessing_; }
  const std::optional<Standardizer>& preprocessing() const { return preprocessing_; }

 private:
  ConditionalFlow flow_;
  std::map<TaskId, TaskRecord> tasks_;
  UpdateConfig hyper_;
  std::uint64_t seed_ = 0;
  std::optional<Standardizer> preprocessing_;
};

std::vector<Condition> conditions_for(TaskId t, std::span<const Label> labels);

enum class LatentTraining { kTrainable, kFrozen };

/// Negative log likelihood of an ordered example sequence of task t, starting
/// from `initial` (empty for learning from scratch, the stored state for the
/// conditional likelihood of a new batch given old data).
Var task_nll(Tape& tape, ClBrunoModel& model, TaskId t, const Tensor& features,
             std::span<const Label> labels, const LatentState& initial, LatentTraining latent);
Var task_nll(Tape& tape, const ClBrunoModel& model, TaskId t, const Tensor& features,
             std::span<const Label> labels, const LatentState& initial);
double task_nll(const ClBrunoModel& model, TaskId t, const Tensor& features,
                std::span<const Label> labels, const LatentState& initial);

}  // namespace clbruno
