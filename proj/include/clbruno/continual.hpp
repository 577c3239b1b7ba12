#pragma once

#include <functional>
#include <random>
#include <span>
#include <vector>

#include "clbruno/autodiff.hpp"
#include "clbruno/data.hpp"
#include "clbruno/model.hpp"

namespace clbruno {

/// Frozen deep copy of a model taken at the start of an update.
class ModelSnapshot {
 public:
  explicit ModelSnapshot(const ClBrunoModel& model) : model_(model) {}
  const ClBrunoModel& model() const { return model_; }

 private:
  const ClBrunoModel model_;
};

/// Pseudo examples replayed for one old task.
struct PseudoDataset {
  TaskId task = 0;
  Tensor latents;   // z', drawn from the task's latent predictive
  std::vector<Label> labels;
  Tensor features;  // X' = snapshot inverse of z' under (task, label)
};

/// Draws n pseudo examples of task t: labels from the stored prior, latents
/// i.i.d. from the predictive given the stored state, features through the
/// inverse flow.
PseudoDataset generate_pseudo(const ClBrunoModel& source, TaskId t, std::size_t n,
                              std::mt19937_64& rng);
PseudoDataset generate_pseudo(const ModelSnapshot& snapshot, TaskId t, std::size_t n,
                              std::mt19937_64& rng);

/// Negative log likelihood of the pseudo features under the model being
/// trained, with each task's latent law and stored state taken from the
/// snapshot as constants. Every pseudo point is scored against the fixed
/// predictive.
Var replay_nll(Tape& tape, ClBrunoModel& training, const ModelSnapshot& snapshot,
               std::span<const PseudoDataset> pseudo);

/// Sum of squared distances between the trained model's inverse at z' and X'.
Var functional_reg(Tape& tape, ClBrunoModel& training, std::span<const PseudoDataset> pseudo);

/// Loss terms averaged over the gradient steps of one epoch.
struct EpochMetrics {
  std::size_t epoch = 0;
  double total = 0.0;
  double nll = 0.0;
  double replay = 0.0;
  double functional = 0.0;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Task-incremental update with a new task id. Registers the task, trains the
/// flow and the new task's latent law on L + a1 L' + a2 R, then absorbs the
/// task's latents under the final flow. On an empty model this is learning
/// from scratch.
std::vector<EpochMetrics> til_update(ClBrunoModel& model, TaskId t, const Dataset& data,
                                     const UpdateConfig& cfg, std::mt19937_64& rng,
                                     const EpochCallback& on_epoch = {});

/// Class-incremental update of known task k with labels disjoint from its
/// existing ones. The task's latent law stays frozen; only the flow trains.
std::vector<EpochMetrics> cil_update(ClBrunoModel& model, TaskId k, const Dataset& batch,
                                     const UpdateConfig& cfg, std::mt19937_64& rng,
                                     const EpochCallback& on_epoch = {});

}  // namespace clbruno
