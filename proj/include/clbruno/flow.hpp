#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "clbruno/autodiff.hpp"
#include "clbruno/tensor.hpp"

namespace clbruno {

using TaskId = std::int64_t;
using Label = std::int64_t;

/// A (task, label) pair the flow is conditioned on.
struct Condition {
  TaskId task;
  Label label;
  auto operator<=>(const Condition&) const = default;
};

/// Architecture of the conditional flow.
struct FlowConfig {
  std::size_t dim = 0;
  std::size_t coupling_layers = 6;
  std::size_t embedding_dim = 16;
  /// 0 selects max(64, dim).
  std::size_t hidden_width = 0;

  std::size_t resolved_hidden_width() const;
};

/// Dense network with two tanh hidden layers and a linear output.
struct DenseNet {
  DenseNet() = default;
  DenseNet(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng,
           const std::string& name);

  std::size_t input_width() const { return w1.value.rows(); }
  std::size_t output_width() const { return w3.value.cols(); }
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  Parameter w1, b1, w2, b2, w3, b3;
};

/// Affine coupling layer: one coordinate block conditions a shift and a
/// bounded log-scale applied to the other block.
///
///   y_t = shift(c) + exp(kScaleBound * tanh(a(c))) * x_t,   c = [x_c | r_task | s_label]
struct CouplingLayer {
  static constexpr double kScaleBound = 2.0;

  CouplingLayer() = default;
  /// `transform_upper` selects whether columns [split, dim) are transformed
  /// (conditioned on [0, split)) or the reverse.
  CouplingLayer(std::size_t dim, std::size_t split, bool transform_upper, std::size_t embedding_dim,
                std::size_t hidden, std::mt19937_64& rng, const std::string& name);

  std::size_t conditioner_begin() const { return transform_upper ? 0 : split; }
  std::size_t conditioner_width() const { return transform_upper ? split : dim - split; }
  std::size_t transformed_begin() const { return transform_upper ? split : 0; }
  std::size_t transformed_width() const { return dim - conditioner_width(); }

  std::size_t dim = 0;
  std::size_t split = 0;
  bool transform_upper = true;
  DenseNet shift;
  DenseNet log_scale;
};

/// Task and (task, label) embeddings stored as two row tables.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  /// New rows are drawn from a generator seeded by (seed, task, label), so
  /// allocation does not depend on the order conditions arrive in.
  EmbeddingTable(std::size_t embedding_dim, std::uint64_t seed);

  std::size_t embedding_dim() const { return embedding_dim_; }
  std::uint64_t seed() const { return seed_; }
  bool has_task(TaskId t) const { return task_rows_.contains(t); }
  bool has_label(TaskId t, Label y) const { return label_rows_.contains({t, y}); }
  /// Allocates a task embedding; returns false if it already exists.
  bool add_task(TaskId t);
  bool add_label(TaskId t, Label y);
  /// Throws UnknownConditionError for pairs never added.
  std::size_t task_row(TaskId t) const;
  std::size_t label_row(TaskId t, Label y) const;

  const std::map<TaskId, std::size_t>& task_rows() const { return task_rows_; }
  const std::map<std::pair<TaskId, Label>, std::size_t>& label_rows() const { return label_rows_; }

  Parameter& task_table() { return task_table_; }
  const Parameter& task_table() const { return task_table_; }
  Parameter& label_table() { return label_table_; }
  const Parameter& label_table() const { return label_table_; }

  /// Rebuilds tables from persisted rows (rows in ascending table order).
  void restore(std::map<TaskId, std::size_t> task_rows,
               std::map<std::pair<TaskId, Label>, std::size_t> label_rows, Tensor task_values,
               Tensor label_values);

  static constexpr double kInitStddev = 0.1;

 private:
  std::size_t embedding_dim_ = 0;
  std::uint64_t seed_ = 0;
  std::map<TaskId, std::size_t> task_rows_;
  std::map<std::pair<TaskId, Label>, std::size_t> label_rows_;
  Parameter task_table_;
  Parameter label_table_;
};

/// Output of a batched flow pass.
struct FlowPass {
  Var output;
  /// n x 1 log |det J| of the pass in the direction taken.
  Var log_det;
};

/// Conditional bijection between data space (forward input) and latent space.
class ConditionalFlow {
 public:
  ConditionalFlow() = default;
  ConditionalFlow(const FlowConfig& config, std::uint64_t seed);

  const FlowConfig& config() const { return config_; }
  std::size_t dim() const { return config_.dim; }

  /// Data -> latent for a batch of rows, each with its own condition.
  FlowPass forward(Tape& tape, Var x, std::span<const Condition> conds);
  FlowPass forward(Tape& tape, Var x, std::span<const Condition> conds) const;
  /// Latent -> data; log_det is that of the inverse map.
  FlowPass inverse(Tape& tape, Var z, std::span<const Condition> conds);
  FlowPass inverse(Tape& tape, Var z, std::span<const Condition> conds) const;

  /// Frozen single-point evaluation.
  std::pair<std::vector<double>, double> forward(std::span<const double> x, TaskId t,
                                                 Label y) const;
  std::vector<double> inverse(std::span<const double> z, TaskId t, Label y) const;

  /// Allocates missing embeddings; existing ones are left untouched.
  void add_condition(TaskId t, std::span<const Label> labels);
  bool has_condition(TaskId t, Label y) const { return embeddings_.has_label(t, y); }

  std::vector<Parameter*> parameters();
  std::vector<CouplingLayer>& layers() { return layers_; }
  const std::vector<CouplingLayer>& layers() const { return layers_; }
  EmbeddingTable& embeddings() { return embeddings_; }
  const EmbeddingTable& embeddings() const { return embeddings_; }
  std::uint64_t seed() const { return seed_; }

 private:
  template <class Self>
  static FlowPass run(Self& self, Tape& tape, Var input, std::span<const Condition> conds,
                      bool inverse);

  FlowConfig config_;
  std::vector<CouplingLayer> layers_;
  EmbeddingTable embeddings_;
  std::uint64_t seed_ = 0;
};

}  // namespace clbruno
