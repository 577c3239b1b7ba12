#include "clbruno/flow.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "clbruno/errors.hpp"
#include "clbruno/random.hpp"

namespace clbruno {
namespace {

Tensor uniform_tensor(std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor t(rows, cols);
  for (double& v : t.data()) {
    v = u(rng);
  }
  return t;
}

std::vector<double> normal_row(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, EmbeddingTable::kInitStddev);
  std::vector<double> v(n);
  for (double& x : v) {
    x = normal(rng);
  }
  return v;
}

template <class Net>
Var apply_net(Tape& tape, Net& net, Var x) {
  Var h = ops::tanh(ops::add_row(ops::matmul(x, bind(tape, net.w1)), bind(tape, net.b1)));
  h = ops::tanh(ops::add_row(ops::matmul(h, bind(tape, net.w2)), bind(tape, net.b2)));
  return ops::add_row(ops::matmul(h, bind(tape, net.w3)), bind(tape, net.b3));
}

}  // namespace

std::size_t FlowConfig::resolved_hidden_width() const {
  return hidden_width != 0 ? hidden_width : std::max<std::size_t>(64, dim);
}

DenseNet::DenseNet(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng,
                   const std::string& name)
    : w1(name + ".w1", uniform_tensor(in, hidden, 1.0 / std::sqrt(double(in)), rng)),
      b1(name + ".b1", Tensor(1, hidden)),
      w2(name + ".w2", uniform_tensor(hidden, hidden, 1.0 / std::sqrt(double(hidden)), rng)),
      b2(name + ".b2", Tensor(1, hidden)),
      // Zero output layer: the network starts at the identity point of the coupling.
      w3(name + ".w3", Tensor(hidden, out)),
      b3(name + ".b3", Tensor(1, out)) {}

std::vector<Parameter*> DenseNet::parameters() { return {&w1, &b1, &w2, &b2, &w3, &b3}; }

std::vector<const Parameter*> DenseNet::parameters() const {
  return {&w1, &b1, &w2, &b2, &w3, &b3};
}

CouplingLayer::CouplingLayer(std::size_t dim_, std::size_t split_, bool transform_upper_,
                             std::size_t embedding_dim, std::size_t hidden, std::mt19937_64& rng,
                             const std::string& name)
    : dim(dim_), split(split_), transform_upper(transform_upper_) {
  const std::size_t in = conditioner_width() + 2 * embedding_dim;
  shift = DenseNet(in, hidden, transformed_width(), rng, name + ".shift");
  log_scale = DenseNet(in, hidden, transformed_width(), rng, name + ".log_scale");
}

EmbeddingTable::EmbeddingTable(std::size_t embedding_dim, std::uint64_t seed)
    : embedding_dim_(embedding_dim),
      seed_(seed),
      task_table_("embedding.task", Tensor(0, embedding_dim)),
      label_table_("embedding.label", Tensor(0, embedding_dim)) {}

bool EmbeddingTable::add_task(TaskId t) {
  if (has_task(t)) {
    return false;
  }
  const auto row = normal_row(embedding_dim_, derive_seed(seed_, {0, std::uint64_t(t)}));
  task_rows_.emplace(t, task_table_.value.rows());
  task_table_.value.append_row(row);
  task_table_.sync_grad_shape();
  return true;
}

bool EmbeddingTable::add_label(TaskId t, Label y) {
  if (has_label(t, y)) {
    return false;
  }
  const auto row =
      normal_row(embedding_dim_, derive_seed(seed_, {1, std::uint64_t(t), std::uint64_t(y)}));
  label_rows_.emplace(std::pair{t, y}, label_table_.value.rows());
  label_table_.value.append_row(row);
  label_table_.sync_grad_shape();
  return true;
}

std::size_t EmbeddingTable::task_row(TaskId t) const {
  auto it = task_rows_.find(t);
  if (it == task_rows_.end()) {
    throw UnknownConditionError("unknown task " + std::to_string(t));
  }
  return it->second;
}

std::size_t EmbeddingTable::label_row(TaskId t, Label y) const {
  auto it = label_rows_.find({t, y});
  if (it == label_rows_.end()) {
    throw UnknownConditionError("unknown condition (task " + std::to_string(t) + ", label " +
                                std::to_string(y) + ")");
  }
  return it->second;
}

void EmbeddingTable::restore(std::map<TaskId, std::size_t> task_rows,
                             std::map<std::pair<TaskId, Label>, std::size_t> label_rows,
                             Tensor task_values, Tensor label_values) {
  if (task_values.rows() != task_rows.size() || label_values.rows() != label_rows.size() ||
      (task_values.rows() > 0 && task_values.cols() != embedding_dim_) ||
      (label_values.rows() > 0 && label_values.cols() != embedding_dim_)) {
    throw DimensionError("embedding restore: table shapes do not match row maps");
  }
  if (task_values.rows() == 0) {
    task_values = Tensor(0, embedding_dim_);
  }
  if (label_values.rows() == 0) {
    label_values = Tensor(0, embedding_dim_);
  }
  task_rows_ = std::move(task_rows);
  label_rows_ = std::move(label_rows);
  task_table_.value = std::move(task_values);
  label_table_.value = std::move(label_values);
  task_table_.sync_grad_shape();
  label_table_.sync_grad_shape();
}

ConditionalFlow::ConditionalFlow(const FlowConfig& config, std::uint64_t seed)
    : config_(config), embeddings_(config.embedding_dim, derive_seed(seed, {7})), seed_(seed) {
  if (config.dim < 2) {
    throw ContractError("flow dimension must be at least 2");
  }
  std::mt19937_64 rng(derive_seed(seed, {3}));
  const std::size_t split = config.dim / 2;
  const std::size_t hidden = config.resolved_hidden_width();
  layers_.reserve(config.coupling_layers);
  for (std::size_t k = 0; k < config.coupling_layers; ++k) {
    layers_.emplace_back(config.dim, split, k % 2 == 0, config.embedding_dim, hidden, rng,
                         "layer" + std::to_string(k));
  }
}

template <class Self>
FlowPass ConditionalFlow::run(Self& self, Tape& tape, Var input, std::span<const Condition> conds,
                              bool inverse) {
  const std::size_t n = input.rows();
  if (input.cols() != self.config_.dim) {
    throw DimensionError("flow: input width " + std::to_string(input.cols()) + " != dimension " +
                         std::to_string(self.config_.dim));
  }
  if (conds.size() != n) {
    throw DimensionError("flow: " + std::to_string(conds.size()) + " conditions for " +
                         std::to_string(n) + " rows");
  }
  std::vector<std::size_t> task_rows(n);
  std::vector<std::size_t> label_rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    task_rows[i] = self.embeddings_.task_row(conds[i].task);
    label_rows[i] = self.embeddings_.label_row(conds[i].task, conds[i].label);
  }
  const Var cond_parts[] = {
      ops::gather_rows(bind(tape, self.embeddings_.task_table()), std::move(task_rows)),
      ops::gather_rows(bind(tape, self.embeddings_.label_table()), std::move(label_rows))};
  const Var cond = ops::concat_cols(cond_parts);

  Var h = input;
  Var log_det = tape.constant(Tensor(n, 1));
  const std::size_t k_layers = self.layers_.size();
  for (std::size_t step = 0; step < k_layers; ++step) {
    auto& layer = self.layers_[inverse ? k_layers - 1 - step : step];
    const Var kept = ops::slice_cols(h, layer.conditioner_begin(), layer.conditioner_width());
    const Var moved = ops::slice_cols(h, layer.transformed_begin(), layer.transformed_width());
    const Var net_in_parts[] = {kept, cond};
    const Var net_in = ops::concat_cols(net_in_parts);
    const Var shift = apply_net(tape, layer.shift, net_in);
    const Var log_scale =
        ops::scale(ops::tanh(apply_net(tape, layer.log_scale, net_in)), CouplingLayer::kScaleBound);
    Var out;
    if (!inverse) {
      out = ops::add(shift, ops::mul(ops::exp(log_scale), moved));
      log_det = ops::add(log_det, ops::row_sum(log_scale));
    } else {
      out = ops::mul(ops::sub(moved, shift), ops::exp(ops::scale(log_scale, -1.0)));
      log_det = ops::sub(log_det, ops::row_sum(log_scale));
    }
    const Var upper_parts[] = {kept, out};
    const Var lower_parts[] = {out, kept};
    h = ops::concat_cols(layer.transform_upper ? std::span<const Var>(upper_parts)
                                               : std::span<const Var>(lower_parts));
  }
  return {h, log_det};
}

FlowPass ConditionalFlow::forward(Tape& tape, Var x, std::span<const Condition> conds) {
  return run(*this, tape, x, conds, false);
}
FlowPass ConditionalFlow::forward(Tape& tape, Var x, std::span<const Condition> conds) const {
  return run(*this, tape, x, conds, false);
}
FlowPass ConditionalFlow::inverse(Tape& tape, Var z, std::span<const Condition> conds) {
  return run(*this, tape, z, conds, true);
}
FlowPass ConditionalFlow::inverse(Tape& tape, Var z, std::span<const Condition> conds) const {
  return run(*this, tape, z, conds, true);
}

std::pair<std::vector<double>, double> ConditionalFlow::forward(std::span<const double> x,
                                                                TaskId t, Label y) const {
  Tape tape(false);
  const Condition c{t, y};
  const FlowPass p = forward(tape, tape.constant(Tensor::row_vector(x)), {&c, 1});
  const auto z = p.output.value().data();
  return {{z.begin(), z.end()}, p.log_det.value()[0]};
}

std::vector<double> ConditionalFlow::inverse(std::span<const double> z, TaskId t, Label y) const {
  Tape tape(false);
  const Condition c{t, y};
  const FlowPass p = inverse(tape, tape.constant(Tensor::row_vector(z)), {&c, 1});
  const auto x = p.output.value().data();
  return {x.begin(), x.end()};
}

void ConditionalFlow::add_condition(TaskId t, std::span<const Label> labels) {
  embeddings_.add_task(t);
  for (Label y : labels) {
    embeddings_.add_label(t, y);
  }
}

std::vector<Parameter*> ConditionalFlow::parameters() {
  std::vector<Parameter*> out{&embeddings_.task_table(), &embeddings_.label_table()};
  for (CouplingLayer& layer : layers_) {
    for (Parameter* p : layer.shift.parameters()) {
      out.push_back(p);
    }
    for (Parameter* p : layer.log_scale.parameters()) {
      out.push_back(p);
    }
  }
  return out;
}

}  // namespace clbruno
