#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "clbruno/tensor.hpp"

namespace clbruno {

/// A trainable tensor with its accumulated gradient.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value)
      : name(std::move(name)), value(std::move(value)), grad(this->value.rows(), this->value.cols()) {}

  void zero_grad();
  /// Resizes the gradient to the current value shape (after tables grow).
  void sync_grad_shape();

  std::string name;
  Tensor value;
  Tensor grad;
};

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double scalar() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode record of primitive operations.
///
/// Every op evaluates eagerly. When recording is off the tape only keeps
/// values, which is how frozen models are evaluated. Nodes are appended in
/// creation order, so a reverse sweep visits them in reverse topological
/// order.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor value);
  /// Leaf whose gradient is added into `p.grad` by backward().
  Var param(Parameter& p);
  /// Leaf holding a parameter's value that receives no gradient.
  Var frozen(const Parameter& p);

  /// Populates gradients of every participating Parameter with
  /// d(output)/d(parameter). `output` must be 1 x 1.
  void backward(Var output);
  void reset();

  // Used by op implementations.
  /// Called with the tape and the id of the node being differentiated.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(fn));
  }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  Tensor& grad_accumulator(std::size_t id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  bool recording_;
  std::vector<Node> nodes_;
  std::unordered_map<const void*, std::size_t> bound_;
};

/// Binds trainable or frozen depending on the constness of the parameter.
inline Var bind(Tape& tape, Parameter& p) { return tape.param(p); }
inline Var bind(Tape& tape, const Parameter& p) { return tape.frozen(p); }

namespace ops {

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// a (n x m) plus the 1 x m row `r` added to every row.
Var add_row(Var a, Var r);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var softplus(Var a);
Var sigmoid(Var a);
/// Sum of all entries, 1 x 1.
Var sum(Var a);
/// Per-row sums, n x 1.
Var row_sum(Var a);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
/// out[i] = table[rows[i]]; gradients scatter-add back into the table.
Var gather_rows(Var table, std::vector<std::size_t> rows);

}  // namespace ops

}  // namespace clbruno
