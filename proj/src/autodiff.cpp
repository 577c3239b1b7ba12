#include "clbruno/autodiff.hpp"

#include <cmath>
#include <string>

#include "clbruno/errors.hpp"
#include "eigen_map.hpp"

namespace clbruno {

void Parameter::zero_grad() {
  sync_grad_shape();
  grad.fill(0.0);
}

void Parameter::sync_grad_shape() {
  if (!grad.same_shape(value)) {
    grad = Tensor(value.rows(), value.cols());
  }
}

const Tensor& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const Tensor& v = value();
  if (v.size() != 1) {
    throw ContractError("scalar() on a " + std::to_string(v.rows()) + "x" +
                        std::to_string(v.cols()) + " value");
  }
  return v[0];
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}, nullptr});
  return {this, nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
  if (!recording_) {
    return frozen(p);
  }
  if (auto it = bound_.find(&p); it != bound_.end()) {
    return {this, it->second};
  }
  nodes_.push_back(Node{p.value, {}, true, {}, &p});
  bound_.emplace(&p, nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

Var Tape::frozen(const Parameter& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) {
    return {this, it->second};
  }
  nodes_.push_back(Node{p.value, {}, false, {}, nullptr});
  bound_.emplace(&p, nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  bool needs = false;
  if (recording_) {
    for (const Var& in : inputs) {
      if (in.tape() != this) {
        throw ContractError("operation mixes values from different tapes");
      }
      needs = needs || nodes_[in.id()].needs_grad;
    }
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : BackwardFn{}, nullptr});
  return {this, nodes_.size() - 1};
}

Tensor& Tape::grad_accumulator(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.grad.same_shape(n.value)) {
    n.grad = Tensor(n.value.rows(), n.value.cols());
  }
  return n.grad;
}

void Tape::backward(Var output) {
  if (output.tape() != this) {
    throw ContractError("backward: output was not produced on this tape");
  }
  const Tensor& out = nodes_[output.id()].value;
  if (out.size() != 1) {
    throw ContractError("backward: output must be a scalar, got " + std::to_string(out.rows()) +
                        "x" + std::to_string(out.cols()));
  }
  if (!nodes_[output.id()].needs_grad) {
    return;
  }
  for (Node& n : nodes_) {
    n.grad = Tensor();
  }
  grad_accumulator(output.id())[0] = 1.0;
  for (std::size_t i = output.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty()) {
      continue;
    }
    if (n.backward) {
      n.backward(*this, i);
    }
    if (n.param != nullptr) {
      n.param->sync_grad_shape();
      n.param->grad += nodes_[i].grad;
    }
  }
}

void Tape::reset() {
  nodes_.clear();
  bound_.clear();
}

namespace ops {
namespace {

std::string shape_str(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value())) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.value()) + " and " +
                         shape_str(b.value()) + " differ");
  }
}

// Elementwise op; `df(x, y)` is dy/dx given input x and output y.
template <class F, class DF>
Var unary(Var a, F f, DF df) {
  Tape& t = *a.tape();
  const Tensor& x = a.value();
  Tensor y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = f(x[i]);
  }
  const std::size_t ia = a.id();
  return t.record(std::move(y), {a}, [ia, df](Tape& tp, std::size_t self) {
    if (!tp.needs_grad(ia)) {
      return;
    }
    const Tensor& g = tp.grad(self);
    const Tensor& xv = tp.value(ia);
    const Tensor& yv = tp.value(self);
    Tensor& ga = tp.grad_accumulator(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * df(xv[i], yv[i]);
    }
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = *a.tape();
  Tensor out = clbruno::matmul(a.value(), b.value());
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const auto g = detail::map(tp.grad(self));
    if (tp.needs_grad(ia)) {
      detail::map(tp.grad_accumulator(ia)).noalias() += g * detail::map(tp.value(ib)).transpose();
    }
    if (tp.needs_grad(ib)) {
      detail::map(tp.grad_accumulator(ib)).noalias() += detail::map(tp.value(ia)).transpose() * g;
    }
  });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  out += b.value();
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    for (std::size_t in : {ia, ib}) {
      if (tp.needs_grad(in)) {
        tp.grad_accumulator(in) += tp.grad(self);
      }
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] -= bv[i];
  }
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    if (tp.needs_grad(ia)) {
      tp.grad_accumulator(ia) += g;
    }
    if (tp.needs_grad(ib)) {
      Tensor& gb = tp.grad_accumulator(ib);
      for (std::size_t i = 0; i < g.size(); ++i) {
        gb[i] -= g[i];
      }
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] *= bv[i];
  }
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    if (tp.needs_grad(ia)) {
      Tensor& ga = tp.grad_accumulator(ia);
      const Tensor& other = tp.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * other[i];
      }
    }
    if (tp.needs_grad(ib)) {
      Tensor& gb = tp.grad_accumulator(ib);
      const Tensor& other = tp.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) {
        gb[i] += g[i] * other[i];
      }
    }
  });
}

Var add_row(Var a, Var r) {
  const Tensor& av = a.value();
  const Tensor& rv = r.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw DimensionError("add_row: row " + shape_str(rv) + " does not fit " + shape_str(av));
  }
  Tensor out = av;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) {
      row[j] += rv[j];
    }
  }
  const std::size_t ia = a.id();
  const std::size_t ir = r.id();
  return a.tape()->record(std::move(out), {a, r}, [ia, ir](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    if (tp.needs_grad(ia)) {
      tp.grad_accumulator(ia) += g;
    }
    if (tp.needs_grad(ir)) {
      Tensor& gr = tp.grad_accumulator(ir);
      for (std::size_t i = 0; i < g.rows(); ++i) {
        const auto row = g.row(i);
        for (std::size_t j = 0; j < row.size(); ++j) {
          gr[j] += row[j];
        }
      }
    }
  });
}

Var scale(Var a, double factor) {
  return unary(a, [factor](double x) { return factor * x; },
               [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double offset) {
  return unary(a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var softplus(Var a) {
  return unary(a, stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

Var sigmoid(Var a) {
  return unary(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var sum(Var a) {
  Tensor out(1, 1, a.value().sum());
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0];
    Tensor& ga = tp.grad_accumulator(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      ga[i] += g;
    }
  });
}

Var row_sum(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double s = 0.0;
    for (double v : av.row(i)) {
      s += v;
    }
    out[i] = s;
  }
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor& ga = tp.grad_accumulator(ia);
    for (std::size_t i = 0; i < ga.rows(); ++i) {
      for (double& v : ga.row(i)) {
        v += g[i];
      }
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) {
    throw ContractError("concat_cols: no inputs");
  }
  Tape& t = *parts.front().tape();
  const std::size_t rows = parts.front().rows();
  std::size_t width = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: row counts differ");
    }
    width += p.cols();
  }
  Tensor out(rows, width);
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t i = 0; i < rows; ++i) {
      std::copy(v.row(i).begin(), v.row(i).end(), out.row(i).begin() + offset);
    }
    ids.push_back(p.id());
    offsets.push_back(offset);
    offset += v.cols();
  }
  return t.record(std::move(out), parts,
                  [ids, offsets](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      if (!tp.needs_grad(ids[k])) {
                        continue;
                      }
                      Tensor& gp = tp.grad_accumulator(ids[k]);
                      const std::size_t w = gp.cols();
                      for (std::size_t i = 0; i < g.rows(); ++i) {
                        const auto src = g.row(i).subspan(offsets[k], w);
                        auto dst = gp.row(i);
                        for (std::size_t j = 0; j < w; ++j) {
                          dst[j] += src[j];
                        }
                      }
                    }
                  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  if (begin + count > av.cols()) {
    throw DimensionError("slice_cols: range exceeds " + std::to_string(av.cols()) + " columns");
  }
  Tensor out(av.rows(), count);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    const auto src = av.row(i).subspan(begin, count);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, begin, count](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor& ga = tp.grad_accumulator(ia);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      auto dst = ga.row(i).subspan(begin, count);
      const auto src = g.row(i);
      for (std::size_t j = 0; j < count; ++j) {
        dst[j] += src[j];
      }
    }
  });
}

Var gather_rows(Var table, std::vector<std::size_t> rows) {
  const Tensor& tv = table.value();
  for (std::size_t r : rows) {
    if (r >= tv.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(r) + " out of range");
    }
  }
  Tensor out = tv.select_rows(rows);
  const std::size_t it = table.id();
  return table.tape()->record(std::move(out), {table},
                              [it, rows = std::move(rows)](Tape& tp, std::size_t self) {
                                const Tensor& g = tp.grad(self);
                                Tensor& gt = tp.grad_accumulator(it);
                                for (std::size_t i = 0; i < rows.size(); ++i) {
                                  auto dst = gt.row(rows[i]);
                                  const auto src = g.row(i);
                                  for (std::size_t j = 0; j < dst.size(); ++j) {
                                    dst[j] += src[j];
                                  }
                                }
                              });
}

}  // namespace ops
}  // namespace clbruno
