#include "clbruno/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "clbruno/continual.hpp"
#include "clbruno/errors.hpp"
#include "clbruno/persist.hpp"

namespace clbruno {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kPriorSumTolerance = 1e-9;

std::vector<double> log_label_prior(const TaskRecord& rec, std::span<const double> weights) {
  std::vector<double> out;
  if (weights.empty()) {
    for (double p : rec.prior()) {
      out.push_back(std::log(p));
    }
    return out;
  }
  if (weights.size() != rec.class_count()) {
    throw ContractError("label prior has " + std::to_string(weights.size()) +
                        " entries, task " + std::to_string(rec.id) + " has " +
                        std::to_string(rec.class_count()) + " classes");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ContractError("label prior weights must be finite and non-negative");
    }
    total += w;
  }
  if (!(total > 0.0)) {
    throw ContractError("label prior weights sum to zero");
  }
  for (double w : weights) {
    out.push_back(w > 0.0 ? std::log(w / total) : kNegInf);
  }
  return out;
}

std::vector<double> log_task_prior(const ClBrunoModel& model, std::span<const double> prior) {
  const std::size_t tasks = model.tasks().size();
  if (tasks == 0) {
    throw ContractError("model has no tasks");
  }
  std::vector<double> p(prior.begin(), prior.end());
  if (p.empty()) {
    p = uniform_task_prior(model);
  }
  if (p.size() != tasks) {
    throw ContractError("task prior has " + std::to_string(p.size()) + " entries, model has " +
                        std::to_string(tasks) + " tasks");
  }
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ContractError("task prior entries must be finite and non-negative");
    }
    total += v;
  }
  if (std::abs(total - 1.0) > kPriorSumTolerance) {
    throw ContractError("task prior sums to " + std::to_string(total) + ", not 1");
  }
  std::vector<double> out;
  for (double v : p) {
    out.push_back(v > 0.0 ? std::log(v) : kNegInf);
  }
  return out;
}

Tensor single_row(std::span<const double> x) { return Tensor::row_vector(x); }

}  // namespace

double log_sum_exp(std::span<const double> v) {
  double hi = kNegInf;
  for (double x : v) {
    hi = std::max(hi, x);
  }
  if (hi == kNegInf) {
    return kNegInf;
  }
  if (hi == std::numeric_limits<double>::infinity()) {
    return hi;
  }
  double acc = 0.0;
  for (double x : v) {
    acc += std::exp(x - hi);
  }
  return hi + std::log(acc);
}

std::vector<double> normalize_log(std::span<const double> v) {
  const double lse = log_sum_exp(v);
  if (!std::isfinite(lse)) {
    throw ContractError("cannot normalize scores with log-sum-exp " + std::to_string(lse));
  }
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - lse);
  }
  return out;
}

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) {
      best = i;
    }
  }
  return best;
}

Tensor label_log_likelihood(const ClBrunoModel& model, TaskId t, const Tensor& features) {
  const TaskRecord& rec = model.task(t);
  if (features.rows() > 0 && features.cols() != model.dim()) {
    throw DimensionError("features have " + std::to_string(features.cols()) +
                         " columns, model dimension is " + std::to_string(model.dim()));
  }
  const std::vector<Label> labels = rec.labels();
  const std::size_t n = features.rows();
  Tensor out(n, labels.size());
  if (n == 0) {
    return out;
  }
  const std::vector<double> nu = rec.latent.variance();
  const std::vector<double> rho = rec.latent.covariance();
  Tape tape(false);
  const Var x = tape.constant(features);
  for (std::size_t c = 0; c < labels.size(); ++c) {
    const std::vector<Condition> conds(n, Condition{t, labels[c]});
    const FlowPass pass = model.flow().forward(tape, x, conds);
    const Tensor density = latent_log_density(nu, rho, rec.state, pass.output.value(),
                                              LatentConditioning::kIndependent);
    const Tensor& log_det = pass.log_det.value();
    for (std::size_t i = 0; i < n; ++i) {
      out(i, c) = density(i, 0) + log_det(i, 0);
    }
  }
  return out;
}

std::vector<LabelPosterior> label_posterior(const ClBrunoModel& model, TaskId t,
                                            const Tensor& features,
                                            std::span<const double> prior_weights) {
  const TaskRecord& rec = model.task(t);
  const std::vector<double> log_prior = log_label_prior(rec, prior_weights);
  const Tensor ll = label_log_likelihood(model, t, features);
  const std::vector<Label> labels = rec.labels();
  std::vector<LabelPosterior> out;
  out.reserve(features.rows());
  for (std::size_t i = 0; i < features.rows(); ++i) {
    LabelPosterior post{t, labels, std::vector<double>(labels.size()), {}};
    for (std::size_t c = 0; c < labels.size(); ++c) {
      post.log_joint[c] = ll(i, c) + log_prior[c];
    }
    post.probabilities = normalize_log(post.log_joint);
    out.push_back(std::move(post));
  }
  return out;
}

LabelPosterior label_posterior(const ClBrunoModel& model, TaskId t, std::span<const double> x,
                               std::span<const double> prior_weights) {
  return label_posterior(model, t, single_row(x), prior_weights).front();
}

std::vector<double> uniform_task_prior(const ClBrunoModel& model) {
  const std::size_t tasks = model.tasks().size();
  return std::vector<double>(tasks, tasks == 0 ? 0.0 : 1.0 / static_cast<double>(tasks));
}

std::vector<double> marginal_log_density(const ClBrunoModel& model, TaskId t,
                                         const Tensor& features) {
  const TaskRecord& rec = model.task(t);
  const std::vector<double> log_prior = log_label_prior(rec, {});
  const Tensor ll = label_log_likelihood(model, t, features);
  std::vector<double> out(features.rows());
  std::vector<double> terms(log_prior.size());
  for (std::size_t i = 0; i < features.rows(); ++i) {
    for (std::size_t c = 0; c < terms.size(); ++c) {
      terms[c] = ll(i, c) + log_prior[c];
    }
    out[i] = log_sum_exp(terms);
  }
  return out;
}

std::vector<TaskPosterior> task_posterior(const ClBrunoModel& model, const Tensor& features,
                                          std::span<const double> task_prior) {
  const std::vector<double> log_prior = log_task_prior(model, task_prior);
  const std::vector<TaskId> ids = model.task_ids();
  std::vector<std::vector<double>> per_task;
  per_task.reserve(ids.size());
  for (TaskId t : ids) {
    per_task.push_back(marginal_log_density(model, t, features));
  }
  std::vector<TaskPosterior> out;
  out.reserve(features.rows());
  for (std::size_t i = 0; i < features.rows(); ++i) {
    TaskPosterior post{ids, std::vector<double>(ids.size()), {}};
    for (std::size_t k = 0; k < ids.size(); ++k) {
      post.log_scores[k] = log_prior[k] + per_task[k][i];
    }
    post.probabilities = normalize_log(post.log_scores);
    out.push_back(std::move(post));
  }
  return out;
}

TaskPosterior task_posterior(const ClBrunoModel& model, std::span<const double> x,
                             std::span<const double> task_prior) {
  return task_posterior(model, single_row(x), task_prior).front();
}

std::vector<MarginalPosterior> marginal_label_posterior(const ClBrunoModel& model,
                                                        const Tensor& features,
                                                        std::span<const double> task_prior) {
  const std::vector<double> log_prior = log_task_prior(model, task_prior);
  const std::vector<TaskId> ids = model.task_ids();
  const std::vector<Label> labels = model.task(ids.front()).labels();
  for (TaskId t : ids) {
    if (model.task(t).labels() != labels) {
      throw LabelSpaceError("task " + std::to_string(t) + " does not share the label set of task " +
                            std::to_string(ids.front()));
    }
  }
  // log p(t) + log p(y | t) + log p(x | t, y), per task.
  std::vector<Tensor> joint;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    Tensor ll = label_log_likelihood(model, ids[k], features);
    const std::vector<double> lp = log_label_prior(model.task(ids[k]), {});
    for (std::size_t i = 0; i < ll.rows(); ++i) {
      for (std::size_t c = 0; c < labels.size(); ++c) {
        ll(i, c) += lp[c] + log_prior[k];
      }
    }
    joint.push_back(std::move(ll));
  }
  std::vector<MarginalPosterior> out;
  out.reserve(features.rows());
  std::vector<double> over_tasks(ids.size());
  std::vector<double> scores(labels.size());
  for (std::size_t i = 0; i < features.rows(); ++i) {
    for (std::size_t c = 0; c < labels.size(); ++c) {
      for (std::size_t k = 0; k < ids.size(); ++k) {
        over_tasks[k] = joint[k](i, c);
      }
      scores[c] = log_sum_exp(over_tasks);
    }
    out.push_back({labels, normalize_log(scores)});
  }
  return out;
}

OutlierThreshold calibrate_outlier(const ClBrunoModel& model, TaskId t, double alpha,
                                   std::size_t n_calib, std::mt19937_64& rng) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ConfigError("outlier level alpha must lie in (0, 1)");
  }
  if (n_calib == 0) {
    throw ConfigError("outlier calibration needs at least one draw");
  }
  const PseudoDataset calib = generate_pseudo(model, t, n_calib, rng);
  std::vector<double> densities = marginal_log_density(model, t, calib.features);
  std::sort(densities.begin(), densities.end());
  const auto rank = static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(n_calib)));
  const std::size_t index = std::clamp<std::size_t>(rank, 1, n_calib) - 1;
  return {t, alpha, densities[index], n_calib, model_fingerprint(model)};
}

std::vector<OutlierVerdict> flag_outliers(const ClBrunoModel& model,
                                          const OutlierThreshold& threshold,
                                          const Tensor& features) {
  if (model_fingerprint(model) != threshold.model_version) {
    throw StaleThresholdError("outlier threshold for task " + std::to_string(threshold.task) +
                              " was calibrated on a different model version");
  }
  const std::vector<double> densities = marginal_log_density(model, threshold.task, features);
  std::vector<OutlierVerdict> out;
  out.reserve(densities.size());
  for (double d : densities) {
    out.push_back({d <= threshold.log_density, d});
  }
  return out;
}

OutlierVerdict is_outlier(const ClBrunoModel& model, const OutlierThreshold& threshold,
                          std::span<const double> x) {
  return flag_outliers(model, threshold, single_row(x)).front();
}

}  // namespace clbruno
