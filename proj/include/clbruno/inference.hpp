#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "clbruno/model.hpp"
#include "clbruno/tensor.hpp"

namespace clbruno {

/// log(sum(exp(v))); -inf for an empty or all -inf input.
double log_sum_exp(std::span<const double> v);
/// exp(v - log_sum_exp(v)).
std::vector<double> normalize_log(std::span<const double> v);
/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> v);

struct LabelPosterior {
  TaskId task = 0;
  std::vector<Label> labels;
  /// log p(x | t, y) + log p(y | t), up to the shared prior normalizer.
  std::vector<double> log_joint;
  std::vector<double> probabilities;

  Label predicted() const { return labels[argmax(probabilities)]; }
};

struct TaskPosterior {
  std::vector<TaskId> tasks;
  /// log p(t) + log p(x | t).
  std::vector<double> log_scores;
  std::vector<double> probabilities;

  TaskId predicted() const { return tasks[argmax(probabilities)]; }
};

struct MarginalPosterior {
  std::vector<Label> labels;
  std::vector<double> probabilities;

  Label predicted() const { return labels[argmax(probabilities)]; }
};

/// n x C matrix of log p(x_i | t, y_c): latent predictive log density given
/// the stored state plus log |det J|, labels in ascending order.
Tensor label_log_likelihood(const ClBrunoModel& model, TaskId t, const Tensor& features);

/// Label posteriors under the task's stored prior, or under `prior_weights`
/// (non-negative, any positive scale) when given.
std::vector<LabelPosterior> label_posterior(const ClBrunoModel& model, TaskId t,
                                            const Tensor& features,
                                            std::span<const double> prior_weights = {});
LabelPosterior label_posterior(const ClBrunoModel& model, TaskId t, std::span<const double> x,
                               std::span<const double> prior_weights = {});

/// Uniform over registered tasks.
std::vector<double> uniform_task_prior(const ClBrunoModel& model);

/// Posterior over task identity. An empty prior selects the uniform one; a
/// prior of the wrong length, with negative entries or not summing to one is
/// a ContractError.
std::vector<TaskPosterior> task_posterior(const ClBrunoModel& model, const Tensor& features,
                                          std::span<const double> task_prior = {});
TaskPosterior task_posterior(const ClBrunoModel& model, std::span<const double> x,
                             std::span<const double> task_prior = {});

/// Label posterior with task identity integrated out. Every task must carry
/// the same label set (LabelSpaceError otherwise).
std::vector<MarginalPosterior> marginal_label_posterior(const ClBrunoModel& model,
                                                        const Tensor& features,
                                                        std::span<const double> task_prior = {});

/// log sum_y p(y | t) p(x | t, y) per row.
std::vector<double> marginal_log_density(const ClBrunoModel& model, TaskId t,
                                         const Tensor& features);

struct OutlierThreshold {
  TaskId task = 0;
  double alpha = 0.0;
  double log_density = 0.0;
  std::size_t calibration_size = 0;
  std::uint64_t model_version = 0;
};

/// Draws n_calib generated points of task t and stores the empirical
/// alpha-quantile of their label-marginal log densities (order statistic
/// ceil(alpha * n) clamped to [1, n]). alpha must lie in (0, 1).
OutlierThreshold calibrate_outlier(const ClBrunoModel& model, TaskId t, double alpha,
                                   std::size_t n_calib, std::mt19937_64& rng);

struct OutlierVerdict {
  bool outlier = false;
  double log_density = 0.0;
};

/// Flags rows whose log density is at or below the threshold. Throws
/// StaleThresholdError when the threshold was calibrated on another model.
std::vector<OutlierVerdict> flag_outliers(const ClBrunoModel& model,
                                          const OutlierThreshold& threshold,
                                          const Tensor& features);
OutlierVerdict is_outlier(const ClBrunoModel& model, const OutlierThreshold& threshold,
                          std::span<const double> x);

}  // namespace clbruno
