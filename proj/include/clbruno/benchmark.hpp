#pragma once

#include <functional>
#include <string>
#include <vector>

#include "clbruno/config.hpp"
#include "clbruno/continual.hpp"
#include "clbruno/data.hpp"
#include "clbruno/model.hpp"

namespace clbruno {

enum class StepKind { kInit, kTaskIncremental, kClassIncremental };

/// One incremental training step of the synthetic benchmark.
struct BenchmarkStep {
  std::size_t index = 0;  // 1-based
  StepKind kind = StepKind::kInit;
  TaskId task = 0;
  std::vector<Label> labels;
};

/// Task 1 from scratch, tasks 2..T-1 whole, then task T in two label groups:
/// all but its last two classes, then those two. T = 4 gives 5 steps.
std::vector<BenchmarkStep> benchmark_plan(const SyntheticSpec& spec);

/// Accuracy of one seen task after one step, on its test set restricted to
/// the labels registered so far.
struct TaskEvaluation {
  std::size_t step = 0;
  TaskId task = 0;
  double accuracy = 0.0;
  double task_id_accuracy = 0.0;
  std::size_t test_size = 0;
};

TaskEvaluation evaluate_task(const ClBrunoModel& model, const Dataset& test, std::size_t step);

struct StepMetrics {
  std::size_t step = 0;
  TaskId task = 0;
  EpochMetrics epoch;
};

struct BenchmarkOptions {
  /// Stop after this many steps; 0 runs the whole plan.
  std::size_t max_steps = 0;
  std::function<void(const BenchmarkStep&)> on_step;
  std::function<void(const StepMetrics&)> on_epoch;
  std::function<void(const TaskEvaluation&)> on_evaluation;
};

struct BenchmarkResult {
  std::vector<BenchmarkStep> steps;
  std::vector<TaskEvaluation> evaluations;
  std::vector<StepMetrics> metrics;
  std::vector<SyntheticTask> data;
  ClBrunoModel model;

  /// Evaluation of `task` after `step`; throws ContractError if absent.
  const TaskEvaluation& at(std::size_t step, TaskId task) const;
  /// Largest drop from a task's accuracy at the step that introduced it to
  /// its accuracy after the last step, over all tasks.
  double max_forgetting() const;
};

/// Runs the plan on synthetic data. Features are used as generated; the
/// standardize flag does not apply here.
BenchmarkResult run_benchmark(const RunConfig& cfg, const BenchmarkOptions& options = {});

void write_forgetting_csv(std::ostream& out, const BenchmarkResult& result);
void write_metrics_csv(std::ostream& out, const std::vector<StepMetrics>& metrics);

}  // namespace clbruno
