#include "clbruno/benchmark.hpp"

#include <algorithm>
#include <ostream>
#include <random>

#include "clbruno/errors.hpp"
#include "clbruno/inference.hpp"
#include "clbruno/random.hpp"

namespace clbruno {

std::vector<BenchmarkStep> benchmark_plan(const SyntheticSpec& spec) {
  auto all_labels = [](std::size_t t) {
    std::vector<Label> out;
    for (Label y = 1; y <= static_cast<Label>(t + 1); ++y) {
      out.push_back(y);
    }
    return out;
  };
  std::vector<BenchmarkStep> plan;
  plan.push_back({1, StepKind::kInit, 1, all_labels(1)});
  for (std::size_t t = 2; t < spec.tasks; ++t) {
    plan.push_back({plan.size() + 1, StepKind::kTaskIncremental, static_cast<TaskId>(t),
                    all_labels(t)});
  }
  if (spec.tasks >= 2) {
    const auto last = static_cast<TaskId>(spec.tasks);
    std::vector<Label> labels = all_labels(spec.tasks);
    const std::vector<Label> late(labels.end() - 2, labels.end());
    labels.resize(labels.size() - 2);
    plan.push_back({plan.size() + 1, StepKind::kTaskIncremental, last, labels});
    plan.push_back({plan.size() + 1, StepKind::kClassIncremental, last, late});
  }
  return plan;
}

TaskEvaluation evaluate_task(const ClBrunoModel& model, const Dataset& test, std::size_t step) {
  const std::vector<Label> labels = model.task(test.task).labels();
  const Dataset seen = test.filter_labels(labels);
  TaskEvaluation ev{step, test.task, 0.0, 0.0, seen.size()};
  if (seen.empty()) {
    return ev;
  }
  const auto label_post = label_posterior(model, test.task, seen.features);
  const auto task_post = task_posterior(model, seen.features);
  std::size_t correct = 0;
  std::size_t task_correct = 0;
  for (std::size_t i = 0; i < seen.size(); ++i) {
    correct += label_post[i].predicted() == seen.labels[i] ? 1 : 0;
    task_correct += task_post[i].predicted() == test.task ? 1 : 0;
  }
  const double n = static_cast<double>(seen.size());
  ev.accuracy = static_cast<double>(correct) / n;
  ev.task_id_accuracy = static_cast<double>(task_correct) / n;
  return ev;
}

const TaskEvaluation& BenchmarkResult::at(std::size_t step, TaskId task) const {
  for (const TaskEvaluation& ev : evaluations) {
    if (ev.step == step && ev.task == task) {
      return ev;
    }
  }
  throw ContractError("no evaluation of task " + std::to_string(task) + " after step " +
                      std::to_string(step));
}

double BenchmarkResult::max_forgetting() const {
  if (evaluations.empty()) {
    return 0.0;
  }
  const std::size_t last = evaluations.back().step;
  double worst = 0.0;
  for (const TaskEvaluation& final_ev : evaluations) {
    if (final_ev.step != last) {
      continue;
    }
    const auto first = std::find_if(evaluations.begin(), evaluations.end(),
                                    [&](const TaskEvaluation& e) { return e.task == final_ev.task; });
    worst = std::max(worst, first->accuracy - final_ev.accuracy);
  }
  return worst;
}

BenchmarkResult run_benchmark(const RunConfig& cfg, const BenchmarkOptions& options) {
  cfg.validate();
  const SyntheticSpec spec = cfg.synthetic_spec();
  BenchmarkResult result;
  result.data = generate_synthetic(spec);
  result.steps = benchmark_plan(spec);
  if (options.max_steps > 0 && options.max_steps < result.steps.size()) {
    result.steps.resize(options.max_steps);
  }
  result.model = ClBrunoModel(cfg.flow(spec.dim), cfg.seed);
  result.model.hyperparameters() = cfg.update();
  const UpdateConfig update = cfg.update();

  for (const BenchmarkStep& step : result.steps) {
    if (options.on_step) {
      options.on_step(step);
    }
    const Dataset& train = result.data[static_cast<std::size_t>(step.task) - 1].train;
    const Dataset batch = train.filter_labels(step.labels);
    std::mt19937_64 rng(derive_seed(cfg.seed, {11, step.index}));
    const EpochCallback record = [&](const EpochMetrics& m) {
      const StepMetrics sm{step.index, step.task, m};
      result.metrics.push_back(sm);
      if (options.on_epoch) {
        options.on_epoch(sm);
      }
    };
    if (step.kind == StepKind::kClassIncremental) {
      cil_update(result.model, step.task, batch, update, rng, record);
    } else {
      til_update(result.model, step.task, batch, update, rng, record);
    }
    for (TaskId t : result.model.task_ids()) {
      const TaskEvaluation ev =
          evaluate_task(result.model, result.data[static_cast<std::size_t>(t) - 1].test, step.index);
      result.evaluations.push_back(ev);
      if (options.on_evaluation) {
        options.on_evaluation(ev);
      }
    }
  }
  return result;
}

void write_forgetting_csv(std::ostream& out, const BenchmarkResult& result) {
  out << "step,task,accuracy,task_id_accuracy\n";
  for (const TaskEvaluation& ev : result.evaluations) {
    out << ev.step << ',' << ev.task << ',' << format_shortest(ev.accuracy) << ','
        << format_shortest(ev.task_id_accuracy) << '\n';
  }
}

void write_metrics_csv(std::ostream& out, const std::vector<StepMetrics>& metrics) {
  out << "step,task,epoch,total,nll,replay,functional\n";
  for (const StepMetrics& m : metrics) {
    out << m.step << ',' << m.task << ',' << m.epoch.epoch << ','
        << format_shortest(m.epoch.total) << ',' << format_shortest(m.epoch.nll) << ','
        << format_shortest(m.epoch.replay) << ',' << format_shortest(m.epoch.functional) << '\n';
  }
}

}  // namespace clbruno
