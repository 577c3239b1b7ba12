#include "clbruno/cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>

#include "clbruno/benchmark.hpp"
#include "clbruno/config.hpp"
#include "clbruno/continual.hpp"
#include "clbruno/errors.hpp"
#include "clbruno/inference.hpp"
#include "clbruno/persist.hpp"
#include "clbruno/random.hpp"

namespace clbruno {
namespace {

std::string fixed9(double p) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9f", p);
  return buf;
}

std::uint64_t seed_id(TaskId t) { return static_cast<std::uint64_t>(t); }

Dataset load_task_data(const std::string& path, const ClBrunoModel& model) {
  Dataset ds = load_dataset(path);
  if (!ds.empty() && ds.dim() != model.dim()) {
    throw DimensionError("'" + path + "' has " + std::to_string(ds.dim()) +
                         " features, model dimension is " + std::to_string(model.dim()));
  }
  if (model.preprocessing() && !ds.empty()) {
    ds.features = model.preprocessing()->apply(ds.features);
  }
  return ds;
}

Tensor load_inputs(const std::string& path, const ClBrunoModel& model) {
  Tensor x = load_feature_rows(path, model.dim());
  if (model.preprocessing() && x.rows() > 0) {
    x = model.preprocessing()->apply(x);
  }
  return x;
}

void write_epoch_csv(const std::string& model_path, TaskId task,
                     const std::vector<EpochMetrics>& history) {
  const std::string path = model_path + ".metrics.csv";
  std::ofstream out(path);
  if (!out) {
    throw DataError("cannot write '" + path + "'");
  }
  out << "task,epoch,total,nll,replay,functional\n";
  for (const EpochMetrics& m : history) {
    out << task << ',' << m.epoch << ',' << format_shortest(m.total) << ','
        << format_shortest(m.nll) << ',' << format_shortest(m.replay) << ','
        << format_shortest(m.functional) << '\n';
  }
}

EpochCallback progress(std::ostream& err, TaskId task, std::size_t epochs) {
  return [&err, task, epochs](const EpochMetrics& m) {
    if (m.epoch == 1 || m.epoch == epochs || m.epoch % 20 == 0) {
      err << "task " << task << " epoch " << m.epoch << "/" << epochs << " loss "
          << format_shortest(m.total) << '\n';
    }
  };
}

void report_training(std::ostream& out, const ClBrunoModel& model, TaskId t, const Dataset& data) {
  const double nll = task_nll(model, t, data.features, data.labels, LatentState(model.dim()));
  const auto post = label_posterior(model, t, data.features);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    correct += post[i].predicted() == data.labels[i] ? 1 : 0;
  }
  out << "task=" << t << '\n'
      << "examples=" << data.size() << '\n'
      << "classes=" << model.task(t).class_count() << '\n'
      << "final_nll=" << format_shortest(nll / static_cast<double>(data.size())) << '\n'
      << "train_accuracy="
      << format_shortest(static_cast<double>(correct) / static_cast<double>(data.size())) << '\n';
}

std::vector<double> parse_prior(const std::string& text) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = std::min(text.find(',', start), text.size());
    const std::string field = text.substr(start, comma - start);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
      throw ConfigError("--prior: '" + field + "' is not a number");
    }
    out.push_back(v);
    start = comma + 1;
  }
  return out;
}

int cmd_init(const std::string& config_path, const std::string& data_path,
             const std::string& out_path, TaskId task, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = load_run_config(config_path);
  Dataset ds = load_dataset(data_path);
  if (ds.empty()) {
    throw DataError("'" + data_path + "' has no examples");
  }
  ClBrunoModel model(cfg.flow(ds.dim()), cfg.seed);
  model.hyperparameters() = cfg.update();
  if (cfg.standardize) {
    model.preprocessing() = Standardizer::fit(ds.features);
    ds.features = model.preprocessing()->apply(ds.features);
  }
  ds.task = task;
  std::mt19937_64 rng(derive_seed(cfg.seed, {21, seed_id(task), 0}));
  const auto history =
      til_update(model, task, ds, model.hyperparameters(), rng, progress(err, task, cfg.epochs));
  save_model(model, out_path);
  write_epoch_csv(out_path, task, history);
  report_training(out, model, task, ds);
  return kExitOk;
}

void apply_override(ClBrunoModel& model, const std::string& config_path) {
  if (!config_path.empty()) {
    model.hyperparameters() = load_run_config(config_path).update();
  }
}

int cmd_learn_task(const std::string& model_path, const std::string& data_path,
                   const std::string& out_path, std::optional<TaskId> task_opt,
                   const std::string& config_path, std::ostream& out, std::ostream& err) {
  ClBrunoModel model = load_model(model_path);
  apply_override(model, config_path);
  const TaskId task = task_opt.value_or(model.next_task_id());
  Dataset ds = load_task_data(data_path, model);
  ds.task = task;
  std::mt19937_64 rng(derive_seed(model.seed(), {21, seed_id(task), model.tasks().size()}));
  const auto history = til_update(model, task, ds, model.hyperparameters(), rng,
                                  progress(err, task, model.hyperparameters().epochs));
  save_model(model, out_path);
  write_epoch_csv(out_path, task, history);
  report_training(out, model, task, ds);
  return kExitOk;
}

int cmd_learn_classes(const std::string& model_path, TaskId task, const std::string& data_path,
                      const std::string& out_path, const std::string& config_path,
                      std::ostream& out, std::ostream& err) {
  ClBrunoModel model = load_model(model_path);
  apply_override(model, config_path);
  model.task(task);
  Dataset ds = load_task_data(data_path, model);
  ds.task = task;
  std::mt19937_64 rng(
      derive_seed(model.seed(), {22, seed_id(task), model.task(task).class_count()}));
  const auto history = cil_update(model, task, ds, model.hyperparameters(), rng,
                                  progress(err, task, model.hyperparameters().epochs));
  save_model(model, out_path);
  write_epoch_csv(out_path, task, history);
  if (!ds.empty()) {
    report_training(out, model, task, ds);
  }
  return kExitOk;
}

void write_probability_rows(std::ostream& out, const std::vector<std::string>& header,
                            const std::string& last,
                            const std::vector<std::vector<double>>& rows,
                            const std::vector<std::string>& picks) {
  for (const std::string& h : header) {
    out << h << ',';
  }
  out << last << '\n';
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (double p : rows[i]) {
      out << fixed9(p) << ',';
    }
    out << picks[i] << '\n';
  }
}

int cmd_predict(const std::string& model_path, const std::string& task_arg,
                const std::string& input_path, std::ostream& out) {
  const ClBrunoModel model = load_model(model_path);
  const Tensor x = load_inputs(input_path, model);
  std::vector<Label> labels;
  std::vector<std::vector<double>> rows;
  std::vector<std::string> picks;
  if (task_arg == "auto") {
    if (model.tasks().empty()) {
      throw ContractError("model has no tasks");
    }
    labels = model.tasks().begin()->second.labels();
    for (const MarginalPosterior& p : marginal_label_posterior(model, x)) {
      rows.push_back(p.probabilities);
      picks.push_back(std::to_string(p.predicted()));
    }
  } else {
    TaskId t = 0;
    const auto [ptr, ec] = std::from_chars(task_arg.data(), task_arg.data() + task_arg.size(), t);
    if (ec != std::errc() || ptr != task_arg.data() + task_arg.size()) {
      throw ConfigError("--task must be a task id or 'auto', got '" + task_arg + "'");
    }
    labels = model.task(t).labels();
    for (const LabelPosterior& p : label_posterior(model, t, x)) {
      rows.push_back(p.probabilities);
      picks.push_back(std::to_string(p.predicted()));
    }
  }
  std::vector<std::string> header;
  for (Label y : labels) {
    header.push_back("p_" + std::to_string(y));
  }
  write_probability_rows(out, header, "label", rows, picks);
  return kExitOk;
}

int cmd_task_id(const std::string& model_path, const std::string& input_path,
                const std::string& prior_text, std::ostream& out) {
  const ClBrunoModel model = load_model(model_path);
  const Tensor x = load_inputs(input_path, model);
  const std::vector<double> prior = prior_text.empty() ? std::vector<double>{}
                                                       : parse_prior(prior_text);
  std::vector<std::vector<double>> rows;
  std::vector<std::string> picks;
  for (const TaskPosterior& p : task_posterior(model, x, prior)) {
    rows.push_back(p.probabilities);
    picks.push_back(std::to_string(p.predicted()));
  }
  std::vector<std::string> header;
  for (TaskId t : model.task_ids()) {
    header.push_back("p_task_" + std::to_string(t));
  }
  write_probability_rows(out, header, "task", rows, picks);
  return kExitOk;
}

int cmd_outlier(const std::string& model_path, TaskId task, double alpha,
                const std::string& input_path, std::size_t n_calib,
                std::optional<std::uint64_t> seed, std::ostream& out) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ConfigError("--alpha must lie in (0, 1)");
  }
  const ClBrunoModel model = load_model(model_path);
  model.task(task);
  const Tensor x = load_inputs(input_path, model);
  std::mt19937_64 rng(derive_seed(seed.value_or(model.seed()), {31, seed_id(task)}));
  const OutlierThreshold threshold = calibrate_outlier(model, task, alpha, n_calib, rng);
  out << "outlier,log_density,threshold\n";
  for (const OutlierVerdict& v : flag_outliers(model, threshold, x)) {
    out << (v.outlier ? 1 : 0) << ',' << format_shortest(v.log_density) << ','
        << format_shortest(threshold.log_density) << '\n';
  }
  return kExitOk;
}

void make_directory(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw DataError("cannot create directory '" + dir + "': " + ec.message());
  }
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw DataError("cannot write '" + path.string() + "'");
  }
  return out;
}

int cmd_generate(const std::string& config_path, const std::string& out_dir, std::ostream& out) {
  const RunConfig cfg = load_run_config(config_path);
  make_directory(out_dir);
  const auto tasks = generate_synthetic(cfg.synthetic_spec());
  out << "task,split,path,examples\n";
  for (const SyntheticTask& task : tasks) {
    for (const auto& [split, ds] : {std::pair<const char*, const Dataset*>{"train", &task.train},
                                    std::pair<const char*, const Dataset*>{"test", &task.test}}) {
      const auto path = std::filesystem::path(out_dir) /
                        ("task" + std::to_string(ds->task) + "_" + split + ".csv");
      std::ofstream file = open_output(path);
      write_dataset(file, *ds);
      out << ds->task << ',' << split << ',' << path.string() << ',' << ds->size() << '\n';
    }
  }
  return kExitOk;
}

int cmd_benchmark(const std::string& config_path, const std::string& out_dir, std::ostream& out,
                  std::ostream& err) {
  const RunConfig cfg = load_run_config(config_path);
  make_directory(out_dir);
  BenchmarkOptions options;
  options.on_step = [&](const BenchmarkStep& s) {
    err << "step " << s.index << ": task " << s.task << " labels";
    for (Label y : s.labels) {
      err << ' ' << y;
    }
    err << '\n';
  };
  options.on_epoch = [&](const StepMetrics& m) {
    if (m.epoch.epoch == 1 || m.epoch.epoch == cfg.epochs || m.epoch.epoch % 20 == 0) {
      err << "  epoch " << m.epoch.epoch << " loss " << format_shortest(m.epoch.total) << '\n';
    }
  };
  options.on_evaluation = [&](const TaskEvaluation& ev) {
    err << "  task " << ev.task << " accuracy " << format_shortest(ev.accuracy)
        << " task-id accuracy " << format_shortest(ev.task_id_accuracy) << '\n';
  };
  const BenchmarkResult result = run_benchmark(cfg, options);
  {
    std::ofstream file = open_output(std::filesystem::path(out_dir) / "forgetting.csv");
    write_forgetting_csv(file, result);
  }
  {
    std::ofstream file = open_output(std::filesystem::path(out_dir) / "metrics.csv");
    write_metrics_csv(file, result.metrics);
  }
  double min_acc = 1.0;
  double min_tid = 1.0;
  const std::size_t last = result.steps.back().index;
  for (const TaskEvaluation& ev : result.evaluations) {
    if (ev.step == last) {
      min_acc = std::min(min_acc, ev.accuracy);
      min_tid = std::min(min_tid, ev.task_id_accuracy);
    }
  }
  std::ostringstream summary;
  summary << "steps,min_accuracy,min_task_id_accuracy,max_forgetting\n"
          << result.steps.size() << ',' << format_shortest(min_acc) << ','
          << format_shortest(min_tid) << ',' << format_shortest(result.max_forgetting()) << '\n';
  {
    std::ofstream file = open_output(std::filesystem::path(out_dir) / "summary.csv");
    file << summary.str();
  }
  out << summary.str();
  return kExitOk;
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) {
    return kExitConfig;
  }
  if (dynamic_cast<const LoadError*>(&e) || dynamic_cast<const DataError*>(&e)) {
    return kExitData;
  }
  if (dynamic_cast<const DivergenceError*>(&e)) {
    return kExitDivergence;
  }
  if (dynamic_cast<const DimensionError*>(&e)) {
    return kExitDimension;
  }
  if (dynamic_cast<const LabelSpaceError*>(&e)) {
    return kExitLabelSpace;
  }
  if (dynamic_cast<const ContractError*>(&e) || dynamic_cast<const UnknownConditionError*>(&e) ||
      dynamic_cast<const StaleThresholdError*>(&e)) {
    return kExitContract;
  }
  return kExitFailure;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Continual learning with conditional flows over exchangeable latents", "clbruno"};
  app.require_subcommand(1);

  std::string config, data, output, model, input, task_arg, prior, out_dir;
  TaskId task = 1;
  std::optional<TaskId> task_opt;
  double alpha = 0.0;
  std::size_t n_calib = 2000;
  std::optional<std::uint64_t> seed;

  auto* init = app.add_subcommand("init", "Train a new model on its first task");
  init->add_option("--config", config, "Run configuration")->required();
  init->add_option("--data", data, "Training CSV")->required();
  init->add_option("--out", output, "Output model path")->required();
  init->add_option("--task", task, "Task id")->capture_default_str();

  auto* learn_task = app.add_subcommand("learn-task", "Add a new task");
  learn_task->add_option("--model", model, "Input model")->required();
  learn_task->add_option("--data", data, "Training CSV")->required();
  learn_task->add_option("--out", output, "Output model path")->required();
  learn_task->add_option("--task", task_opt, "Task id (default: next unused)");
  learn_task->add_option("--config", config, "Override training controls");

  auto* learn_classes = app.add_subcommand("learn-classes", "Add classes to a known task");
  learn_classes->add_option("--model", model, "Input model")->required();
  learn_classes->add_option("--task", task, "Task id")->required();
  learn_classes->add_option("--data", data, "Training CSV with new labels only")->required();
  learn_classes->add_option("--out", output, "Output model path")->required();
  learn_classes->add_option("--config", config, "Override training controls");

  auto* predict = app.add_subcommand("predict", "Label posteriors per input row");
  predict->add_option("--model", model, "Model")->required();
  predict->add_option("--task", task_arg, "Task id or 'auto'")->required();
  predict->add_option("--input", input, "Feature CSV")->required();

  auto* task_id = app.add_subcommand("task-id", "Task posteriors per input row");
  task_id->add_option("--model", model, "Model")->required();
  task_id->add_option("--input", input, "Feature CSV")->required();
  task_id->add_option("--prior", prior, "Comma-separated task prior (default uniform)");

  auto* outlier = app.add_subcommand("outlier", "Level-set outlier flags per input row");
  outlier->add_option("--model", model, "Model")->required();
  outlier->add_option("--task", task, "Task id")->required();
  outlier->add_option("--alpha", alpha, "Level in (0, 1)")->required();
  outlier->add_option("--input", input, "Feature CSV")->required();
  outlier->add_option("--n-calib", n_calib, "Calibration draws")->capture_default_str();
  outlier->add_option("--seed", seed, "Calibration seed (default: model seed)");

  auto* generate = app.add_subcommand("generate", "Write the synthetic benchmark data");
  generate->add_option("--config", config, "Run configuration")->required();
  generate->add_option("--out-dir", out_dir, "Output directory")->required();

  auto* benchmark = app.add_subcommand("benchmark", "Run the synthetic benchmark");
  benchmark->add_option("--config", config, "Run configuration")->required();
  benchmark->add_option("--out-dir", out_dir, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (init->parsed()) {
      return cmd_init(config, data, output, task, out, err);
    }
    if (learn_task->parsed()) {
      return cmd_learn_task(model, data, output, task_opt, config, out, err);
    }
    if (learn_classes->parsed()) {
      return cmd_learn_classes(model, task, data, output, config, out, err);
    }
    if (predict->parsed()) {
      return cmd_predict(model, task_arg, input, out);
    }
    if (task_id->parsed()) {
      return cmd_task_id(model, input, prior, out);
    }
    if (outlier->parsed()) {
      return cmd_outlier(model, task, alpha, input, n_calib, seed, out);
    }
    if (generate->parsed()) {
      return cmd_generate(config, out_dir, out);
    }
    if (benchmark->parsed()) {
      return cmd_benchmark(config, out_dir, out, err);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kExitFailure;
}

}  // namespace clbruno
