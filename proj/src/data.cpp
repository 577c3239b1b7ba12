#include "clbruno/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "clbruno/errors.hpp"

namespace clbruno {
namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                     : comma - start));
    if (comma == std::string_view::npos) {
      break;
    }
    start = comma + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::string row_context(const std::string& source, std::size_t row) {
  return source + ": row " + std::to_string(row);
}

double parse_real(std::string_view field, const std::string& source, std::size_t row) {
  field = trim(field);
  if (!field.empty() && field.front() == '+') {
    field.remove_prefix(1);
  }
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
    throw DataError(row_context(source, row) + ": '" + std::string(field) + "' is not a number");
  }
  if (!std::isfinite(v)) {
    throw DataError(row_context(source, row) + ": non-finite value");
  }
  return v;
}

Label parse_label(std::string_view field, const std::string& source, std::size_t row) {
  field = trim(field);
  Label y = 0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), y);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
    throw DataError(row_context(source, row) + ": label '" + std::string(field) +
                    "' is not an integer");
  }
  if (y < 1) {
    throw DataError(row_context(source, row) + ": label " + std::to_string(y) +
                    " is not 1-based");
  }
  return y;
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open '" + path + "'");
  }
  return in;
}

}  // namespace

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out{task, features.select_rows(indices), {}, provenance};
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    out.labels.push_back(labels[i]);
  }
  if (indices.empty()) {
    out.features = Tensor(0, dim());
  }
  return out;
}

Dataset Dataset::filter_labels(std::span<const Label> keep) const {
  const std::set<Label> allowed(keep.begin(), keep.end());
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (allowed.contains(labels[i])) {
      idx.push_back(i);
    }
  }
  return subset(idx);
}

std::map<Label, std::uint64_t> Dataset::label_counts() const {
  std::map<Label, std::uint64_t> counts;
  for (Label y : labels) {
    ++counts[y];
  }
  return counts;
}

void SyntheticSpec::validate() const {
  if (dim < 2) {
    throw ConfigError("synthetic dimension must be >= 2");
  }
  if (tasks < 1) {
    throw ConfigError("synthetic task count must be >= 1");
  }
  if (train_size < tasks + 1) {
    throw ConfigError("synthetic train size must be at least the largest class count");
  }
  if (!(noise_variance > 0.0)) {
    throw ConfigError("synthetic noise variance must be positive");
  }
}

std::vector<double> synthetic_class_mean(std::size_t task, Label label, std::size_t dim) {
  const double classes = static_cast<double>(task + 1);
  const double angle = 2.0 * std::numbers::pi * static_cast<double>(label) / classes;
  const double amplitude = std::sqrt(static_cast<double>(task));
  std::vector<double> mu(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    const std::size_t d = i + 1;  // 1-based parity
    mu[i] = amplitude * (d % 2 == 1 ? std::sin(angle) : std::cos(angle));
  }
  return mu;
}

std::vector<SyntheticTask> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, std::sqrt(spec.noise_variance));
  auto draw = [&](std::size_t t, std::size_t n, const char* split) {
    std::uniform_int_distribution<Label> label_dist(1, static_cast<Label>(t + 1));
    Dataset ds{static_cast<TaskId>(t), Tensor(n, spec.dim), {}, {}};
    ds.provenance = "synthetic task " + std::to_string(t) + " " + split + " seed " +
                    std::to_string(spec.seed);
    ds.labels.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const Label y = label_dist(rng);
      const auto mu = synthetic_class_mean(t, y, spec.dim);
      auto row = ds.features.row(i);
      for (std::size_t d = 0; d < spec.dim; ++d) {
        row[d] = mu[d] + noise(rng);
      }
      ds.labels.push_back(y);
    }
    return ds;
  };
  std::vector<SyntheticTask> out;
  for (std::size_t t = 1; t <= spec.tasks; ++t) {
    Dataset train = draw(t, spec.train_size, "train");
    Dataset test = draw(t, spec.test_size, "test");
    out.push_back({std::move(train), std::move(test)});
  }
  return out;
}

Standardizer Standardizer::fit(const Tensor& features) {
  if (features.rows() == 0) {
    throw DataError("standardize: empty training set");
  }
  const std::size_t dim = features.cols();
  const double n = static_cast<double>(features.rows());
  Standardizer s{std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
  for (std::size_t i = 0; i < features.rows(); ++i) {
    for (std::size_t d = 0; d < dim; ++d) {
      s.mean[d] += features(i, d);
    }
  }
  for (double& m : s.mean) {
    m /= n;
  }
  for (std::size_t i = 0; i < features.rows(); ++i) {
    for (std::size_t d = 0; d < dim; ++d) {
      const double c = features(i, d) - s.mean[d];
      s.scale[d] += c * c;
    }
  }
  for (double& v : s.scale) {
    v = std::max(std::sqrt(v / n), kScaleFloor);
  }
  return s;
}

Tensor Standardizer::apply(const Tensor& features) const {
  if (features.cols() != dim()) {
    throw DimensionError("standardizer expects " + std::to_string(dim()) + " columns");
  }
  Tensor out = features;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t d = 0; d < dim(); ++d) {
      out(i, d) = (out(i, d) - mean[d]) / scale[d];
    }
  }
  return out;
}

Tensor Standardizer::invert(const Tensor& standardized) const {
  if (standardized.cols() != dim()) {
    throw DimensionError("standardizer expects " + std::to_string(dim()) + " columns");
  }
  Tensor out = standardized;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t d = 0; d < dim(); ++d) {
      out(i, d) = out(i, d) * scale[d] + mean[d];
    }
  }
  return out;
}

StandardizedSets standardize(const Dataset& train, std::span<const Dataset> others) {
  StandardizedSets out{{}, Standardizer::fit(train.features)};
  auto transformed = [&](const Dataset& ds) {
    Dataset copy = ds;
    copy.features = out.transform.apply(ds.features);
    return copy;
  };
  out.sets.push_back(transformed(train));
  for (const Dataset& ds : others) {
    out.sets.push_back(transformed(ds));
  }
  return out;
}

Dataset parse_dataset(std::istream& in, std::size_t declared_dim, const std::string& source) {
  Dataset ds;
  ds.provenance = source;
  std::size_t dim = declared_dim;
  std::string line;
  std::size_t row = 0;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) {
      continue;
    }
    const auto fields = split_fields(line);
    if (dim == 0) {
      if (fields.size() < 2) {
        throw DataError(row_context(source, row) + ": expected a label and features");
      }
      dim = fields.size() - 1;
    }
    if (fields.size() != dim + 1) {
      throw DataError(row_context(source, row) + ": expected " + std::to_string(dim) +
                      " features, found " + std::to_string(fields.size() - 1));
    }
    const Label y = parse_label(fields[0], source, row);
    values.resize(dim);
    for (std::size_t d = 0; d < dim; ++d) {
      values[d] = parse_real(fields[d + 1], source, row);
    }
    ds.features.append_row(values);
    ds.labels.push_back(y);
  }
  if (ds.labels.empty()) {
    ds.features = Tensor(0, dim);
  }
  return ds;
}

Dataset load_dataset(const std::string& path, std::size_t declared_dim) {
  std::ifstream in = open_input(path);
  return parse_dataset(in, declared_dim, path);
}

std::string format_shortest(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

void write_dataset(std::ostream& out, const Dataset& data) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << data.labels[i];
    for (double v : data.features.row(i)) {
      out << ',' << format_shortest(v);
    }
    out << '\n';
  }
}

void save_dataset(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) {
    throw DataError("cannot write '" + path + "'");
  }
  write_dataset(out, data);
}

Tensor load_feature_rows(const std::string& path, std::size_t dim) {
  std::ifstream in = open_input(path);
  Tensor out(0, dim);
  std::string line;
  std::size_t row = 0;
  std::vector<double> values(dim);
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) {
      continue;
    }
    const auto fields = split_fields(line);
    std::size_t offset = 0;
    if (fields.size() == dim + 1) {
      offset = 1;
    } else if (fields.size() != dim) {
      throw DimensionError(row_context(path, row) + ": expected " + std::to_string(dim) +
                           " features, found " + std::to_string(fields.size()));
    }
    for (std::size_t d = 0; d < dim; ++d) {
      values[d] = parse_real(fields[d + offset], path, row);
    }
    out.append_row(values);
  }
  return out;
}

}  // namespace clbruno
