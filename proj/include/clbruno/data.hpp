#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "clbruno/flow.hpp"
#include "clbruno/tensor.hpp"

namespace clbruno {

/// Labeled feature vectors of one task.
struct Dataset {
  TaskId task = 0;
  Tensor features;  // n x D
  std::vector<Label> labels;
  std::string provenance;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  bool empty() const { return labels.empty(); }

  Dataset subset(std::span<const std::size_t> indices) const;
  /// Examples whose label is in `keep`, in original order.
  Dataset filter_labels(std::span<const Label> keep) const;
  std::map<Label, std::uint64_t> label_counts() const;
};

/// Synthetic benchmark: task t has C_t = t + 1 classes; features are
/// N(mu, noise_variance * I) with mu_d = sqrt(t) sin(2 pi y / C_t) for odd d
/// and sqrt(t) cos(2 pi y / C_t) for even d, d counted from 1.
struct SyntheticSpec {
  std::size_t dim = 1000;
  std::size_t tasks = 4;
  std::size_t train_size = 500;
  std::size_t test_size = 1000;
  double noise_variance = 0.5;
  std::uint64_t seed = 0;

  /// Throws ConfigError when D < 2, T < 1 or N_t < C_t.
  void validate() const;
};

struct SyntheticTask {
  Dataset train;
  Dataset test;
};

std::vector<double> synthetic_class_mean(std::size_t task, Label label, std::size_t dim);
std::vector<SyntheticTask> generate_synthetic(const SyntheticSpec& spec);

/// Per-dimension affine standardization fitted on training data.
struct Standardizer {
  static constexpr double kScaleFloor = 1e-8;

  static Standardizer fit(const Tensor& features);
  Tensor apply(const Tensor& features) const;
  Tensor invert(const Tensor& standardized) const;
  std::size_t dim() const { return mean.size(); }

  std::vector<double> mean;
  std::vector<double> scale;
};

struct StandardizedSets {
  /// The transformed training set followed by the transformed `others`.
  std::vector<Dataset> sets;
  Standardizer transform;
};

/// Standardizes with statistics of `train` only.
StandardizedSets standardize(const Dataset& train, std::span<const Dataset> others);

/// Parses the label-first CSV format. `declared_dim` of 0 infers D from the
/// first row. Errors are DataError with the 1-based row number.
Dataset parse_dataset(std::istream& in, std::size_t declared_dim, const std::string& source);
Dataset load_dataset(const std::string& path, std::size_t declared_dim = 0);
/// Canonical form: shortest round-trip decimal for every value.
void write_dataset(std::ostream& out, const Dataset& data);
void save_dataset(const std::string& path, const Dataset& data);

/// Feature rows for prediction: rows of D values, or D + 1 values whose
/// leading label column is ignored. Any other width is a DimensionError.
Tensor load_feature_rows(const std::string& path, std::size_t dim);

std::string format_shortest(double value);

}  // namespace clbruno
