#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "clbruno/data.hpp"
#include "clbruno/flow.hpp"
#include "clbruno/model.hpp"

namespace clbruno {

/// Flat key=value run configuration. Keys match the field names.
struct RunConfig {
  std::size_t coupling_layers = 6;
  std::size_t embedding_dim = 16;
  std::size_t hidden_width = 0;
  std::size_t pseudo_size = 128;
  double alpha1 = 1.0;
  double alpha2 = 1.0;
  double learning_rate = 1e-3;
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  bool resample_pseudo = true;
  bool standardize = true;

  // synthetic_* keys, used by generate and benchmark; the seed comes from `seed`
  SyntheticSpec synthetic{100, 4, 500, 1000, 0.5, 0};

  SyntheticSpec synthetic_spec() const;
  UpdateConfig update() const;
  FlowConfig flow(std::size_t dim) const;
  /// Throws ConfigError naming the offending key.
  void validate() const;
};

/// Parses one key=value per line; blank lines and '#' comments are skipped.
/// Unknown keys and unparsable values are ConfigError naming the key.
RunConfig parse_run_config(std::istream& in, const std::string& source);
/// A missing file is a DataError naming the path.
RunConfig load_run_config(const std::string& path);
std::string format_run_config(const RunConfig& cfg);

}  // namespace clbruno
