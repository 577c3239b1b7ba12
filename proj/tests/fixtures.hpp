#pragma once

#include <map>
#include <random>
#include <vector>

#include "clbruno/data.hpp"
#include "clbruno/model.hpp"
#include "oracles.hpp"

namespace fixture {

inline clbruno::FlowConfig small_flow(std::size_t dim, std::size_t layers = 4) {
  return clbruno::FlowConfig{dim, layers, 3, 8};
}

// Adds noise to every flow parameter so the coupling nets are not at their
// zero-output starting point.
inline void perturb(clbruno::ClBrunoModel& model, std::mt19937_64& rng, double stddev = 0.3) {
  std::normal_distribution<double> n(0.0, stddev);
  for (clbruno::Parameter* p : model.flow().parameters()) {
    for (double& v : p->value.data()) {
      v += n(rng);
    }
  }
}

inline void perturb_latent(clbruno::TaskRecord& rec, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 0.5);
  for (double& v : rec.latent.variance_pre.value.data()) {
    v += n(rng);
  }
  for (double& v : rec.latent.correlation_pre.value.data()) {
    v += n(rng);
  }
}

// Model with one task per entry of `classes`, labels 1..C, random weights.
inline clbruno::ClBrunoModel random_model(std::size_t dim, const std::vector<std::size_t>& classes,
                                          std::uint64_t seed, std::size_t layers = 4) {
  clbruno::ClBrunoModel model(small_flow(dim, layers), seed);
  std::mt19937_64 rng(seed + 101);
  for (std::size_t t = 0; t < classes.size(); ++t) {
    std::map<clbruno::Label, std::uint64_t> counts;
    for (std::size_t y = 1; y <= classes[t]; ++y) {
      counts[static_cast<clbruno::Label>(y)] = 1 + rng() % 5;
    }
    model.register_task(static_cast<clbruno::TaskId>(t + 1), counts);
    perturb_latent(model.task(static_cast<clbruno::TaskId>(t + 1)), rng);
  }
  perturb(model, rng);
  return model;
}

inline std::vector<clbruno::Label> random_labels(std::size_t n, std::size_t classes,
                                                 std::mt19937_64& rng) {
  std::vector<clbruno::Label> out(n);
  for (auto& y : out) {
    y = static_cast<clbruno::Label>(1 + rng() % classes);
  }
  return out;
}

// Absorbs a few random latents so predictions condition on a non-empty state.
inline void fill_states(clbruno::ClBrunoModel& model, std::mt19937_64& rng, std::size_t n = 5) {
  for (auto& [t, rec] : model.tasks()) {
    rec.state.absorb_rows(oracle::random_tensor(n, model.dim(), rng));
  }
}

inline clbruno::Dataset blobs(clbruno::TaskId t, std::size_t n, std::size_t dim,
                              const std::vector<clbruno::Label>& labels, std::mt19937_64& rng,
                              double spread = 3.0) {
  clbruno::Dataset d;
  d.task = t;
  d.features = clbruno::Tensor(n, dim);
  std::normal_distribution<double> noise(0.0, 0.5);
  for (std::size_t i = 0; i < n; ++i) {
    const clbruno::Label y = labels[i % labels.size()];
    d.labels.push_back(y);
    for (std::size_t c = 0; c < dim; ++c) {
      d.features(i, c) = noise(rng) + ((c + static_cast<std::size_t>(y)) % 2 == 0 ? spread : -spread) *
                                          (1.0 + 0.1 * static_cast<double>(t));
    }
  }
  return d;
}

}  // namespace fixture
