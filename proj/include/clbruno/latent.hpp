#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "clbruno/autodiff.hpp"
#include "clbruno/tensor.hpp"

namespace clbruno {

/// Exchangeable Gaussian law of one task's latent sequence.
///
/// Each dimension d is an independent zero-mean Gaussian sequence with
/// variance nu_d and pairwise covariance rho_d. Both are derived from
/// unconstrained pre-parameters so that 0 < rho_d < nu_d for any real input:
///
///   nu  = softplus(variance_pre) + kVarianceFloor
///   rho = nu * sigmoid(correlation_pre)
struct LatentParams {
  static constexpr double kVarianceFloor = 1e-4;
  static constexpr double kInitialVariance = 1.0;
  static constexpr double kInitialCovariance = 0.1;

  LatentParams() = default;
  /// Parameters at the initial values nu = 1.0, rho = 0.1 in every dimension.
  LatentParams(std::size_t dim, const std::string& name_prefix);

  std::size_t dim() const { return variance_pre.value.cols(); }
  std::vector<double> variance() const;
  std::vector<double> covariance() const;

  Parameter variance_pre;
  Parameter correlation_pre;
};

/// Sufficient statistics of the absorbed latent history: count and per-dimension sums.
struct LatentState {
  LatentState() = default;
  explicit LatentState(std::size_t dim) : sums(dim, 0.0) {}

  /// Adds one latent vector. Throws DataError on non-finite input.
  void absorb(std::span<const double> z);
  void absorb_rows(const Tensor& zs);

  bool operator==(const LatentState&) const = default;

  std::uint64_t count = 0;
  std::vector<double> sums;
};

struct Predictive {
  std::vector<double> mean;
  std::vector<double> variance;
};

/// Gaussian law of the next latent given the absorbed history:
///   mean = rho * S / (nu + (n-1) rho),  variance = nu - n rho^2 / (nu + (n-1) rho).
Predictive predictive(std::span<const double> nu, std::span<const double> rho,
                      const LatentState& state);
Predictive predictive(const LatentParams& params, const LatentState& state);

/// How rows of a latent batch relate to the conditioning state.
enum class LatentConditioning {
  /// Row i is conditioned on the state plus rows 0..i-1.
  kSequential,
  /// Every row is conditioned on the state alone.
  kIndependent,
};

/// Per-row log densities (n x 1) of `zs` under the exchangeable law.
Tensor latent_log_density(std::span<const double> nu, std::span<const double> rho,
                          const LatentState& state, const Tensor& zs, LatentConditioning mode);

/// Log joint density of an ordered latent sequence, threading the state.
double sequence_log_density(const LatentParams& params, const LatentState& initial,
                            const Tensor& zs);

/// Independent draw from the current predictive. The state is not advanced.
std::vector<double> sample_predictive(const LatentParams& params, const LatentState& state,
                                      std::mt19937_64& rng);

/// Differentiable (nu, rho) as 1 x D tape values.
struct LatentVars {
  Var variance;
  Var covariance;
};
LatentVars bind_latent(Tape& tape, LatentParams& params);
LatentVars bind_latent(Tape& tape, const LatentParams& params);

namespace ops {
/// Tape op for latent_log_density; differentiable in zs, nu and rho.
Var latent_log_density(Var zs, const LatentVars& params, const LatentState& state,
                       LatentConditioning mode);
}  // namespace ops

}  // namespace clbruno
