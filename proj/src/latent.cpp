#include "clbruno/latent.hpp"

#include <cmath>
#include <numbers>

#include "clbruno/errors.hpp"

namespace clbruno {
namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid(double x) {
  if (x >= 0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct Conditional {
  double den;
  double mean;
  double variance;
};

// Conditional law of the next value in one dimension after k absorbed values summing to s.
Conditional conditional(double nu, double rho, double k, double s) {
  const double den = nu + (k - 1.0) * rho;
  // (nu - rho)(nu + k rho) / den equals nu - k rho^2 / den and stays positive.
  return {den, rho * s / den, (nu - rho) * (nu + k * rho) / den};
}

void check_shapes(std::span<const double> nu, std::span<const double> rho, const LatentState& state,
                  std::size_t cols) {
  if (nu.size() != cols || rho.size() != cols || state.sums.size() != cols) {
    throw DimensionError("latent: parameter/state dimension does not match latent width " +
                         std::to_string(cols));
  }
}

}  // namespace

LatentParams::LatentParams(std::size_t dim, const std::string& name_prefix) {
  // softplus(a) + floor = 1.0 and sigmoid(b) = 0.1.
  const double a = std::log(std::expm1(kInitialVariance - kVarianceFloor));
  const double ratio = kInitialCovariance / kInitialVariance;
  const double b = std::log(ratio / (1.0 - ratio));
  variance_pre = Parameter(name_prefix + ".variance_pre", Tensor(1, dim, a));
  correlation_pre = Parameter(name_prefix + ".correlation_pre", Tensor(1, dim, b));
}

std::vector<double> LatentParams::variance() const {
  std::vector<double> nu(dim());
  for (std::size_t d = 0; d < nu.size(); ++d) {
    nu[d] = softplus(variance_pre.value[d]) + kVarianceFloor;
  }
  return nu;
}

std::vector<double> LatentParams::covariance() const {
  std::vector<double> rho = variance();
  for (std::size_t d = 0; d < rho.size(); ++d) {
    rho[d] *= sigmoid(correlation_pre.value[d]);
  }
  return rho;
}

void LatentState::absorb(std::span<const double> z) {
  if (sums.empty() && count == 0) {
    sums.assign(z.size(), 0.0);
  }
  if (z.size() != sums.size()) {
    throw DimensionError("absorb: latent width " + std::to_string(z.size()) + " != " +
                         std::to_string(sums.size()));
  }
  for (double v : z) {
    if (!std::isfinite(v)) {
      throw DataError("absorb: non-finite latent value");
    }
  }
  for (std::size_t d = 0; d < z.size(); ++d) {
    sums[d] += z[d];
  }
  ++count;
}

void LatentState::absorb_rows(const Tensor& zs) {
  for (std::size_t i = 0; i < zs.rows(); ++i) {
    absorb(zs.row(i));
  }
}

Predictive predictive(std::span<const double> nu, std::span<const double> rho,
                      const LatentState& state) {
  check_shapes(nu, rho, state, nu.size());
  Predictive out{std::vector<double>(nu.size()), std::vector<double>(nu.size())};
  const double k = static_cast<double>(state.count);
  for (std::size_t d = 0; d < nu.size(); ++d) {
    const Conditional c = conditional(nu[d], rho[d], k, state.sums[d]);
    out.mean[d] = state.count == 0 ? 0.0 : c.mean;
    out.variance[d] = c.variance;
  }
  return out;
}

Predictive predictive(const LatentParams& params, const LatentState& state) {
  const auto nu = params.variance();
  const auto rho = params.covariance();
  return predictive(nu, rho, state);
}

Tensor latent_log_density(std::span<const double> nu, std::span<const double> rho,
                          const LatentState& state, const Tensor& zs, LatentConditioning mode) {
  const std::size_t dim = zs.cols();
  check_shapes(nu, rho, state, dim);
  Tensor out(zs.rows(), 1);
  std::vector<double> sums = state.sums;
  double k = static_cast<double>(state.count);
  for (std::size_t i = 0; i < zs.rows(); ++i) {
    const auto z = zs.row(i);
    double lp = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const Conditional c = conditional(nu[d], rho[d], k, sums[d]);
      const double r = z[d] - c.mean;
      lp -= 0.5 * (kLog2Pi + std::log(c.variance) + r * r / c.variance);
    }
    out[i] = lp;
    if (mode == LatentConditioning::kSequential) {
      for (std::size_t d = 0; d < dim; ++d) {
        sums[d] += z[d];
      }
      k += 1.0;
    }
  }
  return out;
}

double sequence_log_density(const LatentParams& params, const LatentState& initial,
                            const Tensor& zs) {
  return latent_log_density(params.variance(), params.covariance(), initial, zs,
                            LatentConditioning::kSequential)
      .sum();
}

std::vector<double> sample_predictive(const LatentParams& params, const LatentState& state,
                                      std::mt19937_64& rng) {
  const Predictive p = predictive(params, state);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> z(p.mean.size());
  for (std::size_t d = 0; d < z.size(); ++d) {
    z[d] = p.mean[d] + std::sqrt(p.variance[d]) * normal(rng);
  }
  return z;
}

namespace {

template <class Params>
LatentVars bind_latent_impl(Tape& tape, Params& params) {
  Var nu = ops::add_scalar(ops::softplus(bind(tape, params.variance_pre)),
                           LatentParams::kVarianceFloor);
  Var rho = ops::mul(nu, ops::sigmoid(bind(tape, params.correlation_pre)));
  return {nu, rho};
}

}  // namespace

LatentVars bind_latent(Tape& tape, LatentParams& params) { return bind_latent_impl(tape, params); }
LatentVars bind_latent(Tape& tape, const LatentParams& params) {
  return bind_latent_impl(tape, params);
}

namespace ops {

Var latent_log_density(Var zs, const LatentVars& params, const LatentState& state,
                       LatentConditioning mode) {
  Tape& tape = *zs.tape();
  const Tensor& nu_t = params.variance.value();
  const Tensor& rho_t = params.covariance.value();
  if (nu_t.rows() != 1 || rho_t.rows() != 1) {
    throw DimensionError("latent_log_density: parameters must be 1 x D rows");
  }
  Tensor value = clbruno::latent_log_density(nu_t.data(), rho_t.data(), state, zs.value(), mode);

  const std::size_t iz = zs.id();
  const std::size_t inu = params.variance.id();
  const std::size_t irho = params.covariance.id();
  return tape.record(
      std::move(value), {zs, params.variance, params.covariance},
      [iz, inu, irho, state, mode](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        const Tensor& z = tp.value(iz);
        const Tensor& nu = tp.value(inu);
        const Tensor& rho = tp.value(irho);
        const std::size_t n = z.rows();
        const std::size_t dim = z.cols();
        const bool sequential = mode == LatentConditioning::kSequential;

        // carry(i, d): upstream weight on the conditional mean of row i per unit of S.
        Tensor direct(n, dim);
        Tensor carry(n, dim);
        std::vector<double> g_nu(dim, 0.0);
        std::vector<double> g_rho(dim, 0.0);
        std::vector<double> sums = state.sums;
        double k = static_cast<double>(state.count);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t d = 0; d < dim; ++d) {
            const double nd = nu[d];
            const double rd = rho[d];
            const Conditional c = conditional(nd, rd, k, sums[d]);
            const double r = z(i, d) - c.mean;
            const double dlp_dm = r / c.variance;
            const double dlp_dv = 0.5 * (r * r / c.variance - 1.0) / c.variance;
            const double den2 = c.den * c.den;
            const double dm_dnu = -c.mean / c.den;
            const double dm_drho = sums[d] * nd / den2;
            const double dv_dnu = 1.0 + k * rd * rd / den2;
            const double dv_drho = -2.0 * k * rd / c.den + k * (k - 1.0) * rd * rd / den2;
            direct(i, d) = -g[i] * dlp_dm;
            carry(i, d) = g[i] * dlp_dm * rd / c.den;
            g_nu[d] += g[i] * (dlp_dm * dm_dnu + dlp_dv * dv_dnu);
            g_rho[d] += g[i] * (dlp_dm * dm_drho + dlp_dv * dv_drho);
          }
          if (sequential) {
            for (std::size_t d = 0; d < dim; ++d) {
              sums[d] += z(i, d);
            }
            k += 1.0;
          }
        }

        if (tp.needs_grad(iz)) {
          Tensor& gz = tp.grad_accumulator(iz);
          // Row i feeds the conditional means of every later row in sequential mode.
          std::vector<double> later(dim, 0.0);
          for (std::size_t i = n; i-- > 0;) {
            for (std::size_t d = 0; d < dim; ++d) {
              gz(i, d) += direct(i, d) + later[d];
              if (sequential) {
                later[d] += carry(i, d);
              }
            }
          }
        }
        if (tp.needs_grad(inu)) {
          Tensor& gn = tp.grad_accumulator(inu);
          for (std::size_t d = 0; d < dim; ++d) {
            gn[d] += g_nu[d];
          }
        }
        if (tp.needs_grad(irho)) {
          Tensor& gr = tp.grad_accumulator(irho);
          for (std::size_t d = 0; d < dim; ++d) {
            gr[d] += g_rho[d];
          }
        }
      });
}

}  // namespace ops
}  // namespace clbruno
