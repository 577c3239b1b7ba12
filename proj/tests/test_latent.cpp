#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "clbruno/errors.hpp"
#include "clbruno/latent.hpp"
#include "oracles.hpp"

using namespace clbruno;

namespace {

struct RandomLaw {
  std::vector<double> nu;
  std::vector<double> rho;
};

RandomLaw random_law(std::size_t dim, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> nu_dist(0.2, 3.0);
  std::uniform_real_distribution<double> frac(0.0, 0.95);
  RandomLaw law;
  for (std::size_t d = 0; d < dim; ++d) {
    law.nu.push_back(nu_dist(rng));
    law.rho.push_back(law.nu.back() * frac(rng));
  }
  return law;
}

}  // namespace

TEST(Latent, InitialValues) {
  const LatentParams p(5, "t");
  for (double v : p.variance()) {
    EXPECT_NEAR(v, 1.0, 1e-12);
  }
  for (double v : p.covariance()) {
    EXPECT_NEAR(v, 0.1, 1e-12);
  }
}

TEST(Latent, ParameterizationKeepsOrdering) {
  LatentParams p(4, "t");
  const double pre[] = {-40.0, -3.0, 0.0, 30.0};
  for (int i = 0; i < 4; ++i) {
    p.variance_pre.value[i] = pre[i];
    p.correlation_pre.value[i] = pre[3 - i];
  }
  const auto nu = p.variance();
  const auto rho = p.covariance();
  for (int i = 0; i < 4; ++i) {
    EXPECT_GT(nu[i], 0.0);
    EXPECT_GT(rho[i], 0.0);
    EXPECT_LT(rho[i], nu[i]);
  }
}

TEST(Latent, EmptyStatePredictiveIsPrior) {
  const std::vector<double> nu = {1.5, 0.7};
  const std::vector<double> rho = {0.3, 0.1};
  const Predictive p = predictive(nu, rho, LatentState(2));
  EXPECT_EQ(p.mean, (std::vector<double>{0.0, 0.0}));
  EXPECT_DOUBLE_EQ(p.variance[0], 1.5);
  EXPECT_DOUBLE_EQ(p.variance[1], 0.7);
}

TEST(Latent, PredictiveMatchesDenseConditional) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t dim = 1 + rng() % 6;
    const std::size_t n = rng() % 40;
    const RandomLaw law = random_law(dim, rng);
    const Tensor z = oracle::random_tensor(n, dim, rng, 1.5);
    LatentState state(dim);
    state.absorb_rows(z);
    const Predictive p = predictive(law.nu, law.rho, state);
    for (std::size_t d = 0; d < dim; ++d) {
      std::vector<double> hist;
      for (std::size_t i = 0; i < n; ++i) {
        hist.push_back(z(i, d));
      }
      const auto want = oracle::dense_conditional(hist, law.nu[d], law.rho[d]);
      EXPECT_NEAR(p.mean[d], want.mean, 1e-9);
      EXPECT_NEAR(p.variance[d], want.variance, 1e-9);
    }
  }
}

TEST(Latent, SequenceDensityMatchesDenseJoint) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t dim = 1 + rng() % 6;
    const std::size_t n = 1 + rng() % 30;
    LatentParams params(dim, "t");
    std::normal_distribution<double> pre(0.0, 1.0);
    for (std::size_t d = 0; d < dim; ++d) {
      params.variance_pre.value[d] = pre(rng);
      params.correlation_pre.value[d] = pre(rng);
    }
    const Tensor z = oracle::random_tensor(n, dim, rng);
    const double got = sequence_log_density(params, LatentState(dim), z);
    const double want = oracle::joint_log_density(z, params.variance(), params.covariance());
    EXPECT_NEAR(got, want, 1e-8);
  }
}

TEST(Latent, StateIsOrderFreeSufficientStatistic) {
  std::mt19937_64 rng(13);
  const Tensor z = oracle::random_tensor(20, 3, rng);
  std::vector<std::size_t> order(20);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  LatentState a(3);
  LatentState b(3);
  a.absorb_rows(z);
  b.absorb_rows(z.select_rows(order));
  EXPECT_EQ(a.count, b.count);
  for (std::size_t d = 0; d < 3; ++d) {
    EXPECT_NEAR(a.sums[d], b.sums[d], 1e-12);
  }
}

TEST(Latent, VarianceShrinksWithHistory) {
  const std::vector<double> nu = {1.0};
  const std::vector<double> rho = {0.4};
  LatentState state(1);
  double last = predictive(nu, rho, state).variance[0];
  for (int i = 0; i < 50; ++i) {
    const double z[] = {0.3};
    state.absorb(z);
    const double v = predictive(nu, rho, state).variance[0];
    EXPECT_LE(v, last + 1e-15);
    EXPECT_GT(v, nu[0] - rho[0] - 1e-12);
    last = v;
  }
}

TEST(Latent, ChainRuleOfSequentialAndIndependentModes) {
  std::mt19937_64 rng(14);
  const RandomLaw law = random_law(3, rng);
  const Tensor z = oracle::random_tensor(6, 3, rng);
  LatentState state(3);
  state.absorb_rows(oracle::random_tensor(4, 3, rng));
  const Tensor seq = latent_log_density(law.nu, law.rho, state, z, LatentConditioning::kSequential);
  const Tensor ind =
      latent_log_density(law.nu, law.rho, state, z, LatentConditioning::kIndependent);
  EXPECT_NEAR(seq[0], ind[0], 1e-12);
  LatentState grown = state;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const Tensor one = Tensor::row_vector(z.row(i));
    const Tensor d =
        latent_log_density(law.nu, law.rho, grown, one, LatentConditioning::kIndependent);
    EXPECT_NEAR(seq[i], d[0], 1e-10);
    grown.absorb(z.row(i));
  }
}

TEST(Latent, SamplingLeavesStateAndMatchesMoments) {
  LatentParams params(2, "t");
  LatentState state(2);
  const double z[] = {2.0, -1.0};
  for (int i = 0; i < 10; ++i) {
    state.absorb(z);
  }
  const LatentState before = state;
  const Predictive p = predictive(params, state);
  std::mt19937_64 rng(15);
  double mean0 = 0.0;
  double sq0 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const auto s = sample_predictive(params, state, rng);
    mean0 += s[0];
    sq0 += (s[0] - p.mean[0]) * (s[0] - p.mean[0]);
  }
  EXPECT_EQ(state, before);
  EXPECT_NEAR(mean0 / n, p.mean[0], 0.03);
  EXPECT_NEAR(sq0 / n, p.variance[0], 0.03);
}

TEST(Latent, Errors) {
  LatentState s(2);
  const double bad[] = {1.0, std::nan("")};
  EXPECT_THROW(s.absorb(bad), DataError);
  const double wide[] = {1.0, 2.0, 3.0};
  EXPECT_THROW(s.absorb(wide), DimensionError);
  const std::vector<double> nu = {1.0};
  EXPECT_THROW(predictive(nu, nu, s), DimensionError);
}

TEST(Latent, TapeGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(16);
  for (const auto mode : {LatentConditioning::kSequential, LatentConditioning::kIndependent}) {
    LatentParams params(3, "t");
    std::normal_distribution<double> pre(0.0, 0.7);
    for (std::size_t d = 0; d < 3; ++d) {
      params.variance_pre.value[d] = pre(rng);
      params.correlation_pre.value[d] = pre(rng);
    }
    Parameter zp("z", oracle::random_tensor(5, 3, rng));
    LatentState state(3);
    state.absorb_rows(oracle::random_tensor(3, 3, rng));

    auto eval = [&](Tape& tape) {
      const LatentVars lv = bind_latent(tape, params);
      return ops::sum(ops::latent_log_density(bind(tape, zp), lv, state, mode));
    };
    Tape tape;
    tape.backward(eval(tape));
    for (Parameter* p : {&zp, &params.variance_pre, &params.correlation_pre}) {
      std::vector<double> analytic(p->grad.data().begin(), p->grad.data().end());
      std::vector<double> numeric;
      for (double& v : p->value.data()) {
        numeric.push_back(oracle::central_difference(
            [&] {
              Tape t2(false);
              return eval(t2).scalar();
            },
            v, 1e-6));
      }
      EXPECT_LT(oracle::relative_error(analytic, numeric), 1e-6) << p->name;
    }
  }
}
