#include <doctest.h>

#include <cmath>
#include <random>

#include "glmprog/errors.hpp"
#include "glmprog/power.hpp"
#include "glmprog/stats.hpp"
#include "test_support.hpp"

using namespace glmprog;

namespace {

PopulationParams unit_params() {
  PopulationParams p;
  p.kappa0_sq = p.kappa1_sq = p.sigma0_sq = p.sigma1_sq = 1.0;
  p.psi0 = 0.0;
  p.psi1 = 0.2;
  return p;
}

PowerSpec z_test_spec() {
  PowerSpec s;
  s.effect = EffectMeasure::difference();
  s.target_effect = 0.2;
  s.null_value = 0.0;
  return s;
}

// Closed-form two-sample z-test size.
double z_test_n(double v, double delta, double alpha, double power) {
  const double z = stats::normal_quantile(1 - alpha / 2) + stats::normal_quantile(power);
  return z * z * v / (delta * delta);
}

PopulationParams random_params(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(0.2, 3.0), pi(0.2, 0.8), u(0, 1), c(-1, 1);
  PopulationParams p;
  p.sigma0_sq = pos(rng);
  p.sigma1_sq = pos(rng);
  p.kappa0_sq = p.sigma0_sq * u(rng);
  p.kappa1_sq = p.sigma1_sq * u(rng);
  p.psi0 = pos(rng);
  p.psi1 = pos(rng);
  p.pi1 = pi(rng);
  p.pi0 = 1 - p.pi1;
  p.tau = u(rng);
  p.eta_resid = c(rng);
  return p;
}

// The bound as a plain sum of squares and cross term, written out here.
double bound_expanded(const PopulationParams& p, const EffectGradient& g) {
  return g.r0 * g.r0 * (p.pi1 / p.pi0 * p.kappa0_sq + p.sigma0_sq) +
         g.r1 * g.r1 * (p.pi0 / p.pi1 * p.kappa1_sq + p.sigma1_sq) +
         2 * std::abs(g.r0 * g.r1) * std::sqrt(p.kappa0_sq * p.kappa1_sq);
}

}  // namespace

TEST_SUITE("power") {
  TEST_CASE("z-test oracle: 785") {
    auto p = unit_params();
    p.unadjusted = true;
    p.eta_resid = p.tau;
    const auto spec = z_test_spec();
    const double v = variance_bound(p, spec.effect);
    CHECK(v == doctest::Approx(4.0));
    const double oracle = z_test_n(4.0, 0.2, 0.05, 0.8);
    const auto n = required_sample_size(p, spec);
    CHECK(std::abs(static_cast<double>(n) - std::ceil(oracle)) <= 1.0);
    CHECK(n == 785);
  }

  TEST_CASE("unadjusted path from historical data") {
    // y = +-1 alternating: mean 0, maximum-likelihood variance 1.
    auto t = testing::make_table(1000, 1, 1, [](auto, int, auto&) { return 0.0; }, false);
    for (Eigen::Index i = 0; i < 1000; ++i) t.y[i] = i % 2 ? 1.0 : -1.0;
    const auto p = estimate_population_params(HistoricalDataset(t), KappaUnadjusted{}, z_test_spec());
    CHECK(p.kappa0_sq == p.sigma0_sq);
    CHECK(p.sigma0_sq == doctest::Approx(1.0));
    CHECK(p.psi1 == doctest::Approx(0.2));
    CHECK(required_sample_size(p, z_test_spec()) == 785);
  }

  TEST_CASE("binary outcome with a null odds-ratio target") {
    auto t = testing::make_table(10, 0, 1, [](auto, int, auto&) { return 0.0; }, false);
    t.y << 1, 1, 1, 0, 0, 0, 0, 0, 0, 0;
    PowerSpec s;
    s.effect = EffectMeasure::odds_ratio();
    s.target_effect = 1.0;
    s.null_value = 1.0;
    PlanningOptions opt;
    opt.binary_outcome = true;
    const auto p = estimate_population_params(HistoricalDataset(t), KappaUnadjusted{}, s, opt);
    CHECK(p.psi1 == doctest::Approx(0.3));
    CHECK(p.sigma1_sq == doctest::Approx(0.21));
  }

  TEST_CASE("learner kappa equals the prognostic CV MSE on the same folds") {
    auto t = testing::make_table(400, 2, 2, [](auto w, int, auto& rng) {
      return 1.0 + w(0) + std::normal_distribution<double>(0, 1)(rng);
    }, false);
    const auto learner = make_learner(LearnerKind::glm_main_terms, LearnerConfig{});
    PlanningOptions opt;
    opt.cv_folds = 5;
    opt.seed = 33;
    const auto p = estimate_population_params(HistoricalDataset(t), KappaLearnerCv{learner}, z_test_spec(), opt);
    const double r = cv_rmse(learner, t, 5, 33);
    CHECK(p.kappa0_sq == doctest::Approx(r * r).epsilon(1e-12));
    CHECK(p.kappa1_sq == p.kappa0_sq);
    CHECK(p.sigma1_sq == p.sigma0_sq);

    opt.inflation_kappa1 = 1.5;
    opt.inflation_sigma1 = 1.2;
    const auto q = estimate_population_params(HistoricalDataset(t), KappaLearnerCv{learner}, z_test_spec(), opt);
    CHECK(q.kappa1_sq == doctest::Approx(1.5 * q.kappa0_sq));
    CHECK(q.sigma1_sq == doctest::Approx(1.2 * q.sigma0_sq));

    Eigen::VectorXd pred = Eigen::VectorXd::Constant(400, t.y.mean());
    const auto c = estimate_population_params(HistoricalDataset(t), KappaPredictions{pred}, z_test_spec());
    CHECK(c.kappa0_sq == doctest::Approx(c.sigma0_sq));
  }

  TEST_CASE("reduced form: unadjusted and perfect-prediction cases") {
    auto p = unit_params();
    p.sigma0_sq = 2.0;
    p.sigma1_sq = 3.0;
    p.kappa0_sq = 2.0;
    p.kappa1_sq = 3.0;
    p.tau = p.eta_resid = 0.4;
    const auto diff = EffectMeasure::difference();
    CHECK(reduced_variance(p, diff) == doctest::Approx(2.0 / 0.5 + 3.0 / 0.5));

    p.kappa0_sq = p.kappa1_sq = 0.0;
    p.tau = 0.0;
    CHECK(reduced_variance(p, diff) == doctest::Approx(5.0));
  }

  TEST_CASE("linear-regression special case") {
    const double s0 = 1.3, s1 = 0.8, r0 = 0.6, r1 = 0.45;
    PopulationParams p;
    p.sigma0_sq = s0 * s0;
    p.sigma1_sq = s1 * s1;
    p.kappa0_sq = (1 - r0 * r0) * p.sigma0_sq;
    p.kappa1_sq = (1 - r1 * r1) * p.sigma1_sq;
    p.pi1 = 0.4;
    p.pi0 = 0.6;
    p.psi0 = 1;
    p.psi1 = 2;
    // Cross-covariance of the two linear predictions is r0 r1 s0 s1.
    p.eta_resid = 0.0;
    p.tau = r0 * r1;
    const double expected = p.sigma0_sq / p.pi0 + p.sigma1_sq / p.pi1 -
                            p.pi1 * p.pi0 * std::pow(r0 * s0 / p.pi0 + r1 * s1 / p.pi1, 2);
    CHECK(std::abs(reduced_variance(p, EffectMeasure::difference()) - expected) <= 1e-10);
  }

  TEST_CASE("bound equals its expanded form and dominates the reduced form") {
    std::mt19937_64 rng(4);
    const auto ratio = EffectMeasure::ratio();
    for (int i = 0; i < 1000; ++i) {
      auto p = random_params(rng);
      for (const auto& e : {EffectMeasure::difference(), ratio}) {
        const double b = variance_bound(p, e);
        CHECK(std::abs(b - bound_expanded(p, e.gradient(p.psi1, p.psi0))) <= 1e-12 * std::max(1.0, b));
        for (int ti = 0; ti <= 10; ++ti) {
          for (int ei = 0; ei <= 10; ++ei) {
            auto q = p;
            q.tau = ti / 10.0;
            q.eta_resid = -1.0 + ei / 5.0;
            CHECK(reduced_variance(q, e) <= b * (1 + 1e-12));
          }
        }
        auto worst = p;
        worst.tau = 0.0;
        worst.eta_resid = 1.0;
        CHECK(reduced_variance(worst, e) == doctest::Approx(b).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("smaller kappa gives a smaller bound and sample size") {
    auto p = unit_params();
    const auto spec = z_test_spec();
    const double b = variance_bound(p, spec.effect);
    const auto n = required_sample_size(p, spec);
    p.kappa0_sq = p.kappa1_sq = 0.25;
    CHECK(variance_bound(p, spec.effect) < b);
    CHECK(required_sample_size(p, spec) < n);
  }

  TEST_CASE("power_at_n") {
    const auto spec = z_test_spec();
    for (double n : {50.0, 300.0, 1000.0}) {
      // Upper rejection region only.
      const double oracle = 1 - stats::normal_cdf(stats::normal_quantile(0.975) - 0.2 / std::sqrt(4.0 / n));
      CHECK(power_at_n(4.0, spec, n) == doctest::Approx(oracle).epsilon(1e-3));
    }
    CHECK(power_at_n(4.0, spec, 1e7) > 0.999);
    double prev = 0;
    for (double n = 2; n < 5000; n *= 1.5) {
      const double pw = power_at_n(4.0, spec, n);
      CHECK(pw > prev);
      CHECK(power_at_n(5.0, spec, n) < pw);
      prev = pw;
    }
    auto null = spec;
    null.target_effect = 0.0;
    for (double n : {10.0, 100.0, 1e5}) CHECK(power_at_n(4.0, null, n) <= 0.05 + 1e-9);
    CHECK_THROWS(power_at_n(0.0, spec, 100));
    CHECK_THROWS_AS(required_sample_size(4.0, null), NoSolutionError);

    auto lower = spec;
    lower.target_effect = -0.2;
    CHECK(required_sample_size(4.0, lower) == 785);
  }

  TEST_CASE("required_sample_size is the first n reaching the target") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> v(0.5, 20), d(0.05, 1.0), pw(0.5, 0.95);
    for (int i = 0; i < 200; ++i) {
      auto spec = z_test_spec();
      spec.target_effect = d(rng);
      spec.target_power = pw(rng);
      spec.one_sided = i % 3 == 0;
      const double vv = v(rng);
      const auto n = required_sample_size(vv, spec);
      CHECK(power_at_n(vv, spec, static_cast<double>(n)) >= spec.target_power);
      if (n > 2) CHECK(power_at_n(vv, spec, static_cast<double>(n - 1)) < spec.target_power);
    }
  }

  TEST_CASE("spec validation") {
    auto s = z_test_spec();
    s.alpha = 1.5;
    CHECK_THROWS(s.validate());
    s = z_test_spec();
    s.target_power = 1.0;
    CHECK_THROWS(s.validate());
    auto p = unit_params();
    p.pi1 = 0.7;
    CHECK_THROWS(p.validate());
  }
}

#include "moment_oracle.hpp"

TEST_SUITE("power") {
  TEST_CASE("reduced form matches a simulated joint law") {
    PopulationParams p;
    p.sigma0_sq = 2.0;
    p.sigma1_sq = 2.5;
    p.kappa0_sq = 1.0;
    p.kappa1_sq = 1.4;
    p.tau = 0.6;
    p.eta_resid = 0.3;
    p.psi0 = 3.0;
    p.psi1 = 3.6;
    p.pi1 = 0.4;
    p.pi0 = 0.6;
    for (const auto& e : {EffectMeasure::difference(), EffectMeasure::ratio()}) {
      const double mc = testing::simulated_if_variance(p, e, 400000, 6);
      CHECK(std::abs(mc / reduced_variance(p, e) - 1.0) <= 0.02);
    }
  }
}
