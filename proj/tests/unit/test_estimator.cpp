#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "glmprog/errors.hpp"
#include "glmprog/estimator.hpp"
#include "glmprog/stats.hpp"
#include "test_support.hpp"

using namespace glmprog;

namespace {

// Balanced trial (n1 = n/2 exactly) with Poisson outcomes.
TrialDataset poisson_trial(std::size_t n, std::uint64_t seed, double effect = 0.2) {
  auto t = testing::make_table(n, 2, seed, [effect](auto w, int a, auto& rng) {
    const double mu = std::exp(0.5 + 0.5 * w(0) + 0.3 * stats::hinge(w(1)) + effect * a);
    return static_cast<double>(std::poisson_distribution<int>(mu)(rng));
  });
  return TrialDataset(t, 0.5);
}

// Sample moments computed independently of the library.
struct ArmMoments {
  double mean[2] = {};
  double var[2] = {};
  double n[2] = {};
};

ArmMoments arm_moments(const DataTable& t) {
  ArmMoments m;
  for (Eigen::Index i = 0; i < t.y.size(); ++i) {
    m.mean[t.a[i]] += t.y[i];
    m.n[t.a[i]] += 1;
  }
  for (int a = 0; a < 2; ++a) m.mean[a] /= m.n[a];
  for (Eigen::Index i = 0; i < t.y.size(); ++i) m.var[t.a[i]] += std::pow(t.y[i] - m.mean[t.a[i]], 2);
  for (int a = 0; a < 2; ++a) m.var[a] /= m.n[a];
  return m;
}

}  // namespace

TEST_SUITE("estimator") {
  TEST_CASE("unadjusted identity model: arm means and the textbook variance") {
    auto t = testing::make_table(301, 1, 1, [](auto, int a, auto& rng) {
      return 2.0 + a + std::normal_distribution<double>(0, 1.5)(rng);
    });
    // Odd n: set the design probability to the realized share.
    const auto m0 = arm_moments(t);
    const TrialDataset d(t, m0.n[1] / 301.0);
    const auto fit = fit_glm(FamilyLink::normal(), DesignSpec{}, t);
    CHECK(estimate_counterfactual_mean(fit, d, nullptr, 0) == doctest::Approx(m0.mean[0]).epsilon(1e-12));
    CHECK(estimate_counterfactual_mean(fit, d, nullptr, 1) == doctest::Approx(m0.mean[1]).epsilon(1e-12));

    const auto est = estimate_marginal_effect(FamilyLink::normal(), DesignSpec{}, EffectMeasure::difference(), d, nullptr);
    const double textbook = m0.var[0] / d.pi0() + m0.var[1] / d.pi1();
    CHECK(std::abs(est.variance_vhat - textbook) <= 1e-10 * textbook);
    CHECK(est.psi_hat == doctest::Approx(m0.mean[1] - m0.mean[0]).epsilon(1e-12));
    CHECK(est.se == doctest::Approx(std::sqrt(textbook / 301.0)));
    const double z = stats::normal_quantile(0.975);
    CHECK(est.ci_lo == doctest::Approx(est.psi_hat - z * est.se));
    CHECK(est.ci_hi == doctest::Approx(est.psi_hat + z * est.se));
  }

  TEST_CASE("saturated logistic plug-in equals stratified brute force") {
    std::mt19937_64 rng(2);
    std::bernoulli_distribution coin(0.5);
    std::uniform_real_distribution<double> u(0, 1);
    DataTable t;
    t.covariate_names = {"x"};
    t.w.resize(200, 1);
    t.a.resize(200);
    t.y.resize(200);
    double cnt[2][2] = {}, ones[2][2] = {};
    for (int i = 0; i < 200; ++i) {
      t.ids.push_back(std::to_string(i));
      const int x = coin(rng), a = i % 2;
      const double y = u(rng) < 0.25 + 0.35 * x + 0.2 * a ? 1.0 : 0.0;
      t.w(i, 0) = x;
      t.a[i] = a;
      t.y[i] = y;
      cnt[x][a] += 1;
      ones[x][a] += y;
    }
    const TrialDataset d(t, 0.5);
    const auto fit = fit_glm(FamilyLink::binomial(), DesignSpec::parse("w:x, interact(treatment, w:x)"), t);
    for (int a = 0; a < 2; ++a) {
      double brute = 0.0;
      for (int x = 0; x < 2; ++x) brute += (cnt[x][0] + cnt[x][1]) / 200.0 * ones[x][a] / cnt[x][a];
      CHECK(estimate_counterfactual_mean(fit, d, nullptr, a) == doctest::Approx(brute).epsilon(1e-8));
    }
  }

  TEST_CASE("constant outcome: ratio 1 with zero variance") {
    auto t = testing::make_table(40, 1, 3, [](auto, int, auto&) { return 4.0; });
    const TrialDataset d(t, 0.5);
    const auto fit = fit_glm(FamilyLink::poisson(), DesignSpec{}, t);
    CHECK(estimate_counterfactual_mean(fit, d, nullptr, 0) == doctest::Approx(4.0));
    const auto est = estimate_marginal_effect(FamilyLink::poisson(), DesignSpec{}, EffectMeasure::ratio(), d, nullptr);
    CHECK(est.psi_hat == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(est.variance_vhat <= 1e-20);
  }

  TEST_CASE("influence values: mean zero, difference form, delta-method expansion") {
    const auto d = poisson_trial(400, 4);
    const auto spec = DesignSpec::parse("w:w1, w:w2");
    for (const auto& fl : {FamilyLink::poisson(), FamilyLink::negative_binomial(3.0)}) {
      const auto fit = fit_glm(fl, spec, d.data());
      const auto pred = in_sample_predictions(fit, d, nullptr);
      const double p1 = pred.mu1.mean(), p0 = pred.mu0.mean();
      const auto iv = influence_values(pred, d, EffectMeasure::difference(), p1, p0);
      CHECK(std::abs(iv.phi0.mean()) <= 1e-6);
      CHECK(std::abs(iv.phi1.mean()) <= 1e-6);
      CHECK((iv.values - (iv.phi1 - iv.phi0)).cwiseAbs().maxCoeff() <= 1e-12);

      const auto ratio = EffectMeasure::ratio();
      const auto rv = influence_values(pred, d, ratio, p1, p0);
      const double r1 = 1.0 / p0, r0 = -p1 / (p0 * p0);
      const double expansion = r0 * r0 * rv.phi0.squaredNorm() / 400 + r1 * r1 * rv.phi1.squaredNorm() / 400 +
                               2 * r0 * r1 * rv.phi0.dot(rv.phi1) / 400;
      const auto est = estimate_marginal_effect(fl, spec, ratio, d, nullptr);
      CHECK(std::abs(est.variance_vhat - expansion) <= 1e-10 * expansion);
      CHECK(std::abs(est.variance_vhat - rv.values.squaredNorm() / 400) <= 1e-10 * expansion);
      CHECK(est.psi_hat == doctest::Approx(p1 / p0).epsilon(1e-12));
    }
  }

  TEST_CASE("influence values by hand for a treatment-only model") {
    auto t = testing::make_table(6, 0, 5, [](auto, int a, auto&) { return 0.0 + a; });
    t.y << 1, 3, 2, 5, 3, 7;
    const TrialDataset d(t, 0.5);
    CounterfactualPredictions pred{Eigen::VectorXd::Constant(6, 2.0), Eigen::VectorXd::Constant(6, 5.0)};
    const auto iv = influence_values(pred, d, EffectMeasure::difference(), 5.0, 2.0);
    // Row 0 is control with y=1: phi0 = (1-2)/0.5, phi1 = 0.
    CHECK(iv.phi0[0] == doctest::Approx(-2.0));
    CHECK(iv.phi1[0] == doctest::Approx(0.0));
    CHECK(iv.phi1[3] == doctest::Approx(0.0));
    CHECK(iv.phi1[5] == doctest::Approx(4.0));
    CHECK(iv.phi0.mean() == doctest::Approx(0.0));
    CHECK_THROWS_AS(influence_values(pred, d, EffectMeasure::ratio(), 5.0, 0.0), DomainError);
  }

  TEST_CASE("cross-fit mode") {
    const auto d = poisson_trial(300, 6);
    const auto spec = DesignSpec::parse("w:w1, w:w2");
    VarianceOptions cf;
    cf.crossfit = true;
    cf.folds = 10;
    cf.seed = 77;
    const auto a = estimate_marginal_effect(FamilyLink::poisson(), spec, EffectMeasure::ratio(), d, nullptr, cf);
    const auto b = estimate_marginal_effect(FamilyLink::poisson(), spec, EffectMeasure::ratio(), d, nullptr, cf);
    CHECK(a.psi_hat == b.psi_hat);
    CHECK(a.variance_vhat == b.variance_vhat);
    CHECK(a.crossfit);
    CHECK(a.folds == 10);

    // Pooled out-of-fold predictions, checked against fold-by-fold refits.
    const auto folds = make_folds(d.n(), std::span<const int>(d.data().a.data(), d.n()), 10, 77);
    Eigen::VectorXd mu0(300), mu1(300);
    for (int f = 0; f < 10; ++f) {
      const auto train = d.data().subset(folds.complement(f));
      const auto fit = fit_glm(FamilyLink::poisson(), spec, train);
      for (auto i : folds.members(f)) {
        const Eigen::VectorXd w = d.data().w.row(static_cast<Eigen::Index>(i));
        mu0[static_cast<Eigen::Index>(i)] = predict_mean(fit, w, 0);
        mu1[static_cast<Eigen::Index>(i)] = predict_mean(fit, w, 1);
      }
    }
    CHECK(a.psi_hat == doctest::Approx(mu1.mean() / mu0.mean()).epsilon(1e-10));
    const auto iv = influence_values({mu0, mu1}, d, EffectMeasure::ratio(), mu1.mean(), mu0.mean());
    CHECK(a.variance_vhat == doctest::Approx(iv.values.squaredNorm() / 300).epsilon(1e-10));

    cf.folds = 200;
    CHECK_THROWS_AS(estimate_marginal_effect(FamilyLink::poisson(), spec, EffectMeasure::ratio(), d, nullptr, cf),
                    FoldError);
  }

  TEST_CASE("row permutation leaves plain estimates unchanged") {
    const auto d = poisson_trial(250, 7);
    std::vector<std::size_t> perm(250);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(3));
    const TrialDataset p(d.data().subset(perm), 0.5);
    const auto spec = DesignSpec::parse("w:w1, w:w2");
    const auto fl = FamilyLink::negative_binomial(3.0, Link::log);
    const auto a = estimate_marginal_effect(fl, spec, EffectMeasure::ratio(), d, nullptr);
    const auto b = estimate_marginal_effect(fl, spec, EffectMeasure::ratio(), p, nullptr);
    CHECK(std::abs(a.psi_hat - b.psi_hat) <= 1e-10);
    CHECK(std::abs(a.se - b.se) <= 1e-10);
    CHECK(std::abs(a.p_value - b.p_value) <= 1e-10);
  }

  TEST_CASE("Wald inference") {
    EffectEstimate e;
    e.psi_hat = 1.3;
    e.variance_vhat = 4.0;
    e.n = 100;
    InferenceOptions opt;
    apply_inference(e, 1.0, opt);
    CHECK(e.se == doctest::Approx(0.2));
    CHECK(e.p_value == doctest::Approx(2 * (1 - stats::normal_cdf(1.5))));
    CHECK(e.ci_lo <= e.psi_hat);
    CHECK(e.ci_hi >= e.psi_hat);
    opt.sided = Sidedness::upper;
    apply_inference(e, 1.0, opt);
    CHECK(e.p_value == doctest::Approx(1 - stats::normal_cdf(1.5)));
    opt.sided = Sidedness::lower;
    apply_inference(e, 1.0, opt);
    CHECK(e.p_value == doctest::Approx(stats::normal_cdf(1.5)));
    CHECK(parse_sidedness("none") == Sidedness::two_sided);
  }

  TEST_CASE("null ratio coverage is near nominal") {
    int covered = 0;
    const int reps = 300;
    for (int r = 0; r < reps; ++r) {
      const auto d = poisson_trial(250, 1000 + static_cast<std::uint64_t>(r), 0.0);
      const auto est = estimate_marginal_effect(FamilyLink::negative_binomial(3.0, Link::log),
                                                DesignSpec::parse("w:w1, w:w2"), EffectMeasure::ratio(), d, nullptr);
      covered += est.ci_lo <= 1.0 && 1.0 <= est.ci_hi;
    }
    const double rate = covered / static_cast<double>(reps);
    CHECK(rate >= 0.91);
    CHECK(rate <= 0.98);
  }

  TEST_CASE("oracle pass-through on a generated link-additive sample") {
    // Poisson: generated here, independent of the library's simulator.
    std::mt19937_64 rng(8);
    std::normal_distribution<double> z(0, 1);
    const double zeta = 0.2;
    const std::size_t n = 100000;
    OracleSample s;
    s.data.covariate_names = {"w1", "w2"};
    s.data.w.resize(n, 2);
    s.data.a.resize(n);
    s.data.y.resize(n);
    s.mu0.resize(n);
    s.mu1.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      const auto i = static_cast<Eigen::Index>(k);
      s.data.ids.push_back(std::to_string(k));
      s.data.w(i, 0) = z(rng);
      s.data.w(i, 1) = z(rng);
      s.mu0[i] = std::exp(0.2 + 0.5 * stats::hinge(s.data.w(i, 0)) + 0.2 * s.data.w(i, 0) * s.data.w(i, 1));
      s.mu1[i] = s.mu0[i] * std::exp(zeta);
      s.data.a[i] = static_cast<int>(k % 2);
      s.data.y[i] = std::poisson_distribution<int>(s.data.a[i] ? s.mu1[i] : s.mu0[i])(rng);
    }
    const auto rep = oracle_passthrough_check(FamilyLink::poisson(), zeta, s);
    REQUIRE(rep.coefficients.size() == 5);
    CHECK(rep.all_within(3.0));
    CHECK(std::abs(rep.coefficients[2].estimate - 1.0) <= 0.02);
    CHECK(std::abs(rep.coefficients[3].estimate) <= 0.02);

    auto broken = s;
    broken.mu1 = broken.mu0.array() + 0.5;
    CHECK_THROWS_AS(oracle_passthrough_check(FamilyLink::poisson(), zeta, broken), InvalidCheckError);
  }

  TEST_CASE("oracle pass-through, logistic analog and null effect") {
    const auto logit = simulate_link_additive(FamilyLink::binomial(), 0.3, 60000, 9);
    CHECK(oracle_passthrough_check(FamilyLink::binomial(), 0.3, logit).all_within(3.5));
    const auto null = simulate_link_additive(FamilyLink::poisson(), 0.0, 60000, 10);
    const auto rep = oracle_passthrough_check(FamilyLink::poisson(), 0.0, null);
    CHECK(rep.coefficients[1].within(3.0));
  }

  TEST_CASE("nested variance") {
    auto t = testing::make_table(50000, 2, 11, [](auto w, int a, auto& rng) {
      return 1.0 + 0.5 * a + 1.2 * w(0) + std::normal_distribution<double>(0, 1)(rng);
    });
    const TrialDataset d(t, 0.5);
    const auto small = DesignSpec{};
    const auto predictive = nested_variance_check(small, DesignSpec::parse("w:w1"), d);
    CHECK(predictive.v_big < predictive.v_small);
    const auto base = DesignSpec::parse("w:w1");
    const auto noise = nested_variance_check(base, DesignSpec::parse("w:w1, w:w2"), d);
    CHECK(std::abs(noise.relative_difference()) <= 0.005);
    const auto same = nested_variance_check(base, base, d);
    CHECK(same.difference() == 0.0);
    CHECK_THROWS_AS(nested_variance_check(DesignSpec::parse("w:w2"), base, d), InvalidCheckError);
    CHECK_THROWS_AS(nested_variance_check(small, base, TrialDataset(t, 0.6)), InvalidCheckError);
  }
}
