#include "glmprog/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "glmprog/errors.hpp"
#include "glmprog/rng.hpp"
#include "glmprog/stats.hpp"

namespace glmprog {

namespace {

Eigen::VectorXd subset_scores(const Eigen::VectorXd* scores, const std::vector<std::size_t>& rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j) {
    out[static_cast<Eigen::Index>(j)] = (*scores)[static_cast<Eigen::Index>(rows[j])];
  }
  return out;
}

double second_moment(const Eigen::VectorXd& v, bool centered) {
  const double n = static_cast<double>(v.size());
  if (!centered) return v.squaredNorm() / n;
  return (v.array() - v.mean()).square().sum() / (n - 1.0);
}

}  // namespace

Sidedness parse_sidedness(std::string_view name) {
  if (name == "none" || name == "two-sided") return Sidedness::two_sided;
  if (name == "lower") return Sidedness::lower;
  if (name == "upper") return Sidedness::upper;
  throw DomainError("one-sided option must be lower, upper or none, got '" + std::string(name) +
                    "'");
}

double estimate_counterfactual_mean(const GlmFit& fit, const TrialDataset& data,
                                    const Eigen::VectorXd* scores, int a) {
  return counterfactual_means(fit, data.data(), scores, a).mean();
}

CounterfactualPredictions in_sample_predictions(const GlmFit& fit, const TrialDataset& data,
                                                const Eigen::VectorXd* scores) {
  return {counterfactual_means(fit, data.data(), scores, 0),
          counterfactual_means(fit, data.data(), scores, 1)};
}

CounterfactualPredictions crossfit_predictions(const FamilyLink& fl, const DesignSpec& spec,
                                               const TrialDataset& data,
                                               const Eigen::VectorXd* scores,
                                               const FoldAssignment& folds,
                                               const GlmOptions& glm) {
  const auto n = static_cast<Eigen::Index>(data.n());
  CounterfactualPredictions out{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
  for (int f = 0; f < folds.k; ++f) {
    const auto train_rows = folds.complement(f);
    const auto test_rows = folds.members(f);
    try {
      const DataTable train = data.data().subset(train_rows);
      const DataTable test = data.data().subset(test_rows);
      Eigen::VectorXd s_train, s_test;
      if (scores != nullptr) {
        s_train = subset_scores(scores, train_rows);
        s_test = subset_scores(scores, test_rows);
      }
      const GlmFit fit =
          fit_glm(fl, spec, train, scores ? &s_train : nullptr, glm, /*control_only=*/false);
      const Eigen::VectorXd m0 = counterfactual_means(fit, test, scores ? &s_test : nullptr, 0);
      const Eigen::VectorXd m1 = counterfactual_means(fit, test, scores ? &s_test : nullptr, 1);
      for (std::size_t j = 0; j < test_rows.size(); ++j) {
        const auto i = static_cast<Eigen::Index>(test_rows[j]);
        out.mu0[i] = m0[static_cast<Eigen::Index>(j)];
        out.mu1[i] = m1[static_cast<Eigen::Index>(j)];
      }
    } catch (const Error& e) {
      throw FoldError("fold " + std::to_string(f + 1) + " of " + std::to_string(folds.k) + ": " +
                      e.what());
    }
  }
  return out;
}

InfluenceVector influence_values(const CounterfactualPredictions& pred, const TrialDataset& data,
                                 const EffectMeasure& effect, double psi1, double psi0) {
  const auto n = static_cast<Eigen::Index>(data.n());
  if (pred.mu0.size() != n || pred.mu1.size() != n) {
    throw DataError("counterfactual predictions do not match the dataset size");
  }
  const EffectGradient grad = effect.gradient(psi1, psi0);
  const auto& d = data.data();
  InfluenceVector iv{Eigen::VectorXd(n), Eigen::VectorXd(n), Eigen::VectorXd(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const double y = d.y[i];
    const int a = d.a[i];
    iv.phi0[i] = (a == 0 ? (y - pred.mu0[i]) / data.pi0() : 0.0) + pred.mu0[i] - psi0;
    iv.phi1[i] = (a == 1 ? (y - pred.mu1[i]) / data.pi1() : 0.0) + pred.mu1[i] - psi1;
    iv.values[i] = grad.r0 * iv.phi0[i] + grad.r1 * iv.phi1[i];
  }
  return iv;
}

void apply_inference(EffectEstimate& est, double null_value, const InferenceOptions& inference) {
  if (!(inference.alpha > 0.0 && inference.alpha < 1.0)) {
    throw DomainError("alpha must lie strictly between 0 and 1");
  }
  est.se = std::sqrt(est.variance_vhat / static_cast<double>(est.n));
  const double z = stats::normal_quantile(1.0 - inference.alpha / 2.0);
  est.ci_lo = est.psi_hat - z * est.se;
  est.ci_hi = est.psi_hat + z * est.se;
  const double diff = est.psi_hat - null_value;
  double t = 0.0;
  if (est.se > 0.0) {
    t = diff / est.se;
  } else if (diff != 0.0) {
    t = diff > 0.0 ? std::numeric_limits<double>::infinity()
                   : -std::numeric_limits<double>::infinity();
  }
  switch (inference.sided) {
    case Sidedness::two_sided: est.p_value = std::erfc(std::abs(t) / std::sqrt(2.0)); break;
    case Sidedness::upper: est.p_value = 1.0 - stats::normal_cdf(t); break;
    case Sidedness::lower: est.p_value = stats::normal_cdf(t); break;
  }
  est.p_value = std::clamp(est.p_value, 0.0, 1.0);
}

EffectEstimate estimate_marginal_effect(const FamilyLink& fl, const DesignSpec& spec,
                                        const EffectMeasure& effect, const TrialDataset& data,
                                        const Eigen::VectorXd* scores,
                                        const VarianceOptions& variance,
                                        const InferenceOptions& inference, const GlmOptions& glm) {
  data.require_both_arms();
  CounterfactualPredictions pred;
  if (variance.crossfit) {
    const auto& a = data.data().a;
    const std::vector<int> arms(a.data(), a.data() + a.size());
    const FoldAssignment folds = make_folds(data.n(), arms, variance.folds, variance.seed);
    pred = crossfit_predictions(fl, spec, data, scores, folds, glm);
  } else {
    const GlmFit fit = fit_glm(fl, spec, data.data(), scores, glm);
    pred = in_sample_predictions(fit, data, scores);
  }

  EffectEstimate est;
  est.effect = effect.name();
  est.n = data.n();
  est.psi0_hat = pred.mu0.mean();
  est.psi1_hat = pred.mu1.mean();
  est.psi_hat = effect.evaluate(est.psi1_hat, est.psi0_hat);
  const InfluenceVector iv = influence_values(pred, data, effect, est.psi1_hat, est.psi0_hat);
  est.variance_vhat = second_moment(iv.values, variance.centered);
  est.crossfit = variance.crossfit;
  if (variance.crossfit) est.folds = variance.folds;
  apply_inference(est, inference.null_value.value_or(effect.null_value()), inference);
  return est;
}

OracleSample simulate_link_additive(const FamilyLink& fl, double zeta, std::size_t n,
                                    std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  const auto rows = static_cast<Eigen::Index>(n);
  OracleSample s;
  s.data.covariate_names = {"w1", "w2", "w3"};
  s.data.w.resize(rows, 3);
  s.data.a.resize(rows);
  s.data.y.resize(rows);
  s.data.ids.resize(n);
  s.mu0.resize(rows);
  s.mu1.resize(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    s.data.ids[static_cast<std::size_t>(i)] = std::to_string(i + 1);
    for (int j = 0; j < 3; ++j) s.data.w(i, j) = normal(rng);
    const double w1 = s.data.w(i, 0), w2 = s.data.w(i, 1), w3 = s.data.w(i, 2);
    const double base = 0.3 + 0.4 * stats::hinge(w1) + 0.3 * w2 * w3 - 0.15 * w3 * w3;
    double mu0 = 0.0;
    switch (fl.link()) {
      case Link::identity: mu0 = 1.0 + base; break;
      case Link::logit: mu0 = 1.0 / (1.0 + std::exp(0.5 - base)); break;
      case Link::log:
      case Link::nb_canonical: mu0 = std::exp(base); break;
    }
    const double eta1 = fl.g(mu0) + zeta;
    if (!fl.valid_eta(eta1)) {
      throw DomainError("zeta = " + std::to_string(zeta) + " leaves the " + fl.describe() +
                        " mean domain");
    }
    s.mu0[i] = mu0;
    s.mu1[i] = fl.g_inv(eta1);
    const int a = coin(rng) ? 1 : 0;
    s.data.a[i] = a;
    const double mu = a == 1 ? s.mu1[i] : s.mu0[i];
    switch (fl.family()) {
      case Family::normal: s.data.y[i] = mu + normal(rng); break;
      case Family::binomial: s.data.y[i] = std::bernoulli_distribution(mu)(rng) ? 1.0 : 0.0; break;
      case Family::poisson:
        s.data.y[i] = static_cast<double>(std::poisson_distribution<long long>(mu)(rng));
        break;
      case Family::negative_binomial: {
        const double r = fl.dispersion_r();
        const double lambda = std::gamma_distribution<double>(r, mu / r)(rng);
        s.data.y[i] = lambda > 0.0
                          ? static_cast<double>(std::poisson_distribution<long long>(lambda)(rng))
                          : 0.0;
        break;
      }
    }
  }
  return s;
}

bool PassthroughReport::all_within(double k) const {
  for (const auto& c : coefficients) {
    if (!c.within(k)) return false;
  }
  return true;
}

PassthroughReport oracle_passthrough_check(const FamilyLink& fl, double zeta,
                                           const OracleSample& sample) {
  const auto n = static_cast<Eigen::Index>(sample.data.size());
  if (sample.mu0.size() != n || sample.mu1.size() != n) {
    throw InvalidCheckError("oracle means do not match the sample size");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const double gap = fl.g(sample.mu1[i]) - fl.g(sample.mu0[i]) - zeta;
    if (!(std::abs(gap) <= 1e-8 * (1.0 + std::abs(zeta)))) {
      throw InvalidCheckError("generator is not additive on the " +
                              std::string(to_string(fl.link())) + " scale (row " +
                              std::to_string(i + 1) + " differs from zeta by " +
                              std::to_string(gap) + ")");
    }
  }
  const auto p = static_cast<Eigen::Index>(sample.data.num_covariates());
  Eigen::MatrixXd x(n, 3 + p);
  x.col(0).setOnes();
  x.col(1) = sample.data.a.cast<double>();
  for (Eigen::Index i = 0; i < n; ++i) x(i, 2) = fl.g(sample.mu0[i]);
  x.rightCols(p) = sample.data.w;

  const GlmFit fit = fit_glm(fl, x, sample.data.y);
  const Eigen::VectorXd se = fit.standard_errors();
  PassthroughReport report;
  report.coefficients.push_back({"intercept", fit.beta[0], se[0], 0.0});
  report.coefficients.push_back({"treatment", fit.beta[1], se[1], zeta});
  report.coefficients.push_back({"g(mu0)", fit.beta[2], se[2], 1.0});
  for (Eigen::Index j = 0; j < p; ++j) {
    report.coefficients.push_back(
        {sample.data.covariate_names[static_cast<std::size_t>(j)], fit.beta[3 + j], se[3 + j], 0.0});
  }
  return report;
}

NestedVarianceReport nested_variance_check(const DesignSpec& small, const DesignSpec& big,
                                           const TrialDataset& data) {
  if (!big.contains(small)) {
    throw InvalidCheckError("the larger design does not contain every term of the smaller one");
  }
  if (std::abs(data.pi1() - 0.5) > 1e-12) {
    throw InvalidCheckError("the nested-variance ordering is checked under 1:1 randomization only");
  }
  const FamilyLink fl = FamilyLink::normal();
  const EffectMeasure diff = EffectMeasure::difference();
  NestedVarianceReport r;
  r.v_small = estimate_marginal_effect(fl, small, diff, data, nullptr).variance_vhat;
  r.v_big = estimate_marginal_effect(fl, big, diff, data, nullptr).variance_vhat;
  return r;
}

}  // namespace glmprog
