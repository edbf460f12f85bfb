#include "glmprog/power.hpp"

#include <cmath>
#include <sstream>

#include "glmprog/errors.hpp"
#include "glmprog/stats.hpp"

namespace glmprog {

namespace {

EffectGradient monotone_gradient(const PopulationParams& p, const EffectMeasure& effect) {
  const EffectGradient g = effect.gradient(p.psi1, p.psi0);
  if (g.r1 < 0.0 || g.r0 > 0.0) {
    std::ostringstream os;
    os << "effect '" << effect.name() << "' is not monotone at (psi1=" << p.psi1
       << ", psi0=" << p.psi0 << "): r1'=" << g.r1 << ", r0'=" << g.r0
       << "; the variance bound is undefined";
    throw DomainError(os.str());
  }
  return g;
}

double critical_z(const PowerSpec& spec) {
  return stats::normal_quantile(spec.one_sided ? 1.0 - spec.alpha : 1.0 - spec.alpha / 2.0);
}

}  // namespace

void PopulationParams::validate() const {
  const auto nonneg = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw DomainError(std::string(name) + " must be a finite nonnegative number");
    }
  };
  nonneg(kappa0_sq, "kappa0_sq");
  nonneg(kappa1_sq, "kappa1_sq");
  nonneg(sigma0_sq, "sigma0_sq");
  nonneg(sigma1_sq, "sigma1_sq");
  if (!(pi1 > 0.0 && pi1 < 1.0) || std::abs(pi0 + pi1 - 1.0) > 1e-12) {
    throw DomainError("pi0 and pi1 must be probabilities summing to 1");
  }
  if (!(tau >= -1.0 && tau <= 1.0)) throw DomainError("tau must lie in [-1, 1]");
  if (!(eta_resid >= -1.0 && eta_resid <= 1.0)) throw DomainError("eta must lie in [-1, 1]");
  if (!(inflation_kappa1 >= 1.0) || !(inflation_sigma1 >= 1.0)) {
    throw DomainError("inflation factors must be at least 1");
  }
}

void PowerSpec::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("alpha must lie strictly in (0, 1)");
  if (!(target_power > 0.0 && target_power < 1.0)) {
    throw DomainError("target power must lie strictly in (0, 1)");
  }
  if (!std::isfinite(target_effect) || !std::isfinite(null_value)) {
    throw DomainError("target and null effects must be finite");
  }
}

double glm_cv_mse(const FamilyLink& fl, const DesignSpec& spec, const DataTable& data, int k,
                  std::uint64_t seed) {
  if (spec.uses_prognostic()) {
    throw DomainError("the GLM route to kappa cannot use a prognostic term; use a learner instead");
  }
  const std::vector<int> arms(data.size(), 0);
  const FoldAssignment folds = make_folds(data.size(), arms, k, seed);
  double sse = 0.0;
  for (int f = 0; f < k; ++f) {
    const auto test_rows = folds.members(f);
    const GlmFit fit =
        fit_glm(fl, spec, data.subset(folds.complement(f)), nullptr, {}, /*control_only=*/true);
    const DataTable test = data.subset(test_rows);
    const Eigen::VectorXd mu = counterfactual_means(fit, test, nullptr, 0);
    sse += (test.y - mu).squaredNorm();
  }
  return sse / static_cast<double>(data.size());
}

PopulationParams estimate_population_params(const HistoricalDataset& historical,
                                            const KappaSource& kappa, const PowerSpec& spec,
                                            const PlanningOptions& options) {
  spec.validate();
  const DataTable& d = historical.data();
  if (d.size() == 0) throw DataError("historical dataset is empty");

  PopulationParams p;
  p.pi1 = options.pi1;
  p.pi0 = 1.0 - options.pi1;
  p.inflation_kappa1 = options.inflation_kappa1;
  p.inflation_sigma1 = options.inflation_sigma1;
  p.psi0 = d.y.mean();
  p.sigma0_sq = (d.y.array() - p.psi0).square().mean();
  p.psi1 = solve_psi1(spec.effect, p.psi0, spec.target_effect);
  p.sigma1_sq = options.binary_outcome ? p.psi1 * (1.0 - p.psi1)
                                       : p.sigma0_sq * options.inflation_sigma1;

  std::visit(
      [&](const auto& src) {
        using T = std::decay_t<decltype(src)>;
        if constexpr (std::is_same_v<T, KappaUnadjusted>) {
          p.unadjusted = true;
          p.kappa0_sq = p.sigma0_sq;
        } else if constexpr (std::is_same_v<T, KappaFittedModel>) {
          if (src.model == nullptr) throw DomainError("no prognostic model supplied");
          p.kappa0_sq = (d.y - predict_scores(*src.model, d.w)).squaredNorm() /
                        static_cast<double>(d.size());
        } else if constexpr (std::is_same_v<T, KappaLearnerCv>) {
          p.kappa0_sq = cross_validate(src.learner, d, options.cv_folds, options.seed).mse;
        } else if constexpr (std::is_same_v<T, KappaGlm>) {
          p.kappa0_sq = glm_cv_mse(src.family_link, src.spec, d, options.cv_folds, options.seed);
        } else {
          if (src.predictions.size() != static_cast<Eigen::Index>(d.size())) {
            throw DataError("need one prediction per historical row");
          }
          p.kappa0_sq = (d.y - src.predictions).squaredNorm() / static_cast<double>(d.size());
        }
      },
      kappa);

  if (p.unadjusted) {
    p.kappa1_sq = p.sigma1_sq;
    p.eta_resid = p.tau;
  } else {
    p.kappa1_sq = p.kappa0_sq * options.inflation_kappa1;
  }
  p.validate();
  return p;
}

double reduced_variance(const PopulationParams& p, const EffectMeasure& effect) {
  p.validate();
  const EffectGradient g = monotone_gradient(p, effect);
  const double k0 = std::sqrt(p.kappa0_sq), k1 = std::sqrt(p.kappa1_sq);
  const double s0 = std::sqrt(p.sigma0_sq), s1 = std::sqrt(p.sigma1_sq);
  const double eta = p.unadjusted ? p.tau : p.eta_resid;
  return g.r0 * g.r0 * (p.pi1 / p.pi0 * p.kappa0_sq + p.sigma0_sq) +
         g.r1 * g.r1 * (p.pi0 / p.pi1 * p.kappa1_sq + p.sigma1_sq) -
         2.0 * std::abs(g.r0 * g.r1) * (p.tau * s0 * s1 - eta * k0 * k1);
}

double variance_bound(const PopulationParams& p, const EffectMeasure& effect) {
  p.validate();
  const EffectGradient g = monotone_gradient(p, effect);
  if (p.unadjusted) {
    return g.r0 * g.r0 * p.sigma0_sq / p.pi0 + g.r1 * g.r1 * p.sigma1_sq / p.pi1;
  }
  const double k0 = std::sqrt(p.kappa0_sq), k1 = std::sqrt(p.kappa1_sq);
  const double t = std::abs(g.r0) * k0 / p.pi0 + std::abs(g.r1) * k1 / p.pi1;
  return g.r0 * g.r0 * p.sigma0_sq + g.r1 * g.r1 * p.sigma1_sq + p.pi0 * p.pi1 * t * t;
}

double power_at_n(double v_up_sq, const PowerSpec& spec, double n) {
  spec.validate();
  if (!(v_up_sq > 0.0) || !std::isfinite(v_up_sq)) {
    throw DomainError("power needs a positive finite variance bound");
  }
  if (!(n >= 2.0)) throw DomainError("power needs n >= 2");
  const double s = std::sqrt(v_up_sq / n);
  const double z = critical_z(spec);
  const double delta = spec.null_value;
  const double psi = spec.target_effect;
  if (psi >= delta) {
    return 1.0 - stats::normal_cdf((delta + z * s - psi) / s);
  }
  return stats::normal_cdf((delta - z * s - psi) / s);
}

std::size_t required_sample_size(double v_up_sq, const PowerSpec& spec) {
  spec.validate();
  if (spec.target_effect == spec.null_value) {
    throw NoSolutionError("target effect equals the null value; no sample size reaches the power");
  }
  const auto meets = [&](std::size_t n) {
    return power_at_n(v_up_sq, spec, static_cast<double>(n)) >= spec.target_power;
  };
  std::size_t hi = 2;
  while (!meets(hi)) {
    if (hi > (std::size_t{1} << 50)) {
      throw NoSolutionError("target power is not reached below 2^50 observations");
    }
    hi *= 2;
  }
  if (hi == 2) return 2;
  std::size_t lo = hi / 2;  // fails
  while (hi - lo > 1) {
    const std::size_t mid = lo + (hi - lo) / 2;
    (meets(mid) ? hi : lo) = mid;
  }
  return hi;
}

std::size_t required_sample_size(const PopulationParams& params, const PowerSpec& spec) {
  return required_sample_size(variance_bound(params, spec.effect), spec);
}

}  // namespace glmprog
