#pragma once

// Prospective power and sample size from the conservative variance bound,
// with population parameters estimated on historical control data.

#include <cstdint>
#include <variant>

#include <Eigen/Dense>

#include "glmprog/effect_measures.hpp"
#include "glmprog/glm.hpp"
#include "glmprog/prognostic.hpp"
#include "glmprog/trial_data.hpp"

namespace glmprog {

struct PopulationParams {
  double kappa0_sq = 0.0;
  double kappa1_sq = 0.0;
  double sigma0_sq = 0.0;
  double sigma1_sq = 0.0;
  double psi0 = 0.0;
  double psi1 = 0.0;
  double pi0 = 0.5;
  double pi1 = 0.5;
  double tau = 0.0;        // Cor[Y(0), Y(1)]
  double eta_resid = 1.0;  // correlation of the two residuals Y(a) - mu*(W, a)
  double inflation_kappa1 = 1.0;
  double inflation_sigma1 = 1.0;
  // No covariate adjustment: mu*(W, a) = psi_a, so kappa_a = sigma_a and
  // eta_resid = tau, and the variance is known exactly.
  bool unadjusted = false;

  void validate() const;
};

struct PowerSpec {
  EffectMeasure effect = EffectMeasure::difference();
  double target_effect = 0.0;
  double alpha = 0.05;
  double target_power = 0.8;
  double null_value = 0.0;
  bool one_sided = false;

  void validate() const;
};

// Where kappa0^2 comes from.
struct KappaUnadjusted {};
// Mean squared error of an already trained score on the given (held-out) data.
struct KappaFittedModel {
  const PrognosticModel* model = nullptr;
};
// K-fold cross-validated MSE of a learner.
struct KappaLearnerCv {
  Learner learner;
};
// K-fold cross-validated MSE of the working GLM fit to control-only data.
struct KappaGlm {
  FamilyLink family_link;
  DesignSpec spec;
};
// Predictions of mu(W, 0) supplied by the caller, one per historical row.
struct KappaPredictions {
  Eigen::VectorXd predictions;
};
using KappaSource =
    std::variant<KappaUnadjusted, KappaFittedModel, KappaLearnerCv, KappaGlm, KappaPredictions>;

struct PlanningOptions {
  double pi1 = 0.5;
  int cv_folds = 5;
  std::uint64_t seed = 0;
  double inflation_kappa1 = 1.0;
  double inflation_sigma1 = 1.0;
  bool binary_outcome = false;
};

// Cross-validated MSE on the response scale of a control-only GLM.
double glm_cv_mse(const FamilyLink& fl, const DesignSpec& spec, const DataTable& data, int k,
                  std::uint64_t seed);

PopulationParams estimate_population_params(const HistoricalDataset& historical,
                                            const KappaSource& kappa, const PowerSpec& spec,
                                            const PlanningOptions& options = {});

// Asymptotic variance in reduced form. Diagnostic only.
double reduced_variance(const PopulationParams& params, const EffectMeasure& effect);

// Worst case of the reduced form over tau >= 0 and eta_resid in [-1, 1].
// Equal to the reduced form for unadjusted parameters.
double variance_bound(const PopulationParams& params, const EffectMeasure& effect);

// Power of the Wald test at total sample size n when the estimator has
// variance v_up_sq / n.
double power_at_n(double v_up_sq, const PowerSpec& spec, double n);

// Smallest n whose power reaches spec.target_power.
std::size_t required_sample_size(double v_up_sq, const PowerSpec& spec);
std::size_t required_sample_size(const PopulationParams& params, const PowerSpec& spec);

}  // namespace glmprog
