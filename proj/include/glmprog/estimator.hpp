#pragma once

// GLM plug-in estimation of marginal effects: counterfactual means,
// influence-function variance (plain or cross-fit), Wald inference, and two
// diagnostic checks on the working model.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "glmprog/effect_measures.hpp"
#include "glmprog/glm.hpp"
#include "glmprog/trial_data.hpp"

namespace glmprog {

enum class Sidedness { two_sided, lower, upper };

Sidedness parse_sidedness(std::string_view name);  // "none", "lower", "upper"

struct VarianceOptions {
  bool crossfit = false;
  int folds = 10;
  std::uint64_t seed = 0;
  // Centered sample variance of the IF instead of its raw second moment.
  bool centered = false;
};

struct InferenceOptions {
  double alpha = 0.05;
  std::optional<double> null_value;  // defaults to the effect's null value
  // lower: alternative psi < null; upper: alternative psi > null.
  Sidedness sided = Sidedness::two_sided;
};

struct EffectEstimate {
  std::string effect;
  double psi_hat = 0.0;
  double psi1_hat = 0.0;
  double psi0_hat = 0.0;
  double variance_vhat = 0.0;  // per-observation scale
  std::size_t n = 0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double p_value = 1.0;
  bool crossfit = false;
  std::optional<int> folds;
};

// mu(W_i, 0) and mu(W_i, 1) for every trial row.
struct CounterfactualPredictions {
  Eigen::VectorXd mu0;
  Eigen::VectorXd mu1;
};

struct InfluenceVector {
  Eigen::VectorXd values;
  Eigen::VectorXd phi0;
  Eigen::VectorXd phi1;
};

double estimate_counterfactual_mean(const GlmFit& fit, const TrialDataset& data,
                                    const Eigen::VectorXd* scores, int a);

CounterfactualPredictions in_sample_predictions(const GlmFit& fit, const TrialDataset& data,
                                                const Eigen::VectorXd* scores);

// Out-of-fold predictions: the model for fold f is fit on the other folds.
// A failing fold is reported as FoldError naming it.
CounterfactualPredictions crossfit_predictions(const FamilyLink& fl, const DesignSpec& spec,
                                               const TrialDataset& data,
                                               const Eigen::VectorXd* scores,
                                               const FoldAssignment& folds,
                                               const GlmOptions& glm = {});

InfluenceVector influence_values(const CounterfactualPredictions& pred, const TrialDataset& data,
                                 const EffectMeasure& effect, double psi1, double psi0);

EffectEstimate estimate_marginal_effect(const FamilyLink& fl, const DesignSpec& spec,
                                        const EffectMeasure& effect, const TrialDataset& data,
                                        const Eigen::VectorXd* scores,
                                        const VarianceOptions& variance = {},
                                        const InferenceOptions& inference = {},
                                        const GlmOptions& glm = {});

// Wald interval and p-value from a point estimate and its variance.
void apply_inference(EffectEstimate& est, double null_value, const InferenceOptions& inference);

// Synthetic trial whose treatment effect is additive on the link scale:
// g(mu(W,1)) - g(mu(W,0)) = zeta.
struct OracleSample {
  DataTable data;
  Eigen::VectorXd mu0;
  Eigen::VectorXd mu1;
};

OracleSample simulate_link_additive(const FamilyLink& fl, double zeta, std::size_t n,
                                    std::uint64_t seed);

struct CoefficientCheck {
  std::string name;
  double estimate = 0.0;
  double se = 0.0;
  double target = 0.0;
  double z() const { return se > 0.0 ? (estimate - target) / se : 0.0; }
  bool within(double k) const { return std::abs(estimate - target) <= k * se; }
};

struct PassthroughReport {
  std::vector<CoefficientCheck> coefficients;  // intercept, treatment, g(mu0), W...
  bool all_within(double k = 3.0) const;
};

// Fits columns (1, A, g(mu0), W) and compares with (0, zeta, 1, 0, ...).
// Refuses (InvalidCheckError) a sample that is not link-additive.
PassthroughReport oracle_passthrough_check(const FamilyLink& fl, double zeta,
                                           const OracleSample& sample);

struct NestedVarianceReport {
  double v_small = 0.0;
  double v_big = 0.0;
  double difference() const { return v_big - v_small; }
  double relative_difference() const { return v_small > 0.0 ? (v_big - v_small) / v_small : 0.0; }
};

// Least-squares difference estimator under both designs, plain variance.
// Needs big to contain small and 1:1 randomization.
NestedVarianceReport nested_variance_check(const DesignSpec& small, const DesignSpec& big,
                                           const TrialDataset& data);

}  // namespace glmprog
