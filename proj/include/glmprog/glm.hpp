#pragma once

// Generalized linear models with a fixed dispersion: family/link algebra,
// design-matrix construction from term descriptors, and maximum-likelihood
// fitting by iteratively reweighted least squares.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "glmprog/trial_data.hpp"

namespace glmprog {

enum class Family { normal, binomial, poisson, negative_binomial };
enum class Link { identity, logit, log, nb_canonical };

std::string_view to_string(Family f);
std::string_view to_string(Link l);
Family parse_family(std::string_view name);
Link parse_link(std::string_view name);

class FamilyLink {
 public:
  // Allowed pairs: normal/identity, binomial/logit, poisson/log,
  // negative-binomial/nb-canonical and negative-binomial/log. The stopping
  // parameter r is required (and positive) exactly for negative-binomial.
  FamilyLink(Family family, Link link, double dispersion_r = 0.0);

  static FamilyLink normal() { return {Family::normal, Link::identity}; }
  static FamilyLink binomial() { return {Family::binomial, Link::logit}; }
  static FamilyLink poisson() { return {Family::poisson, Link::log}; }
  static FamilyLink negative_binomial(double r, Link link = Link::nb_canonical) {
    return {Family::negative_binomial, link, r};
  }

  Family family() const { return family_; }
  Link link() const { return link_; }
  double dispersion_r() const { return r_; }
  bool canonical() const;
  std::string describe() const;

  double g(double mu) const;
  double g_inv(double eta) const;
  double dmu_deta(double eta) const;
  double variance(double mu) const;

  // Whether g is defined at mu (e.g. mu > 0 for log).
  bool in_link_domain(double mu) const;
  // Whether eta maps to a valid mean (nb-canonical needs eta < 0).
  bool valid_eta(double eta) const;

  // Log-likelihood contribution of one outcome. Binomial means are clipped
  // to [1e-12, 1 - 1e-12] here and nowhere else.
  double loglik(double y, double mu) const;

  // Throws DataError naming the first row whose outcome is outside the
  // family's support.
  void validate_outcome(const Eigen::VectorXd& y) const;

 private:
  Family family_;
  Link link_;
  double r_;
};

// One covariate column of the linear predictor beyond intercept and arm.
struct DesignTerm {
  enum class Kind { covariate, log_covariate, prognostic };
  Kind kind = Kind::covariate;
  std::string covariate;  // empty for prognostic
  bool interact_treatment = false;

  std::string label() const;
  bool operator==(const DesignTerm&) const = default;
};

// Intercept and treatment are always present; `terms` lists the rest.
struct DesignSpec {
  std::vector<DesignTerm> terms;

  // Comma-separated descriptors: `w:<name>`, `prognostic`,
  // `transform(log, w:<name>)`, `interact(treatment, <term>)`. The implicit
  // `intercept` and `treatment` tokens are accepted and ignored.
  static DesignSpec parse(std::string_view termlist);
  std::string to_string() const;

  bool uses_prognostic() const;
  bool has_interactions() const;
  // True when every term of `other` appears here.
  bool contains(const DesignSpec& other) const;
  // Column labels of the matrix build_design produces.
  std::vector<std::string> column_names(bool include_treatment = true) const;
};

struct DesignOptions {
  // Counterfactual design: every row gets this arm (interactions follow).
  std::optional<int> force_arm;
  // Drop the treatment column, for control-only (historical) fits.
  bool control_only = false;
};

// Columns: 1, A, then one per term. The prognostic column is g(score) for
// the link of `fl`; a score outside the link domain throws DomainError, as
// does a nonpositive value under transform(log, .).
Eigen::MatrixXd build_design(const DesignSpec& spec, const FamilyLink& fl, const DataTable& data,
                             const Eigen::VectorXd* scores = nullptr,
                             const DesignOptions& options = {});

struct GlmOptions {
  double tolerance = 1e-8;  // on max |score| / n
  int max_iterations = 100;
  int max_halvings = 20;
  double bound_b = 30.0;
};

struct GlmFit {
  FamilyLink family_link = FamilyLink::normal();
  DesignSpec spec;
  std::vector<std::string> covariate_names;
  bool control_only = false;

  Eigen::VectorXd beta;
  Eigen::MatrixXd covariance;  // inverse Fisher information (times dispersion for normal)
  bool converged = false;
  int iterations = 0;
  double bound_b = 30.0;
  double score_max_norm = 0.0;
  std::vector<double> loglik_trace;

  Eigen::VectorXd standard_errors() const;
};

// Maximum-likelihood fit on a prebuilt design. Throws SingularDesignError,
// DivergenceError or ConvergenceError.
GlmFit fit_glm(const FamilyLink& fl, const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
               const GlmOptions& options = {});

// Builds the design from `spec` and fits it, keeping what prediction needs.
GlmFit fit_glm(const FamilyLink& fl, const DesignSpec& spec, const DataTable& data,
               const Eigen::VectorXd* scores = nullptr, const GlmOptions& options = {},
               bool control_only = false);

Eigen::VectorXd linear_predictor(const GlmFit& fit, const Eigen::MatrixXd& design);
Eigen::VectorXd fitted_means(const GlmFit& fit, const Eigen::MatrixXd& design);

// mu(w, a) for a single covariate row in training column order.
double predict_mean(const GlmFit& fit, const Eigen::VectorXd& w, int a,
                    std::optional<double> score = std::nullopt);

// mu(W_i, a) for every row with the arm forced to `a`.
Eigen::VectorXd counterfactual_means(const GlmFit& fit, const DataTable& data,
                                     const Eigen::VectorXd* scores, int a);

}  // namespace glmprog
