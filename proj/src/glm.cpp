#include "glmprog/glm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "glmprog/errors.hpp"

namespace glmprog {

namespace {

constexpr double kBinomialClip = 1e-12;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

// Splits on commas that are not nested inside parentheses.
std::vector<std::string> split_top_level(std::string_view s) {
  std::vector<std::string> parts;
  int depth = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '(') ++depth;
    if (s[i] == ')') --depth;
    if (depth < 0) throw DomainError("unbalanced ')' in design '" + std::string(s) + "'");
    if (s[i] == ',' && depth == 0) {
      parts.push_back(trim(s.substr(start, i - start)));
      start = i + 1;
    }
  }
  if (depth != 0) throw DomainError("unbalanced '(' in design '" + std::string(s) + "'");
  parts.push_back(trim(s.substr(start)));
  return parts;
}

// Parses `name(arg, arg)` into its argument list, or nullopt if `token`
// is not a call of `name`.
std::optional<std::vector<std::string>> call_args(const std::string& token,
                                                  std::string_view name) {
  if (token.size() < name.size() + 2 || token.compare(0, name.size(), name) != 0) {
    return std::nullopt;
  }
  const std::string rest = trim(std::string_view(token).substr(name.size()));
  if (rest.empty() || rest.front() != '(' || rest.back() != ')') return std::nullopt;
  return split_top_level(std::string_view(rest).substr(1, rest.size() - 2));
}

DesignTerm parse_term(const std::string& token) {
  if (token == "prognostic") return {DesignTerm::Kind::prognostic, "", false};
  if (token.rfind("w:", 0) == 0) {
    const std::string name = trim(std::string_view(token).substr(2));
    if (name.empty()) throw DomainError("empty covariate name in term '" + token + "'");
    return {DesignTerm::Kind::covariate, name, false};
  }
  if (auto args = call_args(token, "transform")) {
    if (args->size() != 2 || (*args)[0] != "log") {
      throw DomainError("unsupported transform '" + token + "' (only transform(log, w:<name>))");
    }
    DesignTerm inner = parse_term((*args)[1]);
    if (inner.kind != DesignTerm::Kind::covariate) {
      throw DomainError("transform(log, .) takes a covariate term, got '" + (*args)[1] + "'");
    }
    inner.kind = DesignTerm::Kind::log_covariate;
    return inner;
  }
  if (auto args = call_args(token, "interact")) {
    if (args->size() != 2 || (*args)[0] != "treatment") {
      throw DomainError("interaction '" + token + "' must be interact(treatment, <term>)");
    }
    DesignTerm inner = parse_term((*args)[1]);
    if (inner.interact_treatment) throw DomainError("nested interaction in '" + token + "'");
    inner.interact_treatment = true;
    return inner;
  }
  throw DomainError("unknown design term '" + token + "'");
}

std::size_t covariate_index(const DataTable& data, const std::string& name) {
  const auto it = std::find(data.covariate_names.begin(), data.covariate_names.end(), name);
  if (it == data.covariate_names.end()) {
    throw DataError("design refers to unknown covariate '" + name + "'");
  }
  return static_cast<std::size_t>(it - data.covariate_names.begin());
}

double log_likelihood(const FamilyLink& fl, const Eigen::VectorXd& y, const Eigen::VectorXd& eta) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (!fl.valid_eta(eta[i])) return -std::numeric_limits<double>::infinity();
    total += fl.loglik(y[i], fl.g_inv(eta[i]));
  }
  return std::isfinite(total) ? total : -std::numeric_limits<double>::infinity();
}

// Score vector X'[(y - mu) / V(mu) * dmu/deta].
Eigen::VectorXd score_vector(const FamilyLink& fl, const Eigen::MatrixXd& X,
                             const Eigen::VectorXd& y, const Eigen::VectorXd& eta) {
  Eigen::VectorXd u(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double mu = fl.g_inv(eta[i]);
    const double v = fl.variance(mu);
    u[i] = v > 0.0 ? (y[i] - mu) / v * fl.dmu_deta(eta[i]) : 0.0;
  }
  return X.transpose() * u;
}

Eigen::VectorXd working_weights(const FamilyLink& fl, const Eigen::VectorXd& eta) {
  Eigen::VectorXd w(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double d = fl.dmu_deta(eta[i]);
    const double v = fl.variance(fl.g_inv(eta[i]));
    w[i] = v > 0.0 ? d * d / v : 0.0;
  }
  return w;
}

// Newton weights: observed information on the eta scale. Equal to the
// expected information for canonical links; for negative-binomial/log it is
// (y + r) r mu / (r + mu)^2, which stays positive.
Eigen::VectorXd newton_weights(const FamilyLink& fl, const Eigen::VectorXd& y,
                               const Eigen::VectorXd& eta) {
  if (fl.canonical()) return working_weights(fl, eta);
  const double r = fl.dispersion_r();
  Eigen::VectorXd w(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double mu = fl.g_inv(eta[i]);
    w[i] = (y[i] + r) * r * mu / ((r + mu) * (r + mu));
  }
  return w;
}

Eigen::VectorXd weighted_ls(const Eigen::MatrixXd& X, const Eigen::VectorXd& w,
                            const Eigen::VectorXd& z) {
  const Eigen::VectorXd sw = w.cwiseSqrt();
  const Eigen::MatrixXd Xw = sw.asDiagonal() * X;
  return Xw.colPivHouseholderQr().solve(sw.cwiseProduct(z));
}

}  // namespace

std::string_view to_string(Family f) {
  switch (f) {
    case Family::normal: return "normal";
    case Family::binomial: return "binomial";
    case Family::poisson: return "poisson";
    case Family::negative_binomial: return "negative-binomial";
  }
  return "?";
}

std::string_view to_string(Link l) {
  switch (l) {
    case Link::identity: return "identity";
    case Link::logit: return "logit";
    case Link::log: return "log";
    case Link::nb_canonical: return "nb-canonical";
  }
  return "?";
}

Family parse_family(std::string_view name) {
  for (Family f : {Family::normal, Family::binomial, Family::poisson, Family::negative_binomial}) {
    if (to_string(f) == name) return f;
  }
  throw DomainError("unknown family '" + std::string(name) + "'");
}

Link parse_link(std::string_view name) {
  for (Link l : {Link::identity, Link::logit, Link::log, Link::nb_canonical}) {
    if (to_string(l) == name) return l;
  }
  throw DomainError("unknown link '" + std::string(name) + "'");
}

FamilyLink::FamilyLink(Family family, Link link, double dispersion_r)
    : family_(family), link_(link), r_(dispersion_r) {
  const bool ok = (family == Family::normal && link == Link::identity) ||
                  (family == Family::binomial && link == Link::logit) ||
                  (family == Family::poisson && link == Link::log) ||
                  (family == Family::negative_binomial &&
                   (link == Link::nb_canonical || link == Link::log));
  if (!ok) {
    throw DomainError("unsupported family/link pair " + std::string(to_string(family)) + "/" +
                      std::string(to_string(link)));
  }
  if (family == Family::negative_binomial) {
    if (!(r_ > 0.0) || !std::isfinite(r_)) {
      throw DomainError("negative-binomial needs a positive dispersion r");
    }
  } else if (r_ != 0.0) {
    throw DomainError("dispersion r applies only to the negative-binomial family");
  }
}

bool FamilyLink::canonical() const { return link_ != Link::log || family_ == Family::poisson; }

std::string FamilyLink::describe() const {
  std::string s = std::string(to_string(family_)) + "/" + std::string(to_string(link_));
  if (family_ == Family::negative_binomial) {
    std::ostringstream os;
    os << " (r=" << r_ << ")";
    s += os.str();
  }
  return s;
}

double FamilyLink::g(double mu) const {
  switch (link_) {
    case Link::identity: return mu;
    case Link::logit: return std::log(mu / (1.0 - mu));
    case Link::log: return std::log(mu);
    case Link::nb_canonical: return std::log(mu / (r_ + mu));
  }
  return std::nan("");
}

double FamilyLink::g_inv(double eta) const {
  switch (link_) {
    case Link::identity: return eta;
    case Link::logit: return 1.0 / (1.0 + std::exp(-eta));
    case Link::log: return std::exp(eta);
    case Link::nb_canonical: {
      const double e = std::exp(eta);
      return r_ * e / (1.0 - e);
    }
  }
  return std::nan("");
}

double FamilyLink::dmu_deta(double eta) const {
  switch (link_) {
    case Link::identity: return 1.0;
    case Link::logit: {
      const double p = g_inv(eta);
      return p * (1.0 - p);
    }
    case Link::log: return std::exp(eta);
    case Link::nb_canonical: {
      // mu = r e / (1 - e), dmu/deta = r e / (1 - e)^2 = mu (1 + mu / r).
      const double mu = g_inv(eta);
      return mu * (1.0 + mu / r_);
    }
  }
  return std::nan("");
}

double FamilyLink::variance(double mu) const {
  switch (family_) {
    case Family::normal: return 1.0;
    case Family::binomial: return mu * (1.0 - mu);
    case Family::poisson: return mu;
    case Family::negative_binomial: return mu + mu * mu / r_;
  }
  return std::nan("");
}

bool FamilyLink::in_link_domain(double mu) const {
  if (!std::isfinite(mu)) return false;
  switch (link_) {
    case Link::identity: return true;
    case Link::logit: return mu > 0.0 && mu < 1.0;
    case Link::log:
    case Link::nb_canonical: return mu > 0.0;
  }
  return false;
}

bool FamilyLink::valid_eta(double eta) const {
  if (!std::isfinite(eta)) return false;
  return link_ != Link::nb_canonical || eta < 0.0;
}

double FamilyLink::loglik(double y, double mu) const {
  switch (family_) {
    case Family::normal: return -0.5 * (y - mu) * (y - mu);
    case Family::binomial: {
      const double p = std::clamp(mu, kBinomialClip, 1.0 - kBinomialClip);
      return y * std::log(p) + (1.0 - y) * std::log1p(-p);
    }
    case Family::poisson:
      return (y > 0.0 ? y * std::log(mu) : 0.0) - mu - std::lgamma(y + 1.0);
    case Family::negative_binomial:
      return std::lgamma(y + r_) - std::lgamma(r_) - std::lgamma(y + 1.0) +
             r_ * std::log(r_ / (r_ + mu)) + (y > 0.0 ? y * std::log(mu / (r_ + mu)) : 0.0);
  }
  return std::nan("");
}

void FamilyLink::validate_outcome(const Eigen::VectorXd& y) const {
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double v = y[i];
    bool ok = std::isfinite(v);
    if (ok && family_ == Family::binomial) ok = v == 0.0 || v == 1.0;
    if (ok && (family_ == Family::poisson || family_ == Family::negative_binomial)) {
      ok = v >= 0.0 && v == std::floor(v);
    }
    if (!ok) {
      std::ostringstream os;
      os << "row " << i + 1 << ": outcome " << v << " is outside the support of the "
         << to_string(family_) << " family";
      throw DataError(os.str());
    }
  }
}

std::string DesignTerm::label() const {
  std::string base;
  switch (kind) {
    case Kind::covariate: base = "w:" + covariate; break;
    case Kind::log_covariate: base = "transform(log, w:" + covariate + ")"; break;
    case Kind::prognostic: base = "prognostic"; break;
  }
  return interact_treatment ? "interact(treatment, " + base + ")" : base;
}

DesignSpec DesignSpec::parse(std::string_view termlist) {
  DesignSpec spec;
  if (trim(termlist).empty()) return spec;
  for (const auto& token : split_top_level(termlist)) {
    if (token.empty()) throw DomainError("empty term in design '" + std::string(termlist) + "'");
    if (token == "intercept" || token == "treatment") continue;
    DesignTerm term = parse_term(token);
    if (std::find(spec.terms.begin(), spec.terms.end(), term) != spec.terms.end()) {
      throw DomainError("duplicate design term '" + term.label() + "'");
    }
    spec.terms.push_back(std::move(term));
  }
  return spec;
}

std::string DesignSpec::to_string() const {
  std::string s;
  for (const auto& t : terms) {
    if (!s.empty()) s += ",";
    s += t.label();
  }
  return s;
}

bool DesignSpec::uses_prognostic() const {
  return std::any_of(terms.begin(), terms.end(),
                     [](const DesignTerm& t) { return t.kind == DesignTerm::Kind::prognostic; });
}

bool DesignSpec::has_interactions() const {
  return std::any_of(terms.begin(), terms.end(),
                     [](const DesignTerm& t) { return t.interact_treatment; });
}

bool DesignSpec::contains(const DesignSpec& other) const {
  return std::all_of(other.terms.begin(), other.terms.end(), [&](const DesignTerm& t) {
    return std::find(terms.begin(), terms.end(), t) != terms.end();
  });
}

std::vector<std::string> DesignSpec::column_names(bool include_treatment) const {
  std::vector<std::string> names{"intercept"};
  if (include_treatment) names.push_back("treatment");
  for (const auto& t : terms) names.push_back(t.label());
  return names;
}

Eigen::MatrixXd build_design(const DesignSpec& spec, const FamilyLink& fl, const DataTable& data,
                             const Eigen::VectorXd* scores, const DesignOptions& options) {
  const auto n = static_cast<Eigen::Index>(data.size());
  if (spec.uses_prognostic() != (scores != nullptr)) {
    throw DomainError(spec.uses_prognostic()
                          ? "design has a prognostic term but no scores were supplied"
                          : "scores supplied to a design without a prognostic term");
  }
  if (scores != nullptr && scores->size() != n) {
    throw DataError("score vector has " + std::to_string(scores->size()) + " entries for " +
                    std::to_string(n) + " rows");
  }
  if (options.control_only && spec.has_interactions()) {
    throw DomainError("treatment interactions are undefined for a control-only design");
  }
  if (options.force_arm && *options.force_arm != 0 && *options.force_arm != 1) {
    throw DomainError("forced arm must be 0 or 1");
  }

  const Eigen::Index lead = options.control_only ? 1 : 2;
  Eigen::MatrixXd X(n, lead + static_cast<Eigen::Index>(spec.terms.size()));
  Eigen::VectorXd arm(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    arm[i] = options.force_arm ? *options.force_arm : data.a[i];
  }
  X.col(0).setOnes();
  if (!options.control_only) X.col(1) = arm;

  for (std::size_t j = 0; j < spec.terms.size(); ++j) {
    const auto& term = spec.terms[j];
    auto col = X.col(lead + static_cast<Eigen::Index>(j));
    switch (term.kind) {
      case DesignTerm::Kind::covariate:
        col = data.w.col(static_cast<Eigen::Index>(covariate_index(data, term.covariate)));
        break;
      case DesignTerm::Kind::log_covariate: {
        const auto c = static_cast<Eigen::Index>(covariate_index(data, term.covariate));
        for (Eigen::Index i = 0; i < n; ++i) {
          const double v = data.w(i, c);
          if (!(v > 0.0)) {
            throw DomainError("row " + std::to_string(i + 1) + ": log of nonpositive " +
                              term.covariate + " = " + std::to_string(v));
          }
          col[i] = std::log(v);
        }
        break;
      }
      case DesignTerm::Kind::prognostic:
        for (Eigen::Index i = 0; i < n; ++i) {
          const double s = (*scores)[i];
          if (!fl.in_link_domain(s)) {
            throw DomainError("row " + std::to_string(i + 1) + ": prognostic score " +
                              std::to_string(s) + " is outside the domain of the " +
                              std::string(to_string(fl.link())) + " link");
          }
          col[i] = fl.g(s);
        }
        break;
    }
    if (term.interact_treatment) col = col.cwiseProduct(arm);
  }
  return X;
}

Eigen::VectorXd GlmFit::standard_errors() const { return covariance.diagonal().cwiseSqrt(); }

GlmFit fit_glm(const FamilyLink& fl, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
               const GlmOptions& options) {
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  if (y.size() != n) throw DataError("design has " + std::to_string(n) + " rows but y has " +
                                     std::to_string(y.size()));
  if (n == 0) throw DataError("cannot fit a GLM to zero rows");
  fl.validate_outcome(y);

  {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    if (qr.rank() < p) {
      throw SingularDesignError("design matrix has rank " + std::to_string(qr.rank()) + " < " +
                                std::to_string(p) + " columns");
    }
  }

  GlmFit fit;
  fit.family_link = fl;
  fit.bound_b = options.bound_b;

  // Start from the constant fit g(ybar) projected onto the column space;
  // with an intercept column that is beta = (g(ybar), 0, ..., 0).
  double ybar = y.mean();
  switch (fl.family()) {
    case Family::binomial: ybar = std::clamp(ybar, 1e-3, 1.0 - 1e-3); break;
    case Family::poisson:
    case Family::negative_binomial: ybar = std::max(ybar, 1e-3); break;
    case Family::normal: break;
  }
  Eigen::VectorXd beta =
      X.colPivHouseholderQr().solve(Eigen::VectorXd::Constant(n, fl.g(ybar)));
  Eigen::VectorXd eta = X * beta;
  double ll = log_likelihood(fl, y, eta);
  if (!std::isfinite(ll)) throw ConvergenceError("starting values give an invalid likelihood");
  fit.loglik_trace.push_back(ll);

  const double tol = options.tolerance * static_cast<double>(n);
  const auto check_bound = [&](const Eigen::VectorXd& b) {
    for (Eigen::Index j = 0; j < b.size(); ++j) {
      if (!(std::abs(b[j]) <= options.bound_b)) {
        std::ostringstream os;
        os << "coefficient " << j << " reached " << b[j] << ", outside the box |beta_j| <= b = "
           << options.bound_b << " required of the working model";
        throw DivergenceError(os.str());
      }
    }
  };

  double score_norm = score_vector(fl, X, y, eta).cwiseAbs().maxCoeff();
  int iter = 0;
  while (score_norm > tol && iter < options.max_iterations) {
    ++iter;
    const Eigen::VectorXd w = newton_weights(fl, y, eta);
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mu = fl.g_inv(eta[i]);
      const double u = (y[i] - mu) / fl.variance(mu) * fl.dmu_deta(eta[i]);
      z[i] = eta[i] + (w[i] > 0.0 ? u / w[i] : 0.0);
    }
    const Eigen::VectorXd target = weighted_ls(X, w, z);
    const Eigen::VectorXd step = target - beta;

    double scale = 1.0;
    Eigen::VectorXd cand = target;
    Eigen::VectorXd cand_eta = X * cand;
    double cand_ll = log_likelihood(fl, y, cand_eta);
    // Rounding slack so that a step landing on the optimum is not rejected.
    const double slack = 1e-12 * (1.0 + std::abs(ll));
    int halvings = 0;
    while (!(cand_ll >= ll - slack) && halvings < options.max_halvings) {
      scale *= 0.5;
      ++halvings;
      cand = beta + scale * step;
      cand_eta = X * cand;
      cand_ll = log_likelihood(fl, y, cand_eta);
    }
    if (!(cand_ll >= ll - slack)) break;  // no ascent direction left; judged by the score below
    beta = cand;
    eta = cand_eta;
    ll = cand_ll;
    fit.loglik_trace.push_back(ll);
    check_bound(beta);
    score_norm = score_vector(fl, X, y, eta).cwiseAbs().maxCoeff();
  }

  fit.beta = beta;
  fit.iterations = iter;
  fit.score_max_norm = score_norm;
  fit.converged = score_norm <= tol;
  if (!fit.converged) {
    std::ostringstream os;
    os << "IRLS stopped after " << iter << " iterations with max |score| = " << score_norm
       << " > " << tol;
    throw ConvergenceError(os.str());
  }
  check_bound(beta);

  const Eigen::VectorXd w = working_weights(fl, eta);
  const Eigen::MatrixXd info = X.transpose() * w.asDiagonal() * X;
  fit.covariance = info.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  if (fl.family() == Family::normal) {
    const Eigen::VectorXd resid = y - eta;
    const double df = static_cast<double>(std::max<Eigen::Index>(n - p, 1));
    fit.covariance *= resid.squaredNorm() / df;
  }
  return fit;
}

GlmFit fit_glm(const FamilyLink& fl, const DesignSpec& spec, const DataTable& data,
               const Eigen::VectorXd* scores, const GlmOptions& options, bool control_only) {
  DesignOptions dopt;
  dopt.control_only = control_only;
  const Eigen::MatrixXd X = build_design(spec, fl, data, scores, dopt);
  GlmFit fit = fit_glm(fl, X, data.y, options);
  fit.spec = spec;
  fit.covariate_names = data.covariate_names;
  fit.control_only = control_only;
  return fit;
}

Eigen::VectorXd linear_predictor(const GlmFit& fit, const Eigen::MatrixXd& design) {
  if (design.cols() != fit.beta.size()) {
    throw DataError("design has " + std::to_string(design.cols()) + " columns, fit has " +
                    std::to_string(fit.beta.size()));
  }
  return design * fit.beta;
}

Eigen::VectorXd fitted_means(const GlmFit& fit, const Eigen::MatrixXd& design) {
  Eigen::VectorXd eta = linear_predictor(fit, design);
  for (Eigen::Index i = 0; i < eta.size(); ++i) eta[i] = fit.family_link.g_inv(eta[i]);
  return eta;
}

double predict_mean(const GlmFit& fit, const Eigen::VectorXd& w, int a,
                    std::optional<double> score) {
  if (static_cast<std::size_t>(w.size()) != fit.covariate_names.size()) {
    throw DataError("covariate row has " + std::to_string(w.size()) + " entries, model expects " +
                    std::to_string(fit.covariate_names.size()));
  }
  DataTable row;
  row.ids = {"0"};
  row.covariate_names = fit.covariate_names;
  row.w = w.transpose();
  row.a = Eigen::VectorXi::Constant(1, a);
  row.y = Eigen::VectorXd::Zero(1);
  Eigen::VectorXd s;
  if (score) s = Eigen::VectorXd::Constant(1, *score);
  return counterfactual_means(fit, row, score ? &s : nullptr, a)[0];
}

Eigen::VectorXd counterfactual_means(const GlmFit& fit, const DataTable& data,
                                     const Eigen::VectorXd* scores, int a) {
  DesignOptions dopt;
  dopt.control_only = fit.control_only;
  if (!fit.control_only) dopt.force_arm = a;
  return fitted_means(fit, build_design(fit.spec, fit.family_link, data, scores, dopt));
}

}  // namespace glmprog
