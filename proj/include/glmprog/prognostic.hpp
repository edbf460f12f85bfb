#pragma once

// Prognostic score learners trained on control-only data: a hinge-basis
// (MARS-style) regression, linear main terms and the intercept-only model,
// with K-fold cross-validation for scoring and selecting among them.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "glmprog/glm.hpp"
#include "glmprog/trial_data.hpp"

namespace glmprog {

// One factor of a basis product. sign +1 is h(w - knot), -1 is h(knot - w),
// 0 is the raw covariate w (knot unused).
struct HingeFactor {
  int covariate = 0;
  int sign = 1;
  double knot = 0.0;

  double eval(double w) const;
  bool operator==(const HingeFactor&) const = default;
};

// Product of factors; the empty product is the intercept.
struct BasisTerm {
  std::vector<HingeFactor> factors;

  int degree() const { return static_cast<int>(factors.size()); }
  bool uses(int covariate) const;
  double eval(const Eigen::Ref<const Eigen::RowVectorXd>& w) const;
  bool operator==(const BasisTerm&) const = default;
};

struct PrognosticModel {
  std::string learner;
  std::vector<std::string> covariate_names;
  std::vector<BasisTerm> basis;
  Eigen::VectorXd weights;
  std::size_t n_train = 0;
  std::uint64_t seed = 0;
  double cv_rmse = std::numeric_limits<double>::quiet_NaN();

  Eigen::VectorXd predict(const Eigen::MatrixXd& w) const;

  void save(const std::filesystem::path& path) const;
  static PrognosticModel load(const std::filesystem::path& path);
};

enum class LearnerKind { hinge, glm_main_terms, intercept_only };

std::string_view to_string(LearnerKind k);
LearnerKind parse_learner(std::string_view name);

struct LearnerConfig {
  int max_degree = 3;
  int num_terms = 50;
  int num_knots = 9;              // interior quantiles per covariate (deciles)
  double gcv_penalty = 3.0;       // per-knot GCV charge
  double min_rsq_gain = 1e-3;     // forward pass stops below this R^2 gain
  // Fewest rows with a nonzero hinge on each side of a knot, counted within
  // the parent's support. 0 means ceil(3 + log2(p / 0.05)).
  int min_span = 0;
  // Parents rescanned per forward step, best last gain first; 0 scans all.
  int fast_k = 20;
  std::vector<LearnerKind> candidate_library{LearnerKind::hinge, LearnerKind::glm_main_terms,
                                             LearnerKind::intercept_only};
  int cv_folds = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

// A trainable candidate: data -> fitted model.
struct Learner {
  std::string name;
  std::function<PrognosticModel(const DataTable&)> fit;
};

Learner make_learner(LearnerKind kind, const LearnerConfig& cfg);

// Needs at least 20 rows. Forward selection of hinge products by residual
// sum of squares, then backward deletion scored by GCV.
PrognosticModel train_hinge_learner(const DataTable& train, const LearnerConfig& cfg);
PrognosticModel train_hinge_learner(const HistoricalDataset& train, const LearnerConfig& cfg);
PrognosticModel train_linear(const DataTable& train);
PrognosticModel train_intercept_only(const DataTable& train);

struct CvResult {
  Eigen::VectorXd oof_predictions;
  FoldAssignment folds;
  double mse = 0.0;
  double rmse() const;
};

// Each row is predicted by the model trained on the other folds.
CvResult cross_validate(const Learner& learner, const DataTable& data, int k, std::uint64_t seed);
double cv_rmse(const Learner& learner, const DataTable& data, int k, std::uint64_t seed);
double cv_rmse(const Learner& learner, const HistoricalDataset& data, int k, std::uint64_t seed);

struct CandidateScore {
  std::string name;
  double cv_mse = std::numeric_limits<double>::quiet_NaN();
  std::string error;  // nonempty when the candidate failed
};

struct Selection {
  PrognosticModel model;  // winner refit on all rows, cv_rmse filled in
  std::vector<CandidateScore> scores;
  std::size_t winner = 0;
};

// Every candidate sees the same folds. Ties go to the earlier candidate.
Selection select_model_cv(const std::vector<Learner>& candidates, const DataTable& data,
                          const LearnerConfig& cfg);
Selection select_model_cv(const HistoricalDataset& data, const LearnerConfig& cfg);

// Columns are matched to the model's covariates by position; the count
// must agree.
Eigen::VectorXd predict_scores(const PrognosticModel& model, const Eigen::MatrixXd& w);

// Clamps scores into the domain of g: log and nb-canonical floor at 1e-6,
// logit clips to [1e-6, 1 - 1e-6], identity is untouched.
Eigen::VectorXd floor_scores_for_link(const Eigen::VectorXd& scores, const FamilyLink& fl);

// A seeded permutation of the scores. Throws DataError for fewer than 2.
Eigen::VectorXd shuffle_scores(const Eigen::VectorXd& scores, std::uint64_t seed);

}  // namespace glmprog
