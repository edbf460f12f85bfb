#pragma once

// Simulation laboratory: the count-outcome data-generating process with
// trial and historical populations, the six adjustment sets, a replicate
// runner with per-replicate power calculations, and metric aggregation.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "glmprog/estimator.hpp"
#include "glmprog/prognostic.hpp"
#include "glmprog/trial_data.hpp"

namespace glmprog {

// How the treated-arm mean combines the heterogeneity term with the link.
enum class TreatedMeanForm {
  inside_link,  // exp(zeta) * (m0 + 2 eta h(w4))
  link_scale,   // exp(zeta) * m0 * exp(2 eta h(w4))
};

struct ScenarioSpec {
  std::string name = "custom";
  // Trial population (d = 1).
  double u1 = 0.0;
  double w1 = 0.0;
  bool heterogeneous = false;
  double zeta = 0.0;
  // Historical population (d = 0).
  double u0 = 0.0;
  double w0 = 0.0;
  TreatedMeanForm form = TreatedMeanForm::inside_link;

  double u_mean(int d) const { return d == 1 ? u1 : u0; }
  double w1_mean(int d) const { return d == 1 ? w1 : w0; }
};

// `<trial>/<historical>` with trial in {null, additive, heterogeneous} and
// historical in {no-shift, small-unobserved, small-observed,
// large-unobserved, large-observed}.
ScenarioSpec named_scenario(std::string_view name);
std::vector<std::string> scenario_names();

// m(u, w, a). `w` holds the five covariates.
double conditional_mean_m(double u, const Eigen::Ref<const Eigen::RowVectorXd>& w, int a,
                          const ScenarioSpec& scenario);

// E|X| for X ~ N(mean, 1).
double expected_abs_normal(double mean);

// mu(w, 0) in the trial population, with U integrated out.
double oracle_score(const Eigen::Ref<const Eigen::RowVectorXd>& w, const ScenarioSpec& scenario);
Eigen::VectorXd oracle_scores(const Eigen::MatrixXd& w, const ScenarioSpec& scenario);

// Psi1 / Psi0 in the trial population. Closed form for the inside-link
// treated mean; Monte Carlo (10^7 draws, cached) for the link-scale form.
double true_rate_ratio(const ScenarioSpec& scenario);

// Rows of (W1..W5, A, Y) from population d; U is drawn but not returned.
DataTable sample_population(const ScenarioSpec& scenario, int d, std::size_t n,
                            std::uint64_t seed);
TrialDataset sample_trial(const ScenarioSpec& scenario, std::size_t n, std::uint64_t seed);
HistoricalDataset sample_historical(const ScenarioSpec& scenario, std::size_t n,
                                    std::uint64_t seed);

enum class EstimatorId {
  none,
  covariates,
  noise_covariates,
  oracle_covariates,
  prognostic_only,
  prognostic_covariates,
};

std::string_view to_string(EstimatorId id);
EstimatorId parse_estimator(std::string_view name);
const std::vector<EstimatorId>& all_estimators();
DesignSpec estimator_design(EstimatorId id);
bool estimator_uses_scores(EstimatorId id);

// A trial size: a fixed count, or the rounded mean n_required of an
// estimator over all replicates of the scenario ("nreq:<estimator>").
using NTrialToken = std::variant<std::size_t, EstimatorId>;
NTrialToken parse_n_trial(std::string_view token);
std::string to_string(const NTrialToken& token);

struct SimConfig {
  std::vector<std::string> scenarios{"additive/no-shift"};
  std::vector<ScenarioSpec> custom_scenarios;  // used when nonempty
  std::vector<NTrialToken> n_trial{std::size_t{100}, std::size_t{250}, std::size_t{400}};
  std::size_t n_hist = 2500;
  std::size_t reps = 500;
  int workers = 1;
  std::uint64_t seed = 1;
  std::vector<EstimatorId> estimators = all_estimators();
  bool crossfit = true;
  int folds = 10;
  double nb_dispersion = 3.0;
  double alpha = 0.05;
  double target_power = 0.8;
  int kappa_cv_folds = 5;
  LearnerConfig learner;
  TreatedMeanForm form = TreatedMeanForm::inside_link;
};

// Output of the pre-trial stage of one replicate.
struct HistoricalStage {
  std::optional<PrognosticModel> model;
  std::string model_error;
  // One entry per SimConfig::estimators; NaN when not available.
  std::vector<double> n_required;
};

struct ReplicateRecord {
  std::string scenario;
  std::size_t rep = 0;
  std::string n_label;
  std::size_t n_trial = 0;
  EstimatorId estimator = EstimatorId::none;
  bool ok = false;
  std::string error;
  double psi_hat = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  bool significant = false;
  bool covered = false;
  double n_required = 0.0;  // NaN when not computed
};

struct SummaryRow {
  std::string scenario;
  std::string n_label;
  std::size_t n_trial = 0;
  EstimatorId estimator = EstimatorId::none;
  std::size_t reps_ok = 0;
  std::size_t failures = 0;
  double coverage = 0.0;
  double power = 0.0;
  double mean_psi = 0.0;
  double mean_se = 0.0;
  double re_median = 0.0;  // SE relative to the covariates estimator, same replicate
  double re_q1 = 0.0;
  double re_q3 = 0.0;
  double mean_n_required = 0.0;
  std::vector<double> relative_se;  // per replicate, for charts
};

struct ExperimentResult {
  std::vector<ReplicateRecord> records;
  std::vector<SummaryRow> summary;
  const SummaryRow* find(std::string_view scenario, std::string_view n_label,
                         EstimatorId estimator) const;
};

HistoricalStage run_historical_stage(const SimConfig& cfg, const ScenarioSpec& scenario,
                                     std::uint64_t rep_seed);

// Trial stage for one size; one record per configured estimator.
std::vector<ReplicateRecord> run_trial_stage(const SimConfig& cfg, const ScenarioSpec& scenario,
                                             const HistoricalStage& hist, std::uint64_t rep_seed,
                                             std::size_t n_trial);

// Both stages for one replicate over the given trial sizes.
std::vector<ReplicateRecord> run_replicate(const SimConfig& cfg, const ScenarioSpec& scenario,
                                           std::uint64_t rep_seed,
                                           const std::vector<std::size_t>& n_trials);

// Keyed by scenario name, so a scenario's replicates do not depend on which
// other scenarios run alongside it.
std::uint64_t replicate_seed(std::uint64_t master, std::string_view scenario, std::size_t rep);

std::vector<SummaryRow> summarize(const std::vector<ReplicateRecord>& records,
                                  const std::vector<EstimatorId>& estimators);

// Runs every scenario and replicate. Results do not depend on `workers`.
ExperimentResult run_experiment(const SimConfig& cfg);

// replicates.csv, summary.csv and SVG charts; returns the written paths.
std::vector<std::filesystem::path> write_experiment(const ExperimentResult& result,
                                                    const std::filesystem::path& out_dir);
void write_replicates_csv(const std::vector<ReplicateRecord>& records,
                          const std::filesystem::path& path);
void write_summary_csv(const std::vector<SummaryRow>& rows, const std::filesystem::path& path);

}  // namespace glmprog
