#include "glmprog/sim_lab.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <random>
#include <thread>
#include <tuple>

#include "glmprog/errors.hpp"
#include "glmprog/power.hpp"
#include "glmprog/rng.hpp"
#include "glmprog/stats.hpp"

namespace glmprog {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr int kNumCovariates = 5;

// Mean of h(Z + c) for Z ~ N(0, 1).
double expected_hinge_shifted(double c) { return stats::normal_pdf(c) + c * stats::normal_cdf(c); }

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double control_mean_m(double u, const Eigen::Ref<const Eigen::RowVectorXd>& w) {
  using stats::hinge;
  return 0.1 + 2.0 * hinge(w[0] + 1.0) + w[1] * w[1] + hinge(w[0] * w[3]) +
         std::abs(u) * hinge(w[2] + 2.0);
}

double monte_carlo_rate_ratio(const ScenarioSpec& s) {
  constexpr std::size_t draws = 10'000'000;
  Rng rng = make_rng(0x5eed0f7a11ULL);
  std::normal_distribution<double> z(0.0, 1.0);
  double sum0 = 0.0, sum1 = 0.0;
  Eigen::RowVectorXd w(kNumCovariates);
  for (std::size_t i = 0; i < draws; ++i) {
    const double u = s.u1 + z(rng);
    w[0] = s.w1 + z(rng);
    for (int j = 1; j < kNumCovariates; ++j) w[j] = z(rng);
    sum0 += conditional_mean_m(u, w, 0, s);
    sum1 += conditional_mean_m(u, w, 1, s);
  }
  return sum1 / sum0;
}

template <class Fn>
void parallel_for(std::size_t count, int workers, Fn&& fn) {
  const auto threads = static_cast<std::size_t>(std::max(1, workers));
  if (threads == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(threads, count); ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

DesignSpec covariate_terms(bool with_prognostic) {
  std::string terms = "w:w1,w:w2,w:w3,w:w4,w:w5";
  if (with_prognostic) terms += ",prognostic";
  return DesignSpec::parse(terms);
}

}  // namespace

ScenarioSpec named_scenario(std::string_view name) {
  const auto slash = name.find('/');
  if (slash == std::string_view::npos) {
    throw DomainError("scenario '" + std::string(name) + "' must look like <trial>/<historical>");
  }
  const std::string_view trial = name.substr(0, slash);
  const std::string_view hist = name.substr(slash + 1);
  ScenarioSpec s;
  s.name = std::string(name);
  if (trial == "null") {
    s.zeta = 0.0;
  } else if (trial == "additive") {
    s.zeta = 0.2;
  } else if (trial == "heterogeneous") {
    s.zeta = 0.057;
    s.heterogeneous = true;
  } else {
    throw DomainError("unknown trial scenario '" + std::string(trial) + "'");
  }
  if (hist == "no-shift") {
  } else if (hist == "small-unobserved") {
    s.u0 = 1.5;
  } else if (hist == "small-observed") {
    s.w0 = 1.5;
  } else if (hist == "large-unobserved") {
    s.u0 = 3.0;
  } else if (hist == "large-observed") {
    s.w0 = 3.0;
  } else {
    throw DomainError("unknown historical scenario '" + std::string(hist) + "'");
  }
  return s;
}

std::vector<std::string> scenario_names() {
  std::vector<std::string> out;
  for (const char* t : {"null", "additive", "heterogeneous"}) {
    for (const char* h :
         {"no-shift", "small-unobserved", "small-observed", "large-unobserved", "large-observed"}) {
      out.push_back(std::string(t) + "/" + h);
    }
  }
  return out;
}

double conditional_mean_m(double u, const Eigen::Ref<const Eigen::RowVectorXd>& w, int a,
                          const ScenarioSpec& scenario) {
  const double m0 = control_mean_m(u, w);
  if (a == 0) return m0;
  const double het = scenario.heterogeneous ? 2.0 * stats::hinge(w[3]) : 0.0;
  switch (scenario.form) {
    case TreatedMeanForm::inside_link: return std::exp(scenario.zeta) * (m0 + het);
    case TreatedMeanForm::link_scale: return std::exp(scenario.zeta + het) * m0;
  }
  return kNaN;
}

double expected_abs_normal(double mean) {
  return std::sqrt(2.0 / std::numbers::pi) * std::exp(-0.5 * mean * mean) +
         mean * (1.0 - 2.0 * stats::normal_cdf(-mean));
}

double oracle_score(const Eigen::Ref<const Eigen::RowVectorXd>& w, const ScenarioSpec& scenario) {
  using stats::hinge;
  return 0.1 + 2.0 * hinge(w[0] + 1.0) + w[1] * w[1] + hinge(w[0] * w[3]) +
         expected_abs_normal(scenario.u1) * hinge(w[2] + 2.0);
}

Eigen::VectorXd oracle_scores(const Eigen::MatrixXd& w, const ScenarioSpec& scenario) {
  if (w.cols() != kNumCovariates) throw DataError("oracle score needs five covariates");
  Eigen::VectorXd out(w.rows());
  for (Eigen::Index i = 0; i < w.rows(); ++i) out[i] = oracle_score(w.row(i), scenario);
  return out;
}

double true_rate_ratio(const ScenarioSpec& s) {
  if (!s.heterogeneous) return std::exp(s.zeta);
  if (s.form == TreatedMeanForm::inside_link) {
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    const double psi0 = 0.1 + 2.0 * expected_hinge_shifted(s.w1 + 1.0) + 1.0 +
                        expected_abs_normal(s.w1) * inv_sqrt_2pi +
                        expected_abs_normal(s.u1) * expected_hinge_shifted(2.0);
    const double psi1 = std::exp(s.zeta) * (psi0 + 2.0 * inv_sqrt_2pi);
    return psi1 / psi0;
  }
  static std::mutex mutex;
  static std::map<std::tuple<double, double, double>, double> cache;
  const auto key = std::make_tuple(s.u1, s.w1, s.zeta);
  {
    std::lock_guard lock(mutex);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  const double rr = monte_carlo_rate_ratio(s);
  std::lock_guard lock(mutex);
  cache.emplace(key, rr);
  return rr;
}

DataTable sample_population(const ScenarioSpec& scenario, int d, std::size_t n,
                            std::uint64_t seed) {
  if (d != 0 && d != 1) throw DomainError("population flag must be 0 or 1");
  if (n == 0) throw DomainError("sample size must be positive");
  Rng rng = make_rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  const auto rows = static_cast<Eigen::Index>(n);
  DataTable t;
  t.covariate_names = {"w1", "w2", "w3", "w4", "w5"};
  t.ids.resize(n);
  t.w.resize(rows, kNumCovariates);
  t.a.resize(rows);
  t.y.resize(rows);
  Eigen::RowVectorXd w(kNumCovariates);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double u = scenario.u_mean(d) + z(rng);
    w[0] = scenario.w1_mean(d) + z(rng);
    for (int j = 1; j < kNumCovariates; ++j) w[j] = z(rng);
    const int a = d == 1 && coin(rng) ? 1 : 0;
    const double m = conditional_mean_m(u, w, a, scenario);
    t.ids[static_cast<std::size_t>(i)] = std::to_string(i + 1);
    t.w.row(i) = w;
    t.a[i] = a;
    t.y[i] = static_cast<double>(std::poisson_distribution<long long>(m)(rng));
  }
  return t;
}

TrialDataset sample_trial(const ScenarioSpec& scenario, std::size_t n, std::uint64_t seed) {
  return TrialDataset(sample_population(scenario, 1, n, seed), 0.5);
}

HistoricalDataset sample_historical(const ScenarioSpec& scenario, std::size_t n,
                                    std::uint64_t seed) {
  return HistoricalDataset(sample_population(scenario, 0, n, seed));
}

std::string_view to_string(EstimatorId id) {
  switch (id) {
    case EstimatorId::none: return "none";
    case EstimatorId::covariates: return "covariates";
    case EstimatorId::noise_covariates: return "noise+covariates";
    case EstimatorId::oracle_covariates: return "oracle+covariates";
    case EstimatorId::prognostic_only: return "prognostic-only";
    case EstimatorId::prognostic_covariates: return "prognostic+covariates";
  }
  return "?";
}

EstimatorId parse_estimator(std::string_view name) {
  for (EstimatorId id : all_estimators()) {
    if (to_string(id) == name) return id;
  }
  throw DomainError("unknown estimator '" + std::string(name) + "'");
}

const std::vector<EstimatorId>& all_estimators() {
  static const std::vector<EstimatorId> ids{
      EstimatorId::none,          EstimatorId::covariates,      EstimatorId::noise_covariates,
      EstimatorId::oracle_covariates, EstimatorId::prognostic_only,
      EstimatorId::prognostic_covariates};
  return ids;
}

DesignSpec estimator_design(EstimatorId id) {
  switch (id) {
    case EstimatorId::none: return {};
    case EstimatorId::covariates: return covariate_terms(false);
    case EstimatorId::noise_covariates:
    case EstimatorId::oracle_covariates:
    case EstimatorId::prognostic_covariates: return covariate_terms(true);
    case EstimatorId::prognostic_only: return DesignSpec::parse("prognostic");
  }
  return {};
}

bool estimator_uses_scores(EstimatorId id) {
  return id != EstimatorId::none && id != EstimatorId::covariates;
}

NTrialToken parse_n_trial(std::string_view token) {
  if (token.rfind("nreq:", 0) == 0) return parse_estimator(token.substr(5));
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(std::string(token), &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != token.size() || v < 2) {
    throw DomainError("trial size '" + std::string(token) +
                      "' must be an integer >= 2 or nreq:<estimator>");
  }
  return static_cast<std::size_t>(v);
}

std::string to_string(const NTrialToken& token) {
  if (const auto* n = std::get_if<std::size_t>(&token)) return std::to_string(*n);
  return "nreq:" + std::string(to_string(std::get<EstimatorId>(token)));
}

std::uint64_t replicate_seed(std::uint64_t master, std::string_view scenario, std::size_t rep) {
  return derive_seed(derive_seed(master, fnv1a(scenario)), rep);
}

HistoricalStage run_historical_stage(const SimConfig& cfg, const ScenarioSpec& scenario,
                                     std::uint64_t rep_seed) {
  HistoricalStage out;
  out.n_required.assign(cfg.estimators.size(), kNaN);
  const HistoricalDataset hist =
      sample_historical(scenario, cfg.n_hist, derive_seed(rep_seed, Stream::historical));
  try {
    out.model = train_hinge_learner(hist, cfg.learner);
  } catch (const Error& e) {
    out.model_error = e.what();
  }

  PowerSpec spec;
  spec.effect = EffectMeasure::ratio();
  spec.target_effect = true_rate_ratio(scenario);
  spec.null_value = 1.0;
  spec.alpha = cfg.alpha;
  spec.target_power = cfg.target_power;
  if (spec.target_effect == spec.null_value) return out;

  PlanningOptions opts;
  opts.cv_folds = cfg.kappa_cv_folds;
  const FamilyLink working = FamilyLink::negative_binomial(cfg.nb_dispersion, Link::log);

  std::optional<Eigen::VectorXd> learner_oof;
  const auto learner_predictions = [&]() -> const Eigen::VectorXd& {
    if (!learner_oof) {
      const Learner hinge = make_learner(LearnerKind::hinge, cfg.learner);
      learner_oof = cross_validate(hinge, hist.data(), cfg.kappa_cv_folds,
                                   derive_seed(rep_seed, Stream::learner_cv))
                        .oof_predictions;
    }
    return *learner_oof;
  };

  for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
    try {
      KappaSource source = KappaUnadjusted{};
      switch (cfg.estimators[e]) {
        case EstimatorId::none: break;
        case EstimatorId::covariates:
          opts.seed = derive_seed(rep_seed, Stream::glm_cv);
          source = KappaGlm{working, covariate_terms(false)};
          break;
        case EstimatorId::oracle_covariates:
          source = KappaPredictions{oracle_scores(hist.data().w, scenario)};
          break;
        case EstimatorId::noise_covariates:
        case EstimatorId::prognostic_only:
        case EstimatorId::prognostic_covariates:
          source = KappaPredictions{learner_predictions()};
          break;
      }
      const PopulationParams params = estimate_population_params(hist, source, spec, opts);
      out.n_required[e] = static_cast<double>(required_sample_size(params, spec));
    } catch (const Error&) {
      out.n_required[e] = kNaN;
    }
  }
  return out;
}

std::vector<ReplicateRecord> run_trial_stage(const SimConfig& cfg, const ScenarioSpec& scenario,
                                             const HistoricalStage& hist, std::uint64_t rep_seed,
                                             std::size_t n_trial) {
  const TrialDataset trial =
      sample_trial(scenario, n_trial, derive_seed(derive_seed(rep_seed, Stream::trial), n_trial));
  const double truth = true_rate_ratio(scenario);
  const FamilyLink working = FamilyLink::negative_binomial(cfg.nb_dispersion, Link::log);
  const EffectMeasure ratio = EffectMeasure::ratio();

  std::optional<Eigen::VectorXd> prognostic, noise;
  if (hist.model) {
    prognostic = floor_scores_for_link(predict_scores(*hist.model, trial.data().w), working);
    noise = shuffle_scores(*prognostic,
                           derive_seed(derive_seed(rep_seed, Stream::shuffle), n_trial));
  }
  const Eigen::VectorXd oracle =
      floor_scores_for_link(oracle_scores(trial.data().w, scenario), working);

  VarianceOptions var;
  var.crossfit = cfg.crossfit;
  var.folds = cfg.folds;
  var.seed = derive_seed(derive_seed(rep_seed, Stream::crossfit), n_trial);
  InferenceOptions inf;
  inf.alpha = cfg.alpha;
  inf.null_value = 1.0;

  std::vector<ReplicateRecord> out;
  for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
    const EstimatorId id = cfg.estimators[e];
    ReplicateRecord rec;
    rec.scenario = scenario.name;
    rec.n_trial = n_trial;
    rec.n_label = std::to_string(n_trial);
    rec.estimator = id;
    rec.n_required = e < hist.n_required.size() ? hist.n_required[e] : kNaN;
    try {
      const Eigen::VectorXd* scores = nullptr;
      switch (id) {
        case EstimatorId::none:
        case EstimatorId::covariates: break;
        case EstimatorId::oracle_covariates: scores = &oracle; break;
        case EstimatorId::noise_covariates:
          if (!noise) throw Error("prognostic model unavailable: " + hist.model_error);
          scores = &*noise;
          break;
        case EstimatorId::prognostic_only:
        case EstimatorId::prognostic_covariates:
          if (!prognostic) throw Error("prognostic model unavailable: " + hist.model_error);
          scores = &*prognostic;
          break;
      }
      const EffectEstimate est =
          estimate_marginal_effect(working, estimator_design(id), ratio, trial, scores, var, inf);
      rec.ok = true;
      rec.psi_hat = est.psi_hat;
      rec.se = est.se;
      rec.ci_lo = est.ci_lo;
      rec.ci_hi = est.ci_hi;
      rec.significant = est.p_value < cfg.alpha;
      rec.covered = est.ci_lo <= truth && truth <= est.ci_hi;
    } catch (const Error& err) {
      rec.ok = false;
      rec.error = err.what();
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<ReplicateRecord> run_replicate(const SimConfig& cfg, const ScenarioSpec& scenario,
                                           std::uint64_t rep_seed,
                                           const std::vector<std::size_t>& n_trials) {
  const HistoricalStage hist = run_historical_stage(cfg, scenario, rep_seed);
  std::vector<ReplicateRecord> out;
  for (std::size_t n : n_trials) {
    auto recs = run_trial_stage(cfg, scenario, hist, rep_seed, n);
    out.insert(out.end(), recs.begin(), recs.end());
  }
  return out;
}

const SummaryRow* ExperimentResult::find(std::string_view scenario, std::string_view n_label,
                                         EstimatorId estimator) const {
  for (const auto& row : summary) {
    if (row.scenario == scenario && row.n_label == n_label && row.estimator == estimator) {
      return &row;
    }
  }
  return nullptr;
}

std::vector<SummaryRow> summarize(const std::vector<ReplicateRecord>& records,
                                  const std::vector<EstimatorId>& estimators) {
  using Key = std::tuple<std::string, std::string, EstimatorId>;
  std::map<Key, std::size_t> index;
  std::vector<SummaryRow> rows;
  std::map<std::tuple<std::string, std::string, std::size_t>, double> covariate_se;
  for (const auto& r : records) {
    if (r.estimator == EstimatorId::covariates && r.ok) {
      covariate_se[{r.scenario, r.n_label, r.rep}] = r.se;
    }
  }
  // Group in the order of first appearance, estimators in configured order.
  for (const auto& r : records) {
    for (EstimatorId id : estimators) {
      const Key key{r.scenario, r.n_label, id};
      if (index.count(key)) continue;
      index[key] = rows.size();
      SummaryRow row;
      row.scenario = r.scenario;
      row.n_label = r.n_label;
      row.n_trial = r.n_trial;
      row.estimator = id;
      rows.push_back(std::move(row));
    }
  }
  std::vector<double> nreq_sum(rows.size(), 0.0);
  std::vector<std::size_t> nreq_count(rows.size(), 0);
  for (const auto& r : records) {
    const auto it = index.find(Key{r.scenario, r.n_label, r.estimator});
    if (it == index.end()) continue;
    SummaryRow& row = rows[it->second];
    if (std::isfinite(r.n_required)) {
      nreq_sum[it->second] += r.n_required;
      ++nreq_count[it->second];
    }
    if (!r.ok) {
      ++row.failures;
      continue;
    }
    ++row.reps_ok;
    row.coverage += r.covered ? 1.0 : 0.0;
    row.power += r.significant ? 1.0 : 0.0;
    row.mean_psi += r.psi_hat;
    row.mean_se += r.se;
    const auto cov = covariate_se.find({r.scenario, r.n_label, r.rep});
    if (cov != covariate_se.end() && cov->second > 0.0) {
      row.relative_se.push_back(r.se / cov->second);
    }
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    SummaryRow& row = rows[i];
    const double k = static_cast<double>(row.reps_ok);
    if (row.reps_ok > 0) {
      row.coverage /= k;
      row.power /= k;
      row.mean_psi /= k;
      row.mean_se /= k;
    } else {
      row.coverage = row.power = row.mean_psi = row.mean_se = kNaN;
    }
    row.re_median = stats::quantile(row.relative_se, 0.5);
    row.re_q1 = stats::quantile(row.relative_se, 0.25);
    row.re_q3 = stats::quantile(row.relative_se, 0.75);
    row.mean_n_required =
        nreq_count[i] > 0 ? nreq_sum[i] / static_cast<double>(nreq_count[i]) : kNaN;
  }
  return rows;
}

ExperimentResult run_experiment(const SimConfig& cfg) {
  if (cfg.reps == 0) throw DomainError("reps must be positive");
  if (cfg.n_trial.empty()) throw DomainError("no trial sizes given");
  std::vector<ScenarioSpec> scenarios = cfg.custom_scenarios;
  if (scenarios.empty()) {
    for (const auto& name : cfg.scenarios) {
      ScenarioSpec s = named_scenario(name);
      s.form = cfg.form;
      scenarios.push_back(std::move(s));
    }
  }
  for (const auto& token : cfg.n_trial) {
    if (const auto* id = std::get_if<EstimatorId>(&token)) {
      if (std::find(cfg.estimators.begin(), cfg.estimators.end(), *id) == cfg.estimators.end()) {
        throw DomainError("trial size " + to_string(token) + " names an estimator not being run");
      }
    }
  }

  const std::size_t S = scenarios.size();
  const std::size_t R = cfg.reps;
  std::vector<HistoricalStage> stages(S * R);
  parallel_for(S * R, cfg.workers, [&](std::size_t t) {
    const std::size_t s = t / R, r = t % R;
    stages[t] = run_historical_stage(cfg, scenarios[s],
                                     replicate_seed(cfg.seed, scenarios[s].name, r));
  });

  // Resolve nreq tokens per scenario.
  // nullopt: no replicate of the scenario produced a finite n_required.
  std::vector<std::vector<std::optional<std::size_t>>> sizes(S);
  for (std::size_t s = 0; s < S; ++s) {
    for (const auto& token : cfg.n_trial) {
      if (const auto* n = std::get_if<std::size_t>(&token)) {
        sizes[s].push_back(*n);
        continue;
      }
      const auto id = std::get<EstimatorId>(token);
      const auto e = static_cast<std::size_t>(
          std::find(cfg.estimators.begin(), cfg.estimators.end(), id) - cfg.estimators.begin());
      double sum = 0.0;
      std::size_t count = 0;
      for (std::size_t r = 0; r < R; ++r) {
        const double v = stages[s * R + r].n_required[e];
        if (std::isfinite(v)) sum += v, ++count;
      }
      if (count == 0) {
        sizes[s].push_back(std::nullopt);
      } else {
        sizes[s].push_back(static_cast<std::size_t>(std::llround(sum / static_cast<double>(count))));
      }
    }
  }

  std::vector<std::vector<ReplicateRecord>> per_task(S * R);
  parallel_for(S * R, cfg.workers, [&](std::size_t t) {
    const std::size_t s = t / R, r = t % R;
    const std::uint64_t seed = replicate_seed(cfg.seed, scenarios[s].name, r);
    for (std::size_t j = 0; j < sizes[s].size(); ++j) {
      std::vector<ReplicateRecord> recs;
      if (sizes[s][j]) {
        recs = run_trial_stage(cfg, scenarios[s], stages[t], seed, *sizes[s][j]);
      } else {
        for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
          ReplicateRecord rec;
          rec.scenario = scenarios[s].name;
          rec.estimator = cfg.estimators[e];
          rec.error = "no replicate produced a finite n_required for " + to_string(cfg.n_trial[j]);
          rec.n_required = stages[t].n_required[e];
          recs.push_back(std::move(rec));
        }
      }
      for (auto& rec : recs) {
        rec.rep = r;
        rec.n_label = to_string(cfg.n_trial[j]);
        per_task[t].push_back(std::move(rec));
      }
    }
  });

  ExperimentResult result;
  const std::size_t per_rep = cfg.n_trial.size() * cfg.estimators.size();
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t j = 0; j < cfg.n_trial.size(); ++j) {
      for (std::size_t r = 0; r < R; ++r) {
        const auto& recs = per_task[s * R + r];
        if (recs.size() != per_rep) throw Error("internal: replicate record count mismatch");
        for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
          result.records.push_back(recs[j * cfg.estimators.size() + e]);
        }
      }
    }
  }
  result.summary = summarize(result.records, cfg.estimators);
  return result;
}

}  // namespace glmprog
