#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include "glmprog/errors.hpp"
#include "glmprog/estimator.hpp"
#include "glmprog/glm.hpp"
#include "glmprog/power.hpp"
#include "glmprog/prognostic.hpp"
#include "glmprog/sim_lab.hpp"
#include "glmprog/trial_data.hpp"

namespace glmprog::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string num(double v) {
  if (!std::isfinite(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// ---- options per command ---------------------------------------------------

struct AnalyzeArgs {
  std::string data, family, link, effect = "difference", design, model, one_sided = "none", out;
  double dispersion = 0.0, pi1 = 0.5, alpha = 0.05;
  std::optional<double> null_value;
  int crossfit = 0;
  bool centered = false;
  std::uint64_t seed = 1;
};

struct PowerArgs {
  std::string historical, model, design, learner, family = "normal", link, effect = "difference",
                                                  out;
  bool unadjusted = false, binary = false, one_sided = false;
  double dispersion = 0.0, target = 0.0, alpha = 0.05, power = 0.8, pi1 = 0.5;
  double inflation_kappa1 = 1.0, inflation_sigma1 = 1.0;
  std::optional<double> null_value;
  int cv_folds = 5;
  std::uint64_t seed = 1;
};

struct TrainArgs {
  std::string historical, learner = "select", out;
  int max_degree = 3, num_terms = 50, cv_folds = 5;
  std::uint64_t seed = 1;
};

struct SimulateArgs {
  std::vector<std::string> scenarios{"additive/no-shift"};
  std::vector<std::string> n_trial{"100", "250", "400"};
  std::vector<std::string> estimators;
  std::string out, form = "inside-link";
  std::size_t n_hist = 2500, reps = 500;
  int workers = 1, folds = 10, kappa_cv_folds = 5;
  std::uint64_t seed = 1;
  bool no_crossfit = false;
  double dispersion = 3.0, alpha = 0.05, power = 0.8;
};

// ---- config files ----------------------------------------------------------

std::vector<std::string> json_results(const std::string& key, const json& v) {
  const auto scalar = [&](const json& x) -> std::string {
    if (x.is_string()) return x.get<std::string>();
    if (x.is_boolean()) return x.get<bool>() ? "true" : "false";
    if (x.is_number_integer() || x.is_number_unsigned()) return x.dump();
    if (x.is_number_float()) return num(x.get<double>());
    throw UsageError("config key '" + key + "' has an unsupported value " + x.dump());
  };
  std::vector<std::string> out;
  if (v.is_array()) {
    for (const auto& x : v) out.push_back(scalar(x));
  } else {
    out.push_back(scalar(v));
  }
  return out;
}

// Values from the file fill options not given on the command line.
void apply_config(CLI::App& sub, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file '" + path + "'");
  json cfg;
  try {
    cfg = json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  if (!cfg.is_object()) throw UsageError("config file must hold a JSON object");
  if (!cfg.contains("schema_version")) throw UsageError("config file lacks 'schema_version'");
  if (cfg["schema_version"] != kSchemaVersion) {
    throw UsageError("config schema_version " + cfg["schema_version"].dump() +
                     " is not supported (expected " + std::to_string(kSchemaVersion) + ")");
  }
  for (const auto& [key, value] : cfg.items()) {
    if (key == "schema_version") continue;
    if (key == "command") {
      if (value != sub.get_name()) {
        throw UsageError("config is for command " + value.dump() + ", not '" + sub.get_name() +
                         "'");
      }
      continue;
    }
    CLI::Option* opt = key == "config" ? nullptr : sub.get_option_no_throw("--" + key);
    if (opt == nullptr) throw UsageError("unknown config key '" + key + "'");
    if (opt->count() > 0) continue;
    for (const auto& r : json_results(key, value)) opt->add_result(r);
    try {
      opt->run_callback();
    } catch (const CLI::ParseError& e) {
      throw UsageError("config key '" + key + "': " + e.what());
    }
  }
}

void require(const CLI::App& sub, std::initializer_list<const char*> names) {
  for (const char* name : names) {
    if (sub.get_option(name)->count() == 0) {
      throw UsageError(std::string("missing required option ") + name);
    }
  }
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) {
    throw UsageError(std::string(what) + " '" + path + "' does not exist or is not a file");
  }
}

void require_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) {
    throw UsageError("output directory '" + parent.string() + "' does not exist");
  }
}

// ---- manifests -------------------------------------------------------------

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void write_manifest(const fs::path& path, const std::string& command, std::uint64_t seed,
                    const json& config, const std::vector<fs::path>& artifacts) {
  json m;
  m["tool"] = "glmprog";
  m["version"] = kVersion;
  m["command"] = command;
  m["seed"] = seed;
  m["config"] = config;
  json files = json::array();
  for (const auto& a : artifacts) {
    files.push_back({{"file", a.filename().string()}, {"sha256", sha256_file(a)}});
  }
  m["artifacts"] = files;
  write_text(path, m.dump(2) + "\n");
}

fs::path manifest_for(const std::string& out) { return fs::path(out + ".manifest.json"); }

json base_config(const char* command) {
  json c;
  c["schema_version"] = kSchemaVersion;
  c["command"] = command;
  return c;
}

// ---- shared helpers --------------------------------------------------------

FamilyLink make_family_link(const std::string& family, const std::string& link, double r) {
  const Family f = parse_family(family);
  Link l = Link::identity;
  if (!link.empty()) {
    l = parse_link(link);
  } else {
    switch (f) {
      case Family::normal: l = Link::identity; break;
      case Family::binomial: l = Link::logit; break;
      case Family::poisson: l = Link::log; break;
      case Family::negative_binomial: l = Link::nb_canonical; break;
    }
  }
  return FamilyLink(f, l, r);
}

// Covariates reordered to the model's training order, matched by name.
Eigen::MatrixXd covariates_for(const PrognosticModel& model, const DataTable& data) {
  Eigen::MatrixXd w(static_cast<Eigen::Index>(data.size()),
                    static_cast<Eigen::Index>(model.covariate_names.size()));
  for (std::size_t j = 0; j < model.covariate_names.size(); ++j) {
    const auto& name = model.covariate_names[j];
    const auto it = std::find(data.covariate_names.begin(), data.covariate_names.end(), name);
    if (it == data.covariate_names.end()) {
      throw DataError("prognostic model needs covariate '" + name + "', absent from the data");
    }
    w.col(static_cast<Eigen::Index>(j)) =
        data.w.col(static_cast<Eigen::Index>(it - data.covariate_names.begin()));
  }
  return w;
}

void emit(std::ostream& out, const std::string& csv, const std::string& path) {
  out << csv;
  if (!path.empty()) write_text(path, csv);
}

// ---- commands --------------------------------------------------------------

int do_analyze(const AnalyzeArgs& a, std::ostream& out) {
  const FamilyLink fl = make_family_link(a.family, a.link, a.dispersion);
  const DesignSpec spec = DesignSpec::parse(a.design);
  const EffectMeasure effect = EffectMeasure::from_name(a.effect);
  const TrialDataset trial = load_trial_csv(a.data, a.pi1);

  std::optional<Eigen::VectorXd> scores;
  if (spec.uses_prognostic()) {
    if (a.model.empty()) throw UsageError("design has a prognostic term; pass --prognostic-model");
    const PrognosticModel model = PrognosticModel::load(a.model);
    scores = floor_scores_for_link(predict_scores(model, covariates_for(model, trial.data())), fl);
  } else if (!a.model.empty()) {
    throw UsageError("--prognostic-model given but the design has no prognostic term");
  }

  VarianceOptions var;
  var.crossfit = a.crossfit > 0;
  var.folds = a.crossfit > 0 ? a.crossfit : 10;
  var.seed = a.seed;
  var.centered = a.centered;
  InferenceOptions inf;
  inf.alpha = a.alpha;
  inf.null_value = a.null_value;
  inf.sided = parse_sidedness(a.one_sided);

  const EffectEstimate est = estimate_marginal_effect(fl, spec, effect, trial,
                                                      scores ? &*scores : nullptr, var, inf);
  std::ostringstream csv;
  csv << "psi,se,ci_lo,ci_hi,p,n,crossfit\n"
      << num(est.psi_hat) << ',' << num(est.se) << ',' << num(est.ci_lo) << ','
      << num(est.ci_hi) << ',' << num(est.p_value) << ',' << est.n << ','
      << (est.crossfit ? a.crossfit : 0) << '\n';
  emit(out, csv.str(), a.out);

  if (!a.out.empty()) {
    json c = base_config("analyze");
    c["data"] = a.data;
    c["family"] = a.family;
    c["link"] = a.link.empty() ? std::string(to_string(fl.link())) : a.link;
    if (fl.family() == Family::negative_binomial) c["dispersion"] = a.dispersion;
    c["effect"] = a.effect;
    c["design"] = a.design;
    if (!a.model.empty()) c["prognostic-model"] = a.model;
    c["crossfit"] = a.crossfit;
    c["centered"] = a.centered;
    c["pi1"] = a.pi1;
    c["seed"] = a.seed;
    c["alpha"] = a.alpha;
    if (a.null_value) c["null"] = *a.null_value;
    c["one-sided"] = a.one_sided;
    c["out"] = a.out;
    write_manifest(manifest_for(a.out), "analyze", a.seed, c, {a.out});
  }
  return 0;
}

int do_power(const PowerArgs& a, std::ostream& out) {
  const int routes = int(!a.model.empty()) + int(!a.design.empty()) + int(a.unadjusted) +
                     int(!a.learner.empty());
  if (routes != 1) {
    throw UsageError(
        "pass exactly one of --prognostic-model, --design, --learner, --unadjusted");
  }
  const HistoricalDataset hist = load_historical_csv(a.historical);
  PowerSpec spec;
  spec.effect = EffectMeasure::from_name(a.effect);
  spec.target_effect = a.target;
  spec.null_value = a.null_value.value_or(spec.effect.null_value());
  spec.alpha = a.alpha;
  spec.target_power = a.power;
  spec.one_sided = a.one_sided;

  PlanningOptions opts;
  opts.pi1 = a.pi1;
  opts.cv_folds = a.cv_folds;
  opts.seed = a.seed;
  opts.inflation_kappa1 = a.inflation_kappa1;
  opts.inflation_sigma1 = a.inflation_sigma1;
  opts.binary_outcome = a.binary;

  std::optional<PrognosticModel> model;
  KappaSource source = KappaUnadjusted{};
  if (!a.model.empty()) {
    model = PrognosticModel::load(a.model);
    if (model->covariate_names != hist.data().covariate_names) {
      throw DataError("historical covariates do not match the prognostic model's");
    }
    source = KappaFittedModel{&*model};
  } else if (!a.design.empty()) {
    source = KappaGlm{make_family_link(a.family, a.link, a.dispersion), DesignSpec::parse(a.design)};
  } else if (!a.learner.empty()) {
    LearnerConfig cfg;
    cfg.seed = a.seed;
    const LearnerKind kind = a.learner == "hinge"            ? LearnerKind::hinge
                             : a.learner == "glm-main-terms" ? LearnerKind::glm_main_terms
                             : a.learner == "intercept-only" ? LearnerKind::intercept_only
                             : throw UsageError("unknown learner '" + a.learner + "'");
    source = KappaLearnerCv{make_learner(kind, cfg)};
  }

  const PopulationParams p = estimate_population_params(hist, source, spec, opts);
  const double v = variance_bound(p, spec.effect);
  const std::size_t n = required_sample_size(v, spec);
  std::ostringstream csv;
  csv << "kappa0,sigma0,psi0,psi1,v_up_sq,n_required\n"
      << num(std::sqrt(p.kappa0_sq)) << ',' << num(std::sqrt(p.sigma0_sq)) << ',' << num(p.psi0)
      << ',' << num(p.psi1) << ',' << num(v) << ',' << n << '\n';
  emit(out, csv.str(), a.out);

  if (!a.out.empty()) {
    json c = base_config("power");
    c["historical"] = a.historical;
    if (!a.model.empty()) c["prognostic-model"] = a.model;
    if (!a.design.empty()) {
      c["design"] = a.design;
      c["family"] = a.family;
      if (!a.link.empty()) c["link"] = a.link;
      if (a.dispersion > 0.0) c["dispersion"] = a.dispersion;
    }
    if (!a.learner.empty()) c["learner"] = a.learner;
    if (a.unadjusted) c["unadjusted"] = true;
    c["effect"] = a.effect;
    c["target"] = a.target;
    c["null"] = spec.null_value;
    c["alpha"] = a.alpha;
    c["power"] = a.power;
    c["one-sided"] = a.one_sided;
    c["pi1"] = a.pi1;
    c["inflation-kappa1"] = a.inflation_kappa1;
    c["inflation-sigma1"] = a.inflation_sigma1;
    c["binary"] = a.binary;
    c["cv-folds"] = a.cv_folds;
    c["seed"] = a.seed;
    c["out"] = a.out;
    write_manifest(manifest_for(a.out), "power", a.seed, c, {a.out});
  }
  return 0;
}

int do_train(const TrainArgs& a, std::ostream& out) {
  const HistoricalDataset hist = load_historical_csv(a.historical);
  LearnerConfig cfg;
  cfg.max_degree = a.max_degree;
  cfg.num_terms = a.num_terms;
  cfg.cv_folds = a.cv_folds;
  cfg.seed = a.seed;
  cfg.validate();

  PrognosticModel model;
  std::ostringstream report;
  if (a.learner == "select") {
    const Selection sel = select_model_cv(hist, cfg);
    model = sel.model;
    for (const auto& s : sel.scores) {
      report << "candidate," << s.name << ','
             << (s.error.empty() ? num(std::sqrt(s.cv_mse)) : "failed: " + s.error) << '\n';
    }
  } else {
    LearnerKind kind;
    if (a.learner == "hinge") {
      kind = LearnerKind::hinge;
    } else if (a.learner == "glm-main-terms") {
      kind = LearnerKind::glm_main_terms;
    } else if (a.learner == "intercept-only") {
      kind = LearnerKind::intercept_only;
    } else {
      throw UsageError("unknown learner '" + a.learner + "'");
    }
    const Learner learner = make_learner(kind, cfg);
    model = learner.fit(hist.data());
    model.seed = a.seed;
    model.cv_rmse = cv_rmse(learner, hist, a.cv_folds, a.seed);
  }
  model.save(a.out);
  out << "learner,terms,cv_rmse\n"
      << model.learner << ',' << model.basis.size() << ',' << num(model.cv_rmse) << '\n'
      << report.str();

  json c = base_config("train");
  c["historical"] = a.historical;
  c["learner"] = a.learner;
  c["max-degree"] = a.max_degree;
  c["num-terms"] = a.num_terms;
  c["cv-folds"] = a.cv_folds;
  c["seed"] = a.seed;
  c["out"] = a.out;
  write_manifest(manifest_for(a.out), "train", a.seed, c, {a.out});
  return 0;
}

ScenarioSpec scenario_from_json(const json& j, const std::string& origin) {
  static const std::vector<std::string> keys{"name", "u1", "w1", "heterogeneous",
                                             "zeta", "u0", "w0", "form"};
  if (!j.is_object()) throw UsageError("scenario in '" + origin + "' must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
      throw UsageError("unknown scenario key '" + k + "' in '" + origin + "'");
    }
  }
  ScenarioSpec s;
  s.name = j.value("name", fs::path(origin).stem().string());
  s.u1 = j.value("u1", 0.0);
  s.w1 = j.value("w1", 0.0);
  s.heterogeneous = j.value("heterogeneous", false);
  s.zeta = j.value("zeta", 0.0);
  s.u0 = j.value("u0", 0.0);
  s.w0 = j.value("w0", 0.0);
  const std::string form = j.value("form", "inside-link");
  if (form == "inside-link") {
    s.form = TreatedMeanForm::inside_link;
  } else if (form == "link-scale") {
    s.form = TreatedMeanForm::link_scale;
  } else {
    throw UsageError("scenario form must be inside-link or link-scale");
  }
  return s;
}

json scenario_to_json(const ScenarioSpec& s) {
  json j;
  j["name"] = s.name;
  j["u1"] = s.u1;
  j["w1"] = s.w1;
  j["heterogeneous"] = s.heterogeneous;
  j["zeta"] = s.zeta;
  j["u0"] = s.u0;
  j["w0"] = s.w0;
  j["form"] = s.form == TreatedMeanForm::inside_link ? "inside-link" : "link-scale";
  return j;
}

int do_simulate(const SimulateArgs& a, std::ostream& out) {
  SimConfig cfg;
  TreatedMeanForm form;
  if (a.form == "inside-link") {
    form = TreatedMeanForm::inside_link;
  } else if (a.form == "link-scale") {
    form = TreatedMeanForm::link_scale;
  } else {
    throw UsageError("--form must be inside-link or link-scale");
  }
  cfg.form = form;
  for (const auto& sc : a.scenarios) {
    ScenarioSpec s;
    if (fs::is_regular_file(sc)) {
      std::ifstream in(sc);
      json j;
      try {
        j = json::parse(in);
      } catch (const json::parse_error& e) {
        throw UsageError("scenario file '" + sc + "' is not valid JSON: " + e.what());
      }
      s = scenario_from_json(j, sc);
    } else {
      try {
        s = named_scenario(sc);
      } catch (const DomainError& e) {
        throw UsageError(std::string(e.what()) + " (and no such scenario file)");
      }
      s.form = form;
    }
    cfg.custom_scenarios.push_back(s);
  }
  cfg.n_trial.clear();
  for (const auto& t : a.n_trial) cfg.n_trial.push_back(parse_n_trial(t));
  if (!a.estimators.empty()) {
    cfg.estimators.clear();
    for (const auto& e : a.estimators) cfg.estimators.push_back(parse_estimator(e));
  }
  cfg.n_hist = a.n_hist;
  cfg.reps = a.reps;
  cfg.workers = a.workers;
  cfg.seed = a.seed;
  cfg.crossfit = !a.no_crossfit;
  cfg.folds = a.folds;
  cfg.nb_dispersion = a.dispersion;
  cfg.alpha = a.alpha;
  cfg.target_power = a.power;
  cfg.kappa_cv_folds = a.kappa_cv_folds;
  cfg.learner.validate();

  const ExperimentResult result = run_experiment(cfg);
  const fs::path dir(a.out);
  std::vector<fs::path> files = write_experiment(result, dir);

  json c = base_config("simulate");
  c["scenario"] = a.scenarios;
  c["n-trial"] = a.n_trial;
  c["n-hist"] = a.n_hist;
  c["reps"] = a.reps;
  c["workers"] = a.workers;
  c["seed"] = a.seed;
  c["out"] = a.out;
  c["no-crossfit"] = a.no_crossfit;
  c["folds"] = a.folds;
  json ests = json::array();
  for (auto id : cfg.estimators) ests.push_back(std::string(to_string(id)));
  c["estimators"] = ests;
  c["dispersion"] = a.dispersion;
  c["alpha"] = a.alpha;
  c["power"] = a.power;
  c["kappa-cv-folds"] = a.kappa_cv_folds;
  c["form"] = a.form;
  write_text(dir / "config.json", c.dump(2) + "\n");

  json resolved = c;
  json defs = json::array();
  for (const auto& s : cfg.custom_scenarios) defs.push_back(scenario_to_json(s));
  resolved["scenario_definitions"] = defs;
  files.push_back(dir / "config.json");
  write_manifest(dir / "manifest.json", "simulate", a.seed, resolved, files);

  std::size_t failures = 0;
  for (const auto& r : result.records) failures += r.ok ? 0 : 1;
  out << "wrote " << files.size() << " files to " << dir.string() << "; " << result.records.size()
      << " estimates, " << failures << " failed\n";
  return 0;
}

}  // namespace

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string() + " for hashing");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("SHA-256 unavailable");
  }
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char b[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(b, sizeof b, "%02x", md[i]);
    hex += b;
  }
  return hex;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Covariate-adjusted marginal treatment effects for randomized trials", "glmprog"};
  app.set_version_flag("--version", std::string("glmprog ") + kVersion);
  app.require_subcommand(1, 1);

  std::string config;
  const auto config_opt = [&](CLI::App* sub) {
    sub->add_option("--config", config, "JSON config; command-line flags take precedence");
  };

  AnalyzeArgs an;
  CLI::App* analyze = app.add_subcommand("analyze", "Estimate a marginal effect from trial data");
  config_opt(analyze);
  analyze->add_option("--data", an.data, "Trial CSV (id, a, y, covariates) [required]");
  analyze->add_option("--family", an.family,
                      "normal | binomial | poisson | negative-binomial [required]");
  analyze->add_option("--link", an.link, "identity | logit | log | nb-canonical");
  analyze->add_option("--dispersion", an.dispersion, "Negative-binomial dispersion r");
  analyze->add_option("--effect", an.effect, "difference | ratio | odds-ratio");
  analyze->add_option("--design", an.design, "Term list, e.g. w:age,prognostic");
  analyze->add_option("--prognostic-model", an.model, "Model file written by train");
  analyze->add_option("--crossfit", an.crossfit, "Cross-fit the variance with k folds (0: off)");
  analyze->add_flag("--centered", an.centered, "Centered variance of the influence values");
  analyze->add_option("--pi1", an.pi1, "Randomization probability of arm 1");
  analyze->add_option("--seed", an.seed, "Fold seed");
  analyze->add_option("--alpha", an.alpha, "Significance level");
  analyze->add_option("--null", an.null_value, "Null value of the effect");
  analyze->add_option("--one-sided", an.one_sided, "none | lower | upper");
  analyze->add_option("--out", an.out, "Also write the CSV (and a manifest) here");

  PowerArgs pw;
  CLI::App* power = app.add_subcommand("power", "Required sample size from historical controls");
  config_opt(power);
  power->add_option("--historical", pw.historical, "Historical control CSV [required]");
  power->add_option("--prognostic-model", pw.model, "kappa0 from a trained model's errors");
  power->add_option("--design", pw.design, "kappa0 from a cross-validated GLM with this design");
  power->add_option("--learner", pw.learner, "kappa0 from a cross-validated learner");
  power->add_flag("--unadjusted", pw.unadjusted, "No covariate adjustment");
  power->add_option("--family", pw.family, "GLM family for --design");
  power->add_option("--link", pw.link, "GLM link for --design");
  power->add_option("--dispersion", pw.dispersion, "Negative-binomial dispersion r");
  power->add_option("--effect", pw.effect, "difference | ratio | odds-ratio");
  power->add_option("--target", pw.target, "Effect to detect [required]");
  power->add_option("--null", pw.null_value, "Null value of the effect");
  power->add_option("--alpha", pw.alpha, "Significance level");
  power->add_option("--power", pw.power, "Target power");
  power->add_flag("--one-sided", pw.one_sided, "One-sided test");
  power->add_option("--pi1", pw.pi1, "Randomization probability of arm 1");
  power->add_option("--inflation-kappa1", pw.inflation_kappa1, "kappa1^2 = factor * kappa0^2");
  power->add_option("--inflation-sigma1", pw.inflation_sigma1, "sigma1^2 = factor * sigma0^2");
  power->add_flag("--binary", pw.binary, "Binary outcome: sigma1^2 = psi1 (1 - psi1)");
  power->add_option("--cv-folds", pw.cv_folds, "Folds for cross-validated kappa0");
  power->add_option("--seed", pw.seed, "Fold seed");
  power->add_option("--out", pw.out, "Also write the CSV (and a manifest) here");

  TrainArgs tr;
  CLI::App* train = app.add_subcommand("train", "Train a prognostic model on historical controls");
  config_opt(train);
  train->add_option("--historical", tr.historical, "Historical control CSV [required]");
  train->add_option("--learner", tr.learner,
                    "select | hinge | glm-main-terms | intercept-only");
  train->add_option("--max-degree", tr.max_degree, "Hinge learner interaction degree");
  train->add_option("--num-terms", tr.num_terms, "Hinge learner term cap");
  train->add_option("--cv-folds", tr.cv_folds, "Cross-validation folds");
  train->add_option("--seed", tr.seed, "Fold seed");
  train->add_option("--out", tr.out, "Model file to write [required]");

  SimulateArgs sm;
  CLI::App* simulate = app.add_subcommand("simulate", "Run the simulation study");
  config_opt(simulate);
  simulate->add_option("--scenario", sm.scenarios, "<trial>/<historical> name or JSON file")
      ->delimiter(',');
  simulate->add_option("--n-trial", sm.n_trial, "Trial sizes or nreq:<estimator>")
      ->delimiter(',');
  simulate->add_option("--n-hist", sm.n_hist, "Historical sample size");
  simulate->add_option("--reps", sm.reps, "Replicates per scenario");
  simulate->add_option("--workers", sm.workers, "Worker threads");
  simulate->add_option("--seed", sm.seed, "Master seed");
  simulate->add_option("--out", sm.out, "Output directory [required]");
  simulate->add_flag("--no-crossfit", sm.no_crossfit, "In-sample variance");
  simulate->add_option("--folds", sm.folds, "Cross-fit folds");
  simulate->add_option("--estimators", sm.estimators, "Subset of estimators")->delimiter(',');
  simulate->add_option("--dispersion", sm.dispersion, "Working-model dispersion r");
  simulate->add_option("--alpha", sm.alpha, "Significance level");
  simulate->add_option("--power", sm.power, "Target power for n_required");
  simulate->add_option("--kappa-cv-folds", sm.kappa_cv_folds, "Folds for kappa0");
  simulate->add_option("--form", sm.form, "inside-link | link-scale");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  CLI::App* active = nullptr;
  try {
    app.parse(reversed);
    for (CLI::App* sub : {analyze, power, train, simulate}) {
      if (sub->parsed()) active = sub;
    }
    if (!config.empty()) apply_config(*active, config);
    if (active == analyze) {
      require(*analyze, {"--data", "--family"});
      require_file(an.data, "trial data");
      if (!an.model.empty()) require_file(an.model, "prognostic model");
      if (!an.out.empty()) require_parent(an.out);
    } else if (active == power) {
      require(*power, {"--historical", "--target"});
      require_file(pw.historical, "historical data");
      if (!pw.model.empty()) require_file(pw.model, "prognostic model");
      if (!pw.out.empty()) require_parent(pw.out);
    } else if (active == train) {
      require(*train, {"--historical", "--out"});
      require_file(tr.historical, "historical data");
      require_parent(tr.out);
    } else {
      require(*simulate, {"--out"});
    }
  } catch (const CLI::CallForHelp&) {
    out << (active ? active->help() : app.help());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << "glmprog " << kVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    CLI::App* sub = nullptr;
    for (CLI::App* s : {analyze, power, train, simulate}) {
      if (s->parsed()) sub = s;
    }
    err << "error: " << e.what() << "\n\n" << (sub ? sub->help() : app.help());
    return 2;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << active->help();
    return 2;
  }

  try {
    if (active == analyze) return do_analyze(an, out);
    if (active == power) return do_power(pw, out);
    if (active == train) return do_train(tr, out);
    return do_simulate(sm, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << active->help();
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace glmprog::cli
