#include "glmprog/prognostic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "glmprog/errors.hpp"
#include "glmprog/rng.hpp"
#include "glmprog/stats.hpp"

namespace glmprog {

namespace {

constexpr int kFormatVersion = 1;
constexpr double kDependence = 1e-9;
constexpr std::size_t kMinTrainRows = 20;

// Interior quantile knots of one covariate; empty for a constant column.
std::vector<double> quantile_knots(const Eigen::VectorXd& x, int num_knots) {
  std::vector<double> v(x.data(), x.data() + x.size());
  std::sort(v.begin(), v.end());
  if (v.empty() || v.front() == v.back()) return {};
  std::vector<double> knots;
  for (int j = 1; j <= num_knots; ++j) {
    const double t = stats::quantile(v, static_cast<double>(j) / (num_knots + 1));
    if (t > v.front() && t < v.back() && (knots.empty() || t > knots.back())) knots.push_back(t);
  }
  return knots;
}

struct Candidate {
  double gain = 0.0;
  int parent = -1;
  int covariate = -1;
  int sign = 0;  // 0 linear, +1/-1 single hinge side, 2 both sides
  double knot = 0.0;
};

class ForwardPass {
 public:
  ForwardPass(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const LearnerConfig& cfg)
      : x_(x), y_(y), cfg_(cfg), n_(x.rows()), p_(x.cols()) {
    cap_ = cfg.num_terms;
    min_span_ = cfg.min_span > 0
                    ? cfg.min_span
                    : static_cast<int>(std::ceil(3.0 + std::log2(static_cast<double>(p_) / 0.05)));
    basis_.resize(n_, cap_);
    qt_.resize(cap_, n_);
    knots_.resize(static_cast<std::size_t>(p_));
    segment_.resize(static_cast<std::size_t>(p_));
    usable_.assign(static_cast<std::size_t>(p_), false);
    for (Eigen::Index v = 0; v < p_; ++v) {
      const Eigen::VectorXd col = x.col(v);
      auto& k = knots_[static_cast<std::size_t>(v)];
      k = quantile_knots(col, cfg.num_knots);
      usable_[static_cast<std::size_t>(v)] = col.minCoeff() < col.maxCoeff();
      auto& seg = segment_[static_cast<std::size_t>(v)];
      seg.resize(static_cast<std::size_t>(n_));
      for (Eigen::Index i = 0; i < n_; ++i) {
        seg[static_cast<std::size_t>(i)] =
            static_cast<int>(std::lower_bound(k.begin(), k.end(), col[i]) - k.begin());
      }
    }
  }

  std::vector<BasisTerm> run() {
    const double ybar = y_.mean();
    tss_ = (y_.array() - ybar).square().sum();
    add_column(BasisTerm{}, Eigen::VectorXd::Ones(n_));
    if (tss_ <= 0.0) return terms_;

    while (m_ < cap_) {
      const double rss = r_.squaredNorm();
      if (1.0 - rss / tss_ >= 0.999) break;
      const Candidate best = best_candidate(cap_ - m_);
      if (best.parent < 0 || best.gain / tss_ < cfg_.min_rsq_gain) break;
      apply(best);
    }
    return terms_;
  }

  Eigen::MatrixXd basis_matrix() const { return basis_.leftCols(m_); }

 private:
  // Appends a column after two rounds of Gram-Schmidt. Returns false if it
  // is numerically dependent on the current columns.
  bool add_column(BasisTerm term, const Eigen::VectorXd& c) {
    Eigen::VectorXd u = c;
    for (int pass = 0; pass < 2; ++pass) {
      for (Eigen::Index j = 0; j < m_; ++j) u -= qt_.row(j).transpose() * qt_.row(j).dot(u);
    }
    const double cc = c.squaredNorm();
    const double uu = u.squaredNorm();
    if (!(cc > 0.0) || uu <= kDependence * cc) return false;
    u /= std::sqrt(uu);
    basis_.col(m_) = c;
    qt_.row(m_) = u.transpose();
    ++m_;
    if (m_ == 1) {
      r_ = y_ - u * u.dot(y_);
    } else {
      r_ -= u * u.dot(r_);
    }
    terms_.push_back(std::move(term));
    return true;
  }

  // Parents are visited in order of their last best gain; with fast_k > 0
  // only the first fast_k are rescanned. Unscanned parents rank first.
  Candidate best_candidate(int room) {
    parent_gain_.resize(static_cast<std::size_t>(m_), std::numeric_limits<double>::infinity());
    std::vector<int> order;
    for (int m = 0; m < m_; ++m) {
      if (terms_[static_cast<std::size_t>(m)].degree() < cfg_.max_degree) order.push_back(m);
    }
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return parent_gain_[static_cast<std::size_t>(a)] > parent_gain_[static_cast<std::size_t>(b)];
    });
    if (cfg_.fast_k > 0 && order.size() > static_cast<std::size_t>(cfg_.fast_k)) {
      order.resize(static_cast<std::size_t>(cfg_.fast_k));
    }
    Candidate best;
    for (int m : order) {
      const BasisTerm& parent = terms_[static_cast<std::size_t>(m)];
      Candidate local;
      for (Eigen::Index v = 0; v < p_; ++v) {
        if (!usable_[static_cast<std::size_t>(v)] || parent.uses(static_cast<int>(v))) continue;
        scan(m, static_cast<int>(v), room, local);
      }
      parent_gain_[static_cast<std::size_t>(m)] = local.gain;
      if (local.gain > best.gain) best = local;
    }
    return best;
  }

  // Gains of the linear factor and of every knot of covariate v under
  // parent m, from per-segment moment sums.
  void scan(int m, int v, int room, Candidate& best) const {
    const auto& knots = knots_[static_cast<std::size_t>(v)];
    const auto& seg = segment_[static_cast<std::size_t>(v)];
    const int K = static_cast<int>(knots.size());
    const int S = K + 1;
    std::vector<double> sp2(S, 0.0), sp2x(S, 0.0), sp2x2(S, 0.0), spr(S, 0.0), sprx(S, 0.0);
    std::vector<int> cnt(S, 0);
    Eigen::MatrixXd qp = Eigen::MatrixXd::Zero(m_, S);
    Eigen::MatrixXd qpx = Eigen::MatrixXd::Zero(m_, S);
    const auto parent = basis_.col(m);
    for (Eigen::Index i = 0; i < n_; ++i) {
      const double p = parent[i];
      if (p == 0.0) continue;
      const int s = seg[static_cast<std::size_t>(i)];
      const double xv = x_(i, v);
      const double px = p * xv;
      ++cnt[s];
      sp2[s] += p * p;
      sp2x[s] += p * px;
      sp2x2[s] += px * px;
      spr[s] += p * r_[i];
      sprx[s] += px * r_[i];
      qp.col(s).noalias() += p * qt_.col(i).head(m_);
      qpx.col(s).noalias() += px * qt_.col(i).head(m_);
    }

    // Prefix sums: index s holds segments [0, s).
    std::vector<double> c2(S + 1, 0.0), c2x(S + 1, 0.0), c2x2(S + 1, 0.0), cr(S + 1, 0.0),
        crx(S + 1, 0.0);
    std::vector<int> ccnt(S + 1, 0);
    Eigen::MatrixXd cqp = Eigen::MatrixXd::Zero(m_, S + 1);
    Eigen::MatrixXd cqpx = Eigen::MatrixXd::Zero(m_, S + 1);
    for (int s = 0; s < S; ++s) {
      ccnt[s + 1] = ccnt[s] + cnt[s];
      c2[s + 1] = c2[s] + sp2[s];
      c2x[s + 1] = c2x[s] + sp2x[s];
      c2x2[s + 1] = c2x2[s] + sp2x2[s];
      cr[s + 1] = cr[s] + spr[s];
      crx[s + 1] = crx[s] + sprx[s];
      cqp.col(s + 1) = cqp.col(s) + qp.col(s);
      cqpx.col(s + 1) = cqpx.col(s) + qpx.col(s);
    }

    // Linear factor p * x.
    {
      const double cr_lin = crx[S];
      const double cc = c2x2[S];
      const double uu = cc - cqpx.col(S).squaredNorm();
      if (cc > 0.0 && uu > kDependence * cc) {
        const double gain = cr_lin * cr_lin / uu;
        if (gain > best.gain) best = {gain, m, v, 0, 0.0};
      }
    }

    for (int k = 1; k <= K; ++k) {
      const double t = knots[static_cast<std::size_t>(k - 1)];
      // "+" side: segments >= k (x > t); "-" side: segments < k (x <= t).
      const double p2 = c2[S] - c2[k], p2x = c2x[S] - c2x[k], p2x2 = c2x2[S] - c2x2[k];
      const double pr = cr[S] - cr[k], prx = crx[S] - crx[k];
      const double b_plus = prx - t * pr;
      const double g_plus = p2x2 - 2.0 * t * p2x + t * t * p2;
      const Eigen::VectorXd a_plus = (cqpx.col(S) - cqpx.col(k)) - t * (cqp.col(S) - cqp.col(k));

      const double b_minus = t * cr[k] - crx[k];
      const double g_minus = c2x2[k] - 2.0 * t * c2x[k] + t * t * c2[k];
      const Eigen::VectorXd a_minus = t * cqp.col(k) - cqpx.col(k);

      const double upp = g_plus - a_plus.squaredNorm();
      const double umm = g_minus - a_minus.squaredNorm();
      const bool ok_plus =
          ccnt[S] - ccnt[k] >= min_span_ && g_plus > 0.0 && upp > kDependence * g_plus;
      const bool ok_minus = ccnt[k] >= min_span_ && g_minus > 0.0 && umm > kDependence * g_minus;
      const double gain_plus = ok_plus ? b_plus * b_plus / upp : 0.0;
      const double gain_minus = ok_minus ? b_minus * b_minus / umm : 0.0;

      if (room >= 2 && ok_plus && ok_minus) {
        const double upm = -a_plus.dot(a_minus);
        const double det = upp * umm - upm * upm;
        if (det > kDependence * upp * umm) {
          const double gain =
              (umm * b_plus * b_plus - 2.0 * upm * b_plus * b_minus + upp * b_minus * b_minus) /
              det;
          if (gain > best.gain) best = {gain, m, v, 2, t};
          continue;
        }
      }
      if (gain_plus >= gain_minus) {
        if (gain_plus > best.gain) best = {gain_plus, m, v, 1, t};
      } else if (gain_minus > best.gain) {
        best = {gain_minus, m, v, -1, t};
      }
    }
  }

  void apply(const Candidate& c) {
    const BasisTerm parent = terms_[static_cast<std::size_t>(c.parent)];
    const Eigen::VectorXd pcol = basis_.col(c.parent);
    const auto add_side = [&](int sign) {
      HingeFactor f{c.covariate, sign, sign == 0 ? 0.0 : c.knot};
      BasisTerm term = parent;
      term.factors.push_back(f);
      Eigen::VectorXd col(n_);
      for (Eigen::Index i = 0; i < n_; ++i) col[i] = pcol[i] * f.eval(x_(i, c.covariate));
      add_column(std::move(term), col);
    };
    if (c.sign == 2) {
      add_side(1);
      if (m_ < cap_) add_side(-1);
    } else {
      add_side(c.sign);
    }
  }

  const Eigen::MatrixXd& x_;
  const Eigen::VectorXd& y_;
  const LearnerConfig& cfg_;
  Eigen::Index n_;
  Eigen::Index p_;
  int cap_ = 0;
  int min_span_ = 0;
  std::vector<double> parent_gain_;
  int m_ = 0;
  double tss_ = 0.0;
  Eigen::MatrixXd basis_;
  Eigen::MatrixXd qt_;  // orthonormal basis, one row per column of basis_
  Eigen::VectorXd r_;
  std::vector<BasisTerm> terms_;
  std::vector<std::vector<double>> knots_;
  std::vector<std::vector<int>> segment_;
  std::vector<bool> usable_;
};

// Backward deletion on the Gram matrix; returns the kept column indices.
std::vector<int> backward_prune(const Eigen::MatrixXd& basis, const Eigen::VectorXd& y,
                                double penalty) {
  const int M = static_cast<int>(basis.cols());
  const double n = static_cast<double>(basis.rows());
  const Eigen::VectorXd yc = y.array() - y.mean();
  const Eigen::MatrixXd gram = basis.transpose() * basis;
  const Eigen::VectorXd by = basis.transpose() * yc;
  const double yy = yc.squaredNorm();

  // RSS of the set, and the RSS after dropping each member j:
  // rss + beta_j^2 / (G^-1)_jj.
  const auto rss_of = [&](const std::vector<int>& s, Eigen::VectorXd* drop_rss) {
    const auto k = static_cast<Eigen::Index>(s.size());
    Eigen::MatrixXd g(k, k);
    Eigen::VectorXd b(k);
    for (Eigen::Index a = 0; a < k; ++a) {
      b[a] = by[s[static_cast<std::size_t>(a)]];
      for (Eigen::Index c = 0; c < k; ++c) {
        g(a, c) = gram(s[static_cast<std::size_t>(a)], s[static_cast<std::size_t>(c)]);
      }
    }
    const Eigen::MatrixXd ginv = g.ldlt().solve(Eigen::MatrixXd::Identity(k, k));
    const Eigen::VectorXd beta = ginv * b;
    const double rss = std::max(0.0, yy - b.dot(beta));
    if (drop_rss != nullptr) {
      *drop_rss = Eigen::VectorXd(k);
      for (Eigen::Index j = 0; j < k; ++j) {
        (*drop_rss)[j] = ginv(j, j) > 0.0 ? rss + beta[j] * beta[j] / ginv(j, j)
                                          : std::numeric_limits<double>::infinity();
      }
    }
    return rss;
  };
  const auto gcv = [&](double rss, std::size_t terms) {
    const double m = static_cast<double>(terms);
    const double c = m + penalty * (m - 1.0) / 2.0;
    if (c >= n) return std::numeric_limits<double>::infinity();
    const double d = 1.0 - c / n;
    return (rss / n) / (d * d);
  };

  std::vector<int> active(static_cast<std::size_t>(M));
  std::iota(active.begin(), active.end(), 0);
  std::vector<int> best_set = active;
  Eigen::VectorXd after_drop;
  double best_gcv = gcv(rss_of(active, &after_drop), active.size());
  while (active.size() > 1) {
    double drop_rss = std::numeric_limits<double>::infinity();
    std::size_t drop = 0;
    for (std::size_t j = 1; j < active.size(); ++j) {
      const double rss = after_drop[static_cast<Eigen::Index>(j)];
      if (rss < drop_rss) drop_rss = rss, drop = j;
    }
    if (drop == 0) break;
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(drop));
    drop_rss = rss_of(active, &after_drop);
    const double g = gcv(drop_rss, active.size());
    if (g <= best_gcv) best_gcv = g, best_set = active;
  }
  return best_set;
}

void require_rows(const DataTable& data, std::size_t min_rows, const std::string& learner) {
  if (data.size() < min_rows) {
    throw DataError(learner + " needs at least " + std::to_string(min_rows) + " rows, got " +
                    std::to_string(data.size()));
  }
}

PrognosticModel fit_on_basis(std::string learner, const DataTable& train,
                             std::vector<BasisTerm> basis) {
  PrognosticModel model;
  model.learner = std::move(learner);
  model.covariate_names = train.covariate_names;
  model.n_train = train.size();
  const auto n = static_cast<Eigen::Index>(train.size());
  Eigen::MatrixXd b(n, static_cast<Eigen::Index>(basis.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < basis.size(); ++j) {
      b(i, static_cast<Eigen::Index>(j)) = basis[j].eval(train.w.row(i));
    }
  }
  model.weights = b.colPivHouseholderQr().solve(train.y);
  model.basis = std::move(basis);
  return model;
}

}  // namespace

double HingeFactor::eval(double w) const {
  if (sign == 0) return w;
  return stats::hinge(sign > 0 ? w - knot : knot - w);
}

bool BasisTerm::uses(int covariate) const {
  return std::any_of(factors.begin(), factors.end(),
                     [&](const HingeFactor& f) { return f.covariate == covariate; });
}

double BasisTerm::eval(const Eigen::Ref<const Eigen::RowVectorXd>& w) const {
  double v = 1.0;
  for (const auto& f : factors) {
    v *= f.eval(w[f.covariate]);
    if (v == 0.0) break;
  }
  return v;
}

Eigen::VectorXd PrognosticModel::predict(const Eigen::MatrixXd& w) const {
  return predict_scores(*this, w);
}

void PrognosticModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write model file " + path.string());
  char buf[64];
  const auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  out << "glmprog-prognostic-model " << kFormatVersion << "\n";
  out << "learner " << learner << "\n";
  out << "covariates " << covariate_names.size();
  for (const auto& c : covariate_names) out << " " << c;
  out << "\n";
  out << "n_train " << n_train << "\n";
  out << "seed " << seed << "\n";
  out << "cv_rmse " << (std::isnan(cv_rmse) ? std::string("nan") : num(cv_rmse)) << "\n";
  out << "terms " << basis.size() << "\n";
  for (std::size_t j = 0; j < basis.size(); ++j) {
    out << "term " << num(weights[static_cast<Eigen::Index>(j)]) << " "
        << basis[j].factors.size();
    for (const auto& f : basis[j].factors) {
      out << " " << f.sign << " " << covariate_names[static_cast<std::size_t>(f.covariate)] << " "
          << num(f.knot);
    }
    out << "\n";
  }
  if (!out) throw DataError("failed writing model file " + path.string());
}

PrognosticModel PrognosticModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model file " + path.string());
  const auto bad = [&](const std::string& why) {
    return DataError("model file " + path.string() + ": " + why);
  };
  const auto expect = [&](std::istream& is, const std::string& key) {
    std::string k;
    if (!(is >> k) || k != key) throw bad("expected '" + key + "'");
  };

  PrognosticModel m;
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "glmprog-prognostic-model") {
    throw bad("not a prognostic model file");
  }
  if (version != kFormatVersion) throw bad("unsupported format version " + std::to_string(version));
  expect(in, "learner");
  in >> m.learner;
  expect(in, "covariates");
  std::size_t p = 0;
  in >> p;
  m.covariate_names.resize(p);
  for (auto& c : m.covariate_names) in >> c;
  expect(in, "n_train");
  in >> m.n_train;
  expect(in, "seed");
  in >> m.seed;
  expect(in, "cv_rmse");
  std::string cv;
  in >> cv;
  m.cv_rmse = cv == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(cv);
  expect(in, "terms");
  std::size_t terms = 0;
  if (!(in >> terms)) throw bad("missing term count");
  m.basis.resize(terms);
  m.weights.resize(static_cast<Eigen::Index>(terms));
  for (std::size_t j = 0; j < terms; ++j) {
    expect(in, "term");
    std::size_t nf = 0;
    if (!(in >> m.weights[static_cast<Eigen::Index>(j)] >> nf)) throw bad("malformed term line");
    for (std::size_t f = 0; f < nf; ++f) {
      HingeFactor hf;
      std::string name;
      if (!(in >> hf.sign >> name >> hf.knot)) throw bad("malformed factor");
      const auto it = std::find(m.covariate_names.begin(), m.covariate_names.end(), name);
      if (it == m.covariate_names.end()) throw bad("factor uses unknown covariate " + name);
      if (hf.sign < -1 || hf.sign > 1) throw bad("factor sign must be -1, 0 or 1");
      hf.covariate = static_cast<int>(it - m.covariate_names.begin());
      m.basis[j].factors.push_back(hf);
    }
  }
  if (!in) throw bad("truncated file");
  return m;
}

std::string_view to_string(LearnerKind k) {
  switch (k) {
    case LearnerKind::hinge: return "hinge";
    case LearnerKind::glm_main_terms: return "glm-main-terms";
    case LearnerKind::intercept_only: return "intercept-only";
  }
  return "?";
}

LearnerKind parse_learner(std::string_view name) {
  for (auto k : {LearnerKind::hinge, LearnerKind::glm_main_terms, LearnerKind::intercept_only}) {
    if (to_string(k) == name) return k;
  }
  throw DomainError("unknown learner '" + std::string(name) + "'");
}

void LearnerConfig::validate() const {
  if (max_degree < 1) throw DomainError("max_degree must be at least 1");
  if (num_terms < 1) throw DomainError("num_terms must be at least 1");
  if (num_knots < 1) throw DomainError("num_knots must be at least 1");
  if (min_span < 0) throw DomainError("min_span must be nonnegative");
  if (fast_k < 0) throw DomainError("fast_k must be nonnegative");
  if (cv_folds < 2) throw DomainError("cv_folds must be at least 2");
  if (candidate_library.empty()) throw DomainError("candidate library is empty");
}

Learner make_learner(LearnerKind kind, const LearnerConfig& cfg) {
  switch (kind) {
    case LearnerKind::hinge:
      return {"hinge", [cfg](const DataTable& d) { return train_hinge_learner(d, cfg); }};
    case LearnerKind::glm_main_terms:
      return {"glm-main-terms", [](const DataTable& d) { return train_linear(d); }};
    case LearnerKind::intercept_only:
      return {"intercept-only", [](const DataTable& d) { return train_intercept_only(d); }};
  }
  throw DomainError("unknown learner kind");
}

PrognosticModel train_hinge_learner(const DataTable& train, const LearnerConfig& cfg) {
  cfg.validate();
  require_rows(train, kMinTrainRows, "hinge learner");
  ForwardPass forward(train.w, train.y, cfg);
  std::vector<BasisTerm> terms = forward.run();
  std::vector<BasisTerm> kept;
  if (terms.size() > 1) {
    for (int j : backward_prune(forward.basis_matrix(), train.y, cfg.gcv_penalty)) {
      kept.push_back(terms[static_cast<std::size_t>(j)]);
    }
  } else {
    kept = terms;
  }
  PrognosticModel model = fit_on_basis("hinge", train, std::move(kept));
  model.seed = cfg.seed;
  return model;
}

PrognosticModel train_hinge_learner(const HistoricalDataset& train, const LearnerConfig& cfg) {
  return train_hinge_learner(train.data(), cfg);
}

PrognosticModel train_linear(const DataTable& train) {
  require_rows(train, 2, "glm-main-terms");
  std::vector<BasisTerm> basis{BasisTerm{}};
  for (std::size_t v = 0; v < train.num_covariates(); ++v) {
    const auto col = train.w.col(static_cast<Eigen::Index>(v));
    if (col.minCoeff() < col.maxCoeff()) {
      basis.push_back(BasisTerm{{HingeFactor{static_cast<int>(v), 0, 0.0}}});
    }
  }
  return fit_on_basis("glm-main-terms", train, std::move(basis));
}

PrognosticModel train_intercept_only(const DataTable& train) {
  require_rows(train, 1, "intercept-only");
  return fit_on_basis("intercept-only", train, {BasisTerm{}});
}

double CvResult::rmse() const { return std::sqrt(mse); }

CvResult cross_validate(const Learner& learner, const DataTable& data, int k, std::uint64_t seed) {
  const std::vector<int> arms(data.size(), 0);
  CvResult res;
  res.folds = make_folds(data.size(), arms, k, seed);
  res.oof_predictions = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(data.size()));
  for (int f = 0; f < k; ++f) {
    const auto train_rows = res.folds.complement(f);
    const auto test_rows = res.folds.members(f);
    const PrognosticModel model = learner.fit(data.subset(train_rows));
    const DataTable test = data.subset(test_rows);
    const Eigen::VectorXd pred = predict_scores(model, test.w);
    for (std::size_t j = 0; j < test_rows.size(); ++j) {
      res.oof_predictions[static_cast<Eigen::Index>(test_rows[j])] =
          pred[static_cast<Eigen::Index>(j)];
    }
  }
  res.mse = (data.y - res.oof_predictions).squaredNorm() / static_cast<double>(data.size());
  return res;
}

double cv_rmse(const Learner& learner, const DataTable& data, int k, std::uint64_t seed) {
  return cross_validate(learner, data, k, seed).rmse();
}

double cv_rmse(const Learner& learner, const HistoricalDataset& data, int k, std::uint64_t seed) {
  return cv_rmse(learner, data.data(), k, seed);
}

Selection select_model_cv(const std::vector<Learner>& candidates, const DataTable& data,
                          const LearnerConfig& cfg) {
  if (candidates.empty()) throw DomainError("candidate library is empty");
  if (cfg.cv_folds < 2) throw DomainError("cv_folds must be at least 2");
  Selection sel;
  bool any = false;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    CandidateScore score;
    score.name = candidates[c].name;
    try {
      score.cv_mse = cross_validate(candidates[c], data, cfg.cv_folds, cfg.seed).mse;
      if (!any || score.cv_mse < sel.scores[sel.winner].cv_mse) sel.winner = c;
      any = true;
    } catch (const Error& e) {
      score.error = e.what();
    }
    sel.scores.push_back(std::move(score));
  }
  if (!any) {
    std::string msg = "every candidate learner failed:";
    for (const auto& s : sel.scores) msg += " [" + s.name + ": " + s.error + "]";
    throw Error(msg);
  }
  sel.model = candidates[sel.winner].fit(data);
  sel.model.seed = cfg.seed;
  sel.model.cv_rmse = std::sqrt(sel.scores[sel.winner].cv_mse);
  return sel;
}

Selection select_model_cv(const HistoricalDataset& data, const LearnerConfig& cfg) {
  cfg.validate();
  std::vector<Learner> lib;
  for (auto k : cfg.candidate_library) lib.push_back(make_learner(k, cfg));
  return select_model_cv(lib, data.data(), cfg);
}

Eigen::VectorXd predict_scores(const PrognosticModel& model, const Eigen::MatrixXd& w) {
  if (static_cast<std::size_t>(w.cols()) != model.covariate_names.size()) {
    throw DataError("covariate matrix has " + std::to_string(w.cols()) +
                    " columns, prognostic model expects " +
                    std::to_string(model.covariate_names.size()));
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(w.rows());
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < model.basis.size(); ++j) {
      s += model.weights[static_cast<Eigen::Index>(j)] * model.basis[j].eval(w.row(i));
    }
    out[i] = s;
  }
  return out;
}

Eigen::VectorXd floor_scores_for_link(const Eigen::VectorXd& scores, const FamilyLink& fl) {
  constexpr double eps = 1e-6;
  Eigen::VectorXd out = scores;
  switch (fl.link()) {
    case Link::identity: break;
    case Link::log:
    case Link::nb_canonical: out = out.cwiseMax(eps); break;
    case Link::logit: out = out.cwiseMax(eps).cwiseMin(1.0 - eps); break;
  }
  return out;
}

Eigen::VectorXd shuffle_scores(const Eigen::VectorXd& scores, std::uint64_t seed) {
  if (scores.size() < 2) throw DataError("shuffling needs at least two scores");
  std::vector<double> v(scores.data(), scores.data() + scores.size());
  Rng rng = make_rng(seed);
  std::shuffle(v.begin(), v.end(), rng);
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace glmprog
