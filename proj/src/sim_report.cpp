#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "glmprog/errors.hpp"
#include "glmprog/sim_lab.hpp"
#include "glmprog/stats.hpp"

namespace glmprog {

namespace {

std::string fmt(double v) {
  if (!std::isfinite(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

const char* kPalette[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"};

struct Panel {
  std::string scenario;
  std::vector<std::string> labels;  // x categories
};

std::vector<Panel> panels_of(const std::vector<SummaryRow>& rows) {
  std::vector<Panel> panels;
  for (const auto& r : rows) {
    auto it = std::find_if(panels.begin(), panels.end(),
                           [&](const Panel& p) { return p.scenario == r.scenario; });
    if (it == panels.end()) {
      panels.push_back({r.scenario, {}});
      it = panels.end() - 1;
    }
    if (std::find(it->labels.begin(), it->labels.end(), r.n_label) == it->labels.end()) {
      it->labels.push_back(r.n_label);
    }
  }
  return panels;
}

std::vector<EstimatorId> estimators_of(const std::vector<SummaryRow>& rows) {
  std::vector<EstimatorId> ids;
  for (const auto& r : rows) {
    if (std::find(ids.begin(), ids.end(), r.estimator) == ids.end()) ids.push_back(r.estimator);
  }
  return ids;
}

constexpr double kPanelW = 420, kPanelH = 260, kMargin = 50;

void svg_text(std::ostream& os, double x, double y, std::string_view text,
              const char* anchor = "middle", int size = 11) {
  os << "<text x=\"" << x << "\" y=\"" << y << "\" font-size=\"" << size
     << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\">" << text << "</text>\n";
}

void legend(std::ostream& os, const std::vector<EstimatorId>& ids, double x, double y) {
  for (std::size_t e = 0; e < ids.size(); ++e) {
    const double yy = y + 16.0 * static_cast<double>(e);
    os << "<rect x=\"" << x << "\" y=\"" << yy - 9 << "\" width=\"10\" height=\"10\" fill=\""
       << kPalette[e % 6] << "\"/>\n";
    svg_text(os, x + 14, yy, to_string(ids[e]), "start");
  }
}

// One panel per scenario, estimators as coloured series over the size labels.
void line_chart(const std::vector<SummaryRow>& rows, double SummaryRow::*metric,
                std::string_view title, double lo, double hi, std::optional<double> ref,
                const std::filesystem::path& path) {
  const auto panels = panels_of(rows);
  const auto ids = estimators_of(rows);
  const double width = kPanelW * static_cast<double>(std::max<std::size_t>(1, panels.size())) + 180;
  std::ofstream os = open_out(path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
     << kPanelH + 40 << "\">\n";
  svg_text(os, width / 2, 16, title, "middle", 14);
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const Panel& panel = panels[p];
    const double x0 = kPanelW * static_cast<double>(p) + kMargin;
    const double y0 = 40, w = kPanelW - kMargin - 10, h = kPanelH - kMargin;
    const auto sx = [&](std::size_t i) {
      return panel.labels.size() <= 1
                 ? x0 + w / 2
                 : x0 + w * static_cast<double>(i) / static_cast<double>(panel.labels.size() - 1);
    };
    const auto sy = [&](double v) { return y0 + h * (1.0 - (std::clamp(v, lo, hi) - lo) / (hi - lo)); };
    os << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << w << "\" height=\"" << h
       << "\" fill=\"none\" stroke=\"#444\"/>\n";
    svg_text(os, x0 + w / 2, y0 - 6, panel.scenario);
    for (double t : {lo, (lo + hi) / 2, hi}) svg_text(os, x0 - 4, sy(t) + 4, fmt(t).substr(0, 5), "end", 9);
    if (ref) {
      os << "<line x1=\"" << x0 << "\" x2=\"" << x0 + w << "\" y1=\"" << sy(*ref) << "\" y2=\""
         << sy(*ref) << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
    }
    for (std::size_t i = 0; i < panel.labels.size(); ++i) {
      svg_text(os, sx(i), y0 + h + 14, panel.labels[i], "middle", 9);
    }
    for (std::size_t e = 0; e < ids.size(); ++e) {
      std::ostringstream pts;
      for (std::size_t i = 0; i < panel.labels.size(); ++i) {
        for (const auto& r : rows) {
          if (r.scenario == panel.scenario && r.n_label == panel.labels[i] &&
              r.estimator == ids[e] && std::isfinite(r.*metric)) {
            pts << sx(i) << ',' << sy(r.*metric) << ' ';
            os << "<circle cx=\"" << sx(i) << "\" cy=\"" << sy(r.*metric) << "\" r=\"2.5\" fill=\""
               << kPalette[e % 6] << "\"/>\n";
          }
        }
      }
      os << "<polyline fill=\"none\" stroke=\"" << kPalette[e % 6] << "\" points=\"" << pts.str()
         << "\"/>\n";
    }
  }
  legend(os, ids, width - 170, 50);
  os << "</svg>\n";
}

void box_chart(const std::vector<SummaryRow>& rows, const std::filesystem::path& path) {
  const auto panels = panels_of(rows);
  const auto ids = estimators_of(rows);
  double lo = 1.0, hi = 1.0;
  for (const auto& r : rows) {
    for (double v : r.relative_se) {
      if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
    }
  }
  lo = std::floor(lo * 10) / 10;
  hi = std::ceil(hi * 10) / 10;
  if (hi - lo < 0.2) hi = lo + 0.2;
  const double width = kPanelW * static_cast<double>(std::max<std::size_t>(1, panels.size())) + 180;
  std::ofstream os = open_out(path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
     << kPanelH + 40 << "\">\n";
  svg_text(os, width / 2, 16, "Standard error relative to covariate adjustment", "middle", 14);
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const Panel& panel = panels[p];
    const double x0 = kPanelW * static_cast<double>(p) + kMargin;
    const double y0 = 40, w = kPanelW - kMargin - 10, h = kPanelH - kMargin;
    const auto sy = [&](double v) { return y0 + h * (1.0 - (v - lo) / (hi - lo)); };
    os << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << w << "\" height=\"" << h
       << "\" fill=\"none\" stroke=\"#444\"/>\n";
    svg_text(os, x0 + w / 2, y0 - 6, panel.scenario);
    for (double t : {lo, 1.0, hi}) svg_text(os, x0 - 4, sy(t) + 4, fmt(t).substr(0, 4), "end", 9);
    os << "<line x1=\"" << x0 << "\" x2=\"" << x0 + w << "\" y1=\"" << sy(1.0) << "\" y2=\""
       << sy(1.0) << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
    const double group = w / static_cast<double>(std::max<std::size_t>(1, panel.labels.size()));
    const double bw = group / static_cast<double>(ids.size() + 1);
    for (std::size_t i = 0; i < panel.labels.size(); ++i) {
      svg_text(os, x0 + group * (static_cast<double>(i) + 0.5), y0 + h + 14, panel.labels[i],
               "middle", 9);
      for (std::size_t e = 0; e < ids.size(); ++e) {
        for (const auto& r : rows) {
          if (r.scenario != panel.scenario || r.n_label != panel.labels[i] ||
              r.estimator != ids[e] || r.relative_se.empty()) {
            continue;
          }
          const double lo_w = stats::quantile(r.relative_se, 0.05);
          const double hi_w = stats::quantile(r.relative_se, 0.95);
          const double bx = x0 + group * static_cast<double>(i) + bw * (static_cast<double>(e) + 0.5);
          const double cx = bx + bw * 0.4;
          os << "<line x1=\"" << cx << "\" x2=\"" << cx << "\" y1=\"" << sy(lo_w) << "\" y2=\""
             << sy(hi_w) << "\" stroke=\"" << kPalette[e % 6] << "\"/>\n";
          os << "<rect x=\"" << bx << "\" y=\"" << sy(r.re_q3) << "\" width=\"" << bw * 0.8
             << "\" height=\"" << std::max(0.5, sy(r.re_q1) - sy(r.re_q3)) << "\" fill=\""
             << kPalette[e % 6] << "\" fill-opacity=\"0.5\" stroke=\"" << kPalette[e % 6]
             << "\"/>\n";
          os << "<line x1=\"" << bx << "\" x2=\"" << bx + bw * 0.8 << "\" y1=\""
             << sy(r.re_median) << "\" y2=\"" << sy(r.re_median) << "\" stroke=\"#000\"/>\n";
        }
      }
    }
  }
  legend(os, ids, width - 170, 50);
  os << "</svg>\n";
}

}  // namespace

void write_replicates_csv(const std::vector<ReplicateRecord>& records,
                          const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "scenario,rep,n_label,n_trial,estimator,status,psi_hat,se,ci_lo,ci_hi,significant,"
         "covered,n_required\n";
  for (const auto& r : records) {
    out << csv_field(r.scenario) << ',' << r.rep << ',' << csv_field(r.n_label) << ','
        << r.n_trial << ',' << to_string(r.estimator) << ','
        << (r.ok ? std::string("ok") : csv_field("error: " + r.error)) << ',';
    if (r.ok) {
      out << fmt(r.psi_hat) << ',' << fmt(r.se) << ',' << fmt(r.ci_lo) << ',' << fmt(r.ci_hi)
          << ',' << int(r.significant) << ',' << int(r.covered);
    } else {
      out << "NA,NA,NA,NA,NA,NA";
    }
    out << ',' << fmt(r.n_required) << '\n';
  }
}

void write_summary_csv(const std::vector<SummaryRow>& rows, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "scenario,n_label,n_trial,estimator,reps_ok,failures,coverage,power,mean_psi,mean_se,"
         "re_median,re_q1,re_q3,mean_n_required\n";
  for (const auto& r : rows) {
    out << csv_field(r.scenario) << ',' << csv_field(r.n_label) << ',' << r.n_trial << ','
        << to_string(r.estimator) << ',' << r.reps_ok << ',' << r.failures << ','
        << fmt(r.coverage) << ',' << fmt(r.power) << ',' << fmt(r.mean_psi) << ','
        << fmt(r.mean_se) << ',' << fmt(r.re_median) << ',' << fmt(r.re_q1) << ','
        << fmt(r.re_q3) << ',' << fmt(r.mean_n_required) << '\n';
  }
}

std::vector<std::filesystem::path> write_experiment(const ExperimentResult& result,
                                                    const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::vector<std::filesystem::path> paths{
      out_dir / "replicates.csv", out_dir / "summary.csv", out_dir / "coverage.svg",
      out_dir / "power.svg", out_dir / "efficiency.svg"};
  write_replicates_csv(result.records, paths[0]);
  write_summary_csv(result.summary, paths[1]);
  line_chart(result.summary, &SummaryRow::coverage, "Coverage of the 95% interval", 0.8, 1.0, 0.95,
             paths[2]);
  line_chart(result.summary, &SummaryRow::power, "Power", 0.0, 1.0, 0.8, paths[3]);
  box_chart(result.summary, paths[4]);
  return paths;
}

}  // namespace glmprog
