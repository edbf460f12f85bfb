#include "glmprog/trial_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>

#include "glmprog/errors.hpp"
#include "glmprog/rng.hpp"

namespace glmprog {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

std::string row_label(std::size_t row) { return "row " + std::to_string(row); }

double parse_number(std::string_view field, std::size_t row, std::string_view column) {
  if (field.empty() || field == "NA" || field == "NaN" || field == "nan") {
    throw DataError(row_label(row) + ": missing value in column '" + std::string(column) +
                    "'");
  }
  double value = 0.0;
  const char* first = field.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw DataError(row_label(row) + ": cannot parse '" + std::string(field) +
                    "' in column '" + std::string(column) + "'");
  }
  if (!std::isfinite(value)) {
    throw DataError(row_label(row) + ": non-finite value in column '" +
                    std::string(column) + "'");
  }
  return value;
}

int parse_arm(std::string_view field, std::size_t row) {
  if (field == "0") return 0;
  if (field == "1") return 1;
  throw DataError(row_label(row) + ": arm value '" + std::string(field) +
                  "' is not 0 or 1");
}

struct RawCsv {
  std::vector<std::string> header;
  std::vector<std::string> lines;
};

RawCsv read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  RawCsv raw;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!have_header) {
      if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
          static_cast<unsigned char>(line[1]) == 0xBB &&
          static_cast<unsigned char>(line[2]) == 0xBF) {
        line.erase(0, 3);
      }
      if (trim(line).empty()) continue;
      for (auto f : split_fields(line)) raw.header.emplace_back(f);
      have_header = true;
      continue;
    }
    if (trim(line).empty()) continue;
    raw.lines.push_back(std::move(line));
  }
  if (!have_header) throw DataError("'" + path.string() + "' is an empty file");
  return raw;
}

std::optional<std::size_t> column_index(const std::vector<std::string>& header,
                                        std::string_view name) {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) return std::nullopt;
  return static_cast<std::size_t>(it - header.begin());
}

// Parses every row into a table. `arm_required` controls whether a missing
// `a` column is an error (trial) or implies zeros (historical).
DataTable parse_table(const RawCsv& raw, bool arm_required) {
  const auto id_col = column_index(raw.header, "id");
  const auto y_col = column_index(raw.header, "y");
  const auto a_col = column_index(raw.header, "a");
  if (!id_col) throw DataError("missing column 'id'");
  if (!y_col) throw DataError("missing column 'y'");
  if (arm_required && !a_col) throw DataError("missing column 'a'");

  std::vector<std::size_t> cov_cols;
  DataTable t;
  for (std::size_t c = 0; c < raw.header.size(); ++c) {
    if (c == *id_col || c == *y_col || (a_col && c == *a_col)) continue;
    if (raw.header[c].empty()) throw DataError("empty column name in header");
    if (std::count(raw.header.begin(), raw.header.end(), raw.header[c]) > 1) {
      throw DataError("duplicate column '" + raw.header[c] + "'");
    }
    cov_cols.push_back(c);
    t.covariate_names.push_back(raw.header[c]);
  }
  if (raw.lines.empty()) throw DataError("file has a header but no data rows");

  const std::size_t n = raw.lines.size();
  t.ids.reserve(n);
  t.w.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cov_cols.size()));
  t.a.resize(static_cast<Eigen::Index>(n));
  t.y.resize(static_cast<Eigen::Index>(n));
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t row = r + 1;
    const auto fields = split_fields(raw.lines[r]);
    if (fields.size() != raw.header.size()) {
      throw DataError(row_label(row) + ": expected " + std::to_string(raw.header.size()) +
                      " fields, found " + std::to_string(fields.size()));
    }
    if (fields[*id_col].empty()) throw DataError(row_label(row) + ": empty id");
    t.ids.emplace_back(fields[*id_col]);
    const auto ri = static_cast<Eigen::Index>(r);
    t.a(ri) = a_col ? parse_arm(fields[*a_col], row) : 0;
    t.y(ri) = parse_number(fields[*y_col], row, "y");
    for (std::size_t j = 0; j < cov_cols.size(); ++j) {
      t.w(ri, static_cast<Eigen::Index>(j)) =
          parse_number(fields[cov_cols[j]], row, raw.header[cov_cols[j]]);
    }
  }
  return t;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Observation DataTable::observation(std::size_t i) const {
  const auto r = static_cast<Eigen::Index>(i);
  Observation o;
  o.id = ids.at(i);
  o.w.resize(num_covariates());
  for (std::size_t j = 0; j < num_covariates(); ++j) o.w[j] = w(r, static_cast<Eigen::Index>(j));
  o.a = a(r);
  o.y = y(r);
  return o;
}

void DataTable::validate() const {
  const auto n = static_cast<Eigen::Index>(ids.size());
  if (w.rows() != n || a.size() != n || y.size() != n ||
      w.cols() != static_cast<Eigen::Index>(covariate_names.size())) {
    throw DataError("inconsistent table dimensions");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = static_cast<std::size_t>(i) + 1;
    if (a(i) != 0 && a(i) != 1) {
      throw DataError(row_label(row) + ": arm value " + std::to_string(a(i)) +
                      " is not 0 or 1");
    }
    if (!std::isfinite(y(i))) throw DataError(row_label(row) + ": non-finite outcome");
    if (!w.row(i).allFinite()) throw DataError(row_label(row) + ": non-finite covariate");
  }
}

DataTable DataTable::subset(std::span<const std::size_t> rows) const {
  DataTable out;
  out.covariate_names = covariate_names;
  const auto m = static_cast<Eigen::Index>(rows.size());
  out.ids.reserve(rows.size());
  out.w.resize(m, w.cols());
  out.a.resize(m);
  out.y.resize(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto src = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(k)]);
    out.ids.push_back(ids.at(static_cast<std::size_t>(src)));
    out.w.row(k) = w.row(src);
    out.a(k) = a(src);
    out.y(k) = y(src);
  }
  return out;
}

DataTable DataTable::from_observations(std::vector<std::string> names,
                                       std::span<const Observation> rows) {
  DataTable t;
  t.covariate_names = std::move(names);
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto p = static_cast<Eigen::Index>(t.covariate_names.size());
  t.w.resize(n, p);
  t.a.resize(n);
  t.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& o = rows[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(o.w.size()) != p) {
      throw DataError(row_label(static_cast<std::size_t>(i) + 1) +
                      ": covariate vector has the wrong length");
    }
    t.ids.push_back(o.id);
    for (Eigen::Index j = 0; j < p; ++j) t.w(i, j) = o.w[static_cast<std::size_t>(j)];
    t.a(i) = o.a;
    t.y(i) = o.y;
  }
  t.validate();
  return t;
}

TrialDataset::TrialDataset(DataTable data, double pi1) : data_(std::move(data)), pi1_(pi1) {
  if (!(pi1 > 0.0 && pi1 < 1.0)) {
    throw DataError("treatment probability must lie strictly between 0 and 1");
  }
  data_.validate();
  n1_ = static_cast<std::size_t>(data_.a.sum());
}

void TrialDataset::require_both_arms() const {
  if (n1_ == 0 || n0() == 0) throw DataError("both arms must contain observations");
}

HistoricalDataset::HistoricalDataset(DataTable data) : data_(std::move(data)) {
  data_.validate();
  for (Eigen::Index i = 0; i < data_.a.size(); ++i) {
    if (data_.a(i) != 0) {
      throw DataError(row_label(static_cast<std::size_t>(i) + 1) +
                      ": historical data must be control-only (a = 0)");
    }
  }
}

std::vector<std::size_t> FoldAssignment::members(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i)
    if (fold_of[i] == fold) out.push_back(i);
  return out;
}

std::vector<std::size_t> FoldAssignment::complement(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i)
    if (fold_of[i] != fold) out.push_back(i);
  return out;
}

TrialDataset load_trial_csv(const std::filesystem::path& path, double pi1) {
  return TrialDataset(parse_table(read_csv(path), true), pi1);
}

HistoricalDataset load_historical_csv(const std::filesystem::path& path) {
  return HistoricalDataset(parse_table(read_csv(path), false));
}

void write_csv(const DataTable& table, const std::filesystem::path& path, bool include_arm) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "id";
  if (include_arm) out << ",a";
  out << ",y";
  for (const auto& name : table.covariate_names) out << ',' << name;
  out << '\n';
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out << table.ids[i];
    if (include_arm) out << ',' << table.a(r);
    out << ',' << format_double(table.y(r));
    for (Eigen::Index j = 0; j < table.w.cols(); ++j) out << ',' << format_double(table.w(r, j));
    out << '\n';
  }
}

FoldAssignment make_folds(std::size_t n, std::span<const int> arms, int k, std::uint64_t seed) {
  if (arms.size() != n) throw FoldError("arm vector length does not match n");
  if (k < 2) throw FoldError("fold count must be at least 2");

  std::vector<std::size_t> by_arm[2];
  for (std::size_t i = 0; i < n; ++i) {
    if (arms[i] != 0 && arms[i] != 1) throw FoldError("arm values must be 0 or 1");
    by_arm[arms[i]].push_back(i);
  }
  for (int arm = 0; arm < 2; ++arm) {
    const auto size = by_arm[arm].size();
    if (size > 0 && size < static_cast<std::size_t>(k)) {
      throw FoldError("cannot build " + std::to_string(k) + " stratified folds: arm " +
                      std::to_string(arm) + " has only " + std::to_string(size) +
                      " members");
    }
  }
  if (n < static_cast<std::size_t>(k)) throw FoldError("fewer rows than folds");

  FoldAssignment out;
  out.k = k;
  out.seed = seed;
  out.fold_of.assign(n, -1);
  Rng rng = make_rng(seed);
  std::size_t offset = 0;
  for (auto& members : by_arm) {
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t pos = 0; pos < members.size(); ++pos) {
      out.fold_of[members[pos]] = static_cast<int>((offset + pos) % static_cast<std::size_t>(k));
    }
    offset = (offset + members.size()) % static_cast<std::size_t>(k);
  }
  return out;
}

std::pair<HistoricalDataset, HistoricalDataset> split_historical(const HistoricalDataset& data,
                                                                 double train_frac,
                                                                 std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) {
    throw DataError("train fraction must lie strictly between 0 and 1");
  }
  const std::size_t n = data.n();
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * train_frac));
  if (n_train == 0 || n_train >= n) {
    throw DataError("split of " + std::to_string(n) + " rows at fraction " +
                    std::to_string(train_frac) + " leaves an empty part");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {HistoricalDataset(data.data().subset(train)), HistoricalDataset(data.data().subset(test))};
}

}  // namespace glmprog
