#pragma once

// Trial and historical datasets: columnar storage, CSV ingestion, fold
// assignment and train/test splitting.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace glmprog {

struct Observation {
  std::string id;
  std::vector<double> w;
  int a = 0;
  double y = 0.0;
};

// Column-major storage shared by both dataset kinds. Rows are observations,
// `w` has one column per named covariate.
struct DataTable {
  std::vector<std::string> ids;
  std::vector<std::string> covariate_names;
  Eigen::MatrixXd w;
  Eigen::VectorXi a;
  Eigen::VectorXd y;

  std::size_t size() const { return ids.size(); }
  std::size_t num_covariates() const { return covariate_names.size(); }
  Observation observation(std::size_t i) const;

  // Throws DataError on shape mismatches, arm values outside {0,1} or
  // non-finite numbers.
  void validate() const;

  DataTable subset(std::span<const std::size_t> rows) const;
  static DataTable from_observations(std::vector<std::string> covariate_names,
                                     std::span<const Observation> rows);
};

// Randomized trial sample (provenance D = 1) with the design probability of
// treatment pi1, which is supplied by the user and never estimated.
class TrialDataset {
 public:
  TrialDataset(DataTable data, double pi1);

  const DataTable& data() const { return data_; }
  double pi1() const { return pi1_; }
  double pi0() const { return 1.0 - pi1_; }
  double pi(int arm) const { return arm == 1 ? pi1_ : 1.0 - pi1_; }
  std::size_t n() const { return data_.size(); }
  std::size_t n1() const { return n1_; }
  std::size_t n0() const { return n() - n1_; }

  // Analysis operations need both arms; throws DataError otherwise.
  void require_both_arms() const;

  static constexpr int provenance = 1;

 private:
  DataTable data_;
  double pi1_;
  std::size_t n1_ = 0;
};

// Control-only external data (provenance D = 0).
class HistoricalDataset {
 public:
  explicit HistoricalDataset(DataTable data);

  const DataTable& data() const { return data_; }
  std::size_t n() const { return data_.size(); }

  static constexpr int provenance = 0;

 private:
  DataTable data_;
};

struct FoldAssignment {
  int k = 0;
  std::vector<int> fold_of;
  std::uint64_t seed = 0;

  std::vector<std::size_t> members(int fold) const;
  std::vector<std::size_t> complement(int fold) const;
};

TrialDataset load_trial_csv(const std::filesystem::path& path, double pi1);
HistoricalDataset load_historical_csv(const std::filesystem::path& path);

// Writes `id,a,y,<covariates>` (or `id,y,<covariates>` without the arm) with
// round-trip precision.
void write_csv(const DataTable& table, const std::filesystem::path& path,
               bool include_arm = true);

// Arm-stratified K-fold assignment. Within each arm the fold sizes differ by
// at most one; the second arm continues the round-robin where the first one
// stopped so the pooled fold sizes are balanced too.
FoldAssignment make_folds(std::size_t n, std::span<const int> arms, int k,
                          std::uint64_t seed);

std::pair<HistoricalDataset, HistoricalDataset> split_historical(
    const HistoricalDataset& data, double train_frac, std::uint64_t seed);

}  // namespace glmprog
