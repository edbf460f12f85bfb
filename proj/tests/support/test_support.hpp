#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/Dense>

#include "glmprog/trial_data.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("glmprog_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Table with p standard normal covariates, alternating arms and y from `f`.
template <class F>
glmprog::DataTable make_table(std::size_t n, int p, std::uint64_t seed, F f,
                              bool alternate_arms = true) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  glmprog::DataTable t;
  for (int j = 0; j < p; ++j) t.covariate_names.push_back("w" + std::to_string(j + 1));
  t.w.resize(static_cast<Eigen::Index>(n), p);
  t.a.resize(static_cast<Eigen::Index>(n));
  t.y.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    t.ids.push_back(std::to_string(i + 1));
    for (int j = 0; j < p; ++j) t.w(r, j) = z(rng);
    t.a[r] = alternate_arms ? static_cast<int>(i % 2) : 0;
    t.y[r] = f(t.w.row(r), t.a[r], rng);
  }
  return t;
}

inline double mean(const Eigen::VectorXd& v) { return v.mean(); }

inline double variance_mle(const Eigen::VectorXd& v) {
  return (v.array() - v.mean()).square().mean();
}

}  // namespace testing
