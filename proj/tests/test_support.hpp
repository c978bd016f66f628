#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "steer/steer.hpp"

namespace testing_support {

// splitmix64, mirrored by tests/oracles/gen_oracles.py
class SplitMix {
 public:
  explicit SplitMix(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [-1, 1)
  double sym() { return 2.0 * (static_cast<double>(next() >> 11) * 0x1.0p-53) - 1.0; }

  steer::RowMatrix matrix(Eigen::Index rows, Eigen::Index cols) {
    steer::RowMatrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = static_cast<float>(sym());
    }
    return m;
  }

 private:
  std::uint64_t state_;
};

inline std::vector<std::string> make_ids(std::size_t n, const std::string& prefix = "id") {
  std::vector<std::string> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = steer::detail::numbered(prefix, i);
  return ids;
}

inline steer::RowMatrix gaussian_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<float> dist(0.0f, 1.0f);
  steer::RowMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

inline steer::EmbeddingSet random_set(std::mt19937_64& rng, std::size_t n, std::size_t dim,
                                      const std::string& prefix = "id") {
  return steer::EmbeddingSet(make_ids(n, prefix),
                             gaussian_matrix(rng, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim)));
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("steer-" + tag + "-" + std::to_string(rd()));
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

}  // namespace testing_support
