#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "pced/lmcore.hpp"

namespace pced::testing {

// Small hand-rolled generators for property tests. Every generator draws
// from the caller's engine so a failing case is reproducible from its seed.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double real(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng_);
  }
  std::size_t index(std::size_t lo, std::size_t hi) {  // inclusive
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }
  bool coin() { return index(0, 1) == 1; }

  std::vector<double> logits(std::size_t n, double scale = 10.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = real(-scale, scale);
    return v;
  }

  std::vector<TokenId> tokens(std::size_t n, TokenId lo, TokenId hi) {
    std::vector<TokenId> v(n);
    for (auto& t : v) t = static_cast<TokenId>(index(lo, hi));
    return v;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

inline std::filesystem::path scenario_dir() { return PCED_SCENARIO_DIR; }

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() /
             ("pced-test-" + name + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline bool rel_close(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

}  // namespace pced::testing
