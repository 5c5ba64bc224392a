#include <cmath>
#include <limits>
#include <numbers>

#include "doctest.h"
#include "pced/errors.hpp"
#include "pced/score.hpp"
#include "support.hpp"

using namespace pced;
using namespace pced::score;
using pced::testing::Gen;

namespace {

// Reference transforms written out independently of the library.
double ref_sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
double ref_clip(double x) { return std::min(std::max(x, 0.0), 1.0 - 1e-8); }

}  // namespace

TEST_CASE("normalize_dense examples") {
  CHECK(normalize_dense(-1.0) == 0.0);
  CHECK(normalize_dense(1.0) == 1.0 - 1e-8);
  CHECK(normalize_dense(0.0) == 0.5);
  CHECK(normalize_colbert(0.0) == 0.5);
}

TEST_CASE("normalize_dense rejects out-of-range input") {
  CHECK_THROWS_AS(normalize_dense(1.0001), DomainError);
  CHECK_THROWS_AS(normalize_dense(-1.5), DomainError);
  CHECK_THROWS_AS(normalize_dense(std::nan("")), DomainError);
  CHECK_THROWS_AS(RawScore(2.0, Mode::kDense), DomainError);
  CHECK_THROWS_AS(RawScore(2.0, Mode::kColbert), DomainError);
  CHECK_NOTHROW(RawScore(2.0, Mode::kSparse));
}

TEST_CASE("normalize_sparse examples") {
  CHECK(normalize_sparse(0.0) == 0.0);
  CHECK(normalize_sparse(1.0) == doctest::Approx(0.5).epsilon(1e-9));
  double big = normalize_sparse(1e9);
  double expected = ref_clip(2.0 / std::numbers::pi * std::atan(1e9));
  CHECK(big > 0.999999);
  CHECK(big <= 1.0 - 1e-8);
  CHECK(big == doctest::Approx(expected).epsilon(1e-12));
  // Negative raw scores are clamped to zero before the arctan.
  CHECK(normalize_sparse(-3.0) == 0.0);
  CHECK_THROWS_AS(normalize_sparse(std::numeric_limits<double>::infinity()),
                  DomainError);
}

TEST_CASE("normalize_reranker examples") {
  CHECK(normalize_reranker(0.0) == 0.5);
  CHECK(normalize_reranker(50.0) == 1.0 - 1e-8);
  for (double z : {0.3, 1.0, 2.5, 7.0}) {
    CHECK(ref_sigmoid(z) + ref_sigmoid(-z) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(normalize_reranker(-z) == doctest::Approx(ref_sigmoid(-z)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(normalize_reranker(std::nan("")), DomainError);
}

TEST_CASE("fuse examples") {
  CHECK(std::abs(fuse(0.8, 0.8) - 0.8) < 1e-7);
  CHECK(fuse(0.8, 0.8) == doctest::Approx(2 * 0.64 / (1.6 + 1e-8)).epsilon(1e-12));
  CHECK(fuse(0.0, 0.9) == 0.0);
  CHECK(fuse(0.5, 1.0 - 1e-8) == doctest::Approx(2.0 / 3.0).epsilon(1e-7));
}

TEST_CASE("prior_log floors at epsilon") {
  CHECK(prior_log(0.0) == doctest::Approx(std::log(1e-8)));
  CHECK(prior_log(0.5) == doctest::Approx(std::log(0.5)));
  CHECK(std::isfinite(prior_log(0.0)));
}

TEST_CASE("RawScore dispatches by mode") {
  CHECK(RawScore(0.0, Mode::kDense).normalized() == 0.5);
  CHECK(RawScore(1.0, Mode::kSparse).normalized() == doctest::Approx(0.5));
  CHECK(RawScore(0.0, Mode::kReranker).normalized() == 0.5);
  auto r = RelevanceScore::from_normalized(0.8, 0.8);
  CHECK(r.fused == doctest::Approx(fuse(0.8, 0.8)));
  CHECK(parse_mode(to_string(Mode::kColbert)) == Mode::kColbert);
}

TEST_CASE("property: normalizers stay in range and are monotone") {
  Gen g(1);
  for (int i = 0; i < 2000; ++i) {
    double a = g.real(-1, 1), b = g.real(-1, 1);
    if (a > b) std::swap(a, b);
    CHECK(normalize_dense(a) <= normalize_dense(b));
    CHECK(normalize_dense(a) >= 0.0);
    CHECK(normalize_dense(b) <= kUpperBound);

    double s1 = g.real(0, 100), s2 = g.real(0, 100);
    if (s1 > s2) std::swap(s1, s2);
    CHECK(normalize_sparse(s1) <= normalize_sparse(s2));
    CHECK(normalize_sparse(s2) <= kUpperBound);

    double z1 = g.real(-60, 60), z2 = g.real(-60, 60);
    if (z1 > z2) std::swap(z1, z2);
    CHECK(normalize_reranker(z1) <= normalize_reranker(z2));
    CHECK(normalize_reranker(z1) >= 0.0);
    CHECK(normalize_reranker(z2) <= kUpperBound);
  }
}

TEST_CASE("property: fuse is symmetric, bounded and below the larger input") {
  Gen g(2);
  for (int i = 0; i < 2000; ++i) {
    double a = g.real(0, kUpperBound), b = g.real(0, kUpperBound);
    double f = fuse(a, b);
    CHECK(f == doctest::Approx(fuse(b, a)).epsilon(1e-15));
    CHECK(f >= 0.0);
    CHECK(f <= kUpperBound);
    CHECK(f <= std::max(a, b) + 1e-12);
    CHECK(f >= std::min(a, b) * (a + b) / (a + b + kEpsilon) - 1e-15);
    double same = fuse(a, a);
    CHECK(same <= a + 1e-15);
    CHECK(same >= a - 1e-7);
  }
}
