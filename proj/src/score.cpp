#include "pced/score.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "pced/errors.hpp"

namespace pced::score {

namespace {

double clip_unit(double x) { return std::clamp(x, 0.0, kUpperBound); }

void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) {
    throw DomainError(std::string(what) + ": non-finite input");
  }
}

}  // namespace

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::kDense:
      return "dense";
    case Mode::kColbert:
      return "colbert";
    case Mode::kSparse:
      return "sparse";
    case Mode::kReranker:
      return "reranker";
  }
  return "unknown";
}

Mode parse_mode(std::string_view name) {
  if (name == "dense") return Mode::kDense;
  if (name == "colbert") return Mode::kColbert;
  if (name == "sparse") return Mode::kSparse;
  if (name == "reranker") return Mode::kReranker;
  throw ConfigError("unknown score mode '" + std::string(name) + "'");
}

RawScore::RawScore(double value, Mode mode) : value_(value), mode_(mode) {
  require_finite(value, "RawScore");
  if ((mode == Mode::kDense || mode == Mode::kColbert) &&
      (value < -1.0 || value > 1.0)) {
    throw DomainError("RawScore: " + std::string(to_string(mode)) +
                      " similarity outside [-1, 1]");
  }
}

double RawScore::normalized() const {
  switch (mode_) {
    case Mode::kDense:
      return normalize_dense(value_);
    case Mode::kColbert:
      return normalize_colbert(value_);
    case Mode::kSparse:
      return normalize_sparse(value_);
    case Mode::kReranker:
      return normalize_reranker(value_);
  }
  return 0.0;
}

RelevanceScore RelevanceScore::from_normalized(double retrieval,
                                               double reranker) {
  return {retrieval, reranker, fuse(retrieval, reranker)};
}

double normalize_dense(double raw) {
  require_finite(raw, "normalize_dense");
  if (raw < -1.0 || raw > 1.0) {
    throw DomainError("normalize_dense: similarity outside [-1, 1]");
  }
  return clip_unit((raw + 1.0) / 2.0);
}

double normalize_sparse(double raw) {
  require_finite(raw, "normalize_sparse");
  return clip_unit(2.0 / std::numbers::pi * std::atan(std::max(raw, 0.0)));
}

double normalize_reranker(double logit) {
  require_finite(logit, "normalize_reranker");
  return clip_unit(1.0 / (1.0 + std::exp(-logit)));
}

double fuse(double retrieval, double reranker) {
  // Inputs are in [0, 1-eps], so the quotient never exceeds the upper bound;
  // the clamp only absorbs rounding.
  return clip_unit(2.0 * retrieval * reranker /
                   (retrieval + reranker + kEpsilon));
}

double prior_log(double fused) { return std::log(std::max(fused, kEpsilon)); }

}  // namespace pced::score
