#pragma once

#include <string_view>

namespace pced::score {

// Lower clip distance and log-floor used by every relevance signal.
inline constexpr double kEpsilon = 1e-8;
inline constexpr double kUpperBound = 1.0 - kEpsilon;

enum class Mode { kDense, kColbert, kSparse, kReranker };

std::string_view to_string(Mode mode);
Mode parse_mode(std::string_view name);

// A raw score as produced by an external retriever or reranker. Dense and
// colbert similarities must lie in [-1, 1]; the constructor enforces it.
class RawScore {
 public:
  RawScore(double value, Mode mode);

  double value() const { return value_; }
  Mode mode() const { return mode_; }

  // Dispatches to the normalizer for mode().
  double normalized() const;

 private:
  double value_;
  Mode mode_;
};

// Normalized retrieval, reranker and fused relevance of one document.
struct RelevanceScore {
  double retrieval = 0.0;
  double reranker = 0.0;
  double fused = 0.0;

  static RelevanceScore from_normalized(double retrieval, double reranker);
};

double normalize_dense(double raw);
// Colbert similarities share the dense range and transform.
inline double normalize_colbert(double raw) { return normalize_dense(raw); }
double normalize_sparse(double raw);
double normalize_reranker(double logit);

// Harmonic-mean fusion 2ab / (a + b + eps).
double fuse(double retrieval, double reranker);

// log(max(r, eps)): the finite per-expert prior consumed by the decoder.
double prior_log(double fused);

}  // namespace pced::score
