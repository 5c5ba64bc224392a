#pragma once

// Parallel context-of-experts decoding.
//
// One amateur stream (empty cache) and N contextual streams (one per
// retrieved document) advance in lockstep. Each step every contextual
// expert's logits are calibrated against the amateur and shifted by its
// retrieval prior,
//
//   calibrated_k = (1 + beta_k) * s_k - beta_k * s_0 + gamma * log(max(r_k, eps)),
//
// the experts are aggregated into one token, and that token is appended to
// every stream's history.

#include <functional>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pced/cachestore.hpp"
#include "pced/errors.hpp"
#include "pced/lmcore.hpp"

namespace pced {

enum class BetaPolicy {
  kDynamic,        // per-expert JSD(p_k, p_0) at the first generated token
  kDynamicGlobal,  // one JSD from the top-ranked expert, shared by all
  kFixed,
  kZero,
};

enum class Aggregation { kMax, kMixture, kProduct };

enum class TieBreak { kLowestTokenThenExpert, kLowestExpertThenToken };

std::string_view to_string(BetaPolicy policy);
std::string_view to_string(Aggregation aggregation);
std::string_view to_string(TieBreak tie_break);
BetaPolicy parse_beta_policy(std::string_view name);
Aggregation parse_aggregation(std::string_view name);
TieBreak parse_tie_break(std::string_view name);

inline constexpr double kDefaultGamma = 2.5;
// Probability floor before logs in the product rule.
inline constexpr double kProbabilityFloor = 1e-30;

struct DecodeConfig {
  double gamma = kDefaultGamma;
  BetaPolicy beta_policy = BetaPolicy::kDynamic;
  double fixed_beta = 0.0;  // used when beta_policy == kFixed
  Aggregation aggregation = Aggregation::kMax;
  std::size_t max_tokens = 64;
  // Empty means the provider's stop tokens.
  std::vector<TokenId> stop_tokens;
  TieBreak tie_break = TieBreak::kLowestTokenThenExpert;
  // Always generate max_tokens tokens (latency runs).
  bool ignore_stop = false;

  // Throws ConfigError on gamma < 0, fixed beta < 0, max_tokens == 0 or
  // non-finite values.
  void validate() const;
  nlohmann::json to_json() const;

  bool operator==(const DecodeConfig&) const = default;
};

// (1 + beta) * expert - beta * amateur + gamma * prior_log, elementwise.
LogitVector calibrate(std::span<const double> expert,
                      std::span<const double> amateur, double beta,
                      double gamma, double prior_log);

// Max-subtracted softmax.
std::vector<double> softmax(std::span<const double> logits);

// Jensen-Shannon divergence (base 2) between softmax(expert) and
// softmax(amateur); always in [0, 1].
double dynamic_beta(std::span<const double> expert,
                    std::span<const double> amateur);

struct Selection {
  TokenId token = 0;
  std::size_t expert = 0;
};

// Aggregates calibrated contextual experts into one token.
//   max:     argmax_v max_k calibrated_k(v)
//   mixture: argmax_v sum_k w_k softmax(calibrated_k)(v)
//   product: argmax_v sum_k w_k log softmax(calibrated_k)(v)
// with w_k = relevance_k / sum_j relevance_j (uniform when `relevance` is
// empty). For mixture and product the reported expert is the one maximising
// w_k * p_k(token).
Selection select_token(std::span<const LogitVector> calibrated,
                       Aggregation aggregation, TieBreak tie_break,
                       std::span<const double> relevance = {});

struct ExpertTop {
  TokenId token = 0;
  double score = 0.0;
};

struct StepTrace {
  std::size_t step = 0;
  TokenId token = 0;
  std::size_t winner = 0;  // index into the contextual experts
  std::vector<ExpertTop> experts;
  std::vector<double> betas;
};

struct DecodeResult {
  std::vector<TokenId> tokens;
  std::vector<StepTrace> traces;
  std::vector<std::string> expert_labels;
  std::vector<double> relevance;
};

class DecodeError : public Error {
 public:
  DecodeError(const std::string& what, DecodeResult partial)
      : Error(what), partial_(std::move(partial)) {}
  const DecodeResult& partial() const { return partial_; }

 private:
  DecodeResult partial_;
};

struct ExpertInput {
  std::string label;
  std::span<const std::uint8_t> blob;
  double relevance = 0.0;  // fused score; floored at eps before the log
};

// Called after each token is selected, before it is fed back, with every
// session (amateur first).
using StepObserver =
    std::function<void(const StepTrace&, std::span<const ProviderSession>)>;

DecodeResult decode_experts(std::span<const ExpertInput> experts,
                            std::span<const TokenId> query_tokens,
                            const DecodeConfig& config,
                            const LogitProvider& provider,
                            const StepObserver& observer = {});

// Opens one contextual expert per retrieved document, in retrieval order.
DecodeResult decode(const DocumentStore& store,
                    const RetrievalResult& retrieval,
                    std::span<const TokenId> query_tokens,
                    const DecodeConfig& config, const LogitProvider& provider,
                    const StepObserver& observer = {});

}  // namespace pced
