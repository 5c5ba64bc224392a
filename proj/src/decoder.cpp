#include "pced/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pced/score.hpp"

namespace pced {

std::string_view to_string(BetaPolicy policy) {
  switch (policy) {
    case BetaPolicy::kDynamic:
      return "dynamic";
    case BetaPolicy::kDynamicGlobal:
      return "dynamic-global";
    case BetaPolicy::kFixed:
      return "fixed";
    case BetaPolicy::kZero:
      return "zero";
  }
  return "unknown";
}

std::string_view to_string(Aggregation aggregation) {
  switch (aggregation) {
    case Aggregation::kMax:
      return "max";
    case Aggregation::kMixture:
      return "mixture";
    case Aggregation::kProduct:
      return "product";
  }
  return "unknown";
}

std::string_view to_string(TieBreak tie_break) {
  switch (tie_break) {
    case TieBreak::kLowestTokenThenExpert:
      return "lowest-token";
    case TieBreak::kLowestExpertThenToken:
      return "lowest-expert";
  }
  return "unknown";
}

BetaPolicy parse_beta_policy(std::string_view name) {
  for (auto p : {BetaPolicy::kDynamic, BetaPolicy::kDynamicGlobal,
                 BetaPolicy::kFixed, BetaPolicy::kZero}) {
    if (to_string(p) == name) return p;
  }
  throw ConfigError("unknown beta policy '" + std::string(name) + "'");
}

Aggregation parse_aggregation(std::string_view name) {
  for (auto a : {Aggregation::kMax, Aggregation::kMixture,
                 Aggregation::kProduct}) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError("unknown aggregation '" + std::string(name) + "'");
}

TieBreak parse_tie_break(std::string_view name) {
  for (auto t : {TieBreak::kLowestTokenThenExpert,
                 TieBreak::kLowestExpertThenToken}) {
    if (to_string(t) == name) return t;
  }
  throw ConfigError("unknown tie-break rule '" + std::string(name) + "'");
}

void DecodeConfig::validate() const {
  if (!std::isfinite(gamma) || gamma < 0.0) {
    throw ConfigError("gamma must be a finite value >= 0");
  }
  if (beta_policy == BetaPolicy::kFixed &&
      (!std::isfinite(fixed_beta) || fixed_beta < 0.0)) {
    throw ConfigError("fixed beta must be a finite value >= 0");
  }
  if (max_tokens == 0) throw ConfigError("max_tokens must be >= 1");
}

nlohmann::json DecodeConfig::to_json() const {
  nlohmann::json j;
  j["gamma"] = gamma;
  j["beta_policy"] = to_string(beta_policy);
  j["beta"] = beta_policy == BetaPolicy::kFixed
                  ? nlohmann::json(fixed_beta)
                  : nlohmann::json(nullptr);
  j["aggregation"] = to_string(aggregation);
  j["max_tokens"] = max_tokens;
  j["stop_tokens"] = stop_tokens;
  j["tie_break"] = to_string(tie_break);
  j["ignore_stop"] = ignore_stop;
  return j;
}

LogitVector calibrate(std::span<const double> expert,
                      std::span<const double> amateur, double beta,
                      double gamma, double prior_log) {
  if (expert.size() != amateur.size()) {
    throw DomainError("calibrate: expert and amateur logits differ in length");
  }
  const double prior = gamma * prior_log;
  LogitVector out(expert.size());
  for (std::size_t v = 0; v < expert.size(); ++v) {
    out[v] = (1.0 + beta) * expert[v] - beta * amateur[v] + prior;
  }
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) return {};
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - peak);
    sum += p[i];
  }
  for (double& x : p) x /= sum;
  return p;
}

double dynamic_beta(std::span<const double> expert,
                    std::span<const double> amateur) {
  if (expert.size() != amateur.size()) {
    throw DomainError("dynamic_beta: logits differ in length");
  }
  const auto p = softmax(expert);
  const auto q = softmax(amateur);
  double kl_p = 0.0;
  double kl_q = 0.0;
  for (std::size_t v = 0; v < p.size(); ++v) {
    const double m = 0.5 * (p[v] + q[v]);
    if (p[v] > 0.0) kl_p += p[v] * std::log2(p[v] / m);
    if (q[v] > 0.0) kl_q += q[v] * std::log2(q[v] / m);
  }
  return std::clamp(0.5 * kl_p + 0.5 * kl_q, 0.0, 1.0);
}

namespace {

Selection select_max(std::span<const LogitVector> calibrated,
                     TieBreak tie_break) {
  Selection best;
  double best_score = -std::numeric_limits<double>::infinity();
  bool have = false;
  for (std::size_t k = 0; k < calibrated.size(); ++k) {
    const auto& s = calibrated[k];
    for (std::size_t v = 0; v < s.size(); ++v) {
      const auto token = static_cast<TokenId>(v);
      bool better = !have || s[v] > best_score;
      if (have && s[v] == best_score) {
        better = tie_break == TieBreak::kLowestTokenThenExpert
                     ? (token < best.token ||
                        (token == best.token && k < best.expert))
                     : (k < best.expert ||
                        (k == best.expert && token < best.token));
      }
      if (better) {
        best = {token, k};
        best_score = s[v];
        have = true;
      }
    }
  }
  return best;
}

}  // namespace

Selection select_token(std::span<const LogitVector> calibrated,
                       Aggregation aggregation, TieBreak tie_break,
                       std::span<const double> relevance) {
  if (calibrated.empty()) {
    throw DomainError("select_token: no contextual experts");
  }
  const auto vocab = calibrated.front().size();
  for (const auto& s : calibrated) {
    if (s.size() != vocab || vocab == 0) {
      throw DomainError("select_token: calibrated logits differ in length");
    }
  }
  if (aggregation == Aggregation::kMax) {
    return select_max(calibrated, tie_break);
  }

  if (!relevance.empty() && relevance.size() != calibrated.size()) {
    throw DomainError("select_token: one relevance per expert required");
  }
  std::vector<double> weights(calibrated.size(), 1.0);
  if (!relevance.empty()) {
    for (std::size_t k = 0; k < weights.size(); ++k) {
      weights[k] = std::max(relevance[k], score::kEpsilon);
    }
  }
  double total = 0.0;
  for (double w : weights) total += w;
  for (double& w : weights) w /= total;

  std::vector<std::vector<double>> probs;
  probs.reserve(calibrated.size());
  for (const auto& s : calibrated) probs.push_back(softmax(s));

  std::vector<double> combined(vocab, 0.0);
  for (std::size_t k = 0; k < probs.size(); ++k) {
    for (std::size_t v = 0; v < vocab; ++v) {
      combined[v] +=
          aggregation == Aggregation::kMixture
              ? weights[k] * probs[k][v]
              : weights[k] * std::log(std::max(probs[k][v], kProbabilityFloor));
    }
  }
  Selection sel;
  sel.token = static_cast<TokenId>(argmax(combined));
  double best = -1.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    const double contribution =
        weights[k] * probs[k][static_cast<std::size_t>(sel.token)];
    if (contribution > best) {
      best = contribution;
      sel.expert = k;
    }
  }
  return sel;
}

DecodeResult decode_experts(std::span<const ExpertInput> experts,
                            std::span<const TokenId> query_tokens,
                            const DecodeConfig& config,
                            const LogitProvider& provider,
                            const StepObserver& observer) {
  config.validate();
  if (experts.empty()) throw DomainError("decode: no contextual experts");

  DecodeResult result;
  std::vector<double> prior_logs;
  for (const auto& e : experts) {
    result.expert_labels.push_back(e.label);
    result.relevance.push_back(e.relevance);
    prior_logs.push_back(score::prior_log(e.relevance));
  }
  const auto stops =
      config.stop_tokens.empty() ? provider.stop_tokens() : config.stop_tokens;
  const auto is_stop = [&](TokenId t) {
    return !config.ignore_stop && std::find(stops.begin(), stops.end(), t) != stops.end();
  };

  std::vector<ProviderSession> sessions;
  sessions.reserve(experts.size() + 1);
  sessions.push_back(provider.open_amateur());
  for (const auto& e : experts) sessions.push_back(provider.open_session(e.blob));

  provider.absorb_batch(sessions, query_tokens);
  auto logits = provider.logits_batch(sessions);

  const std::size_t n = experts.size();
  std::vector<double> betas(n, 0.0);
  std::vector<LogitVector> calibrated(n);
  try {
    for (std::size_t step = 0; step < config.max_tokens; ++step) {
      if (step == 0) {
        // Frozen for the rest of the decode.
        switch (config.beta_policy) {
          case BetaPolicy::kDynamic:
            for (std::size_t k = 0; k < n; ++k) {
              betas[k] = dynamic_beta(logits[k + 1], logits[0]);
            }
            break;
          case BetaPolicy::kDynamicGlobal:
            std::fill(betas.begin(), betas.end(),
                      dynamic_beta(logits[1], logits[0]));
            break;
          case BetaPolicy::kFixed:
            std::fill(betas.begin(), betas.end(), config.fixed_beta);
            break;
          case BetaPolicy::kZero:
            break;
        }
      }

      StepTrace trace;
      trace.step = step;
      trace.betas = betas;
      for (std::size_t k = 0; k < n; ++k) {
        calibrated[k] = calibrate(logits[k + 1], logits[0], betas[k],
                                  config.gamma, prior_logs[k]);
        const auto top = argmax(calibrated[k]);
        trace.experts.push_back({static_cast<TokenId>(top), calibrated[k][top]});
      }
      const auto sel = select_token(calibrated, config.aggregation,
                                    config.tie_break, result.relevance);
      trace.token = sel.token;
      trace.winner = sel.expert;
      result.tokens.push_back(sel.token);

      result.traces.push_back(std::move(trace));
      if (observer) observer(result.traces.back(), sessions);
      if (is_stop(sel.token) || step + 1 == config.max_tokens) break;
      logits = provider.step_batch(sessions, sel.token);
    }
  } catch (const DecodeError&) {
    throw;
  } catch (const std::exception& ex) {
    throw DecodeError("decode failed at step " +
                          std::to_string(result.traces.size()) + ": " +
                          ex.what(),
                      std::move(result));
  }
  return result;
}

DecodeResult decode(const DocumentStore& store,
                    const RetrievalResult& retrieval,
                    std::span<const TokenId> query_tokens,
                    const DecodeConfig& config, const LogitProvider& provider,
                    const StepObserver& observer) {
  if (retrieval.entries.empty()) {
    throw DomainError("decode: retrieval result is empty");
  }
  std::vector<ExpertInput> experts;
  experts.reserve(retrieval.entries.size());
  for (const auto& doc : retrieval.entries) {
    experts.push_back(
        {doc.doc_id, store.get_blob(doc.doc_id), doc.relevance.fused});
  }
  return decode_experts(experts, query_tokens, config, provider, observer);
}

}  // namespace pced
