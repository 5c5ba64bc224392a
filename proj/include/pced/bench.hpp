#pragma once

// Time-to-first-token and end-to-end latency of PCED (restore per-document
// caches, prefill only the query) against concatenation (prefill every
// document plus the query into one stream), on synthetic secret-code
// instances.

#include <cstdint>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "pced/lmcore.hpp"

namespace pced::bench {

// Token layout of synthetic instances.
inline constexpr TokenId kMarkerToken = 4;  // "secret"
inline constexpr TokenId kColonToken = 5;   // ":"
inline constexpr TokenId kFirstCodeToken = 10;
inline constexpr TokenId kCodeAlphabet = 32;
inline constexpr TokenId kFirstFillerToken = kFirstCodeToken + kCodeAlphabet;
inline constexpr std::size_t kMinVocab = 64;

struct SyntheticInstance {
  std::vector<std::vector<TokenId>> documents;
  std::size_t gold_index = 0;
  std::vector<TokenId> secret_code;
  std::vector<TokenId> query;
};

// Every document is exactly `doc_len` filler tokens; the gold document
// carries "secret : <code> <eos>" at a seeded offset. The query is a fixed
// instruction ending in "secret :".
SyntheticInstance generate_synthetic(std::size_t n_docs, std::size_t doc_len,
                                     std::uint64_t seed,
                                     std::size_t vocab_size = 512,
                                     std::size_t code_len = 4);

enum class Method { kPced, kConcat };
std::string_view to_string(Method method);

struct MethodLatency {
  Method method = Method::kPced;
  double ttft_seconds = 0.0;        // median over repeats
  double end_to_end_seconds = 0.0;  // median over repeats
  std::vector<double> ttft_samples;
  std::vector<double> end_to_end_samples;
  // Instrumented work from dispatch to the first token.
  std::uint64_t prefill_passes = 0;
  std::uint64_t prefill_tokens = 0;
  std::uint64_t sessions_restored = 0;
  bool correct = false;
};

struct LatencyReport {
  std::size_t n_docs = 0;
  std::size_t doc_len = 0;
  std::size_t generated_tokens = 0;
  std::size_t repeats = 0;
  bool warmup = false;
  std::vector<MethodLatency> methods;

  const MethodLatency& method(Method m) const;
  // With include_timing == false only deterministic fields are emitted.
  nlohmann::json to_json(bool include_timing = true) const;
};

struct LatencyOptions {
  std::vector<Method> methods{Method::kPced, Method::kConcat};
  // Tokens decoded after the first one.
  std::size_t generated_tokens = 0;
  bool warmup = true;
  std::size_t repeats = 5;
  double gold_relevance = 0.95;
  double distractor_relevance = 0.5;
};

// Times each method `repeats` times (after one unreported warmup run when
// requested), then checks that both methods recover the secret code.
// Throws BenchError when a method fails that check or the provider fails.
LatencyReport run_latency(const SyntheticInstance& instance,
                          const LogitProvider& provider,
                          const LatencyOptions& options);

double median(std::vector<double> values);
double variance(const std::vector<double>& values);

// Plain-text table, one row per (report, method).
std::string summary_table(const std::vector<LatencyReport>& reports,
                          bool include_timing = true);

}  // namespace pced::bench
