#pragma once

// Ablation grids over declarative scenario suites.
//
// Suite file (JSON):
//   {
//     "suite": "multihop",
//     "provider": {"vocab_size": 64, "order": 1, "seed": 7},   optional
//     "mode": "dense",                                          optional
//     "scenarios": [
//       {"id": "bridge",
//        "documents": [{"doc_id": "a", "text": "...",
//                       "scores": {"dense": 0.8, "reranker": 2.0}}, ...],
//        "query": "...", "gold": "...",
//        "topk": 2, "max_tokens": 8}                           optional
//     ]
//   }
//
// Per-document "scores" override the built-in retriever and reranker for the
// suite's mode. Each scenario gets its own in-memory store.

#include <filesystem>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "pced/cachestore.hpp"
#include "pced/decoder.hpp"
#include "pced/score.hpp"
#include "pced/toy_model.hpp"

namespace pced::sweeps {

enum class Axis { kBeta, kGamma, kComponents, kAggregation, kTopK };

std::string_view to_string(Axis axis);
Axis parse_axis(std::string_view name);

// Grid used when a sweep names no explicit values.
std::vector<std::string> default_values(Axis axis);

struct ScenarioDocument {
  std::string doc_id;
  std::string text;
  std::unordered_map<std::string, double> scores;
};

struct Scenario {
  std::string id;
  std::vector<ScenarioDocument> documents;
  std::string query;
  std::string gold;
  std::optional<std::size_t> topk;
  std::optional<std::size_t> max_tokens;
};

struct ScenarioSuite {
  std::string name;
  ToyModelParams provider;
  score::Mode mode = score::Mode::kDense;
  std::vector<Scenario> scenarios;

  static ScenarioSuite from_json(const nlohmann::json& j);
  static ScenarioSuite load(const std::filesystem::path& path);
};

// A scenario prepared for decoding: store, retrieval inputs and query.
class PreparedScenario {
 public:
  PreparedScenario(const Scenario& scenario, const LogitProvider& provider,
                   score::Mode mode);

  const Scenario& scenario() const { return scenario_; }
  const DocumentStore& store() const { return *store_; }
  const std::vector<TokenId>& query_tokens() const { return query_tokens_; }

  RetrievalResult retrieve(std::size_t n) const;
  // Decoded text with reserved tokens removed.
  std::string run(const DecodeConfig& config, std::size_t n,
                  DecodeResult* result = nullptr) const;

 private:
  Scenario scenario_;
  const LogitProvider* provider_;
  score::Mode mode_;
  std::unique_ptr<DocumentStore> store_;
  std::vector<TokenId> query_tokens_;
  std::vector<double> query_embedding_;
  std::unique_ptr<FixedScores> retrieval_override_;
  std::unique_ptr<FixedScores> reranker_override_;
};

// Smallest toy vocabulary that covers every scenario of the suite.
std::size_t required_vocab(const ScenarioSuite& suite);

// Lowercase, whitespace-collapsed exact match.
bool exact_match(std::string_view output, std::string_view gold);

struct SweepSpec {
  Axis axis = Axis::kComponents;
  std::vector<std::string> values;  // empty: default_values(axis)
  std::size_t repetitions = 1;
  std::size_t workers = 1;
  DecodeConfig base;  // every cell varies only `axis` from this
};

struct SweepCell {
  std::string value;
  std::string scenario;
  double accuracy = 0.0;
  std::string output;
};

struct SweepValueSummary {
  std::string value;
  std::string label;
  double accuracy = 0.0;
  nlohmann::json config;
};

struct SweepResult {
  Axis axis = Axis::kComponents;
  std::string suite;
  std::vector<SweepValueSummary> values;
  std::vector<SweepCell> cells;  // value-major, scenario-minor

  // One JSON object per cell followed by one per value.
  std::string to_jsonl() const;
  std::string table() const;
};

// Display name for an axis value, e.g. "Only Contrastive (gamma=0)".
std::string value_label(Axis axis, std::string_view value);
// Base config with `axis` set to `value`; topk values leave it unchanged.
DecodeConfig cell_config(Axis axis, std::string_view value,
                         const DecodeConfig& base);

SweepResult run_sweep(const SweepSpec& spec, const ScenarioSuite& suite,
                      const LogitProvider& provider);

// Builds the suite's toy provider and runs the sweep.
SweepResult run_sweep(const SweepSpec& spec, const ScenarioSuite& suite);

}  // namespace pced::sweeps
