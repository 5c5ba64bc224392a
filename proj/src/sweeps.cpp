#include "pced/sweeps.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "pced/errors.hpp"

namespace pced::sweeps {

using nlohmann::json;

namespace {

constexpr std::size_t kEmbeddingDim = 64;

double parse_number(std::string_view text, std::string_view what) {
  try {
    std::size_t used = 0;
    const std::string s(text);
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument("");
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError("invalid " + std::string(what) + " value '" +
                      std::string(text) + "'");
  }
}

std::size_t parse_topk(std::string_view text) {
  const double v = parse_number(text, "topk");
  if (v < 1 || v != static_cast<double>(static_cast<std::size_t>(v))) {
    throw ConfigError("topk must be a positive integer, got '" +
                      std::string(text) + "'");
  }
  return static_cast<std::size_t>(v);
}

Vocabulary scenario_vocabulary(const Scenario& s) {
  Vocabulary v;
  v.add_text(s.query);
  for (const auto& d : s.documents) v.add_text(d.text);
  return v;
}

std::unique_ptr<FixedScores> override_for(const Scenario& s,
                                          const std::string& key) {
  std::unordered_map<std::string, double> table;
  for (const auto& d : s.documents) {
    auto it = d.scores.find(key);
    if (it != d.scores.end()) table.emplace(d.doc_id, it->second);
  }
  if (table.empty()) return nullptr;
  if (table.size() != s.documents.size()) {
    throw ConfigError("scenario '" + s.id + "': '" + key +
                      "' scores must be given for every document or none");
  }
  return std::make_unique<FixedScores>(std::move(table));
}

std::string normalize(std::string_view text) {
  std::string out;
  for (const auto& w : split_words(text)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

}  // namespace

std::string_view to_string(Axis axis) {
  switch (axis) {
    case Axis::kBeta:
      return "beta";
    case Axis::kGamma:
      return "gamma";
    case Axis::kComponents:
      return "components";
    case Axis::kAggregation:
      return "aggregation";
    case Axis::kTopK:
      return "topk";
  }
  return "unknown";
}

Axis parse_axis(std::string_view name) {
  for (auto a : {Axis::kBeta, Axis::kGamma, Axis::kComponents,
                 Axis::kAggregation, Axis::kTopK}) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError("unknown sweep axis '" + std::string(name) + "'");
}

std::vector<std::string> default_values(Axis axis) {
  switch (axis) {
    case Axis::kBeta:
      return {"0", "0.25", "0.5", "0.75", "1.0", "dynamic"};
    case Axis::kGamma:
      return {"0.5", "1.0", "1.5", "2.0", "2.5", "3.0", "4.0"};
    case Axis::kComponents:
      return {"only-contrastive", "only-retrieval", "full"};
    case Axis::kAggregation:
      return {"max", "mixture", "product"};
    case Axis::kTopK:
      return {"8", "16", "32", "64", "128"};
  }
  return {};
}

std::string value_label(Axis axis, std::string_view value) {
  switch (axis) {
    case Axis::kBeta:
      if (value == "dynamic") return "Dynamic";
      if (value == "dynamic-global") return "Dynamic (global)";
      return parse_number(value, "beta") == 0.0 ? "beta=0 (No CD)"
                                                : "beta=" + std::string(value);
    case Axis::kGamma:
      return "gamma=" + std::string(value);
    case Axis::kComponents:
      if (value == "only-contrastive") return "Only Contrastive (gamma=0)";
      if (value == "only-retrieval") return "Only Retrieval (beta=0)";
      if (value == "full") return "Full PCED";
      break;
    case Axis::kAggregation:
      if (value == "max") return "Max";
      if (value == "mixture") return "Mixture (MoE)";
      if (value == "product") return "Product (PoE)";
      break;
    case Axis::kTopK:
      return "k=" + std::to_string(parse_topk(value));
  }
  throw ConfigError("invalid " + std::string(to_string(axis)) + " value '" +
                    std::string(value) + "'");
}

DecodeConfig cell_config(Axis axis, std::string_view value,
                         const DecodeConfig& base) {
  DecodeConfig c = base;
  switch (axis) {
    case Axis::kBeta:
      if (value == "dynamic") {
        c.beta_policy = BetaPolicy::kDynamic;
      } else if (value == "dynamic-global") {
        c.beta_policy = BetaPolicy::kDynamicGlobal;
      } else {
        const double b = parse_number(value, "beta");
        if (b < 0.0) throw ConfigError("beta must be >= 0");
        c.beta_policy = b == 0.0 ? BetaPolicy::kZero : BetaPolicy::kFixed;
        c.fixed_beta = b == 0.0 ? 0.0 : b;
      }
      break;
    case Axis::kGamma: {
      const double g = parse_number(value, "gamma");
      if (g < 0.0) throw ConfigError("gamma must be >= 0");
      c.gamma = g;
      break;
    }
    case Axis::kComponents:
      if (value == "only-contrastive") {
        c.gamma = 0.0;
      } else if (value == "only-retrieval") {
        c.beta_policy = BetaPolicy::kZero;
        c.fixed_beta = 0.0;
      } else if (value != "full") {
        throw ConfigError("invalid components value '" + std::string(value) +
                          "'");
      }
      break;
    case Axis::kAggregation:
      c.aggregation = parse_aggregation(value);
      break;
    case Axis::kTopK:
      parse_topk(value);
      break;
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Suites

ScenarioSuite ScenarioSuite::from_json(const json& j) {
  ScenarioSuite suite;
  try {
    suite.name = j.at("suite").get<std::string>();
    if (j.contains("provider")) {
      const auto& p = j.at("provider");
      suite.provider.vocab_size = p.value("vocab_size", suite.provider.vocab_size);
      suite.provider.order = p.value("order", suite.provider.order);
      suite.provider.seed = p.value("seed", suite.provider.seed);
      suite.provider.base_scale = p.value("base_scale", suite.provider.base_scale);
      suite.provider.unigram_bonus =
          p.value("unigram_bonus", suite.provider.unigram_bonus);
      suite.provider.continuation_bonus =
          p.value("continuation_bonus", suite.provider.continuation_bonus);
    }
    if (j.contains("mode")) {
      suite.mode = score::parse_mode(j.at("mode").get<std::string>());
      if (suite.mode == score::Mode::kReranker) {
        throw ConfigError("suite mode must be a retrieval mode");
      }
    }
    for (const auto& js : j.at("scenarios")) {
      Scenario s;
      s.id = js.at("id").get<std::string>();
      s.query = js.at("query").get<std::string>();
      s.gold = js.at("gold").get<std::string>();
      if (js.contains("topk")) s.topk = js.at("topk").get<std::size_t>();
      if (js.contains("max_tokens")) {
        s.max_tokens = js.at("max_tokens").get<std::size_t>();
      }
      for (const auto& jd : js.at("documents")) {
        ScenarioDocument d;
        d.doc_id = jd.at("doc_id").get<std::string>();
        d.text = jd.at("text").get<std::string>();
        if (jd.contains("scores")) {
          d.scores = jd.at("scores").get<std::unordered_map<std::string, double>>();
        }
        s.documents.push_back(std::move(d));
      }
      if (s.documents.empty()) {
        throw ConfigError("scenario '" + s.id + "' has no documents");
      }
      suite.scenarios.push_back(std::move(s));
    }
  } catch (const json::exception& ex) {
    throw ConfigError("malformed scenario suite: " + std::string(ex.what()));
  }
  if (suite.scenarios.empty()) throw ConfigError("scenario suite is empty");
  return suite;
}

ScenarioSuite ScenarioSuite::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot read scenario suite " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& ex) {
    throw ConfigError("unparseable scenario suite " + path.string() + ": " +
                      ex.what());
  }
}

std::size_t required_vocab(const ScenarioSuite& suite) {
  std::size_t need = kFirstWordToken;
  for (const auto& s : suite.scenarios) {
    need = std::max(need, scenario_vocabulary(s).size());
  }
  return need;
}

bool exact_match(std::string_view output, std::string_view gold) {
  return normalize(output) == normalize(gold);
}

PreparedScenario::PreparedScenario(const Scenario& scenario,
                                   const LogitProvider& provider,
                                   score::Mode mode)
    : scenario_(scenario), provider_(&provider), mode_(mode) {
  std::vector<CorpusDocument> corpus;
  for (const auto& d : scenario.documents) corpus.push_back({d.doc_id, d.text});
  Vocabulary vocab;
  vocab.add_text(scenario.query);
  const HashingEmbedder embedder(kEmbeddingDim);
  store_ = std::make_unique<DocumentStore>(
      DocumentStore::build(corpus, embedder, provider, std::move(vocab)));
  query_tokens_ = store_->vocabulary().encode(scenario.query);
  query_embedding_ = embedder.embed(scenario.query);
  retrieval_override_ =
      override_for(scenario, std::string(score::to_string(mode)));
  reranker_override_ = override_for(scenario, "reranker");
}

RetrievalResult PreparedScenario::retrieve(std::size_t n) const {
  Retriever r;
  r.dense = retrieval_override_.get();
  r.sparse = retrieval_override_.get();
  r.reranker = reranker_override_.get();
  return pced::retrieve(*store_, query_embedding_, scenario_.query, n, mode_, r);
}

std::string PreparedScenario::run(const DecodeConfig& config, std::size_t n,
                                  DecodeResult* result) const {
  DecodeConfig c = config;
  if (scenario_.max_tokens) c.max_tokens = *scenario_.max_tokens;
  auto r = decode(*store_, retrieve(n), query_tokens_, c, *provider_);
  auto text = store_->vocabulary().decode(r.tokens);
  if (result) *result = std::move(r);
  return text;
}

// ---------------------------------------------------------------------------
// Sweeps

std::string SweepResult::to_jsonl() const {
  std::ostringstream os;
  for (const auto& c : cells) {
    os << json{{"type", "cell"},         {"axis", to_string(axis)},
               {"suite", suite},         {"value", c.value},
               {"label", value_label(axis, c.value)},
               {"scenario", c.scenario}, {"accuracy", c.accuracy},
               {"output", c.output}}
              .dump()
       << '\n';
  }
  for (const auto& v : values) {
    os << json{{"type", "value"},   {"axis", to_string(axis)},
               {"suite", suite},    {"value", v.value},
               {"label", v.label},  {"accuracy", v.accuracy},
               {"config", v.config}}
              .dump()
       << '\n';
  }
  return os.str();
}

std::string SweepResult::table() const {
  std::vector<std::string> scenarios;
  for (const auto& c : cells) {
    if (std::find(scenarios.begin(), scenarios.end(), c.scenario) ==
        scenarios.end()) {
      scenarios.push_back(c.scenario);
    }
  }
  std::size_t width = 5;
  for (const auto& v : values) width = std::max(width, v.label.size());

  std::ostringstream os;
  os << "axis: " << to_string(axis) << "  suite: " << suite << '\n';
  os << std::left << std::setw(static_cast<int>(width)) << "value" << std::right
     << std::setw(10) << "accuracy";
  for (const auto& s : scenarios) os << "  " << s;
  os << '\n';
  for (const auto& v : values) {
    os << std::left << std::setw(static_cast<int>(width)) << v.label
       << std::right << std::setw(10) << std::fixed << std::setprecision(2)
       << v.accuracy;
    for (const auto& s : scenarios) {
      for (const auto& c : cells) {
        if (c.value == v.value && c.scenario == s) {
          os << "  " << std::setw(static_cast<int>(s.size()))
             << std::setprecision(2) << c.accuracy;
        }
      }
    }
    os << '\n';
  }
  return os.str();
}

SweepResult run_sweep(const SweepSpec& spec, const ScenarioSuite& suite,
                      const LogitProvider& provider) {
  const auto values =
      spec.values.empty() ? default_values(spec.axis) : spec.values;
  if (values.empty()) throw ConfigError("sweep has no values");
  if (spec.repetitions == 0) throw ConfigError("repetitions must be >= 1");
  spec.base.validate();

  SweepResult result;
  result.axis = spec.axis;
  result.suite = suite.name;
  std::vector<DecodeConfig> configs;
  for (const auto& v : values) {
    configs.push_back(cell_config(spec.axis, v, spec.base));
    SweepValueSummary summary;
    summary.value = v;
    summary.label = value_label(spec.axis, v);
    summary.config = configs.back().to_json();
    if (spec.axis == Axis::kTopK) summary.config["topk"] = parse_topk(v);
    result.values.push_back(std::move(summary));
  }

  std::vector<std::unique_ptr<PreparedScenario>> prepared;
  for (const auto& s : suite.scenarios) {
    prepared.push_back(
        std::make_unique<PreparedScenario>(s, provider, suite.mode));
  }

  const std::size_t n_scen = prepared.size();
  result.cells.resize(values.size() * n_scen);
  auto run_cell = [&](std::size_t idx) {
    const auto vi = idx / n_scen;
    const auto& ps = *prepared[idx % n_scen];
    const auto& s = ps.scenario();
    const std::size_t n = spec.axis == Axis::kTopK
                              ? parse_topk(values[vi])
                              : s.topk.value_or(s.documents.size());
    auto& cell = result.cells[idx];
    cell.value = values[vi];
    cell.scenario = s.id;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < spec.repetitions; ++r) {
      cell.output = ps.run(configs[vi], n);
      hits += exact_match(cell.output, s.gold) ? 1 : 0;
    }
    cell.accuracy =
        static_cast<double>(hits) / static_cast<double>(spec.repetitions);
  };

  const std::size_t workers =
      std::clamp<std::size_t>(spec.workers, 1, result.cells.size());
  if (workers == 1) {
    for (std::size_t i = 0; i < result.cells.size(); ++i) run_cell(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
          for (auto i = next.fetch_add(1); i < result.cells.size();
               i = next.fetch_add(1)) {
            try {
              run_cell(i);
            } catch (...) {
              std::lock_guard lock(failure_mutex);
              if (!failure) failure = std::current_exception();
            }
          }
        });
      }
    }
    if (failure) std::rethrow_exception(failure);
  }

  for (std::size_t vi = 0; vi < values.size(); ++vi) {
    double sum = 0.0;
    for (std::size_t si = 0; si < n_scen; ++si) {
      sum += result.cells[vi * n_scen + si].accuracy;
    }
    result.values[vi].accuracy = sum / static_cast<double>(n_scen);
  }
  return result;
}

SweepResult run_sweep(const SweepSpec& spec, const ScenarioSuite& suite) {
  auto params = suite.provider;
  params.vocab_size = std::max(params.vocab_size, required_vocab(suite));
  const ToyModel provider(params);
  return run_sweep(spec, suite, provider);
}

}  // namespace pced::sweeps
