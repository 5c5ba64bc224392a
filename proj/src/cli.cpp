#include "pced/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "pced/bench.hpp"
#include "pced/cachestore.hpp"
#include "pced/decoder.hpp"
#include "pced/errors.hpp"
#include "pced/sweeps.hpp"
#include "pced/toy_model.hpp"
#include "pced/trace.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pced::cli {

namespace {

constexpr std::uint64_t kDefaultSeed = 42;

// "toy" or "toy:key=value,key=value" with keys vocab, order, base, unigram,
// continuation. The seed comes from --seed.
ToyModelParams parse_provider_spec(const std::string& spec, std::uint64_t seed) {
  ToyModelParams p;
  p.seed = seed;
  p.vocab_size = 0;
  if (spec.rfind("toy", 0) != 0) {
    throw ConfigError("provider '" + spec +
                      "' is not available; only the built-in toy provider "
                      "ships (external logit adapters are documented only)");
  }
  if (spec == "toy") return p;
  if (spec.size() < 4 || spec[3] != ':') {
    throw ConfigError("malformed provider spec '" + spec + "'");
  }
  std::stringstream fields(spec.substr(4));
  std::string kv;
  while (std::getline(fields, kv, ',')) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("malformed provider field '" + kv + "'");
    }
    const auto key = kv.substr(0, eq);
    const auto value = kv.substr(eq + 1);
    try {
      if (key == "vocab") {
        p.vocab_size = std::stoull(value);
      } else if (key == "order") {
        p.order = std::stoull(value);
      } else if (key == "base") {
        p.base_scale = std::stod(value);
      } else if (key == "unigram") {
        p.unigram_bonus = std::stod(value);
      } else if (key == "continuation") {
        p.continuation_bonus = std::stod(value);
      } else {
        throw ConfigError("unknown provider field '" + key + "'");
      }
    } catch (const std::logic_error&) {
      throw ConfigError("bad provider field value '" + kv + "'");
    }
  }
  if (p.order == 0) throw ConfigError("provider order must be >= 1");
  return p;
}

std::vector<CorpusDocument> read_corpus(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw NotFoundError("corpus directory " + dir.string() + " not found");
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".txt") {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<CorpusDocument> corpus;
  for (const auto& f : files) {
    std::ifstream in(f);
    if (!in) throw NotFoundError("cannot read " + f.string());
    std::stringstream text;
    text << in.rdbuf();
    corpus.push_back({f.stem().string(), text.str()});
  }
  return corpus;
}

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream in(csv);
  std::string item;
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void echo(std::ostream& out, const json& config) {
  out << "config: " << config.dump() << '\n';
}

// Decode flags shared by query and sweep.
struct DecodeFlags {
  double gamma = kDefaultGamma;
  double beta = 0.0;
  std::string beta_policy;
  std::string aggregation = "max";
  std::string tie_break = "lowest-token";
  std::size_t max_tokens = 32;
  CLI::Option* beta_opt = nullptr;

  void add_to(CLI::App& app) {
    app.add_option("--gamma", gamma, "retrieval prior weight")
        ->capture_default_str();
    beta_opt = app.add_option("--beta", beta,
                              "fixed contrast strength (implies "
                              "--beta-policy fixed)");
    app.add_option("--beta-policy", beta_policy,
                   "dynamic | dynamic-global | fixed | zero (default dynamic)");
    app.add_option("--aggregation", aggregation, "max | mixture | product")
        ->capture_default_str();
    app.add_option("--tie-break", tie_break, "lowest-token | lowest-expert")
        ->capture_default_str();
    app.add_option("--max-tokens", max_tokens, "generation budget")
        ->capture_default_str();
  }

  DecodeConfig resolve() const {
    DecodeConfig c;
    c.gamma = gamma;
    c.aggregation = parse_aggregation(aggregation);
    c.tie_break = parse_tie_break(tie_break);
    c.max_tokens = max_tokens;
    const bool has_beta = beta_opt && beta_opt->count() > 0;
    if (!beta_policy.empty()) c.beta_policy = parse_beta_policy(beta_policy);
    if (has_beta) {
      if (!beta_policy.empty() && c.beta_policy != BetaPolicy::kFixed) {
        throw ConfigError("--beta conflicts with --beta-policy " + beta_policy);
      }
      c.beta_policy = BetaPolicy::kFixed;
      c.fixed_beta = beta;
    } else if (c.beta_policy == BetaPolicy::kFixed) {
      throw ConfigError("--beta-policy fixed requires --beta");
    }
    c.validate();
    return c;
  }
};

struct BuildArgs {
  std::string corpus;
  std::string store;
  std::string provider = "toy";
  std::uint64_t seed = kDefaultSeed;
  std::size_t embed_dim = 64;
};

int cmd_build(const BuildArgs& a, std::ostream& out) {
  const auto corpus = read_corpus(a.corpus);
  auto params = parse_provider_spec(a.provider, a.seed);
  Vocabulary vocab;
  for (const auto& d : corpus) vocab.add_text(d.text);
  params.vocab_size = std::max(params.vocab_size, vocab.size());
  const ToyModel provider(params);
  const HashingEmbedder embedder(a.embed_dim, a.seed);

  echo(out, {{"command", "build-cache"},
             {"corpus", a.corpus},
             {"store", a.store},
             {"provider", provider.id()},
             {"embedder", embedder.id()},
             {"seed", a.seed}});
  const auto store = DocumentStore::build(corpus, embedder, provider);
  store.save(a.store);
  out << "built store with " << store.size() << " entries at " << a.store
      << '\n';
  return kOk;
}

struct QueryArgs {
  std::string store;
  std::string question;
  std::string system;
  std::size_t topk = 4;
  std::string mode = "dense";
  std::string reranker = "overlap";
  std::uint64_t seed = kDefaultSeed;
  std::string trace_out;
  bool oracle_single = false;
  DecodeFlags decode;
};

int cmd_query(const QueryArgs& a, std::ostream& out) {
  const auto config = a.decode.resolve();
  const auto mode = score::parse_mode(a.mode);
  if (mode == score::Mode::kReranker) {
    throw ConfigError("--mode must be dense, colbert or sparse");
  }
  if (a.topk == 0) throw ConfigError("--topk must be >= 1");
  if (a.reranker != "overlap" && a.reranker != "hash") {
    throw ConfigError("--reranker must be overlap or hash");
  }
  if (a.oracle_single) {
    const bool no_contrast =
        config.beta_policy == BetaPolicy::kZero ||
        (config.beta_policy == BetaPolicy::kFixed && config.fixed_beta == 0.0);
    if (a.topk != 1 || !no_contrast || config.gamma != 0.0) {
      throw ConfigError(
          "--oracle-single requires --topk 1 --beta 0 --gamma 0");
    }
  }

  const auto store = DocumentStore::load(a.store);
  const ToyModel provider(ToyModel::parse_id(store.provider_id()));
  const auto embedder = HashingEmbedder::from_id(store.embedder_id());
  const std::string prompt =
      a.system.empty() ? a.question : a.system + " " + a.question;
  const auto query_tokens = store.vocabulary().encode(prompt);

  auto echo_json = config.to_json();
  echo_json["command"] = "query";
  echo_json["store"] = a.store;
  echo_json["provider"] = provider.id();
  echo_json["topk"] = a.topk;
  echo_json["mode"] = a.mode;
  echo_json["reranker"] = a.reranker;
  echo_json["seed"] = a.seed;
  echo_json["system"] = a.system;
  echo_json["question"] = a.question;
  echo(out, echo_json);

  const OverlapReranker overlap;
  const HashReranker hashed(a.seed);
  Retriever retriever;
  retriever.reranker = a.reranker == "hash" ? static_cast<const Reranker*>(&hashed)
                                            : &overlap;
  const auto retrieval = retrieve(store, embedder.embed(a.question),
                                  a.question, a.topk, mode, retriever);
  if (retrieval.entries.empty()) {
    throw NotFoundError("store " + a.store + " is empty");
  }
  for (const auto& d : retrieval.entries) {
    out << "retrieved: " << d.doc_id << " retrieval=" << d.relevance.retrieval
        << " reranker=" << d.relevance.reranker
        << " fused=" << d.relevance.fused << '\n';
  }

  const auto result = decode(store, retrieval, query_tokens, config, provider);
  out << "answer: " << store.vocabulary().decode(result.tokens) << '\n';

  if (!a.trace_out.empty()) {
    std::ofstream trace(a.trace_out);
    if (!trace) throw ConfigError("cannot write trace to " + a.trace_out);
    write_trace_jsonl(trace, to_records(result, store.vocabulary()));
  }

  if (a.oracle_single) {
    const auto& doc = store.entry(retrieval.entries.front().doc_id);
    auto session = provider.open_amateur();
    std::vector<ProviderSession> one;
    one.push_back(std::move(session));
    provider.absorb_batch(one, doc.tokens);
    provider.absorb_batch(one, query_tokens);
    const auto greedy = greedy_decode(provider, one.front(), config.max_tokens);
    const bool match = greedy == result.tokens;
    out << "oracle: " << (match ? "match" : "mismatch")
        << " greedy=" << store.vocabulary().decode(greedy) << '\n';
    return match ? kOk : kOracleMismatch;
  }
  return kOk;
}

struct BenchArgs {
  std::string n_docs = "4,8,16,32";
  std::size_t doc_len = 256;
  std::size_t generated_tokens = 0;
  std::size_t repeats = 5;
  std::size_t vocab_size = 512;
  std::size_t order = 1;
  bool no_warmup = false;
  bool steps = false;
  std::uint64_t seed = kDefaultSeed;
  std::string out;
};

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  std::vector<std::size_t> ns;
  for (const auto& item : split_list(a.n_docs)) {
    std::size_t n = 0;
    try {
      n = std::stoull(item);
    } catch (const std::logic_error&) {
      throw ConfigError("bad --n-docs entry '" + item + "'");
    }
    if (n < 1 || n > 128) throw ConfigError("--n-docs entries must be in [1, 128]");
    ns.push_back(n);
  }
  if (ns.empty()) throw ConfigError("--n-docs is empty");

  ToyModelParams params;
  params.vocab_size = a.vocab_size;
  params.order = a.order;
  params.seed = a.seed;
  const ToyModel provider(params);

  bench::LatencyOptions options;
  options.generated_tokens = a.generated_tokens;
  options.warmup = !a.no_warmup;
  options.repeats = a.steps ? 1 : a.repeats;

  echo(out, {{"command", "bench"},
             {"n_docs", ns},
             {"doc_len", a.doc_len},
             {"generated_tokens", a.generated_tokens},
             {"repeats", options.repeats},
             {"warmup", options.warmup},
             {"steps_only", a.steps},
             {"provider", provider.id()},
             {"seed", a.seed}});

  std::vector<bench::LatencyReport> reports;
  for (auto n : ns) {
    const auto instance =
        bench::generate_synthetic(n, a.doc_len, a.seed, a.vocab_size);
    reports.push_back(bench::run_latency(instance, provider, options));
  }
  out << bench::summary_table(reports, !a.steps);
  if (!a.out.empty()) {
    std::ofstream f(a.out);
    if (!f) throw ConfigError("cannot write " + a.out);
    for (const auto& r : reports) f << r.to_json(!a.steps).dump() << '\n';
  }
  return kOk;
}

struct SweepArgs {
  std::string scenario;
  std::string axis;
  std::string values;
  std::size_t repetitions = 1;
  std::size_t workers = 1;
  std::uint64_t seed = kDefaultSeed;
  CLI::Option* seed_opt = nullptr;
  std::string out;
  DecodeFlags decode;
};

int cmd_sweep(const SweepArgs& a, std::ostream& out) {
  sweeps::SweepSpec spec;
  spec.axis = sweeps::parse_axis(a.axis);
  spec.values = split_list(a.values);
  spec.repetitions = a.repetitions;
  spec.workers = a.workers;
  spec.base = a.decode.resolve();
  // Cells inherit the suite's per-scenario budgets; the flag is a fallback.
  auto suite = sweeps::ScenarioSuite::load(a.scenario);
  if (a.seed_opt && a.seed_opt->count() > 0) suite.provider.seed = a.seed;

  auto echo_json = spec.base.to_json();
  echo_json["command"] = "sweep";
  echo_json["scenario"] = a.scenario;
  echo_json["suite"] = suite.name;
  echo_json["axis"] = sweeps::to_string(spec.axis);
  echo_json["values"] =
      spec.values.empty() ? sweeps::default_values(spec.axis) : spec.values;
  echo_json["repetitions"] = spec.repetitions;
  echo_json["seed"] = suite.provider.seed;
  echo(out, echo_json);

  const auto result = sweeps::run_sweep(spec, suite);
  out << result.table();
  if (!a.out.empty()) {
    std::ofstream f(a.out);
    if (!f) throw ConfigError("cannot write " + a.out);
    f << result.to_jsonl();
  }
  return kOk;
}

int cmd_trace_plot(const std::string& path, std::ostream& out) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot read trace " + path);
  echo(out, {{"command", "trace-plot"}, {"trace", path}});
  out << render_trace_plot(read_trace_jsonl(in));
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out,
        std::ostream& err) {
  CLI::App app{"Parallel context-of-experts decoding over cached documents",
               "pced"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "pced 1.0.0");

  BuildArgs build;
  auto* build_cmd = app.add_subcommand(
      "build-cache", "tokenize, embed and cache every .txt file of a corpus");
  build_cmd->add_option("--corpus", build.corpus, "directory of .txt documents")
      ->required();
  build_cmd->add_option("--store", build.store, "output store directory")
      ->required();
  build_cmd->add_option("--provider", build.provider,
                        "toy[:vocab=N,order=K,base=X,unigram=X,continuation=X]")
      ->capture_default_str();
  build_cmd->add_option("--seed", build.seed)->capture_default_str();
  build_cmd->add_option("--embed-dim", build.embed_dim)->capture_default_str();

  QueryArgs query;
  auto* query_cmd =
      app.add_subcommand("query", "retrieve and decode an answer with traces");
  query_cmd->add_option("--store", query.store)->required();
  query_cmd->add_option("--question", query.question)->required();
  query_cmd->add_option("--system", query.system,
                        "instruction text placed before the question");
  query_cmd->add_option("--topk", query.topk, "number of experts")
      ->capture_default_str();
  query_cmd->add_option("--mode", query.mode, "dense | colbert | sparse")
      ->capture_default_str();
  query_cmd->add_option("--reranker", query.reranker, "overlap | hash")
      ->capture_default_str();
  query_cmd->add_option("--seed", query.seed, "hash reranker seed")
      ->capture_default_str();
  query_cmd->add_option("--trace-out", query.trace_out,
                        "write the step trace as JSON lines");
  query_cmd->add_flag("--oracle-single", query.oracle_single,
                      "compare against plain greedy decoding of the single "
                      "retrieved document");
  query.decode.add_to(*query_cmd);

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand(
      "bench", "TTFT / end-to-end latency of PCED vs concatenation");
  bench_cmd->add_option("--n-docs,--topk", bench.n_docs,
                        "comma-separated document counts in [1, 128]")
      ->capture_default_str();
  bench_cmd->add_option("--doc-len", bench.doc_len)->capture_default_str();
  bench_cmd->add_option("--generated-tokens", bench.generated_tokens,
                        "tokens decoded after the first")
      ->capture_default_str();
  bench_cmd->add_option("--repeats", bench.repeats)->capture_default_str();
  bench_cmd->add_option("--vocab-size", bench.vocab_size)->capture_default_str();
  bench_cmd->add_option("--order", bench.order)->capture_default_str();
  bench_cmd->add_flag("--no-warmup", bench.no_warmup);
  bench_cmd->add_flag("--steps", bench.steps,
                      "report instrumented step counts only (deterministic)");
  bench_cmd->add_option("--seed", bench.seed)->capture_default_str();
  bench_cmd->add_option("--out", bench.out, "JSON lines report");

  SweepArgs sweep;
  auto* sweep_cmd =
      app.add_subcommand("sweep", "ablation grid over a scenario suite");
  sweep_cmd->add_option("--scenario", sweep.scenario, "scenario suite file")
      ->required();
  sweep_cmd->add_option("--axis", sweep.axis,
                        "beta | gamma | components | aggregation | topk")
      ->required();
  sweep_cmd->add_option("--values", sweep.values,
                        "comma-separated grid (default: the axis grid)");
  sweep_cmd->add_option("--repetitions", sweep.repetitions)
      ->capture_default_str();
  sweep_cmd->add_option("--workers", sweep.workers)->capture_default_str();
  sweep.seed_opt = sweep_cmd->add_option("--seed", sweep.seed,
                                         "override the suite's provider seed");
  sweep_cmd->add_option("--out", sweep.out, "JSON lines records");
  sweep.decode.add_to(*sweep_cmd);

  std::string trace_path;
  auto* plot_cmd = app.add_subcommand(
      "trace-plot", "render expert switching from a trace file");
  plot_cmd->add_option("--trace", trace_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    if (*build_cmd) return cmd_build(build, out);
    if (*query_cmd) return cmd_query(query, out);
    if (*bench_cmd) return cmd_bench(bench, out);
    if (*sweep_cmd) return cmd_sweep(sweep, out);
    if (*plot_cmd) return cmd_trace_plot(trace_path, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const NotFoundError& e) {
    err << "error: " << e.what() << '\n';
    return kStoreError;
  } catch (const CorruptionError& e) {
    err << "error: " << e.what() << '\n';
    return kStoreError;
  } catch (const BuildError& e) {
    err << "error: " << e.what() << '\n';
    return kStoreError;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kInternalError;
  }
  return kUsageError;
}

int run(const std::vector<std::string>& args, std::ostream& out,
        std::ostream& err) {
  std::vector<const char*> argv{"pced"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace pced::cli
