#include "pced/bench.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "pced/decoder.hpp"
#include "pced/errors.hpp"

namespace pced::bench {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

struct Timing {
  double ttft = 0.0;
  double end_to_end = 0.0;
  WorkCounters at_first_token;
  std::vector<TokenId> tokens;
};

Timing time_pced(const SyntheticInstance& instance,
                 const std::vector<Blob>& blobs, const LogitProvider& provider,
                 const LatencyOptions& options, std::size_t max_tokens,
                 bool ignore_stop) {
  std::vector<ExpertInput> experts;
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    experts.push_back({"doc" + std::to_string(i), blobs[i],
                       i == instance.gold_index ? options.gold_relevance
                                                : options.distractor_relevance});
  }
  DecodeConfig config;
  config.max_tokens = max_tokens;
  config.ignore_stop = ignore_stop;

  Timing t;
  provider.reset_counters();
  const auto start = Clock::now();
  auto first = start;
  const auto result = decode_experts(
      experts, instance.query, config, provider,
      [&](const StepTrace& trace, std::span<const ProviderSession>) {
        if (trace.step == 0) {
          first = Clock::now();
          t.at_first_token = provider.counters();
        }
      });
  const auto end = Clock::now();
  t.ttft = seconds_between(start, first);
  t.end_to_end = max_tokens == 1 ? t.ttft : seconds_between(start, end);
  t.tokens = result.tokens;
  return t;
}

Timing time_concat(const SyntheticInstance& instance,
                   const LogitProvider& provider, std::size_t max_tokens,
                   bool ignore_stop) {
  std::vector<TokenId> prompt;
  for (const auto& doc : instance.documents) {
    prompt.insert(prompt.end(), doc.begin(), doc.end());
    prompt.push_back(kSepToken);
  }
  prompt.insert(prompt.end(), instance.query.begin(), instance.query.end());
  const auto stops = provider.stop_tokens();

  Timing t;
  provider.reset_counters();
  const auto start = Clock::now();
  auto session = provider.open_amateur();
  std::vector<ProviderSession> one;
  one.push_back(std::move(session));
  provider.absorb_batch(one, prompt);
  auto logits = provider.logits(one.front());
  t.tokens.push_back(static_cast<TokenId>(argmax(logits)));
  const auto first = Clock::now();
  t.at_first_token = provider.counters();
  while (t.tokens.size() < max_tokens) {
    if (!ignore_stop && std::find(stops.begin(), stops.end(),
                                  t.tokens.back()) != stops.end()) {
      break;
    }
    logits = provider.step(one.front(), t.tokens.back());
    t.tokens.push_back(static_cast<TokenId>(argmax(logits)));
  }
  const auto end = Clock::now();
  t.ttft = seconds_between(start, first);
  t.end_to_end = max_tokens == 1 ? t.ttft : seconds_between(start, end);
  return t;
}

}  // namespace

std::string_view to_string(Method method) {
  return method == Method::kPced ? "pced" : "concat";
}

SyntheticInstance generate_synthetic(std::size_t n_docs, std::size_t doc_len,
                                     std::uint64_t seed,
                                     std::size_t vocab_size,
                                     std::size_t code_len) {
  if (n_docs == 0) throw DomainError("generate_synthetic: n_docs must be >= 1");
  if (code_len == 0 || code_len > static_cast<std::size_t>(kCodeAlphabet)) {
    throw DomainError("generate_synthetic: code length must be in [1, 32]");
  }
  // "secret", ":", code, <eos>
  const std::size_t payload = code_len + 3;
  if (doc_len < payload) {
    throw DomainError("generate_synthetic: doc_len " + std::to_string(doc_len) +
                      " cannot hold a " + std::to_string(code_len) +
                      "-token code");
  }
  if (vocab_size < kMinVocab) {
    throw DomainError("generate_synthetic: vocab_size must be >= " +
                      std::to_string(kMinVocab));
  }

  std::mt19937_64 rng(seed);
  SyntheticInstance inst;
  std::uniform_int_distribution<std::size_t> pick_gold(0, n_docs - 1);
  inst.gold_index = pick_gold(rng);

  std::vector<TokenId> alphabet(kCodeAlphabet);
  std::iota(alphabet.begin(), alphabet.end(), kFirstCodeToken);
  std::shuffle(alphabet.begin(), alphabet.end(), rng);
  inst.secret_code.assign(alphabet.begin(), alphabet.begin() + code_len);

  std::uniform_int_distribution<TokenId> filler(
      kFirstFillerToken, static_cast<TokenId>(vocab_size - 1));
  inst.documents.resize(n_docs);
  for (auto& doc : inst.documents) {
    doc.resize(doc_len);
    for (auto& t : doc) t = filler(rng);
  }
  std::uniform_int_distribution<std::size_t> offset(0, doc_len - payload);
  auto at = inst.documents[inst.gold_index].begin() + offset(rng);
  *at++ = kMarkerToken;
  *at++ = kColonToken;
  at = std::copy(inst.secret_code.begin(), inst.secret_code.end(), at);
  *at = kEosToken;

  inst.query = {6, 7, 8, 9, kMarkerToken, kColonToken};
  return inst;
}

const MethodLatency& LatencyReport::method(Method m) const {
  for (const auto& x : methods) {
    if (x.method == m) return x;
  }
  throw NotFoundError("method not in report");
}

nlohmann::json LatencyReport::to_json(bool include_timing) const {
  nlohmann::json j;
  j["n_docs"] = n_docs;
  j["doc_len"] = doc_len;
  j["generated_tokens"] = generated_tokens;
  j["repeats"] = repeats;
  j["warmup"] = warmup;
  j["methods"] = nlohmann::json::array();
  for (const auto& m : methods) {
    nlohmann::json jm;
    jm["method"] = to_string(m.method);
    jm["prefill_passes"] = m.prefill_passes;
    jm["prefill_tokens"] = m.prefill_tokens;
    jm["sessions_restored"] = m.sessions_restored;
    jm["correct"] = m.correct;
    if (include_timing) {
      jm["ttft_seconds"] = m.ttft_seconds;
      jm["end_to_end_seconds"] = m.end_to_end_seconds;
      jm["ttft_samples"] = m.ttft_samples;
      jm["end_to_end_samples"] = m.end_to_end_samples;
    }
    j["methods"].push_back(std::move(jm));
  }
  return j;
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const auto mid = values.size() / 2;
  return values.size() % 2 == 1 ? values[mid]
                                 : 0.5 * (values[mid - 1] + values[mid]);
}

double variance(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  const double mean =
      std::accumulate(values.begin(), values.end(), 0.0) / values.size();
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return ss / static_cast<double>(values.size() - 1);
}

LatencyReport run_latency(const SyntheticInstance& instance,
                          const LogitProvider& provider,
                          const LatencyOptions& options) {
  if (options.repeats == 0) throw BenchError("repeats must be >= 1");
  LatencyReport report;
  report.n_docs = instance.documents.size();
  report.doc_len =
      instance.documents.empty() ? 0 : instance.documents.front().size();
  report.generated_tokens = options.generated_tokens;
  report.repeats = options.repeats;
  report.warmup = options.warmup;

  try {
    // Offline preparation, outside every timed region.
    std::vector<Blob> blobs;
    const bool want_pced =
        std::find(options.methods.begin(), options.methods.end(),
                  Method::kPced) != options.methods.end();
    if (want_pced) {
      for (const auto& doc : instance.documents) {
        blobs.push_back(provider.encode_prefix(doc));
      }
    }

    const std::size_t max_tokens = 1 + options.generated_tokens;
    auto run_once = [&](Method m) {
      return m == Method::kPced
                 ? time_pced(instance, blobs, provider, options, max_tokens, true)
                 : time_concat(instance, provider, max_tokens, true);
    };

    for (Method m : options.methods) {
      MethodLatency ml;
      ml.method = m;
      if (options.warmup) run_once(m);
      for (std::size_t r = 0; r < options.repeats; ++r) {
        const auto t = run_once(m);
        ml.ttft_samples.push_back(t.ttft);
        ml.end_to_end_samples.push_back(t.end_to_end);
        ml.prefill_passes = t.at_first_token.forward_passes;
        ml.prefill_tokens = t.at_first_token.tokens_absorbed;
        ml.sessions_restored = t.at_first_token.sessions_restored;
      }
      ml.ttft_seconds = median(ml.ttft_samples);
      ml.end_to_end_seconds = median(ml.end_to_end_samples);
      report.methods.push_back(std::move(ml));
    }

    // Correctness gate: both methods must recite the code and stop.
    auto expected = instance.secret_code;
    expected.push_back(kEosToken);
    for (auto& ml : report.methods) {
      const auto t =
          ml.method == Method::kPced
              ? time_pced(instance, blobs, provider, options,
                          expected.size(), false)
              : time_concat(instance, provider, expected.size(), false);
      ml.correct = t.tokens == expected;
      if (!ml.correct) {
        throw BenchError(std::string(to_string(ml.method)) +
                         " did not recover the secret code");
      }
    }
  } catch (const BenchError&) {
    throw;
  } catch (const std::exception& ex) {
    throw BenchError(std::string("latency run failed: ") + ex.what());
  }
  return report;
}

std::string summary_table(const std::vector<LatencyReport>& reports,
                          bool include_timing) {
  std::ostringstream os;
  os << std::left << std::setw(8) << "method" << std::right << std::setw(6)
     << "N" << std::setw(8) << "L" << std::setw(8) << "gen" << std::setw(12)
     << "passes" << std::setw(12) << "tokens";
  if (include_timing) os << std::setw(14) << "ttft_ms" << std::setw(14) << "e2e_ms";
  os << std::setw(9) << "correct" << '\n';
  for (const auto& r : reports) {
    for (const auto& m : r.methods) {
      os << std::left << std::setw(8) << to_string(m.method) << std::right
         << std::setw(6) << r.n_docs << std::setw(8) << r.doc_len
         << std::setw(8) << r.generated_tokens << std::setw(12)
         << m.prefill_passes << std::setw(12) << m.prefill_tokens;
      if (include_timing) {
        os << std::setw(14) << std::fixed << std::setprecision(3)
           << m.ttft_seconds * 1e3 << std::setw(14) << m.end_to_end_seconds * 1e3;
      }
      os << std::setw(9) << (m.correct ? "yes" : "no") << '\n';
    }
  }
  return os.str();
}

}  // namespace pced::bench
