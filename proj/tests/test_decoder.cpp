#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "pced/decoder.hpp"
#include "pced/errors.hpp"
#include "pced/toy_model.hpp"
#include "support.hpp"

using namespace pced;
using pced::testing::Gen;

namespace {

// Independent Jensen-Shannon divergence in base 2, long double throughout.
long double ref_jsd(const std::vector<double>& a, const std::vector<double>& b) {
  auto probs = [](const std::vector<double>& x) {
    long double m = *std::max_element(x.begin(), x.end()), z = 0;
    std::vector<long double> p(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) z += p[i] = std::exp((long double)x[i] - m);
    for (auto& v : p) v /= z;
    return p;
  };
  auto p = probs(a), q = probs(b);
  long double d = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    long double m = (p[i] + q[i]) / 2;
    if (p[i] > 0) d += p[i] * std::log2(p[i] / m) / 2;
    if (q[i] > 0) d += q[i] * std::log2(q[i] / m) / 2;
  }
  return d;
}

// Brute-force max rule: scan every (token, expert) pair, keep strict
// improvements so the lowest token, then lowest expert, wins ties.
Selection ref_max(const std::vector<LogitVector>& cal) {
  Selection best;
  double best_score = -INFINITY;
  for (std::size_t v = 0; v < cal[0].size(); ++v) {
    for (std::size_t k = 0; k < cal.size(); ++k) {
      if (cal[k][v] > best_score) {
        best_score = cal[k][v];
        best = {static_cast<TokenId>(v), k};
      }
    }
  }
  return best;
}

// Minimal provider used to inject failures: logits favour (last + 1) mod V
// and absorbing a token past `fail_at` total tokens throws.
class ScriptedProvider final : public LogitProvider {
 public:
  ScriptedProvider(std::size_t vocab, std::size_t fail_at)
      : vocab_(vocab), fail_at_(fail_at) {}
  std::string id() const override { return "scripted"; }
  std::size_t vocab_size() const override { return vocab_; }
  std::vector<TokenId> stop_tokens() const override { return {}; }

 protected:
  struct State final : SessionState {
    std::vector<TokenId> history;
    std::unique_ptr<SessionState> clone() const override {
      return std::make_unique<State>(*this);
    }
  };
  std::unique_ptr<SessionState> restore(std::span<const std::uint8_t> blob,
                                        std::size_t& position) const override {
    auto s = std::make_unique<State>();
    for (auto b : blob) s->history.push_back(b);
    position = blob.size();
    return s;
  }
  Blob serialize(const SessionState& state, std::size_t) const override {
    Blob out;
    for (auto t : static_cast<const State&>(state).history) out.push_back(static_cast<std::uint8_t>(t));
    return out;
  }
  void absorb(SessionState& state, TokenId token) const override {
    auto& s = static_cast<State&>(state);
    if (s.history.size() >= fail_at_) throw ProviderError("scripted failure");
    s.history.push_back(token);
  }
  LogitVector current_logits(const SessionState& state) const override {
    const auto& s = static_cast<const State&>(state);
    LogitVector out(vocab_, 0.0);
    TokenId last = s.history.empty() ? 0 : s.history.back();
    out[(last + 1) % vocab_] = 1.0;
    return out;
  }

 private:
  std::size_t vocab_;
  std::size_t fail_at_;
};

DecodeConfig plain_config(std::size_t max_tokens) {
  DecodeConfig c;
  c.beta_policy = BetaPolicy::kZero;
  c.gamma = 0.0;
  c.max_tokens = max_tokens;
  return c;
}

}  // namespace

TEST_CASE("calibrate examples") {
  std::vector<double> sk{1, 2}, s0{0.5, 0.5};
  CHECK(calibrate(sk, s0, 0.0, 0.0, std::log(0.3)) == sk);
  auto out = calibrate(sk, s0, 0.5, 0.0, 0.0);
  CHECK(out[0] == doctest::Approx(1.25).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(2.75).epsilon(1e-12));

  auto base = calibrate(sk, s0, 0.5, 0.0, 0.0);
  auto prior = calibrate(sk, s0, 0.5, 2.5, score::prior_log(1.0 - 1e-8));
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(std::abs(prior[i] - base[i]) < 1e-7);
    CHECK(prior[i] - base[i] == doctest::Approx(-2.5e-8).epsilon(1e-6));
  }
  CHECK_THROWS_AS(calibrate(sk, std::vector<double>{1.0}, 0.5, 0, 0), DomainError);
}

TEST_CASE("dynamic_beta examples against an independent oracle") {
  std::vector<double> a{1, 2, 3, 4};
  CHECK(dynamic_beta(a, a) == 0.0);

  std::vector<double> x{50, -50}, y{-50, 50};
  double b = dynamic_beta(x, y);
  CHECK(b == doctest::Approx(static_cast<double>(ref_jsd(x, y))).epsilon(1e-9));
  CHECK(b > 0.999999);
  CHECK(b <= 1.0);

  Gen g(3);
  for (int i = 0; i < 200; ++i) {
    auto p = g.logits(12, 5), q = g.logits(12, 5);
    CHECK(dynamic_beta(p, q) == doctest::Approx(static_cast<double>(ref_jsd(p, q))).epsilon(1e-9));
  }
  CHECK_THROWS_AS(dynamic_beta(a, std::vector<double>{1.0}), DomainError);
}

TEST_CASE("property: dynamic_beta is bounded and symmetric") {
  Gen g(4);
  for (int i = 0; i < 2000; ++i) {
    std::size_t n = g.index(2, 40);
    auto p = g.logits(n, g.real(0.1, 200)), q = g.logits(n, g.real(0.1, 200));
    double pq = dynamic_beta(p, q), qp = dynamic_beta(q, p);
    CHECK(pq >= 0.0);
    CHECK(pq <= 1.0);
    CHECK(std::abs(pq - qp) <= 1e-12);
    CHECK(std::abs(dynamic_beta(p, p)) <= 1e-12);
  }
}

TEST_CASE("select_token examples") {
  std::vector<LogitVector> ab{{3, 0}, {0, 2}};
  auto s = select_token(ab, Aggregation::kMax, TieBreak::kLowestTokenThenExpert);
  CHECK(s.token == 0);
  CHECK(s.expert == 0);

  std::vector<LogitVector> one{{0.1, 0.7, 0.3}};
  for (auto agg : {Aggregation::kMax, Aggregation::kMixture, Aggregation::kProduct}) {
    auto r = select_token(one, agg, TieBreak::kLowestTokenThenExpert);
    CHECK(r.token == 1);
    CHECK(r.expert == 0);
  }

  std::vector<LogitVector> twins{{0.2, 1.5, 0.9}, {0.2, 1.5, 0.9}};
  std::vector<double> equal{0.5, 0.5};
  CHECK(select_token(twins, Aggregation::kMixture, TieBreak::kLowestTokenThenExpert, equal).token == 1);

  CHECK_THROWS_AS(select_token({}, Aggregation::kMax, TieBreak::kLowestTokenThenExpert),
                  DomainError);
}

TEST_CASE("select_token tie-breaking is deterministic") {
  std::vector<LogitVector> tied{{1, 5, 5}, {5, 1, 1}};
  auto a = select_token(tied, Aggregation::kMax, TieBreak::kLowestTokenThenExpert);
  CHECK(a.token == 0);
  CHECK(a.expert == 1);
  auto b = select_token(tied, Aggregation::kMax, TieBreak::kLowestExpertThenToken);
  CHECK(b.token == 1);
  CHECK(b.expert == 0);
}

TEST_CASE("property: max rule agrees with a brute-force scan") {
  Gen g(5);
  for (int i = 0; i < 500; ++i) {
    std::size_t k = g.index(1, 6), v = g.index(2, 30);
    std::vector<LogitVector> cal;
    for (std::size_t e = 0; e < k; ++e) {
      auto l = g.logits(v, 3);
      // Coarse rounding creates ties often enough to exercise tie-breaking.
      for (auto& x : l) x = std::round(x);
      cal.push_back(l);
    }
    auto got = select_token(cal, Aggregation::kMax, TieBreak::kLowestTokenThenExpert);
    auto want = ref_max(cal);
    CHECK(got.token == want.token);
    CHECK(got.expert == want.expert);
  }
}

TEST_CASE("property: shared shifts leave the max-rule choice unchanged") {
  Gen g(6);
  for (int i = 0; i < 1000; ++i) {
    std::size_t k = g.index(1, 5), v = g.index(2, 24);
    double c = g.real(-100, 100), gamma = g.real(0, 5);
    auto s0 = g.logits(v);
    std::vector<LogitVector> sk;
    std::vector<double> beta, prior;
    for (std::size_t e = 0; e < k; ++e) {
      sk.push_back(g.logits(v));
      beta.push_back(g.real(0, 1));
      prior.push_back(score::prior_log(g.real(0, 1)));
    }
    auto shift = [c](std::vector<double> x) {
      for (auto& y : x) y += c;
      return x;
    };
    std::vector<LogitVector> plain, shifted;
    for (std::size_t e = 0; e < k; ++e) {
      plain.push_back(calibrate(sk[e], s0, beta[e], gamma, prior[e]));
      shifted.push_back(calibrate(shift(sk[e]), shift(s0), beta[e], gamma, prior[e]));
    }
    auto a = select_token(plain, Aggregation::kMax, TieBreak::kLowestTokenThenExpert);
    auto b = select_token(shifted, Aggregation::kMax, TieBreak::kLowestTokenThenExpert);
    CHECK(a.token == b.token);
    CHECK(a.expert == b.expert);
  }
}

TEST_CASE("property: within-expert argmax does not depend on gamma") {
  Gen g(7);
  for (int i = 0; i < 1000; ++i) {
    std::size_t v = g.index(2, 50);
    auto sk = g.logits(v), s0 = g.logits(v);
    double beta = g.real(0, 1), pl = score::prior_log(g.real(0, 1));
    auto ref = argmax(calibrate(sk, s0, beta, 0.0, pl));
    for (double gamma : {1.0, 2.5, 10.0}) CHECK(argmax(calibrate(sk, s0, beta, gamma, pl)) == ref);
  }
}

TEST_CASE("property: identical experts are won by the most relevant") {
  Gen g(8);
  for (int i = 0; i < 300; ++i) {
    std::size_t k = g.index(2, 6), v = g.index(2, 20);
    auto sk = g.logits(v), s0 = g.logits(v);
    std::vector<double> r(k);
    for (auto& x : r) x = g.real(0.01, 0.99);
    if (g.coin()) r[g.index(0, k - 1)] = r[0];  // sometimes tie with expert 0
    std::vector<LogitVector> cal;
    for (double rk : r) cal.push_back(calibrate(sk, s0, 0.3, 2.5, score::prior_log(rk)));
    auto s = select_token(cal, Aggregation::kMax, TieBreak::kLowestTokenThenExpert);
    std::size_t best = 0;
    for (std::size_t e = 1; e < k; ++e)
      if (r[e] > r[best]) best = e;
    CHECK(s.expert == best);
  }
}

TEST_CASE("property: mixture and product equal max for a single expert") {
  Gen g(9);
  for (int i = 0; i < 500; ++i) {
    std::vector<LogitVector> one{g.logits(g.index(2, 40))};
    auto m = select_token(one, Aggregation::kMax, TieBreak::kLowestTokenThenExpert);
    CHECK(select_token(one, Aggregation::kMixture, TieBreak::kLowestTokenThenExpert).token == m.token);
    CHECK(select_token(one, Aggregation::kProduct, TieBreak::kLowestTokenThenExpert).token == m.token);
  }
}

TEST_CASE("property: single expert with beta 0 and gamma 0 reduces to greedy decoding") {
  Gen g(10);
  for (int i = 0; i < 40; ++i) {
    ToyModel model({.vocab_size = 40, .order = g.index(1, 2), .seed = g.index(0, 1000)});
    auto doc = g.tokens(g.index(3, 25), 0, 39);
    auto query = g.tokens(g.index(1, 4), 4, 39);
    auto blob = model.encode_prefix(doc);
    ExpertInput e{"d", blob, g.real(0.01, 0.99)};
    auto result = decode_experts(std::span(&e, 1), query, plain_config(8), model);

    auto ref = model.open_amateur();
    for (TokenId t : doc) model.step(ref, t);
    for (TokenId t : query) model.step(ref, t);
    CHECK(result.tokens == greedy_decode(model, ref, 8));
  }
}

TEST_CASE("all sessions share one generation history") {
  Gen g(11);
  ToyModel model({.vocab_size = 60, .order = 1, .seed = 3});
  for (int i = 0; i < 10; ++i) {
    std::vector<Blob> blobs;
    std::vector<ExpertInput> experts;
    std::size_t k = g.index(1, 4);
    for (std::size_t e = 0; e < k; ++e) blobs.push_back(model.encode_prefix(g.tokens(g.index(1, 20), 4, 59)));
    for (std::size_t e = 0; e < k; ++e) experts.push_back({"d" + std::to_string(e), blobs[e], g.real(0.1, 0.9)});
    auto query = g.tokens(3, 4, 59);
    std::size_t steps = 0;
    DecodeConfig config;
    config.max_tokens = 6;
    auto observer = [&](const StepTrace& t, std::span<const ProviderSession> sessions) {
      ++steps;
      REQUIRE(sessions.size() == k + 1);
      CHECK(sessions[0].is_amateur());
      for (const auto& s : sessions) {
        CHECK(s.fed().size() == query.size() + t.step);
        CHECK(std::equal(s.fed().begin(), s.fed().end(), sessions[0].fed().begin(),
                         sessions[0].fed().end()));
      }
    };
    auto r = decode_experts(experts, query, config, model, observer);
    CHECK(steps == r.tokens.size());
    CHECK(r.traces.size() == r.tokens.size());
  }
}

TEST_CASE("decoding stops at the stop token and includes it") {
  ToyModel model({.vocab_size = 40, .order = 1, .seed = 1});
  // Continuations: 20 -> 21 -> 22 -> eos.
  auto blob = model.encode_prefix(std::vector<TokenId>{20, 21, 22, kEosToken});
  ExpertInput e{"d", blob, 0.9};
  auto r = decode_experts(std::span(&e, 1), std::vector<TokenId>{20}, plain_config(10), model);
  CHECK(r.tokens == std::vector<TokenId>{21, 22, kEosToken});
  CHECK(r.traces.size() == 3);

  DecodeConfig keep_going = plain_config(5);
  keep_going.ignore_stop = true;
  CHECK(decode_experts(std::span(&e, 1), std::vector<TokenId>{20}, keep_going, model).tokens.size() == 5);
}

TEST_CASE("provider failure mid-decode carries the partial trace") {
  ScriptedProvider provider(16, 6);
  Blob blob{1, 2};
  ExpertInput e{"d", blob, 0.5};
  // Expert: 2 restored + 1 query token leaves room for 3 generated tokens;
  // the fourth is selected and traced, then feeding it back fails.
  try {
    decode_experts(std::span(&e, 1), std::vector<TokenId>{3}, plain_config(10), provider);
    FAIL("expected a decode error");
  } catch (const DecodeError& err) {
    CHECK(err.partial().tokens == std::vector<TokenId>{4, 5, 6, 7});
    CHECK(err.partial().traces.size() == 4);
  }
}

TEST_CASE("decode config validation and naming") {
  DecodeConfig c;
  CHECK(c.gamma == 2.5);
  CHECK(c.beta_policy == BetaPolicy::kDynamic);
  CHECK(c.aggregation == Aggregation::kMax);
  CHECK_NOTHROW(c.validate());
  c.gamma = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = DecodeConfig{};
  c.max_tokens = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  for (auto p : {BetaPolicy::kDynamic, BetaPolicy::kDynamicGlobal, BetaPolicy::kFixed, BetaPolicy::kZero})
    CHECK(parse_beta_policy(to_string(p)) == p);
  for (auto a : {Aggregation::kMax, Aggregation::kMixture, Aggregation::kProduct})
    CHECK(parse_aggregation(to_string(a)) == a);
  CHECK_THROWS_AS(parse_aggregation("median"), ConfigError);
  CHECK(DecodeConfig{}.to_json()["gamma"] == 2.5);
}

TEST_CASE("beta policies set per-expert or shared betas at the first token") {
  ToyModel model({.vocab_size = 40, .order = 1, .seed = 2});
  auto b1 = model.encode_prefix(std::vector<TokenId>{10, 11, 12, 13});
  auto b2 = model.encode_prefix(std::vector<TokenId>{20, 21});
  std::vector<ExpertInput> experts{{"a", b1, 0.9}, {"b", b2, 0.4}};
  std::vector<TokenId> q{12};

  DecodeConfig c;
  c.max_tokens = 3;
  auto dyn = decode_experts(experts, q, c, model);
  REQUIRE(dyn.traces.size() >= 2);
  CHECK(dyn.traces[0].betas[0] != dyn.traces[0].betas[1]);
  CHECK(dyn.traces[1].betas == dyn.traces[0].betas);

  c.beta_policy = BetaPolicy::kDynamicGlobal;
  auto glob = decode_experts(experts, q, c, model);
  CHECK(glob.traces[0].betas[0] == glob.traces[0].betas[1]);
  CHECK(glob.traces[0].betas[0] == doctest::Approx(dyn.traces[0].betas[0]));

  c.beta_policy = BetaPolicy::kFixed;
  c.fixed_beta = 0.75;
  auto fixed = decode_experts(experts, q, c, model);
  CHECK(fixed.traces[0].betas == std::vector<double>{0.75, 0.75});
}
