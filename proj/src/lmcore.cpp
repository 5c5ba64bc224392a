#include "pced/lmcore.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "pced/errors.hpp"

namespace pced {

namespace {

constexpr std::string_view kReservedNames[] = {"<eos>", "<sep>", "<unk>",
                                               "<pad>"};

std::string lowercase(std::string_view word) {
  std::string out(word);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) {
    return static_cast<char>(std::tolower(c));
  });
  return out;
}

std::uint64_t next_session_id() {
  static std::atomic<std::uint64_t> ids{1};
  return ids.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) words.push_back(lowercase(w));
  return words;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() = default;

Vocabulary::Vocabulary(std::vector<std::string> words) {
  for (auto& w : words) add_text(w);
}

void Vocabulary::add_text(std::string_view text) {
  for (auto& w : split_words(text)) {
    if (std::find(std::begin(kReservedNames), std::end(kReservedNames), w) !=
        std::end(kReservedNames)) {
      continue;
    }
    if (index_.contains(w)) continue;
    index_.emplace(w, static_cast<TokenId>(kFirstWordToken + words_.size()));
    words_.push_back(std::move(w));
  }
}

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
  std::vector<TokenId> out;
  for (const auto& w : split_words(text)) {
    auto reserved =
        std::find(std::begin(kReservedNames), std::end(kReservedNames), w);
    if (reserved != std::end(kReservedNames)) {
      out.push_back(
          static_cast<TokenId>(reserved - std::begin(kReservedNames)));
      continue;
    }
    auto it = index_.find(w);
    out.push_back(it == index_.end() ? kUnkToken : it->second);
  }
  return out;
}

std::string Vocabulary::token_text(TokenId token) const {
  if (token >= 0 && token < kFirstWordToken) {
    return std::string(kReservedNames[token]);
  }
  const auto idx = static_cast<std::size_t>(token - kFirstWordToken);
  if (token < 0 || idx >= words_.size()) {
    return "<t" + std::to_string(token) + ">";
  }
  return words_[idx];
}

std::string Vocabulary::decode(std::span<const TokenId> tokens,
                               bool skip_special) const {
  std::string out;
  for (TokenId t : tokens) {
    if (skip_special && t >= 0 && t < kFirstWordToken) continue;
    if (!out.empty()) out += ' ';
    out += token_text(t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// ProviderSession

ProviderSession::ProviderSession(std::uint64_t id, std::size_t position,
                                 bool amateur,
                                 std::unique_ptr<SessionState> state)
    : id_(id), position_(position), amateur_(amateur),
      state_(std::move(state)) {}

ProviderSession ProviderSession::clone() const {
  ProviderSession copy(next_session_id(), position_, amateur_,
                       state_->clone());
  copy.fed_ = fed_;
  return copy;
}

// ---------------------------------------------------------------------------
// LogitProvider

ProviderSession LogitProvider::open_session(
    std::span<const std::uint8_t> blob) const {
  std::size_t position = 0;
  auto state = restore(blob, position);
  if (!blob.empty()) sessions_restored_.fetch_add(1);
  return ProviderSession(next_session_id(), position, blob.empty(),
                         std::move(state));
}

Blob LogitProvider::encode_prefix(std::span<const TokenId> tokens) const {
  auto session = open_amateur();
  for (TokenId t : tokens) feed(session, t);
  return snapshot(session);
}

Blob LogitProvider::snapshot(const ProviderSession& session) const {
  return serialize(*session.state_, session.position_);
}

void LogitProvider::check_token(TokenId token) const {
  if (token < 0 || static_cast<std::size_t>(token) >= vocab_size()) {
    throw DomainError("token id " + std::to_string(token) +
                      " outside vocabulary of size " +
                      std::to_string(vocab_size()));
  }
}

void LogitProvider::feed(ProviderSession& session, TokenId token) const {
  absorb(*session.state_, token);
  ++session.position_;
  session.fed_.push_back(token);
  tokens_absorbed_.fetch_add(1, std::memory_order_relaxed);
}

std::vector<LogitVector> LogitProvider::step_batch(
    std::span<ProviderSession> sessions, TokenId token) const {
  check_token(token);
  forward_passes_.fetch_add(1, std::memory_order_relaxed);
  std::vector<LogitVector> out;
  out.reserve(sessions.size());
  for (auto& s : sessions) {
    feed(s, token);
    out.push_back(current_logits(*s.state_));
  }
  return out;
}

LogitVector LogitProvider::step(ProviderSession& session,
                                TokenId token) const {
  return std::move(step_batch(std::span(&session, 1), token).front());
}

void LogitProvider::absorb_batch(std::span<ProviderSession> sessions,
                                 std::span<const TokenId> tokens) const {
  for (TokenId t : tokens) check_token(t);
  forward_passes_.fetch_add(tokens.size(), std::memory_order_relaxed);
  for (auto& s : sessions) {
    for (TokenId t : tokens) feed(s, t);
  }
}

LogitVector LogitProvider::logits(const ProviderSession& session) const {
  return current_logits(*session.state_);
}

std::vector<LogitVector> LogitProvider::logits_batch(
    std::span<const ProviderSession> sessions) const {
  std::vector<LogitVector> out;
  out.reserve(sessions.size());
  for (const auto& s : sessions) out.push_back(current_logits(*s.state_));
  return out;
}

WorkCounters LogitProvider::counters() const {
  return {forward_passes_.load(), tokens_absorbed_.load(),
          sessions_restored_.load()};
}

void LogitProvider::reset_counters() const {
  forward_passes_ = 0;
  tokens_absorbed_ = 0;
  sessions_restored_ = 0;
}

// ---------------------------------------------------------------------------

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw DomainError("argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::vector<TokenId> greedy_decode(const LogitProvider& provider,
                                   ProviderSession& session,
                                   std::size_t max_tokens) {
  const auto stops = provider.stop_tokens();
  std::vector<TokenId> out;
  auto logits = provider.logits(session);
  while (out.size() < max_tokens) {
    const auto token = static_cast<TokenId>(argmax(logits));
    out.push_back(token);
    if (std::find(stops.begin(), stops.end(), token) != stops.end()) break;
    if (out.size() < max_tokens) logits = provider.step(session, token);
  }
  return out;
}

}  // namespace pced
