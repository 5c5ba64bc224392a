#pragma once

// Logit-provider contract. A provider owns the model; callers own
// ProviderSession objects, each one decoding stream whose state was restored
// from a cache blob (contextual expert) or from nothing (amateur).

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace pced {

using TokenId = std::int32_t;
using LogitVector = std::vector<double>;
using Blob = std::vector<std::uint8_t>;

inline constexpr TokenId kEosToken = 0;
inline constexpr TokenId kSepToken = 1;
inline constexpr TokenId kUnkToken = 2;
inline constexpr TokenId kPadToken = 3;
inline constexpr TokenId kFirstWordToken = 4;

// Lowercased whitespace-separated words.
std::vector<std::string> split_words(std::string_view text);

// Whitespace word vocabulary with the four reserved ids above. Words are
// lowercased; reserved tokens may be written literally ("<eos>", "<sep>").
class Vocabulary {
 public:
  Vocabulary();
  explicit Vocabulary(std::vector<std::string> words);

  // Registers every word of `text` not seen before, in order of appearance.
  void add_text(std::string_view text);

  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> tokens,
                     bool skip_special = true) const;
  std::string token_text(TokenId token) const;

  // Ordinary words, excluding the reserved prefix.
  const std::vector<std::string>& words() const { return words_; }
  std::size_t size() const { return kFirstWordToken + words_.size(); }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

// Provider-specific evolving state behind a session.
class SessionState {
 public:
  virtual ~SessionState() = default;
  virtual std::unique_ptr<SessionState> clone() const = 0;
};

class ProviderSession {
 public:
  ProviderSession(ProviderSession&&) noexcept = default;
  ProviderSession& operator=(ProviderSession&&) noexcept = default;

  std::uint64_t id() const { return id_; }
  // Tokens absorbed in total, including those restored from the blob.
  std::size_t position() const { return position_; }
  // Tokens fed since the session was opened.
  std::span<const TokenId> fed() const { return fed_; }
  bool is_amateur() const { return amateur_; }

  // Deep copy with a fresh session id.
  ProviderSession clone() const;

 private:
  friend class LogitProvider;
  ProviderSession(std::uint64_t id, std::size_t position, bool amateur,
                  std::unique_ptr<SessionState> state);

  std::uint64_t id_;
  std::size_t position_;
  bool amateur_;
  std::vector<TokenId> fed_;
  std::unique_ptr<SessionState> state_;
};

// Instrumented work. A forward pass is one batched step over every session
// in the batch; absorbed tokens count per session.
struct WorkCounters {
  std::uint64_t forward_passes = 0;
  std::uint64_t tokens_absorbed = 0;
  std::uint64_t sessions_restored = 0;
};

class LogitProvider {
 public:
  virtual ~LogitProvider() = default;

  // Identifier and version tag; written into every blob and store manifest.
  virtual std::string id() const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual std::vector<TokenId> stop_tokens() const { return {kEosToken}; }

  // Empty blob opens an amateur session at position 0.
  ProviderSession open_session(std::span<const std::uint8_t> blob) const;
  ProviderSession open_amateur() const { return open_session({}); }

  // Cache blob for a document: absorb `tokens` from an empty session and
  // snapshot the resulting state.
  Blob encode_prefix(std::span<const TokenId> tokens) const;
  Blob snapshot(const ProviderSession& session) const;

  // Feeds `token` to every session and returns one logit vector per session.
  // Equivalent to calling step() on each session in turn.
  std::vector<LogitVector> step_batch(std::span<ProviderSession> sessions,
                                      TokenId token) const;
  LogitVector step(ProviderSession& session, TokenId token) const;

  // Prefill: feeds `tokens` to every session without returning intermediate
  // logits. Charges one forward pass per token.
  void absorb_batch(std::span<ProviderSession> sessions,
                    std::span<const TokenId> tokens) const;

  // Next-token logits for the current state, without advancing.
  LogitVector logits(const ProviderSession& session) const;
  std::vector<LogitVector> logits_batch(
      std::span<const ProviderSession> sessions) const;

  WorkCounters counters() const;
  void reset_counters() const;

 protected:
  virtual std::unique_ptr<SessionState> restore(
      std::span<const std::uint8_t> blob, std::size_t& position) const = 0;
  virtual Blob serialize(const SessionState& state,
                         std::size_t position) const = 0;
  virtual void absorb(SessionState& state, TokenId token) const = 0;
  virtual LogitVector current_logits(const SessionState& state) const = 0;

  void check_token(TokenId token) const;

 private:
  void feed(ProviderSession& session, TokenId token) const;

  mutable std::atomic<std::uint64_t> forward_passes_{0};
  mutable std::atomic<std::uint64_t> tokens_absorbed_{0};
  mutable std::atomic<std::uint64_t> sessions_restored_{0};
};

// Plain greedy decoding of one session: argmax (lowest id on ties) until a
// stop token or `max_tokens`. Used as the single-stream reference.
std::vector<TokenId> greedy_decode(const LogitProvider& provider,
                                   ProviderSession& session,
                                   std::size_t max_tokens);

// Index of the largest entry; lowest index wins ties.
std::size_t argmax(std::span<const double> values);

}  // namespace pced
