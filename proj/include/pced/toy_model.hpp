#pragma once

// Deterministic desk-scale language model implementing the provider contract.
//
// Next-token logits for a session are
//
//   base_scale * u(seed, window, v)                 seeded n-gram table in [-1, 1)
//   + unigram_bonus     * [v occurs in the prefix]
//   + continuation_bonus * c(window -> v) / c(window)
//
// where `window` is the last `order` absorbed tokens and the counts c(.) are
// taken over the session's own absorbed prefix. The continuation term lets a
// session restored from a document's cache reproduce that document's
// continuations, so contextual experts and the amateur genuinely disagree.
//
// Absorbing a token recomputes the logit row for the new position, mirroring
// a transformer prefill that produces hidden states for every position. Base
// rows are memoised per window; the first use of a window is the provider's
// one-time warmup cost.
//
// Blob layout (little-endian):
//   "PCEDTOY\0" | u32 format version | u32 id length | id bytes | u64 position
//   | u32 n, n x i32 window (oldest first)
//   | u32 n, n x (i32 token, u32 count)           prefix multiset
//   | u32 n, n x (u32 k, k x i32 context, u32 m, m x (i32 token, u32 count))

#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "pced/lmcore.hpp"

namespace pced {

struct ToyModelParams {
  std::size_t vocab_size = 512;
  std::size_t order = 1;
  std::uint64_t seed = 42;
  double base_scale = 1.0;
  double unigram_bonus = 1.0;
  double continuation_bonus = 8.0;
};

class ToyModel final : public LogitProvider {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  explicit ToyModel(ToyModelParams params);

  // Parses the string produced by id(), e.g.
  // "toy/1 vocab=512 order=1 seed=42 base=1 unigram=1 continuation=8".
  // Unspecified keys keep their defaults.
  static ToyModelParams parse_id(std::string_view id);

  std::string id() const override;
  std::size_t vocab_size() const override { return params_.vocab_size; }
  const ToyModelParams& params() const { return params_; }

  // Seeded base table entry; exposed for tests.
  double base_logit(std::span<const TokenId> window, TokenId token) const;

  // Drops memoised rows so the provider is cold again.
  void clear_row_cache() const;
  std::size_t cached_rows() const;

 protected:
  std::unique_ptr<SessionState> restore(std::span<const std::uint8_t> blob,
                                        std::size_t& position) const override;
  Blob serialize(const SessionState& state,
                 std::size_t position) const override;
  void absorb(SessionState& state, TokenId token) const override;
  LogitVector current_logits(const SessionState& state) const override;

 private:
  struct WindowHash {
    std::size_t operator()(const std::vector<TokenId>& w) const noexcept;
  };
  using Row = std::shared_ptr<const std::vector<double>>;

  Row base_row(const std::vector<TokenId>& window) const;
  void recompute(SessionState& state) const;

  ToyModelParams params_;
  mutable std::shared_mutex rows_mutex_;
  mutable std::unordered_map<std::vector<TokenId>, Row, WindowHash> rows_;
};

}  // namespace pced
