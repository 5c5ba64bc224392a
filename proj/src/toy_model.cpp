#include "pced/toy_model.hpp"

#include <cstring>
#include <sstream>

#include "pced/errors.hpp"

namespace pced {

namespace {

constexpr char kMagic[8] = {'P', 'C', 'E', 'D', 'T', 'O', 'Y', '\0'};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

struct ToyState final : SessionState {
  std::vector<TokenId> window;
  std::vector<std::uint32_t> unigram;
  std::map<std::vector<TokenId>, std::map<TokenId, std::uint32_t>>
      continuations;
  LogitVector logits;

  std::unique_ptr<SessionState> clone() const override {
    return std::make_unique<ToyState>(*this);
  }
};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  Blob take() { return std::move(out_); }

 private:
  Blob out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw ProviderError("toy blob truncated");
  }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{in_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{in_[pos_ + i]} << (8 * i);
    pos_ += 8;
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::string format_double(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

ToyModel::ToyModel(ToyModelParams params) : params_(params) {
  if (params_.vocab_size < 2) throw DomainError("toy model: vocab_size < 2");
  if (params_.order < 1) throw DomainError("toy model: order < 1");
}

std::string ToyModel::id() const {
  std::ostringstream os;
  os << "toy/" << kFormatVersion << " vocab=" << params_.vocab_size
     << " order=" << params_.order << " seed=" << params_.seed
     << " base=" << format_double(params_.base_scale)
     << " unigram=" << format_double(params_.unigram_bonus)
     << " continuation=" << format_double(params_.continuation_bonus);
  return os.str();
}

ToyModelParams ToyModel::parse_id(std::string_view id) {
  std::istringstream in{std::string(id)};
  std::string head;
  in >> head;
  if (head != "toy/" + std::to_string(kFormatVersion)) {
    throw ProviderError("not a toy provider id: '" + std::string(id) + "'");
  }
  ToyModelParams p;
  std::string kv;
  while (in >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw ProviderError("malformed toy provider id field '" + kv + "'");
    }
    const auto key = kv.substr(0, eq);
    const auto value = kv.substr(eq + 1);
    try {
      if (key == "vocab") {
        p.vocab_size = std::stoull(value);
      } else if (key == "order") {
        p.order = std::stoull(value);
      } else if (key == "seed") {
        p.seed = std::stoull(value);
      } else if (key == "base") {
        p.base_scale = std::stod(value);
      } else if (key == "unigram") {
        p.unigram_bonus = std::stod(value);
      } else if (key == "continuation") {
        p.continuation_bonus = std::stod(value);
      } else {
        throw ProviderError("unknown toy provider field '" + key + "'");
      }
    } catch (const std::logic_error&) {
      throw ProviderError("bad value in toy provider field '" + kv + "'");
    }
  }
  return p;
}

std::size_t ToyModel::WindowHash::operator()(
    const std::vector<TokenId>& w) const noexcept {
  std::uint64_t h = w.size();
  for (TokenId t : w) h = splitmix64(h ^ static_cast<std::uint32_t>(t));
  return static_cast<std::size_t>(h);
}

double ToyModel::base_logit(std::span<const TokenId> window,
                            TokenId token) const {
  std::uint64_t h = splitmix64(params_.seed);
  for (TokenId t : window) h = splitmix64(h ^ static_cast<std::uint32_t>(t));
  h = splitmix64(h ^ (0xA5A5A5A500000000ULL | static_cast<std::uint32_t>(token)));
  const double unit = static_cast<double>(h >> 11) * 0x1.0p-53;
  return params_.base_scale * (2.0 * unit - 1.0);
}

ToyModel::Row ToyModel::base_row(const std::vector<TokenId>& window) const {
  {
    std::shared_lock lock(rows_mutex_);
    auto it = rows_.find(window);
    if (it != rows_.end()) return it->second;
  }
  auto row = std::make_shared<std::vector<double>>(params_.vocab_size);
  for (std::size_t v = 0; v < params_.vocab_size; ++v) {
    (*row)[v] = base_logit(window, static_cast<TokenId>(v));
  }
  std::unique_lock lock(rows_mutex_);
  return rows_.try_emplace(window, std::move(row)).first->second;
}

void ToyModel::clear_row_cache() const {
  std::unique_lock lock(rows_mutex_);
  rows_.clear();
}

std::size_t ToyModel::cached_rows() const {
  std::shared_lock lock(rows_mutex_);
  return rows_.size();
}

void ToyModel::recompute(SessionState& base) const {
  auto& state = static_cast<ToyState&>(base);
  const auto row = base_row(state.window);
  state.logits.assign(row->begin(), row->end());
  for (std::size_t v = 0; v < params_.vocab_size; ++v) {
    if (state.unigram[v] > 0) state.logits[v] += params_.unigram_bonus;
  }
  auto it = state.continuations.find(state.window);
  if (it != state.continuations.end()) {
    std::uint64_t total = 0;
    for (const auto& [tok, count] : it->second) total += count;
    for (const auto& [tok, count] : it->second) {
      state.logits[static_cast<std::size_t>(tok)] +=
          params_.continuation_bonus * static_cast<double>(count) /
          static_cast<double>(total);
    }
  }
}

void ToyModel::absorb(SessionState& base, TokenId token) const {
  check_token(token);
  auto& state = static_cast<ToyState&>(base);
  if (!state.window.empty()) ++state.continuations[state.window][token];
  ++state.unigram[static_cast<std::size_t>(token)];
  state.window.push_back(token);
  if (state.window.size() > params_.order) {
    state.window.erase(state.window.begin());
  }
  recompute(state);
}

LogitVector ToyModel::current_logits(const SessionState& state) const {
  return static_cast<const ToyState&>(state).logits;
}

Blob ToyModel::serialize(const SessionState& base,
                         std::size_t position) const {
  const auto& state = static_cast<const ToyState&>(base);
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kFormatVersion);
  const auto tag = id();
  w.u32(static_cast<std::uint32_t>(tag.size()));
  w.bytes(tag.data(), tag.size());
  w.u64(position);
  w.u32(static_cast<std::uint32_t>(state.window.size()));
  for (TokenId t : state.window) w.i32(t);

  std::uint32_t distinct = 0;
  for (auto c : state.unigram) distinct += c > 0 ? 1 : 0;
  w.u32(distinct);
  for (std::size_t v = 0; v < state.unigram.size(); ++v) {
    if (state.unigram[v] == 0) continue;
    w.i32(static_cast<TokenId>(v));
    w.u32(state.unigram[v]);
  }

  w.u32(static_cast<std::uint32_t>(state.continuations.size()));
  for (const auto& [context, next] : state.continuations) {
    w.u32(static_cast<std::uint32_t>(context.size()));
    for (TokenId t : context) w.i32(t);
    w.u32(static_cast<std::uint32_t>(next.size()));
    for (const auto& [tok, count] : next) {
      w.i32(tok);
      w.u32(count);
    }
  }
  return w.take();
}

std::unique_ptr<SessionState> ToyModel::restore(
    std::span<const std::uint8_t> blob, std::size_t& position) const {
  auto state = std::make_unique<ToyState>();
  state->unigram.assign(params_.vocab_size, 0);
  position = 0;
  if (blob.empty()) {
    recompute(*state);
    return state;
  }

  Reader r(blob);
  const auto magic = r.bytes(sizeof kMagic);
  if (std::memcmp(magic.data(), kMagic, sizeof kMagic) != 0) {
    throw ProviderError("blob was not produced by a toy provider");
  }
  const auto version = r.u32();
  if (version != kFormatVersion) {
    throw ProviderError("toy blob format version " + std::to_string(version) +
                        " unsupported");
  }
  const auto tag_len = r.u32();
  const auto tag_bytes = r.bytes(tag_len);
  const std::string tag(tag_bytes.begin(), tag_bytes.end());
  if (tag != id()) {
    throw ProviderError("blob provider '" + tag + "' does not match '" + id() +
                        "'");
  }
  position = static_cast<std::size_t>(r.u64());

  auto read_token = [&] {
    const auto t = r.i32();
    check_token(t);
    return t;
  };
  const auto window_len = r.u32();
  if (window_len > params_.order) throw ProviderError("toy blob window too long");
  for (std::uint32_t i = 0; i < window_len; ++i) {
    state->window.push_back(read_token());
  }
  const auto distinct = r.u32();
  for (std::uint32_t i = 0; i < distinct; ++i) {
    const auto t = read_token();
    state->unigram[static_cast<std::size_t>(t)] = r.u32();
  }
  const auto contexts = r.u32();
  for (std::uint32_t i = 0; i < contexts; ++i) {
    const auto k = r.u32();
    if (k > params_.order) throw ProviderError("toy blob context too long");
    std::vector<TokenId> context(k);
    for (auto& t : context) t = read_token();
    auto& next = state->continuations[std::move(context)];
    const auto m = r.u32();
    for (std::uint32_t j = 0; j < m; ++j) {
      const auto t = read_token();
      next[t] = r.u32();
    }
  }
  if (!r.done()) throw ProviderError("trailing bytes in toy blob");
  recompute(*state);
  return state;
}

}  // namespace pced
