#include "pced/cachestore.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "pced/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pced {

namespace {

constexpr std::string_view kManifestName = "manifest.json";
constexpr std::string_view kFormatName = "pced-store";

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::string blob_file_name(std::size_t index) {
  std::ostringstream os;
  os << "blobs/" << std::setw(6) << std::setfill('0') << index << ".bin";
  return os.str();
}

Blob read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptionError("cannot read " + path.string());
  return Blob(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  const auto tmp = fs::path(path).concat(".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw BuildError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

json manifest_of(const std::vector<DatastoreEntry>& entries,
                 const Vocabulary& vocabulary, const std::string& provider_id,
                 const std::string& embedder_id, std::size_t dim) {
  json j;
  j["format"] = kFormatName;
  j["format_version"] = DocumentStore::kFormatVersion;
  j["provider"] = provider_id;
  j["embedder"] = embedder_id;
  j["embedding_dim"] = dim;
  j["checksum_algorithm"] = "sha256";
  j["vocabulary"] = vocabulary.words();
  j["entry_count"] = entries.size();
  j["entries"] = json::array();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    j["entries"].push_back({{"doc_id", e.doc_id},
                            {"text", e.text},
                            {"tokens", e.tokens},
                            {"embedding", e.embedding},
                            {"blob_file", blob_file_name(i)},
                            {"blob_bytes", e.cache_blob.size()},
                            {"blob_sha256", e.blob_sha256}});
  }
  return j;
}

}  // namespace

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(),
                 nullptr) != 1) {
    throw Error("sha256 digest failed");
  }
  std::ostringstream os;
  os << std::hex << std::setfill('0');
  for (unsigned int i = 0; i < len; ++i) os << std::setw(2) << int{digest[i]};
  return os.str();
}

// ---------------------------------------------------------------------------
// Scorers

HashingEmbedder::HashingEmbedder(std::size_t dimension, std::uint64_t seed)
    : dimension_(dimension), seed_(seed) {
  if (dimension_ == 0) throw DomainError("embedding dimension must be > 0");
}

std::string HashingEmbedder::id() const {
  return "hashing-bow dim=" + std::to_string(dimension_) +
         " seed=" + std::to_string(seed_);
}

HashingEmbedder HashingEmbedder::from_id(std::string_view id) {
  std::istringstream in{std::string(id)};
  std::string head, dim, seed;
  in >> head >> dim >> seed;
  try {
    if (head == "hashing-bow" && dim.starts_with("dim=") &&
        seed.starts_with("seed=")) {
      return HashingEmbedder(std::stoull(dim.substr(4)),
                             std::stoull(seed.substr(5)));
    }
  } catch (const std::logic_error&) {
  }
  throw ConfigError("unsupported embedder '" + std::string(id) + "'");
}

std::vector<double> HashingEmbedder::embed(std::string_view text) const {
  std::vector<double> v(dimension_, 0.0);
  for (const auto& w : split_words(text)) {
    v[mix(fnv1a(w) ^ seed_) % dimension_] += 1.0;
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  return v;
}

double CosineScorer::score(const Query& query,
                           const DatastoreEntry& entry) const {
  const auto& e = entry.embedding;
  if (query.embedding.size() != e.size()) {
    throw DomainError("query embedding dimension " +
                      std::to_string(query.embedding.size()) +
                      " != store dimension " + std::to_string(e.size()));
  }
  double dot = 0.0, nq = 0.0, ne = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    dot += query.embedding[i] * e[i];
    nq += query.embedding[i] * query.embedding[i];
    ne += e[i] * e[i];
  }
  if (nq == 0.0 || ne == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(nq) * std::sqrt(ne)), -1.0, 1.0);
}

double LexicalOverlapScorer::score(const Query& query,
                                   const DatastoreEntry& entry) const {
  const auto q = split_words(query.text);
  const std::set<std::string> terms(q.begin(), q.end());
  double hits = 0.0;
  for (const auto& w : split_words(entry.text)) hits += terms.count(w);
  return hits;
}

double HashReranker::logit(std::string_view query_text,
                           const DatastoreEntry& entry) const {
  const auto h = mix(fnv1a(entry.doc_id, fnv1a(query_text, mix(seed_))));
  return 12.0 * (static_cast<double>(h >> 11) * 0x1.0p-53) - 6.0;
}

double OverlapReranker::logit(std::string_view query_text,
                              const DatastoreEntry& entry) const {
  const auto q = split_words(query_text);
  const std::set<std::string> terms(q.begin(), q.end());
  if (terms.empty()) return -4.0;
  const auto d = split_words(entry.text);
  const std::set<std::string> words(d.begin(), d.end());
  double hits = 0.0;
  for (const auto& t : terms) hits += words.count(t);
  return 8.0 * hits / static_cast<double>(terms.size()) - 4.0;
}

double FixedScores::lookup(const std::string& doc_id) const {
  auto it = by_doc_.find(doc_id);
  return it == by_doc_.end() ? fallback_ : it->second;
}

double FixedScores::score(const Query&, const DatastoreEntry& entry) const {
  return lookup(entry.doc_id);
}

double FixedScores::logit(std::string_view, const DatastoreEntry& entry) const {
  return lookup(entry.doc_id);
}

// ---------------------------------------------------------------------------
// DocumentStore

void DocumentStore::index_entries() {
  by_id_.clear();
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (!by_id_.emplace(entries_[i].doc_id, i).second) {
      throw BuildError("duplicate doc_id '" + entries_[i].doc_id + "'");
    }
  }
}

DocumentStore DocumentStore::build(std::span<const CorpusDocument> corpus,
                                   const Embedder& embedder,
                                   const LogitProvider& provider,
                                   Vocabulary vocabulary) {
  DocumentStore store;
  std::set<std::string_view> seen;
  for (const auto& doc : corpus) {
    if (!seen.insert(doc.doc_id).second) {
      throw BuildError("duplicate doc_id '" + doc.doc_id + "'");
    }
    vocabulary.add_text(doc.text);
  }
  if (vocabulary.size() > provider.vocab_size()) {
    throw BuildError("corpus vocabulary of " +
                     std::to_string(vocabulary.size()) +
                     " tokens exceeds provider vocabulary of " +
                     std::to_string(provider.vocab_size()));
  }

  store.entries_.reserve(corpus.size());
  for (const auto& doc : corpus) {
    DatastoreEntry e;
    e.doc_id = doc.doc_id;
    e.text = doc.text;
    e.tokens = vocabulary.encode(doc.text);
    e.embedding = embedder.embed(doc.text);
    try {
      e.cache_blob = provider.encode_prefix(e.tokens);
    } catch (const std::exception& ex) {
      throw BuildError("provider failed on document '" + doc.doc_id +
                       "': " + ex.what());
    }
    e.blob_sha256 = sha256_hex(e.cache_blob);
    store.entries_.push_back(std::move(e));
  }
  store.vocabulary_ = std::move(vocabulary);
  store.provider_id_ = provider.id();
  store.embedder_id_ = embedder.id();
  store.embedding_dim_ = embedder.dimension();
  store.index_entries();
  return store;
}

std::string DocumentStore::manifest_json() const {
  return manifest_of(entries_, vocabulary_, provider_id_, embedder_id_,
                     embedding_dim_)
      .dump(2);
}

void DocumentStore::save(const fs::path& dir) const {
  std::error_code ec;
  fs::create_directories(dir / "blobs", ec);
  if (ec) throw BuildError("cannot create store directory " + dir.string());
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    write_file(dir / blob_file_name(i), entries_[i].cache_blob);
  }
  const auto text = manifest_json() + "\n";
  write_file(dir / kManifestName,
             {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

DocumentStore DocumentStore::load(const fs::path& dir) {
  const auto manifest_path = dir / kManifestName;
  if (!fs::exists(manifest_path)) {
    throw NotFoundError("no store manifest at " + manifest_path.string());
  }
  json j;
  try {
    std::ifstream in(manifest_path);
    j = json::parse(in);
  } catch (const json::exception& ex) {
    throw CorruptionError("unparseable manifest: " + std::string(ex.what()));
  }

  DocumentStore store;
  try {
    if (j.at("format") != kFormatName ||
        j.at("format_version") != kFormatVersion) {
      throw CorruptionError("unsupported store format");
    }
    if (j.at("checksum_algorithm") != "sha256") {
      throw CorruptionError("unsupported checksum algorithm " +
                            j.at("checksum_algorithm").dump());
    }
    store.provider_id_ = j.at("provider").get<std::string>();
    store.embedder_id_ = j.at("embedder").get<std::string>();
    store.embedding_dim_ = j.at("embedding_dim").get<std::size_t>();
    store.vocabulary_ =
        Vocabulary(j.at("vocabulary").get<std::vector<std::string>>());
    const auto& entries = j.at("entries");
    if (entries.size() != j.at("entry_count").get<std::size_t>()) {
      throw CorruptionError("entry_count does not match entry list");
    }
    for (const auto& je : entries) {
      DatastoreEntry e;
      e.doc_id = je.at("doc_id").get<std::string>();
      e.text = je.at("text").get<std::string>();
      e.tokens = je.at("tokens").get<std::vector<TokenId>>();
      e.embedding = je.at("embedding").get<std::vector<double>>();
      e.blob_sha256 = je.at("blob_sha256").get<std::string>();
      if (e.embedding.size() != store.embedding_dim_) {
        throw CorruptionError("embedding of '" + e.doc_id +
                              "' has wrong dimension");
      }
      e.cache_blob = read_file(dir / je.at("blob_file").get<std::string>());
      if (e.cache_blob.size() != je.at("blob_bytes").get<std::size_t>() ||
          sha256_hex(e.cache_blob) != e.blob_sha256) {
        throw CorruptionError("checksum mismatch for blob of '" + e.doc_id +
                              "'");
      }
      store.entries_.push_back(std::move(e));
    }
  } catch (const json::exception& ex) {
    throw CorruptionError("malformed manifest: " + std::string(ex.what()));
  }
  try {
    store.index_entries();
  } catch (const BuildError& ex) {
    throw CorruptionError(ex.what());
  }
  return store;
}

const DatastoreEntry& DocumentStore::entry(std::string_view doc_id) const {
  auto it = by_id_.find(std::string(doc_id));
  if (it == by_id_.end()) {
    throw NotFoundError("unknown doc_id '" + std::string(doc_id) + "'");
  }
  return entries_[it->second];
}

std::span<const std::uint8_t> DocumentStore::get_blob(
    std::string_view doc_id) const {
  return entry(doc_id).cache_blob;
}

// ---------------------------------------------------------------------------
// Retrieval

RetrievalResult retrieve(const DocumentStore& store,
                         std::span<const double> query_embedding,
                         std::string_view query_text, std::size_t n,
                         score::Mode mode, const Retriever& retriever) {
  if (n == 0) throw DomainError("retrieve: n must be >= 1");
  if (mode == score::Mode::kReranker) {
    throw DomainError("retrieve: reranker is not a retrieval mode");
  }
  RetrievalResult result;
  if (store.empty()) return result;

  const bool sparse = mode == score::Mode::kSparse;
  if ((!sparse || !query_embedding.empty()) &&
      query_embedding.size() != store.embedding_dim()) {
    throw DomainError("query embedding dimension " +
                      std::to_string(query_embedding.size()) +
                      " != store dimension " +
                      std::to_string(store.embedding_dim()));
  }

  static const CosineScorer kCosine;
  static const LexicalOverlapScorer kLexical;
  static const OverlapReranker kOverlapReranker;
  const RetrievalScorer& scorer =
      sparse ? (retriever.sparse ? *retriever.sparse : kLexical)
             : (retriever.dense ? *retriever.dense : kCosine);
  const Reranker& reranker =
      retriever.reranker ? *retriever.reranker : kOverlapReranker;

  const Query query{query_embedding, query_text};
  std::vector<RetrievedDoc> candidates;
  candidates.reserve(store.size());
  for (const auto& e : store.entries()) {
    RetrievedDoc d;
    d.doc_id = e.doc_id;
    d.raw_retrieval = scorer.score(query, e);
    d.relevance.retrieval = score::RawScore(d.raw_retrieval, mode).normalized();
    candidates.push_back(std::move(d));
  }

  auto by_retrieval = [](const RetrievedDoc& a, const RetrievedDoc& b) {
    if (a.relevance.retrieval != b.relevance.retrieval) {
      return a.relevance.retrieval > b.relevance.retrieval;
    }
    return a.doc_id < b.doc_id;
  };
  const auto keep = std::min(n, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + keep,
                    candidates.end(), by_retrieval);
  candidates.resize(keep);

  for (auto& d : candidates) {
    d.raw_reranker = reranker.logit(query_text, store.entry(d.doc_id));
    d.relevance = score::RelevanceScore::from_normalized(
        d.relevance.retrieval, score::normalize_reranker(d.raw_reranker));
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const RetrievedDoc& a, const RetrievedDoc& b) {
              if (a.relevance.fused != b.relevance.fused) {
                return a.relevance.fused > b.relevance.fused;
              }
              return a.doc_id < b.doc_id;
            });
  result.entries = std::move(candidates);
  return result;
}

}  // namespace pced
