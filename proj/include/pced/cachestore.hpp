#pragma once

// Offline datastore of (document, embedding, cache blob) triples.
//
// On disk a store is a directory:
//
//   manifest.json        entry list, embedding dimension, provider and
//                        embedder ids, vocabulary, per-blob sha256
//   blobs/NNNNNN.bin     raw cache blob of entry NNNNNN
//
// A store is immutable once built or loaded; concurrent readers need no
// locking.

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pced/lmcore.hpp"
#include "pced/score.hpp"

namespace pced {

struct CorpusDocument {
  std::string doc_id;
  std::string text;
};

struct DatastoreEntry {
  std::string doc_id;
  std::string text;
  std::vector<TokenId> tokens;
  std::vector<double> embedding;
  Blob cache_blob;
  std::string blob_sha256;
};

// Lowercase hex SHA-256 of `bytes`.
std::string sha256_hex(std::span<const std::uint8_t> bytes);

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::string id() const = 0;
  virtual std::size_t dimension() const = 0;
  virtual std::vector<double> embed(std::string_view text) const = 0;
};

// Feature-hashed bag of words, L2-normalised. Cosine similarity between two
// of its embeddings lies in [0, 1].
class HashingEmbedder final : public Embedder {
 public:
  explicit HashingEmbedder(std::size_t dimension = 64, std::uint64_t seed = 42);
  // Inverse of id(); throws ConfigError for other embedders.
  static HashingEmbedder from_id(std::string_view id);
  std::string id() const override;
  std::size_t dimension() const override { return dimension_; }
  std::vector<double> embed(std::string_view text) const override;

 private:
  std::size_t dimension_;
  std::uint64_t seed_;
};

struct Query {
  std::span<const double> embedding;
  std::string_view text;
};

// First-stage retrieval scorer; returns a raw score in its mode's range.
class RetrievalScorer {
 public:
  virtual ~RetrievalScorer() = default;
  virtual double score(const Query& query,
                       const DatastoreEntry& entry) const = 0;
};

// Cosine similarity of query and stored embeddings, in [-1, 1].
class CosineScorer final : public RetrievalScorer {
 public:
  double score(const Query& query, const DatastoreEntry& entry) const override;
};

// Nonnegative, unbounded lexical score: number of document word occurrences
// matching a distinct query word.
class LexicalOverlapScorer final : public RetrievalScorer {
 public:
  double score(const Query& query, const DatastoreEntry& entry) const override;
};

class Reranker {
 public:
  virtual ~Reranker() = default;
  virtual double logit(std::string_view query_text,
                       const DatastoreEntry& entry) const = 0;
};

// Deterministic logit in [-6, 6] from a seeded hash of (query, doc_id).
class HashReranker final : public Reranker {
 public:
  explicit HashReranker(std::uint64_t seed = 42) : seed_(seed) {}
  double logit(std::string_view query_text,
               const DatastoreEntry& entry) const override;

 private:
  std::uint64_t seed_;
};

// Logit in [-4, 4] rising linearly with the fraction of distinct query words
// that occur in the document.
class OverlapReranker final : public Reranker {
 public:
  double logit(std::string_view query_text,
               const DatastoreEntry& entry) const override;
};

// Raw scores supplied per document, e.g. from scenario files. Missing
// documents score `fallback`.
class FixedScores final : public RetrievalScorer, public Reranker {
 public:
  explicit FixedScores(std::unordered_map<std::string, double> by_doc,
                       double fallback = 0.0)
      : by_doc_(std::move(by_doc)), fallback_(fallback) {}
  double score(const Query& query, const DatastoreEntry& entry) const override;
  double logit(std::string_view query_text,
               const DatastoreEntry& entry) const override;

 private:
  double lookup(const std::string& doc_id) const;
  std::unordered_map<std::string, double> by_doc_;
  double fallback_;
};

struct RetrievedDoc {
  std::string doc_id;
  double raw_retrieval = 0.0;
  double raw_reranker = 0.0;
  score::RelevanceScore relevance;
};

// Ordered by fused relevance, descending; ties by doc_id ascending.
struct RetrievalResult {
  std::vector<RetrievedDoc> entries;
};

class DocumentStore {
 public:
  static constexpr int kFormatVersion = 1;

  // Tokenizes every document with a vocabulary grown from the corpus,
  // embeds it and asks `provider` for its cache blob.
  static DocumentStore build(std::span<const CorpusDocument> corpus,
                             const Embedder& embedder,
                             const LogitProvider& provider,
                             Vocabulary vocabulary = {});

  static DocumentStore load(const std::filesystem::path& dir);
  void save(const std::filesystem::path& dir) const;

  std::span<const DatastoreEntry> entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const DatastoreEntry& entry(std::string_view doc_id) const;
  std::span<const std::uint8_t> get_blob(std::string_view doc_id) const;

  const Vocabulary& vocabulary() const { return vocabulary_; }
  const std::string& provider_id() const { return provider_id_; }
  const std::string& embedder_id() const { return embedder_id_; }
  std::size_t embedding_dim() const { return embedding_dim_; }

  // Manifest document exactly as persisted by save().
  std::string manifest_json() const;

 private:
  DocumentStore() = default;
  void index_entries();

  std::vector<DatastoreEntry> entries_;
  std::unordered_map<std::string, std::size_t> by_id_;
  Vocabulary vocabulary_;
  std::string provider_id_;
  std::string embedder_id_;
  std::size_t embedding_dim_ = 0;
};

// Pluggable scoring backends for retrieve(). Null members fall back to the
// built-ins: cosine for dense/colbert, lexical overlap for sparse, and
// OverlapReranker.
struct Retriever {
  const RetrievalScorer* dense = nullptr;
  const RetrievalScorer* sparse = nullptr;
  const Reranker* reranker = nullptr;
};

// Top-n retrieval. The first stage keeps the n best retrieval scores; those
// n are reranked and returned ordered by fused score.
RetrievalResult retrieve(const DocumentStore& store,
                         std::span<const double> query_embedding,
                         std::string_view query_text, std::size_t n,
                         score::Mode mode, const Retriever& retriever = {});

}  // namespace pced
