#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace srcattr {

struct Bm25Params {
  double k1 = 0.9;
  double b = 0.4;
};

inline constexpr std::size_t kDefaultPoolSize = 100;

struct ScoredChunk {
  std::string chunk_id;
  double score = 0.0;

  friend bool operator==(const ScoredChunk&, const ScoredChunk&) = default;
};

struct RankedCandidates {
  std::string query_id;
  std::vector<ScoredChunk> entries;
  std::string scorer;

  std::vector<std::string> ids() const;
};

// Descending score, ascending chunk_id on ties.
void sort_descending(std::vector<ScoredChunk>& entries);
// Ascending score (losses), ascending chunk_id on ties.
void sort_ascending(std::vector<ScoredChunk>& entries);

struct Posting {
  std::uint32_t doc = 0;  // position in the sorted chunk-id table
  std::uint32_t tf = 0;
};

// Immutable BM25 index. Documents are numbered in ascending chunk_id order, so
// every postings list is sorted by chunk_id.
class IndexedCorpus {
 public:
  IndexedCorpus() = default;

  std::size_t size() const { return chunk_ids_.size(); }
  double avg_doc_length() const { return avg_doc_length_; }
  const Bm25Params& params() const { return params_; }
  const std::vector<std::string>& chunk_ids() const { return chunk_ids_; }
  const std::vector<std::uint32_t>& doc_lengths() const { return doc_lengths_; }
  const std::map<std::string, std::vector<Posting>, std::less<>>& postings() const {
    return postings_;
  }

  bool contains(std::string_view chunk_id) const;
  std::size_t doc_length(std::string_view chunk_id) const;
  std::size_t document_frequency(std::string_view term) const;
  // ln(1 + (N - df + 0.5) / (df + 0.5))
  double idf(std::string_view term) const;

  // query_terms are already-analyzed terms; duplicates count once per occurrence.
  double score(std::span<const std::string> query_terms, std::string_view chunk_id) const;

  RankedCandidates retrieve(std::string_view query_text, std::size_t k,
                            std::optional<std::string_view> exclude_chunk_id = std::nullopt,
                            std::string query_id = {}) const;

  void save(const std::filesystem::path& dir) const;
  static IndexedCorpus load(const std::filesystem::path& dir);

  friend IndexedCorpus build_index(std::vector<std::pair<std::string, std::string>> chunks,
                                   Bm25Params params);

 private:
  std::optional<std::uint32_t> doc_number(std::string_view chunk_id) const;
  double term_weight(double idf, std::uint32_t tf, std::uint32_t len) const;

  Bm25Params params_;
  std::vector<std::string> chunk_ids_;
  std::vector<std::uint32_t> doc_lengths_;
  double avg_doc_length_ = 0.0;
  std::map<std::string, std::vector<Posting>, std::less<>> postings_;
};

// chunks: (chunk_id, index-side text). Duplicate ids throw std::invalid_argument.
IndexedCorpus build_index(std::vector<std::pair<std::string, std::string>> chunks,
                          Bm25Params params = {});

double bm25_score(const IndexedCorpus& index, std::span<const std::string> query_terms,
                  std::string_view chunk_id);

RankedCandidates retrieve(const IndexedCorpus& index, std::string_view query_text, std::size_t k,
                          std::optional<std::string_view> exclude_chunk_id = std::nullopt);

}  // namespace srcattr
