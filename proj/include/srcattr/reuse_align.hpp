#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "srcattr/corpus.hpp"

namespace srcattr {

struct TokenSpan {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive

  std::size_t size() const { return end - start; }
  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

struct AlignmentRegion {
  std::string target_chunk_id;
  std::string source_chunk_id;
  TokenSpan target_span;
  TokenSpan source_span;
  double score = 0.0;
  double identity = 0.0;  // matches / aligned columns
  std::size_t matches = 0;
  std::size_t columns = 0;
};

struct AlignScores {
  double match = 2.0;
  double mismatch = -1.0;
  double gap = -1.0;
};

// Sorted, de-duplicated character n-grams of the NFC-normalized text.
std::vector<std::string> shingle(std::string_view text, std::size_t n);

struct CandidatePair {
  std::string a_id;
  std::string b_id;
  std::size_t shared = 0;

  friend bool operator==(const CandidatePair&, const CandidatePair&) = default;
};

// Cross-corpus chunk pairs sharing at least min_shared distinct n-grams, ordered
// by descending shared count then (a_id, b_id).
std::vector<CandidatePair> candidate_pairs(std::span<const Chunk> a, std::span<const Chunk> b,
                                           std::size_t n, std::size_t min_shared,
                                           unsigned threads = 1);

// Smith-Waterman local alignment with linear gaps. Among maximal-scoring
// alignments the one with the smallest (start_a, start_b) wins, then the
// smallest (end_a, end_b). nullopt when the best score is <= 0.
std::optional<AlignmentRegion> local_align(std::span<const std::string> a,
                                           std::span<const std::string> b,
                                           const AlignScores& scores = {});

struct PseudoLabelParams {
  std::size_t ngram = 10;
  std::size_t min_shared = 5;
  double identity_threshold = 0.8;
  std::size_t min_len = 5;
  AlignScores scores;
};

// One PSEUDO example per (target chunk, source chunk) whose best region passes
// the identity and length thresholds.
std::vector<AttributionExample> pseudo_label(std::span<const Chunk> targets,
                                             std::span<const Chunk> sources,
                                             const PseudoLabelParams& params = {},
                                             unsigned threads = 1);

}  // namespace srcattr
