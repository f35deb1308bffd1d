#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "srcattr/lexical_index.hpp"

namespace srcattr {

struct EncoderVector {
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
  friend bool operator==(const EncoderVector&, const EncoderVector&) = default;
};

using TextLookup = std::unordered_map<std::string, std::string>;

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual std::size_t dim() const = 0;
  virtual EncoderVector encode(std::string_view text) const = 0;
  virtual std::string identity() const = 0;

  // Results are returned in input order regardless of thread count.
  std::vector<EncoderVector> encode_batch(std::span<const std::string> texts,
                                          unsigned threads = 1) const;
};

// Sparse bag-of-words features: analyzed tokens hashed into buckets, weights
// 1/n per occurrence (mean pooling).
struct SparseFeatures {
  std::vector<std::pair<std::uint32_t, double>> entries;  // sorted by bucket
};

// Linear projection of hashed bag-of-words features: encode(t) = W f(t).
// W is a seeded Gaussian matrix; it is also the trainable query encoder of the
// generation-guided retriever.
class HashProjectionEncoder final : public TextEncoder {
 public:
  HashProjectionEncoder(std::size_t dim, std::size_t buckets, std::uint64_t seed);

  std::size_t dim() const override { return dim_; }
  std::size_t buckets() const { return buckets_; }
  std::uint64_t seed() const { return seed_; }
  EncoderVector encode(std::string_view text) const override;
  std::string identity() const override;

  SparseFeatures features(std::string_view text) const;
  EncoderVector encode(const SparseFeatures& f) const;

  // Column b of W (the embedding contribution of bucket b), contiguous.
  std::span<const double> column(std::uint32_t bucket) const;
  std::span<double> column(std::uint32_t bucket);
  std::span<const double> weights() const { return weights_; }
  std::span<double> weights() { return weights_; }

  void set_tag(std::string tag) { tag_ = std::move(tag); }

  void save(const std::filesystem::path& file) const;
  static HashProjectionEncoder load(const std::filesystem::path& file);

 private:
  std::size_t dim_;
  std::size_t buckets_;
  std::uint64_t seed_;
  std::string tag_;
  std::vector<double> weights_;  // buckets_ x dim_, bucket-major
};

// Maps each distinct (normalized) text to an independent Gaussian vector.
// Carries no lexical signal; the "random stub" reranker.
class RandomTextEncoder final : public TextEncoder {
 public:
  RandomTextEncoder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {}
  std::size_t dim() const override { return dim_; }
  EncoderVector encode(std::string_view text) const override;
  std::string identity() const override;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

struct EncoderSpec {
  std::string id = "hash-projection";  // or "random"
  std::size_t dim = 64;
  std::size_t buckets = 2048;
  std::uint64_t seed = 0;
};

std::unique_ptr<TextEncoder> make_encoder(const EncoderSpec& spec);

// u.v / (|u||v|); 0 when either norm is 0. Dimension mismatch throws.
double cosine_similarity(const EncoderVector& u, const EncoderVector& v);

const std::string& lookup_text(const TextLookup& texts, const std::string& chunk_id);

RankedCandidates rerank_by_embedding(std::string_view target_text,
                                     const RankedCandidates& candidates,
                                     const TextEncoder& encoder, const TextLookup& texts);

}  // namespace srcattr
