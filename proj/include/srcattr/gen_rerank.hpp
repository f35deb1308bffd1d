#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "srcattr/corpus.hpp"
#include "srcattr/embed.hpp"
#include "srcattr/lexical_index.hpp"
#include "srcattr/reuse_align.hpp"

namespace srcattr {

inline constexpr std::string_view kSourceSeparator = "</s>";

enum class Provenance { kGoldSource, kTop1Retrieved, kAligned };

std::string_view to_string(Provenance p);
Provenance parse_provenance(std::string_view s);

struct TrainingExample {
  std::string example_id;
  MaskedTarget masked;
  std::string source_text;
  Provenance provenance = Provenance::kGoldSource;
  std::string source_chunk_id;  // empty when the source is not a corpus chunk
};

std::vector<TrainingExample> read_training_examples(const std::filesystem::path& path);
void write_training_examples(const std::filesystem::path& path,
                             std::span<const TrainingExample> examples);
// Stable content hash of a training set.
std::string training_data_hash(std::span<const TrainingExample> examples);

struct TrainHyperparams {
  std::size_t epochs = 10;
  std::size_t batch_size = 8;
  double learning_rate = 0.5;
  std::uint64_t seed = 0;
};

class SpanInfiller;

struct TrainResult {
  std::unique_ptr<SpanInfiller> model;
  std::vector<double> epoch_losses;  // mean per-example NLL seen during each epoch
};

// p(span | observed target, source). Implementations must be deterministic.
class SpanInfiller {
 public:
  virtual ~SpanInfiller() = default;

  // Summed negative log-likelihood of span's subword tokens.
  virtual double span_nll(std::string_view observed, std::string_view source,
                          std::string_view span) const = 0;
  virtual std::string predict_span(std::string_view observed, std::string_view source) const = 0;
  virtual std::vector<std::string> tokenize(std::string_view text) const {
    return whitespace_subwords(text);
  }
  virtual std::string identity() const = 0;
  virtual std::unique_ptr<SpanInfiller> clone() const = 0;

  virtual bool trainable() const { return false; }
  // Default: throws std::logic_error (frozen binding).
  virtual TrainResult train(std::span<const TrainingExample> examples,
                            const TrainHyperparams& hp) const;
  // Default: writes only metadata.json with the identity.
  virtual void save(const std::filesystem::path& dir) const;
};

// source ⊕ separator ⊕ observed target.
std::string conditioning_input(std::string_view source, std::string_view observed);

// Recovers the source tokens between the sentinel's left and right neighbours.
// nullopt when the neighbours cannot be located in the source.
std::optional<std::string> anchored_copy(std::string_view observed, std::string_view source);

// Uniform over a vocabulary of the given size: NLL = tokens * ln(V).
class UniformInfiller final : public SpanInfiller {
 public:
  explicit UniformInfiller(std::size_t vocab_size);
  double span_nll(std::string_view, std::string_view, std::string_view span) const override;
  std::string predict_span(std::string_view, std::string_view) const override { return {}; }
  std::string identity() const override;
  std::unique_ptr<SpanInfiller> clone() const override;

 private:
  std::size_t vocab_size_;
};

// Each span token has probability p_hit if it occurs in the source, p_miss
// otherwise, independently. Predicts by anchored copy from the source.
class CopyOracleInfiller final : public SpanInfiller {
 public:
  explicit CopyOracleInfiller(double p_hit = 0.9, double p_miss = 0.1);
  double span_nll(std::string_view observed, std::string_view source,
                  std::string_view span) const override;
  std::string predict_span(std::string_view observed, std::string_view source) const override;
  std::string identity() const override;
  std::unique_ptr<SpanInfiller> clone() const override;

 private:
  double p_hit_;
  double p_miss_;
};

// A small trainable infiller: a gated mixture of a copy distribution over the
// conditioning input and a learned unigram distribution,
//   p(w) = sigmoid(g) * copy(w) + (1 - sigmoid(g)) * softmax(u)[w].
class CopyMixtureInfiller final : public SpanInfiller {
 public:
  CopyMixtureInfiller() = default;

  double span_nll(std::string_view observed, std::string_view source,
                  std::string_view span) const override;
  std::string predict_span(std::string_view observed, std::string_view source) const override;
  std::string identity() const override;
  std::unique_ptr<SpanInfiller> clone() const override;
  bool trainable() const override { return true; }
  TrainResult train(std::span<const TrainingExample> examples,
                    const TrainHyperparams& hp) const override;
  void save(const std::filesystem::path& dir) const override;
  static CopyMixtureInfiller load(const std::filesystem::path& dir);

  double gate_logit() const { return gate_; }
  const std::vector<std::string>& vocab() const { return vocab_; }
  const std::vector<double>& unigram_logits() const { return logits_; }

 private:
  std::size_t token_id(const std::string& tok) const;

  double gate_ = 0.0;
  std::vector<std::string> vocab_{""};  // id 0 is the unknown token
  std::vector<double> logits_{0.0};
  std::unordered_map<std::string, std::size_t> ids_{{"", 0}};
  std::string data_hash_;
  TrainHyperparams hp_;
  std::vector<double> epoch_losses_;
};

struct InfillerSpec {
  std::string id = "copy-oracle";  // "uniform", "copy-oracle", "copy-mixture"
  std::size_t vocab_size = 10;     // uniform only
  std::filesystem::path model_dir; // copy-mixture: trained state to load (optional)
};

std::unique_ptr<SpanInfiller> make_infiller(const InfillerSpec& spec);

struct ScoreOptions {
  bool length_normalize = false;
};

// L = -log p(masked | observed, source). Model errors are rethrown naming example_id.
double score_source(const SpanInfiller& infiller, const MaskedTarget& masked,
                    std::string_view source_text, std::string_view example_id = {},
                    const ScoreOptions& options = {});

// Ascending L; the entry score is -L so entries stay in non-increasing order.
RankedCandidates rerank_by_generation(const SpanInfiller& infiller, const MaskedTarget& masked,
                                      const RankedCandidates& candidates, const TextLookup& texts,
                                      const ScoreOptions& options = {}, unsigned threads = 1);

struct TrainingSetInputs {
  std::span<const AttributionExample> examples;       // FULL / SEMI
  std::span<const Chunk> targets;                      // chunks the spans refer to
  std::span<const Chunk> sources;                      // PSEUDO alignment input
  const TextLookup* source_texts = nullptr;            // text the generator conditions on
  const IndexedCorpus* index = nullptr;                // SEMI top-1 retrieval
  PseudoLabelParams aligner;
  std::size_t subword_budget = kDefaultSubwordBudget;
  SubwordTokenizer tokenizer = whitespace_subwords;
};

struct TrainingSetReport {
  std::vector<TrainingExample> examples;
  std::size_t skipped = 0;  // SEMI queries with no retrieved source
};

TrainingSetReport build_training_set(const TrainingSetInputs& in, Supervision mode);

// Trains a copy of the infiller; same seed gives identical loss curves.
TrainResult train(const SpanInfiller& infiller, std::span<const TrainingExample> training_set,
                  const TrainHyperparams& hp);

// Greedy prediction compared to gold under text::match_key normalization.
bool predict_and_match(const SpanInfiller& infiller, const MaskedTarget& masked,
                       std::string_view source_text, std::string_view gold_span);

}  // namespace srcattr
