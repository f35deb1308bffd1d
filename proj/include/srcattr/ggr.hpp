#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "srcattr/corpus.hpp"
#include "srcattr/embed.hpp"
#include "srcattr/gen_rerank.hpp"

namespace srcattr {

// Query encoder (trainable) plus frozen, L2-normalized candidate embeddings
// computed once with the initial encoder.
struct RetrieverState {
  HashProjectionEncoder query_encoder{1, 1, 0};
  std::unordered_map<std::string, EncoderVector> doc_embeddings;
  double temperature = 1.0;

  const EncoderVector& doc_embedding(const std::string& chunk_id) const;
};

RetrieverState make_retriever_state(HashProjectionEncoder encoder, const TextLookup& doc_texts,
                                    double temperature = 1.0, unsigned threads = 1);

// softmax(q . e_s / temperature) restricted to candidate_ids, in candidate order.
std::vector<double> retriever_prob(const RetrieverState& state, std::string_view query_text,
                                   std::span<const std::string> candidate_ids);

struct SourceTerm {
  std::string chunk_id;
  double retriever_prob = 0.0;
  double span_log_likelihood = 0.0;
};

struct GgrBatchResult {
  std::vector<SourceTerm> per_source;
  double marginal_log_likelihood = 0.0;
  double loss = 0.0;  // -marginal_log_likelihood
};

// log sum_s p_retriever(s|q) * p_gen(span | observed, s), one source at a time.
GgrBatchResult rag_sequence_marginal(const RetrieverState& state, const SpanInfiller& generator,
                                     const MaskedTarget& masked, std::string_view query_text,
                                     std::span<const std::string> candidate_ids,
                                     const TextLookup& texts);

enum class Accumulation {
  kPerSource,  // streaming log-sum-exp, one candidate at a time
  kJoint,      // all candidates materialized at once
};

// Loss of one query and, when grad_weights is non-null, its gradient added into
// grad_weights (same layout as HashProjectionEncoder::weights()). Only the
// query encoder receives gradient.
double rag_objective(const HashProjectionEncoder& encoder, const SparseFeatures& query,
                     std::span<const EncoderVector* const> doc_embeddings,
                     std::span<const double> span_log_likelihoods, double temperature,
                     Accumulation mode, std::vector<double>* grad_weights);

struct GgrExample {
  std::string example_id;
  MaskedTarget masked;
  std::string query_text;
  std::vector<std::string> candidate_ids;
};

struct GgrStepResult {
  RetrieverState state;
  double loss = 0.0;  // summed over the batch, before the update
};

// Gradients from every source of every example are accumulated before the
// single SGD update. Non-finite gradients throw.
GgrStepResult ggr_train_step(const RetrieverState& state, const SpanInfiller& generator,
                             std::span<const GgrExample> batch, const TextLookup& texts,
                             double learning_rate,
                             Accumulation mode = Accumulation::kPerSource);

struct GgrHyperparams {
  double learning_rate = 0.5;
  std::size_t epochs = 5;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
};

struct GgrLogEntry {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
};

RetrieverState ggr_train(RetrieverState state, const SpanInfiller& generator,
                         std::span<const GgrExample> examples, const TextLookup& texts,
                         const GgrHyperparams& hp,
                         const std::function<void(const GgrLogEntry&)>& on_step = {});

// Orders candidates by descending q . e_s (dot product, the training-time score).
RankedCandidates rerank_with_tuned_encoder(const RetrieverState& state,
                                           std::string_view target_text,
                                           const RankedCandidates& candidates);

void save_checkpoint(const RetrieverState& state, const std::filesystem::path& dir,
                     std::uint64_t seed, std::string_view data_hash);
RetrieverState load_checkpoint(const std::filesystem::path& dir);

}  // namespace srcattr
