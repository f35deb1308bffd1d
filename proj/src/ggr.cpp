#include "srcattr/ggr.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "jsonl.hpp"
#include "srcattr/kernels/kernels.hpp"
#include "srcattr/parallel.hpp"

namespace srcattr {

using detail::json;

namespace {

double log_sum_exp(std::span<const double> xs) {
  const double mx = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

// Streaming log-sum-exp of scalar terms together with the matching weighted
// sum of vectors, rescaled whenever a new maximum arrives.
class StreamingLse {
 public:
  explicit StreamingLse(std::size_t dim) : weighted_(dim, 0.0) {}

  void add(double term, std::span<const double> vec) {
    if (term > max_) {
      const double rescale = std::isfinite(max_) ? std::exp(max_ - term) : 0.0;
      sum_ *= rescale;
      for (auto& v : weighted_) v *= rescale;
      max_ = term;
    }
    const double w = std::exp(term - max_);
    sum_ += w;
    kernels::axpy(w, vec, weighted_);
  }

  double log_total() const { return max_ + std::log(sum_); }
  // sum_s softmax(term)_s * vec_s
  double mean_component(std::size_t i) const { return weighted_[i] / sum_; }

 private:
  double max_ = -std::numeric_limits<double>::infinity();
  double sum_ = 0.0;
  std::vector<double> weighted_;
};

void check_dims(const HashProjectionEncoder& encoder,
                std::span<const EncoderVector* const> docs) {
  for (const auto* e : docs) {
    if (e->dim() != encoder.dim()) throw std::invalid_argument("doc embedding dimension mismatch");
  }
}

}  // namespace

const EncoderVector& RetrieverState::doc_embedding(const std::string& chunk_id) const {
  auto it = doc_embeddings.find(chunk_id);
  if (it == doc_embeddings.end()) throw std::out_of_range("no embedding for candidate " + chunk_id);
  return it->second;
}

RetrieverState make_retriever_state(HashProjectionEncoder encoder, const TextLookup& doc_texts,
                                    double temperature, unsigned threads) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
  std::vector<std::string> ids;
  ids.reserve(doc_texts.size());
  for (const auto& [id, _] : doc_texts) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  std::vector<EncoderVector> embs(ids.size());
  parallel_for(ids.size(), threads, [&](std::size_t i) {
    auto v = encoder.encode(doc_texts.at(ids[i]));
    const double norm = std::sqrt(kernels::squared_norm(v.values));
    if (norm > 0.0) {
      for (auto& x : v.values) x /= norm;
    }
    embs[i] = std::move(v);
  });
  RetrieverState state{std::move(encoder), {}, temperature};
  for (std::size_t i = 0; i < ids.size(); ++i) state.doc_embeddings.emplace(ids[i], std::move(embs[i]));
  return state;
}

std::vector<double> retriever_prob(const RetrieverState& state, std::string_view query_text,
                                   std::span<const std::string> candidate_ids) {
  if (candidate_ids.empty()) throw std::invalid_argument("candidate set is empty");
  const auto q = state.query_encoder.encode(query_text);
  std::vector<double> logits;
  logits.reserve(candidate_ids.size());
  for (const auto& id : candidate_ids) {
    logits.push_back(kernels::dot(q.values, state.doc_embedding(id).values) / state.temperature);
  }
  const double lse = log_sum_exp(logits);
  for (auto& z : logits) z = std::exp(z - lse);
  return logits;
}

double rag_objective(const HashProjectionEncoder& encoder, const SparseFeatures& query,
                     std::span<const EncoderVector* const> doc_embeddings,
                     std::span<const double> span_log_likelihoods, double temperature,
                     Accumulation mode, std::vector<double>* grad_weights) {
  const std::size_t n = doc_embeddings.size();
  if (n == 0 || span_log_likelihoods.size() != n) {
    throw std::invalid_argument("rag_objective: need one likelihood per candidate");
  }
  check_dims(encoder, doc_embeddings);
  const std::size_t d = encoder.dim();
  const auto q = encoder.encode(query);
  std::vector<double> grad_q(d, 0.0);
  double loss = 0.0;

  if (mode == Accumulation::kJoint) {
    std::vector<double> logits(n);
    for (std::size_t s = 0; s < n; ++s) {
      logits[s] = kernels::dot(q.values, doc_embeddings[s]->values) / temperature;
    }
    const double log_z = log_sum_exp(logits);
    std::vector<double> joint(n);
    for (std::size_t s = 0; s < n; ++s) joint[s] = logits[s] - log_z + span_log_likelihoods[s];
    const double log_marginal = log_sum_exp(joint);
    loss = -log_marginal;
    if (grad_weights) {
      for (std::size_t s = 0; s < n; ++s) {
        const double prior = std::exp(logits[s] - log_z);
        const double posterior = std::exp(joint[s] - log_marginal);
        kernels::axpy((prior - posterior) / temperature, doc_embeddings[s]->values, grad_q);
      }
    }
  } else {
    StreamingLse prior(d);
    StreamingLse joint(d);
    for (std::size_t s = 0; s < n; ++s) {
      const double z = kernels::dot(q.values, doc_embeddings[s]->values) / temperature;
      prior.add(z, doc_embeddings[s]->values);
      joint.add(z + span_log_likelihoods[s], doc_embeddings[s]->values);
    }
    loss = -(joint.log_total() - prior.log_total());
    if (grad_weights) {
      for (std::size_t i = 0; i < d; ++i) {
        grad_q[i] = (prior.mean_component(i) - joint.mean_component(i)) / temperature;
      }
    }
  }

  if (grad_weights) {
    if (grad_weights->size() != encoder.weights().size()) {
      throw std::invalid_argument("gradient buffer has the wrong size");
    }
    for (const auto& [b, f] : query.entries) {
      kernels::axpy(f, grad_q,
                    std::span<double>(*grad_weights).subspan(static_cast<std::size_t>(b) * d, d));
    }
  }
  return loss;
}

GgrBatchResult rag_sequence_marginal(const RetrieverState& state, const SpanInfiller& generator,
                                     const MaskedTarget& masked, std::string_view query_text,
                                     std::span<const std::string> candidate_ids,
                                     const TextLookup& texts) {
  const auto probs = retriever_prob(state, query_text, candidate_ids);
  GgrBatchResult r;
  std::vector<double> joint;
  for (std::size_t s = 0; s < candidate_ids.size(); ++s) {
    const auto& id = candidate_ids[s];
    const double ll = -score_source(generator, masked, lookup_text(texts, id), id);
    if (!std::isfinite(ll)) throw std::runtime_error("non-finite generator output for " + id);
    r.per_source.push_back({id, probs[s], ll});
    joint.push_back(std::log(probs[s]) + ll);
  }
  r.marginal_log_likelihood = log_sum_exp(joint);
  r.loss = -r.marginal_log_likelihood;
  return r;
}

namespace {

struct PreparedExample {
  SparseFeatures query;
  std::vector<const EncoderVector*> docs;
  std::vector<double> span_ll;
};

PreparedExample prepare(const RetrieverState& state, const SpanInfiller& generator,
                        const GgrExample& ex, const TextLookup& texts) {
  if (ex.candidate_ids.empty()) {
    throw std::invalid_argument("example " + ex.example_id + " has no candidates");
  }
  PreparedExample p;
  p.query = state.query_encoder.features(ex.query_text);
  for (const auto& id : ex.candidate_ids) {
    p.docs.push_back(&state.doc_embedding(id));
    const double ll = -score_source(generator, ex.masked, lookup_text(texts, id), ex.example_id);
    if (!std::isfinite(ll)) throw std::runtime_error("non-finite generator output for " + id);
    p.span_ll.push_back(ll);
  }
  return p;
}

double apply_step(RetrieverState& state, std::span<const PreparedExample* const> batch,
                  double learning_rate, Accumulation mode) {
  std::vector<double> grad(state.query_encoder.weights().size(), 0.0);
  double loss = 0.0;
  for (const auto* ex : batch) {
    loss += rag_objective(state.query_encoder, ex->query, ex->docs, ex->span_ll,
                          state.temperature, mode, &grad);
  }
  if (!std::isfinite(loss) ||
      !std::all_of(grad.begin(), grad.end(), [](double g) { return std::isfinite(g); })) {
    throw std::runtime_error("non-finite retriever gradient");
  }
  kernels::axpy(-learning_rate, grad, state.query_encoder.weights());
  state.query_encoder.set_tag("ggr");
  return loss;
}

}  // namespace

GgrStepResult ggr_train_step(const RetrieverState& state, const SpanInfiller& generator,
                             std::span<const GgrExample> batch, const TextLookup& texts,
                             double learning_rate, Accumulation mode) {
  std::vector<PreparedExample> prepared;
  prepared.reserve(batch.size());
  for (const auto& ex : batch) prepared.push_back(prepare(state, generator, ex, texts));
  std::vector<const PreparedExample*> ptrs;
  for (const auto& p : prepared) ptrs.push_back(&p);
  GgrStepResult r{state, 0.0};
  // Doc-embedding pointers refer to `state`, which stays untouched; only the
  // copy's encoder weights change.
  r.loss = apply_step(r.state, ptrs, learning_rate, mode);
  return r;
}

RetrieverState ggr_train(RetrieverState state, const SpanInfiller& generator,
                         std::span<const GgrExample> examples, const TextLookup& texts,
                         const GgrHyperparams& hp,
                         const std::function<void(const GgrLogEntry&)>& on_step) {
  if (examples.empty()) throw std::invalid_argument("no GGR training examples");
  if (hp.batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  // The generator is frozen, so span likelihoods are computed once.
  std::vector<PreparedExample> prepared;
  prepared.reserve(examples.size());
  for (const auto& ex : examples) prepared.push_back(prepare(state, generator, ex, texts));

  std::mt19937_64 rng(hp.seed);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    for (std::size_t b0 = 0; b0 < order.size(); b0 += hp.batch_size) {
      std::vector<const PreparedExample*> batch;
      for (std::size_t k = b0; k < std::min(order.size(), b0 + hp.batch_size); ++k) {
        batch.push_back(&prepared[order[k]]);
      }
      const double loss = apply_step(state, batch, hp.learning_rate, Accumulation::kPerSource);
      if (on_step) on_step({step, epoch, loss});
      ++step;
    }
  }
  return state;
}

RankedCandidates rerank_with_tuned_encoder(const RetrieverState& state,
                                           std::string_view target_text,
                                           const RankedCandidates& candidates) {
  RankedCandidates out;
  out.query_id = candidates.query_id;
  out.scorer = "ggr-dot:" + state.query_encoder.identity();
  const auto q = state.query_encoder.encode(target_text);
  for (const auto& c : candidates.entries) {
    out.entries.push_back({c.chunk_id, kernels::dot(q.values, state.doc_embedding(c.chunk_id).values)});
  }
  sort_descending(out.entries);
  return out;
}

void save_checkpoint(const RetrieverState& state, const std::filesystem::path& dir,
                     std::uint64_t seed, std::string_view data_hash) {
  std::filesystem::create_directories(dir);
  state.query_encoder.save(dir / "encoder.json");
  {
    std::vector<std::string> ids;
    for (const auto& [id, _] : state.doc_embeddings) ids.push_back(id);
    std::sort(ids.begin(), ids.end());
    auto out = detail::open_out(dir / "doc_embeddings.jsonl");
    for (const auto& id : ids) {
      out << json{{"chunk_id", id}, {"values", state.doc_embeddings.at(id).values}}.dump() << '\n';
    }
  }
  std::ofstream meta(dir / "metadata.json", std::ios::binary | std::ios::trunc);
  meta << json{{"seed", seed},
               {"data_hash", std::string(data_hash)},
               {"temperature", state.temperature},
               {"encoder", state.query_encoder.identity()},
               {"rerank_score", "dot"},
               {"doc_embeddings", "frozen, L2-normalized, initial encoder"}}
              .dump(2)
       << '\n';
  if (!meta) throw std::runtime_error("cannot write checkpoint to " + dir.string());
}

RetrieverState load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream meta_in(dir / "metadata.json");
  if (!meta_in) throw std::runtime_error("no GGR checkpoint in " + dir.string());
  const auto meta = json::parse(meta_in);
  RetrieverState state{HashProjectionEncoder::load(dir / "encoder.json"), {},
                       meta.at("temperature").get<double>()};
  detail::for_each_jsonl(dir / "doc_embeddings.jsonl", [&](const json& obj, std::size_t) {
    state.doc_embeddings.emplace(detail::required_string(obj, "chunk_id"),
                                 EncoderVector{obj.at("values").get<std::vector<double>>()});
  });
  return state;
}

}  // namespace srcattr
