#include <cmath>
#include <filesystem>
#include <unordered_map>

#include "doctest.h"
#include "srcattr/ggr.hpp"
#include "support/stubs.hpp"
#include "support/synthetic.hpp"

using namespace srcattr;
using namespace srcattr::testing;

namespace {

const MaskedTarget kMasked{"a <MASK> b", "x"};

// Single-bucket, d-dimensional encoder whose query embedding is exactly w.
RetrieverState state_with(std::vector<double> w, std::vector<std::vector<double>> docs, double tau = 1.0) {
  RetrieverState st{HashProjectionEncoder(w.size(), 1, 0), {}, tau};
  std::copy(w.begin(), w.end(), st.query_encoder.column(0).begin());
  for (std::size_t i = 0; i < docs.size(); ++i) st.doc_embeddings["c" + std::to_string(i)] = {docs[i]};
  return st;
}

std::vector<std::string> ids(std::size_t n) {
  std::vector<std::string> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back("c" + std::to_string(i));
  return v;
}

TextLookup texts_for(std::size_t n) {
  TextLookup t;
  for (std::size_t i = 0; i < n; ++i) t["c" + std::to_string(i)] = "text" + std::to_string(i);
  return t;
}

struct Instance {
  HashProjectionEncoder enc;
  SparseFeatures query;
  std::vector<EncoderVector> docs;
  std::vector<double> ll;
  double tau;
};

Instance random_instance(Rng& rng) {
  const std::size_t d = 2 + rng.below(6);
  const std::size_t n = 1 + rng.below(8);
  Instance in{HashProjectionEncoder(d, 16, rng.next()), {}, {}, {}, rng.uniform(0.3, 2.0)};
  std::string q;
  for (std::size_t i = 0, m = 1 + rng.below(6); i < m; ++i) q += " w" + std::to_string(rng.below(30));
  in.query = in.enc.features(q);
  for (std::size_t s = 0; s < n; ++s) {
    EncoderVector e{std::vector<double>(d)};
    for (auto& x : e.values) x = rng.normal();
    in.docs.push_back(e);
    in.ll.push_back(-rng.uniform(0.1, 12.0));
  }
  return in;
}

std::vector<const EncoderVector*> ptrs(const std::vector<EncoderVector>& v) {
  std::vector<const EncoderVector*> p;
  for (const auto& e : v) p.push_back(&e);
  return p;
}

}  // namespace

TEST_CASE("retriever_prob hand cases") {
  const auto uniform = state_with({0.3, -1.2}, {{1, 2}, {1, 2}, {1, 2}});
  for (double p : retriever_prob(uniform, "q", ids(3))) CHECK(p == doctest::Approx(1.0 / 3));

  const auto two = state_with({std::log(2.0)}, {{1.0}, {0.0}});
  const auto p = retriever_prob(two, "q", ids(2));
  CHECK(p[0] == doctest::Approx(2.0 / 3).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(1.0 / 3).epsilon(1e-12));

  try {
    retriever_prob(two, "q", std::vector<std::string>{"c0", "ghost"});
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("ghost") != std::string::npos);
  }
  CHECK_THROWS(retriever_prob(two, "q", std::vector<std::string>{}));
}

TEST_CASE("retriever probabilities sum to one") {
  Rng rng(1);
  for (std::size_t n = 1; n <= 50; ++n) {
    std::vector<std::vector<double>> docs;
    for (std::size_t i = 0; i < n; ++i) docs.push_back({rng.normal() * 5, rng.normal() * 5});
    const auto st = state_with({rng.normal(), rng.normal()}, docs, rng.uniform(0.1, 3));
    double sum = 0;
    for (double p : retriever_prob(st, "q", ids(n))) sum += p;
    CHECK(std::abs(sum - 1.0) <= 1e-9);
  }
}

TEST_CASE("marginal: single candidate and a hand-enumerated pair") {
  const auto one = state_with({0.7}, {{1.0}});
  const TableInfiller gen1({{"text0", 1.25}});
  const auto r1 = rag_sequence_marginal(one, gen1, kMasked, "q", ids(1), texts_for(1));
  CHECK(r1.marginal_log_likelihood == doctest::Approx(-1.25));
  CHECK(r1.loss == doctest::Approx(1.25));

  // p_retriever = (0.6, 0.4) from logits (ln 1.5, 0); likelihoods (0.5, 0.25)
  const auto two = state_with({std::log(1.5)}, {{1.0}, {0.0}});
  const TableInfiller gen2({{"text0", -std::log(0.5)}, {"text1", -std::log(0.25)}});
  const auto r2 = rag_sequence_marginal(two, gen2, kMasked, "q", ids(2), texts_for(2));
  CHECK(r2.per_source[0].retriever_prob == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(std::abs(std::exp(r2.marginal_log_likelihood) - 0.4) <= 1e-12);
  CHECK(r2.loss == doctest::Approx(-std::log(0.4)).epsilon(1e-12));
}

TEST_CASE("log-domain marginal equals the direct sum and stays within per-source bounds") {
  Rng rng(5);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 1 + rng.below(10);
    std::vector<std::vector<double>> docs;
    std::unordered_map<std::string, double> nll;
    for (std::size_t i = 0; i < n; ++i) {
      docs.push_back({rng.normal(), rng.normal(), rng.normal()});
      nll["text" + std::to_string(i)] = rng.uniform(0.0, 20.0);
    }
    const auto st = state_with({rng.normal(), rng.normal(), rng.normal()}, docs);
    const auto r = rag_sequence_marginal(st, TableInfiller(nll), kMasked, "q", ids(n), texts_for(n));
    double direct = 0, lo = 1e300, hi = 0, psum = 0;
    for (const auto& t : r.per_source) {
      const double lik = std::exp(t.span_log_likelihood);
      direct += t.retriever_prob * lik;
      lo = std::min(lo, lik);
      hi = std::max(hi, lik);
      psum += t.retriever_prob;
    }
    CHECK(std::abs(psum - 1.0) <= 1e-9);
    CHECK(std::abs(r.marginal_log_likelihood - std::log(direct)) <= 1e-9);
    CHECK(std::exp(r.marginal_log_likelihood) >= lo * (1 - 1e-12));
    CHECK(std::exp(r.marginal_log_likelihood) <= hi * (1 + 1e-12));
    CHECK(r.loss == -r.marginal_log_likelihood);
  }
}

TEST_CASE("per-source accumulation equals the joint computation") {
  Rng rng(9);
  for (int rep = 0; rep < 50; ++rep) {
    const auto in = random_instance(rng);
    std::vector<double> g1(in.enc.weights().size()), g2(g1.size());
    const double l1 = rag_objective(in.enc, in.query, ptrs(in.docs), in.ll, in.tau, Accumulation::kPerSource, &g1);
    const double l2 = rag_objective(in.enc, in.query, ptrs(in.docs), in.ll, in.tau, Accumulation::kJoint, &g2);
    CHECK(std::abs(l1 - l2) <= 1e-9);
    for (std::size_t i = 0; i < g1.size(); ++i) CHECK(std::abs(g1[i] - g2[i]) <= 1e-9);
  }
}

TEST_CASE("query-encoder gradient matches central finite differences") {
  Rng rng(12);
  for (int rep = 0; rep < 20; ++rep) {
    auto in = random_instance(rng);
    std::vector<double> g(in.enc.weights().size());
    rag_objective(in.enc, in.query, ptrs(in.docs), in.ll, in.tau, Accumulation::kPerSource, &g);
    const double h = 1e-5;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double w0 = in.enc.weights()[i];
      in.enc.weights()[i] = w0 + h;
      const double up = rag_objective(in.enc, in.query, ptrs(in.docs), in.ll, in.tau, Accumulation::kJoint, nullptr);
      in.enc.weights()[i] = w0 - h;
      const double down = rag_objective(in.enc, in.query, ptrs(in.docs), in.ll, in.tau, Accumulation::kJoint, nullptr);
      in.enc.weights()[i] = w0;
      const double fd = (up - down) / (2 * h);
      CHECK(std::abs(g[i] - fd) <= 1e-4 * std::max(1e-3, std::abs(fd)));
    }
  }
}

TEST_CASE("training leaves the generator and doc embeddings untouched") {
  const auto corpus = make_copy_corpus({.targets = 20, .distractors = 20});
  TextLookup texts;
  for (const auto& c : corpus.sources) texts[c.chunk_id] = c.text;
  auto st = make_retriever_state(HashProjectionEncoder(16, 512, 1), texts);
  const auto docs_before = st.doc_embeddings;

  TrainingSetInputs tin;
  tin.examples = corpus.examples;
  tin.targets = corpus.targets;
  tin.source_texts = &texts;
  const auto trained = train(CopyMixtureInfiller(), build_training_set(tin, Supervision::kFull).examples, {2, 8, 0.5, 0});
  const auto& gen = dynamic_cast<const CopyMixtureInfiller&>(*trained.model);
  const double gate = gen.gate_logit();
  const auto logits = gen.unigram_logits();

  std::vector<GgrExample> batch;
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& t = corpus.targets[i];
    batch.push_back({corpus.examples[i].query_id, mask_span(t, corpus.examples[i].target), t.text,
                     {corpus.gold_source[i], corpus.sources[0].chunk_id, corpus.sources[1].chunk_id}});
  }
  const auto w0 = std::vector<double>(st.query_encoder.weights().begin(), st.query_encoder.weights().end());
  for (int step = 0; step < 3; ++step) st = ggr_train_step(st, gen, batch, texts, 0.5).state;
  CHECK(st.doc_embeddings == docs_before);
  CHECK(gen.gate_logit() == gate);
  CHECK(gen.unigram_logits() == logits);
  CHECK(!std::equal(w0.begin(), w0.end(), st.query_encoder.weights().begin()));
}

TEST_CASE("one good candidate: its probability rises every step and it ends first") {
  const auto corpus = make_copy_corpus({.targets = 1, .distractors = 9, .topical_fraction = 1.0});
  TextLookup texts;
  std::vector<std::string> cands;
  for (const auto& c : corpus.sources) {
    texts[c.chunk_id] = augment_with_biblio(c);
    cands.push_back(c.chunk_id);
  }
  const auto& target = corpus.targets[0];
  const GgrExample ex{"q0", mask_span(target, corpus.examples[0].target), target.text, cands};
  auto st = make_retriever_state(HashProjectionEncoder(32, 1024, 5), texts);
  const CopyOracleInfiller gen;
  const auto gold = std::find(cands.begin(), cands.end(), corpus.gold_source[0]) - cands.begin();

  double prev = retriever_prob(st, ex.query_text, cands)[gold];
  for (int step = 0; step < 20; ++step) {
    st = ggr_train_step(st, gen, std::span(&ex, 1), texts, 20.0).state;
    const double p = retriever_prob(st, ex.query_text, cands)[gold];
    CHECK(p > prev);
    prev = p;
  }
  RankedCandidates pool;
  for (const auto& c : cands) pool.entries.push_back({c, 0.0});
  CHECK(rerank_with_tuned_encoder(st, target.text, pool).entries.front().chunk_id == corpus.gold_source[0]);
}

TEST_CASE("untrained state reranks like the cosine reranker with the same encoder") {
  const auto corpus = make_copy_corpus({.targets = 10, .distractors = 40});
  TextLookup texts;
  for (const auto& c : corpus.sources) texts[c.chunk_id] = augment_with_biblio(c);
  const HashProjectionEncoder enc(24, 512, 2);
  const auto st = make_retriever_state(enc, texts);
  for (const auto& t : corpus.targets) {
    RankedCandidates pool;
    for (const auto& c : corpus.sources) pool.entries.push_back({c.chunk_id, 0.0});
    CHECK(rerank_with_tuned_encoder(st, t.text, pool).ids() == rerank_by_embedding(t.text, pool, enc, texts).ids());
  }
}

TEST_CASE("ggr_train is seed-deterministic and checkpoints round trip") {
  const auto corpus = make_copy_corpus({.targets = 12, .distractors = 12});
  TextLookup texts;
  std::vector<std::string> cands;
  for (const auto& c : corpus.sources) {
    texts[c.chunk_id] = c.text;
    cands.push_back(c.chunk_id);
  }
  std::vector<GgrExample> exs;
  for (std::size_t i = 0; i < corpus.targets.size(); ++i) {
    exs.push_back({corpus.examples[i].query_id, mask_span(corpus.targets[i], corpus.examples[i].target),
                   corpus.targets[i].text, cands});
  }
  const auto init = make_retriever_state(HashProjectionEncoder(8, 256, 3), texts, 0.5);
  std::vector<double> losses_a, losses_b;
  const GgrHyperparams hp{0.5, 3, 4, 11};
  const auto a = ggr_train(init, CopyOracleInfiller(), exs, texts, hp, [&](const GgrLogEntry& e) { losses_a.push_back(e.loss); });
  const auto b = ggr_train(init, CopyOracleInfiller(), exs, texts, hp, [&](const GgrLogEntry& e) { losses_b.push_back(e.loss); });
  CHECK(losses_a.size() == 9);
  CHECK(losses_a == losses_b);
  CHECK(std::equal(a.query_encoder.weights().begin(), a.query_encoder.weights().end(), b.query_encoder.weights().begin()));

  const auto dir = std::filesystem::temp_directory_path() / "srcattr_ggr_ckpt";
  std::filesystem::remove_all(dir);
  save_checkpoint(a, dir, 11, "abc");
  const auto back = load_checkpoint(dir);
  CHECK(back.temperature == 0.5);
  CHECK(back.doc_embeddings == a.doc_embeddings);
  RankedCandidates pool;
  for (const auto& c : cands) pool.entries.push_back({c, 0.0});
  CHECK(rerank_with_tuned_encoder(back, corpus.targets[0].text, pool).entries ==
        rerank_with_tuned_encoder(a, corpus.targets[0].text, pool).entries);
  CHECK_THROWS(ggr_train(init, CopyOracleInfiller(), {}, texts, hp));
}

TEST_CASE("non-finite generator output is an error") {
  const auto st = state_with({1.0}, {{1.0}, {0.5}});
  const TableInfiller bad({{"text0", 1.0}, {"text1", std::nan("")}});
  CHECK_THROWS(rag_sequence_marginal(st, bad, kMasked, "q", ids(2), texts_for(2)));
  const GgrExample ex{"e", kMasked, "q", ids(2)};
  CHECK_THROWS(ggr_train_step(st, bad, std::span(&ex, 1), texts_for(2), 0.1));
}
