#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "srcattr/gen_rerank.hpp"
#include "srcattr/text.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace srcattr;
using namespace srcattr::testing;

namespace {

MaskedTarget masked(std::string observed, std::string span) { return {std::move(observed), std::move(span)}; }

// Adds a constant to another infiller's loss.
class Shifted final : public SpanInfiller {
 public:
  Shifted(const SpanInfiller& inner, double c) : inner_(inner), c_(c) {}
  double span_nll(std::string_view o, std::string_view s, std::string_view span) const override {
    return inner_.span_nll(o, s, span) + c_;
  }
  std::string predict_span(std::string_view o, std::string_view s) const override {
    return inner_.predict_span(o, s);
  }
  std::string identity() const override { return "shifted"; }
  std::unique_ptr<SpanInfiller> clone() const override { return std::make_unique<Shifted>(*this); }

 private:
  const SpanInfiller& inner_;
  double c_;
};

class Broken final : public SpanInfiller {
 public:
  double span_nll(std::string_view, std::string_view, std::string_view) const override {
    throw std::runtime_error("model exploded");
  }
  std::string predict_span(std::string_view, std::string_view) const override { return {}; }
  std::string identity() const override { return "broken"; }
  std::unique_ptr<SpanInfiller> clone() const override { return std::make_unique<Broken>(); }
};

struct Setup {
  CopyCorpus corpus;
  TextLookup texts;
  std::unordered_map<std::string, const Chunk*> targets;
};

Setup setup(CopyCorpusParams p) {
  Setup s{make_copy_corpus(p), {}, {}};
  for (const auto& c : s.corpus.sources) s.texts[c.chunk_id] = augment_with_biblio(c);
  for (const auto& c : s.corpus.targets) s.targets[c.chunk_id] = &c;
  return s;
}

IndexedCorpus index_of(const Setup& s) {
  std::vector<std::pair<std::string, std::string>> docs;
  for (const auto& c : s.corpus.sources) docs.emplace_back(c.chunk_id, s.texts.at(c.chunk_id));
  return build_index(std::move(docs));
}

}  // namespace

TEST_CASE("uniform stub: 3 tokens over V=10") {
  const UniformInfiller u(10);
  const double L = score_source(u, masked("a <MASK> b", "x y z"), "source");
  CHECK(L == doctest::Approx(3 * std::log(10.0)).epsilon(1e-12));
  CHECK(L == doctest::Approx(6.9078).epsilon(1e-4));
}

TEST_CASE("copy oracle prefers the source containing the span") {
  const CopyOracleInfiller c;
  const auto m = masked("left <MASK> right", "alpha beta gamma");
  const double with = score_source(c, m, "x left alpha beta gamma right y");
  const double without = score_source(c, m, "nothing shared here");
  CHECK(with < without);
  CHECK(with == doctest::Approx(-3 * std::log(0.9)));
  CHECK(without == doctest::Approx(-3 * std::log(0.1)));
}

TEST_CASE("stub losses are additive over span tokens") {
  const CopyOracleInfiller c;
  const std::string src = "a b c d e";
  const double whole = c.span_nll("<MASK>", src, "a b x y");
  CHECK(whole == doctest::Approx(c.span_nll("<MASK>", src, "a b") + c.span_nll("<MASK>", src, "x y")));
}

TEST_CASE("length normalization divides by the span token count") {
  const UniformInfiller u(10);
  const double L = score_source(u, masked("<MASK>", "a b c d"), "s", "q", {true});
  CHECK(L == doctest::Approx(std::log(10.0)));
}

TEST_CASE("model failure names the example") {
  try {
    score_source(Broken(), masked("<MASK>", "x"), "s", "query-42");
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("query-42") != std::string::npos);
  }
  CHECK_THROWS(score_source(UniformInfiller(3), masked("no sentinel", "x"), "s"));
  CHECK_THROWS(score_source(UniformInfiller(3), masked("<MASK> <MASK>", "x"), "s"));
}

TEST_CASE("conditioning input puts the source first") {
  CHECK(conditioning_input("S", "T <MASK>") == "S </s> T <MASK>");
}

TEST_CASE("anchored copy") {
  CHECK(anchored_copy("a l <MASK> r b", "x l p q r y") == "p q");
  CHECK(anchored_copy("<MASK> r", "p q r") == "p q");
  CHECK(anchored_copy("l <MASK>", "x l p q") == "p q");
  CHECK(!anchored_copy("l <MASK> r", "nothing here"));
  // the first left anchor that has a right anchor after it wins
  CHECK(anchored_copy("l <MASK> r", "l a l b r") == "a l b");
}

TEST_CASE("copy-oracle reranking puts gold first on the copy corpus") {
  const auto s = setup({.targets = 40, .distractors = 100});
  const auto idx = index_of(s);
  const CopyOracleInfiller oracle;
  std::vector<std::vector<std::string>> ranked;
  std::vector<std::set<std::string>> rel;
  for (std::size_t q = 0; q < s.corpus.examples.size(); ++q) {
    const auto& ex = s.corpus.examples[q];
    const Chunk& t = *s.targets.at(ex.target.chunk_id);
    const auto pool = idx.retrieve(t.text, 100, t.chunk_id, ex.query_id);
    const auto m = mask_span(t, ex.target);
    const auto out = rerank_by_generation(oracle, m, pool, s.texts);
    CHECK(out.entries.front().chunk_id == s.corpus.gold_source[q]);
    CHECK(out.scorer == "gen:" + oracle.identity());
    // permutation of the pool, scores non-increasing
    auto a = out.ids(), b = pool.ids();
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
    for (std::size_t i = 1; i < out.entries.size(); ++i) CHECK(out.entries[i - 1].score >= out.entries[i].score);
    // a constant shift of every loss keeps the order
    CHECK(rerank_by_generation(Shifted(oracle, 3.5), m, pool, s.texts).ids() == out.ids());
    CHECK(rerank_by_generation(oracle, m, pool, s.texts, {}, 3).ids() == out.ids());
    ranked.push_back(out.ids());
    rel.push_back({s.corpus.gold_source[q]});
  }
  CHECK(oracle::mrr(ranked, rel) == 1.0);
}

TEST_CASE("identical candidate texts fall back to ascending chunk id") {
  RankedCandidates pool;
  pool.entries = {{"c", 3}, {"a", 2}, {"b", 1}};
  const TextLookup texts{{"a", "same"}, {"b", "same"}, {"c", "same"}};
  const auto out = rerank_by_generation(CopyOracleInfiller(), masked("<MASK>", "x"), pool, texts);
  CHECK(out.ids() == std::vector<std::string>{"a", "b", "c"});
  const TextLookup missing{{"a", "same"}};
  CHECK_THROWS(rerank_by_generation(CopyOracleInfiller(), masked("<MASK>", "x"), pool, missing));
}

TEST_CASE("FULL training set pairs each span with a gold source") {
  const auto s = setup({.targets = 10, .distractors = 20});
  TrainingSetInputs in;
  in.examples = s.corpus.examples;
  in.targets = s.corpus.targets;
  in.source_texts = &s.texts;
  const auto full = build_training_set(in, Supervision::kFull);
  REQUIRE(full.examples.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(full.examples[i].provenance == Provenance::kGoldSource);
    CHECK(full.examples[i].source_chunk_id == s.corpus.gold_source[i]);
    CHECK(full.examples[i].masked.masked_text == s.corpus.gold_span[i]);
  }
  auto no_gold = s.corpus.examples;
  no_gold[3].gold_chunk_ids.reset();
  in.examples = no_gold;
  CHECK_THROWS(build_training_set(in, Supervision::kFull));
}

TEST_CASE("SEMI: 7 of 10 carry gold when baseline top-1 accuracy is 7/10") {
  const auto s = setup({.targets = 10, .distractors = 30, .topical_fraction = 0.3, .seed = 17});
  const auto idx = index_of(s);
  std::size_t baseline_top1 = 0;
  for (std::size_t q = 0; q < 10; ++q) {
    const Chunk& t = *s.targets.at(s.corpus.examples[q].target.chunk_id);
    baseline_top1 += idx.retrieve(t.text, 1, t.chunk_id).entries.at(0).chunk_id == s.corpus.gold_source[q];
  }
  REQUIRE(baseline_top1 == 7);

  // SEMI input carries no gold at all
  auto semi = s.corpus.examples;
  for (auto& ex : semi) {
    ex.supervision = Supervision::kSemi;
    ex.gold_chunk_ids.reset();
    ex.gold_work_id.reset();
  }
  TrainingSetInputs in;
  in.examples = semi;
  in.targets = s.corpus.targets;
  in.source_texts = &s.texts;
  in.index = &idx;
  const auto built = build_training_set(in, Supervision::kSemi);
  REQUIRE(built.examples.size() == 10);
  std::size_t gold = 0;
  for (std::size_t q = 0; q < 10; ++q) {
    CHECK(built.examples[q].provenance == Provenance::kTop1Retrieved);
    gold += built.examples[q].source_chunk_id == s.corpus.gold_source[q];
  }
  CHECK(gold == 7);

  // same output with the gold fields present: they are never read
  in.examples = s.corpus.examples;
  const auto with_gold = build_training_set(in, Supervision::kSemi);
  CHECK(training_data_hash(with_gold.examples) == training_data_hash(built.examples));

  // where top-1 is gold, the SEMI example equals the FULL one apart from provenance
  in.examples = s.corpus.examples;
  const auto full = build_training_set(in, Supervision::kFull);
  for (std::size_t q = 0; q < 10; ++q) {
    if (built.examples[q].source_chunk_id != s.corpus.gold_source[q]) continue;
    CHECK(built.examples[q].source_text == full.examples[q].source_text);
    CHECK(built.examples[q].masked.observed_text == full.examples[q].masked.observed_text);
    CHECK(built.examples[q].masked.masked_text == full.examples[q].masked.masked_text);
  }
  in.index = nullptr;
  CHECK_THROWS(build_training_set(in, Supervision::kSemi));
}

TEST_CASE("SEMI excludes the target chunk from its own retrieval") {
  std::vector<Chunk> chunks(2);
  chunks[0].chunk_id = "self";
  chunks[0].text = "alpha beta gamma delta";
  chunks[0].token_end = 4;
  chunks[1].chunk_id = "other";
  chunks[1].text = "alpha zeta";
  chunks[1].token_end = 2;
  const auto idx = build_index({{"self", chunks[0].text}, {"other", chunks[1].text}});
  const TextLookup texts{{"self", chunks[0].text}, {"other", chunks[1].text}};
  std::vector<AttributionExample> exs(1);
  exs[0].query_id = "q";
  exs[0].target = {"self", 1, 2};
  exs[0].supervision = Supervision::kSemi;
  TrainingSetInputs in;
  in.examples = exs;
  in.targets = chunks;
  in.source_texts = &texts;
  in.index = &idx;
  const auto out = build_training_set(in, Supervision::kSemi);
  REQUIRE(out.examples.size() == 1);
  CHECK(out.examples[0].source_chunk_id == "other");
}

TEST_CASE("PSEUDO: one planted 50-token passage gives one example") {
  Rng rng(77);
  std::vector<std::string> passage;
  for (int i = 0; i < 50; ++i) passage.push_back("p" + std::to_string(i));
  auto make = [&](const std::string& id, const std::string& stem, std::size_t before, std::size_t after) {
    std::vector<std::string> toks;
    for (std::size_t i = 0; i < before; ++i) toks.push_back(stem + std::to_string(rng.below(1000)));
    toks.insert(toks.end(), passage.begin(), passage.end());
    for (std::size_t i = 0; i < after; ++i) toks.push_back(stem + std::to_string(rng.below(1000)));
    Chunk c;
    c.chunk_id = id;
    c.work_id = id + "-work";
    c.text = text::join(toks);
    c.token_end = toks.size();
    return std::make_pair(c, before);
  };
  const auto [target, tpos] = make("t", "q", 70, 40);
  const auto [source, spos] = make("s", "z", 20, 90);
  const std::vector<Chunk> targets{target}, sources{source};
  const TextLookup texts{{"s", source.text}};
  TrainingSetInputs in;
  in.targets = targets;
  in.sources = sources;
  in.source_texts = &texts;
  const auto out = build_training_set(in, Supervision::kPseudo);
  REQUIRE(out.examples.size() == 1);
  CHECK(out.examples[0].provenance == Provenance::kAligned);
  CHECK(out.examples[0].source_chunk_id == "s");
  std::size_t overlap = 0;
  for (const auto& t : text::whitespace_tokens(out.examples[0].masked.masked_text)) {
    overlap += std::find(passage.begin(), passage.end(), t) != passage.end();
  }
  CHECK(overlap >= 45);
  (void)tpos;
  (void)spos;
}

TEST_CASE("copy-mixture training lowers the loss and is seed-deterministic") {
  const auto s = setup({.targets = 50, .distractors = 10});
  TrainingSetInputs in;
  in.examples = s.corpus.examples;
  in.targets = s.corpus.targets;
  in.source_texts = &s.texts;
  const auto set = build_training_set(in, Supervision::kFull).examples;
  REQUIRE(set.size() == 50);
  const CopyMixtureInfiller base;
  const TrainHyperparams hp{10, 8, 0.5, 3};
  const auto a = train(base, set, hp);
  const auto b = train(base, set, hp);
  REQUIRE(a.epoch_losses.size() == 10);
  CHECK(a.epoch_losses.back() < a.epoch_losses.front());
  CHECK(a.epoch_losses == b.epoch_losses);
  const auto c = train(base, set, {10, 8, 0.5, 4});
  CHECK(c.epoch_losses.back() < c.epoch_losses.front());

  // the trained copy gate makes greedy prediction copy the span
  std::size_t hits = 0;
  for (const auto& ex : set) hits += predict_and_match(*a.model, ex.masked, ex.source_text, ex.masked.masked_text);
  CHECK(hits == set.size());

  const auto dir = std::filesystem::temp_directory_path() / "srcattr_copymix";
  std::filesystem::remove_all(dir);
  a.model->save(dir);
  const auto loaded = make_infiller({"copy-mixture", 0, dir});
  CHECK(loaded->identity() == a.model->identity());
  for (const auto& ex : set) {
    CHECK(loaded->span_nll(ex.masked.observed_text, ex.source_text, ex.masked.masked_text) ==
          a.model->span_nll(ex.masked.observed_text, ex.source_text, ex.masked.masked_text));
  }
}

TEST_CASE("training preconditions and divergence") {
  const CopyMixtureInfiller base;
  CHECK_THROWS_AS(train(base, {}, {}), std::invalid_argument);
  CHECK_THROWS_AS(train(UniformInfiller(5), std::vector<TrainingExample>{{"e", masked("<MASK>", "a"), "s", Provenance::kGoldSource, ""}}, {}),
                  std::logic_error);
  std::vector<TrainingExample> set;
  for (int i = 0; i < 8; ++i) {
    set.push_back({"e" + std::to_string(i), masked("x <MASK> y", "unseen" + std::to_string(i)), "a b c",
                   Provenance::kGoldSource, ""});
  }
  try {
    train(base, set, {3, 4, 1e305, 0});
    FAIL("expected divergence");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("exact match normalizes case, whitespace and composition") {
  const CopyOracleInfiller c;
  const auto m = masked("l <MASK> r", "ignored");
  CHECK(predict_and_match(c, m, "l The  City r", "The City"));
  CHECK(predict_and_match(c, m, "l The City r", "the   city "));
  CHECK(predict_and_match(c, m, "l Cafe\xCC\x81 r", "CAF\xC3\x89"));
  CHECK(!predict_and_match(c, m, "l Paris r", "London"));
  CHECK(!predict_and_match(c, m, "nothing", "Paris"));
}

TEST_CASE("training examples JSONL round trip and stable hash") {
  const std::vector<TrainingExample> set{{"a", masked("x <MASK>", "y"), "src", Provenance::kAligned, "s1"},
                                         {"b", masked("<MASK> z", "w"), "src2", Provenance::kTop1Retrieved, ""}};
  const auto path = std::filesystem::temp_directory_path() / "srcattr_train.jsonl";
  write_training_examples(path, set);
  const auto back = read_training_examples(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].provenance == Provenance::kAligned);
  CHECK(back[1].masked.masked_text == "w");
  CHECK(training_data_hash(back) == training_data_hash(set));
  auto changed = set;
  changed[1].source_text = "other";
  CHECK(training_data_hash(changed) != training_data_hash(set));
}

TEST_CASE("infiller registry") {
  CHECK(make_infiller({"uniform", 7, {}})->identity() == "uniform(V=7)");
  CHECK(!make_infiller({"copy-oracle", 0, {}})->trainable());
  CHECK(make_infiller({"copy-mixture", 0, {}})->trainable());
  CHECK_THROWS(make_infiller({"bart-large", 0, {}}));
}
