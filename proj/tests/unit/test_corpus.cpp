#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "srcattr/corpus.hpp"
#include "srcattr/text.hpp"
#include "support/synthetic.hpp"

using namespace srcattr;
using srcattr::testing::Rng;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("srcattr_corpus_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& body) {
  std::ofstream out(p, std::ios::binary);
  out << body;
}

std::string words(std::size_t n, const std::string& stem = "w") {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + stem + std::to_string(i);
  return s;
}

Chunk chunk_of(const std::string& text, const std::string& id = "c") {
  Chunk c;
  c.chunk_id = id;
  c.text = text;
  c.token_end = text::whitespace_tokens(text).size();
  return c;
}

}  // namespace

TEST_CASE("ingest keeps file order") {
  const auto dir = scratch("order");
  write_file(dir / "d.jsonl",
             R"({"doc_id":"d2","work_id":"w","section_id":"s","title":"","author":"","text":"b b"})"
             "\n"
             R"({"doc_id":"d1","work_id":"w","section_id":"s","title":"T","author":"A","text":"a"})"
             "\n");
  const auto docs = ingest_documents(dir / "d.jsonl");
  REQUIRE(docs.size() == 2);
  CHECK(docs[0].doc_id == "d2");
  CHECK(docs[1].title == "T");
}

TEST_CASE("ingest names a duplicated doc_id") {
  const auto dir = scratch("dup");
  const std::string line =
      R"({"doc_id":"d1","work_id":"w","section_id":"s","title":"","author":"","text":"x"})";
  write_file(dir / "d.jsonl", line + "\n" + line + "\n");
  try {
    ingest_documents(dir / "d.jsonl");
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("d1") != std::string::npos);
  }
}

TEST_CASE("ingest of an empty file is empty; malformed lines name the line") {
  const auto dir = scratch("empty");
  write_file(dir / "e.jsonl", "");
  CHECK(ingest_documents(dir / "e.jsonl").empty());
  write_file(dir / "bad.jsonl",
             R"({"doc_id":"d1","work_id":"w","section_id":"s","title":"","author":"","text":"x"})"
             "\n{not json\n");
  try {
    ingest_documents(dir / "bad.jsonl");
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("documents survive a write/read round trip") {
  const auto dir = scratch("rt");
  Document d{"d1", "w1", "s1", "Title", "Author", "Some text here", {"Some text.", "here"}};
  write_documents(dir / "d.jsonl", std::span<const Document>(&d, 1));
  const auto back = ingest_documents(dir / "d.jsonl");
  REQUIRE(back.size() == 1);
  CHECK(back[0].author == "Author");
  CHECK(back[0].sentences == d.sentences);
}

TEST_CASE("650 tokens chunk into 300/300/50") {
  Document d;
  d.doc_id = "d";
  d.text = words(650);
  const auto chunks = chunk_document(d, 300);
  REQUIRE(chunks.size() == 3);
  CHECK(chunks[0].size() == 300);
  CHECK(chunks[1].size() == 300);
  CHECK(chunks[2].size() == 50);
  CHECK(chunks[2].ordinal == 2);
  std::string joined;
  for (const auto& c : chunks) joined += (joined.empty() ? "" : " ") + c.text;
  CHECK(joined == d.text);
}

TEST_CASE("300-token document is a single chunk; empty text gives none") {
  Document d;
  d.doc_id = "d";
  d.text = words(300);
  const auto one = chunk_document(d);
  REQUIRE(one.size() == 1);
  CHECK(one[0].text == d.text);
  d.text = "   ";
  CHECK(chunk_document(d).empty());
  CHECK_THROWS(chunk_document(d, 0));
}

TEST_CASE("chunks tile random documents exactly") {
  Rng rng(5);
  for (int rep = 0; rep < 40; ++rep) {
    const std::size_t n = rng.below(2001);
    std::vector<std::string> toks;
    std::string textbuf;
    for (std::size_t i = 0; i < n; ++i) {
      toks.push_back("t" + std::to_string(rng.below(50)));
      textbuf += toks.back() + (rng.below(4) == 0 ? "  \n" : " ");
    }
    Document d;
    d.doc_id = "d" + std::to_string(rep);
    d.text = textbuf;
    const std::size_t size = 1 + rng.below(400);
    const auto chunks = chunk_document(d, size);
    std::vector<std::string> rebuilt;
    std::size_t expect_start = 0;
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      const auto& c = chunks[i];
      CHECK(c.ordinal == i);
      CHECK(c.token_start == expect_start);
      CHECK(c.size() <= size);
      CHECK(c.size() >= 1);
      expect_start = c.token_end;
      const auto part = text::whitespace_tokens(c.text);
      CHECK(part.size() == c.size());
      rebuilt.insert(rebuilt.end(), part.begin(), part.end());
    }
    CHECK(rebuilt == toks);
  }
}

TEST_CASE("bibliographic augmentation") {
  CHECK(augment_with_biblio("Futuh Misr", "Ibn Abd al'Hakam", "T") ==
        "Futuh Misr ¶ Ibn Abd al'Hakam ¶ T");
  CHECK(augment_with_biblio("Paris", "", "T") == "Paris ¶ T");
  CHECK(augment_with_biblio("", "", "T") == "T");
  Chunk c = chunk_of("body text");
  c.title = "X";
  const auto before = c.text;
  CHECK(augment_with_biblio(c) == "X ¶ body text");
  CHECK(c.text == before);
  Document doc;
  doc.author = "Y";
  CHECK(augment_with_biblio(c, doc) == "Y ¶ body text");
}

TEST_CASE("context windows stay inside the citing section") {
  const std::vector<Sentence> page{{"s0", "A"}, {"s1", "B"}, {"s2", "B"}, {"s3", "B"},
                                   {"s4", "B"}, {"s5", "B"}, {"s6", "C"}};
  CHECK(build_context_window(page, 3, 1) == "s3");
  CHECK(build_context_window(page, 1, 3) == "s1 s2");
  CHECK(build_context_window(page, 3, 5) == "s1 s2 s3 s4 s5");
  CHECK(build_context_window(page, 0, 5) == "s0");
  CHECK(build_context_window(page, 6, 3) == "s6");
  CHECK_THROWS(build_context_window(page, 3, 4));
  CHECK_THROWS(build_context_window(page, 7, 3));

  Rng rng(3);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<Sentence> p;
    const std::size_t len = 1 + rng.below(15);
    for (std::size_t i = 0; i < len; ++i) p.push_back({"x" + std::to_string(i), std::to_string(rng.below(3))});
    const std::size_t ci = rng.below(len);
    const std::size_t n = 2 * rng.below(4) + 1;
    const auto r = context_window_range(p, ci, n);
    CHECK(r.first <= ci);
    CHECK(ci < r.last);
    CHECK(r.last - r.first <= n);
    for (std::size_t i = r.first; i < r.last; ++i) CHECK(p[i].section == p[ci].section);
  }
}

TEST_CASE("mask_span within budget masks the whole span") {
  const auto c = chunk_of(words(60));
  const auto m = mask_span(c, {"c", 10, 50}, 100);
  CHECK(m.masked_text == text::join(text::whitespace_tokens(c.text), 10, 50));
  CHECK(unmask(m) == c.text);
}

TEST_CASE("mask_span truncates a 300-subword span to the first 100") {
  const auto c = chunk_of(words(300));
  const auto m = mask_span(c, {"c", 0, 300}, 100);
  CHECK(text::whitespace_tokens(m.masked_text).size() == 100);
  const auto observed = text::whitespace_tokens(m.observed_text);
  CHECK(observed.size() == 201);
  CHECK(observed.front() == "<MASK>");
  CHECK(unmask(m) == c.text);
}

TEST_CASE("mask_span counts subwords with the bound tokenizer") {
  // two subwords per token
  const SubwordTokenizer pairs = [](std::string_view t) {
    auto w = text::whitespace_tokens(t);
    std::vector<std::string> out;
    for (auto& x : w) {
      out.push_back(x);
      out.push_back("##");
    }
    return out;
  };
  const auto c = chunk_of(words(20));
  const auto m = mask_span(c, {"c", 2, 12}, 7, pairs);
  CHECK(text::whitespace_tokens(m.masked_text).size() == 3);
  CHECK(unmask(m) == c.text);
}

TEST_CASE("mask_span errors") {
  const auto c = chunk_of(words(5));
  CHECK_THROWS(mask_span(c, {"c", 3, 6}));
  CHECK_THROWS(mask_span(c, {"c", 3, 3}));
  CHECK_THROWS(mask_span(chunk_of("a <MASK> b"), {"c", 0, 1}));
}

TEST_CASE("mask/unmask round trip on random spans") {
  Rng rng(9);
  for (int rep = 0; rep < 300; ++rep) {
    const std::size_t n = 1 + rng.below(80);
    const auto c = chunk_of(words(n, "z"));
    const std::size_t s = rng.below(n);
    const std::size_t e = s + 1 + rng.below(n - s);
    const auto m = mask_span(c, {"c", s, e}, 1 + rng.below(30));
    CHECK(unmask(m) == c.text);
    CHECK(m.observed_text.find("<MASK>") == m.observed_text.rfind("<MASK>"));
  }
}

TEST_CASE("examples JSONL round trip and supervision invariants") {
  const auto dir = scratch("ex");
  std::vector<AttributionExample> exs(2);
  exs[0].query_id = "a";
  exs[0].target = {"t1", 0, 3};
  exs[0].gold_chunk_ids = std::vector<std::string>{"s1", "s2"};
  exs[1].query_id = "b";
  exs[1].target = {"t2", 1, 2};
  exs[1].supervision = Supervision::kSemi;
  write_examples(dir / "e.jsonl", exs);
  const auto back = read_examples(dir / "e.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(*back[0].gold_chunk_ids == std::vector<std::string>{"s1", "s2"});
  CHECK(back[1].supervision == Supervision::kSemi);
  CHECK(!back[1].gold_chunk_ids);

  AttributionExample bad;
  bad.query_id = "x";
  bad.target = {"t", 0, 1};
  CHECK_THROWS(validate(bad));
  write_file(dir / "noid.jsonl", R"({"chunk_id":"t","span_start":0,"span_end":1,"supervision":"SEMI"})" "\n");
  CHECK(read_examples(dir / "noid.jsonl").at(0).query_id == "q0");
  CHECK(parse_supervision("PSEUDO") == Supervision::kPseudo);
  CHECK_THROWS(parse_supervision("partial"));
}
