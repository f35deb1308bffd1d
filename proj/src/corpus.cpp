#include "srcattr/corpus.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "jsonl.hpp"
#include "srcattr/text.hpp"

namespace srcattr {

using detail::json;

std::string_view to_string(Supervision s) {
  switch (s) {
    case Supervision::kFull:
      return "FULL";
    case Supervision::kSemi:
      return "SEMI";
    case Supervision::kPseudo:
      return "PSEUDO";
  }
  return "FULL";
}

Supervision parse_supervision(std::string_view s) {
  if (s == "FULL") return Supervision::kFull;
  if (s == "SEMI") return Supervision::kSemi;
  if (s == "PSEUDO") return Supervision::kPseudo;
  throw std::invalid_argument("unknown supervision level: " + std::string(s));
}

void validate(const AttributionExample& ex) {
  if (ex.target.chunk_id.empty()) throw std::invalid_argument("example without a target chunk");
  if (ex.target.token_start >= ex.target.token_end) {
    throw std::invalid_argument("example " + ex.query_id + ": empty or inverted span");
  }
  if (ex.supervision == Supervision::kFull &&
      (!ex.gold_chunk_ids || ex.gold_chunk_ids->empty())) {
    throw std::invalid_argument("example " + ex.query_id + ": FULL supervision needs gold chunks");
  }
}

std::string unmask(const MaskedTarget& m) {
  const auto pos = m.observed_text.find(kMaskSentinel);
  if (pos == std::string::npos ||
      m.observed_text.find(kMaskSentinel, pos + 1) != std::string::npos) {
    throw std::invalid_argument("masked target must contain exactly one sentinel");
  }
  std::string out = m.observed_text;
  out.replace(pos, kMaskSentinel.size(), m.masked_text);
  return out;
}

std::vector<std::string> whitespace_subwords(std::string_view text) {
  return text::whitespace_tokens(text);
}

// --- ingestion -------------------------------------------------------------

std::vector<Document> ingest_documents(const std::filesystem::path& path) {
  std::vector<Document> docs;
  std::unordered_set<std::string> seen;
  detail::for_each_jsonl(path, [&](const json& obj, std::size_t) {
    Document d;
    d.doc_id = detail::required_string(obj, "doc_id");
    d.work_id = detail::required_string(obj, "work_id");
    d.section_id = detail::optional_string(obj, "section_id");
    d.title = detail::optional_string(obj, "title");
    d.author = detail::optional_string(obj, "author");
    if (auto it = obj.find("sentences"); it != obj.end()) {
      d.sentences = it->get<std::vector<std::string>>();
    }
    if (obj.contains("text")) {
      d.text = detail::required_string(obj, "text");
    } else if (!d.sentences.empty()) {
      d.text = text::join(d.sentences, "\n");
    } else {
      throw std::runtime_error("missing key 'text'");
    }
    if (d.doc_id.empty()) throw std::runtime_error("empty doc_id");
    if (text::whitespace_tokens(d.text).empty()) {
      throw std::runtime_error("document " + d.doc_id + " has no text");
    }
    if (!seen.insert(d.doc_id).second) throw std::runtime_error("duplicate doc_id " + d.doc_id);
    docs.push_back(std::move(d));
  });
  return docs;
}

void write_documents(const std::filesystem::path& path, std::span<const Document> docs) {
  auto out = detail::open_out(path);
  for (const auto& d : docs) {
    json obj{{"doc_id", d.doc_id}, {"work_id", d.work_id}, {"section_id", d.section_id},
             {"title", d.title},   {"author", d.author},   {"text", d.text}};
    if (!d.sentences.empty()) obj["sentences"] = d.sentences;
    out << obj.dump() << '\n';
  }
}

std::vector<Chunk> read_chunks(const std::filesystem::path& path) {
  std::vector<Chunk> chunks;
  std::unordered_set<std::string> seen;
  detail::for_each_jsonl(path, [&](const json& obj, std::size_t) {
    Chunk c;
    c.chunk_id = detail::required_string(obj, "chunk_id");
    c.doc_id = detail::required_string(obj, "doc_id");
    c.work_id = detail::optional_string(obj, "work_id");
    c.section_id = detail::optional_string(obj, "section_id");
    c.title = detail::optional_string(obj, "title");
    c.author = detail::optional_string(obj, "author");
    c.ordinal = detail::required_index(obj, "ordinal");
    c.token_start = detail::required_index(obj, "token_start");
    c.token_end = detail::required_index(obj, "token_end");
    c.text = detail::required_string(obj, "text");
    if (c.token_end < c.token_start) throw std::runtime_error("token_end < token_start");
    if (!seen.insert(c.chunk_id).second) {
      throw std::runtime_error("duplicate chunk_id " + c.chunk_id);
    }
    chunks.push_back(std::move(c));
  });
  return chunks;
}

void write_chunks(const std::filesystem::path& path, std::span<const Chunk> chunks) {
  auto out = detail::open_out(path);
  for (const auto& c : chunks) {
    json obj{{"chunk_id", c.chunk_id},       {"doc_id", c.doc_id},
             {"work_id", c.work_id},         {"section_id", c.section_id},
             {"title", c.title},             {"author", c.author},
             {"ordinal", c.ordinal},         {"token_start", c.token_start},
             {"token_end", c.token_end},     {"text", c.text}};
    out << obj.dump() << '\n';
  }
}

std::vector<AttributionExample> read_examples(const std::filesystem::path& path) {
  std::vector<AttributionExample> out;
  std::size_t index = 0;
  detail::for_each_jsonl(path, [&](const json& obj, std::size_t) {
    AttributionExample ex;
    ex.query_id = detail::optional_string(obj, "query_id");
    if (ex.query_id.empty()) ex.query_id = "q" + std::to_string(index);
    ex.target.chunk_id = detail::required_string(obj, "chunk_id");
    ex.target.token_start = detail::required_index(obj, "span_start");
    ex.target.token_end = detail::required_index(obj, "span_end");
    ex.supervision = parse_supervision(detail::required_string(obj, "supervision"));
    if (auto it = obj.find("gold_work_id"); it != obj.end() && !it->is_null()) {
      ex.gold_work_id = it->get<std::string>();
    }
    if (auto it = obj.find("gold_chunk_ids"); it != obj.end() && !it->is_null()) {
      auto ids = it->get<std::vector<std::string>>();
      std::sort(ids.begin(), ids.end());
      ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
      ex.gold_chunk_ids = std::move(ids);
    }
    validate(ex);
    out.push_back(std::move(ex));
    ++index;
  });
  return out;
}

void write_examples(const std::filesystem::path& path,
                    std::span<const AttributionExample> examples) {
  auto out = detail::open_out(path);
  for (const auto& ex : examples) {
    json obj{{"query_id", ex.query_id},
             {"chunk_id", ex.target.chunk_id},
             {"span_start", ex.target.token_start},
             {"span_end", ex.target.token_end},
             {"supervision", std::string(to_string(ex.supervision))}};
    if (ex.gold_work_id) obj["gold_work_id"] = *ex.gold_work_id;
    if (ex.gold_chunk_ids) obj["gold_chunk_ids"] = *ex.gold_chunk_ids;
    out << obj.dump() << '\n';
  }
}

// --- operations --------------------------------------------------------------

std::vector<Chunk> chunk_document(const Document& doc, std::size_t chunk_size) {
  if (chunk_size == 0) throw std::invalid_argument("chunk_size must be >= 1");
  const auto tokens = text::whitespace_tokens(doc.text);
  std::vector<Chunk> chunks;
  for (std::size_t start = 0, ordinal = 0; start < tokens.size(); start += chunk_size, ++ordinal) {
    const std::size_t end = std::min(tokens.size(), start + chunk_size);
    Chunk c;
    c.chunk_id = doc.doc_id + "#" + std::to_string(ordinal);
    c.doc_id = doc.doc_id;
    c.work_id = doc.work_id;
    c.section_id = doc.section_id;
    c.title = doc.title;
    c.author = doc.author;
    c.ordinal = ordinal;
    c.token_start = start;
    c.token_end = end;
    c.text = text::join(tokens, start, end);
    chunks.push_back(std::move(c));
  }
  return chunks;
}

std::string augment_with_biblio(std::string_view title, std::string_view author,
                                std::string_view text) {
  std::string out;
  for (std::string_view field : {title, author}) {
    if (field.empty()) continue;
    out.append(field);
    out.push_back(' ');
    out.append(kBiblioSeparator);
    out.push_back(' ');
  }
  out.append(text);
  return out;
}

std::string augment_with_biblio(const Chunk& chunk, const Document& doc) {
  return augment_with_biblio(doc.title, doc.author, chunk.text);
}

std::string augment_with_biblio(const Chunk& chunk) {
  return augment_with_biblio(chunk.title, chunk.author, chunk.text);
}

WindowRange context_window_range(std::span<const Sentence> page, std::size_t citing_index,
                                 std::size_t n) {
  if (citing_index >= page.size()) throw std::invalid_argument("citing_index out of range");
  if (n == 0 || n % 2 == 0) throw std::invalid_argument("context size must be odd and >= 1");
  const std::size_t half = n / 2;
  const auto& section = page[citing_index].section;
  WindowRange r{citing_index, citing_index + 1};
  while (r.first > 0 && citing_index - (r.first - 1) <= half && page[r.first - 1].section == section) {
    --r.first;
  }
  while (r.last < page.size() && r.last - citing_index <= half && page[r.last].section == section) {
    ++r.last;
  }
  return r;
}

std::string build_context_window(std::span<const Sentence> page, std::size_t citing_index,
                                 std::size_t n) {
  const auto r = context_window_range(page, citing_index, n);
  std::string out;
  for (std::size_t i = r.first; i < r.last; ++i) {
    if (i > r.first) out.push_back(' ');
    out.append(page[i].text);
  }
  return out;
}

MaskedTarget mask_span(const Chunk& chunk, const SpanOfInterest& span, std::size_t subword_budget,
                       const SubwordTokenizer& tokenizer) {
  const auto tokens = text::whitespace_tokens(chunk.text);
  if (span.token_start >= span.token_end || span.token_end > tokens.size()) {
    throw std::invalid_argument("span [" + std::to_string(span.token_start) + ", " +
                                std::to_string(span.token_end) + ") outside chunk " +
                                chunk.chunk_id + " of " + std::to_string(tokens.size()) +
                                " tokens");
  }
  if (chunk.text.find(kMaskSentinel) != std::string::npos) {
    throw std::invalid_argument("chunk " + chunk.chunk_id + " contains the mask sentinel");
  }
  // Longest prefix of the span whose subword count fits the budget.
  std::size_t masked_end = span.token_start;
  for (std::size_t e = span.token_start + 1; e <= span.token_end; ++e) {
    if (tokenizer(text::join(tokens, span.token_start, e)).size() > subword_budget) break;
    masked_end = e;
  }
  if (masked_end == span.token_start) {
    throw std::invalid_argument("first span token of " + chunk.chunk_id +
                                " exceeds the subword budget");
  }
  std::vector<std::string> observed(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(span.token_start));
  observed.emplace_back(kMaskSentinel);
  observed.insert(observed.end(), tokens.begin() + static_cast<std::ptrdiff_t>(masked_end), tokens.end());
  return MaskedTarget{text::join(observed), text::join(tokens, span.token_start, masked_end)};
}

}  // namespace srcattr
