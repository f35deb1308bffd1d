#include "srcattr/dataset_builders.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>
#include <unordered_map>

#include "srcattr/text.hpp"

namespace srcattr {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> sentences_of(const Document& d) {
  if (!d.sentences.empty()) return d.sentences;
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= d.text.size()) {
    auto nl = d.text.find('\n', pos);
    if (nl == std::string::npos) nl = d.text.size();
    auto s = trim(std::string_view(d.text).substr(pos, nl - pos));
    if (!s.empty()) out.emplace_back(s);
    pos = nl + 1;
  }
  return out;
}

// Token span of plain[begin, end) in the whitespace tokenization of plain.
std::pair<std::size_t, std::size_t> byte_span_to_tokens(std::string_view plain, std::size_t begin,
                                                        std::size_t end) {
  const auto before = text::whitespace_tokens(plain.substr(0, begin)).size();
  const bool glued = begin > 0 && begin < plain.size() &&
                     plain[begin - 1] != ' ' && plain[begin - 1] != '\t' && plain[begin - 1] != '\n';
  const std::size_t start = glued && before > 0 ? before - 1 : before;
  const auto upto = text::whitespace_tokens(plain.substr(0, end)).size();
  return {start, std::max(upto, start + 1)};
}

}  // namespace

ParsedSentence parse_links(std::string_view s, std::string_view page_id,
                           std::size_t sentence_index) {
  ParsedSentence out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (s.compare(i, 2, "]]") == 0) {
      throw std::invalid_argument("unbalanced ']]' at offset " + std::to_string(i));
    }
    if (s.compare(i, 2, "[[") != 0) {
      out.plain.push_back(s[i]);
      ++i;
      continue;
    }
    const auto close = s.find("]]", i + 2);
    if (close == std::string_view::npos) {
      throw std::invalid_argument("unbalanced '[[' at offset " + std::to_string(i));
    }
    const auto nested = s.find("[[", i + 2);
    if (nested != std::string_view::npos && nested < close) {
      throw std::invalid_argument("nested link at offset " + std::to_string(nested));
    }
    const auto inner = s.substr(i + 2, close - i - 2);
    WikiLink link;
    link.page_id = std::string(page_id);
    link.sentence_index = sentence_index;
    const auto bar = inner.find('|');
    link.piped = bar != std::string_view::npos;
    link.target_title = std::string(trim(link.piped ? inner.substr(0, bar) : inner));
    link.anchor_text = std::string(link.piped ? inner.substr(bar + 1) : inner);
    if (link.target_title.empty()) {
      throw std::invalid_argument("empty link target at offset " + std::to_string(i));
    }
    link.markup_begin = i;
    link.markup_end = close + 2;
    link.anchor_begin = out.plain.size();
    out.plain += link.anchor_text;
    link.anchor_end = out.plain.size();
    out.links.push_back(std::move(link));
    i = close + 2;
  }
  return out;
}

std::vector<WikiLink> extract_links(std::string_view sentence) {
  return parse_links(sentence).links;
}

std::string render_links(std::string_view plain, std::span<const WikiLink> links) {
  std::string out;
  std::size_t pos = 0;
  for (const auto& l : links) {
    if (l.anchor_begin < pos || l.anchor_end > plain.size()) {
      throw std::invalid_argument("link spans out of order or out of range");
    }
    out.append(plain.substr(pos, l.anchor_begin - pos));
    out += "[[";
    if (l.piped) {
      out += l.target_title;
      out += '|';
    }
    out.append(plain.substr(l.anchor_begin, l.anchor_end - l.anchor_begin));
    out += "]]";
    pos = l.anchor_end;
  }
  out.append(plain.substr(pos));
  return out;
}

std::vector<WikiLink> filter_headword_links(std::span<const WikiLink> links) {
  std::vector<WikiLink> out;
  for (const auto& l : links) {
    if (text::match_key(l.anchor_text) == text::match_key(l.target_title)) out.push_back(l);
  }
  return out;
}

bool in_train_split(std::string_view page_id, double train_fraction) {
  return static_cast<double>(text::fnv1a(page_id) % 10000) < train_fraction * 10000.0;
}

LinkDataset build_link_dataset(std::span<const Document> pages, const LinkDatasetOptions& options) {
  LinkDataset ds;
  // Sections grouped by page, pages in id order, sections in input order.
  std::map<std::string, std::vector<const Document*>> by_page;
  for (const auto& d : pages) by_page[d.work_id].push_back(&d);

  std::unordered_map<std::string, std::string> page_by_title;
  std::map<std::string, std::vector<std::string>> chunks_by_page;
  struct PageSentences {
    std::vector<Sentence> plain;
    std::vector<std::vector<WikiLink>> links;
    std::vector<const Document*> owner;
  };
  std::map<std::string, PageSentences> parsed;

  for (const auto& [page, sections] : by_page) {
    std::string title;
    for (const auto* s : sections) {
      if (!s->title.empty()) {
        title = s->title;
        break;
      }
    }
    if (!title.empty()) page_by_title.emplace(text::match_key(title), page);

    auto& ps = parsed[page];
    for (const auto* sec : sections) {
      std::vector<std::string> plain_sentences;
      for (const auto& raw : sentences_of(*sec)) {
        ParsedSentence p;
        try {
          p = parse_links(raw, page, ps.plain.size());
        } catch (const std::invalid_argument&) {
          ++ds.malformed_sentences;
          continue;
        }
        plain_sentences.push_back(p.plain);
        ps.plain.push_back({p.plain, sec->section_id});
        ps.links.push_back(std::move(p.links));
        ps.owner.push_back(sec);
      }
      Document plain_doc = *sec;
      plain_doc.title = title;
      plain_doc.author.clear();
      plain_doc.sentences.clear();
      plain_doc.text = text::join(plain_sentences);
      for (auto& c : chunk_document(plain_doc, options.chunk_size)) {
        chunks_by_page[page].push_back(c.chunk_id);
        ds.sources.push_back(std::move(c));
      }
    }
  }

  for (auto& [_, ids] : chunks_by_page) std::sort(ids.begin(), ids.end());

  for (const auto& [page, ps] : parsed) {
    for (std::size_t i = 0; i < ps.plain.size(); ++i) {
      ds.links_total += ps.links[i].size();
      const auto kept = filter_headword_links(ps.links[i]);
      ds.links_headword += kept.size();
      if (kept.empty()) continue;

      const auto range = context_window_range(ps.plain, i, options.context_n);
      std::size_t offset = 0;
      for (std::size_t j = range.first; j < i; ++j) {
        offset += text::whitespace_tokens(ps.plain[j].text).size();
      }
      Chunk target;
      target.chunk_id = "wiki:" + page + ":" + std::to_string(i);
      target.doc_id = ps.owner[i]->doc_id;
      target.work_id = page;
      target.section_id = ps.plain[i].section;
      const auto tokens = text::whitespace_tokens(build_context_window(ps.plain, i, options.context_n));
      target.token_end = tokens.size();
      target.text = text::join(tokens);

      bool emitted = false;
      for (std::size_t l = 0; l < kept.size(); ++l) {
        auto cited = page_by_title.find(text::match_key(kept[l].target_title));
        if (cited == page_by_title.end() || chunks_by_page[cited->second].empty()) {
          ++ds.dangling;
          continue;
        }
        const auto [ts, te] =
            byte_span_to_tokens(ps.plain[i].text, kept[l].anchor_begin, kept[l].anchor_end);
        AttributionExample ex;
        ex.query_id = target.chunk_id + ":" + std::to_string(l);
        ex.target = SpanOfInterest{target.chunk_id, offset + ts, offset + te};
        ex.supervision = Supervision::kFull;
        ex.gold_work_id = cited->second;
        ex.gold_chunk_ids = chunks_by_page[cited->second];
        validate(ex);
        (in_train_split(page, options.train_fraction) ? ds.train : ds.test).push_back(std::move(ex));
        emitted = true;
      }
      if (emitted) ds.targets.push_back(std::move(target));
    }
  }
  return ds;
}

}  // namespace srcattr
