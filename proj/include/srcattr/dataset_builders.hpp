#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "srcattr/corpus.hpp"

namespace srcattr {

// A [[Target]] or [[Target|anchor]] link. Offsets are UTF-8 byte offsets:
// markup_* into the raw sentence, anchor_* into the markup-stripped sentence.
struct WikiLink {
  std::string page_id;
  std::size_t sentence_index = 0;
  std::string target_title;
  std::string anchor_text;
  bool piped = false;
  std::size_t markup_begin = 0;
  std::size_t markup_end = 0;
  std::size_t anchor_begin = 0;
  std::size_t anchor_end = 0;
};

struct ParsedSentence {
  std::string plain;  // links replaced by their anchor text
  std::vector<WikiLink> links;
};

// Throws std::invalid_argument naming the byte offset on unbalanced or nested brackets.
ParsedSentence parse_links(std::string_view sentence, std::string_view page_id = {},
                           std::size_t sentence_index = 0);
std::vector<WikiLink> extract_links(std::string_view sentence);

// Inverse of parse_links: re-inserts link markup at the anchor spans.
std::string render_links(std::string_view plain, std::span<const WikiLink> links);

// Keeps links whose anchor equals the cited page's title under text::match_key.
std::vector<WikiLink> filter_headword_links(std::span<const WikiLink> links);

struct LinkDatasetOptions {
  std::size_t context_n = 3;
  double train_fraction = 0.9;
  std::size_t chunk_size = kDefaultChunkSize;
};

struct LinkDataset {
  std::vector<Chunk> sources;  // section-level source chunks
  std::vector<Chunk> targets;  // one context window per citing sentence
  std::vector<AttributionExample> train;
  std::vector<AttributionExample> test;
  std::size_t links_total = 0;
  std::size_t links_headword = 0;
  std::size_t dangling = 0;
  std::size_t malformed_sentences = 0;
};

// pages: one Document per section, grouped into pages by work_id; the page's
// headword is its title.
LinkDataset build_link_dataset(std::span<const Document> pages,
                               const LinkDatasetOptions& options = {});

// Deterministic split on the citing page id.
bool in_train_split(std::string_view page_id, double train_fraction);

}  // namespace srcattr
