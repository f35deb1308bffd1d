#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace srcattr {

inline constexpr std::string_view kMaskSentinel = "<MASK>";
inline constexpr std::string_view kBiblioSeparator = "¶";  // pilcrow
inline constexpr std::size_t kDefaultChunkSize = 300;
inline constexpr std::size_t kDefaultSubwordBudget = 100;

struct Document {
  std::string doc_id;
  std::string work_id;
  std::string section_id;
  std::string title;
  std::string author;
  std::string text;
  // Pre-split sentences, only carried by link-dataset pages. Empty otherwise.
  std::vector<std::string> sentences;
};

// A whitespace-token slice of one document. Carries the owning document's
// work and bibliographic fields so chunk files are self-contained.
struct Chunk {
  std::string chunk_id;
  std::string doc_id;
  std::string work_id;
  std::string section_id;
  std::string title;
  std::string author;
  std::size_t ordinal = 0;
  std::size_t token_start = 0;
  std::size_t token_end = 0;
  std::string text;

  std::size_t size() const { return token_end - token_start; }
};

struct SpanOfInterest {
  std::string chunk_id;
  std::size_t token_start = 0;
  std::size_t token_end = 0;
};

enum class Supervision { kFull, kSemi, kPseudo };

std::string_view to_string(Supervision s);
Supervision parse_supervision(std::string_view s);

struct AttributionExample {
  std::string query_id;
  SpanOfInterest target;
  Supervision supervision = Supervision::kFull;
  std::optional<std::string> gold_work_id;
  std::optional<std::vector<std::string>> gold_chunk_ids;
};

// Throws std::invalid_argument when the supervision invariants do not hold.
void validate(const AttributionExample& ex);

struct MaskedTarget {
  std::string observed_text;  // contains exactly one kMaskSentinel
  std::string masked_text;
};

std::string unmask(const MaskedTarget& m);

using SubwordTokenizer = std::function<std::vector<std::string>(std::string_view)>;

// Test-binding tokenizer: one subword per whitespace token.
std::vector<std::string> whitespace_subwords(std::string_view text);

struct Sentence {
  std::string text;
  std::string section;
};

// --- ingestion -------------------------------------------------------------

std::vector<Document> ingest_documents(const std::filesystem::path& path);
void write_documents(const std::filesystem::path& path, std::span<const Document> docs);

std::vector<Chunk> read_chunks(const std::filesystem::path& path);
void write_chunks(const std::filesystem::path& path, std::span<const Chunk> chunks);

// Examples without a query_id get "q<line index>".
std::vector<AttributionExample> read_examples(const std::filesystem::path& path);
void write_examples(const std::filesystem::path& path, std::span<const AttributionExample> examples);

// --- operations --------------------------------------------------------------

std::vector<Chunk> chunk_document(const Document& doc, std::size_t chunk_size = kDefaultChunkSize);

std::string augment_with_biblio(std::string_view title, std::string_view author,
                                std::string_view text);
std::string augment_with_biblio(const Chunk& chunk, const Document& doc);
// Uses the bibliographic fields the chunk carries.
std::string augment_with_biblio(const Chunk& chunk);

struct WindowRange {
  std::size_t first = 0;
  std::size_t last = 0;  // exclusive
};

WindowRange context_window_range(std::span<const Sentence> page, std::size_t citing_index,
                                 std::size_t n);
std::string build_context_window(std::span<const Sentence> page, std::size_t citing_index,
                                 std::size_t n);

MaskedTarget mask_span(const Chunk& chunk, const SpanOfInterest& span,
                       std::size_t subword_budget = kDefaultSubwordBudget,
                       const SubwordTokenizer& tokenizer = whitespace_subwords);

}  // namespace srcattr
