#include "srcattr/lexical_index.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "srcattr/text.hpp"

namespace srcattr {
namespace {

constexpr std::string_view kFormat = "srcattr-bm25";
constexpr int kVersion = 1;
constexpr std::string_view kStatsMagic = "SRCATTR-BM25-STATS v1";
constexpr std::string_view kPostingsMagic = "SRCATTR-BM25-POSTINGS v1";
constexpr std::string_view kIdfForm = "ln(1+(N-df+0.5)/(df+0.5))";

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::map<std::string, std::size_t, std::less<>> term_counts(std::span<const std::string> terms) {
  std::map<std::string, std::size_t, std::less<>> counts;
  for (const auto& t : terms) ++counts[t];
  return counts;
}

}  // namespace

std::vector<std::string> RankedCandidates::ids() const {
  std::vector<std::string> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.chunk_id);
  return out;
}

void sort_descending(std::vector<ScoredChunk>& entries) {
  std::sort(entries.begin(), entries.end(), [](const ScoredChunk& a, const ScoredChunk& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.chunk_id < b.chunk_id;
  });
}

void sort_ascending(std::vector<ScoredChunk>& entries) {
  std::sort(entries.begin(), entries.end(), [](const ScoredChunk& a, const ScoredChunk& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.chunk_id < b.chunk_id;
  });
}

IndexedCorpus build_index(std::vector<std::pair<std::string, std::string>> chunks,
                          Bm25Params params) {
  if (!(params.k1 >= 0.0) || !(params.b >= 0.0 && params.b <= 1.0)) {
    throw std::invalid_argument("BM25 parameters out of range (k1 >= 0, 0 <= b <= 1)");
  }
  std::sort(chunks.begin(), chunks.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    const auto& id = chunks[i].first;
    if (i > 0 && chunks[i - 1].first == id) {
      throw std::invalid_argument("duplicate chunk_id " + id);
    }
    if (id.empty() || id.find_first_of("\t\n\r") != std::string::npos) {
      throw std::invalid_argument("chunk_id must be non-empty without tabs or newlines: " + id);
    }
  }
  if (chunks.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw std::length_error("too many chunks for a 32-bit index");
  }

  IndexedCorpus idx;
  idx.params_ = params;
  idx.chunk_ids_.reserve(chunks.size());
  idx.doc_lengths_.reserve(chunks.size());
  double total = 0.0;
  for (std::uint32_t doc = 0; doc < chunks.size(); ++doc) {
    const auto terms = text::analyze(chunks[doc].second);
    idx.chunk_ids_.push_back(std::move(chunks[doc].first));
    idx.doc_lengths_.push_back(static_cast<std::uint32_t>(terms.size()));
    total += static_cast<double>(terms.size());
    for (const auto& [term, tf] : term_counts(terms)) {
      idx.postings_[term].push_back(Posting{doc, static_cast<std::uint32_t>(tf)});
    }
  }
  idx.avg_doc_length_ = chunks.empty() ? 0.0 : total / static_cast<double>(chunks.size());
  return idx;
}

std::optional<std::uint32_t> IndexedCorpus::doc_number(std::string_view chunk_id) const {
  auto it = std::lower_bound(chunk_ids_.begin(), chunk_ids_.end(), chunk_id,
                             [](const std::string& a, std::string_view b) { return a < b; });
  if (it == chunk_ids_.end() || *it != chunk_id) return std::nullopt;
  return static_cast<std::uint32_t>(it - chunk_ids_.begin());
}

bool IndexedCorpus::contains(std::string_view chunk_id) const {
  return doc_number(chunk_id).has_value();
}

std::size_t IndexedCorpus::doc_length(std::string_view chunk_id) const {
  auto doc = doc_number(chunk_id);
  if (!doc) throw std::out_of_range("chunk not indexed: " + std::string(chunk_id));
  return doc_lengths_[*doc];
}

std::size_t IndexedCorpus::document_frequency(std::string_view term) const {
  auto it = postings_.find(term);
  return it == postings_.end() ? 0 : it->second.size();
}

double IndexedCorpus::idf(std::string_view term) const {
  const double n = static_cast<double>(size());
  const double df = static_cast<double>(document_frequency(term));
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

double IndexedCorpus::term_weight(double idf, std::uint32_t tf, std::uint32_t len) const {
  const double f = static_cast<double>(tf);
  const double norm = 1.0 - params_.b + params_.b * static_cast<double>(len) / avg_doc_length_;
  return idf * f * (params_.k1 + 1.0) / (f + params_.k1 * norm);
}

double IndexedCorpus::score(std::span<const std::string> query_terms,
                            std::string_view chunk_id) const {
  const auto doc = doc_number(chunk_id);
  if (!doc) throw std::out_of_range("chunk not indexed: " + std::string(chunk_id));
  double total = 0.0;
  for (const auto& [term, qtf] : term_counts(query_terms)) {
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    const auto& list = it->second;
    auto p = std::lower_bound(list.begin(), list.end(), *doc,
                              [](const Posting& a, std::uint32_t d) { return a.doc < d; });
    if (p == list.end() || p->doc != *doc) continue;
    total += static_cast<double>(qtf) * term_weight(idf(term), p->tf, doc_lengths_[*doc]);
  }
  return total;
}

RankedCandidates IndexedCorpus::retrieve(std::string_view query_text, std::size_t k,
                                         std::optional<std::string_view> exclude_chunk_id,
                                         std::string query_id) const {
  if (k == 0) throw std::invalid_argument("k must be >= 1");
  RankedCandidates out;
  out.query_id = std::move(query_id);
  out.scorer = "bm25";
  if (chunk_ids_.empty()) return out;

  const auto terms = text::analyze(query_text);
  std::vector<double> acc(chunk_ids_.size(), 0.0);
  std::vector<char> touched(chunk_ids_.size(), 0);
  std::vector<std::uint32_t> hits;
  for (const auto& [term, qtf] : term_counts(terms)) {
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    const double w_idf = idf(term);
    for (const auto& p : it->second) {
      acc[p.doc] += static_cast<double>(qtf) * term_weight(w_idf, p.tf, doc_lengths_[p.doc]);
      if (!touched[p.doc]) {
        touched[p.doc] = 1;
        hits.push_back(p.doc);
      }
    }
  }
  const auto excluded = exclude_chunk_id ? doc_number(*exclude_chunk_id) : std::nullopt;
  const std::uint32_t skip = excluded.value_or(std::numeric_limits<std::uint32_t>::max());
  std::erase_if(hits, [&](std::uint32_t d) { return d == skip || !(acc[d] > 0.0); });

  // Doc numbers follow chunk_id order, so the tie rule is ascending doc number.
  auto better = [&](std::uint32_t a, std::uint32_t b) {
    if (acc[a] != acc[b]) return acc[a] > acc[b];
    return a < b;
  };
  const std::size_t keep = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(),
                    better);
  out.entries.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) out.entries.push_back({chunk_ids_[hits[i]], acc[hits[i]]});
  return out;
}

void IndexedCorpus::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  {
    nlohmann::json meta{{"format", kFormat},  {"version", kVersion}, {"k1", params_.k1},
                        {"b", params_.b},     {"idf", kIdfForm},     {"n_docs", size()},
                        {"analysis", "nfc+whitespace+latin-casefold"}};
    std::ofstream out(dir / "params.json", std::ios::binary | std::ios::trunc);
    out << meta.dump(2) << '\n';
  }
  {
    std::ofstream out(dir / "stats.tsv", std::ios::binary | std::ios::trunc);
    out << kStatsMagic << '\n' << size() << '\t' << fmt_double(avg_doc_length_) << '\n';
    for (std::size_t i = 0; i < size(); ++i) out << chunk_ids_[i] << '\t' << doc_lengths_[i] << '\n';
  }
  {
    std::ofstream out(dir / "postings.tsv", std::ios::binary | std::ios::trunc);
    out << kPostingsMagic << '\n';
    for (const auto& [term, list] : postings_) {
      out << term << '\t';
      for (std::size_t i = 0; i < list.size(); ++i) {
        if (i) out << ' ';
        out << list[i].doc << ':' << list[i].tf;
      }
      out << '\n';
    }
  }
  if (!std::filesystem::exists(dir / "postings.tsv")) {
    throw std::runtime_error("failed to write index to " + dir.string());
  }
}

IndexedCorpus IndexedCorpus::load(const std::filesystem::path& dir) {
  auto fail = [&](const std::string& what) {
    return std::runtime_error("index " + dir.string() + ": " + what);
  };
  IndexedCorpus idx;
  {
    std::ifstream in(dir / "params.json");
    if (!in) throw fail("missing params.json");
    auto meta = nlohmann::json::parse(in);
    if (meta.value("format", "") != kFormat || meta.value("version", 0) != kVersion) {
      throw fail("unsupported index format");
    }
    idx.params_.k1 = meta.at("k1").get<double>();
    idx.params_.b = meta.at("b").get<double>();
  }
  {
    std::ifstream in(dir / "stats.tsv");
    std::string line;
    if (!in || !std::getline(in, line) || line != kStatsMagic) throw fail("bad stats.tsv magic");
    std::size_t n = 0;
    double avg = 0.0;
    if (!std::getline(in, line) || std::sscanf(line.c_str(), "%zu\t%lf", &n, &avg) != 2) {
      throw fail("bad stats header");
    }
    double total = 0.0;
    while (std::getline(in, line)) {
      const auto tab = line.rfind('\t');
      if (tab == std::string::npos) throw fail("bad stats line");
      idx.chunk_ids_.push_back(line.substr(0, tab));
      idx.doc_lengths_.push_back(static_cast<std::uint32_t>(std::stoul(line.substr(tab + 1))));
      total += idx.doc_lengths_.back();
    }
    if (idx.chunk_ids_.size() != n) throw fail("document count mismatch");
    if (!std::is_sorted(idx.chunk_ids_.begin(), idx.chunk_ids_.end())) {
      throw fail("chunk table not sorted");
    }
    idx.avg_doc_length_ = n == 0 ? 0.0 : total / static_cast<double>(n);
    if (idx.avg_doc_length_ != avg) throw fail("average length mismatch");
  }
  {
    std::ifstream in(dir / "postings.tsv");
    std::string line;
    if (!in || !std::getline(in, line) || line != kPostingsMagic) {
      throw fail("bad postings.tsv magic");
    }
    while (std::getline(in, line)) {
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw fail("bad postings line");
      auto& list = idx.postings_[line.substr(0, tab)];
      std::istringstream ps(line.substr(tab + 1));
      std::string item;
      while (ps >> item) {
        Posting p;
        if (std::sscanf(item.c_str(), "%u:%u", &p.doc, &p.tf) != 2 || p.doc >= idx.size()) {
          throw fail("bad posting " + item);
        }
        list.push_back(p);
      }
    }
  }
  return idx;
}

double bm25_score(const IndexedCorpus& index, std::span<const std::string> query_terms,
                  std::string_view chunk_id) {
  return index.score(query_terms, chunk_id);
}

RankedCandidates retrieve(const IndexedCorpus& index, std::string_view query_text, std::size_t k,
                          std::optional<std::string_view> exclude_chunk_id) {
  return index.retrieve(query_text, k, exclude_chunk_id);
}

}  // namespace srcattr
