#include "srcattr/reuse_align.hpp"

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <tuple>
#include <unordered_map>

#include "srcattr/parallel.hpp"
#include "srcattr/text.hpp"

namespace srcattr {

std::vector<std::string> shingle(std::string_view text, std::size_t n) {
  if (n == 0) throw std::invalid_argument("shingle size must be >= 1");
  const auto cps = text::code_points(text);
  std::vector<std::string> out;
  if (cps.size() < n) return out;
  out.reserve(cps.size() - n + 1);
  for (std::size_t i = 0; i + n <= cps.size(); ++i) out.push_back(text::encode_utf8(cps, i, i + n));
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<CandidatePair> candidate_pairs(std::span<const Chunk> a, std::span<const Chunk> b,
                                           std::size_t n, std::size_t min_shared,
                                           unsigned threads) {
  if (min_shared == 0) throw std::invalid_argument("min_shared must be >= 1");
  std::unordered_map<std::string, std::vector<std::uint32_t>> owners;
  for (std::uint32_t j = 0; j < b.size(); ++j) {
    for (auto& s : shingle(b[j].text, n)) owners[std::move(s)].push_back(j);
  }
  std::vector<std::vector<CandidatePair>> per_a(a.size());
  parallel_for(a.size(), threads, [&](std::size_t i) {
    std::unordered_map<std::uint32_t, std::size_t> counts;
    for (const auto& s : shingle(a[i].text, n)) {
      auto it = owners.find(s);
      if (it == owners.end()) continue;
      for (auto j : it->second) ++counts[j];
    }
    for (const auto& [j, c] : counts) {
      if (c >= min_shared) per_a[i].push_back({a[i].chunk_id, b[j].chunk_id, c});
    }
  });
  std::vector<CandidatePair> out;
  for (auto& v : per_a) out.insert(out.end(), v.begin(), v.end());
  std::sort(out.begin(), out.end(), [](const CandidatePair& x, const CandidatePair& y) {
    if (x.shared != y.shared) return x.shared > y.shared;
    return std::tie(x.a_id, x.b_id) < std::tie(y.a_id, y.b_id);
  });
  return out;
}

namespace {

enum class Move : std::uint8_t { kEmpty, kDiag, kUp, kLeft };

struct Cell {
  double score = 0.0;
  std::uint32_t start_a = 0;
  std::uint32_t start_b = 0;
  Move move = Move::kEmpty;
};

bool precedes(std::uint32_t a1, std::uint32_t b1, std::uint32_t a2, std::uint32_t b2) {
  return std::tie(a1, b1) < std::tie(a2, b2);
}

}  // namespace

std::optional<AlignmentRegion> local_align(std::span<const std::string> a,
                                           std::span<const std::string> b,
                                           const AlignScores& scores) {
  if (!(scores.match > 0.0) || scores.mismatch > 0.0 || !(scores.gap < 0.0)) {
    throw std::invalid_argument("alignment scores need match > 0 >= mismatch and gap < 0");
  }
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  const std::size_t w = m + 1;
  std::vector<Cell> grid((n + 1) * w);
  for (std::size_t i = 0; i <= n; ++i) {
    for (std::size_t j = 0; j <= m; ++j) {
      grid[i * w + j].start_a = static_cast<std::uint32_t>(i);
      grid[i * w + j].start_b = static_cast<std::uint32_t>(j);
    }
  }

  bool found = false;
  double best = 0.0;
  std::size_t best_i = 0;
  std::size_t best_j = 0;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      Cell& cell = grid[i * w + j];
      // Empty alignment: score 0, start at (i, j); any real path of equal
      // score starts earlier and therefore wins the tie.
      auto consider = [&](const Cell& from, double delta, Move mv) {
        const double v = from.score + delta;
        if (v > cell.score ||
            (v == cell.score && precedes(from.start_a, from.start_b, cell.start_a, cell.start_b))) {
          cell.score = v;
          cell.start_a = from.start_a;
          cell.start_b = from.start_b;
          cell.move = mv;
        }
      };
      const double s = a[i - 1] == b[j - 1] ? scores.match : scores.mismatch;
      consider(grid[(i - 1) * w + (j - 1)], s, Move::kDiag);
      consider(grid[(i - 1) * w + j], scores.gap, Move::kUp);
      consider(grid[i * w + (j - 1)], scores.gap, Move::kLeft);
      if (cell.move == Move::kEmpty || cell.score <= 0.0) continue;
      const Cell& cur = grid[best_i * w + best_j];
      if (!found || cell.score > best ||
          (cell.score == best &&
           (precedes(cell.start_a, cell.start_b, cur.start_a, cur.start_b) ||
            (cell.start_a == cur.start_a && cell.start_b == cur.start_b &&
             precedes(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j),
                      static_cast<std::uint32_t>(best_i), static_cast<std::uint32_t>(best_j)))))) {
        found = true;
        best = cell.score;
        best_i = i;
        best_j = j;
      }
    }
  }
  if (!found) return std::nullopt;

  AlignmentRegion r;
  r.score = best;
  r.target_span.end = best_i;
  r.source_span.end = best_j;
  std::size_t i = best_i;
  std::size_t j = best_j;
  while (true) {
    const Move mv = grid[i * w + j].move;
    if (mv == Move::kEmpty) break;
    ++r.columns;
    if (mv == Move::kDiag) {
      if (a[i - 1] == b[j - 1]) ++r.matches;
      --i;
      --j;
    } else if (mv == Move::kUp) {
      --i;
    } else {
      --j;
    }
  }
  r.target_span.start = i;
  r.source_span.start = j;
  r.identity = r.columns == 0 ? 0.0 : static_cast<double>(r.matches) / static_cast<double>(r.columns);
  return r;
}

std::vector<AttributionExample> pseudo_label(std::span<const Chunk> targets,
                                             std::span<const Chunk> sources,
                                             const PseudoLabelParams& params, unsigned threads) {
  const auto pairs = candidate_pairs(targets, sources, params.ngram, params.min_shared, threads);
  std::unordered_map<std::string, std::size_t> target_pos;
  std::unordered_map<std::string, std::size_t> source_pos;
  for (std::size_t i = 0; i < targets.size(); ++i) target_pos.emplace(targets[i].chunk_id, i);
  for (std::size_t i = 0; i < sources.size(); ++i) source_pos.emplace(sources[i].chunk_id, i);

  std::vector<std::optional<AttributionExample>> slots(pairs.size());
  parallel_for(pairs.size(), threads, [&](std::size_t p) {
    const Chunk& t = targets[target_pos.at(pairs[p].a_id)];
    const Chunk& s = sources[source_pos.at(pairs[p].b_id)];
    const auto ta = text::whitespace_tokens(t.text);
    const auto sb = text::whitespace_tokens(s.text);
    auto region = local_align(ta, sb, params.scores);
    if (!region || region->identity < params.identity_threshold ||
        region->target_span.size() < params.min_len) {
      return;
    }
    AttributionExample ex;
    ex.query_id = "pseudo:" + t.chunk_id + "|" + s.chunk_id;
    ex.target = SpanOfInterest{t.chunk_id, region->target_span.start, region->target_span.end};
    ex.supervision = Supervision::kPseudo;
    ex.gold_chunk_ids = std::vector<std::string>{s.chunk_id};
    if (!s.work_id.empty()) ex.gold_work_id = s.work_id;
    slots[p] = std::move(ex);
  });
  std::vector<AttributionExample> out;
  for (auto& s : slots) {
    if (s) out.push_back(std::move(*s));
  }
  return out;
}

}  // namespace srcattr
