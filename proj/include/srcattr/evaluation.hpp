#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "srcattr/corpus.hpp"
#include "srcattr/embed.hpp"
#include "srcattr/lexical_index.hpp"
#include "srcattr/run_config.hpp"

namespace srcattr {

// Chunk-level when work_id is absent; otherwise any chunk of that work is
// relevant (page-level rule).
struct RelevanceJudgment {
  std::string query_id;
  std::vector<std::string> chunk_ids;  // sorted
  std::optional<std::string> work_id;
};

using ChunkWorkMap = std::unordered_map<std::string, std::string>;
using Judgments = std::unordered_map<std::string, RelevanceJudgment>;

RelevanceJudgment judgment_for(const AttributionExample& ex);
Judgments judgments_for(std::span<const AttributionExample> examples);

bool is_relevant(const RelevanceJudgment& judgment, const std::string& chunk_id,
                 const ChunkWorkMap& works);

// 1-based rank of the first relevant entry, nullopt when none is in the list.
std::optional<std::size_t> first_relevant_rank(const RankedCandidates& ranked,
                                               const Judgments& judgments,
                                               const ChunkWorkMap& works);

double recall_at_k(std::span<const RankedCandidates> ranked, const Judgments& judgments,
                   std::size_t k, const ChunkWorkMap& works);
double mrr(std::span<const RankedCandidates> ranked, const Judgments& judgments,
           const ChunkWorkMap& works);

struct MetricsReport {
  std::string scorer;
  std::map<std::size_t, double> recall_at_k;
  double mrr = 0.0;
  std::size_t n_queries = 0;
  std::string config_hash;

  nlohmann::json to_json() const;
};

MetricsReport evaluate_rankings(std::span<const RankedCandidates> ranked,
                                const Judgments& judgments, std::span<const std::size_t> ks,
                                const ChunkWorkMap& works, std::string config_hash = {});

void write_rankings(const std::filesystem::path& path, std::span<const RankedCandidates> ranked);
std::vector<RankedCandidates> read_rankings(const std::filesystem::path& path);

// --- experiment runner -------------------------------------------------------

// Raised for any pipeline failure; what() starts with "stage <name>: ".
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& message);
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct RunInputs {
  std::vector<Chunk> sources;
  std::vector<Chunk> targets;
  std::vector<AttributionExample> examples;
  IndexedCorpus index;
  TextLookup source_texts;  // index-side text, shown to every reranker
  ChunkWorkMap works;
  std::unordered_map<std::string, std::size_t> target_pos;

  const Chunk& target(const std::string& chunk_id) const;
};

RunInputs load_run_inputs(const RunConfig& config);

std::vector<RankedCandidates> baseline_rankings(const RunInputs& in, const RunConfig& config);
// Reranks each list with config.scorer (pass-through for "bm25").
std::vector<RankedCandidates> rerank_rankings(const RunInputs& in, const RunConfig& config,
                                              std::span<const RankedCandidates> baseline);
MetricsReport evaluate_run(const RunInputs& in, const RunConfig& config,
                           std::span<const RankedCandidates> ranked);

// Exclusive ownership of a run directory via a run.lock file; a second
// holder fails instead of waiting.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

// config.json, rankings.jsonl and log.txt. The caller holds the lock.
void persist_rankings(const std::filesystem::path& dir, const RunConfig& config,
                      std::span<const RankedCandidates> ranked,
                      std::span<const std::string> log_lines);
void persist_metrics(const std::filesystem::path& dir, const MetricsReport& report);

// Both of the above under one lock.
void persist_run(const std::filesystem::path& dir, const RunConfig& config,
                 const MetricsReport& report, std::span<const RankedCandidates> ranked,
                 std::span<const std::string> log_lines);

// Recomputes metrics from a run directory's persisted config and rankings.
MetricsReport evaluate_run_dir(const std::filesystem::path& dir, const RunConfig& config);

// retrieve -> rerank -> metrics -> persist (when config.out_dir is set).
MetricsReport run_experiment(const RunConfig& config);

// Table across run directories: text (aligned columns) or csv.
std::string report_table(std::span<const std::filesystem::path> run_dirs, bool csv);

}  // namespace srcattr
