#include "srcattr/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "jsonl.hpp"
#include "srcattr/gen_rerank.hpp"
#include "srcattr/ggr.hpp"
#include "srcattr/parallel.hpp"

namespace srcattr {

using detail::json;

RelevanceJudgment judgment_for(const AttributionExample& ex) {
  RelevanceJudgment j;
  j.query_id = ex.query_id;
  if (ex.gold_work_id) j.work_id = ex.gold_work_id;
  if (ex.gold_chunk_ids) j.chunk_ids = *ex.gold_chunk_ids;
  std::sort(j.chunk_ids.begin(), j.chunk_ids.end());
  if (!j.work_id && j.chunk_ids.empty()) {
    throw std::invalid_argument("example " + ex.query_id + " has no gold for evaluation");
  }
  return j;
}

Judgments judgments_for(std::span<const AttributionExample> examples) {
  Judgments out;
  for (const auto& ex : examples) {
    if (!out.emplace(ex.query_id, judgment_for(ex)).second) {
      throw std::invalid_argument("duplicate query_id " + ex.query_id);
    }
  }
  return out;
}

bool is_relevant(const RelevanceJudgment& judgment, const std::string& chunk_id,
                 const ChunkWorkMap& works) {
  if (judgment.work_id) {
    auto it = works.find(chunk_id);
    if (it == works.end()) throw std::out_of_range("chunk " + chunk_id + " has no work mapping");
    return it->second == *judgment.work_id;
  }
  return std::binary_search(judgment.chunk_ids.begin(), judgment.chunk_ids.end(), chunk_id);
}

namespace {

const RelevanceJudgment& judgment_of(const RankedCandidates& r, const Judgments& judgments) {
  auto it = judgments.find(r.query_id);
  if (it == judgments.end()) throw std::out_of_range("no judgment for query " + r.query_id);
  return it->second;
}

}  // namespace

std::optional<std::size_t> first_relevant_rank(const RankedCandidates& ranked,
                                               const Judgments& judgments,
                                               const ChunkWorkMap& works) {
  const auto& j = judgment_of(ranked, judgments);
  for (std::size_t i = 0; i < ranked.entries.size(); ++i) {
    if (is_relevant(j, ranked.entries[i].chunk_id, works)) return i + 1;
  }
  return std::nullopt;
}

double recall_at_k(std::span<const RankedCandidates> ranked, const Judgments& judgments,
                   std::size_t k, const ChunkWorkMap& works) {
  if (k == 0) throw std::invalid_argument("k must be >= 1");
  if (ranked.empty()) throw std::invalid_argument("no queries to evaluate");
  std::size_t hits = 0;
  for (const auto& r : ranked) {
    const auto rank = first_relevant_rank(r, judgments, works);
    if (rank && *rank <= k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ranked.size());
}

double mrr(std::span<const RankedCandidates> ranked, const Judgments& judgments,
           const ChunkWorkMap& works) {
  if (ranked.empty()) throw std::invalid_argument("no queries to evaluate");
  double total = 0.0;
  for (const auto& r : ranked) {
    if (const auto rank = first_relevant_rank(r, judgments, works)) {
      total += 1.0 / static_cast<double>(*rank);
    }
  }
  return total / static_cast<double>(ranked.size());
}

json MetricsReport::to_json() const {
  json j{{"scorer", scorer}, {"mrr", mrr}, {"n_queries", n_queries}, {"config_hash", config_hash}};
  for (const auto& [k, v] : recall_at_k) j["recall_at_" + std::to_string(k)] = v;
  return j;
}

MetricsReport evaluate_rankings(std::span<const RankedCandidates> ranked,
                                const Judgments& judgments, std::span<const std::size_t> ks,
                                const ChunkWorkMap& works, std::string config_hash) {
  MetricsReport r;
  r.scorer = ranked.empty() ? std::string{} : ranked.front().scorer;
  r.n_queries = ranked.size();
  for (auto k : ks) r.recall_at_k[k] = recall_at_k(ranked, judgments, k, works);
  r.mrr = mrr(ranked, judgments, works);
  r.config_hash = std::move(config_hash);
  return r;
}

void write_rankings(const std::filesystem::path& path, std::span<const RankedCandidates> ranked) {
  auto out = detail::open_out(path);
  for (const auto& r : ranked) {
    std::vector<double> scores;
    for (const auto& e : r.entries) scores.push_back(e.score);
    out << json{{"query_id", r.query_id}, {"scorer", r.scorer}, {"chunk_ids", r.ids()},
                {"scores", scores}}
               .dump()
        << '\n';
  }
}

std::vector<RankedCandidates> read_rankings(const std::filesystem::path& path) {
  std::vector<RankedCandidates> out;
  detail::for_each_jsonl(path, [&](const json& obj, std::size_t) {
    RankedCandidates r;
    r.query_id = detail::required_string(obj, "query_id");
    r.scorer = detail::optional_string(obj, "scorer");
    const auto ids = obj.at("chunk_ids").get<std::vector<std::string>>();
    const auto scores = obj.at("scores").get<std::vector<double>>();
    if (ids.size() != scores.size()) throw std::runtime_error("chunk_ids/scores length mismatch");
    for (std::size_t i = 0; i < ids.size(); ++i) r.entries.push_back({ids[i], scores[i]});
    out.push_back(std::move(r));
  });
  return out;
}

// --- runner --------------------------------------------------------------------

StageError::StageError(std::string stage, const std::string& message)
    : std::runtime_error("stage " + stage + ": " + message), stage_(std::move(stage)) {}

namespace {

template <typename F>
auto in_stage(const char* stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}



}  // namespace

RunLock::RunLock(const std::filesystem::path& dir) : path_(dir / "run.lock") {
  std::filesystem::create_directories(dir);
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (!f) throw std::runtime_error("run directory is locked or unwritable: " + dir.string());
  std::fclose(f);
}

RunLock::~RunLock() {
  std::error_code ec;
  std::filesystem::remove(path_, ec);
}

const Chunk& RunInputs::target(const std::string& chunk_id) const {
  auto it = target_pos.find(chunk_id);
  if (it == target_pos.end()) throw std::out_of_range("unknown target chunk " + chunk_id);
  return targets[it->second];
}

RunInputs load_run_inputs(const RunConfig& config) {
  RunInputs in;
  in_stage("config", [&] { validate(config); });
  in_stage("load", [&] {
    in.sources = read_chunks(config.sources);
    in.targets = read_chunks(config.targets);
    in.examples = read_examples(config.examples);
    for (std::size_t i = 0; i < in.targets.size(); ++i) in.target_pos.emplace(in.targets[i].chunk_id, i);
    for (const auto& c : in.sources) {
      in.works.emplace(c.chunk_id, c.work_id);
      in.source_texts.emplace(c.chunk_id, config.augment_biblio ? augment_with_biblio(c) : c.text);
    }
    for (const auto& ex : in.examples) in.target(ex.target.chunk_id);
  });
  in_stage("index", [&] {
    if (!config.index_dir.empty()) {
      in.index = IndexedCorpus::load(config.index_dir);
    } else {
      std::vector<std::pair<std::string, std::string>> docs;
      docs.reserve(in.sources.size());
      for (const auto& c : in.sources) docs.emplace_back(c.chunk_id, in.source_texts.at(c.chunk_id));
      in.index = build_index(std::move(docs), Bm25Params{config.bm25_k1, config.bm25_b});
    }
  });
  return in;
}

std::vector<RankedCandidates> baseline_rankings(const RunInputs& in, const RunConfig& config) {
  return in_stage("retrieve", [&] {
    std::vector<RankedCandidates> out(in.examples.size());
    parallel_for(in.examples.size(), config.threads, [&](std::size_t i) {
      const auto& ex = in.examples[i];
      const auto& target = in.target(ex.target.chunk_id);
      out[i] = in.index.retrieve(target.text, config.pool_k, target.chunk_id, ex.query_id);
    });
    return out;
  });
}

std::vector<RankedCandidates> rerank_rankings(const RunInputs& in, const RunConfig& config,
                                              std::span<const RankedCandidates> baseline) {
  return in_stage("rerank", [&] {
    std::unordered_map<std::string, const AttributionExample*> by_query;
    for (const auto& ex : in.examples) by_query.emplace(ex.query_id, &ex);
    auto example_of = [&](const RankedCandidates& r) -> const AttributionExample& {
      auto it = by_query.find(r.query_id);
      if (it == by_query.end()) throw std::out_of_range("no example for query " + r.query_id);
      return *it->second;
    };
    std::vector<RankedCandidates> out(baseline.size());
    if (config.scorer == "bm25") {
      out.assign(baseline.begin(), baseline.end());
    } else if (config.scorer == "embed") {
      const auto encoder = make_encoder(
          {config.encoder, config.encoder_dim, config.encoder_buckets, config.seed});
      parallel_for(baseline.size(), config.threads, [&](std::size_t i) {
        const auto& target = in.target(example_of(baseline[i]).target.chunk_id);
        out[i] = rerank_by_embedding(target.text, baseline[i], *encoder, in.source_texts);
      });
    } else if (config.scorer == "gen") {
      const auto infiller =
          make_infiller({config.infiller, config.infiller_vocab, config.model_dir});
      const ScoreOptions opts{config.length_normalize};
      const SubwordTokenizer tok = [&](std::string_view t) { return infiller->tokenize(t); };
      parallel_for(baseline.size(), config.threads, [&](std::size_t i) {
        const auto& ex = example_of(baseline[i]);
        const auto masked = mask_span(in.target(ex.target.chunk_id), ex.target,
                                      config.subword_budget, tok);
        out[i] = rerank_by_generation(*infiller, masked, baseline[i], in.source_texts, opts);
      });
    } else if (config.scorer == "ggr") {
      const RetrieverState state =
          config.ggr_checkpoint.empty()
              ? make_retriever_state(HashProjectionEncoder(config.encoder_dim,
                                                           config.encoder_buckets, config.seed),
                                     in.source_texts, config.ggr_temperature, config.threads)
              : load_checkpoint(config.ggr_checkpoint);
      parallel_for(baseline.size(), config.threads, [&](std::size_t i) {
        const auto& target = in.target(example_of(baseline[i]).target.chunk_id);
        out[i] = rerank_with_tuned_encoder(state, target.text, baseline[i]);
      });
    } else {
      throw std::invalid_argument("unknown scorer " + config.scorer);
    }
    return out;
  });
}

MetricsReport evaluate_run(const RunInputs& in, const RunConfig& config,
                           std::span<const RankedCandidates> ranked) {
  return in_stage("evaluate", [&] {
    auto report = evaluate_rankings(ranked, judgments_for(in.examples), config.eval_k, in.works,
                                    config_hash(config));
    report.scorer = config.scorer;
    return report;
  });
}

void persist_rankings(const std::filesystem::path& dir, const RunConfig& config,
                      std::span<const RankedCandidates> ranked,
                      std::span<const std::string> log_lines) {
  in_stage("persist", [&] {
    save_config(config, dir / "config.json");
    write_rankings(dir / "rankings.jsonl", ranked);
    std::ofstream log(dir / "log.txt", std::ios::binary | std::ios::trunc);
    for (const auto& line : log_lines) log << line << '\n';
    if (!log) throw std::runtime_error("cannot write log.txt");
  });
}

void persist_metrics(const std::filesystem::path& dir, const MetricsReport& report) {
  in_stage("persist", [&] {
    std::ofstream out(dir / "metrics.json", std::ios::binary | std::ios::trunc);
    out << report.to_json().dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write metrics.json");
  });
}

void persist_run(const std::filesystem::path& dir, const RunConfig& config,
                 const MetricsReport& report, std::span<const RankedCandidates> ranked,
                 std::span<const std::string> log_lines) {
  const auto lock = in_stage("persist", [&] { return std::make_unique<RunLock>(dir); });
  persist_rankings(dir, config, ranked, log_lines);
  persist_metrics(dir, report);
}

MetricsReport evaluate_run_dir(const std::filesystem::path& dir, const RunConfig& config) {
  const auto ranked = in_stage("load", [&] { return read_rankings(dir / "rankings.jsonl"); });
  const auto examples = in_stage("load", [&] { return read_examples(config.examples); });
  ChunkWorkMap works;
  in_stage("load", [&] {
    for (const auto& c : read_chunks(config.sources)) works.emplace(c.chunk_id, c.work_id);
  });
  return in_stage("evaluate", [&] {
    auto report =
        evaluate_rankings(ranked, judgments_for(examples), config.eval_k, works, config_hash(config));
    report.scorer = config.scorer;
    return report;
  });
}

MetricsReport run_experiment(const RunConfig& config) {
  std::vector<std::string> log;
  const auto inputs = load_run_inputs(config);
  log.push_back("loaded " + std::to_string(inputs.sources.size()) + " source chunks, " +
                std::to_string(inputs.examples.size()) + " examples");
  const auto base = baseline_rankings(inputs, config);
  log.push_back("retrieved pool_k=" + std::to_string(config.pool_k));
  const auto ranked = rerank_rankings(inputs, config, base);
  log.push_back("reranked with " + config.scorer);
  if (config.scorer == "ggr") log.push_back("ggr reranks by dot product, not cosine");
  const auto report = evaluate_run(inputs, config, ranked);
  log.push_back("mrr=" + std::to_string(report.mrr));
  if (!config.out_dir.empty()) persist_run(config.out_dir, config, report, ranked, log);
  return report;
}

std::string report_table(std::span<const std::filesystem::path> run_dirs, bool csv) {
  struct Row {
    std::string run, scorer, supervision;
    std::map<std::string, double> metrics;
    std::size_t n = 0;
  };
  std::vector<Row> rows;
  std::vector<std::string> cols;
  for (const auto& dir : run_dirs) {
    std::ifstream min(dir / "metrics.json");
    if (!min) throw std::runtime_error("no metrics.json in " + dir.string());
    const auto m = json::parse(min);
    const auto cfg = load_config(dir / "config.json");
    Row r{dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string(),
          m.value("scorer", ""), cfg.supervision, {}, m.value("n_queries", std::size_t{0})};
    for (const auto& [k, v] : m.items()) {
      if (k.rfind("recall_at_", 0) == 0) {
        r.metrics[k] = v.get<double>();
        if (std::find(cols.begin(), cols.end(), k) == cols.end()) cols.push_back(k);
      }
    }
    r.metrics["mrr"] = m.value("mrr", 0.0);
    rows.push_back(std::move(r));
  }
  std::sort(cols.begin(), cols.end(), [](const std::string& a, const std::string& b) {
    return std::stoul(a.substr(10)) < std::stoul(b.substr(10));
  });
  cols.push_back("mrr");

  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"run", "scorer", "supervision"};
  for (const auto& c : cols) header.push_back(c == "mrr" ? "MRR" : "R@" + c.substr(10));
  header.push_back("n");
  cells.push_back(header);
  for (const auto& r : rows) {
    std::vector<std::string> line{r.run, r.scorer, r.supervision};
    for (const auto& c : cols) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.3f", r.metrics.count(c) ? r.metrics.at(c) : 0.0);
      line.emplace_back(buf);
    }
    line.push_back(std::to_string(r.n));
    cells.push_back(std::move(line));
  }

  std::ostringstream out;
  if (csv) {
    for (const auto& line : cells) {
      for (std::size_t i = 0; i < line.size(); ++i) out << (i ? "," : "") << line[i];
      out << '\n';
    }
    return out.str();
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  }
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      out << (i ? " | " : "") << line[i] << std::string(width[i] - line[i].size(), ' ');
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace srcattr
