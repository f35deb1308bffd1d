// srcattr: ingest -> chunk -> index -> retrieve -> rerank -> evaluate, plus the
// dataset builders and the two trainers.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "srcattr/corpus.hpp"
#include "srcattr/dataset_builders.hpp"
#include "srcattr/evaluation.hpp"
#include "srcattr/gen_rerank.hpp"
#include "srcattr/ggr.hpp"
#include "srcattr/lexical_index.hpp"
#include "srcattr/reuse_align.hpp"
#include "srcattr/run_config.hpp"
#include "srcattr/text.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace srcattr;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::string config;
};

// Flags that override RunConfig keys.
struct Overrides {
  std::optional<std::string> sources, targets, examples, index_dir, scorer, encoder, infiller,
      model_dir, ggr_checkpoint, supervision;
  std::optional<double> bm25_k1, bm25_b, ggr_temperature;
  std::optional<bool> augment_biblio, length_normalize;
  std::optional<std::size_t> pool_k, encoder_dim, encoder_buckets, infiller_vocab, context_n,
      subword_budget;
  std::vector<std::size_t> eval_k;
};

void add_bm25_flags(CLI::App* sub, Overrides& o) {
  sub->add_option("--bm25-k1", o.bm25_k1, "BM25 k1");
  sub->add_option("--bm25-b", o.bm25_b, "BM25 b");
  sub->add_option("--augment-biblio", o.augment_biblio, "prepend title/author to source text");
}

void add_run_flags(CLI::App* sub, Overrides& o) {
  sub->add_option("--sources", o.sources, "source chunks JSONL");
  sub->add_option("--targets", o.targets, "target chunks JSONL");
  sub->add_option("--examples", o.examples, "attribution examples JSONL");
  sub->add_option("--index", o.index_dir, "prebuilt index directory");
  add_bm25_flags(sub, o);
  sub->add_option("--pool-k", o.pool_k, "candidate pool size");
  sub->add_option("--k", o.eval_k, "Recall@k cutoffs");
  sub->add_option("--scorer", o.scorer, "bm25 | embed | gen | ggr");
  sub->add_option("--encoder", o.encoder, "hash-projection | random");
  sub->add_option("--encoder-dim", o.encoder_dim);
  sub->add_option("--encoder-buckets", o.encoder_buckets);
  sub->add_option("--infiller", o.infiller, "uniform | copy-oracle | copy-mixture");
  sub->add_option("--infiller-vocab", o.infiller_vocab);
  sub->add_option("--model", o.model_dir, "trained infiller directory");
  sub->add_option("--ggr-checkpoint", o.ggr_checkpoint);
  sub->add_option("--temperature", o.ggr_temperature, "retriever softmax temperature");
  sub->add_option("--supervision", o.supervision, "FULL | SEMI | PSEUDO");
  sub->add_option("--context-n", o.context_n);
  sub->add_option("--subword-budget", o.subword_budget);
  sub->add_option("--length-normalize", o.length_normalize);
}

template <typename T>
void set_if(T& dst, const std::optional<T>& v) {
  if (v) dst = *v;
}

RunConfig resolve(RunConfig c, const Globals& g, const Overrides& o) {
  set_if(c.sources, o.sources);
  set_if(c.targets, o.targets);
  set_if(c.examples, o.examples);
  set_if(c.index_dir, o.index_dir);
  set_if(c.bm25_k1, o.bm25_k1);
  set_if(c.bm25_b, o.bm25_b);
  set_if(c.augment_biblio, o.augment_biblio);
  set_if(c.pool_k, o.pool_k);
  if (!o.eval_k.empty()) c.eval_k = o.eval_k;
  set_if(c.scorer, o.scorer);
  set_if(c.encoder, o.encoder);
  set_if(c.encoder_dim, o.encoder_dim);
  set_if(c.encoder_buckets, o.encoder_buckets);
  set_if(c.infiller, o.infiller);
  set_if(c.infiller_vocab, o.infiller_vocab);
  set_if(c.model_dir, o.model_dir);
  set_if(c.ggr_checkpoint, o.ggr_checkpoint);
  set_if(c.ggr_temperature, o.ggr_temperature);
  set_if(c.supervision, o.supervision);
  set_if(c.context_n, o.context_n);
  set_if(c.subword_budget, o.subword_budget);
  set_if(c.length_normalize, o.length_normalize);
  set_if(c.seed, g.seed);
  set_if(c.threads, g.threads);
  return c;
}

RunConfig base_config(const Globals& g) {
  return g.config.empty() ? RunConfig{} : load_config(g.config);
}

TextLookup index_side_texts(const std::vector<Chunk>& sources, bool augment) {
  TextLookup texts;
  for (const auto& c : sources) texts.emplace(c.chunk_id, augment ? augment_with_biblio(c) : c.text);
  return texts;
}

IndexedCorpus index_for(const std::vector<Chunk>& sources, const TextLookup& texts,
                        const RunConfig& c) {
  if (!c.index_dir.empty()) return IndexedCorpus::load(c.index_dir);
  std::vector<std::pair<std::string, std::string>> docs;
  for (const auto& s : sources) docs.emplace_back(s.chunk_id, texts.at(s.chunk_id));
  return build_index(std::move(docs), {c.bm25_k1, c.bm25_b});
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::vector<std::string> run_log(const RunConfig& c, const std::string& what) {
  return {what, "config_hash=" + config_hash(c), "seed=" + std::to_string(c.seed)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Source attribution: retrieve, rerank and evaluate candidate sources."};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "seed for every random choice");
  app.add_option("--threads", g.threads, "worker threads");
  app.add_option("--config", g.config, "RunConfig JSON; flags override its keys")
      ->check(CLI::ExistingFile);

  Overrides o;
  std::string in, out, run;
  std::vector<std::string> runs;
  std::size_t chunk_size = kDefaultChunkSize;
  bool csv = false;

  auto* ingest = app.add_subcommand("ingest", "validate and NFC-normalize a documents JSONL");
  ingest->add_option("--in", in, "documents JSONL")->required();
  ingest->add_option("--out", out, "normalized documents JSONL")->required();

  auto* chunk = app.add_subcommand("chunk", "split documents into token chunks");
  chunk->add_option("--in", in, "documents JSONL")->required();
  chunk->add_option("--out", out, "chunks JSONL")->required();
  chunk->add_option("--chunk-size", chunk_size, "tokens per chunk");

  auto* index = app.add_subcommand("index", "build and persist a BM25 index");
  index->add_option("--in", in, "source chunks JSONL")->required();
  index->add_option("--out", out, "index directory")->required();
  add_bm25_flags(index, o);

  LinkDatasetOptions wiki;
  auto* make_wiki = app.add_subcommand("make-wiki-dataset", "build a link-citation dataset");
  make_wiki->add_option("--in", in, "pages JSONL (one document per section)")->required();
  make_wiki->add_option("--out", out, "output directory")->required();
  make_wiki->add_option("--context-n", wiki.context_n, "sentences per context window (odd)");
  make_wiki->add_option("--train-fraction", wiki.train_fraction);
  make_wiki->add_option("--chunk-size", wiki.chunk_size);

  PseudoLabelParams pl;
  auto* pseudo = app.add_subcommand("pseudo-label", "align targets to sources and emit examples");
  pseudo->add_option("--targets", o.targets)->required();
  pseudo->add_option("--sources", o.sources)->required();
  pseudo->add_option("--out", out, "examples JSONL")->required();
  pseudo->add_option("--ngram", pl.ngram);
  pseudo->add_option("--min-shared", pl.min_shared);
  pseudo->add_option("--identity", pl.identity_threshold);
  pseudo->add_option("--min-len", pl.min_len);

  TrainHyperparams thp;
  auto* train_gen = app.add_subcommand("train-gen", "fine-tune a trainable infiller");
  add_run_flags(train_gen, o);
  train_gen->add_option("--out", out, "model directory")->required();
  train_gen->add_option("--epochs", thp.epochs);
  train_gen->add_option("--batch-size", thp.batch_size);
  train_gen->add_option("--lr", thp.learning_rate);

  GgrHyperparams ghp;
  auto* train_ggr = app.add_subcommand("train-ggr", "tune the query encoder through a frozen infiller");
  add_run_flags(train_ggr, o);
  train_ggr->add_option("--out", out, "checkpoint directory")->required();
  train_ggr->add_option("--epochs", ghp.epochs);
  train_ggr->add_option("--batch-size", ghp.batch_size);
  train_ggr->add_option("--lr", ghp.learning_rate);

  auto* retrieve_cmd = app.add_subcommand("retrieve", "BM25 candidate pools into a run directory");
  add_run_flags(retrieve_cmd, o);
  retrieve_cmd->add_option("--out", out, "run directory")->required();

  auto* rerank = app.add_subcommand("rerank", "rerank a run's candidate pools");
  add_run_flags(rerank, o);
  rerank->add_option("--run", run, "run directory holding the baseline pools")->required();
  rerank->add_option("--out", out, "new run directory")->required();

  auto* evaluate = app.add_subcommand("evaluate", "compute metrics.json for a run directory");
  evaluate->add_option("--run", run, "run directory")->required();
  evaluate->add_option("--k", o.eval_k, "Recall@k cutoffs");

  auto* report = app.add_subcommand("report", "table across run directories");
  report->add_option("--runs", runs, "run directories")->required();
  report->add_flag("--csv", csv, "emit CSV instead of aligned text");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command == "ingest") {
      const auto docs = ingest_documents(in);
      write_documents(out, docs);
      std::cout << docs.size() << " documents\n";
    } else if (command == "chunk") {
      std::vector<Chunk> chunks;
      for (const auto& d : ingest_documents(in)) {
        auto part = chunk_document(d, chunk_size);
        chunks.insert(chunks.end(), part.begin(), part.end());
      }
      write_chunks(out, chunks);
      std::cout << chunks.size() << " chunks\n";
    } else if (command == "index") {
      auto c = resolve(base_config(g), g, o);
      const auto sources = read_chunks(in);
      const auto texts = index_side_texts(sources, c.augment_biblio);
      c.index_dir.clear();
      const auto idx = index_for(sources, texts, c);
      idx.save(out);
      std::cout << idx.size() << " chunks indexed, avgdl " << idx.avg_doc_length() << '\n';
    } else if (command == "make-wiki-dataset") {
      const auto ds = build_link_dataset(ingest_documents(in), wiki);
      const fs::path dir = out;
      write_chunks(dir / "sources.jsonl", ds.sources);
      write_chunks(dir / "targets.jsonl", ds.targets);
      write_examples(dir / "train.jsonl", ds.train);
      write_examples(dir / "test.jsonl", ds.test);
      const json stats{{"links_total", ds.links_total},   {"links_headword", ds.links_headword},
                       {"dangling", ds.dangling},         {"malformed_sentences", ds.malformed_sentences},
                       {"train", ds.train.size()},        {"test", ds.test.size()},
                       {"sources", ds.sources.size()},    {"targets", ds.targets.size()}};
      write_json(dir / "stats.json", stats);
      std::cout << stats.dump() << '\n';
    } else if (command == "pseudo-label") {
      const auto c = resolve(base_config(g), g, o);
      const auto examples =
          pseudo_label(read_chunks(c.targets), read_chunks(c.sources), pl, c.threads);
      write_examples(out, examples);
      std::cout << examples.size() << " pseudo-labelled examples\n";
    } else if (command == "train-gen") {
      auto c = resolve(base_config(g), g, o);
      if (!o.infiller && g.config.empty()) c.infiller = "copy-mixture";
      const auto mode = parse_supervision(c.supervision);
      const auto targets = read_chunks(c.targets);
      const auto sources = read_chunks(c.sources);
      const auto examples =
          mode == Supervision::kPseudo ? std::vector<AttributionExample>{} : read_examples(c.examples);
      const auto texts = index_side_texts(sources, c.augment_biblio);
      std::optional<IndexedCorpus> idx;
      if (mode == Supervision::kSemi) idx = index_for(sources, texts, c);
      const auto base = make_infiller({c.infiller, c.infiller_vocab, c.model_dir});
      TrainingSetInputs tin;
      tin.examples = examples;
      tin.targets = targets;
      tin.sources = sources;
      tin.source_texts = &texts;
      tin.index = idx ? &*idx : nullptr;
      tin.subword_budget = c.subword_budget;
      tin.tokenizer = [&](std::string_view t) { return base->tokenize(t); };
      const auto set = build_training_set(tin, mode);
      thp.seed = c.seed;
      const auto result = train(*base, set.examples, thp);
      const fs::path dir = out;
      result.model->save(dir);
      write_training_examples(dir / "training_data.jsonl", set.examples);
      std::ofstream log(dir / "log.txt", std::ios::binary | std::ios::trunc);
      for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
        log << "epoch " << e + 1 << " loss " << result.epoch_losses[e] << '\n';
      }
      std::cout << set.examples.size() << " training examples (" << set.skipped << " skipped), "
                << result.model->identity() << '\n';
    } else if (command == "train-ggr") {
      const auto c = resolve(base_config(g), g, o);
      const auto inputs = load_run_inputs(c);
      const auto pools = baseline_rankings(inputs, c);
      const auto generator = make_infiller({c.infiller, c.infiller_vocab, c.model_dir});
      const SubwordTokenizer tok = [&](std::string_view t) { return generator->tokenize(t); };
      std::vector<GgrExample> batch;
      std::uint64_t h = text::fnv1a("ggr");
      for (std::size_t i = 0; i < inputs.examples.size(); ++i) {
        const auto& ex = inputs.examples[i];
        const auto& target = inputs.target(ex.target.chunk_id);
        if (pools[i].entries.empty()) continue;
        batch.push_back({ex.query_id, mask_span(target, ex.target, c.subword_budget, tok),
                         target.text, pools[i].ids()});
        h = text::fnv1a(ex.query_id, h);
        for (const auto& id : batch.back().candidate_ids) h = text::fnv1a(id, h);
      }
      auto state = make_retriever_state(
          HashProjectionEncoder(c.encoder_dim, c.encoder_buckets, c.seed), inputs.source_texts,
          c.ggr_temperature, c.threads);
      ghp.seed = c.seed;
      const fs::path dir = out;
      fs::create_directories(dir);
      std::ofstream log(dir / "train_log.jsonl", std::ios::binary | std::ios::trunc);
      state = ggr_train(std::move(state), *generator, batch, inputs.source_texts, ghp,
                        [&](const GgrLogEntry& e) {
                          log << json{{"step", e.step}, {"epoch", e.epoch}, {"loss", e.loss}}.dump()
                              << '\n';
                        });
      save_checkpoint(state, dir, c.seed, text::hex64(h));
      std::cout << batch.size() << " queries, checkpoint " << dir.string() << '\n';
    } else if (command == "retrieve") {
      auto c = resolve(base_config(g), g, o);
      c.scorer = "bm25";
      c.out_dir = out;
      const auto inputs = load_run_inputs(c);
      const auto pools = baseline_rankings(inputs, c);
      RunLock lock(out);
      persist_rankings(out, c, pools, run_log(c, "retrieve"));
      std::cout << pools.size() << " queries retrieved into " << out << '\n';
    } else if (command == "rerank") {
      auto c = resolve(load_config(fs::path(run) / "config.json"), g, o);
      c.out_dir = out;
      const auto inputs = load_run_inputs(c);
      const auto baseline = read_rankings(fs::path(run) / "rankings.jsonl");
      const auto ranked = rerank_rankings(inputs, c, baseline);
      RunLock lock(out);
      auto log = run_log(c, "rerank " + c.scorer + " from " + run);
      if (c.scorer == "ggr") log.push_back("ggr reranks by dot product, not cosine");
      persist_rankings(out, c, ranked, log);
      std::cout << ranked.size() << " queries reranked with " << c.scorer << '\n';
    } else if (command == "evaluate") {
      const fs::path dir = run;
      auto c = load_config(dir / "config.json");
      if (!o.eval_k.empty()) c.eval_k = o.eval_k;
      RunLock lock(dir);
      const auto metrics = evaluate_run_dir(dir, c);
      save_config(c, dir / "config.json");
      persist_metrics(dir, metrics);
      std::cout << metrics.to_json().dump() << '\n';
    } else if (command == "report") {
      std::vector<fs::path> dirs(runs.begin(), runs.end());
      std::cout << report_table(dirs, csv);
    }
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: stage " << command << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}
