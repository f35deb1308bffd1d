#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace srcattr {

// One archivable experiment description. Serializes to canonical JSON (keys
// sorted); unknown keys are rejected on load.
struct RunConfig {
  std::string sources;    // source chunks JSONL
  std::string targets;    // target chunks JSONL
  std::string examples;   // examples JSONL
  std::string index_dir;  // optional prebuilt index; built in memory when empty
  double bm25_k1 = 0.9;
  double bm25_b = 0.4;
  bool augment_biblio = true;
  std::size_t pool_k = 100;
  std::vector<std::size_t> eval_k{10};
  std::string scorer = "bm25";  // bm25 | embed | gen | ggr
  std::string encoder = "hash-projection";
  std::size_t encoder_dim = 64;
  std::size_t encoder_buckets = 2048;
  std::string infiller = "copy-oracle";
  std::size_t infiller_vocab = 10;
  std::string model_dir;       // trained infiller state
  std::string ggr_checkpoint;  // tuned retriever state
  double ggr_temperature = 1.0;
  std::string supervision = "FULL";
  std::size_t context_n = 3;
  std::size_t subword_budget = 100;
  bool length_normalize = false;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::string out_dir;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& c, const std::filesystem::path& path);

// Hash of the canonical JSON without out_dir and threads, which do not affect results.
std::string config_hash(const RunConfig& c);

// Throws when a referenced input path does not exist or a field is out of range.
void validate(const RunConfig& c);

}  // namespace srcattr
