#include "srcattr/run_config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "srcattr/text.hpp"

namespace srcattr {

using nlohmann::json;

json to_json(const RunConfig& c) {
  return json{{"sources", c.sources},
              {"targets", c.targets},
              {"examples", c.examples},
              {"index_dir", c.index_dir},
              {"bm25_k1", c.bm25_k1},
              {"bm25_b", c.bm25_b},
              {"augment_biblio", c.augment_biblio},
              {"pool_k", c.pool_k},
              {"eval_k", c.eval_k},
              {"scorer", c.scorer},
              {"encoder", c.encoder},
              {"encoder_dim", c.encoder_dim},
              {"encoder_buckets", c.encoder_buckets},
              {"infiller", c.infiller},
              {"infiller_vocab", c.infiller_vocab},
              {"model_dir", c.model_dir},
              {"ggr_checkpoint", c.ggr_checkpoint},
              {"ggr_temperature", c.ggr_temperature},
              {"supervision", c.supervision},
              {"context_n", c.context_n},
              {"subword_budget", c.subword_budget},
              {"length_normalize", c.length_normalize},
              {"seed", c.seed},
              {"threads", c.threads},
              {"out_dir", c.out_dir}};
}

RunConfig config_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  RunConfig c;
  const json defaults = to_json(c);
  for (const auto& [key, _] : j.items()) {
    if (!defaults.contains(key)) throw std::invalid_argument("unknown config key '" + key + "'");
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("sources", c.sources);
  get("targets", c.targets);
  get("examples", c.examples);
  get("index_dir", c.index_dir);
  get("bm25_k1", c.bm25_k1);
  get("bm25_b", c.bm25_b);
  get("augment_biblio", c.augment_biblio);
  get("pool_k", c.pool_k);
  get("eval_k", c.eval_k);
  get("scorer", c.scorer);
  get("encoder", c.encoder);
  get("encoder_dim", c.encoder_dim);
  get("encoder_buckets", c.encoder_buckets);
  get("infiller", c.infiller);
  get("infiller_vocab", c.infiller_vocab);
  get("model_dir", c.model_dir);
  get("ggr_checkpoint", c.ggr_checkpoint);
  get("ggr_temperature", c.ggr_temperature);
  get("supervision", c.supervision);
  get("context_n", c.context_n);
  get("subword_budget", c.subword_budget);
  get("length_normalize", c.length_normalize);
  get("seed", c.seed);
  get("threads", c.threads);
  get("out_dir", c.out_dir);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  return config_from_json(json::parse(in));
}

void save_config(const RunConfig& c, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << to_json(c).dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write config " + path.string());
}

std::string config_hash(const RunConfig& c) {
  auto j = to_json(c);
  j.erase("out_dir");
  j.erase("threads");
  return text::hex64(text::fnv1a(j.dump()));
}

void validate(const RunConfig& c) {
  for (const auto& [name, path] : {std::pair<const char*, const std::string&>{"sources", c.sources},
                                   {"targets", c.targets},
                                   {"examples", c.examples}}) {
    if (path.empty()) throw std::invalid_argument(std::string("config: '") + name + "' is required");
    if (!std::filesystem::exists(path)) {
      throw std::invalid_argument(std::string("config: ") + name + " path does not exist: " + path);
    }
  }
  for (const auto& [name, path] : {std::pair<const char*, const std::string&>{"index_dir", c.index_dir},
                                   {"model_dir", c.model_dir},
                                   {"ggr_checkpoint", c.ggr_checkpoint}}) {
    if (!path.empty() && !std::filesystem::exists(path)) {
      throw std::invalid_argument(std::string("config: ") + name + " path does not exist: " + path);
    }
  }
  static const std::set<std::string> scorers{"bm25", "embed", "gen", "ggr"};
  if (!scorers.count(c.scorer)) throw std::invalid_argument("config: unknown scorer " + c.scorer);
  if (c.pool_k == 0) throw std::invalid_argument("config: pool_k must be >= 1");
  if (c.eval_k.empty()) throw std::invalid_argument("config: eval_k must list at least one cutoff");
  for (auto k : c.eval_k) {
    if (k == 0) throw std::invalid_argument("config: eval_k entries must be >= 1");
  }
  if (c.context_n == 0 || c.context_n % 2 == 0) {
    throw std::invalid_argument("config: context_n must be odd");
  }
}

}  // namespace srcattr
