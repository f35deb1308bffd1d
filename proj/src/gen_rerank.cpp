#include "srcattr/gen_rerank.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "jsonl.hpp"
#include "srcattr/parallel.hpp"
#include "srcattr/text.hpp"

namespace srcattr {

using detail::json;

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::kGoldSource:
      return "GOLD_SOURCE";
    case Provenance::kTop1Retrieved:
      return "TOP1_RETRIEVED";
    case Provenance::kAligned:
      return "ALIGNED";
  }
  return "GOLD_SOURCE";
}

Provenance parse_provenance(std::string_view s) {
  if (s == "GOLD_SOURCE") return Provenance::kGoldSource;
  if (s == "TOP1_RETRIEVED") return Provenance::kTop1Retrieved;
  if (s == "ALIGNED") return Provenance::kAligned;
  throw std::invalid_argument("unknown provenance: " + std::string(s));
}

namespace {

json to_json(const TrainingExample& ex) {
  return json{{"example_id", ex.example_id},
              {"observed_text", ex.masked.observed_text},
              {"span_text", ex.masked.masked_text},
              {"source_text", ex.source_text},
              {"source_chunk_id", ex.source_chunk_id},
              {"provenance", std::string(to_string(ex.provenance))}};
}

void check_masked(const MaskedTarget& m) {
  const auto pos = m.observed_text.find(kMaskSentinel);
  if (pos == std::string::npos ||
      m.observed_text.find(kMaskSentinel, pos + 1) != std::string::npos) {
    throw std::invalid_argument("masked target must contain exactly one sentinel");
  }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

std::vector<TrainingExample> read_training_examples(const std::filesystem::path& path) {
  std::vector<TrainingExample> out;
  detail::for_each_jsonl(path, [&](const json& obj, std::size_t line) {
    TrainingExample ex;
    ex.example_id = detail::optional_string(obj, "example_id");
    if (ex.example_id.empty()) ex.example_id = "t" + std::to_string(line);
    ex.masked.observed_text = detail::required_string(obj, "observed_text");
    ex.masked.masked_text = detail::required_string(obj, "span_text");
    ex.source_text = detail::required_string(obj, "source_text");
    ex.source_chunk_id = detail::optional_string(obj, "source_chunk_id");
    ex.provenance = parse_provenance(detail::required_string(obj, "provenance"));
    check_masked(ex.masked);
    if (ex.source_text.empty()) throw std::runtime_error("empty source_text");
    out.push_back(std::move(ex));
  });
  return out;
}

void write_training_examples(const std::filesystem::path& path,
                             std::span<const TrainingExample> examples) {
  auto out = detail::open_out(path);
  for (const auto& ex : examples) out << to_json(ex).dump() << '\n';
}

std::string training_data_hash(std::span<const TrainingExample> examples) {
  std::uint64_t h = text::fnv1a("");
  for (const auto& ex : examples) h = text::fnv1a(to_json(ex).dump() + "\n", h);
  return text::hex64(h);
}

// --- SpanInfiller defaults ------------------------------------------------------

TrainResult SpanInfiller::train(std::span<const TrainingExample>, const TrainHyperparams&) const {
  throw std::logic_error("infiller " + identity() + " is not trainable");
}

void SpanInfiller::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "metadata.json", std::ios::binary | std::ios::trunc);
  out << json{{"binding", identity()}}.dump(2) << '\n';
}

std::string conditioning_input(std::string_view source, std::string_view observed) {
  std::string out(source);
  out.push_back(' ');
  out.append(kSourceSeparator);
  out.push_back(' ');
  out.append(observed);
  return out;
}

std::optional<std::string> anchored_copy(std::string_view observed, std::string_view source) {
  const auto obs = text::whitespace_tokens(observed);
  const auto src = text::whitespace_tokens(source);
  auto m = std::find(obs.begin(), obs.end(), kMaskSentinel);
  if (m == obs.end()) return std::nullopt;
  const std::size_t mi = static_cast<std::size_t>(m - obs.begin());
  const std::string* left = mi > 0 ? &obs[mi - 1] : nullptr;
  const std::string* right = mi + 1 < obs.size() ? &obs[mi + 1] : nullptr;

  auto copy_from = [&](std::size_t start) -> std::optional<std::string> {
    if (start >= src.size()) return std::nullopt;
    std::size_t end = src.size();
    if (right) {
      auto it = std::find(src.begin() + static_cast<std::ptrdiff_t>(start + 1), src.end(), *right);
      if (it == src.end()) return std::nullopt;
      end = static_cast<std::size_t>(it - src.begin());
    }
    return text::join(src, start, end);
  };
  if (!left) return copy_from(0);
  for (std::size_t p = 0; p < src.size(); ++p) {
    if (src[p] != *left) continue;
    if (auto got = copy_from(p + 1)) return got;
  }
  return std::nullopt;
}

// --- stubs -------------------------------------------------------------------

UniformInfiller::UniformInfiller(std::size_t vocab_size) : vocab_size_(vocab_size) {
  if (vocab_size < 1) throw std::invalid_argument("vocabulary size must be >= 1");
}

double UniformInfiller::span_nll(std::string_view, std::string_view, std::string_view span) const {
  return static_cast<double>(tokenize(span).size()) * std::log(static_cast<double>(vocab_size_));
}

std::string UniformInfiller::identity() const {
  return "uniform(V=" + std::to_string(vocab_size_) + ")";
}

std::unique_ptr<SpanInfiller> UniformInfiller::clone() const {
  return std::make_unique<UniformInfiller>(*this);
}

CopyOracleInfiller::CopyOracleInfiller(double p_hit, double p_miss)
    : p_hit_(p_hit), p_miss_(p_miss) {
  if (!(p_hit > 0.0 && p_hit <= 1.0 && p_miss > 0.0 && p_miss <= 1.0)) {
    throw std::invalid_argument("copy-oracle probabilities must be in (0, 1]");
  }
}

double CopyOracleInfiller::span_nll(std::string_view, std::string_view source,
                                    std::string_view span) const {
  const auto src = tokenize(source);
  const std::unordered_set<std::string> present(src.begin(), src.end());
  double nll = 0.0;
  for (const auto& t : tokenize(span)) nll -= std::log(present.count(t) ? p_hit_ : p_miss_);
  return nll;
}

std::string CopyOracleInfiller::predict_span(std::string_view observed,
                                             std::string_view source) const {
  return anchored_copy(observed, source).value_or(std::string{});
}

std::string CopyOracleInfiller::identity() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "copy-oracle(%g,%g)", p_hit_, p_miss_);
  return buf;
}

std::unique_ptr<SpanInfiller> CopyOracleInfiller::clone() const {
  return std::make_unique<CopyOracleInfiller>(*this);
}

// --- copy-mixture ------------------------------------------------------------

namespace {

struct CopyContext {
  std::unordered_map<std::string, double> prob;
};

CopyContext copy_context(const SpanInfiller& m, std::string_view observed,
                         std::string_view source) {
  CopyContext ctx;
  std::size_t n = 0;
  for (auto& t : m.tokenize(conditioning_input(source, observed))) {
    if (t == kSourceSeparator || t == kMaskSentinel) continue;
    ctx.prob[t] += 1.0;
    ++n;
  }
  for (auto& [_, v] : ctx.prob) v /= static_cast<double>(n);
  return ctx;
}

std::vector<double> softmax(const std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
  for (auto& v : p) v /= z;
  return p;
}

}  // namespace

std::size_t CopyMixtureInfiller::token_id(const std::string& tok) const {
  auto it = ids_.find(tok);
  return it == ids_.end() ? 0 : it->second;
}

double CopyMixtureInfiller::span_nll(std::string_view observed, std::string_view source,
                                     std::string_view span) const {
  const auto ctx = copy_context(*this, observed, source);
  const auto q = softmax(logits_);
  const double s = sigmoid(gate_);
  double nll = 0.0;
  for (const auto& t : tokenize(span)) {
    auto it = ctx.prob.find(t);
    const double c = it == ctx.prob.end() ? 0.0 : it->second;
    nll -= std::log(s * c + (1.0 - s) * q[token_id(t)]);
  }
  return nll;
}

std::string CopyMixtureInfiller::predict_span(std::string_view observed,
                                              std::string_view source) const {
  if (sigmoid(gate_) >= 0.5) {
    if (auto got = anchored_copy(observed, source)) return *got;
  }
  if (vocab_.size() <= 1) return {};
  const auto best = std::max_element(logits_.begin() + 1, logits_.end());
  return vocab_[static_cast<std::size_t>(best - logits_.begin())];
}

std::string CopyMixtureInfiller::identity() const {
  return data_hash_.empty() ? "copy-mixture" : "copy-mixture@" + data_hash_.substr(0, 8);
}

std::unique_ptr<SpanInfiller> CopyMixtureInfiller::clone() const {
  return std::make_unique<CopyMixtureInfiller>(*this);
}

TrainResult CopyMixtureInfiller::train(std::span<const TrainingExample> examples,
                                       const TrainHyperparams& hp) const {
  if (examples.empty()) throw std::invalid_argument("training set is empty");
  if (hp.batch_size == 0 || hp.epochs == 0) {
    throw std::invalid_argument("epochs and batch_size must be >= 1");
  }
  auto model = std::make_unique<CopyMixtureInfiller>(*this);

  std::set<std::string> new_tokens;
  for (const auto& ex : examples) {
    check_masked(ex.masked);
    for (auto& t : tokenize(ex.masked.masked_text)) {
      if (!model->ids_.count(t)) new_tokens.insert(std::move(t));
    }
  }
  for (const auto& t : new_tokens) {
    model->ids_.emplace(t, model->vocab_.size());
    model->vocab_.push_back(t);
    model->logits_.push_back(0.0);
  }

  struct Prepared {
    std::vector<std::size_t> ids;
    std::vector<double> copy;
  };
  std::vector<Prepared> data(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto ctx = copy_context(*model, examples[i].masked.observed_text, examples[i].source_text);
    for (const auto& t : tokenize(examples[i].masked.masked_text)) {
      data[i].ids.push_back(model->token_id(t));
      auto it = ctx.prob.find(t);
      data[i].copy.push_back(it == ctx.prob.end() ? 0.0 : it->second);
    }
  }

  TrainResult result;
  std::mt19937_64 rng(hp.seed);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad_u(model->logits_.size());
  for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    double epoch_loss = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += hp.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + hp.batch_size);
      const auto q = softmax(model->logits_);
      const double s = sigmoid(model->gate_);
      double grad_g = 0.0;
      double total_coef = 0.0;
      std::fill(grad_u.begin(), grad_u.end(), 0.0);
      for (std::size_t k = b0; k < b1; ++k) {
        const auto& ex = data[order[k]];
        for (std::size_t t = 0; t < ex.ids.size(); ++t) {
          const double qi = q[ex.ids[t]];
          const double p = s * ex.copy[t] + (1.0 - s) * qi;
          epoch_loss -= std::log(p);
          grad_g -= (ex.copy[t] - qi) * s * (1.0 - s) / p;
          // d(-log p)/du = -(1-s) qi / p * (e_i - q)
          const double coef = (1.0 - s) * qi / p;
          grad_u[ex.ids[t]] -= coef;
          total_coef += coef;
        }
      }
      const double scale = hp.learning_rate / static_cast<double>(b1 - b0);
      model->gate_ -= scale * grad_g;
      for (std::size_t j = 0; j < grad_u.size(); ++j) {
        model->logits_[j] -= scale * (grad_u[j] + total_coef * q[j]);
      }
    }
    epoch_loss /= static_cast<double>(examples.size());
    if (!std::isfinite(epoch_loss) || !std::isfinite(model->gate_)) {
      throw std::runtime_error("training diverged at epoch " + std::to_string(epoch));
    }
    result.epoch_losses.push_back(epoch_loss);
  }
  model->data_hash_ = training_data_hash(examples);
  model->hp_ = hp;
  model->epoch_losses_ = result.epoch_losses;
  result.model = std::move(model);
  return result;
}

void CopyMixtureInfiller::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  {
    json meta{{"binding", "copy-mixture"},
              {"identity", identity()},
              {"seed", hp_.seed},
              {"data_hash", data_hash_},
              {"epochs", hp_.epochs},
              {"batch_size", hp_.batch_size},
              {"learning_rate", hp_.learning_rate},
              {"epoch_losses", epoch_losses_}};
    std::ofstream out(dir / "metadata.json", std::ios::binary | std::ios::trunc);
    out << meta.dump(2) << '\n';
  }
  std::ofstream out(dir / "params.json", std::ios::binary | std::ios::trunc);
  out << json{{"gate", gate_}, {"vocab", vocab_}, {"logits", logits_}}.dump() << '\n';
  if (!out) throw std::runtime_error("cannot write model to " + dir.string());
}

CopyMixtureInfiller CopyMixtureInfiller::load(const std::filesystem::path& dir) {
  std::ifstream meta_in(dir / "metadata.json");
  std::ifstream params_in(dir / "params.json");
  if (!meta_in || !params_in) throw std::runtime_error("no copy-mixture model in " + dir.string());
  const auto meta = json::parse(meta_in);
  const auto params = json::parse(params_in);
  if (meta.value("binding", "") != "copy-mixture") {
    throw std::runtime_error(dir.string() + ": not a copy-mixture model");
  }
  CopyMixtureInfiller m;
  m.gate_ = params.at("gate").get<double>();
  m.vocab_ = params.at("vocab").get<std::vector<std::string>>();
  m.logits_ = params.at("logits").get<std::vector<double>>();
  if (m.vocab_.empty() || m.vocab_.size() != m.logits_.size()) {
    throw std::runtime_error(dir.string() + ": vocabulary/logit size mismatch");
  }
  m.ids_.clear();
  for (std::size_t i = 0; i < m.vocab_.size(); ++i) m.ids_.emplace(m.vocab_[i], i);
  m.data_hash_ = meta.value("data_hash", "");
  m.hp_.seed = meta.value("seed", std::uint64_t{0});
  m.hp_.epochs = meta.value("epochs", std::size_t{0});
  m.hp_.batch_size = meta.value("batch_size", std::size_t{0});
  m.hp_.learning_rate = meta.value("learning_rate", 0.0);
  m.epoch_losses_ = meta.value("epoch_losses", std::vector<double>{});
  return m;
}

std::unique_ptr<SpanInfiller> make_infiller(const InfillerSpec& spec) {
  if (spec.id == "uniform") return std::make_unique<UniformInfiller>(spec.vocab_size);
  if (spec.id == "copy-oracle") return std::make_unique<CopyOracleInfiller>();
  if (spec.id == "copy-mixture") {
    if (spec.model_dir.empty()) return std::make_unique<CopyMixtureInfiller>();
    return std::make_unique<CopyMixtureInfiller>(CopyMixtureInfiller::load(spec.model_dir));
  }
  throw std::invalid_argument("unknown infiller binding: " + spec.id);
}

// --- operations --------------------------------------------------------------

double score_source(const SpanInfiller& infiller, const MaskedTarget& masked,
                    std::string_view source_text, std::string_view example_id,
                    const ScoreOptions& options) {
  check_masked(masked);
  double nll = 0.0;
  try {
    nll = infiller.span_nll(masked.observed_text, source_text, masked.masked_text);
  } catch (const std::exception& e) {
    throw std::runtime_error("scoring example " + std::string(example_id) + " failed: " + e.what());
  }
  if (!std::isfinite(nll) || nll < 0.0) {
    throw std::runtime_error("scoring example " + std::string(example_id) +
                             " produced an invalid loss");
  }
  if (options.length_normalize) {
    const auto n = infiller.tokenize(masked.masked_text).size();
    nll /= static_cast<double>(std::max<std::size_t>(n, 1));
  }
  return nll;
}

RankedCandidates rerank_by_generation(const SpanInfiller& infiller, const MaskedTarget& masked,
                                      const RankedCandidates& candidates, const TextLookup& texts,
                                      const ScoreOptions& options, unsigned threads) {
  RankedCandidates out;
  out.query_id = candidates.query_id;
  out.scorer = "gen:" + infiller.identity();
  out.entries.resize(candidates.entries.size());
  for (const auto& c : candidates.entries) lookup_text(texts, c.chunk_id);
  parallel_for(candidates.entries.size(), threads, [&](std::size_t i) {
    const auto& id = candidates.entries[i].chunk_id;
    const double loss =
        score_source(infiller, masked, lookup_text(texts, id), candidates.query_id, options);
    out.entries[i] = {id, -loss};
  });
  sort_descending(out.entries);
  return out;
}

TrainingSetReport build_training_set(const TrainingSetInputs& in, Supervision mode) {
  std::unordered_map<std::string, const Chunk*> targets;
  for (const auto& c : in.targets) targets.emplace(c.chunk_id, &c);
  auto target_of = [&](const std::string& id) -> const Chunk& {
    auto it = targets.find(id);
    if (it == targets.end()) throw std::out_of_range("unknown target chunk " + id);
    return *it->second;
  };
  auto source_text = [&](const std::string& id) -> std::string {
    if (in.source_texts) return lookup_text(*in.source_texts, id);
    for (const auto& c : in.sources) {
      if (c.chunk_id == id) return c.text;
    }
    throw std::out_of_range("no text for source " + id);
  };
  auto masked_for = [&](const SpanOfInterest& span) {
    return mask_span(target_of(span.chunk_id), span, in.subword_budget, in.tokenizer);
  };

  TrainingSetReport report;
  switch (mode) {
    case Supervision::kFull:
      for (const auto& ex : in.examples) {
        if (!ex.gold_chunk_ids || ex.gold_chunk_ids->empty()) {
          throw std::invalid_argument("example " + ex.query_id + ": FULL mode needs gold chunks");
        }
        const auto& src = ex.gold_chunk_ids->front();
        report.examples.push_back(
            {ex.query_id, masked_for(ex.target), source_text(src), Provenance::kGoldSource, src});
      }
      break;
    case Supervision::kSemi:
      if (!in.index) throw std::invalid_argument("SEMI mode needs a baseline index");
      for (const auto& ex : in.examples) {
        const Chunk& target = target_of(ex.target.chunk_id);
        const auto top = in.index->retrieve(target.text, 1, target.chunk_id, ex.query_id);
        if (top.entries.empty()) {
          ++report.skipped;
          continue;
        }
        const auto& src = top.entries.front().chunk_id;
        report.examples.push_back(
            {ex.query_id, masked_for(ex.target), source_text(src), Provenance::kTop1Retrieved, src});
      }
      break;
    case Supervision::kPseudo:
      for (const auto& ex : pseudo_label(in.targets, in.sources, in.aligner)) {
        const auto& src = ex.gold_chunk_ids->front();
        report.examples.push_back(
            {ex.query_id, masked_for(ex.target), source_text(src), Provenance::kAligned, src});
      }
      break;
  }
  return report;
}

TrainResult train(const SpanInfiller& infiller, std::span<const TrainingExample> training_set,
                  const TrainHyperparams& hp) {
  if (training_set.empty()) throw std::invalid_argument("training set is empty");
  return infiller.train(training_set, hp);
}

bool predict_and_match(const SpanInfiller& infiller, const MaskedTarget& masked,
                       std::string_view source_text, std::string_view gold_span) {
  check_masked(masked);
  return text::match_key(infiller.predict_span(masked.observed_text, source_text)) ==
         text::match_key(gold_span);
}

}  // namespace srcattr
