#include "srcattr/embed.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>

#include "json.hpp"
#include "srcattr/kernels/kernels.hpp"
#include "srcattr/parallel.hpp"
#include "srcattr/text.hpp"

namespace srcattr {

namespace {

// Box-Muller on raw 53-bit draws; std::normal_distribution differs between
// standard libraries and would make seeded weights platform-dependent.
double gaussian(std::mt19937_64& rng) {
  const double u1 = 1.0 - static_cast<double>(rng() >> 11) * 0x1.0p-53;
  const double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace

std::vector<EncoderVector> TextEncoder::encode_batch(std::span<const std::string> texts,
                                                     unsigned threads) const {
  std::vector<EncoderVector> out(texts.size());
  parallel_for(texts.size(), threads, [&](std::size_t i) { out[i] = encode(texts[i]); });
  return out;
}

HashProjectionEncoder::HashProjectionEncoder(std::size_t dim, std::size_t buckets,
                                             std::uint64_t seed)
    : dim_(dim), buckets_(buckets), seed_(seed), weights_(dim * buckets) {
  if (dim == 0 || buckets == 0) throw std::invalid_argument("encoder dimensions must be >= 1");
  std::mt19937_64 rng(seed);
  for (auto& w : weights_) w = gaussian(rng);
}

std::string HashProjectionEncoder::identity() const {
  std::string id = "hash-projection(d=" + std::to_string(dim_) + ",buckets=" +
                   std::to_string(buckets_) + ",seed=" + std::to_string(seed_) + ")";
  if (!tag_.empty()) id += "+" + tag_;
  return id;
}

SparseFeatures HashProjectionEncoder::features(std::string_view text) const {
  const auto tokens = text::analyze(text);
  std::map<std::uint32_t, double> counts;
  for (const auto& t : tokens) {
    counts[static_cast<std::uint32_t>(text::fnv1a(t) % buckets_)] += 1.0;
  }
  SparseFeatures f;
  const double inv = tokens.empty() ? 0.0 : 1.0 / static_cast<double>(tokens.size());
  for (const auto& [b, c] : counts) f.entries.emplace_back(b, c * inv);
  return f;
}

EncoderVector HashProjectionEncoder::encode(const SparseFeatures& f) const {
  EncoderVector v{std::vector<double>(dim_, 0.0)};
  for (const auto& [b, w] : f.entries) kernels::axpy(w, column(b), v.values);
  return v;
}

EncoderVector HashProjectionEncoder::encode(std::string_view text) const {
  return encode(features(text));
}

std::span<const double> HashProjectionEncoder::column(std::uint32_t bucket) const {
  return std::span<const double>(weights_).subspan(static_cast<std::size_t>(bucket) * dim_, dim_);
}

std::span<double> HashProjectionEncoder::column(std::uint32_t bucket) {
  return std::span<double>(weights_).subspan(static_cast<std::size_t>(bucket) * dim_, dim_);
}

void HashProjectionEncoder::save(const std::filesystem::path& file) const {
  nlohmann::json j{{"type", "hash-projection"}, {"dim", dim_},   {"buckets", buckets_},
                   {"seed", seed_},            {"tag", tag_},   {"weights", weights_}};
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << j.dump() << '\n';
}

HashProjectionEncoder HashProjectionEncoder::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  const auto j = nlohmann::json::parse(in);
  if (j.value("type", "") != "hash-projection") {
    throw std::runtime_error(file.string() + ": not a hash-projection encoder");
  }
  HashProjectionEncoder enc(j.at("dim").get<std::size_t>(), j.at("buckets").get<std::size_t>(),
                            j.at("seed").get<std::uint64_t>());
  auto w = j.at("weights").get<std::vector<double>>();
  if (w.size() != enc.weights_.size()) throw std::runtime_error(file.string() + ": weight count");
  enc.weights_ = std::move(w);
  enc.tag_ = j.value("tag", "");
  return enc;
}

EncoderVector RandomTextEncoder::encode(std::string_view text) const {
  std::mt19937_64 rng(text::fnv1a(text::match_key(text), seed_ ^ 0x9e3779b97f4a7c15ULL));
  EncoderVector v{std::vector<double>(dim_)};
  for (auto& x : v.values) x = gaussian(rng);
  return v;
}

std::string RandomTextEncoder::identity() const {
  return "random(d=" + std::to_string(dim_) + ",seed=" + std::to_string(seed_) + ")";
}

std::unique_ptr<TextEncoder> make_encoder(const EncoderSpec& spec) {
  if (spec.id == "hash-projection") {
    return std::make_unique<HashProjectionEncoder>(spec.dim, spec.buckets, spec.seed);
  }
  if (spec.id == "random") return std::make_unique<RandomTextEncoder>(spec.dim, spec.seed);
  throw std::invalid_argument("unknown encoder binding: " + spec.id);
}

double cosine_similarity(const EncoderVector& u, const EncoderVector& v) {
  if (u.dim() != v.dim()) {
    throw std::invalid_argument("cosine_similarity: dimension mismatch (" +
                                std::to_string(u.dim()) + " vs " + std::to_string(v.dim()) + ")");
  }
  const double nu = kernels::squared_norm(u.values);
  const double nv = kernels::squared_norm(v.values);
  if (nu == 0.0 || nv == 0.0) return 0.0;
  const double c = kernels::dot(u.values, v.values) / (std::sqrt(nu) * std::sqrt(nv));
  return std::clamp(c, -1.0, 1.0);
}

const std::string& lookup_text(const TextLookup& texts, const std::string& chunk_id) {
  auto it = texts.find(chunk_id);
  if (it == texts.end()) throw std::out_of_range("no text for candidate " + chunk_id);
  return it->second;
}

RankedCandidates rerank_by_embedding(std::string_view target_text,
                                     const RankedCandidates& candidates,
                                     const TextEncoder& encoder, const TextLookup& texts) {
  RankedCandidates out;
  out.query_id = candidates.query_id;
  out.scorer = "embed:" + encoder.identity();
  if (candidates.entries.empty()) return out;
  const auto target = encoder.encode(target_text);
  out.entries.reserve(candidates.entries.size());
  for (const auto& c : candidates.entries) {
    out.entries.push_back({c.chunk_id, cosine_similarity(target, encoder.encode(lookup_text(texts, c.chunk_id)))});
  }
  sort_descending(out.entries);
  return out;
}

}  // namespace srcattr
