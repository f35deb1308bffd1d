#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "srcattr/embed.hpp"
#include "srcattr/gen_rerank.hpp"

namespace srcattr::testing {

// Looks vectors up by exact text, scaled by alpha.
class TableEncoder final : public TextEncoder {
 public:
  explicit TableEncoder(std::unordered_map<std::string, std::vector<double>> table, double alpha = 1.0)
      : table_(std::move(table)), alpha_(alpha) {}
  std::size_t dim() const override { return table_.begin()->second.size(); }
  EncoderVector encode(std::string_view text) const override {
    auto v = table_.at(std::string(text));
    for (auto& x : v) x *= alpha_;
    return {v};
  }
  std::string identity() const override { return "table"; }

 private:
  std::unordered_map<std::string, std::vector<double>> table_;
  double alpha_;
};

// NLL looked up by source text; stands in for a frozen generator.
class TableInfiller final : public SpanInfiller {
 public:
  explicit TableInfiller(std::unordered_map<std::string, double> nll) : nll_(std::move(nll)) {}
  double span_nll(std::string_view, std::string_view s, std::string_view) const override {
    return nll_.at(std::string(s));
  }
  std::string predict_span(std::string_view, std::string_view) const override { return {}; }
  std::string identity() const override { return "table"; }
  std::unique_ptr<SpanInfiller> clone() const override { return std::make_unique<TableInfiller>(*this); }

 private:
  std::unordered_map<std::string, double> nll_;
};

}  // namespace srcattr::testing
