#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hgrec/data.hpp"
#include "hgrec/hypergraph.hpp"
#include "hgrec/model.hpp"
#include "hgrec/moa.hpp"

namespace hgrec {

struct ScoredItem {
  std::uint32_t item = 0;
  double score = 0.0;
};

/// 1-based rank of `positive` by descending score, ties broken by ascending item index.
std::size_t rank_positive(std::span<const ScoredItem> scores, std::uint32_t positive);

/// Items ordered best first under the same tie rule.
std::vector<ScoredItem> rank_items(std::vector<ScoredItem> scores);

double hr_at_k(std::size_t rank, std::size_t k);
/// Single-positive form: 1 / log2(rank + 1) inside the cutoff, else 0.
double ndcg_at_k(std::size_t rank, std::size_t k);

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p_two_sided = 1.0;
  bool significant = false;
  /// Differences have zero variance.
  bool degenerate = false;
};

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b, double alpha = 0.05);

struct EvalRow {
  std::uint32_t user = 0;
  std::string user_id;
  std::uint32_t positive = 0;
  std::size_t rank = 0;
  double hr5 = 0.0;
  double hr10 = 0.0;
  double ndcg5 = 0.0;
  double ndcg10 = 0.0;
};

struct EvalReport {
  std::string label;
  std::string config_digest;
  std::vector<EvalRow> rows;  // ascending user index
  double hr5 = 0.0;
  double hr10 = 0.0;
  double ndcg5 = 0.0;
  double ndcg10 = 0.0;

  std::size_t count() const noexcept { return rows.size(); }
  /// Recomputes the aggregate means from the rows.
  void aggregate();
  std::vector<double> column(double EvalRow::*field) const;
};

/// Per-instance rows from precomputed candidate scores (aligned with inst.candidates).
EvalRow evaluate_instance(const EvalInstance& instance, std::span<const double> scores);

/// Scores every candidate through the full pipeline, ranks the positive and aggregates.
/// user ids are resolved through `ds` when given.
EvalReport evaluate(const Model& model, const Hypergraph& graph,
                    std::span<const EvalInstance> instances, CostLog* log = nullptr,
                    const Dataset* ds = nullptr);

/// One JSON line per row, then a summary line.
void write_eval_jsonl(const EvalReport& report, std::ostream& out);
void write_eval_table(const EvalReport& report, std::ostream& out);

// ---- cost accounting ----

struct PriceEntry {
  double price_in_per_1m = 0.0;
  double price_out_per_1m = 0.0;
  double params = 0.0;
};

using PriceTable = std::map<std::string, PriceEntry>;

/// Reads `[[prices]]` tables with keys endpoint, price_in_per_1m, price_out_per_1m, params.
PriceTable parse_price_table(std::istream& in);

struct CostTotals {
  std::size_t calls = 0;
  std::size_t tokens_in = 0;
  std::size_t tokens_out = 0;
  /// Whole microseconds, so sums are exact and independent of grouping.
  std::uint64_t latency_us = 0;

  double latency_ms() const { return static_cast<double>(latency_us) / 1000.0; }
  CostTotals& operator+=(const CostTotals& other);
  friend bool operator==(const CostTotals&, const CostTotals&) = default;
};

struct CostReport {
  /// Per price key (endpoint); currency cost and FLOPs follow from these counts and the table.
  std::map<std::string, CostTotals> per_endpoint;
  std::map<int, CostTotals> per_layer;
  std::map<std::pair<int, int>, CostTotals> per_agent;
  PriceTable prices;

  CostTotals totals() const;
  double cost() const;
  double endpoint_cost(const std::string& endpoint) const;
  double flops() const;
  double endpoint_flops(const std::string& endpoint) const;

  /// Exact: merging the reports of two logs equals the report of their concatenation.
  CostReport& merge(const CostReport& other);
};

/// Fails with an error naming the endpoint when a log entry has no price.
CostReport cost_report(std::span<const CallRecord> log, const PriceTable& prices);

void write_cost_jsonl(const CostReport& report, std::ostream& out);
void write_cost_table(const CostReport& report, std::ostream& out);

}  // namespace hgrec
