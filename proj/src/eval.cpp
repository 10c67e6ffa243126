#include "hgrec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "hgrec/error.hpp"

namespace hgrec {

namespace {

bool ranks_before(const ScoredItem& a, const ScoredItem& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.item < b.item;
}

}  // namespace

std::size_t rank_positive(std::span<const ScoredItem> scores, std::uint32_t positive) {
  const auto it = std::find_if(scores.begin(), scores.end(),
                               [&](const ScoredItem& s) { return s.item == positive; });
  if (it == scores.end()) {
    throw InvalidArgument("positive item " + std::to_string(positive) + " is not among the scored items");
  }
  std::size_t rank = 1;
  for (const auto& s : scores) {
    if (s.item != positive && ranks_before(s, *it)) ++rank;
  }
  return rank;
}

std::vector<ScoredItem> rank_items(std::vector<ScoredItem> scores) {
  std::sort(scores.begin(), scores.end(), ranks_before);
  return scores;
}

double hr_at_k(std::size_t rank, std::size_t k) {
  if (rank < 1 || k < 1) throw InvalidArgument("rank and k must be >= 1");
  return rank <= k ? 1.0 : 0.0;
}

double ndcg_at_k(std::size_t rank, std::size_t k) {
  if (rank < 1 || k < 1) throw InvalidArgument("rank and k must be >= 1");
  return rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b, double alpha) {
  if (a.size() != b.size()) throw InvalidArgument("paired t-test needs aligned vectors");
  if (a.size() < 2) throw InvalidArgument("paired t-test needs at least two pairs");
  const std::size_t n = a.size();
  std::vector<double> diff(n);
  for (std::size_t i = 0; i < n; ++i) diff[i] = a[i] - b[i];
  double mean = 0.0;
  for (double x : diff) mean += x;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double x : diff) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));

  TTestResult r;
  r.df = static_cast<double>(n - 1);
  // Spread far below the rounding noise of the mean counts as none at all.
  const double noise = 1e-12 * std::max(1.0, std::abs(mean));
  if (sd <= noise) {
    r.degenerate = true;
    if (std::abs(mean) <= noise) {
      r.t = 0.0;
      r.p_two_sided = 1.0;
      r.significant = false;
    } else {
      r.t = mean > 0 ? INFINITY : -INFINITY;
      r.p_two_sided = 0.0;
      r.significant = true;
    }
    return r;
  }
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  const boost::math::students_t dist(r.df);
  r.p_two_sided = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  r.significant = r.p_two_sided < alpha;
  return r;
}

void EvalReport::aggregate() {
  hr5 = hr10 = ndcg5 = ndcg10 = 0.0;
  if (rows.empty()) return;
  for (const auto& row : rows) {
    hr5 += row.hr5;
    hr10 += row.hr10;
    ndcg5 += row.ndcg5;
    ndcg10 += row.ndcg10;
  }
  const double n = static_cast<double>(rows.size());
  hr5 /= n;
  hr10 /= n;
  ndcg5 /= n;
  ndcg10 /= n;
}

std::vector<double> EvalReport::column(double EvalRow::*field) const {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& row : rows) out.push_back(row.*field);
  return out;
}

EvalRow evaluate_instance(const EvalInstance& instance, std::span<const double> scores) {
  if (scores.size() != instance.candidates.size()) {
    throw ShapeError("instance has " + std::to_string(instance.candidates.size()) +
                     " candidates but " + std::to_string(scores.size()) + " scores");
  }
  std::vector<ScoredItem> scored;
  scored.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) scored.push_back({instance.candidates[i], scores[i]});
  EvalRow row;
  row.user = instance.user;
  row.positive = instance.positive;
  row.rank = rank_positive(scored, instance.positive);
  row.hr5 = hr_at_k(row.rank, 5);
  row.hr10 = hr_at_k(row.rank, 10);
  row.ndcg5 = ndcg_at_k(row.rank, 5);
  row.ndcg10 = ndcg_at_k(row.rank, 10);
  return row;
}

EvalReport evaluate(const Model& model, const Hypergraph& graph,
                    std::span<const EvalInstance> instances, CostLog* log, const Dataset* ds) {
  std::vector<const EvalInstance*> ordered;
  for (const auto& inst : instances) ordered.push_back(&inst);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const EvalInstance* a, const EvalInstance* b) { return a->user < b->user; });
  EvalReport report;
  report.config_digest = config_digest(model.config);
  for (const EvalInstance* inst : ordered) {
    if (inst->candidates.empty()) throw InvalidArgument("evaluation instance without candidates");
    const auto scores =
        score_user_items(model, graph, inst->user, inst->behaviour, inst->candidates, log);
    EvalRow row = evaluate_instance(*inst, scores);
    if (ds != nullptr) row.user_id = ds->user_id(inst->user);
    report.rows.push_back(std::move(row));
  }
  report.aggregate();
  return report;
}

void write_eval_jsonl(const EvalReport& report, std::ostream& out) {
  for (const auto& row : report.rows) {
    nlohmann::json j = {{"user", row.user},   {"user_id", row.user_id}, {"positive", row.positive},
                        {"rank", row.rank},   {"hr5", row.hr5},         {"hr10", row.hr10},
                        {"ndcg5", row.ndcg5}, {"ndcg10", row.ndcg10}};
    out << j.dump() << '\n';
  }
  nlohmann::json summary = {{"summary", true},
                            {"label", report.label},
                            {"config_digest", report.config_digest},
                            {"instances", report.count()},
                            {"hr5", report.hr5},
                            {"hr10", report.hr10},
                            {"ndcg5", report.ndcg5},
                            {"ndcg10", report.ndcg10}};
  out << summary.dump() << '\n';
}

void write_eval_table(const EvalReport& report, std::ostream& out) {
  out << "label      " << (report.label.empty() ? "-" : report.label) << '\n'
      << "instances  " << report.count() << '\n'
      << std::fixed << std::setprecision(4) << "HR@5       " << report.hr5 << '\n'
      << "HR@10      " << report.hr10 << '\n'
      << "NDCG@5     " << report.ndcg5 << '\n'
      << "NDCG@10    " << report.ndcg10 << '\n';
  out.unsetf(std::ios::floatfield);
}

// ---- prices ----

namespace {

std::string trim(std::string s) {
  const auto start = s.find_first_not_of(" \t\r");
  if (start == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(start, end - start + 1);
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

double parse_number(const std::string& text, std::size_t line, const std::string& key) {
  std::string digits;
  for (char c : text) {
    if (c != '_') digits.push_back(c);
  }
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(digits, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != digits.size()) throw ParseError(line, key, "expected a number for " + key);
  return v;
}

}  // namespace

PriceTable parse_price_table(std::istream& in) {
  PriceTable table;
  struct Pending {
    std::string endpoint;
    PriceEntry entry;
    std::size_t line = 0;
  };
  std::optional<Pending> current;
  auto flush = [&] {
    if (!current) return;
    if (current->endpoint.empty()) throw ParseError(current->line, "endpoint", "price entry without endpoint");
    const auto& e = current->entry;
    if (e.price_in_per_1m < 0 || e.price_out_per_1m < 0 || e.params < 0) {
      throw ParseError(current->line, "price", "prices and params must be >= 0");
    }
    if (!table.emplace(current->endpoint, e).second) {
      throw ParseError(current->line, "endpoint", "duplicate endpoint \"" + current->endpoint + "\"");
    }
    current.reset();
  };
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line == "[[prices]]") {
      flush();
      current = Pending{{}, {}, line_no};
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(line_no, "line", "expected key = value");
    if (!current) throw ParseError(line_no, "line", "key outside a [[prices]] table");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "endpoint") {
      if (value.size() < 2 || value.front() != '"' || value.back() != '"') {
        throw ParseError(line_no, key, "endpoint must be a quoted string");
      }
      current->endpoint = value.substr(1, value.size() - 2);
    } else if (key == "price_in_per_1m") {
      current->entry.price_in_per_1m = parse_number(value, line_no, key);
    } else if (key == "price_out_per_1m") {
      current->entry.price_out_per_1m = parse_number(value, line_no, key);
    } else if (key == "params") {
      current->entry.params = parse_number(value, line_no, key);
    } else {
      throw ParseError(line_no, key, "unknown price key \"" + key + "\"");
    }
  }
  flush();
  return table;
}

CostTotals& CostTotals::operator+=(const CostTotals& other) {
  calls += other.calls;
  tokens_in += other.tokens_in;
  tokens_out += other.tokens_out;
  latency_us += other.latency_us;
  return *this;
}

CostTotals CostReport::totals() const {
  CostTotals t;
  for (const auto& [endpoint, sub] : per_endpoint) t += sub;
  return t;
}

double CostReport::endpoint_cost(const std::string& endpoint) const {
  const auto it = per_endpoint.find(endpoint);
  if (it == per_endpoint.end()) return 0.0;
  const auto& price = prices.at(endpoint);
  // Integer token sums keep the cost independent of how the log was split.
  return static_cast<double>(it->second.tokens_in) * price.price_in_per_1m / 1e6 +
         static_cast<double>(it->second.tokens_out) * price.price_out_per_1m / 1e6;
}

double CostReport::cost() const {
  double total = 0.0;
  for (const auto& [endpoint, sub] : per_endpoint) total += endpoint_cost(endpoint);
  return total;
}

double CostReport::endpoint_flops(const std::string& endpoint) const {
  const auto it = per_endpoint.find(endpoint);
  if (it == per_endpoint.end()) return 0.0;
  return 2.0 * prices.at(endpoint).params * static_cast<double>(it->second.tokens_in);
}

double CostReport::flops() const {
  double total = 0.0;
  for (const auto& [endpoint, sub] : per_endpoint) total += endpoint_flops(endpoint);
  return total;
}

CostReport& CostReport::merge(const CostReport& other) {
  for (const auto& [k, v] : other.per_endpoint) per_endpoint[k] += v;
  for (const auto& [k, v] : other.per_layer) per_layer[k] += v;
  for (const auto& [k, v] : other.per_agent) per_agent[k] += v;
  for (const auto& [k, v] : other.prices) prices.emplace(k, v);
  return *this;
}

CostReport cost_report(std::span<const CallRecord> log, const PriceTable& prices) {
  CostReport report;
  for (const auto& rec : log) {
    const auto price = prices.find(rec.endpoint);
    if (price == prices.end()) {
      throw InvalidArgument("no price for endpoint \"" + rec.endpoint + "\"");
    }
    report.prices.emplace(price->first, price->second);
    const CostTotals one{1, rec.tokens_in, rec.tokens_out,
                         static_cast<std::uint64_t>(std::llround(std::max(0.0, rec.latency_ms) * 1000.0))};
    report.per_endpoint[rec.endpoint] += one;
    report.per_layer[rec.layer] += one;
    report.per_agent[{rec.layer, rec.agent}] += one;
  }
  return report;
}

void write_cost_jsonl(const CostReport& report, std::ostream& out) {
  auto totals_json = [](const CostTotals& t) {
    return nlohmann::json{{"calls", t.calls},
                          {"tokens_in", t.tokens_in},
                          {"tokens_out", t.tokens_out},
                          {"latency_ms", t.latency_ms()}};
  };
  for (const auto& [endpoint, t] : report.per_endpoint) {
    auto j = totals_json(t);
    j["group"] = "endpoint";
    j["endpoint"] = endpoint;
    j["cost"] = report.endpoint_cost(endpoint);
    j["flops"] = report.endpoint_flops(endpoint);
    out << j.dump() << '\n';
  }
  for (const auto& [layer, t] : report.per_layer) {
    auto j = totals_json(t);
    j["group"] = "layer";
    j["layer"] = layer;
    out << j.dump() << '\n';
  }
  for (const auto& [key, t] : report.per_agent) {
    auto j = totals_json(t);
    j["group"] = "agent";
    j["layer"] = key.first;
    j["agent"] = key.second;
    out << j.dump() << '\n';
  }
  auto j = totals_json(report.totals());
  j["group"] = "total";
  j["cost"] = report.cost();
  j["flops"] = report.flops();
  out << j.dump() << '\n';
}

void write_cost_table(const CostReport& report, std::ostream& out) {
  const auto t = report.totals();
  std::ostringstream s;
  s << std::left << std::setw(36) << "endpoint" << std::right << std::setw(8) << "calls"
    << std::setw(12) << "tokens_in" << std::setw(12) << "tokens_out" << std::setw(14) << "cost"
    << std::setw(14) << "TFLOPs" << '\n';
  for (const auto& [endpoint, e] : report.per_endpoint) {
    s << std::left << std::setw(36) << endpoint << std::right << std::setw(8) << e.calls
      << std::setw(12) << e.tokens_in << std::setw(12) << e.tokens_out << std::setw(14)
      << std::setprecision(6) << report.endpoint_cost(endpoint) << std::setw(14)
      << report.endpoint_flops(endpoint) / 1e12 << '\n';
  }
  s << std::left << std::setw(36) << "total" << std::right << std::setw(8) << t.calls << std::setw(12)
    << t.tokens_in << std::setw(12) << t.tokens_out << std::setw(14) << report.cost()
    << std::setw(14) << report.flops() / 1e12 << '\n';
  out << s.str();
}

}  // namespace hgrec
