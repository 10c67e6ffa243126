#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "hgrec/error.hpp"
#include "hgrec/eval.hpp"
#include "hgrec/synthetic.hpp"
#include "support.hpp"

using namespace hgrec;

namespace {

/// Two-sided Student-t tail by Simpson integration of the density over [0, |t|].
double t_tail_oracle(double t, double df) {
  const double c = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) / std::sqrt(df * M_PI);
  auto pdf = [&](double x) { return c * std::pow(1 + x * x / df, -(df + 1) / 2); };
  const int n = 20000;
  const double x = std::abs(t), h = x / n;
  double s = pdf(0) + pdf(x);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4 : 2) * pdf(i * h);
  return 1.0 - 2.0 * s * h / 3.0;
}

CallRecord call(int layer, int agent, const std::string& endpoint, std::size_t in, std::size_t out) {
  return {layer, agent, endpoint, in, out, 1.5};
}

}  // namespace

TEST_CASE("rank_positive: descending score with index tie-break") {
  const ScoredItem best[] = {{0, 0.2}, {1, 0.9}, {2, 0.5}};
  CHECK(rank_positive(best, 1) == 1);
  const ScoredItem tied[] = {{5, 0.7}, {2, 0.7}, {9, 0.1}};
  CHECK(rank_positive(tied, 5) == 2);
  CHECK(rank_positive(tied, 2) == 1);
  std::vector<ScoredItem> many;
  for (std::uint32_t i = 0; i < 100; ++i) many.push_back({i, 1.0 - i * 0.001});
  CHECK(rank_positive(many, 99) == 100);
  CHECK_THROWS_AS(rank_positive(best, 7), InvalidArgument);

  const auto ordered = rank_items({{4, 0.3}, {1, 0.3}, {2, 0.8}});
  CHECK(ordered[0].item == 2);
  CHECK(ordered[1].item == 1);
  CHECK(ordered[2].item == 4);
}

TEST_CASE("hr and ndcg hand values") {
  CHECK(hr_at_k(1, 5) == 1.0);
  CHECK(ndcg_at_k(1, 10) == 1.0);
  CHECK(std::abs(ndcg_at_k(4, 5) - 0.43068) < 1e-4);
  CHECK(std::abs(ndcg_at_k(4, 5) - 1.0 / std::log2(5.0)) < 1e-15);
  CHECK(hr_at_k(6, 5) == 0.0);
  CHECK(ndcg_at_k(6, 5) == 0.0);
  for (std::size_t r = 1; r < 30; ++r) {
    for (std::size_t k : {1, 5, 10}) {
      const double n = ndcg_at_k(r, k);
      CHECK((n >= 0.0 && n <= 1.0));
      CHECK((n > 0.0) == (hr_at_k(r, k) == 1.0));
    }
  }
}

TEST_CASE("paired t-test hand case") {
  const double a[] = {0.1, 0.2, 0.3};
  const double zero[] = {0.0, 0.0, 0.0};
  const auto r = paired_t_test(a, zero);
  CHECK(std::abs(r.t - 3.4641) < 1e-3);
  CHECK(r.df == 2.0);
  // df = 2 has a closed form: two-sided p = 1 - |t| / sqrt(t^2 + 2).
  CHECK(std::abs(r.p_two_sided - (1.0 - r.t / std::sqrt(r.t * r.t + 2.0))) < 1e-9);
  CHECK(std::abs(r.p_two_sided - 0.0742) < 1e-3);
  CHECK_FALSE(r.significant);
  CHECK_FALSE(r.degenerate);

  const auto same = paired_t_test(a, a);
  CHECK(same.t == 0.0);
  CHECK(same.p_two_sided == 1.0);
  CHECK_FALSE(same.significant);

  const double shifted[] = {0.4, 0.5, 0.6};
  const auto constant = paired_t_test(shifted, a);
  CHECK(constant.degenerate);
  CHECK(constant.significant);
  CHECK(constant.p_two_sided == 0.0);

  const double one[] = {1.0};
  CHECK_THROWS_AS(paired_t_test(one, one), InvalidArgument);
  CHECK_THROWS_AS(paired_t_test(a, one), InvalidArgument);
}

TEST_CASE("property: t-test antisymmetry and p against an integration oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 2 + rng.index(30);
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = rng.uniform(0, 1);
      b[i] = a[i] + rng.normal(0.05, 0.2);
    }
    const auto ab = paired_t_test(a, b);
    const auto ba = paired_t_test(b, a);
    CHECK(ab.t == -ba.t);
    CHECK(ab.p_two_sided == ba.p_two_sided);
    CHECK(std::abs(ab.p_two_sided - t_tail_oracle(ab.t, ab.df)) < 1e-6);
    CHECK(ab.significant == (ab.p_two_sided < 0.05));
  }
}

TEST_CASE("evaluate: untrained zero-head model ranks by index") {
  Dataset ds(toy_records(5, 10, 1));
  const auto graph = build_hypergraph(ds, 86400);
  ModelConfig cfg;
  cfg.d = 8;
  cfg.n_users = ds.n_users();
  REQUIRE(ds.n_items() <= 10);
  cfg.n_items = 10;  // the table may hold items nobody touched yet
  const std::size_t sizes[] = {2, 1};
  cfg.roster = make_mock_roster(sizes, 8, 1);
  Model model = Model::create(cfg, 2);
  for (auto& h : model.params.heads) h = Matrix(h.rows(), h.cols());

  std::vector<EvalInstance> inst = {
      {0, 3, Behaviour::buy, 0, {3, 5, 7, 9}},           // rank 1
      {1, 4, Behaviour::buy, 0, {4, 0, 1, 8}},           // rank 3
      {2, 9, Behaviour::buy, 0, {9, 0, 1, 2, 3, 4, 5}},  // rank 7
      {3, 0, Behaviour::buy, 0, {0, 1}},                 // rank 1
      {4, 6, Behaviour::buy, 0, {6, 2, 3, 4, 5, 7}},     // rank 5
  };
  const auto report = evaluate(model, graph, inst, nullptr, &ds);
  REQUIRE(report.count() == 5);
  const std::size_t ranks[] = {1, 3, 7, 1, 5};
  for (std::size_t i = 0; i < 5; ++i) CHECK(report.rows[i].rank == ranks[i]);
  CHECK(std::abs(report.hr5 - 0.8) < 1e-12);
  CHECK(report.hr10 == 1.0);
  CHECK(std::abs(report.ndcg5 - (1 + 0.5 + 0 + 1 + 1 / std::log2(6.0)) / 5) < 1e-12);
  CHECK(std::abs(report.ndcg10 - (1 + 0.5 + 1 / 3.0 + 1 + 1 / std::log2(6.0)) / 5) < 1e-12);
  CHECK(report.rows[0].user_id == ds.user_id(0));
  CHECK(report.config_digest == config_digest(model.config));

  // Aggregate = arithmetic mean of the rows.
  const auto col = report.column(&EvalRow::ndcg5);
  CHECK(std::abs(std::accumulate(col.begin(), col.end(), 0.0) / 5 - report.ndcg5) < 1e-15);

  std::ostringstream jsonl;
  write_eval_jsonl(report, jsonl);
  std::size_t lines = 0;
  for (char c : jsonl.str()) lines += c == '\n';
  CHECK(lines == 6);
}

TEST_CASE("evaluate_instance: perfect scores; monotone transforms keep ranks") {
  const EvalInstance inst{0, 2, Behaviour::buy, 0, {2, 0, 1, 3}};
  const double perfect[] = {0.9, 0.1, 0.2, 0.3};
  const auto row = evaluate_instance(inst, perfect);
  CHECK(row.rank == 1);
  CHECK(row.hr5 == 1.0);
  CHECK(row.ndcg10 == 1.0);

  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s(4), t(4);
    for (std::size_t i = 0; i < 4; ++i) {
      s[i] = rng.uniform(-2, 2);
      t[i] = std::exp(3 * s[i]) + 1;
    }
    CHECK(evaluate_instance(inst, s).rank == evaluate_instance(inst, t).rank);
  }
  const double wrong[] = {0.5};
  CHECK_THROWS_AS(evaluate_instance(inst, wrong), ShapeError);
}

TEST_CASE("cost report: hand total, empty log, additivity, unknown endpoint") {
  PriceTable prices{{"http://agent", {0.50, 0.0, 7e9}}, {"mock", {0.0, 0.0, 1e6}}};
  std::vector<CallRecord> log;
  for (int i = 0; i < 1000; ++i) log.push_back(call(1 + i % 2, 1, "http://agent", 200, 200));
  const auto r = cost_report(log, prices);
  CHECK(r.cost() == 0.10);
  CHECK(r.totals().calls == 1000);
  CHECK(r.totals().tokens_in == 200000);
  CHECK(r.flops() == 2.0 * 7e9 * 200000);
  CHECK(r.per_layer.at(1).calls == 500);

  const auto empty = cost_report({}, prices);
  CHECK(empty.cost() == 0.0);
  CHECK(empty.totals() == CostTotals{});
  CHECK(empty.flops() == 0.0);

  std::vector<CallRecord> mixed = log;
  for (int i = 0; i < 10; ++i) mixed.push_back(call(3, 1, "mock", 12, 12));
  const auto m = cost_report(mixed, prices);
  CostTotals sum;
  for (const auto& [ep, t] : m.per_endpoint) sum += t;
  CHECK(sum == m.totals());
  CHECK(m.cost() == m.endpoint_cost("http://agent") + m.endpoint_cost("mock"));
  CHECK(m.flops() == m.endpoint_flops("http://agent") + m.endpoint_flops("mock"));

  // Split the log anywhere: merged parts equal the whole.
  const std::span<const CallRecord> all(mixed);
  auto left = cost_report(all.first(377), prices);
  left.merge(cost_report(all.subspan(377), prices));
  CHECK(left.totals() == m.totals());
  CHECK(left.per_layer == m.per_layer);
  CHECK(left.per_agent == m.per_agent);
  CHECK(left.cost() == m.cost());

  const CallRecord stray[] = {call(1, 1, "http://other", 5, 5)};
  CHECK_THROWS_WITH(cost_report(stray, prices), doctest::Contains("http://other"));
}

TEST_CASE("price table parsing") {
  std::istringstream in(
      "# agents\n"
      "[[prices]]\n"
      "endpoint = \"http://a/agent\"\n"
      "price_in_per_1m = 0.5\n"
      "price_out_per_1m = 1.25  # output\n"
      "params = 7e9\n"
      "\n"
      "[[prices]]\n"
      "endpoint = \"mock\"\n"
      "price_in_per_1m = 0\n");
  const auto table = parse_price_table(in);
  REQUIRE(table.size() == 2);
  CHECK(table.at("http://a/agent").price_in_per_1m == 0.5);
  CHECK(table.at("http://a/agent").price_out_per_1m == 1.25);
  CHECK(table.at("http://a/agent").params == 7e9);
  CHECK(table.at("mock").params == 0.0);

  std::istringstream negative("[[prices]]\nendpoint = \"x\"\nprice_in_per_1m = -1\n");
  CHECK_THROWS_AS(parse_price_table(negative), ParseError);
  std::istringstream orphan("price_in_per_1m = 1\n");
  CHECK_THROWS_AS(parse_price_table(orphan), ParseError);
}
