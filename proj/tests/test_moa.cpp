#include <doctest.h>

#include <cmath>
#include <sstream>

#include "hgrec/digest.hpp"
#include "hgrec/error.hpp"
#include "hgrec/moa.hpp"
#include "support.hpp"

using namespace hgrec;

namespace {

AdapterParams identity_adapter(std::size_t d) {
  return {Matrix::identity(d), Matrix(1, d), Matrix::identity(d), Matrix(1, d)};
}

AdapterParams random_adapter(std::size_t d, std::size_t d_agent, Rng& rng) {
  return {testing::random_matrix(d, d_agent, rng, 0.5), testing::random_matrix(1, d_agent, rng, 0.1),
          testing::random_matrix(d_agent, d, rng, 0.5), testing::random_matrix(1, d, rng, 0.1)};
}

std::vector<std::vector<AdapterParams>> adapters_for(const AgentRoster& roster, std::size_t d, Rng& rng) {
  std::vector<std::vector<AdapterParams>> out;
  for (const auto& layer : roster) {
    std::vector<AdapterParams> row;
    for (const auto& a : layer) row.push_back(random_adapter(d, a.d_agent, rng));
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<Matrix> queries_for(const AgentRoster& roster, std::size_t d, Rng& rng) {
  std::vector<Matrix> q;
  for (std::size_t i = 0; i < roster.size(); ++i) q.push_back(testing::random_matrix(1, d, rng));
  return q;
}

Matrix run_moa(const Matrix& x1, const AgentPool& pool, const std::vector<Matrix>& queries,
               const std::vector<std::vector<AdapterParams>>& adapters, CostLog* log = nullptr) {
  ad::Tape tape;
  ParamBinder bind(tape);
  return moa_forward(bind, tape.constant_view(x1), pool, queries, adapters, log).value();
}

}  // namespace

TEST_CASE("mock agent: determinism, shape, golden digest") {
  const std::size_t sizes[] = {1};
  const auto roster = make_mock_roster(sizes, 8, 42);
  AgentSpec agent = roster[0][0];
  agent.mock_seed = 42;
  const auto weights = MockAgentParams::generate(42, 8);
  CHECK(weights.digest() == MockAgentParams::generate(42, 8).digest());
  CHECK(weights.digest() != MockAgentParams::generate(43, 8).digest());

  Matrix x(3, 8);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 8; ++c) x(r, c) = std::sin(double(r * 8 + c));
  const Matrix a = mock_agent_forward(x, agent, weights, identity_adapter(8));
  const Matrix b = mock_agent_forward(x, agent, weights, identity_adapter(8));
  CHECK(a == b);
  CHECK(a.rows() == 3);
  CHECK(a.cols() == 8);
  CHECK(mock_agent_forward(Matrix(11, 8, 0.5), agent, weights, identity_adapter(8)).rows() == 11);

  // Locked against the first verified run; any change to the frozen block or its seeding shows here.
  CHECK(weights.digest() == "a86730a6550718cbdc72c344c98613403d02ec84e37e6c33f641ee468f006a5e");
  CHECK(sha256_hex(a) == "f0c580fcdc32b68ad8c85609fa2fb3c605f2a361b80235fc3c07a178f89bc98b");
}

TEST_CASE("aggregate_agents: singleton, identical outputs, hand softmax") {
  Rng rng(1);
  const Matrix o = testing::random_matrix(4, 6, rng);
  const Matrix q = testing::random_matrix(1, 6, rng);
  const Matrix one[] = {o};
  const auto single = aggregate_agents(one, q);
  CHECK(single.result == o);
  CHECK(single.weights == Matrix(4, 1, 1.0));

  const Matrix same[] = {o, o, o};
  CHECK(max_abs_diff(aggregate_agents(same, q).result, o) < 1e-12);

  // d = 2, s = 1: q = (1, 0); scores o1.q / sqrt2 = 1/sqrt2, o2.q / sqrt2 = 3/sqrt2.
  const Matrix pair[] = {Matrix::from_rows({{1, 2}}), Matrix::from_rows({{3, -1}})};
  const auto agg = aggregate_agents(pair, Matrix::from_rows({{1, 0}}));
  const double e1 = std::exp(1 / std::sqrt(2.0)), e2 = std::exp(3 / std::sqrt(2.0));
  const double b1 = e1 / (e1 + e2), b2 = e2 / (e1 + e2);
  CHECK(std::abs(agg.weights(0, 0) - b1) < 1e-6);
  CHECK(std::abs(agg.weights(0, 1) - b2) < 1e-6);
  CHECK(std::abs(agg.result(0, 0) - (b1 * 1 + b2 * 3)) < 1e-6);
  CHECK(std::abs(agg.result(0, 1) - (b1 * 2 - b2)) < 1e-6);

  const Matrix mismatched[] = {Matrix(2, 2), Matrix(3, 2)};
  CHECK_THROWS(aggregate_agents(mismatched, Matrix(1, 2)));
}

TEST_CASE("property: aggregation weights sum to 1 per token") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.index(5), s = 1 + rng.index(8);
    std::vector<Matrix> outs;
    for (std::size_t j = 0; j < n; ++j) outs.push_back(testing::random_matrix(s, 8, rng, 5.0));
    const auto agg = aggregate_agents(outs, testing::random_matrix(1, 8, rng, 5.0));
    for (std::size_t t = 0; t < s; ++t) {
      double total = 0;
      for (double w : agg.weights.row(t)) total += w;
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("moa layer residual structure") {
  Rng rng(3);
  const Matrix x1 = testing::random_matrix(6, 8, rng);
  const Matrix xi = testing::random_matrix(6, 8, rng);

  const std::size_t one_layer[] = {1};
  auto roster = make_mock_roster(one_layer, 8, 5);
  roster[0][0].bypass_block = true;
  const AgentPool identity_pool(roster);
  const std::vector<AdapterParams> ids = {identity_adapter(8)};
  const Matrix q = testing::random_matrix(1, 8, rng);

  SUBCASE("identity agent gives x_i + x_1 exactly") {
    ad::Tape tape;
    ParamBinder bind(tape);
    MoALayerView view{identity_pool.roster()[0], ids, &q, &identity_pool, 0};
    const Matrix y = moa_layer(bind, tape.constant_view(xi), tape.constant_view(x1), view, nullptr).value();
    CHECK(y == xi + x1);
    CHECK(run_moa(x1, identity_pool, {q}, {ids}) == x1 + x1);
  }

  SUBCASE("zero-output agents leave x_1 at every layer") {
    const std::size_t sizes[] = {3, 3, 1};
    const AgentPool pool(make_mock_roster(sizes, 8, 9));
    auto adapters = adapters_for(pool.roster(), 8, rng);
    for (auto& layer : adapters)
      for (auto& a : layer) {
        a.out_weight = Matrix(a.out_weight.rows(), a.out_weight.cols());
        a.out_bias = Matrix(1, 8);
      }
    CHECK(run_moa(x1, pool, queries_for(pool.roster(), 8, rng), adapters) == x1);
  }

  SUBCASE("zero layers return x_1") {
    const AgentPool empty(AgentRoster{});
    CHECK(run_moa(x1, empty, {}, {}) == x1);
  }

  SUBCASE("three mock agents equal hand-wired composition") {
    const std::size_t sizes[] = {3};
    const AgentPool pool(make_mock_roster(sizes, 8, 11));
    const auto adapters = adapters_for(pool.roster(), 8, rng);
    std::vector<Matrix> outs;
    for (std::size_t j = 0; j < 3; ++j) {
      outs.push_back(mock_agent_forward(xi, pool.roster()[0][j], pool.mock_weights(0, j), adapters[0][j]));
    }
    const Matrix expected = aggregate_agents(outs, q).result + x1;
    ad::Tape tape;
    ParamBinder bind(tape);
    MoALayerView view{pool.roster()[0], adapters[0], &q, &pool, 0};
    const Matrix y = moa_layer(bind, tape.constant_view(xi), tape.constant_view(x1), view, nullptr).value();
    CHECK(max_abs_diff(y, expected) < 1e-12);
  }
}

TEST_CASE("moa_forward: call count, log length, deterministic output") {
  Rng rng(4);
  const std::size_t sizes[] = {3, 3, 1};
  const AgentPool pool(make_mock_roster(sizes, 8, 17));
  const auto adapters = adapters_for(pool.roster(), 8, rng);
  const auto queries = queries_for(pool.roster(), 8, rng);
  const Matrix x1 = testing::random_matrix(9, 8, rng);
  CostLog log;
  const Matrix a = run_moa(x1, pool, queries, adapters, &log);
  CHECK(log.size() == 7);
  CHECK(pool.total_agents() == 7);
  for (const auto& r : log.records()) {
    CHECK(r.tokens_in == 9);
    CHECK(r.endpoint == "mock");
  }
  CHECK(run_moa(x1, pool, queries, adapters) == a);

  std::stringstream jsonl;
  log.write_jsonl(jsonl);
  const auto back = CostLog::read_jsonl(jsonl);
  REQUIRE(back.size() == 7);
  CHECK(back[6].layer == 3);
  CHECK(back[6].agent == 1);
}

TEST_CASE("score_items: sigmoid head cases") {
  const Matrix moa_out = Matrix::from_rows({{1, 0}, {1, 2}});  // z = (1, 1)
  const Matrix items = Matrix::from_rows({{1, 0}, {0, 1}, {2, 3}});
  auto scores = [&](const Matrix& head, std::vector<std::uint32_t> cands) {
    ad::Tape tape;
    ParamBinder bind(tape);
    return score_items(bind, tape.constant_view(moa_out), cands, head, items).value();
  };
  const Matrix half = scores(Matrix(2, 2), {0, 1, 2});
  for (double s : half.values()) CHECK(s == 0.5);

  // W z = (ln 3, 0); item 0 = (1, 0) -> logit ln 3 -> 0.75.
  const Matrix head = Matrix::from_rows({{std::log(3.0) / 2, std::log(3.0) / 2}, {0, 0}});
  CHECK(std::abs(scores(head, {0})(0, 0) - 0.75) < 1e-12);

  const Matrix h = Matrix::from_rows({{0.3, -0.2}, {0.1, 0.4}});
  const Matrix fwd = scores(h, {0, 1, 2});
  const Matrix rev = scores(h, {2, 1, 0});
  for (std::size_t i = 0; i < 3; ++i) CHECK(fwd(0, i) == rev(0, 2 - i));
  for (double s : fwd.values()) CHECK((s > 0.0 && s < 1.0));

  CHECK_THROWS_AS(scores(h, {3}), InvalidArgument);
  CHECK_THROWS_AS(scores(h, {}), InvalidArgument);
}

TEST_CASE("stop-gradient policy and mock adapter gradients") {
  const std::size_t sizes[] = {2, 1};
  auto roster = make_mock_roster(sizes, 8, 3);
  roster[1][0].kind = AgentKind::remote;
  roster[1][0].endpoint = "http://127.0.0.1:1/agent";
  const auto plan = stop_gradient_policy(roster);
  CHECK(plan[0][0] == GradientRoute::through_agent);
  CHECK(plan[0][1] == GradientRoute::through_agent);
  CHECK(plan[1][0] == GradientRoute::residual_only);

  Rng rng(6);
  const AgentPool pool(make_mock_roster(sizes, 8, 3));
  auto adapters = adapters_for(pool.roster(), 8, rng);
  const auto queries = queries_for(pool.roster(), 8, rng);
  const Matrix x1 = testing::random_matrix(4, 8, rng);
  const Matrix w = testing::random_matrix(8, 1, rng);
  const std::string before = pool.frozen_digest();

  Matrix& target = adapters[0][1].in_weight;
  Matrix grad(target.rows(), target.cols());
  auto objective = [&](ParamBinder& bind) {
    ad::Var y = moa_forward(bind, bind.tape().constant_view(x1), pool, queries, adapters, nullptr);
    return ad::sum(ad::matmul(y, bind.tape().constant(w)));
  };
  {
    ad::Tape tape;
    ParamBinder bind(tape, {{&target, &grad}});
    tape.backward(objective(bind));
  }
  const Matrix numeric = testing::numeric_gradient(target, [&] {
    ad::Tape tape;
    ParamBinder bind(tape);
    return objective(bind).value()(0, 0);
  });
  CHECK(squared_norm(grad) > 0);
  CHECK(max_abs_diff(grad, numeric) < 1e-5);
  CHECK(pool.frozen_digest() == before);
}
