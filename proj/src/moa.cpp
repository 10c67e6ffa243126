#include "hgrec/moa.hpp"

#include <chrono>
#include <cmath>
#include <future>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "hgrec/digest.hpp"
#include "hgrec/error.hpp"
#include "hgrec/random.hpp"

namespace hgrec {

std::string AgentSpec::price_key() const {
  if (!label.empty()) return label;
  return kind == AgentKind::remote ? endpoint : std::string("mock");
}

void AgentSpec::validate() const {
  if (d_agent < 1) throw InvalidArgument("agent d_agent must be >= 1");
  if (kind == AgentKind::remote && endpoint.empty()) {
    throw InvalidArgument("remote agent (" + std::to_string(layer) + ", " + std::to_string(index) +
                          ") has no endpoint");
  }
  if (kind == AgentKind::mock && !endpoint.empty()) {
    throw InvalidArgument("mock agent (" + std::to_string(layer) + ", " + std::to_string(index) +
                          ") must not carry an endpoint");
  }
}

AgentRoster make_mock_roster(std::span<const std::size_t> layer_sizes, std::size_t d_agent,
                             std::uint64_t seed) {
  AgentRoster roster;
  for (std::size_t i = 0; i < layer_sizes.size(); ++i) {
    std::vector<AgentSpec> layer;
    for (std::size_t j = 0; j < layer_sizes[i]; ++j) {
      AgentSpec a;
      a.kind = AgentKind::mock;
      a.layer = static_cast<int>(i + 1);
      a.index = static_cast<int>(j + 1);
      a.d_agent = d_agent;
      a.mock_seed = derive_seed(seed, (static_cast<std::uint64_t>(i) << 32) | j);
      layer.push_back(a);
    }
    roster.push_back(std::move(layer));
  }
  return roster;
}

AgentRoster make_remote_roster(std::span<const std::size_t> layer_sizes, std::size_t d_agent,
                               const std::string& endpoint) {
  AgentRoster roster;
  for (std::size_t i = 0; i < layer_sizes.size(); ++i) {
    std::vector<AgentSpec> layer;
    for (std::size_t j = 0; j < layer_sizes[i]; ++j) {
      AgentSpec a;
      a.kind = AgentKind::remote;
      a.layer = static_cast<int>(i + 1);
      a.index = static_cast<int>(j + 1);
      a.d_agent = d_agent;
      a.endpoint = endpoint;
      layer.push_back(a);
    }
    roster.push_back(std::move(layer));
  }
  return roster;
}

MockAgentParams MockAgentParams::generate(std::uint64_t seed, std::size_t d) {
  Rng rng(seed);
  MockAgentParams p;
  p.wq = xavier_uniform(d, d, rng);
  p.wk = xavier_uniform(d, d, rng);
  p.wv = xavier_uniform(d, d, rng);
  p.wo = xavier_uniform(d, d, rng);
  p.ln1_gain = Matrix(1, d);
  p.ln1_bias = Matrix(1, d);
  for (std::size_t j = 0; j < d; ++j) {
    p.ln1_gain(0, j) = 1.0 + rng.normal(0.0, 0.05);
    p.ln1_bias(0, j) = rng.normal(0.0, 0.05);
  }
  p.ff_w1 = xavier_uniform(d, 4 * d, rng);
  p.ff_b1 = normal_matrix(1, 4 * d, 0.02, rng);
  p.ff_w2 = xavier_uniform(4 * d, d, rng);
  p.ff_b2 = normal_matrix(1, d, 0.02, rng);
  p.ln2_gain = Matrix(1, d);
  p.ln2_bias = Matrix(1, d);
  for (std::size_t j = 0; j < d; ++j) {
    p.ln2_gain(0, j) = 1.0 + rng.normal(0.0, 0.05);
    p.ln2_bias(0, j) = rng.normal(0.0, 0.05);
  }
  return p;
}

std::string MockAgentParams::digest() const {
  Sha256 h;
  for (const Matrix* m : {&wq, &wk, &wv, &wo, &ln1_gain, &ln1_bias, &ff_w1, &ff_b1, &ff_w2, &ff_b2,
                          &ln2_gain, &ln2_bias}) {
    h.update(*m);
  }
  return to_hex(h.finish());
}

void CostLog::append(CallRecord record) {
  std::lock_guard lock(mutex_);
  records_.push_back(std::move(record));
}

std::vector<CallRecord> CostLog::records() const {
  std::lock_guard lock(mutex_);
  return records_;
}

std::size_t CostLog::size() const {
  std::lock_guard lock(mutex_);
  return records_.size();
}

void CostLog::clear() {
  std::lock_guard lock(mutex_);
  records_.clear();
}

void CostLog::write_jsonl(std::ostream& out) const {
  for (const auto& r : records()) {
    nlohmann::json j = {{"layer", r.layer},         {"agent", r.agent},
                        {"tokens_in", r.tokens_in}, {"tokens_out", r.tokens_out},
                        {"latency_ms", r.latency_ms}, {"endpoint", r.endpoint}};
    out << j.dump() << '\n';
  }
}

std::vector<CallRecord> CostLog::read_jsonl(std::istream& in) {
  std::vector<CallRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      CallRecord r;
      r.layer = j.at("layer").get<int>();
      r.agent = j.at("agent").get<int>();
      r.tokens_in = j.at("tokens_in").get<std::size_t>();
      r.tokens_out = j.at("tokens_out").get<std::size_t>();
      r.latency_ms = j.at("latency_ms").get<double>();
      r.endpoint = j.value("endpoint", std::string("mock"));
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, "record", std::string("bad cost log record: ") + e.what());
    }
  }
  return out;
}

AgentPool::AgentPool(AgentRoster roster, RemoteOptions remote)
    : roster_(std::move(roster)), remote_(std::move(remote)) {
  for (std::size_t i = 0; i < roster_.size(); ++i) {
    if (roster_[i].empty()) throw InvalidArgument("MoA layer " + std::to_string(i + 1) + " has no agents");
    std::vector<MockAgentParams> layer;
    for (const auto& a : roster_[i]) {
      a.validate();
      layer.push_back(a.kind == AgentKind::mock ? MockAgentParams::generate(a.mock_seed, a.d_agent)
                                                : MockAgentParams{});
    }
    mock_.push_back(std::move(layer));
  }
}

const MockAgentParams& AgentPool::mock_weights(std::size_t layer, std::size_t index) const {
  return mock_.at(layer).at(index);
}

bool AgentPool::all_mock() const {
  for (const auto& layer : roster_)
    for (const auto& a : layer)
      if (a.kind != AgentKind::mock) return false;
  return true;
}

std::size_t AgentPool::total_agents() const {
  std::size_t n = 0;
  for (const auto& layer : roster_) n += layer.size();
  return n;
}

std::string AgentPool::frozen_digest() const {
  Sha256 h;
  for (std::size_t i = 0; i < roster_.size(); ++i) {
    for (std::size_t j = 0; j < roster_[i].size(); ++j) {
      if (roster_[i][j].kind == AgentKind::mock) h.update(mock_[i][j].digest());
    }
  }
  return to_hex(h.finish());
}

std::vector<std::vector<GradientRoute>> stop_gradient_policy(const AgentRoster& roster) {
  std::vector<std::vector<GradientRoute>> plan;
  for (const auto& layer : roster) {
    std::vector<GradientRoute> routes;
    for (const auto& a : layer) {
      routes.push_back(a.kind == AgentKind::mock ? GradientRoute::through_agent
                                                 : GradientRoute::residual_only);
    }
    plan.push_back(std::move(routes));
  }
  return plan;
}

ad::Var apply_adapter_in(ParamBinder& bind, ad::Var x, const AdapterParams& adapter) {
  return ad::add_row(ad::matmul(x, bind(adapter.in_weight)), bind(adapter.in_bias));
}

ad::Var apply_adapter_out(ParamBinder& bind, ad::Var x, const AdapterParams& adapter) {
  return ad::add_row(ad::matmul(x, bind(adapter.out_weight)), bind(adapter.out_bias));
}

namespace {

constexpr double kAgentLnEpsilon = 1e-5;

ad::Var frozen_block(ParamBinder& bind, ad::Var x, const MockAgentParams& w) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(x.cols()));
  ad::Var q = ad::matmul(x, bind(w.wq));
  ad::Var k = ad::matmul(x, bind(w.wk));
  ad::Var v = ad::matmul(x, bind(w.wv));
  ad::Var attn = ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), inv_sqrt_d));
  ad::Var mixed = ad::matmul(ad::matmul(attn, v), bind(w.wo));
  ad::Var h = ad::layer_norm_rows(ad::add(x, mixed), bind(w.ln1_gain), bind(w.ln1_bias),
                                  kAgentLnEpsilon);
  ad::Var hidden = ad::relu(ad::add_row(ad::matmul(h, bind(w.ff_w1)), bind(w.ff_b1)));
  ad::Var ff = ad::add_row(ad::matmul(hidden, bind(w.ff_w2)), bind(w.ff_b2));
  return ad::layer_norm_rows(ad::add(h, ff), bind(w.ln2_gain), bind(w.ln2_bias), kAgentLnEpsilon);
}

void require_finite(const Matrix& m, const AgentSpec& agent) {
  if (!m.all_finite()) {
    throw NumericalError("non-finite output from agent (" + std::to_string(agent.layer) + ", " +
                         std::to_string(agent.index) + ")");
  }
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

ad::Var mock_agent_forward(ParamBinder& bind, ad::Var x, const AgentSpec& agent,
                           const MockAgentParams& weights, const AdapterParams& adapter) {
  if (agent.kind != AgentKind::mock) throw InvalidArgument("mock_agent_forward on a remote agent");
  ad::Var inner = apply_adapter_in(bind, x, adapter);
  if (!agent.bypass_block) inner = frozen_block(bind, inner, weights);
  ad::Var out = apply_adapter_out(bind, inner, adapter);
  require_finite(out.value(), agent);
  return out;
}

Matrix mock_agent_forward(const Matrix& x, const AgentSpec& agent, const MockAgentParams& weights,
                          const AdapterParams& adapter) {
  ad::Tape tape;
  ParamBinder bind(tape);
  return mock_agent_forward(bind, tape.constant_view(x), agent, weights, adapter).value();
}

ad::Var remote_agent_forward(ParamBinder& bind, ad::Var x, const AgentSpec& agent,
                             const AdapterParams& adapter, const RemoteOptions& options,
                             CostLog* log) {
  if (agent.kind != AgentKind::remote) throw InvalidArgument("remote_agent_forward on a mock agent");
  const Matrix request = apply_adapter_in(bind, x, adapter).value();
  const auto start = std::chrono::steady_clock::now();
  Matrix response = call_remote_agent(request, agent, options);
  const double latency = elapsed_ms(start);
  if (log != nullptr) {
    log->append({agent.layer, agent.index, agent.price_key(), request.rows(), response.rows(), latency});
  }
  ad::Var out = apply_adapter_out(bind, bind.tape().constant(std::move(response)), adapter);
  require_finite(out.value(), agent);
  return out;
}

namespace {

Matrix aggregation_forward(const std::vector<const Matrix*>& outs, const Matrix& q, Matrix& beta) {
  const std::size_t n = outs.size();
  const std::size_t s = outs.front()->rows();
  const std::size_t d = outs.front()->cols();
  if (q.rows() != 1 || q.cols() != d) {
    throw ShapeError("aggregation query " + shape_string(q) + " for agent width " + std::to_string(d));
  }
  for (const Matrix* o : outs) {
    if (!o->same_shape(*outs.front())) {
      throw ShapeError("agent outputs disagree in shape: " + shape_string(*o) + " vs " +
                       shape_string(*outs.front()));
    }
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  beta = Matrix(s, n);
  Matrix result(s, d);
  for (std::size_t t = 0; t < s; ++t) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      double score = 0.0;
      for (std::size_t c = 0; c < d; ++c) score += q(0, c) * (*outs[j])(t, c);
      beta(t, j) = score * inv_sqrt_d;
      mx = std::max(mx, beta(t, j));
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      beta(t, j) = std::exp(beta(t, j) - mx);
      total += beta(t, j);
    }
    for (std::size_t j = 0; j < n; ++j) beta(t, j) /= total;
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t c = 0; c < d; ++c) result(t, c) += beta(t, j) * (*outs[j])(t, c);
    }
  }
  return result;
}

}  // namespace

AggregationVars aggregate_agents(std::span<const ad::Var> outputs, ad::Var query) {
  if (outputs.empty()) throw InvalidArgument("aggregate_agents needs at least one agent output");
  ad::Tape& tape = *query.tape();
  std::vector<const Matrix*> values;
  std::vector<std::size_t> ids;
  bool needs = query.requires_grad();
  for (const auto& o : outputs) {
    if (o.tape() != &tape) throw InvalidArgument("operands recorded on different tapes");
    values.push_back(&o.value());
    ids.push_back(o.id());
    needs = needs || o.requires_grad();
  }
  Matrix beta;
  Matrix result = aggregation_forward(values, query.value(), beta);
  const std::size_t iq = query.id();
  ad::Var out = tape.record(std::move(result), needs, [ids, iq, beta](ad::Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    const Matrix& q = tp.value(iq);
    const std::size_t s = g.rows(), d = g.cols(), n = ids.size();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    Matrix dscore(s, n);
    for (std::size_t t = 0; t < s; ++t) {
      double weighted = 0.0;
      std::vector<double> dbeta(n);
      for (std::size_t j = 0; j < n; ++j) {
        const Matrix& o = tp.value(ids[j]);
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) acc += g(t, c) * o(t, c);
        dbeta[j] = acc;
        weighted += beta(t, j) * acc;
      }
      for (std::size_t j = 0; j < n; ++j) dscore(t, j) = beta(t, j) * (dbeta[j] - weighted);
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (!tp.requires_grad(ids[j])) continue;
      Matrix& go = tp.grad(ids[j]);
      for (std::size_t t = 0; t < s; ++t) {
        for (std::size_t c = 0; c < d; ++c) {
          go(t, c) += beta(t, j) * g(t, c) + dscore(t, j) * q(0, c) * inv_sqrt_d;
        }
      }
    }
    if (tp.requires_grad(iq)) {
      Matrix& gq = tp.grad(iq);
      for (std::size_t j = 0; j < n; ++j) {
        const Matrix& o = tp.value(ids[j]);
        for (std::size_t t = 0; t < s; ++t)
          for (std::size_t c = 0; c < d; ++c) gq(0, c) += dscore(t, j) * o(t, c) * inv_sqrt_d;
      }
    }
  });
  return {out, std::move(beta)};
}

Aggregation aggregate_agents(std::span<const Matrix> outputs, const Matrix& query) {
  if (outputs.empty()) throw InvalidArgument("aggregate_agents needs at least one agent output");
  std::vector<const Matrix*> values;
  for (const auto& o : outputs) values.push_back(&o);
  Aggregation agg;
  agg.result = aggregation_forward(values, query, agg.weights);
  return agg;
}

ad::Var moa_layer(ParamBinder& bind, ad::Var x, ad::Var x1, const MoALayerView& layer, CostLog* log) {
  if (!x.value().same_shape(x1.value())) {
    throw ShapeError("moa_layer: x_i " + shape_string(x.value()) + " vs x_1 " +
                     shape_string(x1.value()));
  }
  const std::size_t n = layer.agents.size();
  if (n == 0 || layer.adapters.size() != n) throw InvalidArgument("moa_layer: agents and adapters misaligned");
  std::vector<ad::Var> outputs(n);

  // Remote calls for the layer run concurrently, at most max_in_flight at once.
  struct Pending {
    std::size_t slot;
    Matrix request;
    std::future<Matrix> response;
    std::chrono::steady_clock::time_point start;
  };
  std::vector<Pending> remote;
  for (std::size_t j = 0; j < n; ++j) {
    if (layer.agents[j].kind == AgentKind::remote) {
      remote.push_back({j, apply_adapter_in(bind, x, layer.adapters[j]).value(), {}, {}});
    }
  }
  const RemoteOptions& options = layer.pool->remote();
  const std::size_t cap = std::max<std::size_t>(1, options.max_in_flight);
  std::vector<double> latency(n, 0.0);
  std::vector<Matrix> responses(n);
  for (std::size_t begin = 0; begin < remote.size(); begin += cap) {
    const std::size_t end = std::min(remote.size(), begin + cap);
    for (std::size_t r = begin; r < end; ++r) {
      auto& p = remote[r];
      p.start = std::chrono::steady_clock::now();
      p.response = std::async(std::launch::async, call_remote_agent, std::cref(p.request),
                              std::cref(layer.agents[p.slot]), std::cref(options));
    }
    for (std::size_t r = begin; r < end; ++r) {
      auto& p = remote[r];
      responses[p.slot] = p.response.get();
      latency[p.slot] = elapsed_ms(p.start);
    }
  }

  for (std::size_t j = 0; j < n; ++j) {
    const AgentSpec& agent = layer.agents[j];
    const auto start = std::chrono::steady_clock::now();
    if (agent.kind == AgentKind::mock) {
      outputs[j] = mock_agent_forward(bind, x, agent, layer.pool->mock_weights(layer.layer, j),
                                      layer.adapters[j]);
      latency[j] = elapsed_ms(start);
    } else {
      const std::size_t rows = responses[j].rows();
      outputs[j] = apply_adapter_out(bind, bind.tape().constant(std::move(responses[j])),
                                     layer.adapters[j]);
      require_finite(outputs[j].value(), agent);
      responses[j] = Matrix(rows, 0);
    }
    if (log != nullptr) {
      log->append({agent.layer, agent.index, agent.price_key(), x.rows(), outputs[j].rows(),
                   latency[j]});
    }
  }
  auto agg = aggregate_agents(outputs, bind(*layer.query));
  return ad::add(agg.result, x1);
}

ad::Var moa_forward(ParamBinder& bind, ad::Var x1, const AgentPool& pool,
                    std::span<const Matrix> queries,
                    const std::vector<std::vector<AdapterParams>>& adapters, CostLog* log) {
  const auto& roster = pool.roster();
  if (queries.size() != roster.size() || adapters.size() != roster.size()) {
    throw InvalidArgument("MoA parameters do not match the agent roster: " +
                          std::to_string(roster.size()) + " layers, " +
                          std::to_string(queries.size()) + " queries, " +
                          std::to_string(adapters.size()) + " adapter layers");
  }
  ad::Var x = x1;
  for (std::size_t i = 0; i < roster.size(); ++i) {
    MoALayerView view{roster[i], adapters[i], &queries[i], &pool, i};
    x = moa_layer(bind, x, x1, view, log);
  }
  return x;
}

ad::Var score_items(ParamBinder& bind, ad::Var moa_out, std::span<const std::uint32_t> items,
                    const Matrix& head, const Matrix& item_table) {
  if (items.empty()) throw InvalidArgument("score_items needs at least one candidate");
  std::vector<std::size_t> rows;
  rows.reserve(items.size());
  for (std::uint32_t i : items) {
    if (i >= item_table.rows()) throw InvalidArgument("unknown item index " + std::to_string(i));
    rows.push_back(i);
  }
  ad::Var z = ad::mean_rows(moa_out);
  ad::Var projected = ad::matmul_nt(z, bind(head));
  ad::Var candidates = ad::gather_rows(bind(item_table), rows);
  return ad::sigmoid(ad::matmul_nt(projected, candidates));
}

}  // namespace hgrec
