#pragma once

#include <cstdint>
#include <iosfwd>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "hgrec/autodiff.hpp"
#include "hgrec/matrix.hpp"
#include "hgrec/param_binder.hpp"

namespace hgrec {

enum class AgentKind { mock, remote };

/// One agent A(i, j). `layer` and `index` are 1-based.
struct AgentSpec {
  AgentKind kind = AgentKind::mock;
  int layer = 1;
  int index = 1;
  /// Hidden width the agent operates at; adapters map d <-> d_agent.
  std::size_t d_agent = 0;

  // mock
  std::uint64_t mock_seed = 0;
  /// Test hook: skip the frozen block so the agent is adapter_out(adapter_in(x)).
  bool bypass_block = false;

  // remote
  std::string endpoint;
  int timeout_ms = 30000;
  int retries = 2;

  /// Price-table key; defaults to the endpoint URL for remote agents and "mock" otherwise.
  std::string label;

  std::string price_key() const;
  void validate() const;

  friend bool operator==(const AgentSpec&, const AgentSpec&) = default;
};

/// roster[i][j] is agent (i + 1, j + 1).
using AgentRoster = std::vector<std::vector<AgentSpec>>;

AgentRoster make_mock_roster(std::span<const std::size_t> layer_sizes, std::size_t d_agent,
                             std::uint64_t seed);
AgentRoster make_remote_roster(std::span<const std::size_t> layer_sizes, std::size_t d_agent,
                               const std::string& endpoint);

/// Trainable affine maps around an agent: in (d -> d_agent), out (d_agent -> d).
struct AdapterParams {
  Matrix in_weight;
  Matrix in_bias;
  Matrix out_weight;
  Matrix out_bias;
};

/// Frozen single-head transformer block drawn from the agent's seed (post-LN):
/// h = LN1(x + Attn(x)), out = LN2(h + FFN(h)) with FFN d -> 4d -> d.
struct MockAgentParams {
  Matrix wq, wk, wv, wo;
  Matrix ln1_gain, ln1_bias;
  Matrix ff_w1, ff_b1, ff_w2, ff_b2;
  Matrix ln2_gain, ln2_bias;

  static MockAgentParams generate(std::uint64_t seed, std::size_t d_agent);
  std::string digest() const;
};

/// One record per agent call.
struct CallRecord {
  int layer = 0;
  int agent = 0;
  std::string endpoint;
  std::size_t tokens_in = 0;
  std::size_t tokens_out = 0;
  double latency_ms = 0.0;
};

/// Append-only, thread-safe call log. Serialised as line-delimited JSON.
class CostLog {
 public:
  void append(CallRecord record);
  std::vector<CallRecord> records() const;
  std::size_t size() const;
  void clear();

  void write_jsonl(std::ostream& out) const;
  static std::vector<CallRecord> read_jsonl(std::istream& in);

 private:
  mutable std::mutex mutex_;
  std::vector<CallRecord> records_;
};

struct RemoteOptions {
  /// Sent as a bearer token when non-empty.
  std::string auth_token;
  std::size_t max_in_flight = 4;
};

/// Roster plus the frozen weights of every mock agent. Immutable after construction.
class AgentPool {
 public:
  AgentPool() = default;
  explicit AgentPool(AgentRoster roster, RemoteOptions remote = {});

  const AgentRoster& roster() const noexcept { return roster_; }
  std::size_t layer_count() const noexcept { return roster_.size(); }
  const MockAgentParams& mock_weights(std::size_t layer, std::size_t index) const;
  const RemoteOptions& remote() const noexcept { return remote_; }
  bool all_mock() const;
  std::size_t total_agents() const;
  /// Digest over all frozen mock weights.
  std::string frozen_digest() const;

 private:
  AgentRoster roster_;
  std::vector<std::vector<MockAgentParams>> mock_;
  RemoteOptions remote_;
};

enum class GradientRoute { through_agent, residual_only };

/// Mock agents pass gradient through their frozen block to the adapters and upstream. Remote
/// agents are constants: their branch carries no gradient to adapter_in or below, while the
/// residual x_1 path still does.
std::vector<std::vector<GradientRoute>> stop_gradient_policy(const AgentRoster& roster);

ad::Var apply_adapter_in(ParamBinder& bind, ad::Var x, const AdapterParams& adapter);
ad::Var apply_adapter_out(ParamBinder& bind, ad::Var x, const AdapterParams& adapter);

ad::Var mock_agent_forward(ParamBinder& bind, ad::Var x, const AgentSpec& agent,
                           const MockAgentParams& weights, const AdapterParams& adapter);
Matrix mock_agent_forward(const Matrix& x, const AgentSpec& agent, const MockAgentParams& weights,
                          const AdapterParams& adapter);

/// POSTs `tokens` (s x d_agent) and returns the s x d_agent response. Retries transport,
/// timeout and 5xx failures `agent.retries` times.
Matrix call_remote_agent(const Matrix& tokens, const AgentSpec& agent, const RemoteOptions& options);

/// adapter_out(remote(adapter_in(x))) with the remote response recorded as a constant.
ad::Var remote_agent_forward(ParamBinder& bind, ad::Var x, const AgentSpec& agent,
                             const AdapterParams& adapter, const RemoteOptions& options,
                             CostLog* log);

struct AggregationVars {
  ad::Var result;
  Matrix weights;  // s x n, row t holds the softmax over agents for token t
};

/// Token-wise attention over agents: beta_j[t] = softmax_j(q . o_j[t] / sqrt(d)).
AggregationVars aggregate_agents(std::span<const ad::Var> outputs, ad::Var query);

struct Aggregation {
  Matrix result;
  Matrix weights;
};
Aggregation aggregate_agents(std::span<const Matrix> outputs, const Matrix& query);

/// Everything one MoA layer needs beyond its input.
struct MoALayerView {
  std::span<const AgentSpec> agents;
  std::span<const AdapterParams> adapters;
  const Matrix* query;
  const AgentPool* pool;
  std::size_t layer;  // 0-based
};

/// y = aggregate(A_1(x), ..., A_n(x); q) + x_1.
ad::Var moa_layer(ParamBinder& bind, ad::Var x, ad::Var x1, const MoALayerView& layer, CostLog* log);

/// Runs every layer of the pool; zero layers returns x_1.
ad::Var moa_forward(ParamBinder& bind, ad::Var x1, const AgentPool& pool,
                    std::span<const Matrix> queries,
                    const std::vector<std::vector<AdapterParams>>& adapters, CostLog* log);

/// sigmoid((W_b z) . E_i[item]) for each candidate, z = mean over rows of moa_out. 1 x c.
ad::Var score_items(ParamBinder& bind, ad::Var moa_out, std::span<const std::uint32_t> items,
                    const Matrix& head, const Matrix& item_table);

}  // namespace hgrec
