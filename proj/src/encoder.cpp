#include "hgrec/encoder.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "hgrec/error.hpp"

namespace hgrec {
namespace {

// Sum over incident hyperedges of the hyperedge mean. The aggregation matrix is symmetric,
// so the backward pass applies the same operator to the incoming gradient.
Matrix aggregate_hyperedges(const Matrix& h, const std::vector<Hyperedge>& edges) {
  Matrix out(h.rows(), h.cols());
  std::vector<double> mean(h.cols());
  for (const auto& e : edges) {
    std::fill(mean.begin(), mean.end(), 0.0);
    for (NodeIndex u : e.nodes) {
      auto row = h.row(u);
      for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += row[j];
    }
    const double inv = 1.0 / static_cast<double>(e.nodes.size());
    for (double& v : mean) v *= inv;
    for (NodeIndex v : e.nodes) {
      auto row = out.row(v);
      for (std::size_t j = 0; j < mean.size(); ++j) row[j] += mean[j];
    }
  }
  return out;
}

ad::Var hyperedge_aggregate(ad::Var h, const EgoGraph& ego) {
  if (h.rows() != ego.n_nodes()) {
    throw ShapeError("hypergraph_conv: features have " + std::to_string(h.rows()) +
                     " rows for an ego graph of " + std::to_string(ego.n_nodes()) + " nodes");
  }
  for (const auto& e : ego.edges) {
    for (NodeIndex v : e.nodes) {
      if (v >= ego.n_nodes()) throw InvalidArgument("hyperedge node outside ego graph");
    }
  }
  const std::size_t in = h.id();
  return h.tape()->record(aggregate_hyperedges(h.value(), ego.edges), h.requires_grad(),
                          [in, edges = ego.edges](ad::Tape& tp, std::size_t self) {
                            tp.grad(in) += aggregate_hyperedges(tp.grad(self), edges);
                          });
}

ad::Var zero_row(ad::Tape& tape, std::size_t d) { return tape.constant(Matrix(1, d)); }

}  // namespace

ad::Var init_features(ParamBinder& bind, const EgoGraph& ego, const EmbeddingTables& tables) {
  std::vector<std::size_t> user_rows, item_rows;
  std::vector<std::size_t> position(ego.n_nodes());
  std::vector<NodeIndex> user_locals, item_locals;
  for (NodeIndex v = 0; v < ego.n_nodes(); ++v) {
    const NodeIndex g = ego.node_map[v];
    if (g < ego.global_users) {
      if (g >= tables.users.rows()) {
        throw InvalidArgument("ego node " + std::to_string(v) + " (user " + std::to_string(g) +
                              ") outside the user embedding table");
      }
      user_rows.push_back(g);
      user_locals.push_back(v);
    } else {
      const std::size_t item = g - ego.global_users;
      if (item >= tables.items.rows()) {
        throw InvalidArgument("ego node " + std::to_string(v) + " (item " +
                              std::to_string(item) + ") outside the item embedding table");
      }
      item_rows.push_back(item);
      item_locals.push_back(v);
    }
  }
  for (std::size_t i = 0; i < user_locals.size(); ++i) position[user_locals[i]] = i;
  for (std::size_t i = 0; i < item_locals.size(); ++i) {
    position[item_locals[i]] = user_locals.size() + i;
  }

  const ad::Var parts[2] = {ad::gather_rows(bind(tables.users), user_rows),
                            ad::gather_rows(bind(tables.items), item_rows)};
  ad::Var stacked = ad::concat_rows(parts);
  std::vector<std::size_t> identity(position.size());
  std::iota(identity.begin(), identity.end(), std::size_t{0});
  if (position == identity) return stacked;
  return ad::gather_rows(stacked, position);
}

ad::Var hypergraph_conv(ParamBinder& bind, ad::Var features, const EgoGraph& ego,
                        const ConvLayerParams& params) {
  ad::Var messages = hyperedge_aggregate(features, ego);
  ad::Var activated = ad::relu(ad::matmul(messages, bind(params.weight)));
  ad::Var out = ad::layer_norm_rows(activated, bind(params.ln_gain), bind(params.ln_bias),
                                    params.ln_epsilon);
  const Matrix& value = out.value();
  for (std::size_t v = 0; v < value.rows(); ++v) {
    for (double x : value.row(v)) {
      if (!std::isfinite(x)) {
        throw NumericalError("numerical overflow in hypergraph_conv at ego node " +
                             std::to_string(v) + " (global " + std::to_string(ego.node_map[v]) +
                             ")");
      }
    }
  }
  return out;
}

ad::Var encode(ParamBinder& bind, const EgoGraph& ego, const EmbeddingTables& tables,
               std::span<const ConvLayerParams> layers) {
  ad::Var h = init_features(bind, ego, tables);
  for (const auto& layer : layers) h = hypergraph_conv(bind, h, ego, layer);
  return h;
}

ReadoutVars adaptive_readout(ParamBinder& bind, ad::Var features,
                             std::span<const NodeIndex> subset, const ReadoutParams& params) {
  if (subset.empty()) throw InvalidArgument("empty readout set");
  std::vector<std::size_t> rows(subset.begin(), subset.end());
  for (std::size_t r : rows) {
    if (r >= features.rows()) throw InvalidArgument("readout node " + std::to_string(r) + " out of range");
  }
  ad::Var h = ad::gather_rows(features, rows);
  // Row form of a^T tanh(W_a h_v): a (1 x d) times tanh(H W_a^T)^T.
  ad::Var hidden = ad::tanh(ad::matmul_nt(h, bind(params.attn_weight)));
  ad::Var scores = ad::matmul_nt(bind(params.attn_vector), hidden);
  ad::Var alpha = ad::softmax_rows(scores);
  ad::Var pooled = ad::matmul(alpha, h);
  ad::Var mid = ad::relu(ad::add_row(ad::matmul(pooled, bind(params.mlp_w1)), bind(params.mlp_b1)));
  ad::Var token = ad::add_row(ad::matmul(mid, bind(params.mlp_w2)), bind(params.mlp_b2));
  return {token, alpha.value()};
}

GraphTokenVars generate_graph_tokens(ParamBinder& bind, const EgoGraph& ego, ad::Var encoded,
                                     std::span<const ReadoutParams> slots) {
  if (slots.size() != kGraphTokenCount) {
    throw InvalidArgument("expected " + std::to_string(kGraphTokenCount) + " readout slots, got " +
                          std::to_string(slots.size()));
  }
  if (encoded.rows() != ego.n_nodes()) throw ShapeError("encoded features not aligned with ego graph");
  GraphTokenVars out;
  std::vector<ad::Var> rows;
  std::vector<NodeIndex> everyone(ego.n_nodes());
  std::iota(everyone.begin(), everyone.end(), NodeIndex{0});
  rows.push_back(adaptive_readout(bind, encoded, everyone, slots[0]).token);
  for (Behaviour b : kAllBehaviours) {
    const std::size_t slot = 1 + behaviour_index(b);
    const auto subset = nodes_with_behaviour(ego, b);
    if (subset.empty()) {
      out.absent[slot] = true;
      rows.push_back(zero_row(bind.tape(), encoded.cols()));
    } else {
      rows.push_back(adaptive_readout(bind, encoded, subset, slots[slot]).token);
    }
  }
  out.tokens = ad::concat_rows(rows);
  return out;
}

Matrix init_features(const EgoGraph& ego, const EmbeddingTables& tables) {
  ad::Tape tape;
  ParamBinder bind(tape);
  return init_features(bind, ego, tables).value();
}

Matrix hypergraph_conv(const Matrix& features, const EgoGraph& ego, const ConvLayerParams& params) {
  ad::Tape tape;
  ParamBinder bind(tape);
  return hypergraph_conv(bind, tape.constant_view(features), ego, params).value();
}

Matrix encode(const EgoGraph& ego, const EmbeddingTables& tables,
              std::span<const ConvLayerParams> layers) {
  ad::Tape tape;
  ParamBinder bind(tape);
  return encode(bind, ego, tables, layers).value();
}

ReadoutOutput adaptive_readout(const Matrix& features, std::span<const NodeIndex> subset,
                               const ReadoutParams& params) {
  ad::Tape tape;
  ParamBinder bind(tape);
  auto r = adaptive_readout(bind, tape.constant_view(features), subset, params);
  return {r.token.value(), r.weights};
}

GraphTokens generate_graph_tokens(const EgoGraph& ego, const Matrix& encoded,
                                  std::span<const ReadoutParams> slots) {
  ad::Tape tape;
  ParamBinder bind(tape);
  auto r = generate_graph_tokens(bind, ego, tape.constant_view(encoded), slots);
  return {r.tokens.value(), r.absent};
}

}  // namespace hgrec
