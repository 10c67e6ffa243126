#pragma once

#include <array>
#include <span>
#include <vector>

#include "hgrec/autodiff.hpp"
#include "hgrec/hypergraph.hpp"
#include "hgrec/matrix.hpp"
#include "hgrec/param_binder.hpp"

namespace hgrec {

/// Learnable user and item embeddings, one row per dense index.
struct EmbeddingTables {
  Matrix users;
  Matrix items;

  std::size_t dim() const noexcept { return users.cols(); }
};

/// One hypergraph convolution layer: weight (d x d) followed by ReLU and affine LayerNorm.
struct ConvLayerParams {
  Matrix weight;
  Matrix ln_gain;
  Matrix ln_bias;
  double ln_epsilon = 1e-5;
};

/// Attention readout: score_v = a . tanh(W_a h_v), then a two-layer ReLU MLP on the pooled row.
struct ReadoutParams {
  Matrix attn_weight;  // d x d
  Matrix attn_vector;  // 1 x d
  Matrix mlp_w1;       // d x d
  Matrix mlp_b1;       // 1 x d
  Matrix mlp_w2;       // d x d
  Matrix mlp_b2;       // 1 x d
};

/// Graph-token slots: 0 is the global readout, 1 + behaviour_index(b) the per-behaviour ones.
inline constexpr std::size_t kGraphTokenCount = kBehaviourCount + 1;

struct GraphTokens {
  Matrix tokens;  // k x d
  /// absent[slot] is set when the slot had no nodes and its row is zero.
  std::array<bool, kGraphTokenCount> absent{};
};

struct ReadoutOutput {
  Matrix token;    // 1 x d
  Matrix weights;  // 1 x |subset|
};

// Tape-level building blocks used by the training path.

ad::Var init_features(ParamBinder& bind, const EgoGraph& ego, const EmbeddingTables& tables);

/// Per node: m_v = sum over incident hyperedges e of mean(h_u, u in e); out = LN(ReLU(m_v W)).
ad::Var hypergraph_conv(ParamBinder& bind, ad::Var features, const EgoGraph& ego,
                        const ConvLayerParams& params);

ad::Var encode(ParamBinder& bind, const EgoGraph& ego, const EmbeddingTables& tables,
               std::span<const ConvLayerParams> layers);

struct ReadoutVars {
  ad::Var token;
  Matrix weights;
};

ReadoutVars adaptive_readout(ParamBinder& bind, ad::Var features,
                             std::span<const NodeIndex> subset, const ReadoutParams& params);

struct GraphTokenVars {
  ad::Var tokens;
  std::array<bool, kGraphTokenCount> absent{};
};

/// `slots` holds kGraphTokenCount readouts.
GraphTokenVars generate_graph_tokens(ParamBinder& bind, const EgoGraph& ego, ad::Var encoded,
                                     std::span<const ReadoutParams> slots);

// Value-level wrappers.

Matrix init_features(const EgoGraph& ego, const EmbeddingTables& tables);
Matrix hypergraph_conv(const Matrix& features, const EgoGraph& ego, const ConvLayerParams& params);
Matrix encode(const EgoGraph& ego, const EmbeddingTables& tables,
              std::span<const ConvLayerParams> layers);
ReadoutOutput adaptive_readout(const Matrix& features, std::span<const NodeIndex> subset,
                               const ReadoutParams& params);
GraphTokens generate_graph_tokens(const EgoGraph& ego, const Matrix& encoded,
                                  std::span<const ReadoutParams> slots);

}  // namespace hgrec
