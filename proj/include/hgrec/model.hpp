#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hgrec/autodiff.hpp"
#include "hgrec/encoder.hpp"
#include "hgrec/fusion.hpp"
#include "hgrec/hypergraph.hpp"
#include "hgrec/moa.hpp"
#include "hgrec/param_binder.hpp"

namespace hgrec {

/// Architecture of one model. Everything needed to rebuild it from a checkpoint.
struct ModelConfig {
  std::size_t d = 128;
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::size_t conv_layers = 2;
  int hops = 1;
  /// false replaces graph tokens with zeros of the same shape.
  bool use_encoder = true;
  std::string prompt_template = std::string(kDefaultPromptTemplate);
  int prompt_k = 5;
  AgentRoster roster;

  std::vector<std::size_t> layer_sizes() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const AgentSpec& a);
void from_json(const nlohmann::json& j, AgentSpec& a);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Theta: every trainable block. Frozen mock-agent weights live in the AgentPool instead.
struct ModelParams {
  EmbeddingTables tables;
  std::vector<ConvLayerParams> conv;
  std::vector<ReadoutParams> readout;  // kGraphTokenCount slots
  Matrix prompt_embedding;
  std::vector<Matrix> queries;  // one 1 x d row per MoA layer
  std::vector<std::vector<AdapterParams>> adapters;
  std::array<Matrix, kBehaviourCount> heads;

  /// Named blocks in a fixed order. The order is the checkpoint and gradient-reduction order.
  std::vector<std::pair<std::string, Matrix*>> blocks();
  std::vector<std::pair<std::string, const Matrix*>> blocks() const;

  /// Same layout, every entry zero.
  ModelParams zeros_like() const;
  double squared_norm() const;
  std::size_t parameter_count() const;
};

/// Draws Theta: embeddings N(0, 0.02), weight matrices and attention vectors Xavier-uniform,
/// biases zero, LayerNorm gain 1 / bias 0, adapters identity when d_agent = d.
ModelParams init_model_params(const ModelConfig& config, std::size_t vocab_size, std::uint64_t seed);

struct Model {
  ModelConfig config;
  PromptVocab vocab;
  ModelParams params;
  AgentPool pool;

  /// Builds vocab and agent pool from the config and draws fresh parameters.
  static Model create(ModelConfig config, std::uint64_t init_seed, RemoteOptions remote = {});
  /// Rebuilds the agent pool after config or remote options change.
  void rebuild_pool(RemoteOptions remote = {});
};

/// Intermediate values of one user's forward pass.
struct UserForward {
  ad::Var graph_tokens;  // k x d
  std::array<bool, kGraphTokenCount> absent{};
  ad::Var prompt;        // m x d
  ad::Var fused;         // (k + m) x d
  ad::Var moa_out;       // (k + m) x d
};

/// ego -> encode -> graph tokens -> prompt -> fuse -> MoA for one user.
UserForward forward_user(ParamBinder& bind, const Model& model, const Hypergraph& graph,
                         std::uint32_t user, CostLog* log);

/// Probabilities for `items` under behaviour `b`, 1 x |items|.
ad::Var score_behaviour(ParamBinder& bind, const Model& model, const UserForward& forward,
                        Behaviour b, std::span<const std::uint32_t> items);

/// Forward-only convenience: scores of `items` for one user.
std::vector<double> score_user_items(const Model& model, const Hypergraph& graph,
                                     std::uint32_t user, Behaviour b,
                                     std::span<const std::uint32_t> items, CostLog* log = nullptr);

/// Maps each Theta block to its gradient block for a ParamBinder.
std::unordered_map<const Matrix*, Matrix*> gradient_sinks(const ModelParams& params,
                                                          ModelParams& grads);

/// SHA-256 over the resolved model config JSON.
std::string config_digest(const ModelConfig& config);

}  // namespace hgrec
