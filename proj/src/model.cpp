#include "hgrec/model.hpp"

#include "hgrec/digest.hpp"
#include "hgrec/error.hpp"
#include "hgrec/random.hpp"

namespace hgrec {

std::vector<std::size_t> ModelConfig::layer_sizes() const {
  std::vector<std::size_t> sizes;
  for (const auto& layer : roster) sizes.push_back(layer.size());
  return sizes;
}

void ModelConfig::validate() const {
  if (d < 1) throw InvalidArgument("d must be >= 1");
  if (d % 2 != 0) throw InvalidArgument("dimension must be even, got " + std::to_string(d));
  if (n_users < 1 || n_items < 1) throw InvalidArgument("model needs at least one user and one item");
  if (hops != 1 && hops != 2) throw InvalidArgument("hops must be 1 or 2");
  if (prompt_k < 1) throw InvalidArgument("prompt k must be >= 1");
  for (std::size_t i = 0; i < roster.size(); ++i) {
    if (roster[i].empty()) throw InvalidArgument("MoA layer " + std::to_string(i + 1) + " has no agents");
    for (const auto& a : roster[i]) a.validate();
  }
}

void to_json(nlohmann::json& j, const AgentSpec& a) {
  j = nlohmann::json{{"kind", a.kind == AgentKind::mock ? "mock" : "remote"},
                     {"layer", a.layer},
                     {"index", a.index},
                     {"d_agent", a.d_agent}};
  if (a.kind == AgentKind::mock) {
    j["mock_seed"] = a.mock_seed;
    if (a.bypass_block) j["bypass_block"] = true;
  } else {
    j["endpoint"] = a.endpoint;
    j["timeout_ms"] = a.timeout_ms;
    j["retries"] = a.retries;
  }
  if (!a.label.empty()) j["label"] = a.label;
}

void from_json(const nlohmann::json& j, AgentSpec& a) {
  const std::string kind = j.value("kind", std::string("mock"));
  if (kind == "mock") {
    a.kind = AgentKind::mock;
  } else if (kind == "remote") {
    a.kind = AgentKind::remote;
  } else {
    throw InvalidArgument("unknown agent kind \"" + kind + "\"");
  }
  a.layer = j.value("layer", 1);
  a.index = j.value("index", 1);
  a.d_agent = j.value("d_agent", std::size_t{0});
  a.mock_seed = j.value("mock_seed", std::uint64_t{0});
  a.bypass_block = j.value("bypass_block", false);
  a.endpoint = j.value("endpoint", std::string());
  a.timeout_ms = j.value("timeout_ms", 30000);
  a.retries = j.value("retries", 2);
  a.label = j.value("label", std::string());
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"d", c.d},
                     {"n_users", c.n_users},
                     {"n_items", c.n_items},
                     {"conv_layers", c.conv_layers},
                     {"hops", c.hops},
                     {"use_encoder", c.use_encoder},
                     {"prompt_template", c.prompt_template},
                     {"prompt_k", c.prompt_k},
                     {"roster", c.roster}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.d = j.at("d").get<std::size_t>();
  c.n_users = j.at("n_users").get<std::size_t>();
  c.n_items = j.at("n_items").get<std::size_t>();
  c.conv_layers = j.at("conv_layers").get<std::size_t>();
  c.hops = j.at("hops").get<int>();
  c.use_encoder = j.at("use_encoder").get<bool>();
  c.prompt_template = j.at("prompt_template").get<std::string>();
  c.prompt_k = j.at("prompt_k").get<int>();
  c.roster = j.at("roster").get<AgentRoster>();
}

std::vector<std::pair<std::string, Matrix*>> ModelParams::blocks() {
  std::vector<std::pair<std::string, Matrix*>> out;
  out.emplace_back("user_embedding", &tables.users);
  out.emplace_back("item_embedding", &tables.items);
  for (std::size_t l = 0; l < conv.size(); ++l) {
    const std::string p = "conv." + std::to_string(l) + ".";
    out.emplace_back(p + "weight", &conv[l].weight);
    out.emplace_back(p + "ln_gain", &conv[l].ln_gain);
    out.emplace_back(p + "ln_bias", &conv[l].ln_bias);
  }
  for (std::size_t s = 0; s < readout.size(); ++s) {
    const std::string p = "readout." + std::to_string(s) + ".";
    out.emplace_back(p + "attn_weight", &readout[s].attn_weight);
    out.emplace_back(p + "attn_vector", &readout[s].attn_vector);
    out.emplace_back(p + "mlp_w1", &readout[s].mlp_w1);
    out.emplace_back(p + "mlp_b1", &readout[s].mlp_b1);
    out.emplace_back(p + "mlp_w2", &readout[s].mlp_w2);
    out.emplace_back(p + "mlp_b2", &readout[s].mlp_b2);
  }
  out.emplace_back("prompt_embedding", &prompt_embedding);
  for (std::size_t i = 0; i < queries.size(); ++i) {
    out.emplace_back("moa." + std::to_string(i) + ".query", &queries[i]);
  }
  for (std::size_t i = 0; i < adapters.size(); ++i) {
    for (std::size_t j = 0; j < adapters[i].size(); ++j) {
      const std::string p = "moa." + std::to_string(i) + ".agent." + std::to_string(j) + ".";
      out.emplace_back(p + "in_weight", &adapters[i][j].in_weight);
      out.emplace_back(p + "in_bias", &adapters[i][j].in_bias);
      out.emplace_back(p + "out_weight", &adapters[i][j].out_weight);
      out.emplace_back(p + "out_bias", &adapters[i][j].out_bias);
    }
  }
  for (Behaviour b : kAllBehaviours) {
    out.emplace_back("head." + std::string(behaviour_name(b)), &heads[behaviour_index(b)]);
  }
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> ModelParams::blocks() const {
  auto mutable_blocks = const_cast<ModelParams*>(this)->blocks();
  std::vector<std::pair<std::string, const Matrix*>> out;
  out.reserve(mutable_blocks.size());
  for (auto& [name, m] : mutable_blocks) out.emplace_back(std::move(name), m);
  return out;
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  for (auto& [name, m] : z.blocks()) m->fill(0.0);
  return z;
}

double ModelParams::squared_norm() const {
  double total = 0.0;
  for (const auto& [name, m] : blocks()) total += hgrec::squared_norm(*m);
  return total;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, m] : blocks()) n += m->size();
  return n;
}

namespace {

Matrix ones_row(std::size_t d) { return Matrix(1, d, 1.0); }

AdapterParams init_adapter(std::size_t d, std::size_t d_agent, Rng& rng) {
  AdapterParams a;
  if (d_agent == d) {
    a.in_weight = Matrix::identity(d);
    a.out_weight = Matrix::identity(d);
  } else {
    a.in_weight = xavier_uniform(d, d_agent, rng);
    a.out_weight = xavier_uniform(d_agent, d, rng);
  }
  a.in_bias = Matrix(1, d_agent);
  a.out_bias = Matrix(1, d);
  return a;
}

}  // namespace

ModelParams init_model_params(const ModelConfig& config, std::size_t vocab_size, std::uint64_t seed) {
  config.validate();
  const std::size_t d = config.d;
  Rng rng(seed);
  ModelParams p;
  p.tables.users = normal_matrix(config.n_users, d, 0.02, rng);
  p.tables.items = normal_matrix(config.n_items, d, 0.02, rng);
  for (std::size_t l = 0; l < config.conv_layers; ++l) {
    p.conv.push_back({xavier_uniform(d, d, rng), ones_row(d), Matrix(1, d), 1e-5});
  }
  for (std::size_t s = 0; s < kGraphTokenCount; ++s) {
    ReadoutParams r;
    r.attn_weight = xavier_uniform(d, d, rng);
    r.attn_vector = xavier_uniform(1, d, rng);
    r.mlp_w1 = xavier_uniform(d, d, rng);
    r.mlp_b1 = Matrix(1, d);
    r.mlp_w2 = xavier_uniform(d, d, rng);
    r.mlp_b2 = Matrix(1, d);
    p.readout.push_back(std::move(r));
  }
  p.prompt_embedding = normal_matrix(vocab_size, d, 0.02, rng);
  for (const auto& layer : config.roster) {
    p.queries.push_back(xavier_uniform(1, d, rng));
    std::vector<AdapterParams> adapters;
    for (const auto& agent : layer) adapters.push_back(init_adapter(d, agent.d_agent, rng));
    p.adapters.push_back(std::move(adapters));
  }
  for (auto& head : p.heads) head = xavier_uniform(d, d, rng);
  return p;
}

Model Model::create(ModelConfig config, std::uint64_t init_seed, RemoteOptions remote) {
  config.validate();
  Model m;
  m.config = std::move(config);
  m.vocab = PromptVocab::from_template(m.config.prompt_template);
  m.params = init_model_params(m.config, m.vocab.size(), init_seed);
  m.rebuild_pool(std::move(remote));
  return m;
}

void Model::rebuild_pool(RemoteOptions remote) { pool = AgentPool(config.roster, std::move(remote)); }

UserForward forward_user(ParamBinder& bind, const Model& model, const Hypergraph& graph,
                         std::uint32_t user, CostLog* log) {
  const ModelConfig& cfg = model.config;
  const ModelParams& theta = model.params;
  if (user >= graph.n_users()) throw InvalidArgument("unknown user index " + std::to_string(user));
  UserForward f;
  if (cfg.use_encoder) {
    const EgoGraph ego = ego_subgraph(graph, graph.user_node(user), cfg.hops);
    ad::Var encoded = encode(bind, ego, theta.tables, theta.conv);
    auto tokens = generate_graph_tokens(bind, ego, encoded, theta.readout);
    f.graph_tokens = tokens.tokens;
    f.absent = tokens.absent;
  } else {
    f.graph_tokens = bind.tape().constant(Matrix(kGraphTokenCount, cfg.d));
    f.absent.fill(true);
  }
  const auto ids = tokenize_prompt_ids(render_prompt(cfg.prompt_template, cfg.prompt_k), model.vocab);
  const std::vector<std::size_t> rows(ids.begin(), ids.end());
  f.prompt = ad::gather_rows(bind(theta.prompt_embedding), rows);
  f.fused = fuse_tokens(f.graph_tokens, f.prompt);
  f.moa_out = moa_forward(bind, f.fused, model.pool, theta.queries, theta.adapters, log);
  return f;
}

ad::Var score_behaviour(ParamBinder& bind, const Model& model, const UserForward& forward,
                        Behaviour b, std::span<const std::uint32_t> items) {
  return score_items(bind, forward.moa_out, items, model.params.heads[behaviour_index(b)],
                     model.params.tables.items);
}

std::vector<double> score_user_items(const Model& model, const Hypergraph& graph,
                                     std::uint32_t user, Behaviour b,
                                     std::span<const std::uint32_t> items, CostLog* log) {
  ad::Tape tape;
  ParamBinder bind(tape);
  const auto f = forward_user(bind, model, graph, user, log);
  const Matrix& s = score_behaviour(bind, model, f, b, items).value();
  return {s.values().begin(), s.values().end()};
}

std::unordered_map<const Matrix*, Matrix*> gradient_sinks(const ModelParams& params,
                                                          ModelParams& grads) {
  auto p = params.blocks();
  auto g = grads.blocks();
  if (p.size() != g.size()) throw InvalidArgument("gradient layout does not match parameters");
  std::unordered_map<const Matrix*, Matrix*> sinks;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!p[i].second->same_shape(*g[i].second)) {
      throw ShapeError("gradient block " + g[i].first + " has shape " + shape_string(*g[i].second));
    }
    sinks.emplace(p[i].second, g[i].second);
  }
  return sinks;
}

std::string config_digest(const ModelConfig& config) {
  return sha256_hex(nlohmann::json(config).dump());
}

}  // namespace hgrec
