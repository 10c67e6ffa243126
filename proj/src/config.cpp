#include "hgrec/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "hgrec/error.hpp"
#include "hgrec/random.hpp"

namespace hgrec {

void RunConfig::validate() const {
  if (!parse_behaviour(target)) throw UsageError("target", "unknown behaviour \"" + target + "\"");
  if (min_count < 1) throw UsageError("min_count", "must be >= 1");
  if (window < 0) throw UsageError("window", "must be >= 0 seconds");
  if (eval_negatives < 1) throw UsageError("eval_negatives", "must be >= 1");
  if (dim < 2 || dim % 2 != 0) throw UsageError("dim", "must be even and >= 2, got " + std::to_string(dim));
  if (hops != 1 && hops != 2) throw UsageError("hops", "must be 1 or 2");
  for (std::size_t s : layers) {
    if (s < 1) throw UsageError("layers", "every MoA layer needs at least one agent");
  }
  if (!(lr > 0.0)) throw UsageError("lr", "must be > 0");
  if (lambda < 0.0) throw UsageError("lambda", "must be >= 0");
  if (negatives < 1) throw UsageError("negatives", "must be >= 1");
  if (batch_size < 1) throw UsageError("batch_size", "must be >= 1");
  if (k < 1) throw UsageError("k", "must be >= 1");
  if (agents != "mock" && agents.rfind("remote:", 0) != 0 && agents.rfind("@", 0) != 0) {
    throw UsageError("agents", "expected mock, remote:<url> or @<roster.json>, got \"" + agents + "\"");
  }
}

std::uint64_t RunConfig::split_seed() const { return derive_seed(seed, "split"); }
std::uint64_t RunConfig::init_seed() const { return derive_seed(seed, "init"); }
std::uint64_t RunConfig::agent_seed() const { return derive_seed(seed, "agents"); }
std::uint64_t RunConfig::train_seed() const { return derive_seed(seed, "train"); }

DataConfig RunConfig::data_config() const {
  DataConfig d;
  d.min_count = min_count;
  d.window_seconds = window;
  d.split.target_behaviour = *parse_behaviour(target);
  d.split.n_negatives = eval_negatives;
  d.split.seed = split_seed();
  return d;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.learning_rate = lr;
  t.warmup_steps = warmup;
  t.weight_decay = lambda;
  t.negatives = negatives;
  t.batch_size = batch_size;
  t.epochs = epochs;
  t.seed = train_seed();
  t.validation_interval = validation_interval;
  return t;
}

ModelConfig RunConfig::model_config(std::size_t n_users, std::size_t n_items) const {
  ModelConfig m;
  m.d = dim;
  m.n_users = n_users;
  m.n_items = n_items;
  m.conv_layers = conv_layers;
  m.hops = hops;
  m.prompt_template = prompt_template;
  m.prompt_k = static_cast<int>(k);
  m.roster = resolve_roster(*this);
  return m;
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"data", c.data},
                     {"delimiter", std::string(1, c.delimiter)},
                     {"skip_header", c.skip_header},
                     {"lenient", c.lenient},
                     {"min_count", c.min_count},
                     {"window", c.window},
                     {"target", c.target},
                     {"eval_negatives", c.eval_negatives},
                     {"dim", c.dim},
                     {"conv_layers", c.conv_layers},
                     {"hops", c.hops},
                     {"layers", c.layers},
                     {"agents", c.agents},
                     {"d_agent", c.d_agent},
                     {"prompt_template", c.prompt_template},
                     {"epochs", c.epochs},
                     {"lr", c.lr},
                     {"warmup", c.warmup},
                     {"lambda", c.lambda},
                     {"negatives", c.negatives},
                     {"batch_size", c.batch_size},
                     {"validation_interval", c.validation_interval},
                     {"prices", c.prices},
                     {"out", c.out},
                     {"checkpoint", c.checkpoint},
                     {"log", c.log},
                     {"variants", c.variants},
                     {"k", c.k},
                     {"user", c.user},
                     {"seed", c.seed}};
}

namespace {

template <class T>
std::function<void(RunConfig&, const nlohmann::json&)> setter(T RunConfig::*field) {
  return [field](RunConfig& c, const nlohmann::json& v) { c.*field = v.get<T>(); };
}

const std::map<std::string, std::function<void(RunConfig&, const nlohmann::json&)>>& setters() {
  static const std::map<std::string, std::function<void(RunConfig&, const nlohmann::json&)>> table = {
      {"data", setter(&RunConfig::data)},
      {"delimiter",
       [](RunConfig& c, const nlohmann::json& v) {
         const auto s = v.get<std::string>();
         if (s.size() != 1) throw UsageError("delimiter", "must be a single character");
         c.delimiter = s[0];
       }},
      {"skip_header", setter(&RunConfig::skip_header)},
      {"lenient", setter(&RunConfig::lenient)},
      {"min_count", setter(&RunConfig::min_count)},
      {"window", setter(&RunConfig::window)},
      {"target", setter(&RunConfig::target)},
      {"eval_negatives", setter(&RunConfig::eval_negatives)},
      {"dim", setter(&RunConfig::dim)},
      {"conv_layers", setter(&RunConfig::conv_layers)},
      {"hops", setter(&RunConfig::hops)},
      {"layers",
       [](RunConfig& c, const nlohmann::json& v) {
         c.layers = v.is_string() ? parse_layer_list(v.get<std::string>())
                                  : v.get<std::vector<std::size_t>>();
       }},
      {"agents", setter(&RunConfig::agents)},
      {"d_agent", setter(&RunConfig::d_agent)},
      {"prompt_template", setter(&RunConfig::prompt_template)},
      {"epochs", setter(&RunConfig::epochs)},
      {"lr", setter(&RunConfig::lr)},
      {"warmup", setter(&RunConfig::warmup)},
      {"lambda", setter(&RunConfig::lambda)},
      {"negatives", setter(&RunConfig::negatives)},
      {"batch_size", setter(&RunConfig::batch_size)},
      {"validation_interval", setter(&RunConfig::validation_interval)},
      {"prices", setter(&RunConfig::prices)},
      {"out", setter(&RunConfig::out)},
      {"checkpoint", setter(&RunConfig::checkpoint)},
      {"log", setter(&RunConfig::log)},
      {"variants", setter(&RunConfig::variants)},
      {"k", setter(&RunConfig::k)},
      {"user", setter(&RunConfig::user)},
      {"seed", setter(&RunConfig::seed)},
  };
  return table;
}

}  // namespace

void apply_json(RunConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw UsageError("config", "configuration must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const auto it = setters().find(key);
    if (it == setters().end()) throw UsageError(key, "unknown configuration key");
    try {
      it->second(c, value);
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(key, std::string("bad value: ") + e.what());
    }
  }
}

nlohmann::json reproducible_subset(const RunConfig& c) {
  nlohmann::json j = c;
  for (const char* key : {"data", "prices", "out", "checkpoint", "log", "variants", "user"}) j.erase(key);
  return j;
}

std::vector<std::size_t> parse_layer_list(const std::string& text) {
  std::vector<std::size_t> out;
  if (text.empty() || text == "none") return out;
  std::stringstream s(text);
  std::string piece;
  while (std::getline(s, piece, ',')) {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(piece, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != piece.size() || v < 1) {
      throw UsageError("layers", "expected a comma list of positive layer sizes, got \"" + text + "\"");
    }
    out.push_back(v);
  }
  return out;
}

std::string format_layer_list(const std::vector<std::size_t>& layers) {
  std::string out;
  for (std::size_t i = 0; i < layers.size(); ++i) out += (i ? "," : "") + std::to_string(layers[i]);
  return out.empty() ? "none" : out;
}

AgentRoster resolve_roster(const RunConfig& c) {
  const std::size_t d_agent = c.d_agent == 0 ? c.dim : c.d_agent;
  if (c.agents == "mock") return make_mock_roster(c.layers, d_agent, c.agent_seed());
  if (c.agents.rfind("remote:", 0) == 0) {
    const std::string url = c.agents.substr(7);
    if (url.empty()) throw UsageError("agents", "remote agent needs a URL");
    return make_remote_roster(c.layers, d_agent, url);
  }
  const std::string path = c.agents.substr(1);
  std::ifstream in(path);
  if (!in) throw UsageError("agents", "cannot open roster file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("agents", "roster file is not JSON: " + std::string(e.what()));
  }
  if (!j.is_array()) throw UsageError("agents", "roster file must hold an array of layers");
  AgentRoster roster;
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_array() || j[i].empty()) throw UsageError("agents", "roster layer " + std::to_string(i + 1) + " must be a non-empty array");
    std::vector<AgentSpec> layer;
    for (std::size_t a = 0; a < j[i].size(); ++a) {
      AgentSpec spec;
      try {
        spec = j[i][a].get<AgentSpec>();
      } catch (const std::exception& e) {
        throw UsageError("agents", "bad roster entry: " + std::string(e.what()));
      }
      spec.layer = static_cast<int>(i + 1);
      spec.index = static_cast<int>(a + 1);
      if (spec.d_agent == 0) spec.d_agent = d_agent;
      if (spec.kind == AgentKind::mock && !j[i][a].contains("mock_seed")) {
        spec.mock_seed = derive_seed(c.agent_seed(), (static_cast<std::uint64_t>(i) << 32) | a);
      }
      layer.push_back(spec);
    }
    roster.push_back(std::move(layer));
  }
  return roster;
}

}  // namespace hgrec
