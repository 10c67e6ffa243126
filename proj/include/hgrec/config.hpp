#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "hgrec/model.hpp"
#include "hgrec/training.hpp"

namespace hgrec {

/// Fully merged configuration of one command. Resolution order: built-in defaults, then the
/// run config stored in a checkpoint (eval and recommend), then --config, then flags.
struct RunConfig {
  // data
  std::string data;
  char delimiter = ',';
  bool skip_header = false;
  bool lenient = false;
  std::size_t min_count = 5;
  std::int64_t window = 86400;
  std::string target = "buy";
  std::size_t eval_negatives = 99;

  // model
  std::size_t dim = 128;
  std::size_t conv_layers = 2;
  int hops = 1;
  std::vector<std::size_t> layers = {3, 3, 1};
  /// "mock", "remote:<url>" or "@<roster.json>".
  std::string agents = "mock";
  /// Agent hidden width; 0 means dim.
  std::size_t d_agent = 0;
  std::string prompt_template = std::string(kDefaultPromptTemplate);

  // training
  std::size_t epochs = 10;
  double lr = 5e-4;
  std::size_t warmup = 500;
  double lambda = 1e-5;
  std::size_t negatives = 4;
  std::size_t batch_size = 32;
  std::size_t validation_interval = 1;

  // paths and command arguments
  std::string prices;
  std::string out = "hgrec-out";
  std::string checkpoint;
  std::string log;
  std::string variants = "no_encoder,single_agent,layers_1,layers_2,layers_3";
  std::size_t k = 5;
  std::string user;

  std::uint64_t seed = 0;

  void validate() const;

  /// Named sub-seeds of the top-level seed.
  std::uint64_t split_seed() const;
  std::uint64_t init_seed() const;
  std::uint64_t agent_seed() const;
  std::uint64_t train_seed() const;

  DataConfig data_config() const;
  TrainConfig train_config() const;
  /// n_users / n_items are filled by the caller from the prepared data.
  ModelConfig model_config(std::size_t n_users, std::size_t n_items) const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Applies every key present in `j` on top of `c`. Unknown keys fail with a UsageError naming them.
void apply_json(RunConfig& c, const nlohmann::json& j);

/// Keys that hold paths or per-invocation arguments; excluded from checkpoint provenance so
/// outputs do not depend on where files live.
nlohmann::json reproducible_subset(const RunConfig& c);

/// "3,3,1" -> {3, 3, 1}; "none" or "" -> {}.
std::vector<std::size_t> parse_layer_list(const std::string& text);
std::string format_layer_list(const std::vector<std::size_t>& layers);

/// Builds the agent roster from the --agents spec and the layer sizes.
AgentRoster resolve_roster(const RunConfig& c);

}  // namespace hgrec
