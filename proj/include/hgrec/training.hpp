#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hgrec/data.hpp"
#include "hgrec/hypergraph.hpp"
#include "hgrec/model.hpp"

namespace hgrec {

struct TrainConfig {
  double learning_rate = 5e-4;
  std::size_t warmup_steps = 500;
  double weight_decay = 1e-5;  // lambda
  std::size_t negatives = 4;   // M per positive per behaviour
  std::size_t batch_size = 32;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Validation HR@5/NDCG@5 every this many epochs (and always after the last); 0 disables.
  std::size_t validation_interval = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// ---- data preparation ----

struct DataConfig {
  std::size_t min_count = 5;
  std::int64_t window_seconds = 86400;
  /// seed drives test candidates; validation candidates use a sub-seed of it.
  SplitSpec split;
};

struct PreparedData {
  Dataset filtered;
  SplitResult split;  // validation and test carry candidate sets
  Hypergraph graph;   // built from split.train only
};

PreparedData prepare_data(const Dataset& raw, const DataConfig& config);

// ---- loss ----

inline constexpr double kProbabilityClamp = 1e-7;

struct Prediction {
  double probability = 0.5;
  double label = 0.0;
  Behaviour behaviour = Behaviour::buy;
};

struct LossValue {
  double total = 0.0;
  double data = 0.0;     // mean BCE over entries
  double penalty = 0.0;  // lambda * ||Theta||^2
  std::size_t entries = 0;
  std::size_t clamp_count = 0;
};

/// Mean binary cross-entropy + lambda * theta_squared_norm. Probabilities are clamped to
/// [1e-7, 1 - 1e-7] and every clamp is counted.
LossValue compute_loss(std::span<const Prediction> predictions, double theta_squared_norm,
                       double lambda);
LossValue compute_loss(std::span<const Prediction> predictions, const ModelParams& theta,
                       double lambda);

/// 1 x 1 sum of BCE over a 1 x c probability row. The backward pass evaluates the derivative at
/// the clamped probability.
ad::Var bce_sum(ad::Var probabilities, std::span<const double> labels, std::size_t* clamp_count);

// ---- examples ----

struct BehaviourGroup {
  Behaviour behaviour = Behaviour::buy;
  std::vector<std::uint32_t> items;
  std::vector<double> labels;
};

/// Every entry scored for one user in one step.
struct UserSample {
  std::uint32_t user = 0;
  std::vector<BehaviourGroup> groups;

  std::size_t entries() const;
};

/// Per user and behaviour: each distinct train positive plus `negatives` items drawn uniformly
/// with replacement from items the user never touched in train. Users sorted by index.
std::vector<UserSample> sample_training_examples(const Dataset& train, std::size_t negatives,
                                                 std::uint64_t seed);

// ---- gradients ----

struct BatchResult {
  double data_loss_sum = 0.0;
  std::size_t entries = 0;
  std::size_t clamp_count = 0;

  double mean_loss() const { return entries == 0 ? 0.0 : data_loss_sum / static_cast<double>(entries); }
};

/// Forward and backward over `batch` in the order given, adding d(mean BCE)/d(Theta) to
/// `grads`. The weight-decay term is not included; AdamW applies it directly.
BatchResult accumulate_gradients(const Model& model, const Hypergraph& graph,
                                 std::span<const UserSample> batch, ModelParams& grads,
                                 CostLog* log = nullptr);

/// Forward-only mean BCE (+ lambda ||Theta||^2).
LossValue evaluate_objective(const Model& model, const Hypergraph& graph,
                             std::span<const UserSample> samples, double lambda);

/// Throws NumericalError naming the first block holding a non-finite entry.
void check_gradients_finite(const ModelParams& grads);

// ---- optimiser ----

struct AdamState {
  ModelParams m;
  ModelParams v;

  static AdamState for_params(const ModelParams& params);
};

/// base_lr * min(1, step / warmup_steps); warmup 0 means no warm-up.
double effective_learning_rate(const TrainConfig& config, std::size_t step);

/// One AdamW update at 1-based `step`: decoupled decay theta -= lr * lambda * theta, then the
/// bias-corrected Adam step.
void adamw_step(ModelParams& params, const ModelParams& grads, AdamState& state,
                const TrainConfig& config, std::size_t step);

// ---- training loop ----

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  std::size_t clamp_count = 0;
  double val_hr5 = 0.0;
  double val_ndcg5 = 0.0;
  double wall_ms = 0.0;
};

void to_json(nlohmann::json& j, const EpochRecord& r);

struct TrainResult {
  Model model;
  std::vector<EpochRecord> log;
  std::size_t steps = 0;
  bool diverged = false;
  std::string divergence;
};

/// Seeded user-batch training. Each record of the epoch log is also written to `log_out` as
/// one JSON line when given. On divergence the last finite model is returned.
TrainResult train(Model model, const Hypergraph& graph, const Dataset& train_set,
                  std::span<const EvalInstance> validation, const TrainConfig& config,
                  std::ostream* log_out = nullptr, CostLog* cost = nullptr);

// ---- gradient check ----

struct GradCheckOptions {
  double epsilon = 1e-4;
  std::size_t n_coords = 200;
  std::uint64_t seed = 0;
  double lambda = 0.0;
  double tolerance = 1e-3;
  /// Lower bound of the relative-error denominator, so coordinates whose true gradient is
  /// zero are judged on absolute error.
  double denominator_floor = 1e-7;
};

/// A coordinate is "kinked" when its +-epsilon stencil flips the sign of some ReLU input; the
/// central difference is then not an estimate of the derivative at all. Pass rates and error
/// statistics count smooth coordinates only; raw_passed keeps the unfiltered count.
struct BlockCheck {
  std::string name;
  std::size_t sampled = 0;
  std::size_t kinked = 0;
  std::size_t passed = 0;
  std::size_t raw_passed = 0;
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;

  std::size_t smooth() const { return sampled - kinked; }
  double pass_rate() const { return smooth() == 0 ? 1.0 : static_cast<double>(passed) / smooth(); }
  double raw_pass_rate() const { return sampled == 0 ? 1.0 : static_cast<double>(raw_passed) / sampled; }
};

struct GradCheckReport {
  std::vector<BlockCheck> blocks;
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
  double pass_rate = 1.0;
  double raw_pass_rate = 1.0;
  std::size_t kinked = 0;
  double min_block_pass_rate = 1.0;
};

void to_json(nlohmann::json& j, const GradCheckReport& r);

/// Central differences on up to n_coords sampled coordinates of every Theta block against the
/// reverse-mode gradient of evaluate_objective. Mock agents only.
GradCheckReport grad_check(const Model& model, const Hypergraph& graph,
                           std::span<const UserSample> samples, const GradCheckOptions& options);

}  // namespace hgrec
