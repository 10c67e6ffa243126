#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hgrec/eval.hpp"
#include "hgrec/model.hpp"
#include "hgrec/training.hpp"

namespace hgrec {

enum class Variant { full, no_encoder, single_agent, layers_1, layers_2, layers_3 };

inline constexpr std::size_t kDefaultLayerWidth = 3;

std::string_view variant_name(Variant v);
std::optional<Variant> parse_variant(std::string_view name);
/// Comma-separated list; throws InvalidArgument naming an unknown label.
std::vector<Variant> parse_variant_list(std::string_view list);

/// Everything but the variant's own change is taken from `base`:
///   no_encoder   graph tokens replaced by zeros (roster unchanged)
///   single_agent one agent at twice the hidden width, a single larger frozen model
///   layers_n     n - 1 intermediate layers of width 3 plus the final single aggregator
/// Mock agent (i, j) keeps the same seed in every variant.
ModelConfig variant_config(const ModelConfig& base, Variant v, std::uint64_t agent_seed);

struct VariantResult {
  Variant variant = Variant::full;
  std::string label;
  std::string config_digest;
  EvalReport report;
  std::vector<EpochRecord> log;
  /// Agent calls per user forward.
  std::size_t calls_per_forward = 0;
  std::optional<TTestResult> hr5_vs_full;
  std::optional<TTestResult> ndcg5_vs_full;
};

struct AblationOptions {
  ModelConfig base;
  TrainConfig train;
  std::uint64_t init_seed = 0;
  std::uint64_t agent_seed = 0;
};

/// Trains and evaluates the full model plus every requested variant on the same data and seeds.
/// The first result is always the full model. Variants whose resolved config equals an earlier
/// one reuse its result.
std::vector<VariantResult> run_ablation(const PreparedData& data, const AblationOptions& options,
                                        std::span<const Variant> variants,
                                        std::ostream* progress = nullptr);

void write_ablation_summary(std::span<const VariantResult> results, std::ostream& out);

}  // namespace hgrec
