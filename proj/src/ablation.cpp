#include "hgrec/ablation.hpp"

#include <iomanip>
#include <ostream>
#include <sstream>

#include "hgrec/error.hpp"

namespace hgrec {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_encoder: return "no_encoder";
    case Variant::single_agent: return "single_agent";
    case Variant::layers_1: return "layers_1";
    case Variant::layers_2: return "layers_2";
    case Variant::layers_3: return "layers_3";
  }
  return "?";
}

std::optional<Variant> parse_variant(std::string_view name) {
  for (Variant v : {Variant::full, Variant::no_encoder, Variant::single_agent, Variant::layers_1,
                    Variant::layers_2, Variant::layers_3}) {
    if (variant_name(v) == name) return v;
  }
  return std::nullopt;
}

std::vector<Variant> parse_variant_list(std::string_view list) {
  std::vector<Variant> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    const auto comma = list.find(',', start);
    const auto piece = list.substr(start, comma == std::string_view::npos ? list.npos : comma - start);
    if (!piece.empty()) {
      const auto v = parse_variant(piece);
      if (!v) throw InvalidArgument("unknown ablation variant \"" + std::string(piece) + "\"");
      out.push_back(*v);
    }
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (out.empty()) throw InvalidArgument("no ablation variants given");
  return out;
}

ModelConfig variant_config(const ModelConfig& base, Variant v, std::uint64_t agent_seed) {
  ModelConfig cfg = base;
  const std::size_t d_agent =
      base.roster.empty() || base.roster.front().empty() ? base.d : base.roster.front().front().d_agent;
  auto layers = [&](std::size_t n) {
    std::vector<std::size_t> sizes(n == 0 ? 0 : n - 1, kDefaultLayerWidth);
    if (n > 0) sizes.push_back(1);
    return sizes;
  };
  switch (v) {
    case Variant::full:
      break;
    case Variant::no_encoder:
      cfg.use_encoder = false;
      break;
    case Variant::single_agent: {
      const std::vector<std::size_t> one = {1};
      cfg.roster = make_mock_roster(one, 2 * d_agent, agent_seed);
      break;
    }
    case Variant::layers_1:
    case Variant::layers_2:
    case Variant::layers_3: {
      const std::size_t n = v == Variant::layers_1 ? 1 : v == Variant::layers_2 ? 2 : 3;
      cfg.roster = make_mock_roster(layers(n), d_agent, agent_seed);
      break;
    }
  }
  return cfg;
}

std::vector<VariantResult> run_ablation(const PreparedData& data, const AblationOptions& options,
                                        std::span<const Variant> variants, std::ostream* progress) {
  std::vector<Variant> plan = {Variant::full};
  for (Variant v : variants) {
    if (v != Variant::full) plan.push_back(v);
  }
  std::vector<VariantResult> results;
  for (Variant v : plan) {
    VariantResult r;
    r.variant = v;
    r.label = std::string(variant_name(v));
    const ModelConfig cfg = variant_config(options.base, v, options.agent_seed);
    r.config_digest = config_digest(cfg);
    r.calls_per_forward = 0;
    for (const auto& layer : cfg.roster) r.calls_per_forward += layer.size();

    const VariantResult* cached = nullptr;
    for (const auto& done : results) {
      if (done.config_digest == r.config_digest) cached = &done;
    }
    if (cached != nullptr) {
      r.report = cached->report;
      r.log = cached->log;
    } else {
      if (progress != nullptr) *progress << "training variant " << r.label << '\n';
      auto trained = train(Model::create(cfg, options.init_seed), data.graph, data.split.train,
                           data.split.validation, options.train);
      if (trained.diverged) {
        throw NumericalError("variant " + r.label + " diverged: " + trained.divergence);
      }
      r.log = std::move(trained.log);
      r.report = evaluate(trained.model, data.graph, data.split.test, nullptr, &data.filtered);
    }
    r.report.label = r.label;
    r.report.config_digest = r.config_digest;
    if (!results.empty() && r.report.count() >= 2) {
      const auto& full = results.front().report;
      r.hr5_vs_full = paired_t_test(r.report.column(&EvalRow::hr5), full.column(&EvalRow::hr5));
      r.ndcg5_vs_full = paired_t_test(r.report.column(&EvalRow::ndcg5), full.column(&EvalRow::ndcg5));
    }
    results.push_back(std::move(r));
  }
  return results;
}

void write_ablation_summary(std::span<const VariantResult> results, std::ostream& out) {
  std::ostringstream s;
  s << std::left << std::setw(14) << "variant" << std::right << std::setw(7) << "calls"
    << std::setw(9) << "HR@5" << std::setw(9) << "HR@10" << std::setw(9) << "NDCG@5"
    << std::setw(9) << "NDCG@10" << std::setw(12) << "p(HR@5)" << std::setw(12) << "p(NDCG@5)" << '\n';
  s << std::fixed;
  for (const auto& r : results) {
    s << std::left << std::setw(14) << r.label << std::right << std::setw(7) << r.calls_per_forward
      << std::setprecision(4) << std::setw(9) << r.report.hr5 << std::setw(9) << r.report.hr10
      << std::setw(9) << r.report.ndcg5 << std::setw(9) << r.report.ndcg10;
    if (r.hr5_vs_full) {
      s << std::setw(12) << r.hr5_vs_full->p_two_sided << std::setw(12) << r.ndcg5_vs_full->p_two_sided;
    } else {
      s << std::setw(12) << "-" << std::setw(12) << "-";
    }
    s << '\n';
  }
  // Layer-count trend, informational only.
  const VariantResult* layer_runs[3] = {nullptr, nullptr, nullptr};
  for (const auto& r : results) {
    if (r.variant == Variant::layers_1) layer_runs[0] = &r;
    if (r.variant == Variant::layers_2) layer_runs[1] = &r;
    if (r.variant == Variant::layers_3) layer_runs[2] = &r;
  }
  if (layer_runs[0] && layer_runs[1] && layer_runs[2]) {
    const bool monotone = layer_runs[0]->report.hr5 <= layer_runs[1]->report.hr5 &&
                          layer_runs[1]->report.hr5 <= layer_runs[2]->report.hr5;
    s << "layer-count HR@5 trend: " << (monotone ? "non-decreasing" : "not monotone") << '\n';
  }
  out << s.str();
}

}  // namespace hgrec
