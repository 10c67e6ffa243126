#include "hgrec/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <tuple>

#include <CLI11.hpp>
#include <json.hpp>

#include "hgrec/ablation.hpp"
#include "hgrec/checkpoint.hpp"
#include "hgrec/config.hpp"
#include "hgrec/digest.hpp"
#include "hgrec/error.hpp"
#include "hgrec/eval.hpp"
#include "hgrec/synthetic.hpp"
#include "hgrec/training.hpp"

namespace hgrec::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

enum class FlagType { string, integer, unsigned_integer, real, boolean, layers };

struct FlagDef {
  const char* flag;
  const char* key;
  FlagType type;
  const char* help;
};

// Every command accepts the same flags; each command reads only the ones it needs.
constexpr FlagDef kFlags[] = {
    {"--data", "data", FlagType::string, "interaction log (user,item,behaviour,timestamp)"},
    {"--delimiter", "delimiter", FlagType::string, "field delimiter of the log"},
    {"--skip-header", "skip_header", FlagType::boolean, "skip the first line of the log"},
    {"--lenient", "lenient", FlagType::boolean, "skip malformed lines instead of failing"},
    {"--min-count", "min_count", FlagType::unsigned_integer, "minimum interactions per user and item"},
    {"--window", "window", FlagType::integer, "hyperedge time window in seconds (0 = none)"},
    {"--target", "target", FlagType::string, "evaluated behaviour"},
    {"--eval-negatives", "eval_negatives", FlagType::unsigned_integer, "sampled negatives per test case"},
    {"--dim", "dim", FlagType::unsigned_integer, "embedding dimension d"},
    {"--conv-layers", "conv_layers", FlagType::unsigned_integer, "hypergraph convolution layers"},
    {"--hops", "hops", FlagType::integer, "ego graph radius (1 or 2)"},
    {"--layers", "layers", FlagType::layers, "MoA layer sizes, e.g. 3,3,1 (or none)"},
    {"--agents", "agents", FlagType::string, "mock | remote:<url> | @roster.json"},
    {"--d-agent", "d_agent", FlagType::unsigned_integer, "agent hidden width (0 = d)"},
    {"--prompt-template", "prompt_template", FlagType::string, "task prompt template"},
    {"--epochs", "epochs", FlagType::unsigned_integer, "training epochs"},
    {"--lr", "lr", FlagType::real, "base learning rate"},
    {"--warmup", "warmup", FlagType::unsigned_integer, "linear warm-up steps"},
    {"--lambda", "lambda", FlagType::real, "weight decay"},
    {"--negatives", "negatives", FlagType::unsigned_integer, "training negatives per positive"},
    {"--batch-size", "batch_size", FlagType::unsigned_integer, "users per optimiser step"},
    {"--validation-interval", "validation_interval", FlagType::unsigned_integer, "epochs between validation runs (0 = never)"},
    {"--prices", "prices", FlagType::string, "price table (prices.toml)"},
    {"--out", "out", FlagType::string, "output directory"},
    {"--checkpoint", "checkpoint", FlagType::string, "checkpoint file"},
    {"--log", "log", FlagType::string, "cost log (line-delimited JSON)"},
    {"--variants", "variants", FlagType::string, "ablation variants, comma separated"},
    {"--k", "k", FlagType::unsigned_integer, "list length / prompt K"},
    {"--user", "user", FlagType::string, "user id"},
    {"--seed", "seed", FlagType::unsigned_integer, "top-level seed"},
};

json flag_value(const FlagDef& def, const std::string& text) {
  try {
    switch (def.type) {
      case FlagType::string: return text;
      case FlagType::integer: {
        std::size_t used = 0;
        const long long v = std::stoll(text, &used);
        if (used != text.size()) break;
        return v;
      }
      case FlagType::unsigned_integer: {
        std::size_t used = 0;
        if (!text.empty() && text[0] == '-') break;
        const unsigned long long v = std::stoull(text, &used);
        if (used != text.size()) break;
        return v;
      }
      case FlagType::real: {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) break;
        return v;
      }
      case FlagType::boolean: return true;
      case FlagType::layers: return parse_layer_list(text);
    }
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception&) {
  }
  throw UsageError(def.key, "bad value \"" + text + "\" for " + def.flag);
}

struct Invocation {
  std::string command;
  std::string config_file;
  json flags = json::object();
  double epsilon = 1e-4;
  std::size_t coords = 200;
};

RemoteOptions remote_options() {
  RemoteOptions r;
  if (const char* token = std::getenv("HGREC_AGENT_TOKEN")) r.auth_token = token;
  return r;
}

// defaults < base (checkpoint) < config file < flags
RunConfig resolve(const Invocation& inv, const json* base = nullptr) {
  RunConfig cfg;
  if (base != nullptr && base->is_object()) apply_json(cfg, *base);
  if (!inv.config_file.empty()) {
    std::ifstream in(inv.config_file);
    if (!in) throw UsageError("config", "cannot open " + inv.config_file);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw UsageError("config", inv.config_file + " is not JSON: " + e.what());
    }
    apply_json(cfg, j);
  }
  apply_json(cfg, inv.flags);
  if (cfg.agents.rfind("@", 0) == 0) {
    // A roster file fixes the layer layout itself.
    const auto roster = resolve_roster(cfg);
    std::vector<std::size_t> sizes;
    for (const auto& layer : roster) sizes.push_back(layer.size());
    if (inv.flags.contains("layers") && inv.flags["layers"].get<std::vector<std::size_t>>() != sizes) {
      throw UsageError("layers", "conflicts with the layer layout of roster " + cfg.agents.substr(1));
    }
    cfg.layers = sizes;
  }
  cfg.validate();
  return cfg;
}

void require(const std::string& value, const char* key) {
  if (value.empty()) throw UsageError(key, std::string("required for this command"));
}

fs::path output_dir(const RunConfig& cfg) {
  require(cfg.out, "out");
  std::error_code ec;
  fs::create_directories(cfg.out, ec);
  if (ec) throw UsageError("out", "cannot create " + cfg.out + ": " + ec.message());
  return fs::path(cfg.out);
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("out", "cannot write " + path.string());
  return out;
}

std::string input_digest(const std::string& path, const char* key) {
  if (!fs::exists(path)) throw UsageError(key, "file not found: " + path);
  return file_sha256_hex(path);
}

// Resolved configuration and digests of every input file.
void write_provenance(const fs::path& dir, const RunConfig& cfg,
                      const std::vector<std::pair<const char*, std::string>>& inputs) {
  open_output(dir / "resolved_config.json") << json(cfg).dump(2) << '\n';
  json digests = json::object();
  for (const auto& [key, path] : inputs) {
    if (path.empty()) continue;
    digests[key] = {{"path", path}, {"sha256", input_digest(path, key)}};
  }
  open_output(dir / "inputs.json") << digests.dump(2) << '\n';
}

Dataset load_dataset(const RunConfig& cfg) {
  require(cfg.data, "data");
  std::ifstream in(cfg.data);
  if (!in) throw UsageError("data", "cannot open " + cfg.data);
  ParseOptions opts;
  opts.delimiter = cfg.delimiter;
  opts.skip_header = cfg.skip_header;
  opts.lenient = cfg.lenient;
  return Dataset(parse_interactions(in, opts).records);
}

void check_data_matches(const PreparedData& data, const ModelConfig& model) {
  if (data.filtered.n_users() != model.n_users || data.filtered.n_items() != model.n_items) {
    throw UsageError("data", "prepared dataset has " + std::to_string(data.filtered.n_users()) +
                                 " users and " + std::to_string(data.filtered.n_items()) +
                                 " items; the checkpoint expects " + std::to_string(model.n_users) +
                                 " and " + std::to_string(model.n_items));
  }
}

json instance_json(const EvalInstance& inst, const Dataset& ds) {
  json candidates = json::array();
  for (auto c : inst.candidates) candidates.push_back(ds.item_id(c));
  return {{"user", ds.user_id(inst.user)},
          {"positive", ds.item_id(inst.positive)},
          {"behaviour", behaviour_name(inst.behaviour)},
          {"timestamp", inst.timestamp},
          {"candidates", candidates}};
}

// ---- commands ----

int cmd_prep(const Invocation& inv, std::ostream& out) {
  const RunConfig cfg = resolve(inv);
  const auto data = prepare_data(load_dataset(cfg), cfg.data_config());
  const auto dir = output_dir(cfg);
  const std::string report = format_split_report(data.split.report);
  open_output(dir / "split_report.txt") << report;
  {
    auto f = open_output(dir / "hypergraph.tsv");
    dump_hypergraph(data.graph, f);
  }
  const auto stats = incidence_stats(data.graph);
  open_output(dir / "hypergraph_stats.json")
      << json{{"n_users", stats.n_users},        {"n_items", stats.n_items},
              {"n_hyperedges", stats.n_hyperedges}, {"interactions", stats.interactions},
              {"mean_edge_size", stats.mean_edge_size}, {"empty", stats.empty},
              {"density", stats.density}}
             .dump(2)
      << '\n';
  for (const auto& [name, set] : {std::pair{"validation.jsonl", &data.split.validation},
                                  std::pair{"test.jsonl", &data.split.test}}) {
    auto f = open_output(dir / name);
    for (const auto& inst : *set) f << instance_json(inst, data.filtered).dump() << '\n';
  }
  {
    auto f = open_output(dir / "train.csv");
    write_records_csv(data.split.train.records(), f);
  }
  write_provenance(dir, cfg, {{"data", cfg.data}});
  out << report;
  return 0;
}

int cmd_train(const Invocation& inv, std::ostream& out) {
  const RunConfig cfg = resolve(inv);
  const auto data = prepare_data(load_dataset(cfg), cfg.data_config());
  const auto dir = output_dir(cfg);
  const ModelConfig mcfg = cfg.model_config(data.filtered.n_users(), data.filtered.n_items());
  auto log = open_output(dir / "train_log.jsonl");
  auto result = train(Model::create(mcfg, cfg.init_seed(), remote_options()), data.graph,
                      data.split.train, data.split.validation, cfg.train_config(), &log);
  const fs::path ckpt = cfg.checkpoint.empty() ? dir / "checkpoint.bin" : fs::path(cfg.checkpoint);
  const json provenance = {{"run", reproducible_subset(cfg)},
                           {"data_sha256", input_digest(cfg.data, "data")}};
  save_checkpoint(ckpt, result.model, provenance);
  write_provenance(dir, cfg, {{"data", cfg.data}});
  out << "epochs " << result.log.size() << ", steps " << result.steps << '\n';
  if (!result.log.empty()) {
    const auto& last = result.log.back();
    out << "final mean_loss " << last.mean_loss << ", val HR@5 " << last.val_hr5 << ", val NDCG@5 "
        << last.val_ndcg5 << '\n';
  }
  out << "checkpoint " << ckpt.string() << " sha256 " << file_sha256_hex(ckpt) << '\n';
  if (result.diverged) {
    throw NumericalError("training diverged (" + result.divergence +
                         "); last finite checkpoint written to " + ckpt.string());
  }
  return 0;
}

struct LoadedRun {
  RunConfig cfg;
  LoadedCheckpoint ckpt;
  PreparedData data;
};

LoadedRun load_run(const Invocation& inv) {
  // The checkpoint's own run configuration is the base layer, so the data pipeline is
  // reproduced exactly unless a flag overrides it.
  RunConfig probe = resolve(inv);
  require(probe.checkpoint, "checkpoint");
  if (!fs::exists(probe.checkpoint)) throw UsageError("checkpoint", "file not found: " + probe.checkpoint);
  LoadedRun run;
  run.ckpt = load_checkpoint(probe.checkpoint, std::nullopt, remote_options());
  const json base = run.ckpt.provenance.value("run", json::object());
  run.cfg = resolve(inv, &base);
  run.data = prepare_data(load_dataset(run.cfg), run.cfg.data_config());
  check_data_matches(run.data, run.ckpt.model.config);
  return run;
}

int cmd_eval(const Invocation& inv, std::ostream& out) {
  auto run = load_run(inv);
  const auto dir = output_dir(run.cfg);
  CostLog cost;
  auto report = evaluate(run.ckpt.model, run.data.graph, run.data.split.test, &cost, &run.data.filtered);
  report.label = "eval";
  {
    auto f = open_output(dir / "eval_report.jsonl");
    write_eval_jsonl(report, f);
  }
  {
    auto f = open_output(dir / "eval_report.txt");
    write_eval_table(report, f);
  }
  {
    auto f = open_output(dir / "cost_log.jsonl");
    cost.write_jsonl(f);
  }
  write_provenance(dir, run.cfg, {{"data", run.cfg.data}, {"checkpoint", run.cfg.checkpoint}});
  write_eval_table(report, out);
  return 0;
}

int cmd_recommend(const Invocation& inv, std::ostream& out) {
  auto run = load_run(inv);
  require(run.cfg.user, "user");
  const auto& ds = run.data.filtered;
  const auto user = ds.find_user(run.cfg.user);
  if (!user) throw UsageError("user", "unknown user \"" + run.cfg.user + "\" (absent or filtered out)");
  std::set<std::uint32_t> seen;
  const auto& train = run.data.split.train;
  for (std::size_t i = 0; i < train.records().size(); ++i) {
    if (train.record_user(i) == *user) seen.insert(train.record_item(i));
  }
  std::vector<std::uint32_t> candidates;
  for (std::uint32_t it = 0; it < ds.n_items(); ++it) {
    if (!seen.count(it)) candidates.push_back(it);
  }
  if (candidates.empty()) throw InvalidArgument("user has interacted with every item");
  const Behaviour b = *parse_behaviour(run.cfg.target);
  const auto scores = score_user_items(run.ckpt.model, run.data.graph, *user, b, candidates);
  std::vector<ScoredItem> scored;
  for (std::size_t i = 0; i < candidates.size(); ++i) scored.push_back({candidates[i], scores[i]});
  auto ranked = rank_items(std::move(scored));
  ranked.resize(std::min(ranked.size(), run.cfg.k));

  json list = json::array();
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    list.push_back({{"rank", r + 1}, {"item", ds.item_id(ranked[r].item)}, {"score", ranked[r].score}});
    out << r + 1 << '\t' << ds.item_id(ranked[r].item) << '\t' << std::setprecision(6)
        << ranked[r].score << '\n';
  }
  const auto dir = output_dir(run.cfg);
  open_output(dir / "recommendations.json")
      << json{{"user", run.cfg.user}, {"behaviour", run.cfg.target}, {"k", run.cfg.k}, {"items", list}}.dump(2)
      << '\n';
  write_provenance(dir, run.cfg, {{"data", run.cfg.data}, {"checkpoint", run.cfg.checkpoint}});
  return 0;
}

int cmd_ablate(const Invocation& inv, std::ostream& out) {
  const RunConfig cfg = resolve(inv);
  const auto variants = parse_variant_list(cfg.variants);
  const auto data = prepare_data(load_dataset(cfg), cfg.data_config());
  const auto dir = output_dir(cfg);
  AblationOptions opts;
  opts.base = cfg.model_config(data.filtered.n_users(), data.filtered.n_items());
  for (const auto& layer : opts.base.roster) {
    for (const auto& a : layer) {
      if (a.kind != AgentKind::mock) throw UsageError("agents", "ablation runs use mock agents");
    }
  }
  opts.train = cfg.train_config();
  opts.init_seed = cfg.init_seed();
  opts.agent_seed = cfg.agent_seed();
  const auto results = run_ablation(data, opts, variants, &out);
  std::set<std::string> requested;
  for (Variant v : variants) requested.emplace(variant_name(v));
  auto summary = open_output(dir / "ablation_summary.jsonl");
  for (const auto& r : results) {
    json line = {{"label", r.label},
                 {"config_digest", r.config_digest},
                 {"calls_per_forward", r.calls_per_forward},
                 {"instances", r.report.count()},
                 {"hr5", r.report.hr5},
                 {"hr10", r.report.hr10},
                 {"ndcg5", r.report.ndcg5},
                 {"ndcg10", r.report.ndcg10}};
    if (r.hr5_vs_full) {
      line["hr5_vs_full"] = {{"t", r.hr5_vs_full->t}, {"p", r.hr5_vs_full->p_two_sided},
                             {"significant", r.hr5_vs_full->significant}};
      line["ndcg5_vs_full"] = {{"t", r.ndcg5_vs_full->t}, {"p", r.ndcg5_vs_full->p_two_sided},
                               {"significant", r.ndcg5_vs_full->significant}};
    }
    summary << line.dump() << '\n';
    if (requested.count(r.label)) {
      auto f = open_output(dir / ("report_" + r.label + ".jsonl"));
      write_eval_jsonl(r.report, f);
    }
  }
  {
    auto f = open_output(dir / "ablation_summary.txt");
    write_ablation_summary(results, f);
  }
  write_provenance(dir, cfg, {{"data", cfg.data}});
  write_ablation_summary(results, out);
  return 0;
}

int cmd_gradcheck(const Invocation& inv, std::ostream& out) {
  const RunConfig cfg = resolve(inv);
  Dataset train_set;
  Hypergraph graph;
  std::size_t n_users = 0, n_items = 0;
  if (cfg.data.empty()) {
    // Built-in toy problem: 5 users, 10 items.
    train_set = Dataset(toy_records(5, 10, cfg.split_seed()));
    graph = build_hypergraph(train_set, cfg.window);
    n_users = train_set.n_users();
    n_items = train_set.n_items();
  } else {
    auto data = prepare_data(load_dataset(cfg), cfg.data_config());
    train_set = data.split.train;
    graph = data.graph;
    n_users = data.filtered.n_users();
    n_items = data.filtered.n_items();
  }
  const Model model = Model::create(cfg.model_config(n_users, n_items), cfg.init_seed());
  const auto samples = sample_training_examples(train_set, cfg.negatives, cfg.train_seed());
  GradCheckOptions opts;
  opts.epsilon = inv.epsilon;
  opts.n_coords = inv.coords;
  opts.seed = cfg.seed;
  opts.lambda = cfg.lambda;
  const auto report = grad_check(model, graph, samples, opts);
  const auto dir = output_dir(cfg);
  open_output(dir / "gradcheck.json") << json(report).dump(2) << '\n';
  write_provenance(dir, cfg, {{"data", cfg.data}});
  std::ostringstream s;
  s << std::left << std::setw(34) << "block" << std::right << std::setw(8) << "coords" << std::setw(8)
    << "kinked" << std::setw(10) << "pass" << std::setw(14) << "max_rel" << '\n';
  for (const auto& b : report.blocks) {
    s << std::left << std::setw(34) << b.name << std::right << std::setw(8) << b.sampled
      << std::setw(8) << b.kinked << std::setw(10) << std::fixed << std::setprecision(3) << b.pass_rate() << std::setw(14)
      << std::scientific << std::setprecision(2) << b.max_rel_error << '\n';
    s.unsetf(std::ios::floatfield);
    s << std::setprecision(6);
  }
  const bool ok = report.min_block_pass_rate >= 0.99;
  s << "smooth coordinates: pass rate " << report.pass_rate << ", worst block "
    << report.min_block_pass_rate << "; " << report.kinked << " kinked stencils excluded (raw pass rate "
    << report.raw_pass_rate << ")"
    << (ok ? "  PASS" : "  FAIL") << '\n';
  out << s.str();
  return ok ? 0 : 1;
}

int cmd_cost(const Invocation& inv, std::ostream& out) {
  const RunConfig cfg = resolve(inv);
  require(cfg.log, "log");
  require(cfg.prices, "prices");
  std::ifstream log_in(cfg.log);
  if (!log_in) throw UsageError("log", "cannot open " + cfg.log);
  std::ifstream price_in(cfg.prices);
  if (!price_in) throw UsageError("prices", "cannot open " + cfg.prices);
  const auto records = CostLog::read_jsonl(log_in);
  const auto report = cost_report(records, parse_price_table(price_in));
  const auto dir = output_dir(cfg);
  {
    auto f = open_output(dir / "cost_report.jsonl");
    write_cost_jsonl(report, f);
  }
  write_provenance(dir, cfg, {{"log", cfg.log}, {"prices", cfg.prices}});
  write_cost_table(report, out);
  return 0;
}

int cmd_synth(const Invocation& inv, std::ostream& out) {
  const RunConfig cfg = resolve(inv);
  const auto dir = output_dir(cfg);
  PlantedSpec spec;
  spec.seed = cfg.seed;
  const auto records = planted_preference_records(spec);
  auto f = open_output(dir / "interactions.csv");
  write_records_csv(records, f);
  write_provenance(dir, cfg, {});
  out << records.size() << " events written to " << (dir / "interactions.csv").string() << '\n';
  return 0;
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return "usage error";
  if (dynamic_cast<const ParseError*>(&e)) return "parse error";
  if (dynamic_cast<const CheckpointError*>(&e)) return "checkpoint error";
  if (dynamic_cast<const RemoteError*>(&e)) return "remote agent error";
  if (dynamic_cast<const NumericalError*>(&e)) return "numerical error";
  if (dynamic_cast<const ShapeError*>(&e)) return "shape error";
  if (dynamic_cast<const DatasetExhausted*>(&e)) return "data error";
  if (dynamic_cast<const InvalidArgument*>(&e)) return "invalid argument";
  return "error";
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hypergraph-encoded multi-behaviour recommender with a mixture-of-agents stack"};
  app.require_subcommand(1);
  Invocation inv;
  std::map<std::string, std::string> values;
  std::vector<std::tuple<std::string, CLI::Option*, const FlagDef*>> bound;

  const std::pair<const char*, const char*> commands[] = {
      {"prep", "filter, split and build the hypergraph"},
      {"train", "train a model and write a checkpoint"},
      {"eval", "evaluate a checkpoint on the test split"},
      {"recommend", "top-k items for one user"},
      {"ablate", "train and evaluate ablation variants"},
      {"gradcheck", "finite-difference check of every parameter block"},
      {"cost", "token, price and FLOP totals of a cost log"},
      {"synth", "write the synthetic planted-preference dataset"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->callback([&inv, n = std::string(name)] { inv.command = n; });
    sub->add_option("--config", inv.config_file, "JSON configuration file");
    for (const auto& def : kFlags) {
      CLI::Option* opt = def.type == FlagType::boolean
                             ? sub->add_flag(def.flag, def.help)
                             : sub->add_option(def.flag, values[std::string(name) + def.flag], def.help);
      bound.emplace_back(name, opt, &def);
    }
    if (std::string(name) == "gradcheck") {
      sub->add_option("--epsilon", inv.epsilon, "central-difference step");
      sub->add_option("--coords", inv.coords, "sampled coordinates per block");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    for (const auto& [sub, opt, def] : bound) {
      if (opt->count() == 0 || sub != inv.command) continue;
      const std::string text = def->type == FlagType::boolean ? "" : opt->as<std::string>();
      inv.flags[def->key] = flag_value(*def, text);
    }
    if (inv.command == "prep") return cmd_prep(inv, out);
    if (inv.command == "train") return cmd_train(inv, out);
    if (inv.command == "eval") return cmd_eval(inv, out);
    if (inv.command == "recommend") return cmd_recommend(inv, out);
    if (inv.command == "ablate") return cmd_ablate(inv, out);
    if (inv.command == "gradcheck") return cmd_gradcheck(inv, out);
    if (inv.command == "cost") return cmd_cost(inv, out);
    if (inv.command == "synth") return cmd_synth(inv, out);
    err << "usage error: unknown command\n";
    return 2;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << error_kind(e) << ": " << e.what() << '\n';
    return 1;
  }
}

}  // namespace hgrec::cli
