#include <doctest.h>

#include <filesystem>
#include <set>

#include <json.hpp>

#include "hgrec/checkpoint.hpp"
#include "hgrec/config.hpp"
#include "hgrec/digest.hpp"
#include "support.hpp"

using namespace hgrec;
using testing::run_cli;
namespace fs = std::filesystem;

namespace {

/// Small, fast settings shared by every command in this file.
std::vector<std::string> small(const testing::TempDir& dir, std::vector<std::string> extra = {}) {
  std::vector<std::string> args = {"--data", dir / "log.csv", "--dim", "8", "--layers", "2,1",
                                   "--eval-negatives", "5", "--batch-size", "8", "--warmup", "5",
                                   "--lr", "0.01", "--seed", "3"};
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

std::vector<std::string> cmd(std::string name, std::vector<std::string> args) {
  args.insert(args.begin(), std::move(name));
  return args;
}

void synth(const testing::TempDir& dir) {
  const auto r = run_cli({"synth", "--out", dir / "synth", "--seed", "1"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  fs::copy_file(dir / "synth/interactions.csv", dir / "log.csv");
}

}  // namespace

TEST_CASE("train then recommend: k distinct ranked items") {
  testing::TempDir dir;
  synth(dir);
  const std::string before = file_sha256_hex(dir / "log.csv");
  auto t = run_cli(cmd("train", small(dir, {"--epochs", "2", "--out", dir / "run"})));
  REQUIRE_MESSAGE(t.code == 0, t.err);
  CHECK(fs::exists(dir / "run/checkpoint.bin"));
  CHECK(fs::exists(dir / "run/train_log.jsonl"));
  CHECK(fs::exists(dir / "run/resolved_config.json"));
  CHECK(fs::exists(dir / "run/inputs.json"));

  const auto r = run_cli({"recommend", "--checkpoint", dir / "run/checkpoint.bin", "--data", dir / "log.csv",
                          "--user", "u001", "--k", "5", "--out", dir / "rec"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto rec = nlohmann::json::parse(testing::read_file(dir / "rec/recommendations.json"));
  REQUIRE(rec["items"].size() == 5);
  std::set<std::string> ids;
  double last = 2.0;
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(rec["items"][i]["rank"] == i + 1);
    ids.insert(rec["items"][i]["item"].get<std::string>());
    const double s = rec["items"][i]["score"];
    CHECK(s <= last);
    last = s;
  }
  CHECK(ids.size() == 5);
  CHECK(file_sha256_hex(dir / "log.csv") == before);

  const auto unknown = run_cli({"recommend", "--checkpoint", dir / "run/checkpoint.bin", "--data",
                                dir / "log.csv", "--user", "nobody", "--out", dir / "rec2"});
  CHECK(unknown.code != 0);
  CHECK(unknown.err.find("nobody") != std::string::npos);
}

TEST_CASE("train --epochs 0 writes the initial parameters") {
  testing::TempDir dir;
  synth(dir);
  const auto t = run_cli(cmd("train", small(dir, {"--epochs", "0", "--out", dir / "init"})));
  REQUIRE_MESSAGE(t.code == 0, t.err);
  const auto loaded = load_checkpoint(dir / "init/checkpoint.bin");
  RunConfig cfg;
  apply_json(cfg, loaded.provenance.at("run"));
  const Model fresh =
      Model::create(cfg.model_config(loaded.model.config.n_users, loaded.model.config.n_items), cfg.init_seed());
  ModelParams expected = fresh.params;
  round_to_stored_precision(expected);
  const auto a = expected.blocks();
  const auto b = loaded.model.params.blocks();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i].second == *b[i].second);
}

TEST_CASE("identical runs reproduce identical bytes") {
  testing::TempDir dir;
  synth(dir);
  for (const char* run : {"a", "b"}) {
    const auto t = run_cli(cmd("train", small(dir, {"--epochs", "2", "--out", dir / run})));
    REQUIRE_MESSAGE(t.code == 0, t.err);
    const auto e = run_cli({"eval", "--checkpoint", dir / (std::string(run) + "/checkpoint.bin"), "--data",
                            dir / "log.csv", "--out", dir / (std::string(run) + "/eval")});
    REQUIRE_MESSAGE(e.code == 0, e.err);
  }
  CHECK(testing::read_file(dir / "a/checkpoint.bin") == testing::read_file(dir / "b/checkpoint.bin"));
  CHECK(testing::read_file(dir / "a/eval/eval_report.jsonl") == testing::read_file(dir / "b/eval/eval_report.jsonl"));
  CHECK(testing::read_file(dir / "a/eval/eval_report.txt") == testing::read_file(dir / "b/eval/eval_report.txt"));
  const auto ia = nlohmann::json::parse(testing::read_file(dir / "a/eval/inputs.json"));
  const auto ib = nlohmann::json::parse(testing::read_file(dir / "b/eval/inputs.json"));
  CHECK(ia["data"]["sha256"] == ib["data"]["sha256"]);
  CHECK(ia["checkpoint"]["sha256"] == ib["checkpoint"]["sha256"]);
}

TEST_CASE("ablate --variants layers_1,layers_3 writes two labelled reports") {
  testing::TempDir dir;
  synth(dir);
  const auto r = run_cli(cmd("ablate", small(dir, {"--epochs", "1", "--variants", "layers_1,layers_3",
                                                   "--out", dir / "abl"})));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  std::set<std::string> reports;
  for (const auto& e : fs::directory_iterator(dir / "abl")) {
    const std::string name = e.path().filename().string();
    if (name.rfind("report_", 0) == 0) reports.insert(name);
  }
  CHECK(reports == std::set<std::string>{"report_layers_1.jsonl", "report_layers_3.jsonl"});
  const std::string l1 = testing::read_file(dir / "abl/report_layers_1.jsonl");
  CHECK(l1.find("\"layers_1\"") != std::string::npos);
  CHECK(fs::exists(dir / "abl/ablation_summary.jsonl"));
  CHECK(fs::exists(dir / "abl/resolved_config.json"));
}

TEST_CASE("prep, gradcheck and cost commands") {
  testing::TempDir dir;
  synth(dir);
  const auto p = run_cli(cmd("prep", small(dir, {"--out", dir / "prep"})));
  REQUIRE_MESSAGE(p.code == 0, p.err);
  for (const char* f : {"split_report.txt", "hypergraph.tsv", "hypergraph_stats.json", "test.jsonl"}) {
    CHECK(fs::exists(dir / (std::string("prep/") + f)));
  }

  const auto g = run_cli({"gradcheck", "--dim", "8", "--layers", "2,1", "--out", dir / "gc"});
  CHECK_MESSAGE(g.code == 0, g.err);
  CHECK(fs::exists(dir / "gc/gradcheck.json"));

  testing::write_file(dir / "prices.toml", "[[prices]]\nendpoint = \"mock\"\nprice_in_per_1m = 0.5\nparams = 1e6\n");
  testing::write_file(dir / "calls.jsonl",
                      "{\"layer\":1,\"agent\":1,\"endpoint\":\"mock\",\"tokens_in\":200,\"tokens_out\":200,\"latency_ms\":1}\n");
  const auto c = run_cli({"cost", "--log", dir / "calls.jsonl", "--prices", dir / "prices.toml", "--out", dir / "cost"});
  REQUIRE_MESSAGE(c.code == 0, c.err);
  CHECK(fs::exists(dir / "cost/cost_report.jsonl"));
}

TEST_CASE("usage errors exit 2 and name the offending key") {
  testing::TempDir dir;
  synth(dir);
  testing::write_file(dir / "bad.json", "{\"epochs\": 1, \"bogus_key\": 3}");
  const auto a = run_cli(cmd("train", small(dir, {"--config", dir / "bad.json", "--out", dir / "x"})));
  CHECK(a.code == 2);
  CHECK(a.err.find("bogus_key") != std::string::npos);

  const auto b = run_cli({"train", "--dim", "8", "--out", dir / "y"});
  CHECK(b.code == 2);
  CHECK(b.err.find("data") != std::string::npos);

  const auto c = run_cli({"train", "--no-such-flag"});
  CHECK(c.code == 2);

  testing::write_file(dir / "roster.json", "[[{\"kind\": \"mock\", \"mock_seed\": 1}]]");
  const auto d = run_cli(cmd("train", small(dir, {"--agents", "@" + (dir / "roster.json"), "--out", dir / "z"})));
  CHECK(d.code == 2);
  CHECK(d.err.find("layers") != std::string::npos);

  const auto e = run_cli({"eval", "--data", dir / "log.csv", "--checkpoint", dir / "missing.bin"});
  CHECK(e.code != 0);
  CHECK(e.err.find("missing.bin") != std::string::npos);

  CHECK(run_cli({}).code == 2);
}
