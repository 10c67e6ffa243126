#include <doctest.h>

#include <filesystem>

#include "hgrec/checkpoint.hpp"
#include "hgrec/digest.hpp"
#include "hgrec/error.hpp"
#include "hgrec/synthetic.hpp"
#include "support.hpp"

using namespace hgrec;

namespace {

Model toy_model(std::size_t d = 8) {
  Dataset ds(toy_records(5, 10, 1));
  ModelConfig cfg;
  cfg.d = d;
  cfg.n_users = ds.n_users();
  cfg.n_items = ds.n_items();
  const std::size_t sizes[] = {2, 1};
  cfg.roster = make_mock_roster(sizes, d, 5);
  return Model::create(cfg, 9);
}

CheckpointError::Kind kind_of(std::string_view bytes, std::optional<std::size_t> d = std::nullopt) {
  try {
    parse_checkpoint(bytes, d);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  FAIL("checkpoint accepted");
  return CheckpointError::Kind::io;
}

/// Rewrites the trailer so a deliberately edited body still passes the digest check.
void reseal(std::string& bytes) {
  Sha256 h;
  h.update(std::string_view(bytes).substr(0, bytes.size() - 32));
  const auto d = h.finish();
  bytes.replace(bytes.size() - 32, 32, std::string(d.begin(), d.end()));
}

}  // namespace

TEST_CASE("save -> load -> save is byte-identical") {
  testing::TempDir dir;
  const Model model = toy_model();
  const nlohmann::json prov = {{"run", {{"seed", 3}}}};
  save_checkpoint(dir / "a.bin", model, prov);
  const auto loaded = load_checkpoint(dir / "a.bin");
  save_checkpoint(dir / "b.bin", loaded.model, loaded.provenance);
  CHECK(testing::read_file(dir / "a.bin") == testing::read_file(dir / "b.bin"));
  CHECK(loaded.provenance == prov);
  CHECK(loaded.digest.size() == 64);
  CHECK(loaded.model.vocab.tokens() == model.vocab.tokens());
  CHECK(config_digest(loaded.model.config) == config_digest(model.config));
  CHECK(loaded.model.pool.frozen_digest() == model.pool.frozen_digest());

  ModelParams rounded = model.params;
  round_to_stored_precision(rounded);
  const auto a = rounded.blocks();
  const auto b = loaded.model.params.blocks();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i].second == *b[i].second);
  CHECK_FALSE(std::filesystem::exists(dir / "a.bin.tmp"));
}

TEST_CASE("integrity failures are typed") {
  const std::string bytes = serialize_checkpoint(toy_model());

  CHECK(kind_of(bytes.substr(0, bytes.size() / 2)) == CheckpointError::Kind::corrupt);
  CHECK(kind_of(bytes.substr(0, 10)) == CheckpointError::Kind::corrupt);
  CHECK(kind_of("") == CheckpointError::Kind::corrupt);

  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x40;
  CHECK(kind_of(flipped) == CheckpointError::Kind::digest_mismatch);

  std::string future = bytes;
  future[8] = 2;
  reseal(future);
  CHECK(kind_of(future) == CheckpointError::Kind::version_mismatch);

  CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/x.bin"), CheckpointError);
}

TEST_CASE("dimension mismatch names both dimensions") {
  const std::string bytes = serialize_checkpoint(toy_model(8));
  try {
    parse_checkpoint(bytes, 16);
    FAIL("mismatched d accepted");
  } catch (const CheckpointError& e) {
    CHECK(e.kind() == CheckpointError::Kind::dimension_mismatch);
    const std::string what = e.what();
    CHECK(what.find('8') != std::string::npos);
    CHECK(what.find("16") != std::string::npos);
  }
  CHECK_NOTHROW(parse_checkpoint(bytes, 8));
}
