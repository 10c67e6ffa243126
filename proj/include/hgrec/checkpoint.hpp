#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "hgrec/model.hpp"

// Little-endian layout:
//   "HGRECKPT" | u32 version | u32 d | u32 n_users | u32 n_items | u32 vocab_size | u32 n_blocks
//   u64 metadata length | metadata JSON (model config, vocabulary, provenance)
//   n_blocks x { u16 name length | name | u32 rows | u32 cols | rows*cols f32 }
//   32-byte SHA-256 of everything before it
namespace hgrec {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct LoadedCheckpoint {
  Model model;
  /// Free-form JSON stored alongside the model (resolved run config, input digests).
  nlohmann::json provenance;
  /// Hex SHA-256 from the trailer.
  std::string digest;
};

/// Parameters are stored as float32; loading rounds them, so save -> load -> save is
/// byte-identical.
std::string serialize_checkpoint(const Model& model, const nlohmann::json& provenance = {});
LoadedCheckpoint parse_checkpoint(std::string_view bytes,
                                  std::optional<std::size_t> expected_d = std::nullopt,
                                  RemoteOptions remote = {});

/// Atomic: written to a temporary sibling, then renamed over `path`.
void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const nlohmann::json& provenance = {});
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 std::optional<std::size_t> expected_d = std::nullopt,
                                 RemoteOptions remote = {});

/// Rounds every Theta entry to float32, the stored precision.
void round_to_stored_precision(ModelParams& params);

}  // namespace hgrec
