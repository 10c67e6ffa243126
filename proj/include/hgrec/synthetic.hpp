#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "hgrec/data.hpp"

namespace hgrec {

/// Users fall into clusters; each cluster owns a disjoint block of items and its users
/// interact (all four behaviours) almost only with that block. The preference is visible only
/// through each user's own interaction structure.
struct PlantedSpec {
  std::size_t users = 20;
  std::size_t items = 50;
  std::size_t clusters = 4;
  std::size_t views = 20;
  std::size_t favs = 4;
  std::size_t carts = 6;
  std::size_t buys = 6;
  /// Out-of-cluster views per user.
  std::size_t noise_views = 4;
  std::uint64_t seed = 7;
};

std::vector<InteractionRecord> planted_preference_records(const PlantedSpec& spec);

/// Small dense toy log: every user touches several items with mixed behaviours.
std::vector<InteractionRecord> toy_records(std::size_t users, std::size_t items, std::uint64_t seed);

/// user_id,item_id,behaviour,timestamp lines.
void write_records_csv(std::span<const InteractionRecord> records, std::ostream& out);

}  // namespace hgrec
