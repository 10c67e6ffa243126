#include "hgrec/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "hgrec/error.hpp"
#include "hgrec/random.hpp"

namespace hgrec {
namespace {

std::string padded(char prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%03zu", prefix, i);
  return buf;
}

}  // namespace

std::vector<InteractionRecord> planted_preference_records(const PlantedSpec& spec) {
  if (spec.clusters < 1 || spec.users < spec.clusters) throw InvalidArgument("planted: need users >= clusters >= 1");
  const std::size_t block = spec.items / spec.clusters;
  if (block < spec.buys) throw InvalidArgument("planted: item block smaller than the buy count");
  Rng rng(spec.seed);
  std::vector<InteractionRecord> records;
  for (std::size_t u = 0; u < spec.users; ++u) {
    const std::size_t c = u % spec.clusters;
    auto cluster_item = [&] { return c * block + rng.index(block); };
    std::vector<std::pair<Behaviour, std::size_t>> events;
    for (std::size_t i = 0; i < spec.views; ++i) events.emplace_back(Behaviour::view, cluster_item());
    for (std::size_t i = 0; i < spec.favs; ++i) events.emplace_back(Behaviour::fav, cluster_item());
    for (std::size_t i = 0; i < spec.carts; ++i) events.emplace_back(Behaviour::cart, cluster_item());
    // Distinct bought items, so every buy is a fresh positive.
    std::vector<std::size_t> block_items(block);
    std::iota(block_items.begin(), block_items.end(), c * block);
    std::shuffle(block_items.begin(), block_items.end(), rng.engine());
    for (std::size_t i = 0; i < spec.buys; ++i) events.emplace_back(Behaviour::buy, block_items[i]);
    for (std::size_t i = 0; i < spec.noise_views; ++i) {
      std::size_t item = rng.index(spec.items);
      while (item / block == c && item < spec.clusters * block) item = rng.index(spec.items);
      events.emplace_back(Behaviour::view, item);
    }
    std::shuffle(events.begin(), events.end(), rng.engine());
    std::int64_t t = 1'000'000 + static_cast<std::int64_t>(u) * 7;
    for (const auto& [b, item] : events) {
      t += 1800 + static_cast<std::int64_t>(rng.index(3600));
      records.push_back({padded('u', u), padded('i', item), b, t});
    }
  }
  return records;
}

std::vector<InteractionRecord> toy_records(std::size_t users, std::size_t items, std::uint64_t seed) {
  if (users < 1 || items < 2) throw InvalidArgument("toy dataset needs >= 1 user and >= 2 items");
  Rng rng(seed);
  std::vector<InteractionRecord> records;
  std::int64_t t = 100;
  for (std::size_t u = 0; u < users; ++u) {
    const std::size_t n = 5 + rng.index(4);
    for (std::size_t e = 0; e < n; ++e) {
      const Behaviour b = kAllBehaviours[rng.index(kBehaviourCount)];
      records.push_back({padded('u', u), padded('i', rng.index(items)), b, t});
      t += 1 + static_cast<std::int64_t>(rng.index(40000));
    }
  }
  return records;
}

void write_records_csv(std::span<const InteractionRecord> records, std::ostream& out) {
  for (const auto& r : records) {
    out << r.user_id << ',' << r.item_id << ',' << behaviour_name(r.behaviour) << ',' << r.timestamp << '\n';
  }
}

}  // namespace hgrec
