#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace hgrec {

enum class Behaviour : std::uint8_t { view = 0, fav = 1, cart = 2, buy = 3 };

inline constexpr std::size_t kBehaviourCount = 4;
inline constexpr std::array<Behaviour, kBehaviourCount> kAllBehaviours = {
    Behaviour::view, Behaviour::fav, Behaviour::cart, Behaviour::buy};

std::string_view behaviour_name(Behaviour b);
std::optional<Behaviour> parse_behaviour(std::string_view s);
inline std::size_t behaviour_index(Behaviour b) { return static_cast<std::size_t>(b); }

struct InteractionRecord {
  std::string user_id;
  std::string item_id;
  Behaviour behaviour = Behaviour::view;
  std::int64_t timestamp = 0;

  friend bool operator==(const InteractionRecord&, const InteractionRecord&) = default;
};

/// Dense-indexed view over an ordered record list. Indices are assigned in order of first
/// appearance and are contiguous from 0.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<InteractionRecord> records);
  /// Reuses another dataset's index space; every record id must resolve in it.
  Dataset(std::vector<InteractionRecord> records, const Dataset& index_source);

  const std::vector<InteractionRecord>& records() const noexcept { return records_; }
  std::size_t n_users() const noexcept { return user_ids_.size(); }
  std::size_t n_items() const noexcept { return item_ids_.size(); }

  std::uint32_t user_index(std::string_view id) const;
  std::uint32_t item_index(std::string_view id) const;
  std::optional<std::uint32_t> find_user(std::string_view id) const;
  std::optional<std::uint32_t> find_item(std::string_view id) const;
  const std::string& user_id(std::uint32_t index) const { return user_ids_.at(index); }
  const std::string& item_id(std::uint32_t index) const { return item_ids_.at(index); }

  /// Dense (user, item) of record `i`.
  std::uint32_t record_user(std::size_t i) const { return record_users_[i]; }
  std::uint32_t record_item(std::size_t i) const { return record_items_[i]; }

 private:
  void index_records();

  std::vector<InteractionRecord> records_;
  std::vector<std::string> user_ids_;
  std::vector<std::string> item_ids_;
  std::unordered_map<std::string, std::uint32_t> user_lookup_;
  std::unordered_map<std::string, std::uint32_t> item_lookup_;
  std::vector<std::uint32_t> record_users_;
  std::vector<std::uint32_t> record_items_;
};

enum class Column { user_id, item_id, behaviour, timestamp };

struct ParseOptions {
  char delimiter = ',';
  bool skip_header = false;
  /// Lenient mode skips blank and malformed lines and counts them instead of failing.
  bool lenient = false;
  std::array<Column, 4> columns = {Column::user_id, Column::item_id, Column::behaviour,
                                   Column::timestamp};
};

struct ParseResult {
  std::vector<InteractionRecord> records;
  std::size_t skipped_lines = 0;
};

ParseResult parse_interactions(std::istream& source, const ParseOptions& options = {});

struct FilterResult {
  Dataset dataset;
  /// Number of user or item passes that removed at least one record.
  std::size_t passes = 0;
};

/// Alternating user/item pruning to a fixed point (k-core style). Record order is kept.
FilterResult filter_min_interactions(const Dataset& ds, std::size_t min_count = 5);

enum class SplitScheme { leave_one_out };

struct SplitSpec {
  SplitScheme scheme = SplitScheme::leave_one_out;
  Behaviour target_behaviour = Behaviour::buy;
  std::size_t n_negatives = 99;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EvalInstance {
  std::uint32_t user = 0;
  std::uint32_t positive = 0;
  Behaviour behaviour = Behaviour::buy;
  std::int64_t timestamp = 0;
  /// Positive first, then sampled negatives. Empty until build_candidate_sets.
  std::vector<std::uint32_t> candidates;

  friend bool operator==(const EvalInstance&, const EvalInstance&) = default;
};

struct SplitReport {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t records = 0;
  std::size_t evaluated_users = 0;
  std::size_t excluded_no_target = 0;
  std::size_t excluded_few_target = 0;
  std::size_t filter_passes = 0;
};

struct SplitResult {
  /// Shares the index space of the input dataset.
  Dataset train;
  std::vector<EvalInstance> validation;
  std::vector<EvalInstance> test;
  SplitReport report;
};

/// Leave-one-out on the target behaviour: per user the last target event is the test positive,
/// the second-last the validation positive. Users with fewer than three target events stay in
/// train and are excluded from evaluation.
SplitResult chronological_split(const Dataset& ds, const SplitSpec& spec);

/// Attaches 1 positive + n_negatives items the user never touched (any behaviour) to each
/// instance. Sampling is seeded per instance from spec.seed.
std::vector<EvalInstance> build_candidate_sets(std::vector<EvalInstance> instances,
                                               const Dataset& ds, const SplitSpec& spec);

/// Key-value text summary, one `key=value` per line.
std::string format_split_report(const SplitReport& report);

}  // namespace hgrec
