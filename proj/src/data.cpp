#include "hgrec/data.hpp"

#include <algorithm>
#include <charconv>
#include <numeric>
#include <sstream>

#include "hgrec/error.hpp"
#include "hgrec/random.hpp"

namespace hgrec {

std::string_view behaviour_name(Behaviour b) {
  switch (b) {
    case Behaviour::view: return "view";
    case Behaviour::fav: return "fav";
    case Behaviour::cart: return "cart";
    case Behaviour::buy: return "buy";
  }
  return "view";
}

std::optional<Behaviour> parse_behaviour(std::string_view s) {
  for (Behaviour b : kAllBehaviours) {
    if (behaviour_name(b) == s) return b;
  }
  return std::nullopt;
}

Dataset::Dataset(std::vector<InteractionRecord> records) : records_(std::move(records)) {
  for (const auto& r : records_) {
    if (user_lookup_.try_emplace(r.user_id, static_cast<std::uint32_t>(user_ids_.size())).second) {
      user_ids_.push_back(r.user_id);
    }
    if (item_lookup_.try_emplace(r.item_id, static_cast<std::uint32_t>(item_ids_.size())).second) {
      item_ids_.push_back(r.item_id);
    }
  }
  index_records();
}

Dataset::Dataset(std::vector<InteractionRecord> records, const Dataset& index_source)
    : records_(std::move(records)),
      user_ids_(index_source.user_ids_),
      item_ids_(index_source.item_ids_),
      user_lookup_(index_source.user_lookup_),
      item_lookup_(index_source.item_lookup_) {
  index_records();
}

void Dataset::index_records() {
  record_users_.clear();
  record_items_.clear();
  record_users_.reserve(records_.size());
  record_items_.reserve(records_.size());
  for (const auto& r : records_) {
    record_users_.push_back(user_index(r.user_id));
    record_items_.push_back(item_index(r.item_id));
  }
}

std::uint32_t Dataset::user_index(std::string_view id) const {
  auto found = find_user(id);
  if (!found) throw InvalidArgument("unknown user id '" + std::string(id) + "'");
  return *found;
}

std::uint32_t Dataset::item_index(std::string_view id) const {
  auto found = find_item(id);
  if (!found) throw InvalidArgument("unknown item id '" + std::string(id) + "'");
  return *found;
}

std::optional<std::uint32_t> Dataset::find_user(std::string_view id) const {
  auto it = user_lookup_.find(std::string(id));
  if (it == user_lookup_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::uint32_t> Dataset::find_item(std::string_view id) const {
  auto it = item_lookup_.find(std::string(id));
  if (it == item_lookup_.end()) return std::nullopt;
  return it->second;
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line, char delimiter) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delimiter, start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

bool is_blank(std::string_view line) {
  return std::all_of(line.begin(), line.end(),
                     [](char c) { return c == ' ' || c == '\t' || c == '\r'; });
}

std::string_view column_name(Column c) {
  switch (c) {
    case Column::user_id: return "user_id";
    case Column::item_id: return "item_id";
    case Column::behaviour: return "behaviour";
    case Column::timestamp: return "timestamp";
  }
  return "";
}

InteractionRecord parse_line(std::string_view line, std::size_t line_no,
                             const ParseOptions& options) {
  if (is_blank(line)) throw ParseError(line_no, "line", "blank line");
  const auto fields = split_fields(line, options.delimiter);
  if (fields.size() != options.columns.size()) {
    throw ParseError(line_no, "line",
                     "expected " + std::to_string(options.columns.size()) + " fields, got " +
                         std::to_string(fields.size()));
  }
  InteractionRecord rec;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    const std::string_view field = fields[i];
    const Column col = options.columns[i];
    switch (col) {
      case Column::user_id:
      case Column::item_id:
        if (field.empty()) {
          throw ParseError(line_no, std::string(column_name(col)),
                           "empty " + std::string(column_name(col)));
        }
        (col == Column::user_id ? rec.user_id : rec.item_id) = std::string(field);
        break;
      case Column::behaviour: {
        auto b = parse_behaviour(field);
        if (!b) {
          throw ParseError(line_no, "behaviour",
                           "unknown behaviour \"" + std::string(field) + "\"");
        }
        rec.behaviour = *b;
        break;
      }
      case Column::timestamp: {
        std::int64_t ts = 0;
        const auto* end = field.data() + field.size();
        auto [ptr, ec] = std::from_chars(field.data(), end, ts);
        if (ec != std::errc() || ptr != end || field.empty()) {
          throw ParseError(line_no, "timestamp",
                           "timestamp is not an integer: \"" + std::string(field) + "\"");
        }
        if (ts < 0) {
          throw ParseError(line_no, "timestamp", "negative timestamp " + std::to_string(ts));
        }
        rec.timestamp = ts;
        break;
      }
    }
  }
  return rec;
}

}  // namespace

ParseResult parse_interactions(std::istream& source, const ParseOptions& options) {
  ParseResult result;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(source, line)) {
    ++line_no;
    if (line_no == 1 && options.skip_header) continue;
    std::string_view view(line);
    if (!view.empty() && view.back() == '\r') view.remove_suffix(1);
    try {
      result.records.push_back(parse_line(view, line_no, options));
    } catch (const ParseError&) {
      if (!options.lenient) throw;
      ++result.skipped_lines;
    }
  }
  return result;
}

FilterResult filter_min_interactions(const Dataset& ds, std::size_t min_count) {
  if (min_count < 1) throw InvalidArgument("min_count must be >= 1");
  const std::size_t n = ds.records().size();
  std::vector<char> alive(n, 1);
  FilterResult result;

  auto prune = [&](bool users) {
    const std::size_t domain = users ? ds.n_users() : ds.n_items();
    std::vector<std::size_t> counts(domain, 0);
    for (std::size_t i = 0; i < n; ++i) {
      if (alive[i]) ++counts[users ? ds.record_user(i) : ds.record_item(i)];
    }
    bool removed = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (!alive[i]) continue;
      if (counts[users ? ds.record_user(i) : ds.record_item(i)] < min_count) {
        alive[i] = 0;
        removed = true;
      }
    }
    return removed;
  };

  bool users_pass = true;
  for (std::size_t pass = 0;; ++pass) {
    const bool removed = prune(users_pass);
    if (removed) {
      ++result.passes;
    } else if (pass >= 1) {
      break;
    }
    users_pass = !users_pass;
  }

  std::vector<InteractionRecord> kept;
  for (std::size_t i = 0; i < n; ++i) {
    if (alive[i]) kept.push_back(ds.records()[i]);
  }
  if (kept.empty()) throw DatasetExhausted();
  result.dataset = Dataset(std::move(kept));
  return result;
}

void SplitSpec::validate() const {
  if (n_negatives < 1) throw InvalidArgument("n_negatives must be >= 1");
}

SplitResult chronological_split(const Dataset& ds, const SplitSpec& spec) {
  spec.validate();
  const auto& records = ds.records();
  std::vector<std::vector<std::size_t>> target_events(ds.n_users());
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].behaviour == spec.target_behaviour) {
      target_events[ds.record_user(i)].push_back(i);
    }
  }

  SplitResult result;
  std::vector<char> held_out(records.size(), 0);
  for (std::uint32_t u = 0; u < ds.n_users(); ++u) {
    auto& events = target_events[u];
    if (events.empty()) {
      ++result.report.excluded_no_target;
      continue;
    }
    if (events.size() < 3) {
      ++result.report.excluded_few_target;
      continue;
    }
    // Ties keep input order.
    std::stable_sort(events.begin(), events.end(), [&](std::size_t a, std::size_t b) {
      return records[a].timestamp < records[b].timestamp;
    });
    const std::size_t test_pos = events[events.size() - 1];
    const std::size_t val_pos = events[events.size() - 2];
    held_out[test_pos] = 1;
    held_out[val_pos] = 1;
    result.test.push_back(EvalInstance{u, ds.record_item(test_pos), spec.target_behaviour,
                                       records[test_pos].timestamp, {}});
    result.validation.push_back(EvalInstance{u, ds.record_item(val_pos), spec.target_behaviour,
                                             records[val_pos].timestamp, {}});
    ++result.report.evaluated_users;
  }

  std::vector<InteractionRecord> train_records;
  train_records.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!held_out[i]) train_records.push_back(records[i]);
  }
  result.train = Dataset(std::move(train_records), ds);
  result.report.users = ds.n_users();
  result.report.items = ds.n_items();
  result.report.records = records.size();
  return result;
}

std::vector<EvalInstance> build_candidate_sets(std::vector<EvalInstance> instances,
                                               const Dataset& ds, const SplitSpec& spec) {
  spec.validate();
  std::vector<std::vector<std::uint32_t>> touched(ds.n_users());
  for (std::size_t i = 0; i < ds.records().size(); ++i) {
    touched[ds.record_user(i)].push_back(ds.record_item(i));
  }
  for (auto& t : touched) {
    std::sort(t.begin(), t.end());
    t.erase(std::unique(t.begin(), t.end()), t.end());
  }

  for (auto& inst : instances) {
    const auto& seen = touched.at(inst.user);
    std::vector<std::uint32_t> eligible;
    eligible.reserve(ds.n_items());
    for (std::uint32_t item = 0; item < ds.n_items(); ++item) {
      if (!std::binary_search(seen.begin(), seen.end(), item)) eligible.push_back(item);
    }
    if (eligible.size() < spec.n_negatives) {
      throw InvalidArgument("user '" + ds.user_id(inst.user) + "' needs " +
                            std::to_string(spec.n_negatives) + " negatives but only " +
                            std::to_string(eligible.size()) + " items are eligible (shortfall " +
                            std::to_string(spec.n_negatives - eligible.size()) + ")");
    }
    Rng rng(derive_seed(spec.seed, (static_cast<std::uint64_t>(inst.user) << 32) | inst.positive));
    // Partial Fisher-Yates: the first n_negatives slots become the sample.
    for (std::size_t i = 0; i < spec.n_negatives; ++i) {
      const std::size_t j = i + rng.index(eligible.size() - i);
      std::swap(eligible[i], eligible[j]);
    }
    inst.candidates.clear();
    inst.candidates.push_back(inst.positive);
    inst.candidates.insert(inst.candidates.end(), eligible.begin(),
                           eligible.begin() + static_cast<std::ptrdiff_t>(spec.n_negatives));
  }
  return instances;
}

std::string format_split_report(const SplitReport& report) {
  std::ostringstream out;
  out << "users=" << report.users << '\n'
      << "items=" << report.items << '\n'
      << "records=" << report.records << '\n'
      << "evaluated_users=" << report.evaluated_users << '\n'
      << "excluded_no_target=" << report.excluded_no_target << '\n'
      << "excluded_few_target=" << report.excluded_few_target << '\n'
      << "filter_passes=" << report.filter_passes << '\n';
  return out.str();
}

}  // namespace hgrec
