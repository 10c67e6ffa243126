#include "hgrec/hypergraph.hpp"

#include <algorithm>
#include <map>
#include <ostream>
#include <tuple>

#include "hgrec/error.hpp"

namespace hgrec {

Hypergraph::Hypergraph(std::size_t n_users, std::size_t n_items, std::vector<Hyperedge> edges)
    : n_users_(n_users), n_items_(n_items), edges_(std::move(edges)), incidence_(n_users + n_items) {
  for (std::uint32_t e = 0; e < edges_.size(); ++e) {
    const auto& nodes = edges_[e].nodes;
    if (nodes.size() < 2) throw InvalidArgument("hyperedge needs a user and at least one item");
    if (!std::is_sorted(nodes.begin(), nodes.end()) ||
        std::adjacent_find(nodes.begin(), nodes.end()) != nodes.end()) {
      throw InvalidArgument("hyperedge nodes must be sorted and unique");
    }
    const auto users = std::count_if(nodes.begin(), nodes.end(),
                                     [&](NodeIndex v) { return v < n_users; });
    if (users != 1) throw InvalidArgument("hyperedge must contain exactly one user");
    if (nodes.back() >= n_users + n_items) throw InvalidArgument("hyperedge node out of range");
    for (NodeIndex v : nodes) incidence_[v].push_back(e);
  }
}

Hypergraph build_hypergraph(const Dataset& ds, std::int64_t window_seconds) {
  if (window_seconds < 0) throw InvalidArgument("window_seconds must be >= 0");
  using Key = std::tuple<std::uint8_t, std::uint32_t, std::int64_t>;  // behaviour, user, bucket
  std::map<Key, std::vector<NodeIndex>> groups;
  const auto n_users = static_cast<NodeIndex>(ds.n_users());
  for (std::size_t i = 0; i < ds.records().size(); ++i) {
    const auto& r = ds.records()[i];
    const std::int64_t bucket = window_seconds == 0 ? 0 : r.timestamp / window_seconds;
    groups[Key{static_cast<std::uint8_t>(r.behaviour), ds.record_user(i), bucket}].push_back(
        n_users + ds.record_item(i));
  }
  std::vector<Hyperedge> edges;
  edges.reserve(groups.size());
  for (auto& [key, items] : groups) {
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    Hyperedge e;
    e.behaviour = static_cast<Behaviour>(std::get<0>(key));
    e.nodes.reserve(items.size() + 1);
    e.nodes.push_back(std::get<1>(key));
    e.nodes.insert(e.nodes.end(), items.begin(), items.end());
    edges.push_back(std::move(e));
  }
  return Hypergraph(ds.n_users(), ds.n_items(), std::move(edges));
}

EgoGraph ego_subgraph(const Hypergraph& g, NodeIndex user, int hops) {
  if (!g.is_user(user)) throw InvalidArgument("ego anchor " + std::to_string(user) + " is not a user");
  if (hops < 1 || hops > 2) throw InvalidArgument("hops must be 1 or 2");

  std::vector<std::uint32_t> edge_ids = g.incident(user);
  if (hops == 2) {
    std::vector<std::uint32_t> extra;
    for (std::uint32_t e : edge_ids) {
      for (NodeIndex v : g.edges()[e].nodes) {
        if (g.is_user(v)) continue;
        const auto& inc = g.incident(v);
        extra.insert(extra.end(), inc.begin(), inc.end());
      }
    }
    edge_ids.insert(edge_ids.end(), extra.begin(), extra.end());
    std::sort(edge_ids.begin(), edge_ids.end());
    edge_ids.erase(std::unique(edge_ids.begin(), edge_ids.end()), edge_ids.end());
  }

  std::vector<NodeIndex> members;
  for (std::uint32_t e : edge_ids) {
    const auto& nodes = g.edges()[e].nodes;
    members.insert(members.end(), nodes.begin(), nodes.end());
  }
  std::sort(members.begin(), members.end());
  members.erase(std::unique(members.begin(), members.end()), members.end());

  EgoGraph ego;
  ego.anchor = 0;
  ego.global_users = g.n_users();
  ego.node_map.push_back(user);
  for (NodeIndex v : members) {
    if (v != user) ego.node_map.push_back(v);
  }
  std::map<NodeIndex, NodeIndex> to_local;
  for (NodeIndex local = 0; local < ego.node_map.size(); ++local) {
    to_local[ego.node_map[local]] = local;
  }
  for (std::uint32_t e : edge_ids) {
    Hyperedge local_edge;
    local_edge.behaviour = g.edges()[e].behaviour;
    for (NodeIndex v : g.edges()[e].nodes) local_edge.nodes.push_back(to_local.at(v));
    std::sort(local_edge.nodes.begin(), local_edge.nodes.end());
    ego.edges.push_back(std::move(local_edge));
  }
  return ego;
}

std::vector<NodeIndex> nodes_with_behaviour(const EgoGraph& ego, Behaviour b) {
  std::vector<NodeIndex> out;
  for (const auto& e : ego.edges) {
    if (e.behaviour == b) out.insert(out.end(), e.nodes.begin(), e.nodes.end());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

IncidenceStats incidence_stats(const Hypergraph& g) {
  IncidenceStats s;
  s.n_users = g.n_users();
  s.n_items = g.n_items();
  s.n_hyperedges = g.edges().size();
  s.empty = g.edges().empty();
  std::size_t total = 0;
  for (const auto& e : g.edges()) {
    total += e.nodes.size();
    s.interactions += e.nodes.size() - 1;
  }
  if (!s.empty) s.mean_edge_size = static_cast<double>(total) / static_cast<double>(s.n_hyperedges);
  if (s.n_users > 0 && s.n_items > 0) {
    s.density = static_cast<double>(s.interactions) /
                (static_cast<double>(s.n_users) * static_cast<double>(s.n_items));
  }
  return s;
}

void dump_hypergraph(const Hypergraph& g, std::ostream& out) {
  for (const auto& e : g.edges()) {
    out << behaviour_name(e.behaviour) << '\t';
    for (std::size_t i = 0; i < e.nodes.size(); ++i) {
      if (i > 0) out << ',';
      out << e.nodes[i];
    }
    out << '\n';
  }
}

}  // namespace hgrec
