#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "hgrec/data.hpp"

namespace hgrec {

using NodeIndex = std::uint32_t;

struct Hyperedge {
  Behaviour behaviour = Behaviour::view;
  /// Sorted, unique. Exactly one user node followed by one or more item nodes.
  std::vector<NodeIndex> nodes;

  friend bool operator==(const Hyperedge&, const Hyperedge&) = default;
};

/// Behaviour-labelled hypergraph over users [0, n_users) and items [n_users, n_users + n_items).
class Hypergraph {
 public:
  Hypergraph() = default;
  Hypergraph(std::size_t n_users, std::size_t n_items, std::vector<Hyperedge> edges);

  std::size_t n_users() const noexcept { return n_users_; }
  std::size_t n_items() const noexcept { return n_items_; }
  std::size_t n_nodes() const noexcept { return n_users_ + n_items_; }
  const std::vector<Hyperedge>& edges() const noexcept { return edges_; }
  /// Ids of the hyperedges containing `node`, ascending.
  const std::vector<std::uint32_t>& incident(NodeIndex node) const { return incidence_.at(node); }

  bool is_user(NodeIndex node) const noexcept { return node < n_users_; }
  NodeIndex user_node(std::uint32_t user) const noexcept { return user; }
  NodeIndex item_node(std::uint32_t item) const noexcept {
    return static_cast<NodeIndex>(n_users_ + item);
  }

 private:
  std::size_t n_users_ = 0;
  std::size_t n_items_ = 0;
  std::vector<Hyperedge> edges_;
  std::vector<std::vector<std::uint32_t>> incidence_;
};

/// One hyperedge per (user, behaviour, floor(timestamp / window_seconds)) holding the user and
/// every distinct item touched in that bucket. window_seconds = 0 disables bucketing. Edges are
/// sorted by (behaviour, user, bucket).
Hypergraph build_hypergraph(const Dataset& ds, std::int64_t window_seconds);

/// Neighbourhood of one user, in its own local node numbering.
struct EgoGraph {
  /// Local index of the anchor user.
  NodeIndex anchor = 0;
  /// Local -> global node index; injective.
  std::vector<NodeIndex> node_map;
  /// User count of the global graph; global indices below it are users.
  std::size_t global_users = 0;
  /// Hyperedges over local indices (sorted within each edge).
  std::vector<Hyperedge> edges;

  std::size_t n_nodes() const noexcept { return node_map.size(); }
  bool is_user(NodeIndex local) const { return node_map.at(local) < global_users; }
};

/// hops = 1: hyperedges containing the user plus their members. hops = 2 additionally pulls
/// in every hyperedge touching one of those items. Local order: anchor first, then remaining
/// nodes by ascending global index.
EgoGraph ego_subgraph(const Hypergraph& g, NodeIndex user, int hops = 1);

/// Local nodes that belong to at least one hyperedge of behaviour `b`, ascending.
std::vector<NodeIndex> nodes_with_behaviour(const EgoGraph& ego, Behaviour b);

struct IncidenceStats {
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::size_t n_hyperedges = 0;
  /// Sum of (|e| - 1): distinct (user, behaviour, bucket, item) tuples.
  std::size_t interactions = 0;
  double mean_edge_size = 0.0;
  bool empty = true;
  /// interactions / (users * items).
  double density = 0.0;
};

IncidenceStats incidence_stats(const Hypergraph& g);

/// One line per hyperedge: `behaviour<TAB>node,node,...` with global indices.
void dump_hypergraph(const Hypergraph& g, std::ostream& out);

}  // namespace hgrec
