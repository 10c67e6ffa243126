#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "hgrec/cli.hpp"
#include "hgrec/data.hpp"
#include "hgrec/encoder.hpp"
#include "hgrec/hypergraph.hpp"
#include "hgrec/matrix.hpp"
#include "hgrec/random.hpp"

namespace testing {

inline hgrec::InteractionRecord rec(std::string user, std::string item, hgrec::Behaviour b,
                                    std::int64_t t) {
  return {std::move(user), std::move(item), b, t};
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("hgrec-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

inline hgrec::Matrix random_matrix(std::size_t r, std::size_t c, hgrec::Rng& rng, double scale = 1.0) {
  hgrec::Matrix m(r, c);
  for (double& v : m.values()) v = rng.uniform(-scale, scale);
  return m;
}

/// Central difference of f with respect to every entry of `x` (modified in place, restored).
inline hgrec::Matrix numeric_gradient(hgrec::Matrix& x, const std::function<double()>& f,
                                      double eps = 1e-6) {
  hgrec::Matrix g(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x.values()[i];
    x.values()[i] = orig + eps;
    const double up = f();
    x.values()[i] = orig - eps;
    const double down = f();
    x.values()[i] = orig;
    g.values()[i] = (up - down) / (2 * eps);
  }
  return g;
}

/// Random ego graph in local numbering: users first (node 0 is the anchor), then items. Every
/// hyperedge holds one user and at least one item.
inline hgrec::EgoGraph random_ego(hgrec::Rng& rng, std::size_t max_nodes, std::size_t max_edges) {
  using hgrec::NodeIndex;
  const std::size_t n = 2 + rng.index(max_nodes - 1);
  const std::size_t n_users = 1 + rng.index(n - 1);
  hgrec::EgoGraph ego;
  ego.global_users = n_users;
  for (std::size_t v = 0; v < n; ++v) ego.node_map.push_back(static_cast<NodeIndex>(v));
  const std::size_t n_edges = rng.index(max_edges + 1);
  for (std::size_t e = 0; e < n_edges; ++e) {
    hgrec::Hyperedge edge;
    edge.behaviour = hgrec::kAllBehaviours[rng.index(hgrec::kBehaviourCount)];
    edge.nodes.push_back(static_cast<NodeIndex>(rng.index(n_users)));
    const std::size_t n_items = n - n_users;
    for (std::size_t i = 0; i < n_items; ++i) {
      if (rng.index(3) == 0) edge.nodes.push_back(static_cast<NodeIndex>(n_users + i));
    }
    if (edge.nodes.size() == 1) edge.nodes.push_back(static_cast<NodeIndex>(n_users + rng.index(n_items)));
    ego.edges.push_back(std::move(edge));
  }
  return ego;
}

inline hgrec::ConvLayerParams random_conv(std::size_t d, hgrec::Rng& rng) {
  return {random_matrix(d, d, rng), random_matrix(1, d, rng, 0.5) + hgrec::Matrix(1, d, 1.0),
          random_matrix(1, d, rng, 0.5), 1e-5};
}

inline hgrec::ReadoutParams random_readout(std::size_t d, hgrec::Rng& rng) {
  return {random_matrix(d, d, rng), random_matrix(1, d, rng), random_matrix(d, d, rng),
          random_matrix(1, d, rng), random_matrix(d, d, rng), random_matrix(1, d, rng)};
}

/// Reference convolution: explicit node-by-node aggregation matrix M built by double loop, then
/// LayerNorm(ReLU(M H W)) with plain loops.
inline hgrec::Matrix dense_conv_oracle(const hgrec::Matrix& h, const hgrec::EgoGraph& ego,
                                       const hgrec::ConvLayerParams& p) {
  const std::size_t n = h.rows(), d = h.cols();
  std::vector<std::vector<double>> m(n, std::vector<double>(n, 0.0));
  for (std::size_t v = 0; v < n; ++v) {
    for (const auto& e : ego.edges) {
      bool member = false;
      for (auto x : e.nodes) member = member || x == v;
      if (!member) continue;
      for (auto u : e.nodes) m[v][u] += 1.0 / static_cast<double>(e.nodes.size());
    }
  }
  hgrec::Matrix out(n, d);
  for (std::size_t v = 0; v < n; ++v) {
    std::vector<double> msg(d, 0.0), act(d, 0.0);
    for (std::size_t u = 0; u < n; ++u)
      for (std::size_t j = 0; j < d; ++j) msg[j] += m[v][u] * h(u, j);
    for (std::size_t j = 0; j < d; ++j) {
      double z = 0;
      for (std::size_t k = 0; k < d; ++k) z += msg[k] * p.weight(k, j);
      act[j] = z > 0 ? z : 0;
    }
    double mean = 0, var = 0;
    for (double a : act) mean += a / d;
    for (double a : act) var += (a - mean) * (a - mean) / d;
    for (std::size_t j = 0; j < d; ++j) {
      out(v, j) = (act[j] - mean) / std::sqrt(var + p.ln_epsilon) * p.ln_gain(0, j) + p.ln_bias(0, j);
    }
  }
  return out;
}

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

/// Runs the hgrec command line in-process.
inline CliResult run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv = {"hgrec"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = hgrec::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

}  // namespace testing
