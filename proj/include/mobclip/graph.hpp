#pragma once

// Mobility graph construction from co-visitation events and per-node edge
// sampling (top-k by flow, or uniform random).

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mobclip/binary_io.hpp"
#include "mobclip/embedding.hpp"
#include "mobclip/errors.hpp"
#include "mobclip/hexgrid.hpp"
#include "mobclip/random.hpp"

namespace mobclip::graph {

struct EventRecord {
  std::string entity_id;
  CellId cell;
  std::int64_t bucket = 0;
};

/// Undirected weighted graph over cells in CSR form. Every undirected edge is
/// stored in both endpoint rows; columns are sorted within a row.
class MobilityGraph {
public:
  MobilityGraph() : offsets_{0} {}

  MobilityGraph(std::vector<CellId> nodes, std::vector<std::uint64_t> offsets,
                std::vector<std::uint32_t> cols, std::vector<double> weights)
      : nodes_(std::move(nodes)), offsets_(std::move(offsets)), cols_(std::move(cols)), weights_(std::move(weights)) {
    validate();
  }

  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t edge_count() const noexcept { return cols_.size() / 2; }
  std::size_t degree(std::size_t i) const { return offsets_[i + 1] - offsets_[i]; }

  const std::vector<CellId>& nodes() const noexcept { return nodes_; }
  const std::vector<std::uint64_t>& row_offsets() const noexcept { return offsets_; }
  const std::vector<std::uint32_t>& col_indices() const noexcept { return cols_; }
  const std::vector<double>& weights() const noexcept { return weights_; }

  std::span<const std::uint32_t> neighbors(std::size_t i) const {
    return {cols_.data() + offsets_[i], degree(i)};
  }
  std::span<const double> neighbor_weights(std::size_t i) const {
    return {weights_.data() + offsets_[i], degree(i)};
  }

  double weighted_degree(std::size_t i) const {
    auto w = neighbor_weights(i);
    return std::accumulate(w.begin(), w.end(), 0.0);
  }

  std::optional<std::size_t> index_of(CellId c) const {
    auto it = std::lower_bound(nodes_.begin(), nodes_.end(), c);
    if (it == nodes_.end() || *it != c) return std::nullopt;
    return static_cast<std::size_t>(it - nodes_.begin());
  }

  /// Edge weight between ordinals i and j, 0 when absent.
  double weight(std::size_t i, std::size_t j) const {
    auto nb = neighbors(i);
    auto it = std::lower_bound(nb.begin(), nb.end(), static_cast<std::uint32_t>(j));
    if (it == nb.end() || *it != j) return 0.0;
    return weights_[offsets_[i] + static_cast<std::size_t>(it - nb.begin())];
  }

  bool operator==(const MobilityGraph&) const = default;

  void validate() const {
    const std::size_t n = nodes_.size();
    if (offsets_.size() != n + 1 || offsets_.front() != 0 || offsets_.back() != cols_.size() ||
        cols_.size() != weights_.size())
      throw ValidationError("graph: inconsistent CSR array sizes");
    if (!std::is_sorted(nodes_.begin(), nodes_.end()) ||
        std::adjacent_find(nodes_.begin(), nodes_.end()) != nodes_.end())
      throw ValidationError("graph: node index must be strictly increasing");
    for (std::size_t i = 0; i < n; ++i) {
      if (offsets_[i] > offsets_[i + 1]) throw ValidationError("graph: row offsets decrease");
      auto nb = neighbors(i);
      auto w = neighbor_weights(i);
      for (std::size_t k = 0; k < nb.size(); ++k) {
        if (nb[k] >= n) throw ValidationError("graph: column index out of range");
        if (nb[k] == i) throw ValidationError("graph: self-loop at node " + std::to_string(i));
        if (k && nb[k - 1] >= nb[k]) throw ValidationError("graph: columns not strictly sorted");
        if (!(w[k] > 0.0) || !std::isfinite(w[k])) throw ValidationError("graph: non-positive weight");
        if (weight(nb[k], i) != w[k]) throw ValidationError("graph: asymmetric edge");
      }
    }
  }

private:
  std::vector<CellId> nodes_;
  std::vector<std::uint64_t> offsets_;
  std::vector<std::uint32_t> cols_;
  std::vector<double> weights_;
};

struct PairHash {
  std::size_t operator()(const std::pair<std::uint32_t, std::uint32_t>& p) const noexcept {
    return hexgrid::CellIdHash{}(CellId((std::uint64_t{p.first} << 32) | p.second));
  }
};

/// Builds CSR from an undirected edge map keyed by (i < j) ordinals.
template <typename EdgeMap>
MobilityGraph from_edge_map(std::vector<CellId> nodes, const EdgeMap& edges) {
  const std::size_t n = nodes.size();
  std::vector<std::vector<std::pair<std::uint32_t, double>>> rows(n);
  for (const auto& [key, w] : edges) {
    rows[key.first].emplace_back(key.second, w);
    rows[key.second].emplace_back(key.first, w);
  }
  std::vector<std::uint64_t> offsets(n + 1, 0);
  std::vector<std::uint32_t> cols;
  std::vector<double> weights;
  cols.reserve(2 * edges.size());
  weights.reserve(2 * edges.size());
  for (std::size_t i = 0; i < n; ++i) {
    std::sort(rows[i].begin(), rows[i].end());
    for (auto [j, w] : rows[i]) {
      cols.push_back(j);
      weights.push_back(w);
    }
    offsets[i + 1] = cols.size();
  }
  return MobilityGraph(std::move(nodes), std::move(offsets), std::move(cols), std::move(weights));
}

/// Accumulates events and emits the co-visitation graph. Each (entity, bucket)
/// group contributes +1 to every unordered pair of distinct cells it visited;
/// repeated visits within a group count once.
class GraphBuilder {
public:
  void add(const EventRecord& e) {
    if (e.bucket < 0) throw ValidationError("event bucket must be >= 0");
    groups_[{e.entity_id, e.bucket}].push_back(e.cell);
  }

  /// `threads` > 1 shards groups by entity hash; partial edge maps are merged
  /// by weight addition, so the result does not depend on the shard count.
  MobilityGraph finish(unsigned threads = 1) const {
    std::vector<CellId> nodes;
    for (const auto& [key, cells] : groups_) nodes.insert(nodes.end(), cells.begin(), cells.end());
    std::sort(nodes.begin(), nodes.end());
    nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
    auto ordinal = [&](CellId c) {
      return static_cast<std::uint32_t>(std::lower_bound(nodes.begin(), nodes.end(), c) - nodes.begin());
    };

    using EdgeMap = std::unordered_map<std::pair<std::uint32_t, std::uint32_t>, double, PairHash>;
    threads = std::max(1u, threads);
    std::vector<const std::pair<const GroupKey, std::vector<CellId>>*> all;
    all.reserve(groups_.size());
    for (const auto& g : groups_) all.push_back(&g);

    std::vector<EdgeMap> partial(threads);
    auto work = [&](unsigned shard) {
      std::vector<std::uint32_t> ords;
      for (const auto* g : all) {
        if (threads > 1 && std::hash<std::string>{}(g->first.first) % threads != shard) continue;
        ords.clear();
        for (CellId c : g->second) ords.push_back(ordinal(c));
        std::sort(ords.begin(), ords.end());
        ords.erase(std::unique(ords.begin(), ords.end()), ords.end());
        for (std::size_t a = 0; a < ords.size(); ++a)
          for (std::size_t b = a + 1; b < ords.size(); ++b) partial[shard][{ords[a], ords[b]}] += 1.0;
      }
    };
    if (threads == 1) {
      work(0);
    } else {
      std::vector<std::thread> pool;
      for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t);
      for (auto& t : pool) t.join();
      for (unsigned t = 1; t < threads; ++t)
        for (const auto& [k, w] : partial[t]) partial[0][k] += w;
    }
    return from_edge_map(std::move(nodes), partial[0]);
  }

private:
  using GroupKey = std::pair<std::string, std::int64_t>;
  std::map<GroupKey, std::vector<CellId>> groups_;
};

template <typename Range>
MobilityGraph build_graph(const Range& events, unsigned threads = 1) {
  GraphBuilder b;
  for (const EventRecord& e : events) b.add(e);
  return b.finish(threads);
}

// ---------------------------------------------------------------------------
// Sampling

/// ceil(ratio * degree), at least 1 for any node with an edge. The small
/// guard absorbs products like 0.1 * 30 = 3.0000000000000004.
inline std::size_t keep_count(double ratio, std::size_t degree) {
  if (degree == 0) return 0;
  const double k = std::ceil(ratio * static_cast<double>(degree) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(k, 1.0)), 1, degree);
}

inline void require_ratio(double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ValidationError("sampling ratio must lie in (0, 1]");
}

using KeptEdges = std::vector<std::vector<std::uint32_t>>;

/// Per-node top-k selection: highest weight first, ties to the smaller cell id.
inline KeptEdges select_topk(const MobilityGraph& g, double ratio) {
  require_ratio(ratio);
  KeptEdges kept(g.node_count());
  std::vector<std::pair<double, std::uint32_t>> order;
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    auto nb = g.neighbors(i);
    auto w = g.neighbor_weights(i);
    order.clear();
    for (std::size_t k = 0; k < nb.size(); ++k) order.emplace_back(w[k], nb[k]);
    // Ordinals follow the sorted node index, so ordinal order == cell id order.
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    const std::size_t k = keep_count(ratio, nb.size());
    for (std::size_t t = 0; t < k; ++t) kept[i].push_back(order[t].second);
    std::sort(kept[i].begin(), kept[i].end());
  }
  return kept;
}

/// Per-node uniform selection without replacement. Each node draws from its
/// own generator seeded from (seed, ordinal), so rows are independent.
inline KeptEdges select_random(const MobilityGraph& g, double ratio, std::uint64_t seed) {
  require_ratio(ratio);
  KeptEdges kept(g.node_count());
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    auto nb = g.neighbors(i);
    std::vector<std::uint32_t> pool(nb.begin(), nb.end());
    const std::size_t k = keep_count(ratio, pool.size());
    std::mt19937_64 rng(derive_seed(seed, i));
    for (std::size_t t = 0; t < k; ++t) {
      std::uniform_int_distribution<std::size_t> pick(t, pool.size() - 1);
      std::swap(pool[t], pool[pick(rng)]);
    }
    kept[i].assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(kept[i].begin(), kept[i].end());
  }
  return kept;
}

/// Union symmetrization: an edge survives if either endpoint kept it. The
/// node index is preserved, weights are copied from the input.
inline MobilityGraph symmetrize_union(const MobilityGraph& g, const KeptEdges& kept) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, double> edges;
  for (std::size_t i = 0; i < kept.size(); ++i)
    for (std::uint32_t j : kept[i]) {
      const auto a = static_cast<std::uint32_t>(std::min<std::size_t>(i, j));
      const auto b = static_cast<std::uint32_t>(std::max<std::size_t>(i, j));
      edges[{a, b}] = g.weight(i, j);
    }
  return from_edge_map(g.nodes(), edges);
}

inline MobilityGraph sample_topk(const MobilityGraph& g, double ratio = 0.10) {
  return symmetrize_union(g, select_topk(g, ratio));
}

inline MobilityGraph sample_random(const MobilityGraph& g, double ratio, std::uint64_t seed) {
  return symmetrize_union(g, select_random(g, ratio, seed));
}

// ---------------------------------------------------------------------------
// I/O

/// Events as TSV, either pre-tokenized "entity \t cell_id \t bucket" or raw
/// "entity \t lat \t lon \t bucket" (requires a grid).
template <typename Sink>
void read_events(std::istream& is, const hexgrid::GridConfig* grid, Sink&& sink) {
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto s = io::trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto cols = io::split(s, '\t');
    EventRecord e;
    if (cols.size() == 3) {
      e.entity_id = std::string(io::trim(cols[0]));
      e.cell = io::parse_cell(cols[1], lineno);
      e.bucket = io::parse_number<std::int64_t>(cols[2], lineno, "bucket");
    } else if (cols.size() == 4) {
      if (!grid) throw ParseError("lat/lon event rows need a grid configuration", lineno);
      e.entity_id = std::string(io::trim(cols[0]));
      hexgrid::GeoCoord c{io::parse_number<double>(cols[1], lineno, "latitude"),
                          io::parse_number<double>(cols[2], lineno, "longitude")};
      if (!c.valid()) throw ParseError("coordinate out of range", lineno);
      e.cell = hexgrid::cell_of(c, *grid);
      e.bucket = io::parse_number<std::int64_t>(cols[3], lineno, "bucket");
    } else {
      throw ParseError("expected 3 or 4 tab-separated columns, got " + std::to_string(cols.size()), lineno);
    }
    if (e.entity_id.empty()) throw ParseError("empty entity id", lineno);
    if (e.bucket < 0) throw ParseError("bucket must be >= 0", lineno);
    sink(std::move(e));
  }
}

inline void write_events(std::ostream& os, const std::vector<EventRecord>& events) {
  for (const auto& e : events) os << e.entity_id << '\t' << e.cell.packed() << '\t' << e.bucket << '\n';
}

inline constexpr std::string_view kGraphMagic = "MGR1";

/// MGR1: magic, u64 nodes, u64 undirected edges, node ids (u64), row offsets
/// (n+1 x u64), column ordinals (2m x u32), weights (2m x f64).
inline void write_graph(std::ostream& os, const MobilityGraph& g) {
  io::LeWriter w(os);
  w.magic(kGraphMagic);
  w.put<std::uint64_t>(g.node_count());
  w.put<std::uint64_t>(g.edge_count());
  for (CellId c : g.nodes()) w.put<std::uint64_t>(c.packed());
  for (auto o : g.row_offsets()) w.put<std::uint64_t>(o);
  for (auto c : g.col_indices()) w.put<std::uint32_t>(c);
  for (auto x : g.weights()) w.put<double>(x);
  w.check();
}

inline MobilityGraph read_graph(std::istream& is) {
  io::LeReader r(is);
  r.expect_magic(kGraphMagic);
  const auto n = r.get<std::uint64_t>();
  const auto m_at = r.offset();
  const auto m = r.get<std::uint64_t>();
  if (n > (std::uint64_t{1} << 32) || m > (std::uint64_t{1} << 40))
    throw ParseError("implausible graph size", -1, m_at);
  std::vector<CellId> nodes(n);
  for (auto& c : nodes) c = CellId(r.get<std::uint64_t>());
  std::vector<std::uint64_t> offsets(n + 1);
  for (auto& o : offsets) o = r.get<std::uint64_t>();
  std::vector<std::uint32_t> cols(2 * m);
  for (auto& c : cols) c = r.get<std::uint32_t>();
  std::vector<double> weights(2 * m);
  for (auto& x : weights) x = r.get<double>();
  r.expect_eof();
  try {
    return MobilityGraph(std::move(nodes), std::move(offsets), std::move(cols), std::move(weights));
  } catch (const ValidationError& e) {
    throw ParseError(std::string("invalid graph payload: ") + e.what(), -1, r.offset());
  }
}

inline void save_graph(const std::string& path, const MobilityGraph& g) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  write_graph(os, g);
}

inline MobilityGraph load_graph(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  return read_graph(is);
}

/// Text edge list "cell_a \t cell_b \t weight", each undirected edge once.
inline void write_edge_list(std::ostream& os, const MobilityGraph& g) {
  char buf[32];
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    auto nb = g.neighbors(i);
    auto w = g.neighbor_weights(i);
    for (std::size_t k = 0; k < nb.size(); ++k) {
      if (nb[k] < i) continue;
      auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), w[k]);
      os << g.nodes()[i].packed() << '\t' << g.nodes()[nb[k]].packed() << '\t';
      os.write(buf, p - buf);
      os << '\n';
    }
  }
}

/// Repeated pairs are summed; self-loops and non-positive weights are errors.
inline MobilityGraph read_edge_list(std::istream& is) {
  std::vector<std::tuple<CellId, CellId, double>> raw;
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto s = io::trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto cols = io::split(s, '\t');
    if (cols.size() != 3) throw ParseError("expected 'cell_a<TAB>cell_b<TAB>weight'", lineno);
    const CellId a = io::parse_cell(cols[0], lineno);
    const CellId b = io::parse_cell(cols[1], lineno);
    const double w = io::parse_number<double>(cols[2], lineno, "weight");
    if (a == b) throw ParseError("self-loop", lineno);
    if (!(w > 0.0)) throw ParseError("weight must be positive", lineno);
    raw.emplace_back(a, b, w);
  }
  std::vector<CellId> nodes;
  for (const auto& [a, b, w] : raw) {
    nodes.push_back(a);
    nodes.push_back(b);
  }
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  std::map<std::pair<std::uint32_t, std::uint32_t>, double> edges;
  auto ord = [&](CellId c) {
    return static_cast<std::uint32_t>(std::lower_bound(nodes.begin(), nodes.end(), c) - nodes.begin());
  };
  for (const auto& [a, b, w] : raw) {
    auto i = ord(a), j = ord(b);
    edges[{std::min(i, j), std::max(i, j)}] += w;
  }
  return from_edge_map(std::move(nodes), edges);
}

}  // namespace mobclip::graph
