#pragma once

// Second-order LINE: every undirected edge is two directed edges; a sampled
// edge (i, j) ascends log s(c_j . v_i) + sum_k log s(-c_n . v_i) with
// negatives n drawn proportionally to weighted degree^power. Only the target
// vectors v are returned.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "mobclip/alias.hpp"
#include "mobclip/embedding.hpp"
#include "mobclip/errors.hpp"
#include "mobclip/graph.hpp"

namespace mobclip::line {

struct LineConfig {
  std::size_t dim = 128;
  int negatives_per_edge = 5;
  std::uint64_t total_samples = 1'000'000;
  double lr_init = 0.025;
  double noise_power = 0.75;
  std::uint64_t seed = 1;
  unsigned threads = 1;  // > 1 enables lock-free asynchronous updates

  void validate() const {
    if (dim == 0) throw ConfigError("line.dim must be positive");
    if (negatives_per_edge < 1) throw ConfigError("line.negatives_per_edge must be >= 1");
    if (!(lr_init >= 0.0) || !std::isfinite(lr_init)) throw ConfigError("line.lr_init must be >= 0");
    if (!std::isfinite(noise_power)) throw ConfigError("line.noise_power must be finite");
    if (threads == 0) throw ConfigError("line.threads must be >= 1");
  }
};

template <typename S>
S log_sigmoid(S x) {
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

template <typename S>
S sigmoid(S x) {
  if (x >= 0) return S(1) / (S(1) + std::exp(-x));
  const S e = std::exp(x);
  return e / (S(1) + e);
}

/// Per-sample objective. Row 0 of `ctx` is the positive context, the rest
/// are negatives.
template <typename S>
S sample_objective(const Eigen::Matrix<S, Eigen::Dynamic, 1>& v, const RowMatrix<S>& ctx) {
  S total = log_sigmoid<S>(ctx.row(0).dot(v));
  for (Eigen::Index k = 1; k < ctx.rows(); ++k) total += log_sigmoid<S>(-ctx.row(k).dot(v));
  return total;
}

/// Analytic gradient of sample_objective w.r.t. v and each context row.
template <typename S>
void sample_gradient(const Eigen::Matrix<S, Eigen::Dynamic, 1>& v, const RowMatrix<S>& ctx,
                     Eigen::Matrix<S, Eigen::Dynamic, 1>& grad_v, RowMatrix<S>& grad_ctx) {
  grad_v.setZero(v.size());
  grad_ctx.setZero(ctx.rows(), ctx.cols());
  for (Eigen::Index k = 0; k < ctx.rows(); ++k) {
    const S label = k == 0 ? S(1) : S(0);
    const S g = label - sigmoid<S>(ctx.row(k).dot(v));
    grad_v += g * ctx.row(k).transpose();
    grad_ctx.row(k) = g * v.transpose();
  }
}

namespace detail {

template <bool Atomic>
inline double load(double& x) {
  if constexpr (Atomic) return std::atomic_ref<double>(x).load(std::memory_order_relaxed);
  else return x;
}

template <bool Atomic>
inline void add(double& x, double d) {
  if constexpr (Atomic) {
    std::atomic_ref<double> r(x);
    r.store(r.load(std::memory_order_relaxed) + d, std::memory_order_relaxed);
  } else {
    x += d;
  }
}

}  // namespace detail

/// One SGD ascent step for a sampled edge, in the classic LINE order: the
/// target's accumulated error is applied after all context updates.
template <bool Atomic = false>
void sgd_step(double* v, std::span<double* const> ctx_rows, std::size_t dim, double lr, double* err) {
  std::fill(err, err + dim, 0.0);
  for (std::size_t k = 0; k < ctx_rows.size(); ++k) {
    double* c = ctx_rows[k];
    double f = 0.0;
    for (std::size_t d = 0; d < dim; ++d) f += detail::load<Atomic>(v[d]) * detail::load<Atomic>(c[d]);
    const double g = ((k == 0 ? 1.0 : 0.0) - sigmoid(f)) * lr;
    for (std::size_t d = 0; d < dim; ++d) err[d] += g * detail::load<Atomic>(c[d]);
    for (std::size_t d = 0; d < dim; ++d) detail::add<Atomic>(c[d], g * detail::load<Atomic>(v[d]));
  }
  for (std::size_t d = 0; d < dim; ++d) detail::add<Atomic>(v[d], err[d]);
}

/// Negative-sampling distribution over nodes (weighted degree^power). Isolated
/// nodes are never drawn; `draw` returns node ordinals.
class NoiseSampler {
public:
  NoiseSampler(const graph::MobilityGraph& g, double power) {
    std::vector<double> w;
    for (std::size_t i = 0; i < g.node_count(); ++i) {
      if (g.degree(i) == 0) continue;
      nodes_.push_back(static_cast<std::uint32_t>(i));
      w.push_back(std::pow(g.weighted_degree(i), power));
    }
    if (nodes_.empty()) throw ValidationError("noise distribution over a graph with no edges");
    table_ = AliasTable(w);
  }

  template <typename Rng>
  std::uint32_t operator()(Rng& rng) const {
    return nodes_[table_(rng)];
  }

  const std::vector<std::uint32_t>& support() const noexcept { return nodes_; }
  const AliasTable& table() const noexcept { return table_; }

private:
  std::vector<std::uint32_t> nodes_;
  AliasTable table_;
};

inline std::vector<std::size_t> isolated_nodes(const graph::MobilityGraph& g) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < g.node_count(); ++i)
    if (g.degree(i) == 0) out.push_back(i);
  return out;
}

/// Uniform [-0.5/dim, 0.5/dim] target vectors; isolated nodes stay zero.
inline RowMatrixXd initial_vectors(const graph::MobilityGraph& g, const LineConfig& cfg) {
  RowMatrixXd v(static_cast<Eigen::Index>(g.node_count()), static_cast<Eigen::Index>(cfg.dim));
  std::mt19937_64 rng(cfg.seed);
  const double half = 0.5 / static_cast<double>(cfg.dim);
  std::uniform_real_distribution<double> u(-half, half);
  for (Eigen::Index i = 0; i < v.rows(); ++i)
    for (Eigen::Index j = 0; j < v.cols(); ++j) v(i, j) = u(rng);
  for (auto i : isolated_nodes(g)) v.row(static_cast<Eigen::Index>(i)).setZero();
  return v;
}

struct LineResult {
  EmbeddingTable embeddings;
  std::vector<std::size_t> isolated;  // ordinals left at zero
};

inline LineResult train_line(const graph::MobilityGraph& g, const LineConfig& cfg) {
  cfg.validate();
  if (g.edge_count() == 0) throw ValidationError("LINE needs a graph with at least one edge");

  std::vector<std::uint32_t> src, dst;
  std::vector<double> w;
  src.reserve(2 * g.edge_count());
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    auto nb = g.neighbors(i);
    auto nw = g.neighbor_weights(i);
    for (std::size_t k = 0; k < nb.size(); ++k) {
      src.push_back(static_cast<std::uint32_t>(i));
      dst.push_back(nb[k]);
      w.push_back(nw[k]);
    }
  }
  const AliasTable edge_table(w);
  const NoiseSampler noise(g, cfg.noise_power);

  RowMatrixXd vec = initial_vectors(g, cfg);
  RowMatrixXd ctx = RowMatrixXd::Zero(vec.rows(), vec.cols());
  const std::size_t dim = cfg.dim;
  const std::size_t k_total = static_cast<std::size_t>(cfg.negatives_per_edge) + 1;
  const double total = static_cast<double>(cfg.total_samples);

  auto rate = [&](std::uint64_t count) {
    return std::max(cfg.lr_init * (1.0 - static_cast<double>(count) / (total + 1.0)), cfg.lr_init * 1e-4);
  };

  // Each worker walks its own slice; progress is scaled by the worker count so
  // every slice sees the full learning-rate decay.
  auto run = [&]<bool Atomic>(std::uint64_t begin, std::uint64_t end, std::uint64_t stream, std::uint64_t stride) {
    std::mt19937_64 rng(derive_seed(cfg.seed, stream + 0x51ed));
    std::vector<double*> rows(k_total);
    std::vector<double> err(dim);
    for (std::uint64_t s = begin; s < end; ++s) {
      const std::size_t e = edge_table(rng);
      rows[0] = ctx.row(dst[e]).data();
      for (std::size_t k = 1; k < k_total; ++k) rows[k] = ctx.row(noise(rng)).data();
      sgd_step<Atomic>(vec.row(src[e]).data(), rows, dim, rate((s - begin) * stride), err.data());
    }
  };

  if (cfg.threads <= 1) {
    run.template operator()<false>(0, cfg.total_samples, 0, 1);
  } else {
    // Hogwild: rows are shared without locks, so results depend on scheduling.
    std::vector<std::thread> pool;
    const std::uint64_t per = (cfg.total_samples + cfg.threads - 1) / cfg.threads;
    for (unsigned t = 0; t < cfg.threads; ++t) {
      const std::uint64_t b = std::min<std::uint64_t>(t * per, cfg.total_samples);
      const std::uint64_t e = std::min<std::uint64_t>(b + per, cfg.total_samples);
      pool.emplace_back([&, b, e, t] { run.template operator()<true>(b, e, t, cfg.threads); });
    }
    for (auto& t : pool) t.join();
  }

  return {EmbeddingTable(g.nodes(), std::move(vec)), isolated_nodes(g)};
}

}  // namespace mobclip::line
