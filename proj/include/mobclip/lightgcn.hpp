#pragma once

// LightGCN mobility encoder: a learnable node table propagated over the
// normalized binary adjacency for L layers, with all layer outputs summed.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mobclip/embedding.hpp"
#include "mobclip/errors.hpp"
#include "mobclip/graph.hpp"

namespace mobclip::mobenc {

enum class NormMode { symmetric, row };

inline NormMode parse_norm_mode(const std::string& s) {
  if (s == "symmetric") return NormMode::symmetric;
  if (s == "row") return NormMode::row;
  throw ConfigError("mobenc.norm_mode must be 'symmetric' or 'row', got '" + s + "'");
}

/// Normalized adjacency in CSR form plus the layer count.
///   symmetric: A[i][j] = 1 / sqrt(d_i d_j)
///   row:       A[i][j] = 1 / sqrt(d_i)
struct PropagationPlan {
  std::size_t nodes = 0;
  std::vector<std::uint64_t> offsets{0};
  std::vector<std::uint32_t> cols;
  std::vector<double> values;
  int layers = 2;
  NormMode mode = NormMode::symmetric;
};

inline PropagationPlan make_plan(const graph::MobilityGraph& g, int layers = 2, NormMode mode = NormMode::symmetric) {
  if (layers < 0) throw ConfigError("mobenc.layers must be >= 0");
  PropagationPlan p;
  p.nodes = g.node_count();
  p.layers = layers;
  p.mode = mode;
  p.offsets = g.row_offsets();
  p.cols = g.col_indices();
  p.values.resize(p.cols.size());
  for (std::size_t i = 0; i < p.nodes; ++i) {
    const double di = static_cast<double>(g.degree(i));
    for (auto k = p.offsets[i]; k < p.offsets[i + 1]; ++k) {
      const double dj = static_cast<double>(g.degree(p.cols[k]));
      p.values[k] = mode == NormMode::symmetric ? 1.0 / std::sqrt(di * dj) : 1.0 / std::sqrt(di);
    }
  }
  return p;
}

namespace detail {

template <typename S>
void check_shape(const RowMatrix<S>& x, const PropagationPlan& plan) {
  if (static_cast<std::size_t>(x.rows()) != plan.nodes)
    throw ValidationError("propagation: table has " + std::to_string(x.rows()) + " rows, plan has " +
                          std::to_string(plan.nodes) + " nodes");
}

/// y = A x
template <typename S>
void apply(const PropagationPlan& p, const RowMatrix<S>& x, RowMatrix<S>& y) {
  y.setZero(x.rows(), x.cols());
  for (std::size_t i = 0; i < p.nodes; ++i)
    for (auto k = p.offsets[i]; k < p.offsets[i + 1]; ++k)
      y.row(static_cast<Eigen::Index>(i)) += static_cast<S>(p.values[k]) * x.row(p.cols[k]);
}

/// y = A^T x
template <typename S>
void apply_transpose(const PropagationPlan& p, const RowMatrix<S>& x, RowMatrix<S>& y) {
  y.setZero(x.rows(), x.cols());
  for (std::size_t i = 0; i < p.nodes; ++i)
    for (auto k = p.offsets[i]; k < p.offsets[i + 1]; ++k)
      y.row(p.cols[k]) += static_cast<S>(p.values[k]) * x.row(static_cast<Eigen::Index>(i));
}

}  // namespace detail

/// e = sum_{k=0..L} A^k e0
template <typename S>
RowMatrix<S> propagate(const RowMatrix<S>& table, const PropagationPlan& plan) {
  detail::check_shape(table, plan);
  RowMatrix<S> out = table;
  RowMatrix<S> layer = table;
  RowMatrix<S> next;
  for (int l = 0; l < plan.layers; ++l) {
    detail::apply(plan, layer, next);
    out += next;
    layer.swap(next);
  }
  return out;
}

/// Adjoint of propagate: sum_{k=0..L} (A^T)^k g.
template <typename S>
RowMatrix<S> propagate_backward(const RowMatrix<S>& grad_out, const PropagationPlan& plan) {
  detail::check_shape(grad_out, plan);
  RowMatrix<S> out = grad_out;
  RowMatrix<S> layer = grad_out;
  RowMatrix<S> next;
  for (int l = 0; l < plan.layers; ++l) {
    detail::apply_transpose(plan, layer, next);
    out += next;
    layer.swap(next);
  }
  return out;
}

/// The encoder's only trainable state is the node table.
struct MobilityEncoder {
  RowMatrixXd table;
  PropagationPlan plan;

  std::size_t parameter_count() const noexcept { return static_cast<std::size_t>(table.size()); }
  RowMatrixXd forward() const { return propagate(table, plan); }
  RowMatrixXd backward(const RowMatrixXd& grad_out) const { return propagate_backward(grad_out, plan); }
};

/// Node table for the sampled subgraph initialized from LINE rows (matched by
/// cell id). Cells missing from the LINE table start at zero.
inline RowMatrixXd init_from(const graph::MobilityGraph& g, const EmbeddingTable& line) {
  RowMatrixXd t = RowMatrixXd::Zero(static_cast<Eigen::Index>(g.node_count()), static_cast<Eigen::Index>(line.dim()));
  for (std::size_t i = 0; i < g.node_count(); ++i)
    if (auto r = line.find(g.nodes()[i])) t.row(static_cast<Eigen::Index>(i)) = line.row(*r);
  return t;
}

}  // namespace mobclip::mobenc
