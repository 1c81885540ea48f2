#pragma once

// Contrastive alignment of auxiliary modalities (image, text, demographics)
// with the LightGCN mobility encoder. Each modality X contributes
// L(M, X) + L(X, M), where L(A, B) = 1/(2N) sum_i -log softmax_j(<A_i, B_j>/tau)_i,
// and the total averages over the modalities present in the batch.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mobclip/embedding.hpp"
#include "mobclip/errors.hpp"
#include "mobclip/graph.hpp"
#include "mobclip/lightgcn.hpp"
#include "mobclip/nn.hpp"
#include "mobclip/random.hpp"

namespace mobclip::align {

enum class Modality : std::size_t { image = 0, text = 1, demo = 2 };
inline constexpr std::size_t kModalities = 3;
inline constexpr std::array<const char*, kModalities> kModalityNames{"image", "text", "demo"};

/// One cell's auxiliary observations; an empty optional marks the modality
/// as absent for that cell.
struct ModalityRecord {
  CellId cell;
  std::optional<std::vector<double>> image;
  std::optional<std::vector<double>> text;
  std::optional<std::vector<double>> demo_hist;
};

/// Per-modality input tables keyed by cell id. A table with zero rows means
/// the modality is absent from the dataset.
struct ModalityTables {
  std::array<EmbeddingTable, kModalities> tables;

  const EmbeddingTable& operator[](Modality m) const { return tables[static_cast<std::size_t>(m)]; }
  EmbeddingTable& operator[](Modality m) { return tables[static_cast<std::size_t>(m)]; }

  void validate() const {
    const auto& demo = (*this)[Modality::demo];
    const auto& v = demo.values();
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if (!(v.data()[i] >= 0.0) || !std::isfinite(v.data()[i]))
        throw ValidationError("demographic histogram entries must be finite and >= 0");
    for (const auto& t : tables) {
      const auto& x = t.values();
      for (Eigen::Index i = 0; i < x.size(); ++i)
        if (!std::isfinite(x.data()[i])) throw ValidationError("non-finite modality input");
    }
  }

  static ModalityTables from_records(const std::vector<ModalityRecord>& records) {
    ModalityTables out;
    auto gather = [&](auto member, Modality m) {
      std::vector<CellId> ids;
      std::vector<const std::vector<double>*> rows;
      for (const auto& r : records)
        if ((r.*member).has_value()) {
          ids.push_back(r.cell);
          rows.push_back(&*(r.*member));
        }
      const std::size_t dim = rows.empty() ? 0 : rows[0]->size();
      RowMatrixXd v(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i]->size() != dim)
          throw ValidationError(std::string(kModalityNames[static_cast<std::size_t>(m)]) +
                                " vectors must share one length");
        for (std::size_t j = 0; j < dim; ++j) v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (*rows[i])[j];
      }
      out[m] = EmbeddingTable(std::move(ids), std::move(v));
    };
    gather(&ModalityRecord::image, Modality::image);
    gather(&ModalityRecord::text, Modality::text);
    gather(&ModalityRecord::demo_hist, Modality::demo);
    out.validate();
    return out;
  }
};

struct AlignConfig {
  std::size_t dim = 128;
  double temperature = 0.07;
  std::size_t batch_size = 20480;
  std::size_t epochs = 100;
  double lr = 1e-3;
  double weight_decay = 1e-3;
  double val_fraction = 0.10;
  std::size_t demo_hidden = 256;
  int layers = 2;
  mobenc::NormMode norm_mode = mobenc::NormMode::symmetric;
  std::uint64_t seed = 1;

  void validate() const {
    if (dim == 0) throw ConfigError("align.dim must be positive");
    if (!(temperature > 0.0)) throw ConfigError("align.temperature must be > 0");
    if (batch_size == 0) throw ConfigError("align.batch_size must be positive");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("align.val_fraction must lie in (0, 1)");
    if (!(lr >= 0.0) || !(weight_decay >= 0.0)) throw ConfigError("align.lr and align.weight_decay must be >= 0");
    if (demo_hidden == 0) throw ConfigError("align.demo_hidden must be positive");
    if (layers < 0) throw ConfigError("align.layers must be >= 0");
  }

  /// Desk-scale settings used for synthetic end-to-end runs.
  static AlignConfig desk() {
    AlignConfig c;
    c.batch_size = 256;
    c.epochs = 30;
    return c;
  }
};

// ---------------------------------------------------------------------------
// Row-wise L2 normalization and InfoNCE

inline constexpr double kNormFloor = 1e-12;

inline RowMatrixXd normalize_rows(const RowMatrixXd& x) {
  RowMatrixXd y = x;
  for (Eigen::Index i = 0; i < y.rows(); ++i) y.row(i) /= std::max(x.row(i).norm(), kNormFloor);
  return y;
}

/// dL/dx for y = x / |x| given dL/dy.
inline RowMatrixXd normalize_rows_backward(const RowMatrixXd& x, const RowMatrixXd& grad_y) {
  RowMatrixXd gx(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double n = std::max(x.row(i).norm(), kNormFloor);
    const Eigen::RowVectorXd y = x.row(i) / n;
    gx.row(i) = (grad_y.row(i) - y * y.dot(grad_y.row(i))) / n;
  }
  return gx;
}

/// L(A, B) with its 1/(2N) prefactor; optionally accumulates gradients.
inline double info_nce_pair(const RowMatrixXd& a, const RowMatrixXd& b, double tau, RowMatrixXd* grad_a = nullptr,
                            RowMatrixXd* grad_b = nullptr) {
  const Eigen::Index n = a.rows();
  if (n == 0) throw ValidationError("InfoNCE over an empty batch");
  if (b.rows() != n || b.cols() != a.cols()) throw ValidationError("InfoNCE: mismatched batch shapes");
  if (!(tau > 0.0)) throw ValidationError("InfoNCE: temperature must be > 0");
  const RowMatrixXd logits = (a * b.transpose()) / tau;
  if (!logits.allFinite()) throw NumericError("InfoNCE: non-finite logits");
  const double scale = 1.0 / (2.0 * static_cast<double>(n));
  double loss = 0.0;
  RowMatrixXd dlogits(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp().matrix();
    const double z = e.sum();
    loss += (mx + std::log(z)) - logits(i, i);
    dlogits.row(i) = e / z;
    dlogits(i, i) -= 1.0;
  }
  if (grad_a || grad_b) {
    dlogits *= scale / tau;
    if (grad_a) *grad_a += dlogits * b;
    if (grad_b) *grad_b += dlogits.transpose() * a;
  }
  return loss * scale;
}

// ---------------------------------------------------------------------------
// Model

/// Per-feature standardization of log1p-transformed histograms.
struct DemoScaler {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;

  static DemoScaler identity(std::size_t dim) {
    return {Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(dim)), Eigen::RowVectorXd::Ones(static_cast<Eigen::Index>(dim))};
  }

  static DemoScaler fit(const RowMatrixXd& raw) {
    const RowMatrixXd x = raw.array().log1p().matrix();
    DemoScaler s;
    s.mean = x.colwise().mean();
    s.scale = ((x.rowwise() - s.mean).array().square().colwise().mean()).sqrt();
    for (Eigen::Index j = 0; j < s.scale.size(); ++j)
      if (!(s.scale[j] > 1e-12)) s.scale[j] = 1.0;
    return s;
  }

  RowMatrixXd apply(const RowMatrixXd& raw) const {
    RowMatrixXd x = raw.array().log1p().matrix();
    x.rowwise() -= mean;
    return x.array().rowwise() / scale.array();
  }
};

/// Trainable state: the mobility node table plus one head per modality.
struct AlignModel {
  mobenc::MobilityEncoder mobility;
  nn::Dense<double> image_proj;  // bias-free
  nn::Dense<double> text_proj;   // bias-free
  nn::Mlp<double> demo_mlp;
  DemoScaler demo_scaler;
  std::array<bool, kModalities> active{};
  double temperature = 0.07;
  RowMatrixXd grad_table;

  std::size_t dim() const { return static_cast<std::size_t>(mobility.table.cols()); }

  void zero_grad() {
    grad_table.setZero(mobility.table.rows(), mobility.table.cols());
    if (active[0]) image_proj.zero_grad();
    if (active[1]) text_proj.zero_grad();
    if (active[2]) demo_mlp.zero_grad();
  }

  std::vector<nn::ParamRef<double>> params() {
    std::vector<nn::ParamRef<double>> p;
    p.push_back({mobility.table.data(), grad_table.data(), static_cast<std::size_t>(mobility.table.size())});
    if (active[0]) nn::collect(image_proj, p);
    if (active[1]) nn::collect(text_proj, p);
    if (active[2]) nn::collect(demo_mlp, p);
    return p;
  }

  /// Unnormalized head output for raw modality rows.
  RowMatrixXd head_forward(Modality m, const RowMatrixXd& raw) {
    switch (m) {
      case Modality::image: return image_proj.forward(raw);
      case Modality::text: return text_proj.forward(raw);
      case Modality::demo: return demo_mlp.forward(demo_scaler.apply(raw));
    }
    return {};
  }

  void head_backward(Modality m, const RowMatrixXd& raw, const RowMatrixXd& grad_out) {
    switch (m) {
      case Modality::image: image_proj.backward(raw, grad_out, false); break;
      case Modality::text: text_proj.backward(raw, grad_out, false); break;
      case Modality::demo: demo_mlp.backward(grad_out, false); break;
    }
  }
};

/// Node-ordinal -> modality-row lookup for one graph.
struct ModalityIndex {
  std::array<std::vector<std::int64_t>, kModalities> row;  // -1 when absent

  ModalityIndex(const graph::MobilityGraph& g, const ModalityTables& tables) {
    for (std::size_t m = 0; m < kModalities; ++m) {
      row[m].assign(g.node_count(), -1);
      for (std::size_t i = 0; i < g.node_count(); ++i)
        if (auto r = tables.tables[m].find(g.nodes()[i])) row[m][i] = static_cast<std::int64_t>(*r);
    }
  }

  bool has(std::size_t node, std::size_t m) const { return row[m][node] >= 0; }
  bool has_any(std::size_t node) const { return has(node, 0) || has(node, 1) || has(node, 2); }
};

/// Builds heads sized to the inputs. `demo_rows` are the raw histograms of the
/// training split, used to fit the demographic scaler.
inline AlignModel make_model(const graph::MobilityGraph& subgraph, const EmbeddingTable& line_init,
                             const ModalityTables& tables, const AlignConfig& cfg, const RowMatrixXd& demo_rows) {
  cfg.validate();
  if (line_init.dim() != cfg.dim)
    throw ValidationError("LINE table dimension " + std::to_string(line_init.dim()) + " does not match align.dim " +
                          std::to_string(cfg.dim));
  AlignModel model;
  model.temperature = cfg.temperature;
  model.mobility.plan = mobenc::make_plan(subgraph, cfg.layers, cfg.norm_mode);
  model.mobility.table = mobenc::init_from(subgraph, line_init);
  std::mt19937_64 rng(derive_seed(cfg.seed, 7));
  for (std::size_t m = 0; m < kModalities; ++m) model.active[m] = tables.tables[m].rows() > 0;
  if (model.active[0]) {
    model.image_proj = nn::Dense<double>(tables[Modality::image].dim(), cfg.dim, false);
    model.image_proj.init_uniform(rng, 1.0 / std::sqrt(static_cast<double>(tables[Modality::image].dim())), 0.0);
  }
  if (model.active[1]) {
    model.text_proj = nn::Dense<double>(tables[Modality::text].dim(), cfg.dim, false);
    model.text_proj.init_uniform(rng, 1.0 / std::sqrt(static_cast<double>(tables[Modality::text].dim())), 0.0);
  }
  if (model.active[2]) {
    const std::size_t dd = tables[Modality::demo].dim();
    model.demo_mlp = nn::Mlp<double>({dd, cfg.demo_hidden, cfg.demo_hidden, cfg.dim}, rng);
    model.demo_scaler = demo_rows.rows() > 0 ? DemoScaler::fit(demo_rows) : DemoScaler::identity(dd);
  }
  model.zero_grad();
  return model;
}

/// Normalized rows for one batch. rows[m] holds the modality-m embeddings of
/// the batch positions listed in positions[m]; absent cells are excluded.
struct EncodedBatch {
  RowMatrixXd mobility;
  std::array<RowMatrixXd, kModalities> rows;
  std::array<std::vector<std::size_t>, kModalities> positions;
};

namespace detail {

inline RowMatrixXd gather_rows(const RowMatrixXd& src, const std::vector<std::size_t>& idx) {
  RowMatrixXd out(static_cast<Eigen::Index>(idx.size()), src.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = src.row(static_cast<Eigen::Index>(idx[k]));
  return out;
}

inline RowMatrixXd raw_inputs(const ModalityTables& tables, const ModalityIndex& index, std::size_t m,
                              const std::vector<std::size_t>& nodes) {
  const auto& src = tables.tables[m].values();
  RowMatrixXd out(static_cast<Eigen::Index>(nodes.size()), src.cols());
  for (std::size_t k = 0; k < nodes.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = src.row(index.row[m][nodes[k]]);
  return out;
}

}  // namespace detail

/// Encodes the batch given a precomputed propagation output.
inline EncodedBatch encode_batch(const std::vector<std::size_t>& nodes, AlignModel& model, const RowMatrixXd& propagated,
                                 const ModalityTables& tables, const ModalityIndex& index) {
  EncodedBatch out;
  out.mobility = normalize_rows(detail::gather_rows(propagated, nodes));
  for (std::size_t m = 0; m < kModalities; ++m) {
    if (!model.active[m]) continue;
    std::vector<std::size_t> present_nodes;
    for (std::size_t k = 0; k < nodes.size(); ++k)
      if (index.has(nodes[k], m)) {
        out.positions[m].push_back(k);
        present_nodes.push_back(nodes[k]);
      }
    if (present_nodes.empty()) continue;
    out.rows[m] = normalize_rows(model.head_forward(static_cast<Modality>(m), detail::raw_inputs(tables, index, m, present_nodes)));
  }
  return out;
}

/// Cell-id front end: propagates the full subgraph then encodes `cells`.
inline EncodedBatch encode_batch(const std::vector<CellId>& cells, AlignModel& model, const graph::MobilityGraph& subgraph,
                                 const ModalityTables& tables) {
  const ModalityIndex index(subgraph, tables);
  std::vector<std::size_t> nodes;
  for (CellId c : cells) {
    auto i = subgraph.index_of(c);
    if (!i) throw ValidationError("cell " + hexgrid::to_string(c) + " is not a graph node");
    nodes.push_back(*i);
  }
  return encode_batch(nodes, model, model.mobility.forward(), tables, index);
}

/// Total contrastive loss of one batch; with `backprop`, gradients of every
/// parameter are accumulated into the model (call zero_grad() first).
inline double batch_loss(AlignModel& model, const std::vector<std::size_t>& nodes, const ModalityTables& tables,
                         const ModalityIndex& index, bool backprop) {
  const RowMatrixXd propagated = model.mobility.forward();
  const RowMatrixXd m_raw = detail::gather_rows(propagated, nodes);
  const RowMatrixXd m_norm = normalize_rows(m_raw);
  RowMatrixXd grad_m = RowMatrixXd::Zero(m_norm.rows(), m_norm.cols());

  struct Term {
    std::size_t modality;
    std::vector<std::size_t> positions;
    RowMatrixXd raw_in, head_out, grad_x;
    double loss = 0.0;
  };
  std::vector<Term> terms;
  for (std::size_t m = 0; m < kModalities; ++m) {
    if (!model.active[m]) continue;
    Term t;
    t.modality = m;
    std::vector<std::size_t> present;
    for (std::size_t k = 0; k < nodes.size(); ++k)
      if (index.has(nodes[k], m)) {
        t.positions.push_back(k);
        present.push_back(nodes[k]);
      }
    if (present.empty()) continue;
    t.raw_in = detail::raw_inputs(tables, index, m, present);
    terms.push_back(std::move(t));
  }
  if (terms.empty()) return 0.0;

  const double weight = 1.0 / static_cast<double>(terms.size());
  double total = 0.0;
  for (auto& t : terms) {
    // Demo head caches activations, so backward must follow its own forward.
    t.head_out = model.head_forward(static_cast<Modality>(t.modality), t.raw_in);
    const RowMatrixXd x = normalize_rows(t.head_out);
    const RowMatrixXd ms = detail::gather_rows(m_norm, t.positions);
    RowMatrixXd gm = RowMatrixXd::Zero(ms.rows(), ms.cols());
    RowMatrixXd gx = RowMatrixXd::Zero(x.rows(), x.cols());
    RowMatrixXd* pgm = backprop ? &gm : nullptr;
    RowMatrixXd* pgx = backprop ? &gx : nullptr;
    t.loss = info_nce_pair(ms, x, model.temperature, pgm, pgx) + info_nce_pair(x, ms, model.temperature, pgx, pgm);
    total += weight * t.loss;
    if (backprop) {
      for (std::size_t k = 0; k < t.positions.size(); ++k)
        grad_m.row(static_cast<Eigen::Index>(t.positions[k])) += weight * gm.row(static_cast<Eigen::Index>(k));
      model.head_backward(static_cast<Modality>(t.modality), t.raw_in, normalize_rows_backward(t.head_out, weight * gx));
    }
  }
  if (!std::isfinite(total)) throw NumericError("alignment loss is not finite");
  if (backprop) {
    const RowMatrixXd grad_raw = normalize_rows_backward(m_raw, grad_m);
    RowMatrixXd grad_prop = RowMatrixXd::Zero(propagated.rows(), propagated.cols());
    for (std::size_t k = 0; k < nodes.size(); ++k) grad_prop.row(static_cast<Eigen::Index>(nodes[k])) += grad_raw.row(static_cast<Eigen::Index>(k));
    model.grad_table += model.mobility.backward(grad_prop);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Training

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct Split {
  std::vector<std::size_t> train;  // node ordinals
  std::vector<std::size_t> val;
};

/// Shuffles every node that has at least one modality and holds out
/// ceil(val_fraction * n) of them (at least one when n >= 2).
inline Split split_nodes(const ModalityIndex& index, std::size_t node_count, double val_fraction, std::uint64_t seed) {
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < node_count; ++i)
    if (index.has_any(i)) usable.push_back(i);
  std::mt19937_64 rng(derive_seed(seed, 11));
  std::shuffle(usable.begin(), usable.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(std::ceil(val_fraction * static_cast<double>(usable.size())));
  if (usable.size() < 2) n_val = 0;
  n_val = std::min(n_val, usable.size() > 0 ? usable.size() - 1 : 0);
  Split s;
  s.val.assign(usable.end() - static_cast<std::ptrdiff_t>(n_val), usable.end());
  s.train.assign(usable.begin(), usable.end() - static_cast<std::ptrdiff_t>(n_val));
  std::sort(s.val.begin(), s.val.end());
  return s;
}

struct AlignResult {
  EmbeddingTable embeddings;  // unnormalized propagate() output for every node
  AlignModel model;
  std::vector<EpochLog> log;
  Split split;
};

using WarningSink = std::function<void(const std::string&)>;

inline AlignResult train_align(const graph::MobilityGraph& subgraph, const EmbeddingTable& line_init,
                               const ModalityTables& tables, const AlignConfig& cfg, const WarningSink& warn = {}) {
  cfg.validate();
  tables.validate();
  const ModalityIndex index(subgraph, tables);
  for (std::size_t m = 0; m < kModalities; ++m) {
    const auto& t = tables.tables[m];
    std::size_t matched = 0;
    for (std::size_t i = 0; i < subgraph.node_count(); ++i) matched += index.has(i, m) ? 1 : 0;
    if (matched == 0 && warn) warn(std::string("modality '") + kModalityNames[m] + "' has no graph cells; its pair is dropped");
    if (matched < t.rows() && warn)
      warn(std::to_string(t.rows() - matched) + " " + kModalityNames[m] + " rows reference cells outside the graph");
  }
  // Restrict to modalities that actually reach graph nodes.
  ModalityTables used = tables;
  for (std::size_t m = 0; m < kModalities; ++m) {
    bool any = false;
    for (std::size_t i = 0; i < subgraph.node_count() && !any; ++i) any = index.has(i, m);
    if (!any) used.tables[m] = EmbeddingTable();
  }
  const ModalityIndex used_index(subgraph, used);

  AlignResult res;
  res.split = split_nodes(used_index, subgraph.node_count(), cfg.val_fraction, cfg.seed);
  if (res.split.train.empty()) throw ValidationError("alignment needs at least one cell with a modality");

  RowMatrixXd demo_train;
  if (used[Modality::demo].rows() > 0) {
    std::vector<std::size_t> demo_nodes;
    for (auto i : res.split.train)
      if (used_index.has(i, 2)) demo_nodes.push_back(i);
    demo_train = detail::raw_inputs(used, used_index, 2, demo_nodes);
  }
  res.model = make_model(subgraph, line_init, used, cfg, demo_train);
  auto& model = res.model;

  nn::Adam<double> opt({.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  auto params = model.params();
  std::mt19937_64 rng(derive_seed(cfg.seed, 13));
  std::vector<std::size_t> order = res.split.train;

  auto batches_of = [&](const std::vector<std::size_t>& nodes) {
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t s = 0; s < nodes.size(); s += cfg.batch_size)
      out.emplace_back(nodes.begin() + static_cast<std::ptrdiff_t>(s),
                       nodes.begin() + static_cast<std::ptrdiff_t>(std::min(nodes.size(), s + cfg.batch_size)));
    return out;
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double train_sum = 0.0;
    const auto batches = batches_of(order);
    for (const auto& b : batches) {
      model.zero_grad();
      double loss = 0.0;
      try {
        loss = batch_loss(model, b, used, used_index, true);
      } catch (const NumericError& e) {
        std::ostringstream msg;
        msg << "alignment diverged in epoch " << epoch + 1 << ": " << e.what();
        if (!res.log.empty()) msg << " (previous train loss " << res.log.back().train_loss << ")";
        throw NumericError(msg.str());
      }
      train_sum += loss;
      opt.step(params);
    }
    EpochLog rec{epoch + 1, train_sum / static_cast<double>(batches.size()), 0.0};
    if (!res.split.val.empty()) {
      double val_sum = 0.0;
      const auto vb = batches_of(res.split.val);
      for (const auto& b : vb) val_sum += batch_loss(model, b, used, used_index, false);
      rec.val_loss = val_sum / static_cast<double>(vb.size());
    }
    res.log.push_back(rec);
  }
  res.embeddings = EmbeddingTable(subgraph.nodes(), model.mobility.forward());
  return res;
}

/// "epoch \t train_loss \t val_loss" per line.
inline void write_training_log(std::ostream& os, const std::vector<EpochLog>& log) {
  for (const auto& r : log) os << r.epoch << '\t' << r.train_loss << '\t' << r.val_loss << '\n';
}

}  // namespace mobclip::align
