#pragma once

// Synthetic region with planted latent factors. Every cell carries a
// spatially smoothed latent z. Entities visit cells with probability
// increasing in the similarity between their own latent and the leading
// "mobility" dimensions of z; the remaining dimensions surface only in the
// auxiliary modalities. Downstream targets are linear in z.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mobclip/align.hpp"
#include "mobclip/embedding.hpp"
#include "mobclip/errors.hpp"
#include "mobclip/graph.hpp"
#include "mobclip/hexgrid.hpp"
#include "mobclip/probe.hpp"
#include "mobclip/random.hpp"

namespace mobclip::synth {

struct SynthConfig {
  hexgrid::GridConfig grid = hexgrid::GridConfig::level6_analog({31.0, 121.0}, 31.0);
  std::size_t rows = 20;
  std::size_t cols = 20;
  std::size_t latent_dim = 8;
  std::size_t mobility_latent_dims = 6;  // leading dims that drive visits
  std::size_t n_entities = 2000;
  std::size_t n_buckets = 54;
  std::size_t min_visits = 2;
  std::size_t max_visits = 4;
  double visit_sharpness = 4.0;  // softmax scale on cosine similarity
  std::size_t text_dim = 1024;
  std::size_t image_dim = 768;
  std::size_t demo_dim = 36;
  double text_noise = 0.1;
  double image_noise = 0.1;
  double demo_noise = 0.1;
  double demo_count_scale = 50.0;
  double target_noise = 0.02;
  std::size_t admin_block = 2;  // admin units are block x block patches of cells
  std::uint64_t seed = 1;

  void validate() const {
    grid.validate();
    if (rows == 0 || cols == 0 || latent_dim == 0 || n_entities == 0 || n_buckets == 0 || text_dim == 0 ||
        image_dim == 0 || demo_dim == 0 || admin_block == 0)
      throw ConfigError("synth counts and dimensions must be positive");
    if (mobility_latent_dims == 0 || mobility_latent_dims > latent_dim)
      throw ConfigError("synth.mobility_latent_dims must lie in [1, latent_dim]");
    if (min_visits < 2 || max_visits < min_visits) throw ConfigError("synth visits must satisfy 2 <= min <= max");
    if (max_visits > rows * cols) throw ConfigError("synth.max_visits exceeds the cell count");
    if (!(text_noise >= 0 && image_noise >= 0 && demo_noise >= 0 && target_noise >= 0))
      throw ConfigError("synth noise levels must be >= 0");
    if (!(visit_sharpness >= 0.0) || !(demo_count_scale > 0.0)) throw ConfigError("synth scales out of range");
  }
};

struct SynthData {
  hexgrid::GridConfig grid;
  std::vector<CellId> cells;  // sorted
  RowMatrixXd latents;        // row i belongs to cells[i]
  std::size_t mobility_latent_dims = 0;
  std::vector<graph::EventRecord> events;
  std::vector<align::ModalityRecord> records;
  align::ModalityTables modalities;
  std::vector<probe::TaskDataset> tasks;
};

/// Rectangle of rows x cols cells in odd-q offset layout, centred on the origin cell.
inline std::vector<CellId> region_cells(const SynthConfig& cfg) {
  std::vector<CellId> out;
  const auto c0 = static_cast<std::int64_t>(cfg.cols / 2);
  const auto r0 = static_cast<std::int64_t>(cfg.rows / 2);
  for (std::size_t c = 0; c < cfg.cols; ++c)
    for (std::size_t r = 0; r < cfg.rows; ++r) {
      const std::int64_t q = static_cast<std::int64_t>(c) - c0;
      const std::int64_t row = static_cast<std::int64_t>(r) - r0;
      out.push_back(CellId::make(cfg.grid.resolution, q, row - (q - (q & 1)) / 2));
    }
  std::sort(out.begin(), out.end());
  return out;
}

namespace detail {

inline RowMatrixXd gaussian(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  RowMatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline double softplus(double x) { return x > 30 ? x : std::log1p(std::exp(x)); }

inline void standardize_columns(RowMatrixXd& z) {
  const Eigen::RowVectorXd mean = z.colwise().mean();
  z.rowwise() -= mean;
  const Eigen::RowVectorXd sd = (z.array().square().colwise().mean()).sqrt();
  for (Eigen::Index j = 0; j < z.cols(); ++j)
    if (sd[j] > 0) z.col(j) /= sd[j];
}

}  // namespace detail

/// Random linear maps from latents to modality features. Text and image are
/// z W + noise; demographics are count_scale * softplus(z W + noise).
struct ModalityLift {
  RowMatrixXd text_w, image_w, demo_w;
  double demo_count_scale = 50.0;

  static ModalityLift make(const SynthConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto k = static_cast<Eigen::Index>(cfg.latent_dim);
    const double sd = 1.0 / std::sqrt(static_cast<double>(k));
    ModalityLift l;
    l.text_w = detail::gaussian(k, static_cast<Eigen::Index>(cfg.text_dim), rng, sd);
    l.image_w = detail::gaussian(k, static_cast<Eigen::Index>(cfg.image_dim), rng, sd);
    l.demo_w = detail::gaussian(k, static_cast<Eigen::Index>(cfg.demo_dim), rng, sd);
    l.demo_count_scale = cfg.demo_count_scale;
    return l;
  }

  static RowMatrixXd linear(const RowMatrixXd& z, const RowMatrixXd& w, double noise, std::mt19937_64& rng) {
    RowMatrixXd x = z * w;
    if (noise > 0) x += detail::gaussian(x.rows(), x.cols(), rng, noise);
    return x;
  }

  RowMatrixXd text(const RowMatrixXd& z, double noise, std::mt19937_64& rng) const { return linear(z, text_w, noise, rng); }
  RowMatrixXd image(const RowMatrixXd& z, double noise, std::mt19937_64& rng) const { return linear(z, image_w, noise, rng); }
  RowMatrixXd demo(const RowMatrixXd& z, double noise, std::mt19937_64& rng) const {
    return linear(z, demo_w, noise, rng).unaryExpr([this](double v) { return demo_count_scale * detail::softplus(v); });
  }
};

inline SynthData generate(const SynthConfig& cfg) {
  cfg.validate();
  SynthData d;
  d.grid = cfg.grid;
  d.cells = region_cells(cfg);
  d.mobility_latent_dims = cfg.mobility_latent_dims;
  const auto n = static_cast<Eigen::Index>(d.cells.size());
  const auto k = static_cast<Eigen::Index>(cfg.latent_dim);
  std::mt19937_64 rng(derive_seed(cfg.seed, 1));

  // Latents: white noise smoothed by one pass of neighbor averaging.
  const RowMatrixXd white = detail::gaussian(n, k, rng);
  d.latents = white;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::size_t count = 1;
    for (CellId nb : hexgrid::neighbors(d.cells[static_cast<std::size_t>(i)])) {
      auto it = std::lower_bound(d.cells.begin(), d.cells.end(), nb);
      if (it == d.cells.end() || *it != nb) continue;
      d.latents.row(i) += white.row(it - d.cells.begin());
      ++count;
    }
    d.latents.row(i) /= static_cast<double>(count);
  }
  detail::standardize_columns(d.latents);

  // Events.
  const Eigen::Index km = static_cast<Eigen::Index>(cfg.mobility_latent_dims);
  RowMatrixXd zmob = d.latents.leftCols(km);
  for (Eigen::Index i = 0; i < n; ++i) zmob.row(i) /= std::max(zmob.row(i).norm(), 1e-12);
  d.events.reserve(cfg.n_entities * cfg.n_buckets * (cfg.min_visits + cfg.max_visits) / 2);
  std::vector<double> cdf(static_cast<std::size_t>(n));
  for (std::size_t e = 0; e < cfg.n_entities; ++e) {
    std::mt19937_64 erng(derive_seed(cfg.seed, 1000 + e));
    Eigen::RowVectorXd u = detail::gaussian(1, km, erng).row(0);
    u /= std::max(u.norm(), 1e-12);
    const Eigen::VectorXd sim = zmob * u.transpose();
    double acc = 0.0;
    const double mx = sim.maxCoeff();
    for (Eigen::Index i = 0; i < n; ++i) {
      acc += std::exp(cfg.visit_sharpness * (sim[i] - mx));
      cdf[static_cast<std::size_t>(i)] = acc;
    }
    std::uniform_real_distribution<double> unif(0.0, acc);
    std::uniform_int_distribution<std::size_t> nvis(cfg.min_visits, cfg.max_visits);
    const std::string id = "u" + std::to_string(e);
    std::vector<std::size_t> picked;
    for (std::size_t b = 0; b < cfg.n_buckets; ++b) {
      const std::size_t want = nvis(erng);
      picked.clear();
      while (picked.size() < want) {
        auto i = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), unif(erng)) - cdf.begin());
        i = std::min(i, cdf.size() - 1);
        if (std::find(picked.begin(), picked.end(), i) == picked.end()) picked.push_back(i);
      }
      for (auto i : picked) d.events.push_back({id, d.cells[i], static_cast<std::int64_t>(b)});
    }
  }

  const ModalityLift lift = ModalityLift::make(cfg, derive_seed(cfg.seed, 2));
  std::mt19937_64 noise_rng(derive_seed(cfg.seed, 3));
  const RowMatrixXd text = lift.text(d.latents, cfg.text_noise, noise_rng);
  const RowMatrixXd image = lift.image(d.latents, cfg.image_noise, noise_rng);
  const RowMatrixXd demo = lift.demo(d.latents, cfg.demo_noise, noise_rng);
  d.modalities[align::Modality::text] = EmbeddingTable(d.cells, text);
  d.modalities[align::Modality::image] = EmbeddingTable(d.cells, image);
  d.modalities[align::Modality::demo] = EmbeddingTable(d.cells, demo);
  for (Eigen::Index i = 0; i < n; ++i) {
    align::ModalityRecord r;
    r.cell = d.cells[static_cast<std::size_t>(i)];
    r.text.emplace(text.row(i).data(), text.row(i).data() + text.cols());
    r.image.emplace(image.row(i).data(), image.row(i).data() + image.cols());
    r.demo_hist.emplace(demo.row(i).data(), demo.row(i).data() + demo.cols());
    d.records.push_back(std::move(r));
  }

  // Tasks: held-out linear read-outs of z.
  auto readout = [&](Eigen::Index first, Eigen::Index count) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(k);
    w.segment(first, count) = detail::gaussian(count, 1, rng).col(0);
    w /= std::max(w.norm(), 1e-12);
    return w;
  };
  std::normal_distribution<double> tnoise(0.0, 1.0);
  auto grid_task = [&](const std::string& name, const Eigen::VectorXd& w) {
    probe::TaskDataset t;
    t.name = name;
    t.kind = probe::UnitKind::grid;
    const Eigen::VectorXd y = d.latents * w;
    for (Eigen::Index i = 0; i < n; ++i)
      t.units.push_back({"g" + std::to_string(i), {d.cells[static_cast<std::size_t>(i)]}, y[i] + cfg.target_noise * tnoise(rng)});
    return t;
  };
  d.tasks.push_back(grid_task("grid_mobility", readout(0, km)));
  d.tasks.push_back(grid_task("grid_mixed", readout(0, k)));
  if (km < k) d.tasks.push_back(grid_task("grid_modality", readout(km, k - km)));

  // Admin units: block x block patches in offset coordinates.
  {
    probe::TaskDataset t;
    t.name = "admin_mixed";
    t.kind = probe::UnitKind::admin;
    const Eigen::VectorXd w = readout(0, k);
    const auto c0 = static_cast<std::int64_t>(cfg.cols / 2);
    const auto r0 = static_cast<std::int64_t>(cfg.rows / 2);
    for (std::size_t bc = 0; bc < cfg.cols; bc += cfg.admin_block)
      for (std::size_t br = 0; br < cfg.rows; br += cfg.admin_block) {
        probe::TaskUnit u;
        u.id = "a" + std::to_string(bc) + "_" + std::to_string(br);
        Eigen::RowVectorXd zsum = Eigen::RowVectorXd::Zero(k);
        for (std::size_t c = bc; c < std::min(cfg.cols, bc + cfg.admin_block); ++c)
          for (std::size_t r = br; r < std::min(cfg.rows, br + cfg.admin_block); ++r) {
            const std::int64_t q = static_cast<std::int64_t>(c) - c0;
            const std::int64_t row = static_cast<std::int64_t>(r) - r0;
            const CellId cell = CellId::make(cfg.grid.resolution, q, row - (q - (q & 1)) / 2);
            u.cells.push_back(cell);
            zsum += d.latents.row(std::lower_bound(d.cells.begin(), d.cells.end(), cell) - d.cells.begin());
          }
        u.target = (zsum / static_cast<double>(u.cells.size())).dot(w) + cfg.target_noise * tnoise(rng);
        t.units.push_back(std::move(u));
      }
    d.tasks.push_back(std::move(t));
  }
  return d;
}

/// Latent table as embeddings, e.g. for oracle probes.
inline EmbeddingTable latent_table(const SynthData& d) { return EmbeddingTable(d.cells, d.latents); }

}  // namespace mobclip::synth
