#pragma once

// Coordinate -> embedding surrogate: a frozen random sinusoidal feature map
// followed by a ReLU MLP regressed onto teacher embeddings with MSE.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mobclip/binary_io.hpp"
#include "mobclip/embedding.hpp"
#include "mobclip/errors.hpp"
#include "mobclip/hexgrid.hpp"
#include "mobclip/nn.hpp"
#include "mobclip/random.hpp"

namespace mobclip::distill {

using hexgrid::GeoCoord;

/// encode(x) = sin(omega0 * (W x + b)), W ~ U[-1, 1]^{features x 2}, b ~ U[-1, 1].
template <typename S>
struct SirenFeatureMap {
  RowMatrix<S> weight;  // features x 2
  nn::Vector<S> phase;  // features
  double omega0 = 30.0;
  std::uint64_t seed = 0;

  static SirenFeatureMap make(std::size_t features, double omega0, std::uint64_t seed) {
    SirenFeatureMap f;
    f.omega0 = omega0;
    f.seed = seed;
    f.weight.resize(static_cast<Eigen::Index>(features), 2);
    f.phase.resize(static_cast<Eigen::Index>(features));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (Eigen::Index i = 0; i < f.weight.size(); ++i) f.weight.data()[i] = static_cast<S>(u(rng));
    for (Eigen::Index i = 0; i < f.phase.size(); ++i) f.phase[i] = static_cast<S>(u(rng));
    return f;
  }

  std::size_t features() const noexcept { return static_cast<std::size_t>(weight.rows()); }

  /// Rows of `x` are normalized (x, y) points in [-1, 1]^2.
  RowMatrix<S> encode(const RowMatrix<S>& x) const {
    if (x.cols() != 2) throw ValidationError("SIREN input must have two columns");
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double v = static_cast<double>(x.data()[i]);
      if (!(std::abs(v) <= 1.0 + 1e-9)) throw RangeError("normalized coordinate outside [-1, 1]");
    }
    RowMatrix<S> z = x * weight.transpose();
    z.rowwise() += phase;
    return (static_cast<S>(omega0) * z.array()).sin().matrix();
  }
};

struct DistillConfig {
  std::size_t features = 1024;
  std::size_t hidden_layers = 8;
  std::size_t hidden_dim = 512;
  std::size_t out_dim = 128;
  double omega0 = 30.0;
  double lr = 0.005;
  std::size_t epochs = 5000;
  std::size_t batch_size = 0;  // 0: full batch
  double stop_loss = 0.0;      // stop once the epoch loss is <= this; 0 disables
  bool standardize_targets = true;
  std::uint64_t seed = 1;

  void validate() const {
    if (features == 0 || hidden_layers == 0 || hidden_dim == 0 || out_dim == 0)
      throw ConfigError("distill dimensions must be positive");
    if (epochs == 0) throw ConfigError("distill.epochs must be >= 1");
    if (!(lr >= 0.0)) throw ConfigError("distill.lr must be >= 0");
    if (!(omega0 > 0.0)) throw ConfigError("distill.omega0 must be positive");
    if (!(stop_loss >= 0.0)) throw ConfigError("distill.stop_loss must be >= 0");
  }
};

/// Lat/lon bounding box mapped affinely onto [-1, 1]^2.
struct BoundingBox {
  double lat_min = 0, lat_max = 0, lon_min = 0, lon_max = 0;

  static BoundingBox of(const std::vector<GeoCoord>& pts) {
    if (pts.empty()) throw ValidationError("bounding box of an empty point set");
    BoundingBox b{pts[0].lat, pts[0].lat, pts[0].lon, pts[0].lon};
    for (const auto& p : pts) {
      b.lat_min = std::min(b.lat_min, p.lat);
      b.lat_max = std::max(b.lat_max, p.lat);
      b.lon_min = std::min(b.lon_min, p.lon);
      b.lon_max = std::max(b.lon_max, p.lon);
    }
    return b;
  }

  /// Returns (x, y) = (lon, lat) scaled to [-1, 1]; throws outside the box.
  std::array<double, 2> normalize(const GeoCoord& c) const {
    hexgrid::require_valid(c);
    auto scale = [](double v, double lo, double hi) {
      const double half = std::max((hi - lo) / 2.0, 1e-9);
      return (v - (lo + hi) / 2.0) / half;
    };
    const double x = scale(c.lon, lon_min, lon_max);
    const double y = scale(c.lat, lat_min, lat_max);
    if (!(std::abs(x) <= 1.0 + 1e-9) || !(std::abs(y) <= 1.0 + 1e-9))
      throw RangeError("coordinate (" + std::to_string(c.lat) + ", " + std::to_string(c.lon) +
                       ") lies outside the surrogate's bounding box");
    return {std::clamp(x, -1.0, 1.0), std::clamp(y, -1.0, 1.0)};
  }
};

template <typename S>
struct Surrogate {
  SirenFeatureMap<S> siren;
  nn::Mlp<S> mlp;
  BoundingBox bbox;
  nn::Vector<S> target_mean;   // outputs are mlp * scale + mean
  nn::Vector<S> target_scale;

  RowMatrix<S> features_of(const std::vector<GeoCoord>& coords) const {
    RowMatrix<S> x(static_cast<Eigen::Index>(coords.size()), 2);
    for (std::size_t i = 0; i < coords.size(); ++i) {
      const auto n = bbox.normalize(coords[i]);
      x(static_cast<Eigen::Index>(i), 0) = static_cast<S>(n[0]);
      x(static_cast<Eigen::Index>(i), 1) = static_cast<S>(n[1]);
    }
    return siren.encode(x);
  }

  RowMatrix<S> to_embedding(RowMatrix<S> y) const {
    y = y.array().rowwise() * target_scale.array();
    y.rowwise() += target_mean;
    return y;
  }

  RowMatrix<S> query(const std::vector<GeoCoord>& coords) const {
    return to_embedding(mlp.predict(features_of(coords)));
  }

  nn::Vector<S> query(const GeoCoord& c) const { return query(std::vector<GeoCoord>{c}).row(0); }
};

template <typename S>
struct DistillResult {
  Surrogate<S> surrogate;
  std::vector<double> loss_trace;  // one entry per epoch, in standardized units
  double final_loss = 0.0;
};

/// MSE regression of teacher rows from centroid coordinates with Adam.
template <typename S = float>
DistillResult<S> train_distill(const std::vector<GeoCoord>& centroids, const RowMatrixXd& targets,
                               const DistillConfig& cfg) {
  cfg.validate();
  if (centroids.empty()) throw ValidationError("distillation needs at least one (centroid, target) pair");
  if (static_cast<std::size_t>(targets.rows()) != centroids.size())
    throw ValidationError("distillation: centroid and target counts differ");
  if (static_cast<std::size_t>(targets.cols()) != cfg.out_dim)
    throw ValidationError("distillation: targets have " + std::to_string(targets.cols()) + " columns, expected " +
                          std::to_string(cfg.out_dim));

  DistillResult<S> res;
  auto& sur = res.surrogate;
  sur.bbox = BoundingBox::of(centroids);
  sur.siren = SirenFeatureMap<S>::make(cfg.features, cfg.omega0, cfg.seed);

  const auto d = static_cast<Eigen::Index>(cfg.out_dim);
  sur.target_mean = nn::Vector<S>::Zero(d);
  sur.target_scale = nn::Vector<S>::Ones(d);
  if (cfg.standardize_targets) {
    const Eigen::RowVectorXd mean = targets.colwise().mean();
    const Eigen::RowVectorXd sd = ((targets.rowwise() - mean).array().square().colwise().mean()).sqrt();
    for (Eigen::Index j = 0; j < d; ++j) {
      sur.target_mean[j] = static_cast<S>(mean[j]);
      sur.target_scale[j] = static_cast<S>(sd[j] > 1e-12 ? sd[j] : 1.0);
    }
  }
  RowMatrix<S> y = targets.cast<S>();
  y.rowwise() -= sur.target_mean;
  y = y.array().rowwise() / sur.target_scale.array();

  std::mt19937_64 rng(derive_seed(cfg.seed, 1));
  std::vector<std::size_t> widths{cfg.features};
  for (std::size_t l = 0; l < cfg.hidden_layers; ++l) widths.push_back(cfg.hidden_dim);
  widths.push_back(cfg.out_dim);
  sur.mlp = nn::Mlp<S>(widths, rng);

  const RowMatrix<S> x = sur.features_of(centroids);
  const std::size_t n = centroids.size();
  const std::size_t batch = cfg.batch_size == 0 ? n : std::min(cfg.batch_size, n);

  nn::Adam<S> opt({.lr = cfg.lr});
  std::vector<nn::ParamRef<S>> params;
  nn::collect(sur.mlp, params);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (batch < n) std::shuffle(order.begin(), order.end(), rng);
    double epoch_sse = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t m = std::min(batch, n - start);
      RowMatrix<S> xb, yb;
      if (m == n && batch == n) {
        xb = x;
        yb = y;
      } else {
        xb.resize(static_cast<Eigen::Index>(m), x.cols());
        yb.resize(static_cast<Eigen::Index>(m), y.cols());
        for (std::size_t k = 0; k < m; ++k) {
          xb.row(static_cast<Eigen::Index>(k)) = x.row(static_cast<Eigen::Index>(order[start + k]));
          yb.row(static_cast<Eigen::Index>(k)) = y.row(static_cast<Eigen::Index>(order[start + k]));
        }
      }
      sur.mlp.zero_grad();
      const RowMatrix<S> diff = sur.mlp.forward(xb) - yb;
      const double sse = static_cast<double>(diff.squaredNorm());
      if (!std::isfinite(sse)) {
        std::ostringstream msg;
        msg << "distillation diverged at epoch " << epoch << "; recent losses:";
        for (std::size_t k = res.loss_trace.size() > 5 ? res.loss_trace.size() - 5 : 0; k < res.loss_trace.size(); ++k)
          msg << ' ' << res.loss_trace[k];
        throw NumericError(msg.str());
      }
      epoch_sse += sse;
      sur.mlp.backward(diff * static_cast<S>(2.0 / static_cast<double>(m * cfg.out_dim)), false);
      opt.step(params);
    }
    res.loss_trace.push_back(epoch_sse / static_cast<double>(n * cfg.out_dim));
    if (cfg.stop_loss > 0.0 && res.loss_trace.back() <= cfg.stop_loss) break;
  }
  // Loss of the returned parameters.
  res.final_loss = static_cast<double>((sur.mlp.predict(x) - y).squaredNorm()) / static_cast<double>(n * cfg.out_dim);
  return res;
}

namespace io {

/// Surrogate file: magic "SUR1", u64 header length, JSON header, then
/// little-endian f32 payload: SIREN W (row-major) and b, each MLP layer's
/// weight (in x out, row-major) and bias, target mean, target scale.
template <typename S>
void write_surrogate(std::ostream& os, const Surrogate<S>& s) {
  nlohmann::json h;
  h["features"] = s.siren.features();
  h["omega0"] = s.siren.omega0;
  h["seed"] = s.siren.seed;
  h["bbox"] = {{"lat_min", s.bbox.lat_min}, {"lat_max", s.bbox.lat_max}, {"lon_min", s.bbox.lon_min}, {"lon_max", s.bbox.lon_max}};
  std::vector<std::size_t> widths{s.mlp.in()};
  for (const auto& l : s.mlp.layers()) widths.push_back(l.out());
  h["widths"] = widths;
  h["bias"] = s.mlp.layers().front().has_bias();
  const std::string text = h.dump();
  mobclip::io::LeWriter w(os);
  w.magic("SUR1");
  w.put<std::uint64_t>(text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  auto put_all = [&](const S* p, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) w.put<float>(static_cast<float>(p[i]));
  };
  put_all(s.siren.weight.data(), s.siren.weight.size());
  put_all(s.siren.phase.data(), s.siren.phase.size());
  for (const auto& l : s.mlp.layers()) {
    put_all(l.weight.data(), l.weight.size());
    if (l.has_bias()) put_all(l.bias.data(), l.bias.size());
  }
  put_all(s.target_mean.data(), s.target_mean.size());
  put_all(s.target_scale.data(), s.target_scale.size());
  w.check();
}

template <typename S>
Surrogate<S> read_surrogate(std::istream& is) {
  mobclip::io::LeReader r(is);
  r.expect_magic("SUR1");
  const auto len = r.get<std::uint64_t>();
  if (len > (1u << 20)) throw ParseError("surrogate header too large", -1, r.offset());
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (static_cast<std::uint64_t>(is.gcount()) != len) throw ParseError("truncated surrogate header", -1, 12);
  Surrogate<S> s;
  std::vector<std::size_t> widths;
  bool bias = true;
  try {
    const auto h = nlohmann::json::parse(text);
    s.siren.omega0 = h.at("omega0").get<double>();
    s.siren.seed = h.at("seed").get<std::uint64_t>();
    const auto& b = h.at("bbox");
    s.bbox = {b.at("lat_min").get<double>(), b.at("lat_max").get<double>(), b.at("lon_min").get<double>(),
              b.at("lon_max").get<double>()};
    widths = h.at("widths").get<std::vector<std::size_t>>();
    bias = h.at("bias").get<bool>();
    const auto features = h.at("features").get<std::size_t>();
    if (widths.size() < 2 || widths.front() != features) throw ParseError("surrogate widths do not match features", -1, 12);
    for (auto v : widths)
      if (v == 0 || v > (1u << 20)) throw ParseError("surrogate width out of range", -1, 12);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("surrogate header: ") + e.what(), -1, 12);
  }
  mobclip::io::LeReader body(is, 12 + static_cast<std::int64_t>(len));
  auto get_all = [&](S* p, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) p[i] = static_cast<S>(body.get<float>());
  };
  const auto f = static_cast<Eigen::Index>(widths.front());
  s.siren.weight.resize(f, 2);
  s.siren.phase.resize(f);
  get_all(s.siren.weight.data(), s.siren.weight.size());
  get_all(s.siren.phase.data(), s.siren.phase.size());
  std::mt19937_64 unused(0);
  s.mlp = nn::Mlp<S>(widths, unused, bias);
  for (auto& l : s.mlp.layers()) {
    get_all(l.weight.data(), l.weight.size());
    if (l.has_bias()) get_all(l.bias.data(), l.bias.size());
  }
  const auto d = static_cast<Eigen::Index>(widths.back());
  s.target_mean.resize(d);
  s.target_scale.resize(d);
  get_all(s.target_mean.data(), d);
  get_all(s.target_scale.data(), d);
  body.expect_eof();
  return s;
}

template <typename S>
void save_surrogate(const std::string& path, const Surrogate<S>& s) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  write_surrogate(os, s);
}

template <typename S = float>
Surrogate<S> load_surrogate(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path + "'");
  return read_surrogate<S>(is);
}

}  // namespace io

}  // namespace mobclip::distill
