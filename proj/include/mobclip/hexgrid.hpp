#pragma once

// Planar hexagonal tokenization of geographic coordinates.
//
// Cells are flat-top hexagons in axial (q, r) coordinates laid over an
// equirectangular projection whose longitude axis is scaled by cos(ref_lat).
// Axial r grows towards the south (screen convention), so neighbor offsets
// enumerate counter-clockwise starting just below east.

#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <numbers>
#include <string>

#include "mobclip/errors.hpp"

namespace mobclip::hexgrid {

inline constexpr double kEarthRadiusM = 6371008.8;
inline constexpr int kMaxResolution = 15;
inline constexpr std::int64_t kAxialLimit = std::int64_t{1} << 29;  // 30-bit signed

struct GeoCoord {
  double lat = 0.0;
  double lon = 0.0;

  bool valid() const noexcept {
    return std::isfinite(lat) && std::isfinite(lon) && lat >= -90.0 && lat <= 90.0 &&
           lon >= -180.0 && lon <= 180.0;
  }
};

inline void require_valid(const GeoCoord& c) {
  if (!c.valid())
    throw RangeError("coordinate out of range: lat=" + std::to_string(c.lat) +
                     " lon=" + std::to_string(c.lon));
}

/// 64-bit cell address: 4 bits resolution | 30 bits q | 30 bits r, both
/// two's complement. Any 64-bit value is a valid encoding, which lets
/// externally assigned ids (e.g. H3 indexes) pass through untouched.
class CellId {
public:
  constexpr CellId() = default;
  constexpr explicit CellId(std::uint64_t packed) : value_(packed) {}

  static CellId make(int resolution, std::int64_t q, std::int64_t r) {
    if (resolution < 0 || resolution > kMaxResolution)
      throw RangeError("resolution " + std::to_string(resolution) + " outside [0, 15]");
    if (q < -kAxialLimit || q >= kAxialLimit || r < -kAxialLimit || r >= kAxialLimit)
      throw RangeError("axial coordinate (" + std::to_string(q) + ", " + std::to_string(r) +
                       ") overflows 30 bits");
    constexpr std::uint64_t mask = (std::uint64_t{1} << 30) - 1;
    const auto uq = static_cast<std::uint64_t>(q) & mask;
    const auto ur = static_cast<std::uint64_t>(r) & mask;
    return CellId((static_cast<std::uint64_t>(resolution) << 60) | (uq << 30) | ur);
  }

  constexpr std::uint64_t packed() const noexcept { return value_; }
  constexpr int resolution() const noexcept { return static_cast<int>(value_ >> 60); }
  constexpr std::int64_t q() const noexcept { return sign_extend((value_ >> 30) & kMask); }
  constexpr std::int64_t r() const noexcept { return sign_extend(value_ & kMask); }

  constexpr auto operator<=>(const CellId&) const = default;

private:
  static constexpr std::uint64_t kMask = (std::uint64_t{1} << 30) - 1;

  static constexpr std::int64_t sign_extend(std::uint64_t v) noexcept {
    return (v & (std::uint64_t{1} << 29)) ? static_cast<std::int64_t>(v) - (std::int64_t{1} << 30)
                                          : static_cast<std::int64_t>(v);
  }

  std::uint64_t value_ = 0;
};

inline std::string to_string(CellId c) { return std::to_string(c.packed()); }

struct CellIdHash {
  std::size_t operator()(CellId c) const noexcept {
    std::uint64_t x = c.packed() + 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return static_cast<std::size_t>(x ^ (x >> 31));
  }
};

/// Hexagon area as a function of edge length.
inline double hex_area(double edge) { return 1.5 * std::numbers::sqrt3 * edge * edge; }

struct GridConfig {
  int resolution = 6;
  double edge_length0_m = 0.0;  // edge length at resolution 0, halved per step
  GeoCoord origin{};
  double ref_lat = 0.0;

  double edge_length() const { return std::ldexp(edge_length0_m, -resolution); }

  void validate() const {
    if (resolution < 0 || resolution > kMaxResolution)
      throw ConfigError("grid.resolution must lie in [0, 15]");
    if (!(edge_length0_m > 0.0) || !std::isfinite(edge_length0_m))
      throw ConfigError("grid.edge_length0_m must be positive");
    if (!origin.valid()) throw ConfigError("grid.origin out of range");
    if (!std::isfinite(ref_lat) || std::abs(ref_lat) >= 90.0)
      throw ConfigError("grid.ref_lat must lie in (-90, 90)");
  }

  /// Resolution-6 grid whose cells cover ~36.13 km², the mean H3 level-6 area.
  static GridConfig level6_analog(GeoCoord origin, double ref_lat) {
    GridConfig cfg;
    cfg.resolution = 6;
    cfg.edge_length0_m = std::sqrt(36.13e6 / (1.5 * std::numbers::sqrt3)) * 64.0;
    cfg.origin = origin;
    cfg.ref_lat = ref_lat;
    return cfg;
  }
};

/// Projected planar position in meters: x east, y north.
struct PlanarPoint {
  double x = 0.0;
  double y = 0.0;
};

inline PlanarPoint project(const GeoCoord& c, const GridConfig& cfg) {
  constexpr double deg = std::numbers::pi / 180.0;
  return {kEarthRadiusM * (c.lon - cfg.origin.lon) * deg * std::cos(cfg.ref_lat * deg),
          kEarthRadiusM * (c.lat - cfg.origin.lat) * deg};
}

inline GeoCoord unproject(const PlanarPoint& p, const GridConfig& cfg) {
  constexpr double deg = std::numbers::pi / 180.0;
  return {cfg.origin.lat + p.y / kEarthRadiusM / deg,
          cfg.origin.lon + p.x / (kEarthRadiusM * std::cos(cfg.ref_lat * deg)) / deg};
}

/// Center of axial cell (q, r) in projected meters.
inline PlanarPoint axial_center(std::int64_t q, std::int64_t r, double edge) {
  const auto fq = static_cast<double>(q);
  const auto fr = static_cast<double>(r);
  return {edge * 1.5 * fq, -edge * std::numbers::sqrt3 * (fr + 0.5 * fq)};
}

/// Fractional axial coordinates -> containing hexagon. Fractions are snapped
/// to a 1e-9 lattice first so exact boundary points resolve by the rounding
/// rule instead of projection noise.
inline std::array<std::int64_t, 2> cube_round(double fq, double fr) {
  auto snap = [](double v) { return std::round(v * 1e9) / 1e9; };
  const double x = snap(fq);
  const double z = snap(fr);
  const double y = -x - z;
  double rx = std::round(x), ry = std::round(y), rz = std::round(z);
  const double dx = std::abs(rx - x), dy = std::abs(ry - y), dz = std::abs(rz - z);
  if (dx > dy && dx > dz) {
    rx = -ry - rz;
  } else if (dy > dz) {
    ry = -rx - rz;
  } else {
    rz = -rx - ry;
  }
  return {static_cast<std::int64_t>(rx), static_cast<std::int64_t>(rz)};
}

inline CellId cell_of_planar(const PlanarPoint& p, const GridConfig& cfg) {
  const double a = cfg.edge_length();
  const double ys = -p.y;
  const double fq = (2.0 / 3.0 * p.x) / a;
  const double fr = (-1.0 / 3.0 * p.x + std::numbers::sqrt3 / 3.0 * ys) / a;
  if (!std::isfinite(fq) || !std::isfinite(fr) || std::abs(fq) >= static_cast<double>(kAxialLimit) ||
      std::abs(fr) >= static_cast<double>(kAxialLimit))
    throw RangeError("projected point outside the addressable axial range");
  const auto [q, r] = cube_round(fq, fr);
  return CellId::make(cfg.resolution, q, r);
}

inline CellId cell_of(const GeoCoord& coord, const GridConfig& cfg) {
  require_valid(coord);
  return cell_of_planar(project(coord, cfg), cfg);
}

inline PlanarPoint centroid_planar(CellId cell, const GridConfig& cfg) {
  if (cell.resolution() != cfg.resolution)
    throw ConfigError("cell resolution " + std::to_string(cell.resolution()) +
                      " does not match grid resolution " + std::to_string(cfg.resolution));
  return axial_center(cell.q(), cell.r(), cfg.edge_length());
}

inline GeoCoord centroid_of(CellId cell, const GridConfig& cfg) {
  const GeoCoord c = unproject(centroid_planar(cell, cfg), cfg);
  require_valid(c);
  return c;
}

/// Axial neighbor offsets in canonical order.
inline constexpr std::array<std::array<int, 2>, 6> kNeighborOffsets{{
    {1, 0}, {1, -1}, {0, -1}, {-1, 0}, {-1, 1}, {0, 1}}};

inline std::array<CellId, 6> neighbors(CellId cell) {
  std::array<CellId, 6> out;
  for (std::size_t k = 0; k < 6; ++k)
    out[k] = CellId::make(cell.resolution(), cell.q() + kNeighborOffsets[k][0],
                          cell.r() + kNeighborOffsets[k][1]);
  return out;
}

}  // namespace mobclip::hexgrid
