#include <gtest/gtest.h>

#include <numbers>

#include "test_support.hpp"

using namespace mobclip;
using namespace mobclip::hexgrid;

namespace {

GridConfig shanghai() { return GridConfig::level6_analog({31.2, 121.5}, 31.2); }

/// Flat-top hexagon centers from the two lattice basis vectors, written
/// independently of axial_center: q steps by (1.5a, -sqrt(3)/2 a), r steps
/// by (0, -sqrt(3) a) in (east, north) meters.
PlanarPoint oracle_center(std::int64_t q, std::int64_t r, double a) {
  const double s3 = std::sqrt(3.0);
  return {1.5 * a * static_cast<double>(q), -s3 / 2.0 * a * static_cast<double>(q) - s3 * a * static_cast<double>(r)};
}

double dist(PlanarPoint p, PlanarPoint q) { return std::hypot(p.x - q.x, p.y - q.y); }

/// All (q, r) in a (2h+1)^2 patch around (q0, r0) whose center is nearest
/// to p, within a relative tolerance that treats exact ties as ties.
std::vector<std::array<std::int64_t, 2>> nearest_centers(PlanarPoint p, double a, std::int64_t q0, std::int64_t r0,
                                                         int h = 2) {
  double best = 1e300;
  std::vector<std::pair<double, std::array<std::int64_t, 2>>> all;
  for (std::int64_t dq = -h; dq <= h; ++dq)
    for (std::int64_t dr = -h; dr <= h; ++dr) {
      const double d = dist(p, oracle_center(q0 + dq, r0 + dr, a));
      all.push_back({d, {q0 + dq, r0 + dr}});
      best = std::min(best, d);
    }
  std::vector<std::array<std::int64_t, 2>> out;
  for (auto& [d, c] : all)
    if (d <= best * (1 + 1e-9) + 1e-9 * a) out.push_back(c);
  return out;
}

}  // namespace

TEST(Hexgrid, OriginMapsToOriginCell) {
  const auto cfg = shanghai();
  EXPECT_EQ(cell_of(cfg.origin, cfg), CellId::make(6, 0, 0));
  const auto c = centroid_of(CellId::make(6, 0, 0), cfg);
  EXPECT_DOUBLE_EQ(c.lat, cfg.origin.lat);
  EXPECT_DOUBLE_EQ(c.lon, cfg.origin.lon);
}

TEST(Hexgrid, OnePointFiveEdgesEastResolvesToQ1R0) {
  const auto cfg = shanghai();
  const double a = cfg.edge_length();
  const PlanarPoint p{1.5 * a, 0.0};
  const GeoCoord g = unproject(p, cfg);
  const CellId got = cell_of(g, cfg);
  EXPECT_EQ(got, CellId::make(6, 1, 0));
  // The point is equidistant from (1, 0) and (1, -1); the result must be one
  // of the brute-force nearest centers.
  const auto cands = nearest_centers(project(g, cfg), a, 0, 0);
  EXPECT_EQ(cands.size(), 2u);
  const std::array<std::int64_t, 2> qr{got.q(), got.r()};
  EXPECT_NE(std::find(cands.begin(), cands.end(), qr), cands.end());
}

TEST(Hexgrid, CentroidOfQ1R0MatchesGeometryOracle) {
  const auto cfg = shanghai();
  const double a = cfg.edge_length();
  const PlanarPoint c = project(centroid_of(CellId::make(6, 1, 0), cfg), cfg);
  const PlanarPoint o = oracle_center(1, 0, a);
  EXPECT_NEAR(c.x, 1.5 * a, 1e-6);
  EXPECT_NEAR(c.x, o.x, 1e-6);
  EXPECT_NEAR(c.y, o.y, 1e-6);
  EXPECT_NEAR(dist(c, {0, 0}), std::sqrt(3.0) * a, 1e-6);
}

TEST(Hexgrid, RoundTripThroughCentroid) {
  const auto cfg = shanghai();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> lat(30.0, 32.5), lon(120.0, 123.0);
  for (int i = 0; i < 1000; ++i) {
    const CellId c = cell_of({lat(rng), lon(rng)}, cfg);
    EXPECT_EQ(cell_of(centroid_of(c, cfg), cfg), c);
  }
}

TEST(Hexgrid, NeighborsOfOriginInCanonicalOrder) {
  const auto nb = neighbors(CellId::make(3, 0, 0));
  const std::array<std::array<int, 2>, 6> want{{{1, 0}, {1, -1}, {0, -1}, {-1, 0}, {-1, 1}, {0, 1}}};
  for (std::size_t k = 0; k < 6; ++k) {
    EXPECT_EQ(nb[k].q(), want[k][0]);
    EXPECT_EQ(nb[k].r(), want[k][1]);
    EXPECT_EQ(nb[k].resolution(), 3);
  }
}

TEST(Hexgrid, NeighborSymmetryAndEqualSpacing) {
  const auto cfg = shanghai();
  const double a = cfg.edge_length();
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::int64_t> coord(-1000, 1000);
  for (int t = 0; t < 500; ++t) {
    const CellId c = CellId::make(6, coord(rng), coord(rng));
    const PlanarPoint pc = centroid_planar(c, cfg);
    for (CellId n : neighbors(c)) {
      const auto back = neighbors(n);
      EXPECT_NE(std::find(back.begin(), back.end(), c), back.end());
      EXPECT_NEAR(dist(centroid_planar(n, cfg), pc), std::sqrt(3.0) * a, 1e-6 * a);
    }
  }
  // Non-neighbors are never listed: a cell two steps away is not adjacent.
  const auto nb = neighbors(CellId::make(6, 0, 0));
  EXPECT_EQ(std::find(nb.begin(), nb.end(), CellId::make(6, 2, 0)), nb.end());
}

TEST(Hexgrid, PackUnpackBijection) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::int64_t> coord(-(std::int64_t{1} << 29), (std::int64_t{1} << 29) - 1);
  std::uniform_int_distribution<int> res(0, 15);
  for (int i = 0; i < 1'000'000; ++i) {
    const int rs = res(rng);
    const std::int64_t q = coord(rng), r = coord(rng);
    const CellId c = CellId::make(rs, q, r);
    ASSERT_EQ(c.resolution(), rs);
    ASSERT_EQ(c.q(), q);
    ASSERT_EQ(c.r(), r);
    ASSERT_EQ(CellId::make(c.resolution(), c.q(), c.r()).packed(), c.packed());
  }
  // Any raw 64-bit value round-trips as well (external id pass-through).
  for (int i = 0; i < 100'000; ++i) {
    const CellId c(rng());
    ASSERT_EQ(CellId::make(c.resolution(), c.q(), c.r()).packed(), c.packed());
  }
}

TEST(Hexgrid, EncodingRejectsOverflow) {
  const std::int64_t lim = std::int64_t{1} << 29;
  EXPECT_NO_THROW(CellId::make(0, lim - 1, -lim));
  EXPECT_THROW(CellId::make(0, lim, 0), RangeError);
  EXPECT_THROW(CellId::make(0, 0, -lim - 1), RangeError);
  EXPECT_THROW(CellId::make(16, 0, 0), RangeError);
  EXPECT_THROW(CellId::make(-1, 0, 0), RangeError);
  EXPECT_THROW(neighbors(CellId::make(0, lim - 1, 0)), RangeError);
}

TEST(Hexgrid, ContainmentAgainstSevenCellNeighborhood) {
  const auto cfg = shanghai();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> lat(29.0, 33.5), lon(119.0, 124.0);
  for (int i = 0; i < 10'000; ++i) {
    const GeoCoord g{lat(rng), lon(rng)};
    const PlanarPoint p = project(g, cfg);
    const CellId c = cell_of(g, cfg);
    const double own = dist(p, centroid_planar(c, cfg));
    for (CellId n : neighbors(c)) EXPECT_LE(own, dist(p, centroid_planar(n, cfg)) + 1e-6);
    EXPECT_LE(own, cfg.edge_length() * (1 + 1e-9));
  }
}

TEST(Hexgrid, Level6AnalogAreaCalibration) {
  for (double ref : {0.0, 31.2, 52.0}) {
    const auto cfg = GridConfig::level6_analog({ref, 10.0}, ref);
    const double area = hex_area(cfg.edge_length());
    EXPECT_NEAR(area / 36.13e6, 1.0, 0.05);
    // Equal-area check on the sphere: unproject the six vertices and take the
    // shoelace area in Lambert cylindrical coordinates (R lon, R sin lat).
    const double a = cfg.edge_length();
    constexpr double deg = std::numbers::pi / 180.0;
    double twice = 0;
    std::array<std::array<double, 2>, 6> v{};
    for (int k = 0; k < 6; ++k) {
      const double ang = k * std::numbers::pi / 3.0;
      const GeoCoord g = unproject({a * std::cos(ang), a * std::sin(ang)}, cfg);
      v[k] = {kEarthRadiusM * g.lon * deg, kEarthRadiusM * std::sin(g.lat * deg)};
    }
    for (int k = 0; k < 6; ++k) twice += v[k][0] * v[(k + 1) % 6][1] - v[(k + 1) % 6][0] * v[k][1];
    EXPECT_NEAR(std::abs(twice) / 2.0 / 36.13e6, 1.0, 0.05) << "ref_lat " << ref;
  }
}

TEST(Hexgrid, EdgeLengthHalvesPerResolution) {
  auto cfg = shanghai();
  const double e6 = cfg.edge_length();
  cfg.resolution = 7;
  EXPECT_DOUBLE_EQ(cfg.edge_length(), e6 / 2);
}

TEST(Hexgrid, Errors) {
  const auto cfg = shanghai();
  EXPECT_THROW(cell_of({91.0, 0.0}, cfg), RangeError);
  EXPECT_THROW(cell_of({0.0, 180.5}, cfg), RangeError);
  EXPECT_THROW(cell_of({std::nan(""), 0.0}, cfg), RangeError);
  EXPECT_THROW(centroid_of(CellId::make(5, 0, 0), cfg), ConfigError);
  GridConfig bad = cfg;
  bad.edge_length0_m = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}
