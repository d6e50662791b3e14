#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "nbiot/channel.hpp"
#include "nbiot/topology.hpp"

using namespace nbiot;

TEST(Layout, DefaultHas19Sites57Sectors) {
  const auto layout = build_layout(SimConfig{});
  EXPECT_EQ(layout.sites.size(), 19u);
  EXPECT_EQ(layout.sectors.size(), 57u);
  for (std::size_t i = 0; i < layout.sectors.size(); ++i) EXPECT_EQ(layout.sectors[i].global_index(), int(i));
}

TEST(Layout, RingOneNeighboursAtInterSiteDistance) {
  const auto layout = build_layout(SimConfig{});
  int neighbours = 0;
  for (const auto& s : layout.sites) {
    if (s.layer != SiteLayer::Middle) continue;
    ++neighbours;
    EXPECT_NEAR(distance(s.position, layout.sites[0].position), 1732.0, 1e-9);
  }
  EXPECT_EQ(neighbours, 6);
}

TEST(Layout, OuterRingDistances) {
  const auto layout = build_layout(SimConfig{});
  std::map<long, int> by_distance;
  for (const auto& s : layout.sites)
    if (s.layer == SiteLayer::Outer) ++by_distance[std::lround(norm(s.position))];
  // Six corners at 2d and six edge midpoints at sqrt(3) d.
  EXPECT_EQ(by_distance[std::lround(2 * 1732.0)], 6);
  EXPECT_EQ(by_distance[std::lround(std::numbers::sqrt3 * 1732.0)], 6);
}

TEST(Layout, SitesAreDistinctAndNearestNeighboursAtD) {
  const auto layout = build_layout(SimConfig{});
  for (const auto& a : layout.sites) {
    double nearest = 1e300;
    for (const auto& b : layout.sites)
      if (a.id != b.id) nearest = std::min(nearest, distance(a.position, b.position));
    EXPECT_NEAR(nearest, 1732.0, 1e-6);
  }
}

TEST(Layout, SingleSiteMode) {
  SimConfig c;
  c.num_sites = 1;
  const auto layout = build_layout(c);
  EXPECT_EQ(layout.sites.size(), 1u);
  EXPECT_EQ(layout.sectors.size(), 3u);
}

TEST(Layout, CellRadiusIsDOverSqrt3) {
  const auto layout = build_layout(SimConfig{});
  EXPECT_NEAR(layout.cell_radius(), 1732.0 / std::sqrt(3.0), 1e-9);
  EXPECT_NEAR(layout.cell_radius(), 1000.0, 0.05);
}

TEST(PixelMap, ExcludesPointsNearSiteAndOutsideHex) {
  const SimConfig c;
  const auto layout = build_layout(c);
  const auto map = build_pixel_map(c, layout);
  std::size_t count = 0;
  for (int iy = 0; iy < map.height; ++iy)
    for (int ix = 0; ix < map.width; ++ix) {
      const Vec2 p = map.center(ix, iy);
      const bool expect = in_site_cell({0, 0}, p, c.inter_site_distance) && norm(p) >= c.min_link_distance;
      EXPECT_EQ(map.in_roi(ix, iy), expect);
      count += expect;
    }
  EXPECT_EQ(map.roi_pixel_count(), count);
  // Hexagon area 3 sqrt(3)/2 R^2 minus the exclusion disc, in 25 m^2 pixels.
  const double r = layout.cell_radius();
  const double expected = (1.5 * std::numbers::sqrt3 * r * r - std::numbers::pi * 35.0 * 35.0) / 25.0;
  EXPECT_NEAR(static_cast<double>(count), expected, expected * 0.005);
}

TEST(Drop, PositionsInsideRoiAndDistinct) {
  SimConfig c;
  c.num_terminals = 4000;
  const auto layout = build_layout(c);
  const auto map = build_pixel_map(c, layout);
  Engine rng(7);
  const auto t = drop_terminals(c, map, rng);
  ASSERT_EQ(t.size(), 4000u);
  std::set<std::pair<long, long>> seen;
  for (const auto& term : t) {
    EXPECT_TRUE(map.is_roi_pixel_center(term.position));
    EXPECT_TRUE(in_site_cell({0, 0}, term.position, c.inter_site_distance));
    EXPECT_GE(norm(term.position), 35.0);
    EXPECT_TRUE(seen.insert({std::lround(term.position.x * 10), std::lround(term.position.y * 10)}).second);
  }
}

TEST(Drop, SameSeedSamePlacement) {
  SimConfig c;
  c.num_terminals = 500;
  const auto layout = build_layout(c);
  const auto map = build_pixel_map(c, layout);
  Engine a(11), b(11);
  const auto ta = drop_terminals(c, map, a);
  const auto tb = drop_terminals(c, map, b);
  for (std::size_t i = 0; i < ta.size(); ++i) {
    EXPECT_EQ(ta[i].position.x, tb[i].position.x);
    EXPECT_EQ(ta[i].position.y, tb[i].position.y);
  }
}

TEST(Drop, MeanPositionNearRoiCentroid) {
  // Uniform over the symmetric hexagon: the centroid is the site.
  SimConfig c;
  c.num_terminals = 100000;
  c.allow_duplicate_positions = true;
  const auto layout = build_layout(c);
  const auto map = build_pixel_map(c, layout);
  Engine rng(3);
  double sx = 0, sy = 0;
  const int n = c.num_terminals;
  for (const auto& t : drop_terminals(c, map, rng)) {
    sx += t.position.x;
    sy += t.position.y;
  }
  const double diameter = 2 * layout.cell_radius();
  EXPECT_LT(std::abs(sx / n), 0.01 * diameter);
  EXPECT_LT(std::abs(sy / n), 0.01 * diameter);
}

TEST(Drop, TooManyTerminalsForUniquePixels) {
  SimConfig c;
  c.pixel_resolution = 200.0;
  c.num_terminals = 1000;
  const auto layout = build_layout(c);
  const auto map = build_pixel_map(c, layout);
  Engine rng(1);
  EXPECT_THROW(drop_terminals(c, map, rng), std::runtime_error);
  c.allow_duplicate_positions = true;
  EXPECT_EQ(drop_terminals(c, map, rng).size(), 1000u);
}

namespace {

double gain_db(const SimConfig& c, const Layout& layout, const Terminal& t, int g) {
  const auto& sec = layout.sectors[g];
  const auto& site = layout.sites[sec.site_id];
  const double d = std::max(distance(site.position, t.position), c.min_link_distance);
  return -coupling_alpha_db(d, pattern_angle_deg(site, sec, t.position, c), make_path_loss_params(c),
                            make_antenna_pattern(c));
}

}  // namespace

TEST(Attach, BoresightTerminalAttachesToThatSector) {
  const SimConfig c;
  const auto layout = build_layout(c);
  std::vector<Terminal> ts{{0, {100.0, 0.0}, -1}, {1, Vec2{std::cos(deg2rad(120.0)), std::sin(deg2rad(120.0))} * 100.0, -1},
                           {2, Vec2{std::cos(deg2rad(240.0)), std::sin(deg2rad(240.0))} * 100.0, -1}};
  attach_terminals(ts, candidate_sectors(c, layout),
                   [&](const Terminal& t, int g) { return gain_db(c, layout, t, g); });
  EXPECT_EQ(ts[0].serving_sector, 0);
  EXPECT_EQ(ts[1].serving_sector, 1);
  EXPECT_EQ(ts[2].serving_sector, 2);
}

TEST(Attach, BoundaryTieGoesToLowestSector) {
  const SimConfig c;
  const auto layout = build_layout(c);
  // 60 degrees is equidistant from the 0 and 120 degree boresights.
  std::vector<Terminal> ts{{0, Vec2{std::cos(deg2rad(60.0)), std::sin(deg2rad(60.0))} * 300.0, -1},
                           {1, Vec2{std::cos(deg2rad(180.0)), std::sin(deg2rad(180.0))} * 300.0, -1}};
  attach_terminals(ts, candidate_sectors(c, layout),
                   [&](const Terminal& t, int g) { return gain_db(c, layout, t, g); });
  EXPECT_EQ(ts[0].serving_sector, 0);
  EXPECT_EQ(ts[1].serving_sector, 1);
}

TEST(Attach, RotationSymmetryWithoutShadowing) {
  const SimConfig c;
  const auto layout = build_layout(c);
  const auto map = build_pixel_map(c, layout);
  Engine rng(5);
  SimConfig cc = c;
  cc.num_terminals = 300;
  auto ts = drop_terminals(cc, map, rng);
  std::vector<Terminal> rotated = ts;
  const double a = deg2rad(120.0);
  for (auto& t : rotated)
    t.position = {t.position.x * std::cos(a) - t.position.y * std::sin(a),
                  t.position.x * std::sin(a) + t.position.y * std::cos(a)};
  const auto gain = [&](const Terminal& t, int g) { return gain_db(c, layout, t, g); };
  attach_terminals(ts, candidate_sectors(c, layout), gain);
  attach_terminals(rotated, candidate_sectors(c, layout), gain);
  int compared = 0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    // Skip terminals sitting on a sector boundary where rounding decides the tie.
    const double phi = rad2deg(std::atan2(ts[i].position.y, ts[i].position.x));
    if (std::abs(std::remainder(phi - 60.0, 120.0)) < 1e-6) continue;
    EXPECT_EQ(rotated[i].serving_sector, (ts[i].serving_sector + 1) % 3);
    ++compared;
  }
  EXPECT_GT(compared, 290);
}

TEST(Layout, WriteCsv) {
  const auto layout = build_layout(SimConfig{});
  std::ostringstream os;
  write_sites_csv(os, layout);
  const auto text = os.str();
  EXPECT_EQ(text.rfind("site_id,x_m,y_m,layer\n", 0), 0u);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 20);
}
