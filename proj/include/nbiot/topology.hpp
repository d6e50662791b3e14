#pragma once

// Hexagonal three-ring site layout, tri-sector sectorization, the ROI pixel
// map and terminal placement/attachment.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "nbiot/config.hpp"
#include "nbiot/rng.hpp"

namespace nbiot {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  bool operator==(const Vec2&) const = default;
};

inline double norm(Vec2 v) { return std::hypot(v.x, v.y); }
inline double distance(Vec2 a, Vec2 b) { return norm(a - b); }

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }

/// Wraps an angle to (-180, 180].
inline double wrap_degrees(double a) {
  a = std::fmod(a, 360.0);
  if (a <= -180.0) a += 360.0;
  if (a > 180.0) a -= 360.0;
  return a;
}

enum class SiteLayer { Inner, Middle, Outer };

inline const char* to_string(SiteLayer l) {
  switch (l) {
    case SiteLayer::Inner: return "inner";
    case SiteLayer::Middle: return "middle";
    case SiteLayer::Outer: return "outer";
  }
  return "?";
}

struct Site {
  int id = 0;
  Vec2 position;
  SiteLayer layer = SiteLayer::Inner;
};

struct Sector {
  int site_id = 0;
  int sector_index = 0;
  double boresight_deg = 0.0;

  /// Index into Layout::sectors.
  int global_index() const { return site_id * 3 + sector_index; }
};

struct Layout {
  std::vector<Site> sites;
  std::vector<Sector> sectors;
  double inter_site_distance = 0.0;

  /// Circumradius of one site's hexagonal coverage cell.
  double cell_radius() const { return inter_site_distance / std::numbers::sqrt3; }
};

inline constexpr double kSectorBoresights[3] = {0.0, 120.0, 240.0};

/// Sites sit on a hexagonal grid whose neighbor directions are 30 + 60k degrees,
/// so the 0/120/240 degree boresights point at cell corners.
inline Layout build_layout(const SimConfig& cfg) {
  Layout layout;
  layout.inter_site_distance = cfg.inter_site_distance;
  const double d = cfg.inter_site_distance;

  std::vector<Vec2> unit(6);
  for (int k = 0; k < 6; ++k) unit[k] = {std::cos(deg2rad(30.0 + 60.0 * k)), std::sin(deg2rad(30.0 + 60.0 * k))};

  std::vector<std::pair<Vec2, SiteLayer>> positions{{{0.0, 0.0}, SiteLayer::Inner}};
  if (cfg.num_sites >= 7) {
    for (int k = 0; k < 6; ++k) positions.push_back({unit[k] * d, SiteLayer::Middle});
  }
  if (cfg.num_sites >= 19) {
    for (int k = 0; k < 6; ++k) {
      positions.push_back({unit[k] * (2.0 * d), SiteLayer::Outer});
      positions.push_back({(unit[k] + unit[(k + 1) % 6]) * d, SiteLayer::Outer});
    }
  }

  for (std::size_t i = 0; i < positions.size(); ++i) {
    layout.sites.push_back({static_cast<int>(i), positions[i].first, positions[i].second});
    for (int s = 0; s < 3; ++s) layout.sectors.push_back({static_cast<int>(i), s, kSectorBoresights[s]});
  }
  return layout;
}

/// True if `p` lies inside the hexagonal cell of a site at `center`.
inline bool in_site_cell(Vec2 center, Vec2 p, double inter_site_distance) {
  const Vec2 r = p - center;
  const double apothem = inter_site_distance / 2.0;
  for (int k = 0; k < 6; ++k) {
    const double a = deg2rad(30.0 + 60.0 * k);
    if (r.x * std::cos(a) + r.y * std::sin(a) > apothem + 1e-9) return false;
  }
  return true;
}

/// Sites whose cells form the region of interest.
inline std::vector<int> roi_sites(const SimConfig& cfg, const Layout& layout) {
  if (cfg.roi_mode == RoiMode::Center) return {0};
  std::vector<int> ids;
  for (const auto& s : layout.sites) ids.push_back(s.id);
  return ids;
}

struct PixelMap {
  Vec2 origin;  // corner of pixel (0, 0)
  double resolution = 5.0;
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> roi;  // row-major, height x width

  Vec2 center(int ix, int iy) const {
    return {origin.x + (ix + 0.5) * resolution, origin.y + (iy + 0.5) * resolution};
  }
  Vec2 center(std::size_t flat) const {
    return center(static_cast<int>(flat % width), static_cast<int>(flat / width));
  }
  bool in_roi(int ix, int iy) const {
    return ix >= 0 && iy >= 0 && ix < width && iy < height && roi[static_cast<std::size_t>(iy) * width + ix];
  }
  std::size_t roi_pixel_count() const {
    return static_cast<std::size_t>(std::count(roi.begin(), roi.end(), std::uint8_t{1}));
  }
  /// True if `p` is the center of an ROI pixel (within 1e-6 m).
  bool is_roi_pixel_center(Vec2 p) const {
    const int ix = static_cast<int>(std::floor((p.x - origin.x) / resolution));
    const int iy = static_cast<int>(std::floor((p.y - origin.y) / resolution));
    return in_roi(ix, iy) && distance(center(ix, iy), p) < 1e-6;
  }
};

/// Pixel map covering the ROI cells; pixels closer than min_link_distance to an
/// ROI site are excluded.
inline PixelMap build_pixel_map(const SimConfig& cfg, const Layout& layout) {
  const auto ids = roi_sites(cfg, layout);
  const double r = layout.cell_radius();
  const double res = cfg.pixel_resolution;

  double min_x = 1e300, min_y = 1e300, max_x = -1e300, max_y = -1e300;
  for (int id : ids) {
    const Vec2 c = layout.sites[id].position;
    min_x = std::min(min_x, c.x - r);
    max_x = std::max(max_x, c.x + r);
    min_y = std::min(min_y, c.y - cfg.inter_site_distance / 2.0);
    max_y = std::max(max_y, c.y + cfg.inter_site_distance / 2.0);
  }

  PixelMap map;
  map.resolution = res;
  map.origin = {std::floor(min_x / res) * res, std::floor(min_y / res) * res};
  map.width = static_cast<int>(std::ceil((max_x - map.origin.x) / res));
  map.height = static_cast<int>(std::ceil((max_y - map.origin.y) / res));
  map.roi.assign(static_cast<std::size_t>(map.width) * map.height, 0);

  for (int iy = 0; iy < map.height; ++iy) {
    for (int ix = 0; ix < map.width; ++ix) {
      const Vec2 p = map.center(ix, iy);
      bool inside = false;
      bool too_close = false;
      for (int id : ids) {
        const Vec2 c = layout.sites[id].position;
        inside = inside || in_site_cell(c, p, cfg.inter_site_distance);
        too_close = too_close || distance(c, p) < cfg.min_link_distance;
      }
      map.roi[static_cast<std::size_t>(iy) * map.width + ix] = inside && !too_close;
    }
  }
  return map;
}

struct Terminal {
  int id = 0;
  Vec2 position;
  int serving_sector = -1;  // global sector index, -1 until attached
};

/// Uniform placement over ROI pixel centers; positions are distinct unless
/// cfg.allow_duplicate_positions.
inline std::vector<Terminal> drop_terminals(const SimConfig& cfg, const PixelMap& map, Engine& rng) {
  std::vector<std::size_t> pixels;
  pixels.reserve(map.roi_pixel_count());
  for (std::size_t i = 0; i < map.roi.size(); ++i)
    if (map.roi[i]) pixels.push_back(i);

  const auto n = static_cast<std::size_t>(cfg.num_terminals);
  if (pixels.empty() && n > 0) throw std::runtime_error("drop_terminals: ROI has no pixels");

  std::vector<Terminal> terminals(n);
  if (cfg.allow_duplicate_positions) {
    std::uniform_int_distribution<std::size_t> pick(0, pixels.empty() ? 0 : pixels.size() - 1);
    for (std::size_t i = 0; i < n; ++i) terminals[i] = {static_cast<int>(i), map.center(pixels[pick(rng)]), -1};
    return terminals;
  }
  if (pixels.size() < n) {
    throw std::runtime_error("drop_terminals: ROI has " + std::to_string(pixels.size()) +
                             " pixels, cannot place " + std::to_string(n) + " terminals uniquely");
  }
  // Partial Fisher-Yates: the first n entries become a uniform sample without replacement.
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pixels.size() - 1);
    std::swap(pixels[i], pixels[pick(rng)]);
    terminals[i] = {static_cast<int>(i), map.center(pixels[i]), -1};
  }
  return terminals;
}

/// Sets each terminal's serving sector to the candidate with the largest
/// large-scale gain `gain_db(terminal, global_sector)`. Gains within 1e-9 dB
/// count as ties; the lowest sector index wins.
template <typename GainFn>
void attach_terminals(std::vector<Terminal>& terminals, const std::vector<int>& candidate_sectors,
                      GainFn&& gain_db) {
  for (auto& t : terminals) {
    int best = -1;
    double best_gain = -1e300;
    for (int s : candidate_sectors) {
      const double g = gain_db(t, s);
      if (best < 0 || g > best_gain + 1e-9) {
        best = s;
        best_gain = g;
      }
    }
    t.serving_sector = best;
  }
}

/// Candidate serving sectors: all sectors of the ROI sites, in index order.
inline std::vector<int> candidate_sectors(const SimConfig& cfg, const Layout& layout) {
  std::vector<int> out;
  for (int id : roi_sites(cfg, layout))
    for (int s = 0; s < 3; ++s) out.push_back(id * 3 + s);
  return out;
}

inline void write_sites_csv(std::ostream& os, const Layout& layout) {
  os << "site_id,x_m,y_m,layer\n";
  for (const auto& s : layout.sites)
    os << s.id << ',' << detail::format_double(s.position.x) << ',' << detail::format_double(s.position.y)
       << ',' << to_string(s.layer) << '\n';
}

inline void write_terminals_csv(std::ostream& os, const std::vector<Terminal>& terminals) {
  os << "terminal_id,x_m,y_m,serving_site,serving_sector\n";
  for (const auto& t : terminals)
    os << t.id << ',' << detail::format_double(t.position.x) << ',' << detail::format_double(t.position.y)
       << ',' << (t.serving_sector < 0 ? -1 : t.serving_sector / 3) << ','
       << (t.serving_sector < 0 ? -1 : t.serving_sector % 3) << '\n';
}

}  // namespace nbiot
