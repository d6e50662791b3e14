#pragma once

// Large-scale propagation (Hata-style path loss, sector antenna pattern,
// coupling floor), spatially correlated log-normal shadowing generated by
// Cholesky factorization, and the per-TTI small-scale fading process.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <memory>
#include <mutex>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "nbiot/config.hpp"
#include "nbiot/rng.hpp"
#include "nbiot/topology.hpp"

namespace nbiot {

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double linear_to_db(double lin) { return 10.0 * std::log10(lin); }

// ---------------------------------------------------------------------------
// Path loss and antenna pattern

struct PathLossParams {
  double height_m = 15.0;        // eNodeB antenna height H
  double freq_mhz = 900.0;       // carrier frequency f
  double psi_floor_db = 0.0;     // minimum coupling floor
  double cable_loss_db = 3.0;
  double penetration_loss_db = 20.0;
  double terminal_gain_dbi = -4.0;
};

struct AntennaPattern {
  double g_max_dbi = 18.0;
  double beamwidth_deg = 65.0;
  double floor_attenuation_db = 23.0;
};

inline constexpr double kPaperPsiDb = 178.96;

/// Macro-cell path loss in dB; `distance_m` is converted to kilometres.
/// The (15 m, 900 MHz) case uses the reduced constant 120.9 dB exactly.
inline double path_loss_db(double distance_m, const PathLossParams& p) {
  if (!(distance_m > 0.0)) throw std::invalid_argument("path_loss_db: distance must be positive");
  const double log_r = std::log10(distance_m / 1000.0);
  if (p.height_m == 15.0 && p.freq_mhz == 900.0) return 120.9 + 37.6 * log_r;
  return 40.0 * (1.0 - 4e-3 * p.height_m) * log_r - 18.0 * std::log10(p.height_m) +
         21.0 * std::log10(p.freq_mhz) + 80.0;
}

/// Sector gain at `theta_deg` off boresight.
inline double antenna_gain_db(double theta_deg, const AntennaPattern& a) {
  const double x = theta_deg / a.beamwidth_deg;
  return -std::min(12.0 * x * x, a.floor_attenuation_db) + a.g_max_dbi;
}

/// Total coupling loss without shadowing:
/// max(L - G_bs - G_terminal, psi) + cable + penetration.
inline double coupling_alpha_db(double distance_m, double theta_deg, const PathLossParams& p,
                                const AntennaPattern& a) {
  const double l = path_loss_db(distance_m, p);
  return std::max(l - antenna_gain_db(theta_deg, a) - p.terminal_gain_dbi, p.psi_floor_db) +
         p.cable_loss_db + p.penetration_loss_db;
}

inline AntennaPattern make_antenna_pattern(const SimConfig& cfg) {
  return {cfg.enb_antenna_gain_max, cfg.antenna_beamwidth, cfg.antenna_floor};
}

inline PathLossParams make_path_loss_params(const SimConfig& cfg) {
  PathLossParams p;
  p.height_m = cfg.enb_antenna_height;
  p.freq_mhz = cfg.carrier_freq;
  p.cable_loss_db = cfg.cable_loss;
  p.penetration_loss_db = cfg.penetration_loss;
  p.terminal_gain_dbi = cfg.terminal_antenna_gain;
  p.psi_floor_db = cfg.psi_mode == PsiMode::PaperValue
                       ? kPaperPsiDb
                       : path_loss_db(cfg.min_link_distance, p) - cfg.enb_antenna_gain_max -
                             cfg.terminal_antenna_gain;
  return p;
}

/// Angle fed to the antenna pattern for a terminal seen from a sector.
inline double pattern_angle_deg(const Site& site, const Sector& sector, Vec2 terminal, const SimConfig& cfg) {
  const Vec2 r = terminal - site.position;
  if (cfg.pattern_plane == PatternPlane::Vertical) return rad2deg(std::atan2(cfg.enb_antenna_height, norm(r)));
  return wrap_degrees(rad2deg(std::atan2(r.y, r.x)) - sector.boresight_deg);
}

// ---------------------------------------------------------------------------
// Shadowing

inline double exponential_correlation(double lag_m, double corr_distance_m) {
  return std::exp(-lag_m / corr_distance_m);
}

inline constexpr double kCorrelationJitter = 1e-9;

/// Lower Cholesky factor of the exponential correlation matrix over `points`.
/// The diagonal carries kCorrelationJitter. Factorizes in place to avoid
/// holding two copies of a large matrix.
inline Eigen::MatrixXd correlated_factor(const std::vector<Vec2>& points, double corr_distance_m) {
  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = j; i < n; ++i) {
      m(i, j) = exponential_correlation(distance(points[i], points[j]), corr_distance_m);
    }
    m(j, j) += kCorrelationJitter;
  }
  Eigen::LLT<Eigen::Ref<Eigen::MatrixXd>, Eigen::Lower> llt(m);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("shadowing: correlation matrix is not positive definite");
  }
  m.triangularView<Eigen::StrictlyUpper>().setZero();
  return m;
}

/// Regular coarse grid of shadowing nodes covering the ROI. Only nodes that a
/// ROI pixel can interpolate from are active.
class ShadowingGrid {
 public:
  static constexpr std::size_t kMaxNodes = 12000;

  ShadowingGrid() = default;

  ShadowingGrid(Vec2 origin, double spacing, int nx, int ny, std::vector<int> node_of_cell,
                std::vector<Vec2> nodes, double corr_distance)
      : origin_(origin),
        spacing_(spacing),
        nx_(nx),
        ny_(ny),
        node_index_(std::move(node_of_cell)),
        nodes_(std::move(nodes)),
        corr_distance_(corr_distance) {
    const double r1 = exponential_correlation(spacing_, corr_distance_);
    const double r2 = exponential_correlation(spacing_ * std::numbers::sqrt2, corr_distance_);
    r_side_ = r1;
    r_diag_ = r2;
  }

  /// Grid over the hexagonal cells of the ROI sites.
  static ShadowingGrid for_roi(const SimConfig& cfg, const Layout& layout) {
    const double dx = cfg.shadow_grid_spacing;
    const auto ids = roi_sites(cfg, layout);
    const double r = layout.cell_radius() + 2 * dx;
    double min_x = 1e300, min_y = 1e300, max_x = -1e300, max_y = -1e300;
    for (int id : ids) {
      const Vec2 c = layout.sites[id].position;
      min_x = std::min(min_x, c.x - r);
      max_x = std::max(max_x, c.x + r);
      min_y = std::min(min_y, c.y - r);
      max_y = std::max(max_y, c.y + r);
    }
    const Vec2 origin{std::floor(min_x / dx) * dx, std::floor(min_y / dx) * dx};
    const int nx = static_cast<int>(std::ceil((max_x - origin.x) / dx)) + 1;
    const int ny = static_cast<int>(std::ceil((max_y - origin.y) / dx)) + 1;

    // Inflated cell test: any node that is a bilinear corner of an ROI pixel.
    const double grown_isd = cfg.inter_site_distance + 2 * 1.5 * dx;
    std::vector<int> index(static_cast<std::size_t>(nx) * ny, -1);
    std::vector<Vec2> nodes;
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const Vec2 p{origin.x + i * dx, origin.y + j * dx};
        bool keep = false;
        for (int id : ids) keep = keep || in_site_cell(layout.sites[id].position, p, grown_isd);
        if (keep) {
          index[static_cast<std::size_t>(j) * nx + i] = static_cast<int>(nodes.size());
          nodes.push_back(p);
        }
      }
    }
    if (nodes.size() > kMaxNodes) {
      throw ConfigError(ConfigError::Kind::Validation, "shadow_grid_spacing",
                        "config: 'shadow_grid_spacing' too fine for the ROI (" + std::to_string(nodes.size()) +
                            " nodes > " + std::to_string(kMaxNodes) + "); increase it");
    }
    return ShadowingGrid(origin, dx, nx, ny, std::move(index), std::move(nodes), cfg.shadow_corr_distance);
  }

  /// Rectangular grid of nx x ny nodes, all active.
  static ShadowingGrid rectangle(Vec2 origin, double spacing, int nx, int ny, double corr_distance) {
    std::vector<int> index(static_cast<std::size_t>(nx) * ny);
    std::vector<Vec2> nodes;
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        index[static_cast<std::size_t>(j) * nx + i] = static_cast<int>(nodes.size());
        nodes.push_back({origin.x + i * spacing, origin.y + j * spacing});
      }
    return ShadowingGrid(origin, spacing, nx, ny, std::move(index), std::move(nodes), corr_distance);
  }

  const std::vector<Vec2>& nodes() const { return nodes_; }
  double spacing() const { return spacing_; }
  double corr_distance() const { return corr_distance_; }

  struct Stencil {
    int node[4];
    double weight[4];
    double residual_std;  // std a unit-variance field keeps beyond the bilinear sum
  };

  /// Bilinear stencil for `p`; throws if any corner is inactive.
  Stencil stencil(Vec2 p) const {
    const double fx = (p.x - origin_.x) / spacing_;
    const double fy = (p.y - origin_.y) / spacing_;
    int i = static_cast<int>(std::floor(fx));
    int j = static_cast<int>(std::floor(fy));
    i = std::clamp(i, 0, nx_ - 2);
    j = std::clamp(j, 0, ny_ - 2);
    const double tx = fx - i;
    const double ty = fy - j;
    if (tx < -1e-9 || tx > 1 + 1e-9 || ty < -1e-9 || ty > 1 + 1e-9) {
      throw std::out_of_range("shadowing: point outside the grid");
    }
    Stencil s{};
    const int ci[4] = {i, i + 1, i, i + 1};
    const int cj[4] = {j, j, j + 1, j + 1};
    const double w[4] = {(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty};
    for (int k = 0; k < 4; ++k) {
      const int n = node_index_[static_cast<std::size_t>(cj[k]) * nx_ + ci[k]];
      if (n < 0) throw std::out_of_range("shadowing: point outside the grid");
      s.node[k] = n;
      s.weight[k] = w[k];
    }
    // w^T R w over the 4 corners: sides at lag `spacing`, diagonals at lag sqrt(2) * spacing.
    const double var = w[0] * w[0] + w[1] * w[1] + w[2] * w[2] + w[3] * w[3] +
                       2 * r_side_ * (w[0] * w[1] + w[2] * w[3] + w[0] * w[2] + w[1] * w[3]) +
                       2 * r_diag_ * (w[0] * w[3] + w[1] * w[2]);
    s.residual_std = std::sqrt(std::max(0.0, 1.0 - var));
    return s;
  }

 private:
  Vec2 origin_;
  double spacing_ = 20.0;
  int nx_ = 0;
  int ny_ = 0;
  std::vector<int> node_index_;
  std::vector<Vec2> nodes_;
  double corr_distance_ = 110.0;
  double r_side_ = 0.0;
  double r_diag_ = 0.0;
};

/// One realization of a shadowing field (dB) on a grid.
class ShadowingField {
 public:
  ShadowingField() = default;
  ShadowingField(std::shared_ptr<const ShadowingGrid> grid, std::vector<double> node_db, double std_db = 0.0,
                 std::uint64_t residual_key = 0)
      : grid_(std::move(grid)), node_db_(std::move(node_db)), std_db_(std_db), residual_key_(residual_key) {}

  const std::vector<double>& node_values() const { return node_db_; }
  const ShadowingGrid& grid() const { return *grid_; }

  /// Bilinear interpolation plus an independent residual per point carrying
  /// the variance the interpolant lacks. Zero at nodes; the residual is keyed
  /// by the point's millimetre coordinates, so repeated lookups agree.
  double at(Vec2 p) const {
    const auto s = grid_->stencil(p);
    double v = 0.0;
    for (int k = 0; k < 4; ++k) v += s.weight[k] * node_db_[s.node[k]];
    if (s.residual_std > 0.0 && std_db_ > 0.0) {
      const auto key = hash_values(residual_key_, std::llround(p.x * 1000.0), std::llround(p.y * 1000.0));
      v += std_db_ * s.residual_std * std::numbers::sqrt2 * complex_normal(key).re;
    }
    return v;
  }

 private:
  std::shared_ptr<const ShadowingGrid> grid_;
  std::vector<double> node_db_;
  double std_db_ = 0.0;
  std::uint64_t residual_key_ = 0;
};

/// Factor for `grid`, shared by every grid in the process with the same nodes
/// and correlation distance. Runs in one process reuse it instead of refactoring.
inline std::shared_ptr<const Eigen::MatrixXd> cached_correlated_factor(const ShadowingGrid& grid) {
  struct Entry {
    std::vector<Vec2> nodes;
    double corr_distance;
    std::shared_ptr<const Eigen::MatrixXd> factor;
  };
  static std::mutex mutex;
  static std::vector<Entry> cache;
  std::lock_guard lock(mutex);
  for (const auto& e : cache)
    if (e.corr_distance == grid.corr_distance() && e.nodes == grid.nodes()) return e.factor;
  auto factor = std::make_shared<const Eigen::MatrixXd>(correlated_factor(grid.nodes(), grid.corr_distance()));
  if (cache.size() >= 2) cache.erase(cache.begin());
  cache.push_back({grid.nodes(), grid.corr_distance(), factor});
  return factor;
}

/// Draws `count` independent fields s = std * L a sharing one factorization.
inline std::vector<ShadowingField> generate_shadowing(std::shared_ptr<const ShadowingGrid> grid, double std_db,
                                                      int count, Engine& rng) {
  std::vector<ShadowingField> fields;
  const auto n = static_cast<Eigen::Index>(grid->nodes().size());
  if (std_db == 0.0) {
    for (int k = 0; k < count; ++k) fields.emplace_back(grid, std::vector<double>(n, 0.0));
    return fields;
  }
  const auto factor_ptr = cached_correlated_factor(*grid);
  const Eigen::MatrixXd& factor = *factor_ptr;
  Eigen::MatrixXd a(n, count);
  std::vector<std::uint64_t> keys(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    for (Eigen::Index i = 0; i < n; ++i) a(i, k) = standard_normal(rng);
    keys[k] = rng();
  }
  Eigen::MatrixXd s = factor.triangularView<Eigen::Lower>() * a;
  s *= std_db;
  for (int k = 0; k < count; ++k) {
    const double* col = s.col(k).data();
    fields.emplace_back(grid, std::vector<double>(col, col + n), std_db, keys[k]);
  }
  return fields;
}

inline void write_shadowing_csv(std::ostream& os, const ShadowingField& field, const PixelMap& map) {
  os << "x_m,y_m,shadow_db\n";
  for (std::size_t i = 0; i < map.roi.size(); ++i) {
    if (!map.roi[i]) continue;
    const Vec2 p = map.center(i);
    os << detail::format_double(p.x) << ',' << detail::format_double(p.y) << ','
       << detail::format_double(field.at(p)) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Small-scale fading

/// Frequency-flat block Rayleigh fading, constant within a TTI and first-order
/// autoregressive across TTIs. Links are advanced lazily: a query after a gap of
/// d TTIs applies the exact d-step transition rho^d.
class FadingProcess {
 public:
  FadingProcess() = default;
  FadingProcess(FadingModel model, double rho, std::uint64_t key, std::size_t num_links)
      : model_(model), rho_(rho), key_(key), state_(num_links) {}

  FadingModel model() const { return model_; }
  double rho() const { return rho_; }

  /// |h(t)|^2 for `link`. Queries per link must be non-decreasing in t.
  double gain(std::size_t link, std::int64_t t) {
    if (model_ == FadingModel::None) return 1.0;
    auto& st = state_.at(link);
    if (st.last_t < 0) {
      const auto z = complex_normal(hash_values(key_, link, t));
      st.h = {z.re, z.im};
      st.last_t = t;
    } else if (t != st.last_t) {
      if (t < st.last_t) throw std::logic_error("FadingProcess: time went backwards");
      const double a = std::pow(rho_, static_cast<double>(t - st.last_t));
      const auto z = complex_normal(hash_values(key_, link, t));
      st.h = a * st.h + std::sqrt(1.0 - a * a) * std::complex<double>(z.re, z.im);
      st.last_t = t;
    }
    return std::norm(st.h);
  }

  std::complex<double> coefficient(std::size_t link, std::int64_t t) {
    if (model_ == FadingModel::None) return {1.0, 0.0};
    gain(link, t);
    return state_.at(link).h;
  }

  /// Independent-per-TTI Rayleigh power draw, for links without tracked state.
  double iid_gain(std::uint64_t link, std::int64_t t) const {
    if (model_ == FadingModel::None) return 1.0;
    return exponential_unit(hash_values(key_ ^ 0x1d1d1d1dULL, link, t));
  }

 private:
  struct LinkState {
    std::int64_t last_t = -1;
    std::complex<double> h;
  };

  FadingModel model_ = FadingModel::None;
  double rho_ = 0.0;
  std::uint64_t key_ = 0;
  std::vector<LinkState> state_;
};

}  // namespace nbiot
