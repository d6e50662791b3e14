#pragma once

// Link abstraction: per-subcarrier SINR, EESM compression, BLER/CQI/TBS lookups
// on the bundled link-level assets, and the decode coin toss.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nbiot/channel.hpp"
#include "nbiot/config.hpp"
#include "nbiot/rng.hpp"

#ifndef NBIOT_DATA_DIR
#define NBIOT_DATA_DIR "data"
#endif

namespace nbiot {

inline constexpr int kMaxCqi = 13;
inline constexpr int kMaxNsf = 10;
/// Single-tone NPUSCH carries at most I_TBS 10 (36.213 Table 16.5.1.2-1).
inline constexpr int kMaxUlMcs = 10;

enum class Direction { Downlink, Uplink };

inline const char* to_string(Direction d) { return d == Direction::Downlink ? "DL" : "UL"; }

/// Per-subcarrier SINR values on a linear scale.
class SinrVector {
 public:
  explicit SinrVector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw std::invalid_argument("SinrVector: need at least one subcarrier");
    for (double v : values_)
      if (!(v > 0.0)) throw std::invalid_argument("SinrVector: SINR values must be positive");
  }

  std::size_t size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

 private:
  std::vector<double> values_;
};

/// A received contribution: linear channel power gain times transmit power.
struct Contribution {
  double gain = 0.0;
  double power = 0.0;
};

inline double sinr_per_subcarrier(Contribution signal, std::span<const Contribution> interferers,
                                  double noise_power) {
  if (!(noise_power > 0.0)) throw std::invalid_argument("sinr_per_subcarrier: noise power must be positive");
  double interference = 0.0;
  for (const auto& i : interferers) interference += i.gain * i.power;
  return signal.gain * signal.power / (interference + noise_power);
}

/// Exponential effective SINR mapping, -eta ln(mean(exp(-gamma_i / eta))).
/// Evaluated relative to min(gamma) so large SINRs do not underflow.
inline double eesm(const SinrVector& gammas, double eta) {
  if (!(eta > 0.0)) throw std::invalid_argument("eesm: eta must be positive");
  const auto v = gammas.values();
  if (v.size() == 1) return v[0];
  const double lo = *std::min_element(v.begin(), v.end());
  double acc = 0.0;
  for (double g : v) acc += std::exp(-(g - lo) / eta);
  return lo - eta * std::log(acc / static_cast<double>(v.size()));
}

enum class Modulation { Qpsk };

inline double eesm_factor(Modulation m) {
  switch (m) {
    case Modulation::Qpsk: return 2.0;
  }
  return 2.0;
}

struct BlerPoint {
  double snr_db = 0.0;
  double bler = 1.0;
};

using BlerCurves = std::array<std::vector<BlerPoint>, kNumMcs>;
using CqiThresholds = std::array<double, kNumMcs>;  // index 0 unused (-inf)

/// Link-level results: BLER curves per MCS, CQI thresholds at 10% BLER and the
/// TBS table. The uplink has its own curves for a single-tone resource unit
/// (MCS 0..kMaxUlMcs); without them it reuses the downlink set up to kMaxUlMcs.
struct PhyAssets {
  BlerCurves bler_curves;
  CqiThresholds cqi_threshold_db{};
  BlerCurves ul_bler_curves;  // entries above kMaxUlMcs stay empty
  CqiThresholds ul_cqi_threshold_db{};
  std::array<std::array<int, kMaxNsf>, kNumMcs> tbs_bits{};

  int max_mcs(Direction d) const { return d == Direction::Downlink ? kMaxCqi : kMaxUlMcs; }
  const BlerCurves& curves(Direction d) const { return d == Direction::Downlink ? bler_curves : ul_bler_curves; }
  const CqiThresholds& thresholds(Direction d) const {
    return d == Direction::Downlink ? cqi_threshold_db : ul_cqi_threshold_db;
  }

  void validate() const;
  /// Recomputes CQI thresholds of both directions by inverse interpolation of each curve at BLER = 0.1.
  void derive_cqi_thresholds();

  static PhyAssets load(const std::string& dir);
  static std::string default_dir() { return NBIOT_DATA_DIR; }
};

namespace detail {

inline double interp_log_bler(const BlerPoint& a, const BlerPoint& b, double x) {
  const double t = (x - a.snr_db) / (b.snr_db - a.snr_db);
  if (a.bler > 0.0 && b.bler > 0.0) return std::exp(std::log(a.bler) + t * (std::log(b.bler) - std::log(a.bler)));
  return a.bler + t * (b.bler - a.bler);
}

/// SNR where the curve crosses `target`, interpolating in (dB, log BLER).
inline double snr_at_bler(const std::vector<BlerPoint>& curve, double target) {
  for (std::size_t i = 0; i + 1 < curve.size(); ++i) {
    const auto& a = curve[i];
    const auto& b = curve[i + 1];
    if (a.bler >= target && target >= b.bler && a.bler > b.bler) {
      if (a.bler > 0.0 && b.bler > 0.0) {
        const double la = std::log(a.bler), lb = std::log(b.bler);
        return a.snr_db + (std::log(target) - la) * (b.snr_db - a.snr_db) / (lb - la);
      }
      return a.snr_db + (target - a.bler) * (b.snr_db - a.snr_db) / (b.bler - a.bler);
    }
  }
  throw std::runtime_error("BLER curve does not cross the target");
}

inline std::vector<std::vector<std::string>> read_csv(const std::string& path, std::string_view header) {
  const std::string text = read_text_file(path);
  std::vector<std::vector<std::string>> rows;
  std::string_view rest = text;
  bool first = true;
  while (!rest.empty()) {
    auto nl = rest.find('\n');
    std::string_view line = trim(rest.substr(0, nl));
    rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
    if (line.empty()) continue;
    if (first) {
      if (line != header) throw std::runtime_error(path + ": expected header '" + std::string(header) + "'");
      first = false;
      continue;
    }
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      auto comma = line.find(',', start);
      cells.emplace_back(trim(line.substr(start, comma - start)));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

inline double to_double(const std::string& s, const std::string& where) {
  double v = 0;
  try {
    parse_value(where, s, v);
  } catch (const ConfigError& e) {
    throw std::runtime_error(where + ": " + e.what());
  }
  return v;
}

}  // namespace detail

namespace detail {

inline void validate_curves(const BlerCurves& curves, int max_mcs, const char* what) {
  for (int m = 0; m <= max_mcs; ++m) {
    const auto& c = curves[m];
    const std::string id = std::string(what) + " MCS " + std::to_string(m);
    if (c.size() < 2) throw std::runtime_error("assets: BLER curve for " + id + " too short");
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (c[i].bler < 0.0 || c[i].bler > 1.0) throw std::runtime_error("assets: BLER outside [0,1] for " + id);
      if (i > 0 && (c[i].snr_db <= c[i - 1].snr_db || c[i].bler > c[i - 1].bler))
        throw std::runtime_error("assets: BLER curve for " + id + " must be sorted by SNR and non-increasing");
    }
  }
}

inline void validate_thresholds(const CqiThresholds& t, int max_cqi, const char* what) {
  for (int k = 2; k <= max_cqi; ++k) {
    if (!(t[k] > t[k - 1]))
      throw std::runtime_error(std::string("assets: ") + what + " CQI thresholds must be strictly increasing");
  }
}

inline CqiThresholds thresholds_from(const BlerCurves& curves, int max_cqi) {
  CqiThresholds t;
  t.fill(std::numeric_limits<double>::infinity());
  t[0] = -std::numeric_limits<double>::infinity();
  for (int k = 1; k <= max_cqi; ++k) t[k] = snr_at_bler(curves[k], 0.1);
  return t;
}

}  // namespace detail

inline void PhyAssets::validate() const {
  detail::validate_curves(bler_curves, kMaxCqi, "DL");
  detail::validate_curves(ul_bler_curves, kMaxUlMcs, "UL");
  detail::validate_thresholds(cqi_threshold_db, kMaxCqi, "DL");
  detail::validate_thresholds(ul_cqi_threshold_db, kMaxUlMcs, "UL");
  for (int m = 0; m < kNumMcs; ++m) {
    for (int n = 0; n < kMaxNsf; ++n) {
      const int v = tbs_bits[m][n];
      if (v <= 0) throw std::runtime_error("assets: missing TBS entry");
      if ((n > 0 && v < tbs_bits[m][n - 1]) || (m > 0 && v < tbs_bits[m - 1][n]))
        throw std::runtime_error("assets: TBS table must be non-decreasing");
    }
  }
}

inline void PhyAssets::derive_cqi_thresholds() {
  cqi_threshold_db = detail::thresholds_from(bler_curves, kMaxCqi);
  ul_cqi_threshold_db = detail::thresholds_from(ul_bler_curves, kMaxUlMcs);
}

namespace detail {

inline BlerCurves load_curves(const std::string& path, int max_mcs) {
  BlerCurves curves;
  for (const auto& row : read_csv(path, "mcs,snr_db,bler")) {
    if (row.size() != 3) throw std::runtime_error(path + ": expected 3 columns");
    const int mcs = static_cast<int>(to_double(row[0], path));
    if (mcs < 0 || mcs > max_mcs) throw std::runtime_error(path + ": MCS out of range");
    curves[mcs].push_back({to_double(row[1], path), to_double(row[2], path)});
  }
  return curves;
}

inline CqiThresholds load_thresholds(const std::string& path, int max_cqi) {
  CqiThresholds t;
  t.fill(std::numeric_limits<double>::quiet_NaN());
  t[0] = -std::numeric_limits<double>::infinity();
  for (const auto& row : read_csv(path, "cqi,snr_db")) {
    if (row.size() != 2) throw std::runtime_error(path + ": expected 2 columns");
    const int cqi = static_cast<int>(to_double(row[0], path));
    if (cqi < 1 || cqi > max_cqi) throw std::runtime_error(path + ": CQI out of range");
    t[cqi] = to_double(row[1], path);
  }
  for (int k = 1; k <= max_cqi; ++k)
    if (std::isnan(t[k])) throw std::runtime_error(path + ": missing CQI entry");
  for (int k = max_cqi + 1; k < kNumMcs; ++k) t[k] = std::numeric_limits<double>::infinity();
  return t;
}

}  // namespace detail

/// Loads bler_curves.csv and tbs_table.csv from `dir` (empty: bundled data).
/// cqi_thresholds.csv is used when present, otherwise thresholds are derived.
/// bler_curves_ul.csv and cqi_thresholds_ul.csv follow the same rules; when
/// the UL curves are absent the DL curves stand in for MCS 0..kMaxUlMcs.
inline PhyAssets PhyAssets::load(const std::string& dir_in) {
  namespace fs = std::filesystem;
  const fs::path dir = dir_in.empty() ? fs::path(default_dir()) : fs::path(dir_in);
  PhyAssets a;

  a.bler_curves = detail::load_curves((dir / "bler_curves.csv").string(), kMaxCqi);
  const auto ul_path = dir / "bler_curves_ul.csv";
  const bool has_ul = fs::exists(ul_path);
  if (has_ul) {
    a.ul_bler_curves = detail::load_curves(ul_path.string(), kMaxUlMcs);
  } else {
    for (int m = 0; m <= kMaxUlMcs; ++m) a.ul_bler_curves[m] = a.bler_curves[m];
  }

  const auto tbs_path = (dir / "tbs_table.csv").string();
  for (const auto& row : detail::read_csv(tbs_path, "mcs,n_sf,bits")) {
    if (row.size() != 3) throw std::runtime_error(tbs_path + ": expected 3 columns");
    const int mcs = static_cast<int>(detail::to_double(row[0], tbs_path));
    const int nsf = static_cast<int>(detail::to_double(row[1], tbs_path));
    if (mcs < 0 || mcs >= kNumMcs || nsf < 1 || nsf > kMaxNsf) throw std::runtime_error(tbs_path + ": index out of range");
    a.tbs_bits[mcs][nsf - 1] = static_cast<int>(detail::to_double(row[2], tbs_path));
  }

  a.derive_cqi_thresholds();
  const auto cqi_path = dir / "cqi_thresholds.csv";
  if (fs::exists(cqi_path)) a.cqi_threshold_db = detail::load_thresholds(cqi_path.string(), kMaxCqi);
  const auto ul_cqi_path = dir / "cqi_thresholds_ul.csv";
  if (has_ul && fs::exists(ul_cqi_path)) {
    a.ul_cqi_threshold_db = detail::load_thresholds(ul_cqi_path.string(), kMaxUlMcs);
  } else if (!has_ul) {
    for (int k = 0; k <= kMaxUlMcs; ++k) a.ul_cqi_threshold_db[k] = a.cqi_threshold_db[k];
  }
  a.validate();
  return a;
}

/// BLER at `gamma_eff_db` for `mcs`, with repetitions folded in as a
/// 10 log10(n_rep) dB SNR gain. Clamped to the curve's end points.
inline double bler_lookup(const PhyAssets& assets, int mcs, int n_rep, double gamma_eff_db,
                          Direction d = Direction::Downlink) {
  if (mcs < 0 || mcs > assets.max_mcs(d))
    throw std::out_of_range("bler_lookup: unknown " + std::string(to_string(d)) + " MCS " + std::to_string(mcs));
  if (n_rep < 1) throw std::invalid_argument("bler_lookup: n_rep must be >= 1");
  const double x = gamma_eff_db + 10.0 * std::log10(static_cast<double>(n_rep));
  const auto& c = assets.curves(d)[mcs];
  if (!(x > c.front().snr_db)) return x < c.front().snr_db ? 1.0 : c.front().bler;
  if (x >= c.back().snr_db) return c.back().bler;
  auto it = std::upper_bound(c.begin(), c.end(), x, [](double v, const BlerPoint& p) { return v < p.snr_db; });
  return detail::interp_log_bler(*(it - 1), *it, x);
}

enum class DecodeOutcome { Success, Failure };

/// Success iff a uniform draw in (0, 1) exceeds `bler`.
inline DecodeOutcome decode_coin_toss(double bler, Engine& rng) {
  const double u = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
  return u > bler ? DecodeOutcome::Success : DecodeOutcome::Failure;
}

/// Largest CQI whose threshold is <= gamma_eff_db; 0 below all thresholds.
inline int sinr_to_cqi(const PhyAssets& assets, double gamma_eff_db, Direction d = Direction::Downlink) {
  const auto& t = assets.thresholds(d);
  int cqi = 0;
  for (int k = 1; k <= assets.max_mcs(d); ++k)
    if (t[k] <= gamma_eff_db) cqi = k;
  return cqi;
}

inline int tbs_lookup(const PhyAssets& assets, int mcs, int n_sf) {
  if (mcs < 0 || mcs >= kNumMcs || n_sf < 1 || n_sf > kMaxNsf)
    throw std::out_of_range("tbs_lookup: (mcs " + std::to_string(mcs) + ", n_sf " + std::to_string(n_sf) +
                            ") out of range");
  return assets.tbs_bits[mcs][n_sf - 1];
}

}  // namespace nbiot
