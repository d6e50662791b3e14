#pragma once

// Post-processing of run output: coupling-loss CDF, normalized user
// throughput, the link-budget (MCL) calculator and the result CSV writers.

#include <algorithm>
#include <array>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nbiot/config.hpp"
#include "nbiot/engine.hpp"
#include "nbiot/mac.hpp"

namespace nbiot {

/// Large-scale coupling loss: the deterministic part (path loss, antenna
/// gains, cable and penetration, floor) plus the shadowing draw.
inline double coupling_loss_db(double alpha_db, double shadow_db) { return alpha_db + shadow_db; }

struct CdfSeries {
  std::vector<double> values;     // ascending, distinct
  std::vector<double> fractions;  // P(X <= value)
};

/// Empirical CDF with ties collapsed onto one point.
inline CdfSeries build_cdf(std::vector<double> samples) {
  if (samples.empty()) throw std::invalid_argument("build_cdf: no samples");
  std::sort(samples.begin(), samples.end());
  CdfSeries cdf;
  const double n = static_cast<double>(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (i + 1 < samples.size() && samples[i + 1] == samples[i]) continue;
    cdf.values.push_back(samples[i]);
    cdf.fractions.push_back(static_cast<double>(i + 1) / n);
  }
  return cdf;
}

/// Fraction of samples <= x.
inline double cdf_at(const CdfSeries& cdf, double x) {
  auto it = std::upper_bound(cdf.values.begin(), cdf.values.end(), x);
  if (it == cdf.values.begin()) return 0.0;
  return cdf.fractions[static_cast<std::size_t>(it - cdf.values.begin()) - 1];
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

struct ThroughputStats {
  std::vector<int> terminal_ids;                 // terminals with awake time
  std::array<std::vector<double>, 2> per_terminal;  // [direction], bps/Hz, aligned with terminal_ids
  std::array<double, 2> median{};
  std::array<double, 2> mean{};
};

/// Per-terminal delivered bits over (awake time x bandwidth). Terminals that
/// were never schedulable are left out.
inline ThroughputStats normalized_user_throughput(const SimResult& result, double bandwidth_hz) {
  if (result.num_ttis <= 0) throw std::invalid_argument("normalized_user_throughput: zero observation time");
  if (!(bandwidth_hz > 0.0)) throw std::invalid_argument("normalized_user_throughput: bandwidth must be positive");
  ThroughputStats s;
  for (int u = 0; u < result.num_terminals; ++u) {
    const auto awake = result.awake_ttis[u];
    if (awake <= 0) continue;
    const double seconds = static_cast<double>(awake) / kTtisPerSecond;
    s.terminal_ids.push_back(u);
    for (int d = 0; d < 2; ++d)
      s.per_terminal[d].push_back(static_cast<double>(result.delivered_bits[d][u]) / (seconds * bandwidth_hz));
  }
  for (int d = 0; d < 2; ++d) {
    s.median[d] = median(s.per_terminal[d]);
    s.mean[d] = mean(s.per_terminal[d]);
  }
  return s;
}

/// Concatenates replicas' per-terminal data and sums their counters.
inline SimResult merge_results(const std::vector<SimResult>& runs) {
  if (runs.empty()) throw std::invalid_argument("merge_results: no runs");
  if (runs.size() == 1) return runs.front();
  SimResult m;
  for (const auto& r : runs) {
    m.num_terminals += r.num_terminals;
    m.num_ttis += r.num_ttis;
    m.coupling_loss_db.insert(m.coupling_loss_db.end(), r.coupling_loss_db.begin(), r.coupling_loss_db.end());
    m.serving_sector.insert(m.serving_sector.end(), r.serving_sector.begin(), r.serving_sector.end());
    m.awake_ttis.insert(m.awake_ttis.end(), r.awake_ttis.begin(), r.awake_ttis.end());
    for (int d = 0; d < 2; ++d) {
      m.delivered_bits[d].insert(m.delivered_bits[d].end(), r.delivered_bits[d].begin(), r.delivered_bits[d].end());
      auto& t = m.totals[d];
      const auto& o = r.totals[d];
      t.offered_bits += o.offered_bits;
      t.delivered_bits += o.delivered_bits;
      t.dropped_bits += o.dropped_bits;
      t.inflight_bits += o.inflight_bits;
      t.grants += o.grants;
      t.retransmissions += o.retransmissions;
      t.decodes += o.decodes;
      t.decode_failures += o.decode_failures;
    }
    m.active_terminal_ttis += r.active_terminal_ttis;
    m.max_active = std::max(m.max_active, r.max_active);
    m.stepped_ttis += r.stepped_ttis;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Link budget

struct LinkBudget {
  Direction direction = Direction::Downlink;
  double tx_power_dbm = 0.0;                // (1)
  double thermal_noise_dbm_per_hz = 0.0;    // (2)
  double noise_figure_db = 0.0;             // (3)
  double interference_margin_db = 0.0;      // (4)
  double bandwidth_hz = 0.0;                // (5)
  double effective_noise_dbm = 0.0;         // (6) = (2) + (3) + (4) + 10 log10 (5)
  double target_snr_db = 0.0;               // (7)
  double sensitivity_dbm = 0.0;             // (8) = (6) + (7)
  double process_gain_db = 0.0;             // (9)
  double mcl_db = 0.0;                      // (10) = (1) - (8) + (9)

  std::vector<std::pair<std::string, double>> rows() const {
    return {{"tx_power_dbm", tx_power_dbm},
            {"thermal_noise_density_dbm_hz", thermal_noise_dbm_per_hz},
            {"noise_figure_db", noise_figure_db},
            {"interference_margin_db", interference_margin_db},
            {"occupied_bandwidth_hz", bandwidth_hz},
            {"effective_noise_power_dbm", effective_noise_dbm},
            {"required_snr_db", target_snr_db},
            {"receiver_sensitivity_dbm", sensitivity_dbm},
            {"process_gain_db", process_gain_db},
            {"mcl_db", mcl_db}};
  }
};

inline LinkBudget link_budget(Direction d, const SimConfig& cfg) {
  LinkBudget b;
  b.direction = d;
  const bool dl = d == Direction::Downlink;
  b.tx_power_dbm = dl ? cfg.enb_tx_power : cfg.terminal_tx_power;
  b.thermal_noise_dbm_per_hz = cfg.thermal_noise_density;
  b.noise_figure_db = dl ? cfg.terminal_noise_figure : cfg.enb_noise_figure;
  b.interference_margin_db = cfg.interference_margin;
  b.bandwidth_hz = dl ? cfg.bandwidth_dl : cfg.subcarrier_ul;
  b.effective_noise_dbm =
      b.thermal_noise_dbm_per_hz + b.noise_figure_db + b.interference_margin_db + 10.0 * std::log10(b.bandwidth_hz);
  b.target_snr_db = dl ? cfg.target_snr_dl : cfg.target_snr_ul;
  b.sensitivity_dbm = b.effective_noise_dbm + b.target_snr_db;
  b.process_gain_db = cfg.process_gain;
  b.mcl_db = b.tx_power_dbm - b.sensitivity_dbm + b.process_gain_db;
  return b;
}

// ---------------------------------------------------------------------------
// CSV output

inline void write_coupling_cdf_csv(std::ostream& os, const CdfSeries& cdf) {
  os << "value_db,fraction\n";
  for (std::size_t i = 0; i < cdf.values.size(); ++i)
    os << detail::format_double(cdf.values[i]) << ',' << detail::format_double(cdf.fractions[i]) << '\n';
}

inline void write_throughput_csv(std::ostream& os, const ThroughputStats& s) {
  os << "terminal_id,direction,bps_per_hz\n";
  for (int d = 0; d < 2; ++d)
    for (std::size_t i = 0; i < s.terminal_ids.size(); ++i)
      os << s.terminal_ids[i] << ',' << (d == kDl ? "DL" : "UL") << ',' << detail::format_double(s.per_terminal[d][i])
         << '\n';
}

inline void write_link_budget_csv(std::ostream& os, const LinkBudget& dl, const LinkBudget& ul) {
  os << "row,item,dl,ul\n";
  const auto a = dl.rows();
  const auto b = ul.rows();
  for (std::size_t i = 0; i < a.size(); ++i)
    os << i + 1 << ',' << a[i].first << ',' << detail::format_double(a[i].second) << ','
       << detail::format_double(b[i].second) << '\n';
}

using SummaryRow = std::pair<std::string, std::string>;

inline std::vector<SummaryRow> summarize(const SimConfig& cfg, const SimResult& r, const ThroughputStats& tp,
                                         const CdfSeries& coupling) {
  const auto num = [](double v) { return detail::format_double(v); };
  const auto count = [](std::int64_t v) { return std::to_string(v); };
  std::vector<SummaryRow> rows{
      {"terminals", count(r.num_terminals)},
      {"ttis", count(r.num_ttis)},
      {"scheduler", detail::to_text(cfg.scheduler)},
      {"edrx", cfg.edrx_enabled ? "on" : "off"},
      {"traffic_model", detail::to_text(cfg.traffic_model)},
      {"rng_seed", std::to_string(cfg.rng_seed)},
      {"median_dl_bps_per_hz", num(tp.median[kDl])},
      {"median_ul_bps_per_hz", num(tp.median[kUl])},
      {"mean_dl_bps_per_hz", num(tp.mean[kDl])},
      {"mean_ul_bps_per_hz", num(tp.mean[kUl])},
      {"mean_active_terminals", num(r.mean_active_terminals())},
      {"max_active_terminals", count(r.max_active)},
      {"coupling_loss_max_db", num(coupling.values.back())},
      {"coupling_loss_fraction_below_140db", num(cdf_at(coupling, 140.0))},
  };
  for (int d = 0; d < 2; ++d) {
    const std::string p = d == kDl ? "dl_" : "ul_";
    const auto& t = r.totals[d];
    rows.push_back({p + "offered_bits", count(t.offered_bits)});
    rows.push_back({p + "delivered_bits", count(t.delivered_bits)});
    rows.push_back({p + "dropped_bits", count(t.dropped_bits)});
    rows.push_back({p + "inflight_bits", count(t.inflight_bits)});
    rows.push_back({p + "grants", count(t.grants)});
    rows.push_back({p + "retransmissions", count(t.retransmissions)});
    rows.push_back({p + "bler", num(t.decodes > 0 ? static_cast<double>(t.decode_failures) / t.decodes : 0.0)});
  }
  return rows;
}

inline void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows) {
  os << "metric,value\n";
  for (const auto& [k, v] : rows) os << k << ',' << v << '\n';
}

}  // namespace nbiot
