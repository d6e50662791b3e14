#pragma once

// Mobile autonomous reporting (MAR) periodic traffic, truncated-Pareto payload
// sizes, and the eDRX paging-time-window state machine.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "nbiot/config.hpp"
#include "nbiot/rng.hpp"

namespace nbiot {

inline constexpr std::int64_t kTtisPerSecond = 1000;
inline constexpr std::int64_t kSuperframeTtis = 10240;  // 1024 frames x 10 subframes
inline constexpr std::int64_t kFrameTtis = 10;

inline std::int64_t seconds_to_ttis(double s) { return static_cast<std::int64_t>(std::llround(s * kTtisPerSecond)); }

// ---------------------------------------------------------------------------
// MAR traffic

struct ReportClass {
  double period_s;
  double share;
};

inline constexpr std::array<ReportClass, 4> kMarClasses{{{86400.0, 0.40}, {7200.0, 0.40}, {3600.0, 0.15}, {1800.0, 0.05}}};

/// A terminal's periodic report schedule.
struct ReportSchedule {
  int report_class = 0;
  std::int64_t period_tti = 0;
  std::int64_t phase_tti = 0;
};

struct MarProfile {
  std::vector<ReportSchedule> uplink;
  std::vector<ReportSchedule> downlink;

  /// Class drawn by the 40/40/15/5 shares; phase uniform in [0, period).
  static MarProfile assign(int num_terminals, Engine& rng) {
    MarProfile p;
    const auto draw = [&rng]() {
      double u = uniform01(rng);
      int cls = 0;
      while (cls + 1 < static_cast<int>(kMarClasses.size()) && u >= kMarClasses[cls].share) {
        u -= kMarClasses[cls].share;
        ++cls;
      }
      ReportSchedule s;
      s.report_class = cls;
      s.period_tti = seconds_to_ttis(kMarClasses[cls].period_s);
      s.phase_tti = std::uniform_int_distribution<std::int64_t>(0, s.period_tti - 1)(rng);
      return s;
    };
    for (int i = 0; i < num_terminals; ++i) p.uplink.push_back(draw());
    for (int i = 0; i < num_terminals; ++i) p.downlink.push_back(draw());
    return p;
  }
};

/// Smallest phase + m * period strictly after `now` (m >= 0).
inline std::int64_t next_report_time(const ReportSchedule& s, std::int64_t now) {
  if (s.phase_tti > now) return s.phase_tti;
  const std::int64_t m = (now - s.phase_tti) / s.period_tti + 1;
  return s.phase_tti + m * s.period_tti;
}

/// Population-average report rate in packets per second per terminal.
inline double mar_packet_rate() {
  double r = 0.0;
  for (const auto& c : kMarClasses) r += c.share / c.period_s;
  return r;
}

struct TrafficRates {
  double packets_per_s = 0.0;       // per terminal
  double bits_per_s = 0.0;          // per terminal
  double sector_bits_per_s = 0.0;   // for the given terminal count
};

inline TrafficRates traffic_rates(double mean_packet_bytes, double terminals_per_sector) {
  TrafficRates r;
  r.packets_per_s = mar_packet_rate();
  r.bits_per_s = r.packets_per_s * mean_packet_bytes * 8.0;
  r.sector_bits_per_s = terminals_per_sector * r.bits_per_s;
  return r;
}

// ---------------------------------------------------------------------------
// Packet sizes

/// Pareto(min, shape) truncated to [min, cap].
struct PacketSizeModel {
  double min_bytes = 24.0;
  double shape = 2.5;
  double cap_bytes = 200.0;

  static PacketSizeModel from(const SimConfig& cfg) { return {cfg.pareto_min, cfg.pareto_shape, cfg.pareto_cap}; }

  /// Inverse CDF at u in [0, 1).
  double quantile(double u) const {
    const double tail = 1.0 - std::pow(min_bytes / cap_bytes, shape);
    return min_bytes / std::pow(1.0 - u * tail, 1.0 / shape);
  }

  double cdf(double x) const {
    if (x <= min_bytes) return 0.0;
    if (x >= cap_bytes) return 1.0;
    return (1.0 - std::pow(min_bytes / x, shape)) / (1.0 - std::pow(min_bytes / cap_bytes, shape));
  }
};

inline double draw_packet_size(const PacketSizeModel& m, Engine& rng) {
  return m.quantile(std::uniform_real_distribution<double>(0.0, 1.0)(rng));
}

// ---------------------------------------------------------------------------
// eDRX

enum class EdrxPhase { IdleSleep, PtwMonitor, Connected };

inline const char* to_string(EdrxPhase p) {
  switch (p) {
    case EdrxPhase::IdleSleep: return "idle";
    case EdrxPhase::PtwMonitor: return "ptw";
    case EdrxPhase::Connected: return "connected";
  }
  return "?";
}

/// eDRX cycle length: 2^k superframes of 10.24 s.
inline std::int64_t edrx_period_ttis(int k) {
  if (k < 1 || k > 10) throw std::out_of_range("edrx_k must be in [1, 10]");
  return kSuperframeTtis << k;
}

inline double edrx_period_seconds(int k) { return static_cast<double>(edrx_period_ttis(k)) / kTtisPerSecond; }

/// Start of the terminal's eDRX cycle within [0, period): paging hyperframe
/// id mod 2^k, then an even spread inside that hyperframe by id div 2^k.
inline std::int64_t paging_offset_tti(int terminal_id, int num_terminals, int k) {
  const std::int64_t cycles = std::int64_t{1} << k;
  const std::int64_t hyperframe = terminal_id % cycles;
  const std::int64_t slot = terminal_id / cycles;
  const std::int64_t per_hyperframe = std::max<std::int64_t>(1, (num_terminals + cycles - 1) / cycles);
  return hyperframe * kSuperframeTtis + slot * kSuperframeTtis / per_hyperframe;
}

struct EdrxState {
  EdrxPhase phase = EdrxPhase::IdleSleep;
  std::int64_t period = 0;      // TTIs
  std::int64_t ptw_length = 0;  // TTIs
  std::int64_t connected_timer = 0;
  std::int64_t ptw_start = 0;  // current or next window
  std::int64_t ptw_end = 0;    // exclusive
  std::int64_t timer_expiry = 0;

  /// State at TTI 0 for a cycle starting at `offset` (mod period).
  static EdrxState init(std::int64_t offset, std::int64_t period, std::int64_t ptw_length,
                        std::int64_t connected_timer) {
    EdrxState s;
    s.period = period;
    s.ptw_length = ptw_length;
    s.connected_timer = connected_timer;
    offset %= period;
    s.ptw_start = offset - period + ptw_length > 0 ? offset - period : offset;
    s.ptw_end = s.ptw_start + ptw_length;
    s.phase = s.ptw_start <= 0 ? EdrxPhase::PtwMonitor : EdrxPhase::IdleSleep;
    return s;
  }

  bool awake() const { return phase != EdrxPhase::IdleSleep; }

  bool is_paging_occasion(std::int64_t t) const {
    return phase == EdrxPhase::PtwMonitor && t >= ptw_start && (t - ptw_start) % kFrameTtis == 0;
  }

  /// Extends the connected-mode inactivity timer after activity at `t`.
  void note_activity(std::int64_t t) {
    if (phase == EdrxPhase::Connected) timer_expiry = std::max(timer_expiry, t + connected_timer);
  }

  /// Next TTI > t at which edrx_step can change the phase.
  std::int64_t next_event(std::int64_t t, bool paging_pending) const {
    switch (phase) {
      case EdrxPhase::IdleSleep: return std::max(ptw_start, t + 1);
      case EdrxPhase::Connected: return std::max(timer_expiry, t + 1);
      case EdrxPhase::PtwMonitor: {
        std::int64_t next = ptw_end;
        if (paging_pending) {
          const std::int64_t since = t + 1 - ptw_start;
          const std::int64_t occasion = ptw_start + ((since + kFrameTtis - 1) / kFrameTtis) * kFrameTtis;
          next = std::min(next, occasion);
        }
        return std::max(next, t + 1);
      }
    }
    return t + 1;
  }

 private:
  void advance_cycle_past(std::int64_t t) {
    while (ptw_start <= t) ptw_start += period;
    ptw_end = ptw_start + ptw_length;
  }

  friend EdrxState edrx_step(EdrxState s, std::int64_t t, bool paging_pending);
};

/// Phase transitions at TTI t. Sleep -> PTW at ptw_start; PTW -> connected on
/// a pending page at a paging occasion; PTW -> sleep at ptw_end; connected ->
/// sleep when the inactivity timer expires. Sleep never goes straight to connected.
inline EdrxState edrx_step(EdrxState s, std::int64_t t, bool paging_pending) {
  if (s.phase == EdrxPhase::IdleSleep && t >= s.ptw_start) s.phase = EdrxPhase::PtwMonitor;
  if (s.phase == EdrxPhase::PtwMonitor) {
    if (paging_pending && t < s.ptw_end && s.is_paging_occasion(t)) {
      s.phase = EdrxPhase::Connected;
      s.timer_expiry = t + s.connected_timer;
    } else if (t >= s.ptw_end) {
      s.phase = EdrxPhase::IdleSleep;
      s.advance_cycle_past(t - s.ptw_length);
      if (s.ptw_start <= t) s.advance_cycle_past(t);
    }
  } else if (s.phase == EdrxPhase::Connected && t >= s.timer_expiry) {
    s.phase = EdrxPhase::IdleSleep;
    s.advance_cycle_past(t);
  }
  return s;
}

/// Terminals that may be scheduled at t: PTW or connected; all when eDRX is off.
inline std::vector<int> eligible_terminals(const std::vector<EdrxState>& states, bool edrx_enabled) {
  std::vector<int> ids;
  for (std::size_t i = 0; i < states.size(); ++i)
    if (!edrx_enabled || states[i].awake()) ids.push_back(static_cast<int>(i));
  return ids;
}

}  // namespace nbiot
