#pragma once

// The per-TTI main loop. Each step runs, in order: update channels (feedback
// delivery, traffic arrivals, eDRX transitions), schedule, link quality
// (per-subcarrier SINR and EESM), link performance (BLER and coin toss), and
// feedback (HARQ and CQI reports enqueued for t + delay).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <iostream>
#include <memory>
#include <queue>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "nbiot/channel.hpp"
#include "nbiot/config.hpp"
#include "nbiot/mac.hpp"
#include "nbiot/phy.hpp"
#include "nbiot/rng.hpp"
#include "nbiot/topology.hpp"
#include "nbiot/traffic.hpp"

namespace nbiot {

inline constexpr int kDl = 0;
inline constexpr int kUl = 1;
inline int dir_index(Direction d) { return d == Direction::Downlink ? kDl : kUl; }

struct SimClock {
  std::int64_t tti = 0;

  double seconds() const { return static_cast<double>(tti) / kTtisPerSecond; }
  void advance_to(std::int64_t t) {
    if (t < tti) throw std::logic_error("SimClock: time went backwards");
    tti = t;
  }
};

/// Feedback ordered by delivery time. Events come out exactly at deliver_at.
class FeedbackQueue {
 public:
  void push(const FeedbackEvent& e) {
    auto it = std::upper_bound(events_.begin(), events_.end(), e.deliver_at,
                               [](std::int64_t t, const FeedbackEvent& x) { return t < x.deliver_at; });
    events_.insert(it, e);
  }

  /// Removes and returns the events due at `t`. Throws if an earlier one was missed.
  std::vector<FeedbackEvent> pop_due(std::int64_t t) {
    std::vector<FeedbackEvent> due;
    if (!events_.empty() && events_.front().deliver_at < t)
      throw std::logic_error("FeedbackQueue: event for TTI " + std::to_string(events_.front().deliver_at) +
                             " missed at TTI " + std::to_string(t));
    while (!events_.empty() && events_.front().deliver_at == t) {
      due.push_back(events_.front());
      events_.pop_front();
    }
    return due;
  }

  bool empty() const { return events_.empty(); }
  std::size_t size() const { return events_.size(); }
  std::int64_t next_time() const { return events_.empty() ? -1 : events_.front().deliver_at; }

 private:
  std::deque<FeedbackEvent> events_;
};

struct DecodeRecord {
  int terminal_id = -1;
  Direction direction = Direction::Downlink;
  int sector = -1;
  double sinr_eff_db = 0.0;
  double bler = 1.0;
  bool success = false;
  int cqi = 0;
};

struct TtiRecord {
  std::int64_t tti = 0;
  std::vector<Grant> grants;
  std::vector<DecodeRecord> decodes;
  std::vector<FeedbackEvent> feedback;  // delivered at this TTI
  int active_terminals = 0;

  bool empty() const { return grants.empty() && decodes.empty() && feedback.empty(); }
};

struct EventRecord {
  std::int64_t tti = 0;
  int terminal_id = -1;
  std::string event;

  bool operator==(const EventRecord&) const = default;
};

struct DirectionTotals {
  std::int64_t offered_bits = 0;  // accepted into HARQ
  std::int64_t delivered_bits = 0;
  std::int64_t dropped_bits = 0;
  std::int64_t inflight_bits = 0;  // still in HARQ at the end of the run
  std::int64_t grants = 0;
  std::int64_t retransmissions = 0;
  std::int64_t decodes = 0;
  std::int64_t decode_failures = 0;

  bool operator==(const DirectionTotals&) const = default;
};

struct SimResult {
  int num_terminals = 0;
  std::int64_t num_ttis = 0;
  std::vector<double> coupling_loss_db;  // to the serving sector
  std::vector<int> serving_sector;
  std::vector<std::int64_t> awake_ttis;
  std::array<std::vector<std::int64_t>, 2> delivered_bits;  // [direction][terminal]
  std::array<DirectionTotals, 2> totals;
  std::int64_t active_terminal_ttis = 0;  // sum over TTIs of schedulable terminals
  int max_active = 0;

  std::vector<Grant> grant_trace;
  std::vector<EventRecord> event_trace;
  std::vector<TtiRecord> tti_records;

  // Diagnostics; not part of the result's value.
  std::int64_t stepped_ttis = 0;

  double mean_active_terminals() const {
    return num_ttis > 0 ? static_cast<double>(active_terminal_ttis) / static_cast<double>(num_ttis) : 0.0;
  }

  bool operator==(const SimResult& o) const {
    return num_terminals == o.num_terminals && num_ttis == o.num_ttis && coupling_loss_db == o.coupling_loss_db &&
           serving_sector == o.serving_sector && awake_ttis == o.awake_ttis && delivered_bits == o.delivered_bits &&
           totals == o.totals && active_terminal_ttis == o.active_terminal_ttis && max_active == o.max_active &&
           grant_trace == o.grant_trace && event_trace == o.event_trace;
  }
};

struct SimOptions {
  bool trace_grants = false;
  bool trace_events = false;
  bool keep_tti_records = false;
  bool verbose = false;
};

class Simulator {
 public:
  Simulator(const SimConfig& cfg, PhyAssets assets, SimOptions opts = {});
  explicit Simulator(const SimConfig& cfg, SimOptions opts = {})
      : Simulator(cfg, PhyAssets::load(cfg.assets_dir), opts) {}

  const SimConfig& config() const { return cfg_; }
  const PhyAssets& assets() const { return assets_; }
  const Layout& layout() const { return layout_; }
  const PixelMap& pixel_map() const { return map_; }
  const std::vector<Terminal>& terminals() const { return terminals_; }
  const std::vector<int>& roi_sectors() const { return roi_sectors_; }
  const std::vector<ShadowingField>& shadowing() const { return shadowing_; }
  const SimClock& clock() const { return clock_; }

  /// Large-scale coupling loss (dB) between terminal `u` and global sector `g`.
  double coupling_loss_db(int u, int g) const { return loss_db_[index(u, g)]; }
  double large_scale_gain(int u, int g) const { return gain_[index(u, g)]; }

  /// Serving-link small-scale power gain at t (advances the lazy process).
  double serving_fading_gain(int u, Direction d, std::int64_t t) { return fading_.gain(link(u, d), t); }

  const HarqProcess& harq(int u, Direction d) const { return harq_[dir_index(d)][u]; }
  int cqi(int u, Direction d) const { return cqi_[dir_index(d)][u]; }
  const EdrxState& edrx_state(int u) const { return edrx_[u]; }
  int active_terminals() const { return eligible_total_; }

  /// Advances to TTI t (>= the previous step + 1) and runs its five sub-steps.
  /// Skipped TTIs must be idle; the step throws otherwise.
  TtiRecord step(std::int64_t t);

  /// Runs all remaining TTIs and returns the aggregated result.
  SimResult run();

  /// Aggregates at the end of the run; call once.
  SimResult finish();

 private:
  std::size_t index(int u, int g) const { return static_cast<std::size_t>(u) * num_sectors_ + g; }
  static std::size_t link(int u, Direction d) { return static_cast<std::size_t>(u) * 2 + dir_index(d); }

  struct Interval {
    std::int64_t start;
    std::int64_t end;
    int terminal;
  };

  void build_ul_interferer_pools(Engine& rng);
  void activate(int u, std::int64_t t);
  void deactivate(int u, std::int64_t t);
  void measure(int u, std::int64_t t);
  void log_event(std::int64_t t, int u, const char* what);
  bool has_work(int u, int d) const;
  bool paging_pending(int u) const;
  void refresh_edrx(int u, std::int64_t t);
  void process_feedback(std::int64_t t, TtiRecord& rec);
  void process_traffic(std::int64_t t);
  void process_edrx(std::int64_t t);
  void schedule(int r, int d, std::int64_t t, TtiRecord& rec);
  void complete_transmissions(std::int64_t t, TtiRecord& rec);
  double dl_sinr(int u, int serving, std::int64_t tau, std::int64_t load_tau);
  double ul_sinr(int u, int serving, int tone, std::int64_t tau, std::int64_t load_tau);
  int occupant(int r, int d, int resource, std::int64_t tau) const;
  bool quiescent() const;
  std::int64_t next_event_time() const;
  int transmission_ttis(int d, int n_sf, int n_rep) const;
  void account_gap(std::int64_t upto);

  SimConfig cfg_;
  PhyAssets assets_;
  SimOptions opts_;
  SimClock clock_;
  RngStreams streams_;
  Engine coin_rng_;
  Engine traffic_rng_;

  Layout layout_;
  PixelMap map_;
  std::vector<Terminal> terminals_;
  std::vector<ShadowingField> shadowing_;
  int num_terminals_ = 0;
  int num_sectors_ = 0;
  std::vector<int> roi_sectors_;  // global indices
  std::vector<int> roi_index_;    // global -> roi-local or -1
  std::vector<int> mirror_;       // global -> roi-local sector whose load it copies
  std::vector<double> loss_db_;
  std::vector<double> gain_;

  // UL interferers outside the ROI: per outer sector, pool members' gains to each ROI sector.
  std::vector<int> outer_sectors_;
  std::vector<std::vector<double>> pool_gain_;
  std::uint64_t pool_key_ = 0;

  double dl_power_ = 0.0;  // mW per subcarrier
  double ul_power_ = 0.0;  // mW per tone
  double dl_noise_ = 0.0;
  double ul_noise_ = 0.0;
  int dl_subcarriers_ = 12;
  int ul_tones_ = 12;
  int ru_ttis_ = 8;
  std::int64_t max_span_ = 1;

  FadingProcess fading_;
  std::array<std::vector<HarqProcess>, 2> harq_;
  std::array<std::vector<int>, 2> cqi_;
  std::array<std::vector<std::int64_t>, 2> buffer_bits_;
  std::array<PfState, 2> pf_;
  std::vector<std::array<Scheduler, 2>> schedulers_;
  std::vector<ResourceGrid> grids_;
  std::vector<std::array<std::vector<std::deque<Interval>>, 2>> history_;  // [roi][dir][resource]
  std::vector<Grant> inflight_;
  FeedbackQueue feedback_;

  std::vector<std::vector<int>> eligible_;  // per ROI sector, sorted ids
  std::vector<char> awake_;
  std::vector<std::int64_t> awake_since_;
  int eligible_total_ = 0;
  bool started_ = false;
  std::int64_t next_tti_ = 0;

  std::vector<EdrxState> edrx_;
  std::vector<std::uint32_t> edrx_version_;
  using EdrxEvent = std::tuple<std::int64_t, int, std::uint32_t>;
  std::priority_queue<EdrxEvent, std::vector<EdrxEvent>, std::greater<>> edrx_queue_;

  MarProfile mar_;
  PacketSizeModel packet_sizes_;
  using TrafficEvent = std::tuple<std::int64_t, int, int>;  // time, terminal, direction
  std::priority_queue<TrafficEvent, std::vector<TrafficEvent>, std::greater<>> traffic_queue_;

  SimResult result_;
};

inline Simulator::Simulator(const SimConfig& cfg, PhyAssets assets, SimOptions opts)
    : cfg_(cfg), assets_(std::move(assets)), opts_(opts), streams_(cfg.rng_seed) {
  validate(cfg_);
  assets_.validate();
  coin_rng_ = streams_.stream(stream::kCoinToss);
  traffic_rng_ = streams_.stream(stream::kTraffic);

  layout_ = build_layout(cfg_);
  map_ = build_pixel_map(cfg_, layout_);
  {
    Engine placement = streams_.stream(stream::kPlacement);
    terminals_ = drop_terminals(cfg_, map_, placement);
  }
  num_terminals_ = static_cast<int>(terminals_.size());
  num_sectors_ = static_cast<int>(layout_.sectors.size());

  {
    Engine shadow_rng = streams_.stream(stream::kShadowing);
    auto grid = std::make_shared<const ShadowingGrid>(ShadowingGrid::for_roi(cfg_, layout_));
    shadowing_ = generate_shadowing(grid, cfg_.shadow_std, static_cast<int>(layout_.sites.size()), shadow_rng);
  }

  const auto pl = make_path_loss_params(cfg_);
  const auto ant = make_antenna_pattern(cfg_);
  loss_db_.resize(static_cast<std::size_t>(num_terminals_) * num_sectors_);
  gain_.resize(loss_db_.size());
  for (const auto& term : terminals_) {
    for (const auto& site : layout_.sites) {
      const double d = std::max(distance(site.position, term.position), cfg_.min_link_distance);
      const double shadow = shadowing_[site.id].at(term.position);
      for (int s = 0; s < 3; ++s) {
        const Sector& sec = layout_.sectors[site.id * 3 + s];
        const double theta = pattern_angle_deg(site, sec, term.position, cfg_);
        const double loss = coupling_alpha_db(d, theta, pl, ant) + shadow;
        loss_db_[index(term.id, sec.global_index())] = loss;
        gain_[index(term.id, sec.global_index())] = db_to_linear(-loss);
      }
    }
  }

  roi_sectors_ = candidate_sectors(cfg_, layout_);
  attach_terminals(terminals_, roi_sectors_, [this](const Terminal& t, int g) { return -coupling_loss_db(t.id, g); });
  roi_index_.assign(num_sectors_, -1);
  for (std::size_t r = 0; r < roi_sectors_.size(); ++r) roi_index_[roi_sectors_[r]] = static_cast<int>(r);
  mirror_.assign(num_sectors_, -1);
  for (int g = 0; g < num_sectors_; ++g) {
    mirror_[g] = roi_index_[g] >= 0 ? roi_index_[g] : roi_index_[roi_sectors_.front() / 3 * 3 + g % 3];
    if (roi_index_[g] < 0) outer_sectors_.push_back(g);
  }

  dl_subcarriers_ = static_cast<int>(std::lround(cfg_.bandwidth_dl / 15000.0));
  ul_tones_ = ul_tone_count(cfg_.subcarrier_ul);
  ru_ttis_ = ru_duration_ttis(cfg_.subcarrier_ul);
  dl_power_ = db_to_linear(cfg_.enb_tx_power - 10.0 * std::log10(static_cast<double>(dl_subcarriers_)));
  ul_power_ = db_to_linear(cfg_.terminal_tx_power);
  dl_noise_ = db_to_linear(cfg_.thermal_noise_density + cfg_.terminal_noise_figure + 10.0 * std::log10(15000.0));
  ul_noise_ = db_to_linear(cfg_.thermal_noise_density + cfg_.enb_noise_figure + 10.0 * std::log10(cfg_.subcarrier_ul));
  const int max_rep = *std::max_element(cfg_.cqi_to_nrep.begin(), cfg_.cqi_to_nrep.end());
  max_span_ = std::max(transmission_ttis(kDl, cfg_.n_sf, max_rep), transmission_ttis(kUl, cfg_.n_sf, max_rep));

  {
    Engine interferer_rng = streams_.stream(stream::kInterferers);
    pool_key_ = streams_.key(stream::kInterferers);
    build_ul_interferer_pools(interferer_rng);
  }

  fading_ = FadingProcess(cfg_.fading_model, cfg_.fading_corr, streams_.key(stream::kFading),
                          static_cast<std::size_t>(num_terminals_) * 2);
  for (int d = 0; d < 2; ++d) {
    harq_[d].resize(num_terminals_);
    for (int u = 0; u < num_terminals_; ++u) {
      harq_[d][u].terminal_id = u;
      harq_[d][u].direction = d == kDl ? Direction::Downlink : Direction::Uplink;
    }
    cqi_[d].assign(num_terminals_, 0);
    buffer_bits_[d].assign(num_terminals_, 0);
    pf_[d] = PfState(num_terminals_, cfg_.pf_beta);
  }

  const auto nroi = roi_sectors_.size();
  schedulers_.assign(nroi, {Scheduler(cfg_.scheduler), Scheduler(cfg_.scheduler)});
  grids_.assign(nroi, ResourceGrid(ul_tones_));
  history_.resize(nroi);
  for (auto& h : history_) {
    h[kDl].resize(1);
    h[kUl].resize(ul_tones_);
  }
  eligible_.resize(nroi);
  awake_.assign(num_terminals_, 0);
  awake_since_.assign(num_terminals_, 0);

  if (cfg_.edrx_enabled) {
    const auto period = edrx_period_ttis(cfg_.edrx_k);
    const auto ptw = seconds_to_ttis(cfg_.ptw_length);
    const auto timer = seconds_to_ttis(cfg_.connected_timer);
    edrx_.reserve(num_terminals_);
    for (int u = 0; u < num_terminals_; ++u)
      edrx_.push_back(EdrxState::init(paging_offset_tti(u, num_terminals_, cfg_.edrx_k), period, ptw, timer));
    edrx_version_.assign(num_terminals_, 0);
  }

  packet_sizes_ = PacketSizeModel::from(cfg_);
  if (cfg_.traffic_model == TrafficModel::Mar) {
    mar_ = MarProfile::assign(num_terminals_, traffic_rng_);
    for (int u = 0; u < num_terminals_; ++u) {
      traffic_queue_.emplace(next_report_time(mar_.downlink[u], -1), u, kDl);
      traffic_queue_.emplace(next_report_time(mar_.uplink[u], -1), u, kUl);
    }
  }

  result_.num_terminals = num_terminals_;
  result_.num_ttis = cfg_.num_ttis;
  result_.awake_ttis.assign(num_terminals_, 0);
  for (auto& v : result_.delivered_bits) v.assign(num_terminals_, 0);
  for (const auto& t : terminals_) {
    result_.serving_sector.push_back(t.serving_sector);
    result_.coupling_loss_db.push_back(coupling_loss_db(t.id, t.serving_sector));
  }
}

/// Virtual UL interferers for sectors outside the ROI: `ul_interferer_pool`
/// positions per sector drawn uniformly over the sector's third of its cell,
/// each with independent shadowing toward every ROI site.
inline void Simulator::build_ul_interferer_pools(Engine& rng) {
  if (outer_sectors_.empty() || cfg_.ul_interferer_pool <= 0) return;
  const auto pl = make_path_loss_params(cfg_);
  const auto ant = make_antenna_pattern(cfg_);
  const double radius = layout_.cell_radius();
  std::uniform_real_distribution<double> coord(-radius, radius);
  const auto roi_site_ids = roi_sites(cfg_, layout_);

  for (int g : outer_sectors_) {
    const Sector& sec = layout_.sectors[g];
    const Site& home = layout_.sites[sec.site_id];
    std::vector<double> gains;
    gains.reserve(static_cast<std::size_t>(cfg_.ul_interferer_pool) * roi_sectors_.size());
    for (int m = 0; m < cfg_.ul_interferer_pool; ++m) {
      Vec2 p;
      while (true) {
        p = home.position + Vec2{coord(rng), coord(rng)};
        const Vec2 r = p - home.position;
        if (!in_site_cell(home.position, p, cfg_.inter_site_distance)) continue;
        if (norm(r) < cfg_.min_link_distance) continue;
        if (std::abs(wrap_degrees(rad2deg(std::atan2(r.y, r.x)) - sec.boresight_deg)) > 60.0) continue;
        break;
      }
      std::vector<double> shadow(layout_.sites.size(), 0.0);
      for (int sid : roi_site_ids) shadow[sid] = cfg_.shadow_std * standard_normal(rng);
      for (int gr : roi_sectors_) {
        const Sector& rs = layout_.sectors[gr];
        const Site& site = layout_.sites[rs.site_id];
        const double d = std::max(distance(site.position, p), cfg_.min_link_distance);
        const double loss = coupling_alpha_db(d, pattern_angle_deg(site, rs, p, cfg_), pl, ant) + shadow[site.id];
        gains.push_back(db_to_linear(-loss));
      }
    }
    pool_gain_.push_back(std::move(gains));
  }
}

inline int Simulator::transmission_ttis(int d, int n_sf, int n_rep) const {
  return d == kDl ? n_sf * n_rep : ru_ttis_ * n_sf * n_rep;
}

inline void Simulator::log_event(std::int64_t t, int u, const char* what) {
  if (opts_.trace_events) result_.event_trace.push_back({t, u, what});
}

inline bool Simulator::has_work(int u, int d) const {
  const auto& p = harq_[d][u];
  if (p.state == HarqState::RetxReady) return true;
  if (p.state != HarqState::Idle) return false;
  return cfg_.traffic_model == TrafficModel::FullBuffer || buffer_bits_[d][u] > 0;
}

inline bool Simulator::paging_pending(int u) const {
  if (cfg_.traffic_model == TrafficModel::FullBuffer) return false;
  for (int d = 0; d < 2; ++d)
    if (buffer_bits_[d][u] > 0 || harq_[d][u].state == HarqState::RetxReady) return true;
  return false;
}

inline void Simulator::activate(int u, std::int64_t t) {
  if (awake_[u]) return;
  awake_[u] = 1;
  awake_since_[u] = t;
  auto& list = eligible_[roi_index_[terminals_[u].serving_sector]];
  list.insert(std::lower_bound(list.begin(), list.end(), u), u);
  ++eligible_total_;
  measure(u, t);
}

inline void Simulator::deactivate(int u, std::int64_t t) {
  if (!awake_[u]) return;
  awake_[u] = 0;
  result_.awake_ttis[u] += t - awake_since_[u];
  auto& list = eligible_[roi_index_[terminals_[u].serving_sector]];
  list.erase(std::lower_bound(list.begin(), list.end(), u));
  --eligible_total_;
}

/// CQI from the current TTI's channel, taken when a terminal becomes
/// schedulable. This TTI's grants do not exist yet, so the interference
/// pattern is the previous TTI's.
inline void Simulator::measure(int u, std::int64_t t) {
  const int g = terminals_[u].serving_sector;
  cqi_[kDl][u] = sinr_to_cqi(assets_, linear_to_db(dl_sinr(u, g, t, t - 1)));
  cqi_[kUl][u] = sinr_to_cqi(assets_, linear_to_db(ul_sinr(u, g, 0, t, t - 1)), Direction::Uplink);
}

inline void Simulator::refresh_edrx(int u, std::int64_t t) {
  if (!cfg_.edrx_enabled) return;
  ++edrx_version_[u];
  edrx_queue_.emplace(edrx_[u].next_event(t, paging_pending(u)), u, edrx_version_[u]);
}

inline void Simulator::process_feedback(std::int64_t t, TtiRecord& rec) {
  for (const auto& e : feedback_.pop_due(t)) {
    const int d = dir_index(e.direction);
    if (e.kind == FeedbackKind::CqiReport) {
      cqi_[d][e.terminal_id] = e.cqi;
    } else {
      harq_on_feedback(harq_[d][e.terminal_id], e);
      if (cfg_.edrx_enabled && !awake_[e.terminal_id]) refresh_edrx(e.terminal_id, t);
    }
    rec.feedback.push_back(e);
  }
}

inline void Simulator::process_traffic(std::int64_t t) {
  while (!traffic_queue_.empty() && std::get<0>(traffic_queue_.top()) == t) {
    const auto [time, u, d] = traffic_queue_.top();
    traffic_queue_.pop();
    const double bytes = draw_packet_size(packet_sizes_, traffic_rng_);
    buffer_bits_[d][u] += static_cast<std::int64_t>(std::llround(bytes * 8.0));
    log_event(t, u, d == kDl ? "report_dl" : "report_ul");
    const auto& sched = d == kDl ? mar_.downlink[u] : mar_.uplink[u];
    traffic_queue_.emplace(next_report_time(sched, t), u, d);
    if (cfg_.edrx_enabled && edrx_[u].phase != EdrxPhase::Connected) refresh_edrx(u, t);
  }
}

inline void Simulator::process_edrx(std::int64_t t) {
  while (!edrx_queue_.empty() && std::get<0>(edrx_queue_.top()) <= t) {
    const auto [time, u, version] = edrx_queue_.top();
    edrx_queue_.pop();
    if (version != edrx_version_[u]) continue;
    if (time < t) throw std::logic_error("eDRX event for TTI " + std::to_string(time) + " missed");
    const EdrxState before = edrx_[u];
    const bool pending = paging_pending(u);
    edrx_[u] = edrx_step(before, t, pending);
    const EdrxState& after = edrx_[u];
    if (after.phase != before.phase) {
      if (after.phase == EdrxPhase::Connected) {
        log_event(t, u, "page");
        log_event(t, u, "connect");
      } else if (after.phase == EdrxPhase::IdleSleep) {
        log_event(t, u, before.phase == EdrxPhase::Connected ? "timer_expire" : "ptw_end");
      } else {
        log_event(t, u, "ptw_start");
      }
    }
    if (after.awake() && !awake_[u]) activate(u, t);
    if (!after.awake() && awake_[u]) deactivate(u, t);
    refresh_edrx(u, t);
  }
}

inline void Simulator::schedule(int r, int d, std::int64_t t, TtiRecord& rec) {
  auto& grid = grids_[r];
  int capacity = 0;
  std::vector<int> tones;
  if (d == kDl) {
    capacity = grid.dl_free(t) ? 1 : 0;
  } else {
    tones = grid.free_tones(t);
    capacity = static_cast<int>(tones.size());
  }
  if (capacity == 0 || eligible_[r].empty()) return;

  std::vector<Candidate> cands;
  for (int u : eligible_[r])
    if (has_work(u, d)) cands.push_back({u, cqi_[d][u], harq_[d][u].state == HarqState::RetxReady});
  if (cands.empty()) return;

  const auto rate = [&](const Candidate& c) {
    const int rep = cfg_.cqi_to_nrep[c.cqi];
    return static_cast<double>(tbs_lookup(assets_, c.cqi, cfg_.n_sf)) / transmission_ttis(d, cfg_.n_sf, rep);
  };
  const auto chosen = schedulers_[r][d].select(t, cands, capacity, &pf_[d], rate);

  auto& totals = result_.totals[d];
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    const int u = chosen[i].terminal_id;
    auto& proc = harq_[d][u];
    Grant g;
    if (chosen[i].retransmission) {
      g = proc.pending_block;
      g.is_retransmission = true;
      ++totals.retransmissions;
    } else {
      g.terminal_id = u;
      g.sector = roi_sectors_[r];
      g.direction = d == kDl ? Direction::Downlink : Direction::Uplink;
      g.mcs = chosen[i].cqi;
      g.n_sf = cfg_.n_sf;
      g.n_rep = cfg_.cqi_to_nrep[chosen[i].cqi];
      g.tbs_bits = tbs_lookup(assets_, g.mcs, g.n_sf);
      if (cfg_.traffic_model == TrafficModel::FullBuffer) {
        g.payload_bits = g.tbs_bits;
      } else {
        g.payload_bits = static_cast<int>(std::min<std::int64_t>(g.tbs_bits, buffer_bits_[d][u]));
        buffer_bits_[d][u] -= g.payload_bits;
      }
      totals.offered_bits += g.payload_bits;
    }
    g.tone = d == kDl ? -1 : tones[i];
    g.start_tti = t;
    g.end_tti = t + transmission_ttis(d, g.n_sf, g.n_rep) - 1;
    grid.book(g);
    proc.start(g);
    inflight_.push_back(g);
    auto& hist = history_[r][d][d == kDl ? 0 : g.tone];
    hist.push_back({g.start_tti, g.end_tti, u});
    while (!hist.empty() && hist.front().end < t - max_span_) hist.pop_front();
    ++totals.grants;
    // The PF average tracks served bits: what the grant carries, whatever its decode outcome.
    pf_[d].record(static_cast<std::size_t>(u), t, g.payload_bits);
    if (cfg_.edrx_enabled && edrx_[u].phase == EdrxPhase::Connected) {
      edrx_[u].note_activity(g.end_tti);
      refresh_edrx(u, t);
    }
    if (opts_.trace_grants) result_.grant_trace.push_back(g);
    rec.grants.push_back(g);
  }
}

/// Terminal occupying `resource` of ROI sector r at tau, or -1.
inline int Simulator::occupant(int r, int d, int resource, std::int64_t tau) const {
  const auto& hist = history_[r][d][resource];
  for (auto it = hist.rbegin(); it != hist.rend(); ++it) {
    if (it->start <= tau && tau <= it->end) return it->terminal;
    if (it->end < tau) break;
  }
  return -1;
}

/// DL SINR per subcarrier: every other sector whose (mirrored) ROI sector is
/// transmitting at load_tau interferes with independent Rayleigh fading.
/// Before the first TTI all sectors count as loaded.
inline double Simulator::dl_sinr(int u, int serving, std::int64_t tau, std::int64_t load_tau) {
  const double signal = dl_power_ * gain_[index(u, serving)] * fading_.gain(link(u, Direction::Downlink), tau);
  double interference = 0.0;
  for (int g = 0; g < num_sectors_; ++g) {
    if (g == serving || (load_tau >= 0 && occupant(mirror_[g], kDl, 0, load_tau) < 0)) continue;
    interference += dl_power_ * gain_[index(u, g)] * fading_.iid_gain(hash_values(0, u, g), tau);
  }
  return std::max(signal / (interference + dl_noise_), 1e-30);
}

/// UL SINR on one tone: co-channel terminals of the other ROI sectors plus one
/// virtual terminal per outer sector when its mirrored ROI sector uses the tone.
inline double Simulator::ul_sinr(int u, int serving, int tone, std::int64_t tau, std::int64_t load_tau) {
  const int r = roi_index_[serving];
  const double signal = ul_power_ * gain_[index(u, serving)] * fading_.gain(link(u, Direction::Uplink), tau);
  double interference = 0.0;
  for (std::size_t r2 = 0; r2 < roi_sectors_.size(); ++r2) {
    if (static_cast<int>(r2) == r) continue;
    const int v = occupant(static_cast<int>(r2), kUl, tone, load_tau);
    if (v >= 0) interference += ul_power_ * gain_[index(v, serving)] * fading_.iid_gain(hash_values(1, v, serving), tau);
  }
  const auto pool = static_cast<std::uint64_t>(cfg_.ul_interferer_pool);
  for (std::size_t o = 0; o < pool_gain_.size(); ++o) {
    if (occupant(mirror_[outer_sectors_[o]], kUl, tone, load_tau) < 0) continue;
    const auto m = hash_values(pool_key_, o, tone, tau / ru_ttis_) % pool;
    interference += ul_power_ * pool_gain_[o][m * roi_sectors_.size() + r] *
                    fading_.iid_gain(hash_values(2, o, m, serving), tau);
  }
  return std::max(signal / (interference + ul_noise_), 1e-30);
}

inline void Simulator::complete_transmissions(std::int64_t t, TtiRecord& rec) {
  std::vector<Grant> done;
  std::erase_if(inflight_, [&](const Grant& g) {
    if (g.end_tti != t) return false;
    done.push_back(g);
    return true;
  });
  for (const Grant& g : done) {
    const int d = dir_index(g.direction);
    const int u = g.terminal_id;

    // Link quality.
    std::vector<double> sinr;
    for (std::int64_t tau = g.start_tti; tau <= g.end_tti; ++tau) {
      if (d == kDl) {
        sinr.insert(sinr.end(), dl_subcarriers_, dl_sinr(u, g.sector, tau, tau));
      } else {
        sinr.push_back(ul_sinr(u, g.sector, g.tone, tau, tau));
      }
    }
    const double eff_db = linear_to_db(eesm(SinrVector(std::move(sinr)), cfg_.eesm_eta));

    // Link performance.
    const double bler = bler_lookup(assets_, g.mcs, g.n_rep, eff_db, g.direction);
    const auto outcome = decode_coin_toss(bler, coin_rng_);
    const int cqi = sinr_to_cqi(assets_, eff_db, g.direction);

    // Feedback.
    auto& totals = result_.totals[d];
    const auto res = harq_on_decode(t, harq_[d][u], outcome, cfg_.harq_feedback_delay, cfg_.harq_max_retx);
    feedback_.push(res.feedback);
    FeedbackEvent report = res.feedback;
    report.kind = FeedbackKind::CqiReport;
    report.cqi = cqi;
    feedback_.push(report);

    ++totals.decodes;
    if (outcome == DecodeOutcome::Success) {
      totals.delivered_bits += g.payload_bits;
      result_.delivered_bits[d][u] += g.payload_bits;
    } else {
      ++totals.decode_failures;
      if (res.fate == BlockFate::Dropped) {
        totals.dropped_bits += g.payload_bits;
        log_event(t, u, "drop");
      }
    }
    rec.decodes.push_back({u, g.direction, g.sector, eff_db, bler, outcome == DecodeOutcome::Success, cqi});
  }
}

inline bool Simulator::quiescent() const {
  if (!inflight_.empty() || !feedback_.empty()) return false;
  for (const auto& list : eligible_)
    for (int u : list)
      if (has_work(u, kDl) || has_work(u, kUl)) return false;
  return true;
}

inline std::int64_t Simulator::next_event_time() const {
  std::int64_t next = cfg_.num_ttis;
  if (!edrx_queue_.empty()) next = std::min(next, std::get<0>(edrx_queue_.top()));
  if (!traffic_queue_.empty()) next = std::min(next, std::get<0>(traffic_queue_.top()));
  return next;
}

/// Accounts the idle TTIs [next_tti_, upto) without stepping them.
inline void Simulator::account_gap(std::int64_t upto) {
  if (upto <= next_tti_) return;
  if (!quiescent() || next_event_time() < upto)
    throw std::logic_error("fast-forward from TTI " + std::to_string(next_tti_) + " to " + std::to_string(upto) +
                           " would skip pending work");
  result_.active_terminal_ttis += static_cast<std::int64_t>(eligible_total_) * (upto - next_tti_);
  next_tti_ = upto;
}

inline TtiRecord Simulator::step(std::int64_t t) {
  if (t < next_tti_) throw std::logic_error("step: TTI " + std::to_string(t) + " already simulated");
  TtiRecord rec;
  rec.tti = t;
  try {
    if (!started_) {
      started_ = true;
      for (int u = 0; u < num_terminals_; ++u) {
        if (!cfg_.edrx_enabled || edrx_[u].awake()) activate(u, 0);
        if (cfg_.edrx_enabled) refresh_edrx(u, 0);
      }
    }
    account_gap(t);
    clock_.advance_to(t);

    // 1. Update channels: fading is evaluated lazily; here feedback, arrivals and eDRX advance.
    process_feedback(t, rec);
    process_traffic(t);
    process_edrx(t);

    // 2. Schedule.
    for (std::size_t r = 0; r < roi_sectors_.size(); ++r) {
      schedule(static_cast<int>(r), kDl, t, rec);
      schedule(static_cast<int>(r), kUl, t, rec);
    }

    // 3-5. Link quality, link performance and feedback for blocks ending now.
    complete_transmissions(t, rec);
  } catch (const std::exception& e) {
    throw std::runtime_error("TTI " + std::to_string(t) + ": " + e.what());
  }

  rec.active_terminals = eligible_total_;
  result_.active_terminal_ttis += eligible_total_;
  result_.max_active = std::max(result_.max_active, eligible_total_);
  ++result_.stepped_ttis;
  next_tti_ = t + 1;
  if (opts_.keep_tti_records && !rec.empty()) result_.tti_records.push_back(rec);
  return rec;
}

inline SimResult Simulator::run() {
  const std::int64_t total = cfg_.num_ttis;
  std::int64_t t = next_tti_;
  std::int64_t report_every = std::max<std::int64_t>(1, total / 10);
  std::int64_t next_report = report_every;
  while (t < total) {
    step(t);
    std::int64_t next = t + 1;
    if (cfg_.fast_forward && quiescent()) next = std::max(next, std::min(total, next_event_time()));
    if (opts_.verbose && next >= next_report) {
      std::cerr << "tti " << next << "/" << total << " (" << (100 * next / total) << "%)\n";
      while (next_report <= next) next_report += report_every;
    }
    t = next;
  }
  return finish();
}

inline SimResult Simulator::finish() {
  const std::int64_t end = std::max<std::int64_t>(cfg_.num_ttis, next_tti_);
  if (started_) account_gap(end);
  for (int u = 0; u < num_terminals_; ++u) {
    if (started_ && awake_[u]) result_.awake_ttis[u] += end - awake_since_[u];
    for (int d = 0; d < 2; ++d)
      if (harq_[d][u].holds_unresolved_block()) result_.totals[d].inflight_bits += harq_[d][u].pending_block.payload_bits;
  }
  return std::move(result_);
}

inline SimResult run(const SimConfig& cfg, const SimOptions& opts = {}) { return Simulator(cfg, opts).run(); }

}  // namespace nbiot
