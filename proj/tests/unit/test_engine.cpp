#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>
#include <tuple>

#include "nbiot/engine.hpp"
#include "test_support.hpp"

using namespace nbiot;
using nbiot::testing::error_free_assets;
using nbiot::testing::hopeless_assets;
using nbiot::testing::small_config;

namespace {

SimOptions traced() {
  SimOptions o;
  o.trace_grants = true;
  o.trace_events = true;
  return o;
}

// Reports are sparse (about one per terminal per two hours), so MAR runs
// need hundreds of terminals over minutes to see a few dozen packets.
SimConfig mar_config(int terminals, std::int64_t ttis) {
  auto c = small_config(terminals, ttis);
  c.traffic_model = TrafficModel::Mar;
  return c;
}

/// One site, one terminal, no randomness in the channel.
SimConfig micro_config(std::int64_t ttis) {
  auto c = small_config(1, ttis);
  c.num_sites = 1;
  c.shadow_std = 0.0;
  c.fading_model = FadingModel::None;
  c.edrx_enabled = false;
  c.harq_feedback_delay = 2;
  return c;
}

int cqi_for(double snr_db, int max_cqi) {
  // Thresholds of the error-free assets: CQI k needs -11 + k dB.
  return std::clamp(static_cast<int>(std::floor(snr_db + 11.0)), 0, max_cqi);
}

}  // namespace

TEST(Engine, SameSeedSameResult) {
  const auto cfg = small_config(80, 20000);
  const auto a = Simulator(cfg, traced()).run();
  const auto b = Simulator(cfg, traced()).run();
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a.grant_trace.empty());

  auto other = cfg;
  other.rng_seed = 2;
  EXPECT_NE(Simulator(other, traced()).run().grant_trace, a.grant_trace);
}

TEST(Engine, ZeroTtis) {
  const auto r = Simulator(small_config(30, 0)).run();
  EXPECT_EQ(r.num_ttis, 0);
  EXPECT_EQ(r.coupling_loss_db.size(), 30u);
  for (const auto& t : r.totals) {
    EXPECT_EQ(t.grants, 0);
    EXPECT_EQ(t.delivered_bits, 0);
  }
  EXPECT_EQ(r.mean_active_terminals(), 0.0);
}

TEST(Engine, ServingSectorIsBestRoiSector) {
  Simulator sim(small_config(200, 1));
  const auto& roi = sim.roi_sectors();
  for (const auto& t : sim.terminals()) {
    ASSERT_NE(std::find(roi.begin(), roi.end(), t.serving_sector), roi.end());
    for (int g : roi) EXPECT_LE(sim.coupling_loss_db(t.id, t.serving_sector), sim.coupling_loss_db(t.id, g));
  }
}

TEST(Engine, MicroScenarioMatchesLinkBudget) {
  auto cfg = micro_config(1);
  Simulator probe(cfg, error_free_assets());
  const int serving = probe.terminals()[0].serving_sector;
  const double cl = probe.coupling_loss_db(0, serving);
  std::vector<double> others;
  for (int g = 0; g < 3; ++g)
    if (g != serving) others.push_back(probe.coupling_loss_db(0, g));

  // Choose powers that put both links in the middle of the CQI range.
  const double dl_noise_dbm = cfg.thermal_noise_density + cfg.terminal_noise_figure + 10.0 * std::log10(15000.0);
  const double ul_noise_dbm = cfg.thermal_noise_density + cfg.enb_noise_figure + 10.0 * std::log10(15000.0);
  cfg.enb_tx_power = 10.0 * std::log10(12.0) + cl + dl_noise_dbm + 0.5;
  cfg.terminal_tx_power = cl + ul_noise_dbm - 3.5;
  cfg.num_ttis = 1001;

  const double per_sc_dbm = cfg.enb_tx_power - 10.0 * std::log10(12.0);
  const double snr_dl = per_sc_dbm - cl - dl_noise_dbm;
  const double snr_ul = cfg.terminal_tx_power - cl - ul_noise_dbm;
  // Before any TTI has run, every sector counts as transmitting.
  double first_i = std::pow(10.0, dl_noise_dbm / 10.0);
  for (double o : others) first_i += std::pow(10.0, (per_sc_dbm - o) / 10.0);
  const double sinr_first = per_sc_dbm - cl - 10.0 * std::log10(first_i);

  const auto assets = error_free_assets();
  const int cqi_dl = cqi_for(snr_dl, kNumMcs - 1);
  const int cqi_first = cqi_for(sinr_first, kNumMcs - 1);
  const int cqi_ul = cqi_for(snr_ul, kMaxUlMcs);
  ASSERT_EQ(cqi_dl, 11);
  ASSERT_EQ(cqi_ul, 7);

  const auto r = Simulator(cfg, assets, traced()).run();

  // DL: one TTI on air, feedback two TTIs later, so a new block every 2 TTIs.
  const std::int64_t dl_blocks = (cfg.num_ttis + 1) / 2;
  EXPECT_EQ(r.totals[0].grants, dl_blocks);
  EXPECT_EQ(r.totals[0].delivered_bits,
            tbs_lookup(assets, cqi_first, 1) + (dl_blocks - 1) * tbs_lookup(assets, cqi_dl, 1));

  // UL: an 8-TTI resource unit, next block 1 + delay TTIs after the last one ends.
  const std::int64_t ul_cycle = 8 + cfg.harq_feedback_delay - 1;
  std::int64_t ul_blocks = 0;
  for (std::int64_t s = 0; s + 7 < cfg.num_ttis; s += ul_cycle) ++ul_blocks;
  EXPECT_EQ(r.totals[1].decodes, ul_blocks);
  EXPECT_EQ(r.totals[1].delivered_bits, ul_blocks * tbs_lookup(assets, cqi_ul, 1));
  for (const auto& g : r.grant_trace) {
    if (g.direction == Direction::Uplink) {
      EXPECT_EQ(g.mcs, cqi_ul);
    }
  }

  for (const auto& t : r.totals) {
    EXPECT_EQ(t.decode_failures, 0);
    EXPECT_EQ(t.retransmissions, 0);
  }
}

TEST(Engine, FeedbackArrivesAfterConfiguredDelay) {
  auto cfg = small_config(60, 15000);
  cfg.harq_feedback_delay = 3;
  SimOptions o;
  o.keep_tti_records = true;
  const auto r = Simulator(cfg, o).run();
  std::set<std::tuple<std::int64_t, int, int>> decoded;  // (tti, terminal, direction)
  std::size_t harq_feedback = 0;
  for (const auto& rec : r.tti_records) {
    for (const auto& d : rec.decodes) decoded.insert({rec.tti, d.terminal_id, static_cast<int>(d.direction)});
    for (const auto& f : rec.feedback) {
      EXPECT_EQ(f.deliver_at, rec.tti);
      EXPECT_EQ(f.deliver_at - f.generated_at, 3);
      EXPECT_TRUE(decoded.contains({f.generated_at, f.terminal_id, static_cast<int>(f.direction)}));
      harq_feedback += f.kind != FeedbackKind::CqiReport;
    }
  }
  EXPECT_GT(harq_feedback, 0u);
}

TEST(Engine, BitsAreConserved) {
  for (auto model : {TrafficModel::FullBuffer, TrafficModel::Mar}) {
    auto cfg = model == TrafficModel::Mar ? mar_config(400, 400000) : small_config(120, 12000);
    const auto r = Simulator(cfg).run();
    for (const auto& t : r.totals) {
      EXPECT_GT(t.offered_bits, 0);
      EXPECT_EQ(t.offered_bits, t.delivered_bits + t.dropped_bits + t.inflight_bits);
      // Only blocks still on air at the end lack a decode: one DL and 12 UL per sector.
      EXPECT_LE(t.decodes, t.grants);
      EXPECT_LE(t.grants - t.decodes, 3 * 13);
    }
    std::int64_t per_terminal = 0;
    for (auto b : r.delivered_bits[0]) per_terminal += b;
    EXPECT_EQ(per_terminal, r.totals[0].delivered_bits);
  }
}

TEST(Engine, GrantsRespectResourceLimits) {
  auto cfg = small_config(300, 4000);
  cfg.edrx_enabled = false;
  const auto r = Simulator(cfg, traced()).run();
  std::map<std::pair<int, std::int64_t>, int> dl;
  std::map<std::tuple<int, int>, std::int64_t> ul_busy_until;  // (sector, tone) -> last TTI
  for (const auto& g : r.grant_trace) {
    if (g.direction == Direction::Downlink) {
      EXPECT_EQ(g.start_tti, g.end_tti);
      EXPECT_LE(++dl[std::make_pair(g.sector, g.start_tti)], 1);
    } else {
      ASSERT_GE(g.tone, 0);
      ASSERT_LT(g.tone, 12);
      EXPECT_EQ(g.end_tti - g.start_tti + 1, 8 * g.n_rep * g.n_sf);
      auto [it, fresh] = ul_busy_until.try_emplace({g.sector, g.tone}, g.end_tti);
      if (!fresh) {
        EXPECT_GT(g.start_tti, it->second);
        it->second = g.end_tti;
      }
      EXPECT_LE(g.mcs, kMaxUlMcs);
    }
  }
  // With 300 always-awake terminals every sector is saturated.
  EXPECT_EQ(r.totals[0].grants, static_cast<std::int64_t>(3 * cfg.num_ttis));
}

TEST(Engine, OnlyAwakeTerminalsAreScheduled) {
  auto cfg = mar_config(300, 200000);
  Simulator sim(cfg);
  std::int64_t granted = 0;
  for (std::int64_t t = 0; t < cfg.num_ttis; ++t) {
    const auto rec = sim.step(t);
    for (const auto& g : rec.grants) {
      ASSERT_TRUE(sim.edrx_state(g.terminal_id).awake()) << "terminal " << g.terminal_id << " at " << t;
      ++granted;
    }
  }
  EXPECT_GT(granted, 0);
  const auto r = sim.finish();
  EXPECT_LT(r.mean_active_terminals(), 300.0 * 0.5);
}

TEST(Engine, KeepTtiRecordsCollectsGrants) {
  SimOptions o;
  o.keep_tti_records = true;
  o.trace_grants = true;
  const auto r = Simulator(small_config(50, 2000), o).run();
  std::size_t n = 0;
  for (const auto& rec : r.tti_records) n += rec.grants.size();
  EXPECT_EQ(n, r.grant_trace.size());
}

TEST(Engine, LargeScaleGainsFixedDuringRun) {
  auto cfg = small_config(40, 3000);
  Simulator sim(cfg);
  std::vector<double> before;
  for (int u = 0; u < 40; ++u)
    for (int g = 0; g < 57; ++g) before.push_back(sim.coupling_loss_db(u, g));
  const auto r = sim.run();
  std::size_t i = 0;
  for (int u = 0; u < 40; ++u) {
    EXPECT_EQ(r.coupling_loss_db[u], sim.coupling_loss_db(u, r.serving_sector[u]));
    for (int g = 0; g < 57; ++g) EXPECT_EQ(before[i++], sim.coupling_loss_db(u, g));
  }
}

TEST(Engine, FastForwardDoesNotChangeResults) {
  auto cfg = mar_config(300, 300000);
  cfg.fast_forward = true;
  const auto fast = Simulator(cfg, traced()).run();
  cfg.fast_forward = false;
  const auto slow = Simulator(cfg, traced()).run();
  EXPECT_EQ(fast, slow);
  EXPECT_GT(fast.totals[0].grants + fast.totals[1].grants, 0);
  EXPECT_LT(fast.stepped_ttis, slow.stepped_ttis);
  EXPECT_EQ(slow.stepped_ttis, cfg.num_ttis);
}

TEST(Engine, HopelessLinksDropEverything) {
  auto cfg = small_config(30, 3000);
  cfg.edrx_enabled = false;
  const auto r = Simulator(cfg, hopeless_assets(), traced()).run();
  for (const auto& t : r.totals) {
    EXPECT_EQ(t.delivered_bits, 0);
    EXPECT_EQ(t.decode_failures, t.decodes);
    EXPECT_GT(t.dropped_bits, 0);
  }
  // Per link, every new block is followed by exactly four retransmissions.
  std::map<std::pair<int, int>, std::vector<bool>> flags;
  for (const auto& g : r.grant_trace)
    flags[{g.terminal_id, static_cast<int>(g.direction)}].push_back(g.is_retransmission);
  for (const auto& [link, f] : flags)
    for (std::size_t i = 0; i < f.size(); ++i) ASSERT_EQ(f[i], i % 5 != 0) << link.first << " grant " << i;
  std::size_t drops = 0;
  for (const auto& e : r.event_trace) drops += e.event == "drop";
  EXPECT_GT(drops, 0u);
}

TEST(Engine, ProportionalFairServesFailingLinksWithoutStarvingOthers) {
  // Every decode fails, so nothing is ever delivered; the PF average must
  // still rise with each grant or the first terminals served would keep the
  // sector forever.
  auto cfg = small_config(60, 6000);
  cfg.edrx_enabled = false;
  cfg.scheduler = SchedulerPolicy::ProportionalFair;
  const auto r = Simulator(cfg, hopeless_assets(), traced()).run();
  std::map<int, std::map<int, double>> by_sector;  // sector -> terminal -> DL grants
  for (int u = 0; u < 60; ++u) by_sector[r.serving_sector[u]][u] = 0.0;
  for (const auto& g : r.grant_trace)
    if (g.direction == Direction::Downlink) by_sector[g.sector][g.terminal_id] += 1;
  for (const auto& [sector, counts] : by_sector) {
    std::vector<double> v;
    for (const auto& [u, n] : counts) {
      EXPECT_GT(n, 0) << "terminal " << u;
      v.push_back(n);
    }
    EXPECT_GT(nbiot::testing::jain_index(v), 0.95) << "sector " << sector;
  }
}

TEST(Engine, ErrorFreeLinksNeverRetransmit) {
  auto cfg = small_config(60, 3000);
  const auto r = Simulator(cfg, error_free_assets()).run();
  for (const auto& t : r.totals) {
    EXPECT_EQ(t.decode_failures, 0);
    EXPECT_EQ(t.retransmissions, 0);
    EXPECT_EQ(t.dropped_bits, 0);
  }
}

TEST(Engine, SteppingBackwardsThrows) {
  Simulator sim(small_config(10, 100));
  sim.step(0);
  sim.step(1);
  EXPECT_THROW(sim.step(1), std::logic_error);
}
