#pragma once

// Command-line front end: run, mcl, traffic and dump-layout subcommands.
// Every config key is accepted as a flag (`--num_terminals` or
// `--num-terminals`); flags override the config file, which overrides defaults.

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "nbiot/config.hpp"
#include "nbiot/engine.hpp"
#include "nbiot/metrics.hpp"
#include "nbiot/traffic.hpp"

namespace nbiot::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kConfigInvalid = 2, kRuntime = 3 };

namespace detail {

/// Short spellings kept for experiment scripts.
inline const std::multimap<std::string, std::string>& key_aliases() {
  static const std::multimap<std::string, std::string> aliases{
      {"num_terminals", "--terminals"}, {"num_ttis", "--ttis"},        {"rng_seed", "--seed"},
      {"edrx_enabled", "--edrx"},       {"subcarrier_ul", "--bandwidth"},
  };
  return aliases;
}

/// Per-invocation storage for the config-key flags.
struct ConfigFlags {
  std::string config_path;
  std::vector<std::pair<std::string, CLI::Option*>> options;
  std::map<std::string, std::string> values;

  void attach(CLI::App& app, bool with_aliases) {
    app.add_option("--config,-c", config_path, "Config file (key = value lines)")->check(CLI::ExistingFile);
    for (const auto& f : config_fields()) {
      const std::string key(f.key);
      std::string names = "--" + key;
      std::string dashed = key;
      std::replace(dashed.begin(), dashed.end(), '_', '-');
      if (dashed != key) names += ",--" + dashed;
      if (with_aliases) {
        auto [lo, hi] = key_aliases().equal_range(key);
        for (auto it = lo; it != hi; ++it) names += "," + it->second;
      }
      auto* opt = app.add_option(names, values[key], "config key " + key)->group("Config keys");
      options.emplace_back(key, opt);
    }
  }

  /// Overrides in canonical key order.
  std::vector<std::pair<std::string, std::string>> overrides() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [key, opt] : options)
      if (opt->count() > 0) out.emplace_back(key, values.at(key));
    return out;
  }

  SimConfig build() const {
    if (config_path.empty()) return build_config({}, overrides());
    return load_config(config_path, overrides());
  }
};

inline std::string fixed(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

template <typename Fn>
std::string to_string_with(Fn&& fn) {
  std::ostringstream ss;
  fn(ss);
  return ss.str();
}

inline void write_grants_csv(std::ostream& os, const std::vector<Grant>& grants) {
  os << "tti,sector,terminal,direction,mcs,n_sf,tbs_bits,is_retx\n";
  for (const auto& g : grants)
    os << g.start_tti << ',' << g.sector << ',' << g.terminal_id << ',' << to_string(g.direction) << ',' << g.mcs
       << ',' << g.n_sf << ',' << g.tbs_bits << ',' << (g.is_retransmission ? 1 : 0) << '\n';
}

inline void write_events_csv(std::ostream& os, const std::vector<EventRecord>& events) {
  os << "tti,terminal_id,event\n";
  for (const auto& e : events) os << e.tti << ',' << e.terminal_id << ',' << e.event << '\n';
}

/// Runs `replicas` seeds (base, base+1, ...) on up to `jobs` threads.
inline std::vector<SimResult> run_replicas(const SimConfig& base, int replicas, int jobs, const SimOptions& opts) {
  const PhyAssets assets = PhyAssets::load(base.assets_dir);
  std::vector<SimResult> results(static_cast<std::size_t>(replicas));
  std::vector<std::exception_ptr> errors(results.size());
  std::atomic<int> next{0};
  const auto worker = [&]() {
    for (int i = next++; i < replicas; i = next++) {
      try {
        SimConfig cfg = base;
        cfg.rng_seed = base.rng_seed + static_cast<std::uint64_t>(i);
        SimOptions o = opts;
        o.verbose = opts.verbose && i == 0;
        results[i] = Simulator(cfg, assets, o).run();
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int workers = std::clamp(jobs, 1, replicas);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

}  // namespace detail

struct RunArgs {
  std::string out_dir = "results";
  int replicas = 1;
  int jobs = 1;
  bool trace_grants = false;
  bool trace_events = false;
  bool verbose = false;
};

inline int cmd_run(const SimConfig& cfg, const RunArgs& args, std::ostream& out, std::ostream& err) {
  namespace fs = std::filesystem;
  SimOptions opts;
  opts.trace_grants = args.trace_grants;
  opts.trace_events = args.trace_events;
  opts.verbose = args.verbose;
  const auto runs = detail::run_replicas(cfg, args.replicas, args.jobs, opts);
  const SimResult merged = merge_results(runs);

  const auto coupling = build_cdf(merged.coupling_loss_db);
  ThroughputStats tp;
  if (merged.num_ttis > 0) tp = normalized_user_throughput(merged, cfg.bandwidth_dl);
  auto rows = summarize(cfg, merged, tp, coupling);
  if (args.replicas > 1) rows.insert(rows.begin() + 6, {"replicas", std::to_string(args.replicas)});

  const fs::path dir(args.out_dir);
  fs::create_directories(dir);
  detail::write_file(dir / "coupling_cdf.csv", detail::to_string_with([&](std::ostream& os) {
                       write_coupling_cdf_csv(os, coupling);
                     }));
  detail::write_file(dir / "throughput.csv",
                     detail::to_string_with([&](std::ostream& os) { write_throughput_csv(os, tp); }));
  detail::write_file(dir / "summary.csv",
                     detail::to_string_with([&](std::ostream& os) { write_summary_csv(os, rows); }));
  detail::write_file(dir / "link_budget.csv", detail::to_string_with([&](std::ostream& os) {
                       write_link_budget_csv(os, link_budget(Direction::Downlink, cfg),
                                             link_budget(Direction::Uplink, cfg));
                     }));
  if (args.trace_grants && args.replicas == 1)
    detail::write_file(dir / "grants.csv", detail::to_string_with([&](std::ostream& os) {
                         detail::write_grants_csv(os, merged.grant_trace);
                       }));
  if (args.trace_events && args.replicas == 1)
    detail::write_file(dir / "events.csv", detail::to_string_with([&](std::ostream& os) {
                         detail::write_events_csv(os, merged.event_trace);
                       }));
  if ((args.trace_grants || args.trace_events) && args.replicas > 1)
    err << "note: traces are only written for single-replica runs\n";

  std::size_t width = 0;
  for (const auto& [k, v] : rows) width = std::max(width, k.size());
  for (const auto& [k, v] : rows) out << std::left << std::setw(static_cast<int>(width) + 2) << k << v << '\n';
  return kOk;
}

inline int cmd_mcl(const SimConfig& cfg, int precision, std::ostream& out) {
  const auto dl = link_budget(Direction::Downlink, cfg).rows();
  const auto ul = link_budget(Direction::Uplink, cfg).rows();
  out << std::left << std::setw(5) << "row" << std::setw(32) << "item" << std::right << std::setw(14) << "DL"
      << std::setw(14) << "UL" << '\n';
  for (std::size_t i = 0; i < dl.size(); ++i)
    out << std::left << std::setw(5) << ("(" + std::to_string(i + 1) + ")") << std::setw(32) << dl[i].first
        << std::right << std::setw(14) << detail::fixed(dl[i].second, precision) << std::setw(14)
        << detail::fixed(ul[i].second, precision) << '\n';
  return kOk;
}

inline int cmd_traffic(const SimConfig& cfg, double terminals, std::ostream& out) {
  const auto r = traffic_rates(cfg.mean_packet_bytes, terminals);
  char buf[160];
  std::snprintf(buf, sizeof buf, "packets_per_s_per_terminal  %.6e\n", r.packets_per_s);
  out << buf;
  std::snprintf(buf, sizeof buf, "bits_per_s_per_terminal     %.6e\n", r.bits_per_s);
  out << buf;
  std::snprintf(buf, sizeof buf, "terminals_per_sector        %.0f\n", terminals);
  out << buf;
  std::snprintf(buf, sizeof buf, "bits_per_s_per_sector       %.4f\n", r.sector_bits_per_s);
  out << buf;
  return kOk;
}

inline int cmd_dump_layout(const SimConfig& cfg, const std::string& out_dir, std::ostream& out) {
  namespace fs = std::filesystem;
  const Simulator sim(cfg);
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  detail::write_file(dir / "sites.csv",
                     detail::to_string_with([&](std::ostream& os) { write_sites_csv(os, sim.layout()); }));
  detail::write_file(dir / "terminals.csv",
                     detail::to_string_with([&](std::ostream& os) { write_terminals_csv(os, sim.terminals()); }));
  out << "sites      " << sim.layout().sites.size() << '\n'
      << "terminals  " << sim.terminals().size() << '\n'
      << "roi_pixels " << sim.pixel_map().roi_pixel_count() << '\n';
  return kOk;
}

/// Parses `args` (without the program name) and runs the chosen subcommand.
inline int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"NB-IoT system-level simulator", "nbiot_sim"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "nbiot_sim 1.0");

  RunArgs run_args;
  detail::ConfigFlags run_flags, mcl_flags, traffic_flags, layout_flags;
  int precision = 1;
  double traffic_terminals = -1.0;
  std::string layout_out = "layout";

  auto* run = app.add_subcommand("run", "Run the simulation and write result CSVs");
  run_flags.attach(*run, true);
  run->add_option("--out,-o", run_args.out_dir, "Output directory")->capture_default_str();
  run->add_option("--replicas", run_args.replicas, "Independent seeds (rng_seed, rng_seed+1, ...)")
      ->check(CLI::Range(1, 10000))
      ->capture_default_str();
  run->add_option("--jobs,-j", run_args.jobs, "Parallel workers for replicas")
      ->check(CLI::Range(1, 1024))
      ->capture_default_str();
  run->add_flag("--trace-grants", run_args.trace_grants, "Also write grants.csv");
  run->add_flag("--trace-events", run_args.trace_events, "Also write events.csv");
  run->add_flag("--verbose,-v", run_args.verbose, "Progress on stderr");

  auto* mcl = app.add_subcommand("mcl", "Print the DL and UL link budgets");
  mcl_flags.attach(*mcl, true);
  mcl->add_option("--precision", precision, "Decimals printed")->check(CLI::Range(0, 12))->capture_default_str();

  auto* traffic = app.add_subcommand("traffic", "Print MAR traffic rates for a terminal count");
  traffic_flags.attach(*traffic, false);
  traffic->add_option("--terminals", traffic_terminals, "Terminals per sector (default: num_terminals)")
      ->check(CLI::NonNegativeNumber);

  auto* layout = app.add_subcommand("dump-layout", "Write sites.csv and terminals.csv");
  layout_flags.attach(*layout, true);
  layout->add_option("--out,-o", layout_out, "Output directory")->capture_default_str();

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (run->parsed()) return cmd_run(run_flags.build(), run_args, out, err);
    if (mcl->parsed()) return cmd_mcl(mcl_flags.build(), precision, out);
    if (traffic->parsed()) {
      const SimConfig cfg = traffic_flags.build();
      return cmd_traffic(cfg, traffic_terminals >= 0.0 ? traffic_terminals : cfg.num_terminals, out);
    }
    if (layout->parsed()) return cmd_dump_layout(layout_flags.build(), layout_out, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}

}  // namespace nbiot::cli
