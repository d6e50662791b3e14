#pragma once

// Simulation parameters: defaults, the flat `key = value` file format and
// load-time validation.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace nbiot {

enum class SchedulerPolicy { RoundRobin, ProportionalFair };
enum class PatternPlane { Horizontal, Vertical };
enum class PsiMode { Derived, PaperValue };
enum class RoiMode { Center, All };
enum class FadingModel { BlockRayleigh, None };
enum class TrafficModel { FullBuffer, Mar };

inline constexpr int kNumMcs = 14;

struct SimConfig {
  // Layout
  int num_sites = 19;
  int sectors_per_site = 3;
  double inter_site_distance = 1732.0;  // m
  double pixel_resolution = 5.0;        // m
  RoiMode roi_mode = RoiMode::Center;
  bool allow_duplicate_positions = false;

  // Radio
  double carrier_freq = 900.0;     // MHz
  double bandwidth_dl = 180000.0;  // Hz
  double subcarrier_ul = 15000.0;  // Hz
  double enb_tx_power = 43.0;       // dBm
  double terminal_tx_power = 23.0;  // dBm
  double enb_antenna_gain_max = 18.0;   // dBi
  double terminal_antenna_gain = -4.0;  // dBi
  double antenna_beamwidth = 65.0;      // deg
  double antenna_floor = 23.0;          // dB
  PatternPlane pattern_plane = PatternPlane::Horizontal;
  double enb_noise_figure = 3.0;       // dB, UL receiver
  double terminal_noise_figure = 5.0;  // dB, DL receiver
  double thermal_noise_density = -174.0;  // dBm/Hz
  double interference_margin = 0.0;       // dB
  double process_gain = 0.0;              // dB
  double target_snr_dl = -4.6;            // dB
  double target_snr_ul = -11.8;           // dB
  double cable_loss = 3.0;                // dB
  double penetration_loss = 20.0;         // dB
  double enb_antenna_height = 15.0;       // m
  double min_link_distance = 35.0;        // m
  PsiMode psi_mode = PsiMode::Derived;

  // Shadowing and fading
  double shadow_std = 8.0;              // dB
  double shadow_corr_distance = 110.0;  // m
  double shadow_grid_spacing = 20.0;    // m
  FadingModel fading_model = FadingModel::BlockRayleigh;
  double fading_corr = 0.9;

  // Link abstraction
  double eesm_eta = 2.0;
  int n_sf = 1;
  std::vector<int> cqi_to_nrep = std::vector<int>(kNumMcs, 1);
  std::string assets_dir;  // empty: bundled assets

  // MAC
  int num_terminals = 4000;
  std::int64_t num_ttis = 100000;
  SchedulerPolicy scheduler = SchedulerPolicy::RoundRobin;
  int harq_feedback_delay = 4;  // TTIs
  int harq_max_retx = 4;
  double pf_beta = 0.01;
  int ul_interferer_pool = 32;

  // Traffic and eDRX
  TrafficModel traffic_model = TrafficModel::FullBuffer;
  double pareto_min = 24.0;   // bytes
  double pareto_shape = 2.5;
  double pareto_cap = 200.0;  // bytes
  double mean_packet_bytes = 32.0;
  bool edrx_enabled = true;
  int edrx_k = 1;
  double ptw_length = 2.56;       // s
  double connected_timer = 10.0;  // s
  bool fast_forward = true;

  std::uint64_t rng_seed = 1;

  bool operator==(const SimConfig&) const = default;
};

class ConfigError : public std::runtime_error {
 public:
  enum class Kind { Parse, Validation };

  ConfigError(Kind kind, std::string key, const std::string& what)
      : std::runtime_error(what), kind_(kind), key_(std::move(key)) {}

  Kind kind() const { return kind_; }
  const std::string& key() const { return key_; }

 private:
  Kind kind_;
  std::string key_;
};

/// One `key = value` line of a config file, in file order.
struct ConfigEntry {
  std::string key;
  std::string value;
  int line = 0;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n';
  };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

[[noreturn]] inline void bad_value(std::string_view key, std::string_view value,
                                   std::string_view expected) {
  throw ConfigError(ConfigError::Kind::Parse, std::string(key),
                    "config: bad value '" + std::string(value) + "' for key '" +
                        std::string(key) + "' (expected " + std::string(expected) + ")");
}

inline void parse_value(std::string_view key, std::string_view v, double& out) {
  std::string s(v);
  std::size_t pos = 0;
  try {
    out = std::stod(s, &pos);
  } catch (const std::exception&) {
    bad_value(key, v, "a number");
  }
  if (pos != s.size()) bad_value(key, v, "a number");
}

inline void parse_value(std::string_view key, std::string_view v, long long& out) {
  std::string s(v);
  std::size_t pos = 0;
  try {
    out = std::stoll(s, &pos);
  } catch (const std::exception&) {
    bad_value(key, v, "an integer");
  }
  if (pos != s.size()) bad_value(key, v, "an integer");
}

inline void parse_value(std::string_view key, std::string_view v, int& out) {
  long long x = 0;
  parse_value(key, v, x);
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
    bad_value(key, v, "a 32-bit integer");
  out = static_cast<int>(x);
}

inline void parse_value(std::string_view key, std::string_view v, std::int64_t& out) {
  long long x = 0;
  parse_value(key, v, x);
  out = x;
}

inline void parse_value(std::string_view key, std::string_view v, std::uint64_t& out) {
  std::string s(v);
  std::size_t pos = 0;
  if (s.empty() || s.front() == '-') bad_value(key, v, "an unsigned integer");
  try {
    out = std::stoull(s, &pos);
  } catch (const std::exception&) {
    bad_value(key, v, "an unsigned integer");
  }
  if (pos != s.size()) bad_value(key, v, "an unsigned integer");
}

inline void parse_value(std::string_view key, std::string_view v, bool& out) {
  if (v == "true" || v == "on" || v == "yes" || v == "1") {
    out = true;
  } else if (v == "false" || v == "off" || v == "no" || v == "0") {
    out = false;
  } else {
    bad_value(key, v, "true/false/on/off");
  }
}

inline void parse_value(std::string_view, std::string_view v, std::string& out) { out = v; }

inline void parse_value(std::string_view key, std::string_view v, std::vector<int>& out) {
  std::vector<int> result;
  std::string_view rest = v;
  while (true) {
    auto comma = rest.find(',');
    auto item = trim(rest.substr(0, comma));
    int x = 0;
    parse_value(key, item, x);
    result.push_back(x);
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  out = std::move(result);
}

template <typename E>
struct EnumNames;

template <>
struct EnumNames<SchedulerPolicy> {
  static constexpr std::array<std::pair<SchedulerPolicy, std::string_view>, 2> values{
      {{SchedulerPolicy::RoundRobin, "rr"}, {SchedulerPolicy::ProportionalFair, "pf"}}};
};
template <>
struct EnumNames<PatternPlane> {
  static constexpr std::array<std::pair<PatternPlane, std::string_view>, 2> values{
      {{PatternPlane::Horizontal, "horizontal"}, {PatternPlane::Vertical, "vertical"}}};
};
template <>
struct EnumNames<PsiMode> {
  static constexpr std::array<std::pair<PsiMode, std::string_view>, 2> values{
      {{PsiMode::Derived, "derived"}, {PsiMode::PaperValue, "paper_value"}}};
};
template <>
struct EnumNames<RoiMode> {
  static constexpr std::array<std::pair<RoiMode, std::string_view>, 2> values{
      {{RoiMode::Center, "center"}, {RoiMode::All, "all"}}};
};
template <>
struct EnumNames<FadingModel> {
  static constexpr std::array<std::pair<FadingModel, std::string_view>, 2> values{
      {{FadingModel::BlockRayleigh, "block_rayleigh"}, {FadingModel::None, "none"}}};
};
template <>
struct EnumNames<TrafficModel> {
  static constexpr std::array<std::pair<TrafficModel, std::string_view>, 2> values{
      {{TrafficModel::FullBuffer, "full_buffer"}, {TrafficModel::Mar, "mar"}}};
};

template <typename E>
  requires std::is_enum_v<E>
void parse_value(std::string_view key, std::string_view v, E& out) {
  std::string expected;
  for (const auto& [e, name] : EnumNames<E>::values) {
    if (v == name) {
      out = e;
      return;
    }
    if (!expected.empty()) expected += "|";
    expected += name;
  }
  bad_value(key, v, expected);
}

inline std::string to_text(double v) { return format_double(v); }
inline std::string to_text(int v) { return std::to_string(v); }
inline std::string to_text(std::int64_t v) { return std::to_string(v); }
inline std::string to_text(std::uint64_t v) { return std::to_string(v); }
inline std::string to_text(bool v) { return v ? "true" : "false"; }
inline std::string to_text(const std::string& v) { return v; }
inline std::string to_text(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}
template <typename E>
  requires std::is_enum_v<E>
std::string to_text(E v) {
  for (const auto& [e, name] : EnumNames<E>::values)
    if (e == v) return std::string(name);
  return {};
}

struct FieldDesc {
  std::string_view key;
  std::function<void(SimConfig&, std::string_view)> set;
  std::function<std::string(const SimConfig&)> get;
};

template <typename T>
FieldDesc field(std::string_view key, T SimConfig::*member) {
  return FieldDesc{
      key,
      [key, member](SimConfig& c, std::string_view v) { parse_value(key, v, c.*member); },
      [member](const SimConfig& c) { return to_text(c.*member); }};
}

}  // namespace detail

/// Every config key in canonical order. Keys are exactly the SimConfig field names.
inline const std::vector<detail::FieldDesc>& config_fields() {
  using detail::field;
  static const std::vector<detail::FieldDesc> fields{
      field("num_sites", &SimConfig::num_sites),
      field("sectors_per_site", &SimConfig::sectors_per_site),
      field("inter_site_distance", &SimConfig::inter_site_distance),
      field("pixel_resolution", &SimConfig::pixel_resolution),
      field("roi_mode", &SimConfig::roi_mode),
      field("allow_duplicate_positions", &SimConfig::allow_duplicate_positions),
      field("carrier_freq", &SimConfig::carrier_freq),
      field("bandwidth_dl", &SimConfig::bandwidth_dl),
      field("subcarrier_ul", &SimConfig::subcarrier_ul),
      field("enb_tx_power", &SimConfig::enb_tx_power),
      field("terminal_tx_power", &SimConfig::terminal_tx_power),
      field("enb_antenna_gain_max", &SimConfig::enb_antenna_gain_max),
      field("terminal_antenna_gain", &SimConfig::terminal_antenna_gain),
      field("antenna_beamwidth", &SimConfig::antenna_beamwidth),
      field("antenna_floor", &SimConfig::antenna_floor),
      field("pattern_plane", &SimConfig::pattern_plane),
      field("enb_noise_figure", &SimConfig::enb_noise_figure),
      field("terminal_noise_figure", &SimConfig::terminal_noise_figure),
      field("thermal_noise_density", &SimConfig::thermal_noise_density),
      field("interference_margin", &SimConfig::interference_margin),
      field("process_gain", &SimConfig::process_gain),
      field("target_snr_dl", &SimConfig::target_snr_dl),
      field("target_snr_ul", &SimConfig::target_snr_ul),
      field("cable_loss", &SimConfig::cable_loss),
      field("penetration_loss", &SimConfig::penetration_loss),
      field("enb_antenna_height", &SimConfig::enb_antenna_height),
      field("min_link_distance", &SimConfig::min_link_distance),
      field("psi_mode", &SimConfig::psi_mode),
      field("shadow_std", &SimConfig::shadow_std),
      field("shadow_corr_distance", &SimConfig::shadow_corr_distance),
      field("shadow_grid_spacing", &SimConfig::shadow_grid_spacing),
      field("fading_model", &SimConfig::fading_model),
      field("fading_corr", &SimConfig::fading_corr),
      field("eesm_eta", &SimConfig::eesm_eta),
      field("n_sf", &SimConfig::n_sf),
      field("cqi_to_nrep", &SimConfig::cqi_to_nrep),
      field("assets_dir", &SimConfig::assets_dir),
      field("num_terminals", &SimConfig::num_terminals),
      field("num_ttis", &SimConfig::num_ttis),
      field("scheduler", &SimConfig::scheduler),
      field("harq_feedback_delay", &SimConfig::harq_feedback_delay),
      field("harq_max_retx", &SimConfig::harq_max_retx),
      field("pf_beta", &SimConfig::pf_beta),
      field("ul_interferer_pool", &SimConfig::ul_interferer_pool),
      field("traffic_model", &SimConfig::traffic_model),
      field("pareto_min", &SimConfig::pareto_min),
      field("pareto_shape", &SimConfig::pareto_shape),
      field("pareto_cap", &SimConfig::pareto_cap),
      field("mean_packet_bytes", &SimConfig::mean_packet_bytes),
      field("edrx_enabled", &SimConfig::edrx_enabled),
      field("edrx_k", &SimConfig::edrx_k),
      field("ptw_length", &SimConfig::ptw_length),
      field("connected_timer", &SimConfig::connected_timer),
      field("fast_forward", &SimConfig::fast_forward),
      field("rng_seed", &SimConfig::rng_seed),
  };
  return fields;
}

inline const detail::FieldDesc* find_config_field(std::string_view key) {
  for (const auto& f : config_fields())
    if (f.key == key) return &f;
  return nullptr;
}

/// Splits config text into entries. Rejects malformed lines and duplicate keys;
/// key names are checked later, when entries are applied.
inline std::vector<ConfigEntry> parse_config_text(std::string_view text) {
  std::vector<ConfigEntry> entries;
  int line_no = 0;
  while (!text.empty()) {
    ++line_no;
    auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);

    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;

    auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(ConfigError::Kind::Parse, "",
                        "config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    auto key = detail::trim(line.substr(0, eq));
    auto value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError(ConfigError::Kind::Parse, std::string(key),
                        "config line " + std::to_string(line_no) + ": empty key or value");
    }
    for (const auto& e : entries) {
      if (e.key == key) {
        throw ConfigError(ConfigError::Kind::Parse, std::string(key),
                          "config line " + std::to_string(line_no) + ": duplicate key '" +
                              std::string(key) + "'");
      }
    }
    entries.push_back({std::string(key), std::string(value), line_no});
  }
  return entries;
}

/// Applies one setting to `cfg` without validating the result.
inline void apply_setting(SimConfig& cfg, std::string_view key, std::string_view value) {
  const auto* f = find_config_field(key);
  if (f == nullptr) {
    throw ConfigError(ConfigError::Kind::Parse, std::string(key),
                      "config: unknown key '" + std::string(key) + "'");
  }
  f->set(cfg, detail::trim(value));
}

namespace detail {

inline void require(bool ok, std::string_view key, const std::string& bound) {
  if (!ok) {
    throw ConfigError(ConfigError::Kind::Validation, std::string(key),
                      "config: '" + std::string(key) + "' out of range: must be " + bound);
  }
}

}  // namespace detail

/// Throws ConfigError(Validation) naming the first offending key and its bound.
inline void validate(const SimConfig& c) {
  using detail::require;
  const auto finite = [](double v) { return std::isfinite(v); };

  require(c.num_sites == 1 || c.num_sites == 7 || c.num_sites == 19, "num_sites", "one of {1, 7, 19}");
  require(c.sectors_per_site == 3, "sectors_per_site", "3");
  require(finite(c.min_link_distance) && c.min_link_distance > 0, "min_link_distance", "> 0");
  require(finite(c.inter_site_distance) && c.inter_site_distance > 2 * c.min_link_distance,
          "inter_site_distance", "> 2 * min_link_distance");
  require(finite(c.pixel_resolution) && c.pixel_resolution > 0, "pixel_resolution", "> 0");
  require(finite(c.carrier_freq) && c.carrier_freq > 0, "carrier_freq", "> 0");
  require(finite(c.bandwidth_dl) && c.bandwidth_dl > 0, "bandwidth_dl", "> 0");
  require(c.subcarrier_ul == 15000.0 || c.subcarrier_ul == 3750.0, "subcarrier_ul", "15000 or 3750");

  const std::pair<std::string_view, double> finite_fields[] = {
      {"enb_tx_power", c.enb_tx_power},
      {"terminal_tx_power", c.terminal_tx_power},
      {"enb_antenna_gain_max", c.enb_antenna_gain_max},
      {"terminal_antenna_gain", c.terminal_antenna_gain},
      {"enb_noise_figure", c.enb_noise_figure},
      {"terminal_noise_figure", c.terminal_noise_figure},
      {"thermal_noise_density", c.thermal_noise_density},
      {"interference_margin", c.interference_margin},
      {"process_gain", c.process_gain},
      {"target_snr_dl", c.target_snr_dl},
      {"target_snr_ul", c.target_snr_ul},
      {"cable_loss", c.cable_loss},
      {"penetration_loss", c.penetration_loss},
  };
  for (const auto& [key, v] : finite_fields) require(finite(v), key, "finite");

  require(finite(c.antenna_beamwidth) && c.antenna_beamwidth > 0, "antenna_beamwidth", "> 0");
  require(finite(c.antenna_floor) && c.antenna_floor >= 0, "antenna_floor", ">= 0");
  require(finite(c.enb_antenna_height) && c.enb_antenna_height > 0, "enb_antenna_height", "> 0");
  require(finite(c.shadow_std) && c.shadow_std >= 0, "shadow_std", ">= 0");
  require(finite(c.shadow_corr_distance) && c.shadow_corr_distance > 0, "shadow_corr_distance", "> 0");
  require(finite(c.shadow_grid_spacing) && c.shadow_grid_spacing > 0, "shadow_grid_spacing", "> 0");
  require(finite(c.fading_corr) && c.fading_corr >= 0 && c.fading_corr < 1, "fading_corr", "in [0, 1)");
  require(finite(c.eesm_eta) && c.eesm_eta > 0, "eesm_eta", "> 0");
  require(c.n_sf >= 1 && c.n_sf <= 10, "n_sf", "in [1, 10]");
  require(c.cqi_to_nrep.size() == kNumMcs, "cqi_to_nrep", "a list of 14 values");
  for (int r : c.cqi_to_nrep) require(r >= 1 && r <= 2048, "cqi_to_nrep", "values in [1, 2048]");

  require(c.num_terminals >= 0, "num_terminals", ">= 0");
  require(c.num_ttis >= 0, "num_ttis", ">= 0");
  require(c.harq_feedback_delay >= 1, "harq_feedback_delay", ">= 1");
  require(c.harq_max_retx >= 0 && c.harq_max_retx <= 32, "harq_max_retx", "in [0, 32]");
  require(finite(c.pf_beta) && c.pf_beta > 0 && c.pf_beta <= 1, "pf_beta", "in (0, 1]");
  require(c.ul_interferer_pool >= 1, "ul_interferer_pool", ">= 1");

  require(finite(c.pareto_min) && c.pareto_min > 0, "pareto_min", "> 0");
  require(finite(c.pareto_shape) && c.pareto_shape > 0, "pareto_shape", "> 0");
  require(finite(c.pareto_cap) && c.pareto_cap > c.pareto_min, "pareto_cap", "> pareto_min");
  require(finite(c.mean_packet_bytes) && c.mean_packet_bytes > 0, "mean_packet_bytes", "> 0");
  require(c.edrx_k >= 1 && c.edrx_k <= 10, "edrx_k", "in [1, 10]");
  const double period_s = 10.24 * static_cast<double>(1 << c.edrx_k);
  require(finite(c.ptw_length) && c.ptw_length > 0 && c.ptw_length <= period_s, "ptw_length",
          "in (0, eDRX period]");
  require(finite(c.connected_timer) && c.connected_timer > 0, "connected_timer", "> 0");
}

/// Builds a validated config from defaults plus `entries`, then `overrides`
/// (later settings win).
inline SimConfig build_config(const std::vector<ConfigEntry>& entries,
                              const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
  SimConfig cfg;
  for (const auto& e : entries) apply_setting(cfg, e.key, e.value);
  for (const auto& [k, v] : overrides) apply_setting(cfg, k, v);
  validate(cfg);
  return cfg;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline SimConfig load_config(const std::string& path,
                             const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
  return build_config(parse_config_text(read_text_file(path)), overrides);
}

/// Every key, one per line, in canonical order; reloads to an identical SimConfig.
inline std::string to_config_text(const SimConfig& cfg) {
  std::string out;
  for (const auto& f : config_fields()) {
    auto value = f.get(cfg);
    if (value.empty()) continue;  // empty strings keep their default on reload
    out += f.key;
    out += " = ";
    out += value;
    out += "\n";
  }
  return out;
}

}  // namespace nbiot
