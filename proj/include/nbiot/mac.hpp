#pragma once

// MAC layer: resource bookkeeping, RR/PF grant selection, single-process
// stop-and-wait HARQ (NDI on the uplink, ACK/NACK on the downlink) and the
// proportional-fair throughput averages.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nbiot/config.hpp"
#include "nbiot/phy.hpp"

namespace nbiot {

struct Grant {
  int terminal_id = -1;
  int sector = -1;
  Direction direction = Direction::Downlink;
  int mcs = 0;
  int n_sf = 1;
  int n_rep = 1;
  int tone = -1;  // UL subcarrier index, -1 for DL
  std::int64_t start_tti = 0;
  std::int64_t end_tti = 0;  // last TTI of the transmission, inclusive
  int tbs_bits = 0;
  int payload_bits = 0;  // data carried (<= tbs_bits)
  bool is_retransmission = false;

  bool operator==(const Grant&) const = default;
};

/// Per-sector occupancy: one DL subframe stream and `num_tones` UL tones.
class ResourceGrid {
 public:
  explicit ResourceGrid(int num_tones = 12) : tone_busy_until_(num_tones, -1) {}

  int num_tones() const { return static_cast<int>(tone_busy_until_.size()); }
  bool dl_free(std::int64_t t) const { return dl_busy_until_ < t; }
  std::vector<int> free_tones(std::int64_t t) const {
    std::vector<int> out;
    for (int i = 0; i < num_tones(); ++i)
      if (tone_busy_until_[i] < t) out.push_back(i);
    return out;
  }

  /// Books the grant's resources; throws if any is already taken.
  void book(const Grant& g) {
    if (g.direction == Direction::Downlink) {
      if (!dl_free(g.start_tti)) throw std::logic_error("ResourceGrid: DL subframe double-booked");
      dl_busy_until_ = g.end_tti;
    } else {
      auto& until = tone_busy_until_.at(g.tone);
      if (until >= g.start_tti) throw std::logic_error("ResourceGrid: UL tone double-booked");
      until = g.end_tti;
    }
  }

 private:
  std::int64_t dl_busy_until_ = -1;
  std::vector<std::int64_t> tone_busy_until_;
};

/// UL resource unit length in TTIs for single-tone transmission.
inline int ru_duration_ttis(double subcarrier_hz) { return subcarrier_hz == 3750.0 ? 32 : 8; }
inline int ul_tone_count(double subcarrier_hz) { return subcarrier_hz == 3750.0 ? 48 : 12; }

// ---------------------------------------------------------------------------
// Feedback and HARQ

enum class FeedbackKind { CqiReport, Ndi, NdiTimeout, Ack, Nack };

inline const char* to_string(FeedbackKind k) {
  switch (k) {
    case FeedbackKind::CqiReport: return "cqi";
    case FeedbackKind::Ndi: return "ndi";
    case FeedbackKind::NdiTimeout: return "ndi_timeout";
    case FeedbackKind::Ack: return "ack";
    case FeedbackKind::Nack: return "nack";
  }
  return "?";
}

struct FeedbackEvent {
  std::int64_t deliver_at = 0;
  std::int64_t generated_at = 0;
  FeedbackKind kind = FeedbackKind::CqiReport;
  int terminal_id = -1;
  Direction direction = Direction::Downlink;
  int cqi = 0;

  bool operator==(const FeedbackEvent&) const = default;
};

enum class HarqState { Idle, InFlight, AwaitingFeedback, RetxReady };

struct HarqProcess {
  int terminal_id = -1;
  Direction direction = Direction::Downlink;
  HarqState state = HarqState::Idle;
  Grant pending_block;
  int retx_count = 0;
  std::int64_t awaiting_feedback_until = -1;
  bool drop_on_feedback = false;
  bool resolved = false;  // last decode delivered or dropped the block

  bool active() const { return state != HarqState::Idle; }
  /// Holds a block that is neither delivered nor dropped yet.
  bool holds_unresolved_block() const { return active() && !resolved; }
  bool ready_for_new_data() const { return state == HarqState::Idle; }
  bool retransmission_ready() const { return state == HarqState::RetxReady; }

  /// Marks the process busy with a fresh or retransmitted block.
  void start(const Grant& g) {
    if (state != HarqState::Idle && state != HarqState::RetxReady)
      throw std::logic_error("HARQ: grant for a busy process");
    if (state == HarqState::Idle) retx_count = 0;
    pending_block = g;
    state = HarqState::InFlight;
    resolved = false;
  }
};

enum class BlockFate { Delivered, Retransmit, Dropped };

struct DecodeResult {
  BlockFate fate = BlockFate::Delivered;
  FeedbackEvent feedback;
};

/// Records a decode attempt and returns the feedback to deliver at t + delay.
/// UL success raises NDI; UL failure raises no NDI, so the terminal's
/// NDI-wait window (the same delay) expires instead. DL uses ACK/NACK.
inline DecodeResult harq_on_decode(std::int64_t t, HarqProcess& p, DecodeOutcome outcome, int feedback_delay,
                                   int max_retx) {
  if (p.state != HarqState::InFlight)
    throw std::logic_error("HARQ: decode for inactive process of terminal " + std::to_string(p.terminal_id));
  DecodeResult r;
  r.feedback.deliver_at = t + feedback_delay;
  r.feedback.generated_at = t;
  r.feedback.terminal_id = p.terminal_id;
  r.feedback.direction = p.direction;
  const bool ul = p.direction == Direction::Uplink;
  if (outcome == DecodeOutcome::Success) {
    r.fate = BlockFate::Delivered;
    r.feedback.kind = ul ? FeedbackKind::Ndi : FeedbackKind::Ack;
    p.drop_on_feedback = false;
  } else {
    r.fate = p.retx_count < max_retx ? BlockFate::Retransmit : BlockFate::Dropped;
    r.feedback.kind = ul ? FeedbackKind::NdiTimeout : FeedbackKind::Nack;
    p.drop_on_feedback = r.fate == BlockFate::Dropped;
  }
  p.resolved = r.fate != BlockFate::Retransmit;
  p.state = HarqState::AwaitingFeedback;
  p.awaiting_feedback_until = r.feedback.deliver_at;
  return r;
}

/// Applies delivered HARQ feedback. Throws when no decode is awaiting feedback.
inline void harq_on_feedback(HarqProcess& p, const FeedbackEvent& e) {
  if (p.state != HarqState::AwaitingFeedback || e.deliver_at != p.awaiting_feedback_until)
    throw std::logic_error("HARQ: feedback for inactive process of terminal " + std::to_string(e.terminal_id));
  const bool positive = e.kind == FeedbackKind::Ndi || e.kind == FeedbackKind::Ack;
  if (positive || p.drop_on_feedback) {
    p.state = HarqState::Idle;
    p.retx_count = 0;
  } else {
    p.state = HarqState::RetxReady;
    ++p.retx_count;
  }
  p.awaiting_feedback_until = -1;
  p.drop_on_feedback = false;
}

// ---------------------------------------------------------------------------
// Proportional fair state

/// Exponentially averaged delivered bits per TTI, stored lazily: an entry
/// updated at TTI `last` decays by (1 - beta) for every TTI after it.
class PfState {
 public:
  static constexpr double kEpsilon = 1e-6;

  PfState() = default;
  PfState(std::size_t num_terminals, double beta)
      : beta_(beta), avg_(num_terminals, kEpsilon), last_(num_terminals, -1) {}

  double beta() const { return beta_; }
  std::size_t size() const { return avg_.size(); }

  /// Average after the update of TTI `t`, assuming nothing delivered since the last record.
  double average_after(std::size_t id, std::int64_t t) const {
    const auto d = t - last_[id];
    if (d <= 0) return avg_[id];
    return avg_[id] * std::pow(1.0 - beta_, static_cast<double>(d));
  }

  /// Denominator of the PF metric when scheduling TTI `t`.
  double priority_denominator(std::size_t id, std::int64_t t) const {
    return std::max(average_after(id, t - 1), kEpsilon);
  }

  /// EWMA step of TTI `t` with `bits` delivered (at most one record per id per TTI).
  void record(std::size_t id, std::int64_t t, double bits) {
    if (t <= last_[id]) throw std::logic_error("PfState: records must move forward in time");
    avg_[id] = average_after(id, t - 1) * (1.0 - beta_) + beta_ * bits;
    last_[id] = t;
  }

 private:
  double beta_ = 0.01;
  std::vector<double> avg_;
  std::vector<std::int64_t> last_;
};

/// One explicit EWMA step for all terminals: avg <- (1 - beta) avg + beta x,
/// with x = 0 for terminals absent from `delivered`.
inline void update_pf(PfState& state, std::int64_t t, const std::vector<std::pair<int, double>>& delivered) {
  std::vector<double> bits(state.size(), 0.0);
  for (const auto& [id, b] : delivered) bits.at(id) += b;
  for (std::size_t i = 0; i < state.size(); ++i) state.record(i, t, bits[i]);
}

// ---------------------------------------------------------------------------
// Scheduling

struct Candidate {
  int terminal_id = -1;
  int cqi = 0;
  bool retransmission = false;
};

/// Grant selection for one sector and direction. Retransmissions are served
/// before new data; RR rotates in terminal-id order from a persistent cursor,
/// PF ranks by achievable rate over average throughput.
class Scheduler {
 public:
  Scheduler() = default;
  explicit Scheduler(SchedulerPolicy policy) : policy_(policy) {}

  SchedulerPolicy policy() const { return policy_; }
  int cursor() const { return cursor_; }

  /// Picks up to `capacity` terminals from `candidates` (sorted by id).
  /// `rate` maps a candidate to its achievable bits per TTI; `pf` is read for PF.
  template <typename RateFn>
  std::vector<Candidate> select(std::int64_t t, const std::vector<Candidate>& candidates, int capacity,
                                const PfState* pf, RateFn&& rate) {
    std::vector<Candidate> chosen;
    if (capacity <= 0 || candidates.empty()) return chosen;

    std::vector<std::pair<double, std::size_t>> order;  // (key, index), ascending key wins
    order.reserve(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const auto& c = candidates[i];
      double key = 0.0;
      if (policy_ == SchedulerPolicy::RoundRobin) {
        // Position in the rotation that starts at the cursor.
        key = c.terminal_id >= cursor_ ? c.terminal_id - cursor_ : c.terminal_id - cursor_ + 2147483648.0;
      } else {
        if (pf == nullptr) throw std::logic_error("Scheduler: PF policy needs PfState");
        key = -rate(c) / pf->priority_denominator(static_cast<std::size_t>(c.terminal_id), t);
      }
      order.push_back({key, i});
    }
    // Retransmissions strictly first; ties broken by lowest terminal id.
    std::sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
      const auto& ca = candidates[a.second];
      const auto& cb = candidates[b.second];
      if (ca.retransmission != cb.retransmission) return ca.retransmission;
      if (a.first != b.first) return a.first < b.first;
      return ca.terminal_id < cb.terminal_id;
    });
    for (const auto& [key, idx] : order) {
      if (static_cast<int>(chosen.size()) >= capacity) break;
      chosen.push_back(candidates[idx]);
    }
    if (policy_ == SchedulerPolicy::RoundRobin) {
      for (const auto& c : chosen)
        if (!c.retransmission) cursor_ = c.terminal_id + 1;
    }
    return chosen;
  }

 private:
  SchedulerPolicy policy_ = SchedulerPolicy::RoundRobin;
  int cursor_ = 0;
};

}  // namespace nbiot
