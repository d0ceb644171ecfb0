#pragma once

#include <algorithm>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "logplayer/transport.hpp"

namespace logplayer::sim {

/// How operations pending on a stream surface when its target fails.
enum class CqFailureMode : std::uint8_t {
  flush,  // pending tags vanish and the completion queue is cleaned
  fail,   // each pending operation later surfaces as a failed tag
};

inline const char* to_string(CqFailureMode m) { return m == CqFailureMode::flush ? "flush" : "fail"; }

inline CqFailureMode parse_cq_mode(const std::string& s) {
  if (s == "flush") return CqFailureMode::flush;
  if (s == "fail") return CqFailureMode::fail;
  throw std::invalid_argument("unknown cq mode '" + s + "' (expected flush or fail)");
}

/// Single-threaded stand-in for an asynchronous bidirectional streaming stack.
/// Every network effect is a separate step the scheduler chooses explicitly.
class SimTransport {
 public:
  struct FailedOp {
    OpKind kind;
    Epoch epoch;
  };

  struct Channel {
    Epoch epoch = 1;
    bool connected = true;
    std::deque<Batch> to_target;
    std::deque<Ack> to_replayer;
    bool write_unsurfaced = false;   // ok write tag not yet on the completion queue
    bool write_outstanding = false;  // armed and tag not yet consumed
    bool read_armed = false;         // waiting for an ack
    bool read_outstanding = false;   // armed and tag not yet consumed
    std::vector<FailedOp> failed;    // fail mode: failures not yet surfaced
  };

  SimTransport() = default;
  SimTransport(std::size_t targets, std::size_t ack_batching, CqFailureMode mode)
      : mode_(mode), channels_(targets), alive_(targets, true) {
    for (std::size_t i = 0; i < targets; ++i) targets_.emplace_back(static_cast<TargetId>(i + 1), ack_batching);
  }

  CqFailureMode mode() const noexcept { return mode_; }
  std::size_t target_count() const noexcept { return channels_.size(); }

  // --- StreamTransport ---

  void write(TargetId id, Epoch epoch, const Batch& batch, CompletionTag) {
    Channel& ch = channel(id);
    if (ch.write_outstanding && epoch == ch.epoch)
      throw ContractViolation("two writes outstanding on stream " + std::to_string(id));
    ch.write_outstanding = true;
    if (!usable(id, epoch)) {
      fail_op(ch, OpKind::write, epoch);
      return;
    }
    ch.to_target.push_back(batch);
    ch.write_unsurfaced = true;
  }

  void read(TargetId id, Epoch epoch, CompletionTag) {
    Channel& ch = channel(id);
    if (ch.read_outstanding && epoch == ch.epoch)
      throw ContractViolation("two reads outstanding on stream " + std::to_string(id));
    ch.read_outstanding = true;
    if (!usable(id, epoch)) {
      fail_op(ch, OpKind::read, epoch);
      return;
    }
    ch.read_armed = true;
  }

  std::optional<Index> get_last_ack(TargetId id) const {
    if (!alive_[id - 1]) return std::nullopt;
    return targets_[id - 1].get_last_ack();
  }

  // --- scheduler steps ---

  bool can_surface_write(TargetId id) const { return channel(id).write_unsurfaced; }
  void surface_write(TargetId id) {
    Channel& ch = channel(id);
    ch.write_unsurfaced = false;
    cq_.push_back({{id, OpKind::write}, ch.epoch, true, std::nullopt});
  }

  bool can_deliver(TargetId id) const {
    const Channel& ch = channel(id);
    return ch.connected && alive_[id - 1] && !ch.to_target.empty();
  }
  /// Hands the head batch to the target; acks join the return direction.
  std::pair<Batch, ConsumeResult> deliver(TargetId id, Timestamp now, const TargetStore::ApplyHook& hook) {
    Channel& ch = channel(id);
    Batch b = std::move(ch.to_target.front());
    ch.to_target.pop_front();
    ConsumeResult r = targets_[id - 1].consume(b, now, hook);
    for (const Ack& a : r.acks) ch.to_replayer.push_back(a);
    return {std::move(b), std::move(r)};
  }

  bool can_complete_read(TargetId id) const {
    const Channel& ch = channel(id);
    return ch.read_armed && ch.connected && !ch.to_replayer.empty();
  }
  Ack complete_read(TargetId id) {
    Channel& ch = channel(id);
    Ack a = ch.to_replayer.front();
    ch.to_replayer.pop_front();
    ch.read_armed = false;
    cq_.push_back({{id, OpKind::read}, ch.epoch, true, a});
    return a;
  }

  bool can_surface_failure(TargetId id) const { return !channel(id).failed.empty(); }
  FailedOp surface_failure(TargetId id) {
    Channel& ch = channel(id);
    FailedOp f = ch.failed.front();
    ch.failed.erase(ch.failed.begin());
    cq_.push_back({{id, f.kind}, f.epoch, false, std::nullopt});
    return f;
  }

  bool cq_empty() const noexcept { return cq_.empty(); }
  const std::deque<Completion>& cq() const noexcept { return cq_; }

  Completion pop_completion() {
    Completion c = std::move(cq_.front());
    cq_.pop_front();
    Channel& ch = channel(c.tag.target_id);
    if (c.epoch == ch.epoch) {
      if (c.tag.kind == OpKind::write) ch.write_outstanding = false;
      else ch.read_outstanding = false;
    }
    return c;
  }

  // --- faults ---

  bool alive(TargetId id) const { return alive_[id - 1]; }

  /// Target process dies; its connection drops and in-flight data is lost.
  void crash(TargetId id) {
    alive_[id - 1] = false;
    Channel& ch = channel(id);
    ch.connected = false;
    ch.to_target.clear();
    ch.to_replayer.clear();
    if (mode_ == CqFailureMode::flush) {
      ch.write_unsurfaced = false;
      ch.read_armed = false;
      ch.failed.clear();
      std::erase_if(cq_, [&](const Completion& c) { return c.tag.target_id == id; });
    } else {
      if (ch.write_unsurfaced) ch.failed.push_back({OpKind::write, ch.epoch});
      if (ch.read_armed) ch.failed.push_back({OpKind::read, ch.epoch});
      ch.write_unsurfaced = false;
      ch.read_armed = false;
    }
  }

  /// Target back up with a new connection. Returns the new epoch. Failures
  /// of the old epoch may still be waiting to surface.
  Epoch connect(TargetId id) {
    alive_[id - 1] = true;
    Channel& ch = channel(id);
    ch.epoch += 1;
    ch.connected = true;
    ch.to_target.clear();
    ch.to_replayer.clear();
    ch.write_unsurfaced = ch.write_outstanding = false;
    ch.read_armed = ch.read_outstanding = false;
    return ch.epoch;
  }

  /// Replayer process restarts: every stream and the completion queue are gone.
  void replayer_restart() {
    cq_.clear();
    for (std::size_t i = 0; i < channels_.size(); ++i) {
      Channel& ch = channels_[i];
      Epoch e = ch.epoch + 1;
      ch = Channel{};
      ch.epoch = e;
      ch.connected = alive_[i];
    }
  }

  Epoch epoch(TargetId id) const { return channel(id).epoch; }
  const Channel& channel(TargetId id) const { return channels_.at(id - 1); }
  const TargetStore& target(TargetId id) const { return targets_.at(id - 1); }
  TargetStore& target(TargetId id) { return targets_.at(id - 1); }

  template <class Out>
  void encode(Out& out) const {
    for (std::size_t i = 0; i < channels_.size(); ++i) {
      const Channel& ch = channels_[i];
      out.put(ch.epoch);
      out.put(ch.connected);
      out.put(ch.to_target.size());
      for (const auto& b : ch.to_target) out.put_indexes(b.messages);
      out.put(ch.to_replayer.size());
      for (const auto& a : ch.to_replayer) out.put(a.index);
      out.put((ch.write_unsurfaced ? 1u : 0u) | (ch.write_outstanding ? 2u : 0u) | (ch.read_armed ? 4u : 0u) |
              (ch.read_outstanding ? 8u : 0u));
      out.put(ch.failed.size());
      for (const auto& f : ch.failed) out.put(static_cast<std::uint64_t>(f.kind) + 2 * f.epoch);
      out.put(alive_[i]);
      targets_[i].encode(out);
    }
    out.put(cq_.size());
    for (const auto& c : cq_) {
      out.put(c.tag.encode());
      out.put(c.epoch);
      out.put(c.ok);
      out.put(c.response ? c.response->index + 1 : 0);
    }
  }

 private:
  Channel& channel(TargetId id) { return channels_.at(id - 1); }

  bool usable(TargetId id, Epoch epoch) const {
    const Channel& ch = channels_[id - 1];
    return ch.connected && alive_[id - 1] && ch.epoch == epoch;
  }

  void fail_op(Channel& ch, OpKind kind, Epoch epoch) {
    if (mode_ == CqFailureMode::fail) ch.failed.push_back({kind, epoch});
  }

  CqFailureMode mode_ = CqFailureMode::flush;
  std::vector<Channel> channels_;
  std::vector<bool> alive_;
  std::vector<TargetStore> targets_;
  std::deque<Completion> cq_;
};

}  // namespace logplayer::sim
