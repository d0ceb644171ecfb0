#pragma once

#include <algorithm>
#include <atomic>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <vector>

#include "logplayer/target_queue.hpp"
#include "logplayer/transport.hpp"
#include "logplayer/types.hpp"

namespace logplayer {

// std::atomic that can be copied, so simulated worlds stay value types.
template <class T>
class CopyableAtomic {
 public:
  CopyableAtomic(T v = T{}) noexcept : v_(v) {}
  CopyableAtomic(const CopyableAtomic& o) noexcept : v_(o.load()) {}
  CopyableAtomic& operator=(const CopyableAtomic& o) noexcept {
    store(o.load());
    return *this;
  }
  T load() const noexcept { return v_.load(std::memory_order_acquire); }
  void store(T v) noexcept { v_.store(v, std::memory_order_release); }

 private:
  std::atomic<T> v_;
};

enum class Readiness : std::uint8_t { ready, not_ready };

struct StreamHandle {
  TargetId target_id = 0;
  Readiness write_status = Readiness::ready;
  Readiness read_status = Readiness::ready;
  std::optional<Ack> pending_response;
  Epoch epoch = 0;
  bool connected = true;
};

struct DispatcherConfig {
  std::size_t max_batch_size = 16;
  // Dummy interval E: every E normal dispatches, targets lagging more than E
  // behind current_index get a dummy. 0 disables dummies.
  Index dummy_interval = 0;
  Mutant mutant = Mutant::none;
};

struct DispatchEvent {
  Index index = 0;
  bool is_normal = true;
  Term term = 0;
  std::vector<TargetId> pushed;
  Timestamp dispatch_time = 0;
};

struct DispatcherHooks {
  std::function<void(const DispatchEvent&)> on_dispatch;
  std::function<void(TargetId, Index)> on_dummy;
  std::function<void(TargetId, Epoch, const Batch&)> on_write;
};

/// Routes entries into per-target queues and drives the per-target streams.
///
/// Lock regions: `dispatch_mu_` (dispatch bodies and target restart),
/// per-target `send_mu` (send_next, write completion, stream re-attach) and
/// per-target `read_mu` (read_next, read completion, stream re-attach).
template <StreamTransport Transport, class Mutex = std::mutex>
class Dispatcher {
  struct Lane {
    Lane(TargetId id, Mutant mutant) : queue(id, mutant) { stream.target_id = id; }

    TargetQueue<Mutex> queue;
    StreamHandle stream;
    CopyableAtomic<Index> last_ack{0};
    Index last_pushed = 0;  // highest index accepted by the queue
    mutable Mutex send_mu;
    mutable Mutex read_mu;
  };

 public:
  Dispatcher(Transport& io, std::size_t target_count, DispatcherConfig cfg = {})
      : io_(&io), cfg_(cfg) {
    if (cfg_.max_batch_size == 0) throw std::invalid_argument("max_batch_size must be positive");
    for (std::size_t i = 0; i < target_count; ++i)
      lanes_.emplace_back(static_cast<TargetId>(i + 1), cfg_.mutant);
  }

  // Only meaningful for copyable lock policies.
  void rebind(Transport& io) noexcept { io_ = &io; }
  void set_hooks(DispatcherHooks hooks) { hooks_ = std::move(hooks); }

  Transport& transport() noexcept { return *io_; }
  const DispatcherConfig& config() const noexcept { return cfg_; }
  std::size_t target_count() const noexcept { return lanes_.size(); }

  void dispatch(const LogEntry& e, bool is_normal, Term term, std::optional<TargetId> only = std::nullopt,
                Timestamp now = 0) {
    std::lock_guard g(dispatch_mu_);
    DispatchEvent ev{e.index, is_normal, term, {}, now};
    for (TargetId id : e.target_ids) {
      if (only && id != *only) continue;
      Lane& l = lane(id);
      if (l.last_ack.load() < e.index) {
        if (l.queue.push(e.message_for(id, now), is_normal, term)) {
          l.last_pushed = std::max(l.last_pushed, e.index);
          ev.pushed.push_back(id);
        }
        send_next(id);
        read_next(id);
      }
    }
    if (is_normal) {
      current_index_.store(e.index);
      ++normal_dispatches_;
    }
    if (hooks_.on_dispatch) hooks_.on_dispatch(ev);
    if (is_normal && cfg_.dummy_interval > 0 && normal_dispatches_ % cfg_.dummy_interval == 0)
      emit_dummies_locked(now);
  }

  void send_next(TargetId id) {
    Lane& l = lane(id);
    std::lock_guard g(l.send_mu);
    send_locked(l);
  }

  void read_next(TargetId id) {
    Lane& l = lane(id);
    std::lock_guard g(l.read_mu);
    read_locked(l);
  }

  /// Consumer entry point. Failed completions are left to the health
  /// checker; completions armed under an earlier stream epoch are stale.
  /// Returns whether the completion was acted on.
  bool on_completion(const Completion& c) {
    if (!c.ok) return false;
    Lane& l = lane(c.tag.target_id);
    if (c.tag.kind == OpKind::write) {
      std::lock_guard g(l.send_mu);
      if (c.epoch != l.stream.epoch) return false;
      write_complete_locked(l);
    } else {
      if (!c.response) throw ContractViolation("read completion without a response");
      std::lock_guard g(l.read_mu);
      if (c.epoch != l.stream.epoch) return false;
      l.stream.pending_response = c.response;
      read_complete_locked(l);
    }
    return true;
  }

  void on_write_complete(TargetId id) {
    Lane& l = lane(id);
    std::lock_guard g(l.send_mu);
    write_complete_locked(l);
  }

  void on_read_complete(TargetId id, Ack ack) {
    Lane& l = lane(id);
    std::lock_guard g(l.read_mu);
    l.stream.pending_response = ack;
    read_complete_locked(l);
  }

  /// Called by a recovery fetcher after its last dispatch.
  void fetching_completed(TargetId id, Term term) {
    if (lane(id).queue.fetching_completed(term)) send_next(id);
  }

  // Every E normal dispatches. Requires dispatch_mu_.
  void emit_dummies_locked(Timestamp now) {
    const Index ci = current_index_.load();
    for (auto& l : lanes_) {
      const TargetId id = l.stream.target_id;
      if (l.last_ack.load() + cfg_.dummy_interval >= ci) continue;
      if (l.queue.state() != QueueState::normal) continue;
      if (l.last_pushed >= ci) continue;  // index already on its way; a dummy would duplicate it
      Message dummy;
      dummy.index = ci;
      dummy.is_dummy = true;
      dummy.commit_time = now;
      dummy.dispatch_time = now;
      if (!l.queue.push(std::move(dummy), true, l.queue.current_term())) continue;
      l.last_pushed = ci;
      if (hooks_.on_dummy) hooks_.on_dummy(id, ci);
      send_next(id);
      read_next(id);
    }
  }

  std::unique_lock<Mutex> dispatch_region() { return std::unique_lock<Mutex>(dispatch_mu_); }

  /// New connection for a target: fresh epoch, both directions ready.
  void attach_stream(TargetId id, Epoch epoch) {
    Lane& l = lane(id);
    std::scoped_lock g(l.send_mu, l.read_mu);
    l.stream.epoch = epoch;
    l.stream.connected = true;
    l.stream.write_status = Readiness::ready;
    l.stream.read_status = Readiness::ready;
    l.stream.pending_response.reset();
  }

  void detach_stream(TargetId id) {
    Lane& l = lane(id);
    std::scoped_lock g(l.send_mu, l.read_mu);
    l.stream.connected = false;
  }

  void set_last_ack(TargetId id, Index v) {
    Lane& l = lane(id);
    l.last_ack.store(v);
    l.last_pushed = std::max(l.last_pushed, v);
  }
  Index last_ack(TargetId id) const { return lane(id).last_ack.load(); }
  std::vector<Index> last_acks() const {
    std::vector<Index> out;
    for (const auto& l : lanes_) out.push_back(l.last_ack.load());
    return out;
  }

  Index current_index() const noexcept { return current_index_.load(); }
  void set_current_index(Index v) { current_index_.store(v); }

  TargetQueue<Mutex>& queue(TargetId id) { return lane(id).queue; }
  const TargetQueue<Mutex>& queue(TargetId id) const { return lane(id).queue; }

  StreamHandle stream(TargetId id) const {
    const Lane& l = lane(id);
    std::scoped_lock g(l.send_mu, l.read_mu);
    return l.stream;
  }

  template <class Out>
  void encode(Out& out) const {
    out.put(current_index_.load());
    out.put(cfg_.dummy_interval ? normal_dispatches_ % cfg_.dummy_interval : 0);
    for (const auto& l : lanes_) {
      l.queue.encode(out);
      out.put(static_cast<std::uint64_t>(l.stream.write_status));
      out.put(static_cast<std::uint64_t>(l.stream.read_status));
      out.put(l.stream.epoch);
      out.put(l.stream.connected);
      out.put(l.last_ack.load());
      out.put(l.last_pushed);
    }
  }

 private:
  Lane& lane(TargetId id) {
    if (id < 1 || id > lanes_.size()) throw std::out_of_range("unknown target id");
    return lanes_[id - 1];
  }
  const Lane& lane(TargetId id) const {
    if (id < 1 || id > lanes_.size()) throw std::out_of_range("unknown target id");
    return lanes_[id - 1];
  }

  // Requires l.send_mu.
  void send_locked(Lane& l) {
    if (l.stream.write_status != Readiness::ready) return;
    Batch batch = l.queue.next_batch(cfg_.max_batch_size);
    if (batch.empty() || l.queue.state() == QueueState::suspended) return;
    const TargetId id = l.stream.target_id;
    if (hooks_.on_write) hooks_.on_write(id, l.stream.epoch, batch);
    io_->write(id, l.stream.epoch, batch, CompletionTag{id, OpKind::write});
    l.stream.write_status = Readiness::not_ready;
  }

  // Requires l.read_mu.
  void read_locked(Lane& l) {
    if (l.stream.read_status != Readiness::ready) return;
    const TargetId id = l.stream.target_id;
    io_->read(id, l.stream.epoch, CompletionTag{id, OpKind::read});
    l.stream.read_status = Readiness::not_ready;
  }

  // Requires l.send_mu.
  void write_complete_locked(Lane& l) {
    // An ack can overtake its own write completion; retire the batch now.
    if (auto key = l.queue.pop_batch(); key && l.last_ack.load() >= *key) l.queue.erase(*key);
    l.stream.write_status = Readiness::ready;
    send_locked(l);
  }

  // Requires l.read_mu.
  void read_complete_locked(Lane& l) {
    const Ack ack = *l.stream.pending_response;
    l.last_ack.store(ack.index);
    l.queue.erase(ack.index);
    l.stream.read_status = Readiness::ready;
    read_locked(l);
  }

  Transport* io_;
  DispatcherConfig cfg_;
  std::deque<Lane> lanes_;  // deque: Lane is not movable with real mutexes
  CopyableAtomic<Index> current_index_{0};
  std::uint64_t normal_dispatches_ = 0;
  DispatcherHooks hooks_;
  mutable Mutex dispatch_mu_;
};

}  // namespace logplayer
