#pragma once

#include <concepts>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <vector>

#include "logplayer/types.hpp"

namespace logplayer {

enum class OpKind : std::uint8_t { write = 0, read = 1 };

/// (target id, operation kind) packed into one integer, as handed to the
/// asynchronous stream and returned by the completion queue.
struct CompletionTag {
  TargetId target_id = 0;
  OpKind kind = OpKind::write;

  constexpr std::uint64_t encode() const noexcept {
    return (static_cast<std::uint64_t>(target_id) << 1) | static_cast<std::uint64_t>(kind);
  }
  static constexpr CompletionTag decode(std::uint64_t v) noexcept {
    return {static_cast<TargetId>(v >> 1), static_cast<OpKind>(v & 1)};
  }
  bool operator==(const CompletionTag&) const = default;
};

/// Acknowledgment: the target's last consumed index.
struct Ack {
  Index index = 0;
  bool operator==(const Ack&) const = default;
};

/// What the completion queue yields: the tag, the stream epoch it was armed
/// under, whether it succeeded, and for reads the response.
struct Completion {
  CompletionTag tag;
  Epoch epoch = 0;
  bool ok = true;
  std::optional<Ack> response;
};

/// What the dispatcher needs from a streaming transport. Writes and reads
/// never block; their outcome arrives later as a Completion.
template <class T>
concept StreamTransport = requires(T t, TargetId id, Epoch e, const Batch& b, CompletionTag tag) {
  t.write(id, e, b, tag);
  t.read(id, e, tag);
  { t.get_last_ack(id) } -> std::convertible_to<std::optional<Index>>;
};

/// Blocking multi-producer, single-consumer completion queue.
class CompletionQueue {
 public:
  void push(Completion c) {
    {
      std::lock_guard g(mu_);
      items_.push_back(std::move(c));
    }
    cv_.notify_one();
  }

  /// Blocks until an item is available; nullopt once stopped and drained.
  std::optional<Completion> next(std::stop_token st) {
    std::unique_lock lock(mu_);
    cv_.wait(lock, st, [&] { return !items_.empty(); });
    if (items_.empty()) return std::nullopt;
    Completion c = std::move(items_.front());
    items_.pop_front();
    return c;
  }

  std::size_t size() const {
    std::lock_guard g(mu_);
    return items_.size();
  }

 private:
  mutable std::mutex mu_;
  std::condition_variable_any cv_;
  std::deque<Completion> items_;
};

struct AppliedRecord {
  Index index = 0;
  bool is_dummy = false;
  std::size_t payload_size = 0;
};

/// Outcome of consuming one batch at a target.
struct ConsumeResult {
  std::vector<Ack> acks;
  // Messages whose index did not exceed the persisted index: a duplicate or
  // out-of-order delivery. They are rejected, not applied.
  std::vector<Index> rejected;
};

/// Durable side of a shard: the applied list and the persisted index are
/// updated together and survive crashes.
class TargetStore {
 public:
  using ApplyHook = std::function<void(const Message&, Timestamp apply_time)>;

  explicit TargetStore(TargetId id = 0, std::size_t ack_batching = 1)
      : id_(id), ack_batching_(ack_batching) {}

  TargetId id() const noexcept { return id_; }
  Index persisted_index() const noexcept { return persisted_; }
  const std::vector<AppliedRecord>& applied() const noexcept { return applied_; }
  std::size_t ack_batching() const noexcept { return ack_batching_; }

  /// Applies messages in order. Acks every `ack_batching`-th message (0: none
  /// mid-batch) and at the end of the batch, each carrying the persisted index.
  ConsumeResult consume(const Batch& batch, Timestamp now, const ApplyHook& hook = {}) {
    ConsumeResult r;
    std::size_t since_ack = 0;
    for (const auto& m : batch.messages) {
      if (m.index <= persisted_) {
        r.rejected.push_back(m.index);
        continue;
      }
      applied_.push_back({m.index, m.is_dummy, m.payload ? m.payload->size() : 0});
      persisted_ = m.index;
      if (hook) hook(m, now);
      if (++since_ack == ack_batching_ && ack_batching_ > 0) {
        r.acks.push_back({persisted_});
        since_ack = 0;
      }
    }
    if (since_ack > 0) r.acks.push_back({persisted_});
    return r;
  }

  // Survives crash/restart: nothing to do, all state is durable.
  Index get_last_ack() const noexcept { return persisted_; }

  void set_initial_progress(Index persisted) { persisted_ = persisted; }

  template <class Out>
  void encode(Out& out) const {
    out.put(persisted_);
    out.put(applied_.size());
    for (const auto& a : applied_) out.put(a.index * 2 + (a.is_dummy ? 1 : 0));
  }

 private:
  TargetId id_;
  std::size_t ack_batching_;
  Index persisted_ = 0;
  std::vector<AppliedRecord> applied_;
};

}  // namespace logplayer
