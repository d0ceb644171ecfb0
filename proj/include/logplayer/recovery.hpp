#pragma once

#include <algorithm>
#include <optional>
#include <stdexcept>

#include "logplayer/dispatcher.hpp"
#include "logplayer/log_service.hpp"

namespace logplayer {

struct HealthEvent {
  enum class Kind : std::uint8_t { down, up };
  TargetId target_id = 0;
  Kind kind = Kind::down;
  Timestamp time = 0;
};

/// Outcome of a target restart, kept for tracing.
struct TargetUpResult {
  Term term = 0;
  Index last_ack = 0;
  Index current_index = 0;
  std::optional<FetcherSpec> recovery;  // set when the target missed entries
  bool aborted = false;                 // target gone again before it answered
};

/// Fresh replayer: learn every target's durable progress and start the main
/// stream just past the slowest one. Streams must already be attached.
/// Throws when a target cannot answer; callers retry once it is reachable.
template <class D>
FetcherSpec on_replayer_restart(D& d) {
  auto region = d.dispatch_region();
  Index min_ack = 0;
  for (TargetId id = 1; id <= d.target_count(); ++id) {
    auto last = d.transport().get_last_ack(id);
    if (!last) throw std::runtime_error("replayer restart: target " + std::to_string(id) + " unreachable");
    d.set_last_ack(id, *last);
    min_ack = id == 1 ? *last : std::min(min_ack, *last);
  }
  d.set_current_index(min_ack);
  return FetcherSpec::normal(min_ack + 1);
}

template <class D>
void on_target_down(D& d, TargetId id) {
  d.queue(id).suspend();
  d.detach_stream(id);
}

/// Target reconnected under `epoch`. Runs inside the dispatch region so the
/// recovery range ends exactly where the main stream's pushes begin.
template <class D>
TargetUpResult on_target_up(D& d, TargetId id, Epoch epoch) {
  auto region = d.dispatch_region();
  TargetUpResult r;
  r.term = d.queue(id).begin_recovery();
  d.attach_stream(id, epoch);
  r.current_index = d.current_index();
  auto last = d.transport().get_last_ack(id);
  if (!last) {
    r.aborted = true;
    return r;
  }
  r.last_ack = *last;
  d.set_last_ack(id, *last);
  d.read_next(id);
  if (*last < r.current_index) {
    r.recovery = FetcherSpec::recovery(id, *last + 1, r.current_index, r.term);
  } else {
    d.queue(id).resume_normal();
    d.send_next(id);
  }
  return r;
}

/// Explicit dummy round, outside the automatic every-E trigger in dispatch.
template <class D>
void maybe_emit_dummies(D& d, Timestamp now) {
  if (d.config().dummy_interval == 0) return;
  auto region = d.dispatch_region();
  d.emit_dummies_locked(now);
}

}  // namespace logplayer
