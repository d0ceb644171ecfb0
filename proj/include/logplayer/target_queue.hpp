#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <vector>

#include "logplayer/types.hpp"

namespace logplayer {

enum class QueueState : std::uint8_t {
  normal,              // N
  recovery_fetching,   // RF
  fetching_completed,  // FC
  suspended,           // S
};

inline const char* to_string(QueueState s) {
  switch (s) {
    case QueueState::normal: return "N";
    case QueueState::recovery_fetching: return "RF";
    case QueueState::fetching_completed: return "FC";
    case QueueState::suspended: return "S";
  }
  return "?";
}

// Bit for the (from, to) pair in a transition mask.
constexpr std::uint16_t transition_bit(QueueState from, QueueState to) {
  return static_cast<std::uint16_t>(1u << (static_cast<unsigned>(from) * 4 + static_cast<unsigned>(to)));
}

constexpr std::uint16_t kLegalTransitions =
    transition_bit(QueueState::normal, QueueState::suspended) |
    transition_bit(QueueState::recovery_fetching, QueueState::suspended) |
    transition_bit(QueueState::fetching_completed, QueueState::suspended) |
    transition_bit(QueueState::suspended, QueueState::recovery_fetching) |
    transition_bit(QueueState::suspended, QueueState::normal) |
    transition_bit(QueueState::recovery_fetching, QueueState::fetching_completed) |
    transition_bit(QueueState::recovery_fetching, QueueState::normal) |
    transition_bit(QueueState::fetching_completed, QueueState::normal);

struct QueueSnapshot {
  QueueState state = QueueState::normal;
  std::vector<Index> normal;
  std::vector<Index> catchup;
  Term current_term = 1;
  std::vector<Index> popped;
  std::optional<std::vector<Index>> current_batch;
  std::uint64_t dropped_suspended = 0;
  std::uint64_t dropped_stale = 0;
  std::uint16_t transitions = 0;
};

/// Per-target dual queue (normal + catchup) with the N/RF/FC/S state machine,
/// batch formation, and retention of sent batches until acknowledged.
///
/// Two lock regions: `queue_mu_` covers push, suspend, next_batch and the
/// state changes made on target restart; `popped_mu_` covers pop_batch and
/// erase. front() and pop() assume the caller already holds `queue_mu_`.
template <class Mutex = std::mutex>
class TargetQueue {
 public:
  explicit TargetQueue(TargetId id = 0, Mutant mutant = Mutant::none) : id_(id), mutant_(mutant) {}

  TargetId id() const noexcept { return id_; }

  /// Returns whether the message was accepted.
  bool push(Message m, bool is_normal, Term term) {
    std::lock_guard g(queue_mu_);
    if (state_ == QueueState::suspended) {
      ++dropped_suspended_;
      return false;
    }
    const bool term_ok = term == current_term_ || mutant_ == Mutant::no_term;
    if (is_normal) {
      normal_.push_back(std::move(m));
    } else if (term_ok) {
      catchup_.push_back(std::move(m));
    } else {
      ++dropped_stale_;
      return false;
    }
    return true;
  }

  // Requires queue_mu_.
  const Message* front() {
    const bool recovering =
        state_ == QueueState::recovery_fetching || state_ == QueueState::fetching_completed;
    if (recovering && !catchup_.empty()) return &catchup_.front();
    if (state_ == QueueState::fetching_completed && catchup_.empty()) {
      if (mutant_ == Mutant::no_fc_transition) return nullptr;
      set_state(QueueState::normal);
      return normal_.empty() ? nullptr : &normal_.front();
    }
    if (state_ == QueueState::normal && !normal_.empty()) return &normal_.front();
    return nullptr;
  }

  // Requires queue_mu_.
  void pop() {
    const bool recovering =
        state_ == QueueState::recovery_fetching || state_ == QueueState::fetching_completed;
    if (recovering && !catchup_.empty()) {
      catchup_.pop_front();
      if (state_ == QueueState::fetching_completed && catchup_.empty() &&
          mutant_ != Mutant::no_fc_transition)
        set_state(QueueState::normal);
    } else if (state_ == QueueState::normal && !normal_.empty()) {
      normal_.pop_front();
    }
  }

  void suspend() {
    std::scoped_lock g(queue_mu_, popped_mu_);
    set_state(QueueState::suspended);
    normal_.clear();
    catchup_.clear();
    popped_.clear();
    current_batch_.reset();
  }

  /// Returns true when the caller should trigger a send for this target.
  /// A send is requested on both outcomes: entries pushed to the normal queue
  /// while fetching still need a trigger once the queue is back in N.
  bool fetching_completed(Term term) {
    std::lock_guard g(queue_mu_);
    if (state_ != QueueState::recovery_fetching) return false;
    if (current_term_ != term && mutant_ != Mutant::no_term) return false;
    set_state(catchup_.empty() ? QueueState::normal : QueueState::fetching_completed);
    return true;
  }

  /// Forms up to `max_size` messages into the current batch.
  Batch next_batch(std::size_t max_size) {
    std::lock_guard g(queue_mu_);
    Batch batch;
    const Message* f = front();
    while (batch.size() < max_size && f != nullptr) {
      batch.messages.push_back(*f);
      pop();
      f = front();
    }
    current_batch_ = batch;
    return batch;
  }

  /// Moves the current batch into `popped`, keyed by its last index, and
  /// returns that key. No-op when there is no (nonempty) current batch.
  std::optional<Index> pop_batch() {
    std::lock_guard g(popped_mu_);
    if (!current_batch_ || current_batch_->empty()) return std::nullopt;
    const Index last = current_batch_->last_index();
    popped_[last] = std::move(*current_batch_);
    current_batch_.reset();
    return last;
  }

  void erase(Index index) {
    std::lock_guard g(popped_mu_);
    popped_.erase(index);
  }

  /// Target restart: bump the term and enter RF. Returns the new term.
  Term begin_recovery() {
    std::lock_guard g(queue_mu_);
    ++current_term_;
    set_state(QueueState::recovery_fetching);
    return current_term_;
  }

  /// Target restart with nothing missed.
  void resume_normal() {
    std::lock_guard g(queue_mu_);
    set_state(QueueState::normal);
  }

  QueueState state() const {
    std::lock_guard g(queue_mu_);
    return state_;
  }

  Term current_term() const {
    std::lock_guard g(queue_mu_);
    return current_term_;
  }

  // Mask of every transition taken so far.
  std::uint16_t transitions() const {
    std::lock_guard g(queue_mu_);
    return transitions_;
  }

  QueueSnapshot snapshot() const {
    std::scoped_lock g(queue_mu_, popped_mu_);
    QueueSnapshot s;
    s.state = state_;
    for (const auto& m : normal_) s.normal.push_back(m.index);
    for (const auto& m : catchup_) s.catchup.push_back(m.index);
    s.current_term = current_term_;
    for (const auto& [k, _] : popped_) s.popped.push_back(k);
    if (current_batch_) {
      s.current_batch.emplace();
      for (const auto& m : current_batch_->messages) s.current_batch->push_back(m.index);
    }
    s.dropped_suspended = dropped_suspended_;
    s.dropped_stale = dropped_stale_;
    s.transitions = transitions_;
    return s;
  }

  // Appends a canonical encoding of protocol-relevant state (no counters).
  template <class Out>
  void encode(Out& out) const {
    out.put(static_cast<std::uint64_t>(state_));
    out.put(current_term_);
    out.put_indexes(normal_);
    out.put_indexes(catchup_);
    out.put(popped_.size());
    for (const auto& [k, b] : popped_) {
      out.put(k);
      out.put_indexes(b.messages);
    }
    out.put(current_batch_ ? current_batch_->size() + 1 : 0);
    if (current_batch_) out.put_indexes(current_batch_->messages);
  }

 private:
  void set_state(QueueState to) {
    if (to != state_) transitions_ |= transition_bit(state_, to);
    state_ = to;
  }

  TargetId id_;
  Mutant mutant_;
  QueueState state_ = QueueState::normal;
  Term current_term_ = 1;
  std::deque<Message> normal_;
  std::deque<Message> catchup_;
  std::map<Index, Batch> popped_;
  std::optional<Batch> current_batch_;
  std::uint64_t dropped_suspended_ = 0;
  std::uint64_t dropped_stale_ = 0;
  std::uint16_t transitions_ = 0;
  mutable Mutex queue_mu_;
  mutable Mutex popped_mu_;
};

}  // namespace logplayer
