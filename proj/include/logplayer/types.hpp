#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace logplayer {

using Index = std::uint64_t;
using TargetId = std::uint32_t;
using Term = std::uint64_t;
using Epoch = std::uint64_t;

// Nanoseconds in the threaded runtime, scheduler steps in simulation.
using Timestamp = std::int64_t;

using Bytes = std::vector<std::byte>;
using PayloadRef = std::shared_ptr<const Bytes>;

// Raised when a caller breaks an interface contract (for example two writes
// outstanding on one stream). The simulator turns these into counterexamples.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Lock policy for single-threaded simulation. Keeps the protocol objects
// copyable so the explorer can branch on world state.
struct NullMutex {
  void lock() noexcept {}
  void unlock() noexcept {}
  bool try_lock() noexcept { return true; }
};

// Protocol variants used to check that the verification harness notices
// when a load-bearing piece of the protocol is taken out.
enum class Mutant : std::uint8_t {
  none,
  no_term,           // push ignores the term of recovery messages
  no_fc_transition,  // FC never falls back to N once catchup drains
};

inline const char* to_string(Mutant m) {
  switch (m) {
    case Mutant::none: return "none";
    case Mutant::no_term: return "no-term";
    case Mutant::no_fc_transition: return "no-fc-transition";
  }
  return "?";
}

inline Mutant parse_mutant(const std::string& s) {
  if (s.empty() || s == "none") return Mutant::none;
  if (s == "no-term") return Mutant::no_term;
  if (s == "no-fc-transition") return Mutant::no_fc_transition;
  throw std::invalid_argument("unknown mutant '" + s + "'");
}

/// One per-target message as it travels through a target queue and a stream.
struct Message {
  Index index = 0;
  PayloadRef payload;  // null for dummies
  bool is_dummy = false;
  Timestamp commit_time = 0;
  Timestamp dispatch_time = 0;
};

struct Batch {
  std::vector<Message> messages;

  bool empty() const noexcept { return messages.empty(); }
  std::size_t size() const noexcept { return messages.size(); }
  Index last_index() const { return messages.back().index; }
};

/// A write-ahead-log record. Payloads are keyed by exactly the target ids.
struct LogEntry {
  Index index = 0;
  std::vector<TargetId> target_ids;  // sorted, unique
  std::map<TargetId, PayloadRef> payloads;
  Timestamp commit_time = 0;
  bool is_dummy = false;

  bool targets(TargetId id) const {
    return std::binary_search(target_ids.begin(), target_ids.end(), id);
  }

  bool well_formed() const {
    if (index < 1) return false;
    if (is_dummy) return target_ids.size() == 1 && payloads.empty();
    if (target_ids.empty() || payloads.size() != target_ids.size()) return false;
    if (!std::is_sorted(target_ids.begin(), target_ids.end()) ||
        std::adjacent_find(target_ids.begin(), target_ids.end()) != target_ids.end())
      return false;
    return std::all_of(target_ids.begin(), target_ids.end(),
                       [&](TargetId id) { return payloads.count(id) == 1; });
  }

  Message message_for(TargetId id, Timestamp dispatch_time) const {
    Message m;
    m.index = index;
    if (auto it = payloads.find(id); it != payloads.end()) m.payload = it->second;
    m.is_dummy = is_dummy;
    m.commit_time = commit_time;
    m.dispatch_time = dispatch_time;
    return m;
  }
};

inline PayloadRef make_payload(std::size_t size, std::byte fill = std::byte{0}) {
  return std::make_shared<const Bytes>(size, fill);
}

}  // namespace logplayer
