#pragma once

#include <chrono>
#include <condition_variable>
#include <functional>
#include <istream>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <stop_token>
#include <string>
#include <thread>
#include <vector>

#include "logplayer/types.hpp"

namespace logplayer {

inline Timestamp steady_now_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

/// In-memory durable log. Appends are serialized; reads of a published index
/// always return the same entry object.
class LogService {
 public:
  using Clock = std::function<Timestamp()>;
  // Simulated fsync + replication delay, applied between stamping the
  // commit time and publishing the entry.
  using LatencyModel = std::function<std::chrono::nanoseconds(Index)>;

  explicit LogService(Clock clock = steady_now_ns, LatencyModel latency = {})
      : clock_(std::move(clock)), latency_(std::move(latency)) {}

  LogService(const LogService&) = delete;
  LogService& operator=(const LogService&) = delete;

  Index append(std::vector<TargetId> target_ids, std::map<TargetId, PayloadRef> payloads) {
    std::sort(target_ids.begin(), target_ids.end());
    target_ids.erase(std::unique(target_ids.begin(), target_ids.end()), target_ids.end());
    auto entry = std::make_shared<LogEntry>();
    entry->target_ids = std::move(target_ids);
    entry->payloads = std::move(payloads);
    entry->commit_time = clock_();

    std::unique_lock lock(append_mu_);
    const Index index = size() + 1;
    entry->index = index;
    if (!entry->well_formed())
      throw std::invalid_argument("append: target_ids must be nonempty and match payload keys");
    if (latency_) {
      if (auto d = latency_(entry->index); d.count() > 0) std::this_thread::sleep_for(d);
    }
    {
      std::lock_guard g(mu_);
      entries_.push_back(std::move(entry));
    }
    cv_.notify_all();
    return index;
  }

  /// Null when the index is not yet available.
  std::shared_ptr<const LogEntry> read(Index index) const {
    std::lock_guard g(mu_);
    if (index < 1 || index > entries_.size()) return nullptr;
    return entries_[index - 1];
  }

  Index size() const {
    std::lock_guard g(mu_);
    return entries_.size();
  }

  /// Blocks until `index` is readable or the token is stopped.
  std::shared_ptr<const LogEntry> wait_read(Index index, std::stop_token st) const {
    std::unique_lock lock(mu_);
    std::condition_variable_any& cv = cv_;
    cv.wait(lock, st, [&] { return index <= entries_.size(); });
    if (index > entries_.size()) return nullptr;
    return entries_[index - 1];
  }

  void write_records(std::ostream& out) const;

 private:
  Clock clock_;
  LatencyModel latency_;
  std::mutex append_mu_;
  mutable std::mutex mu_;
  mutable std::condition_variable_any cv_;
  std::vector<std::shared_ptr<const LogEntry>> entries_;
};

// One line per entry: `index=3 targets=1,2 sizes=1024,0 commit=17`.
inline void LogService::write_records(std::ostream& out) const {
  std::lock_guard g(mu_);
  for (const auto& e : entries_) {
    out << "index=" << e->index << " targets=";
    for (std::size_t i = 0; i < e->target_ids.size(); ++i)
      out << (i ? "," : "") << e->target_ids[i];
    out << " sizes=";
    for (std::size_t i = 0; i < e->target_ids.size(); ++i) {
      const auto& p = e->payloads.at(e->target_ids[i]);
      out << (i ? "," : "") << (p ? p->size() : 0);
    }
    out << " commit=" << e->commit_time << '\n';
  }
}

struct LogRecord {
  Index index = 0;
  std::vector<TargetId> target_ids;
  std::vector<std::size_t> sizes;
  Timestamp commit_time = 0;
};

inline std::vector<LogRecord> read_log_records(std::istream& in) {
  std::vector<LogRecord> out;
  std::string line;
  std::size_t lineno = 0;
  auto split_csv = [](const std::string& s) {
    std::vector<std::uint64_t> v;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) v.push_back(std::stoull(item));
    return v;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    LogRecord r;
    std::istringstream ls(line);
    std::string field;
    try {
      while (ls >> field) {
        auto eq = field.find('=');
        if (eq == std::string::npos) throw std::invalid_argument(field);
        auto key = field.substr(0, eq);
        auto value = field.substr(eq + 1);
        if (key == "index") r.index = std::stoull(value);
        else if (key == "targets")
          for (auto t : split_csv(value)) r.target_ids.push_back(static_cast<TargetId>(t));
        else if (key == "sizes")
          for (auto s : split_csv(value)) r.sizes.push_back(s);
        else if (key == "commit") r.commit_time = std::stoll(value);
        else throw std::invalid_argument(key);
      }
    } catch (const std::exception&) {
      throw std::runtime_error("log records line " + std::to_string(lineno) + ": malformed field '" +
                               field + "'");
    }
    out.push_back(std::move(r));
  }
  return out;
}

enum class FetcherKind : std::uint8_t { normal, recovery };

/// Describes a fetch stream: the unbounded main stream, or a bounded
/// recovery range for a single target under a given term.
struct FetcherSpec {
  FetcherKind kind = FetcherKind::normal;
  Index start_index = 1;
  std::optional<Index> end_index;  // unbounded iff normal
  Term term = 0;                   // recovery only
  TargetId target = 0;             // recovery only

  static FetcherSpec normal(Index start) { return {FetcherKind::normal, start, std::nullopt, 0, 0}; }
  static FetcherSpec recovery(TargetId target, Index start, Index end, Term term) {
    return {FetcherKind::recovery, start, end, term, target};
  }

  bool valid() const {
    if (start_index < 1) return false;
    if (kind == FetcherKind::normal) return !end_index.has_value();
    return end_index.has_value() && *end_index + 1 >= start_index && term >= 1 && target >= 1;
  }

  bool operator==(const FetcherSpec&) const = default;
};

/// Position of a fetcher within its range. The simulator advances cursors one
/// dispatch per step; `run_fetcher` drives one to completion on a thread.
struct FetchCursor {
  enum class Step : std::uint8_t { dispatched, blocked, completed };

  FetcherSpec spec;
  Index next = 0;
  bool done = false;

  explicit FetchCursor(FetcherSpec s) : spec(s), next(s.start_index) {}

  bool exhausted() const { return spec.end_index && next > *spec.end_index; }

  // Dispatcher needs: dispatch(entry, is_normal, term, only_target, time)
  // and fetching_completed(target, term).
  template <class D>
  Step step(const LogService& log, D& dispatcher, Timestamp now) {
    if (done) return Step::completed;
    if (exhausted()) {
      dispatcher.fetching_completed(spec.target, spec.term);
      done = true;
      return Step::completed;
    }
    auto entry = log.read(next);
    if (!entry) return Step::blocked;
    dispatch_one(*entry, dispatcher, now);
    return Step::dispatched;
  }

  template <class D>
  void dispatch_one(const LogEntry& entry, D& dispatcher, Timestamp now) {
    if (spec.kind == FetcherKind::normal)
      dispatcher.dispatch(entry, true, spec.term, std::nullopt, now);
    else
      dispatcher.dispatch(entry, false, spec.term, spec.target, now);
    ++next;
  }
};

/// Runs a fetcher on the calling thread until it completes (recovery) or the
/// stop token fires (normal fetchers never finish on their own).
template <class D>
void run_fetcher(const FetcherSpec& spec, const LogService& log, D& dispatcher, std::stop_token st,
                 const LogService::Clock& clock = steady_now_ns) {
  FetchCursor cursor(spec);
  while (!st.stop_requested()) {
    if (cursor.exhausted()) {
      cursor.step(log, dispatcher, clock());
      return;
    }
    auto entry = log.wait_read(cursor.next, st);
    if (!entry) return;
    cursor.dispatch_one(*entry, dispatcher, clock());
  }
}

}  // namespace logplayer
