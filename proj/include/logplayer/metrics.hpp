#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <vector>

#include "logplayer/types.hpp"

namespace logplayer {

/// One delivered entry at one target.
struct DeliveryRecord {
  Index index = 0;
  TargetId target = 0;
  Timestamp commit_time = 0;
  Timestamp dispatch_time = 0;
  Timestamp apply_time = 0;

  Timestamp apply_delay() const noexcept { return apply_time - commit_time; }
  Timestamp replayer_delay() const noexcept { return apply_time - dispatch_time; }
  bool ordered() const noexcept { return commit_time <= dispatch_time && dispatch_time <= apply_time; }
};

struct Summary {
  std::size_t count = 0;
  double mean = 0;
  Timestamp median = 0;
  Timestamp p90 = 0;
  Timestamp p99 = 0;
  Timestamp max = 0;
};

/// Nearest-rank percentile: the value at rank ceil(p/100 * N) of the sorted
/// sample (1-based). `sorted` must be ascending and nonempty.
inline Timestamp nearest_rank(const std::vector<Timestamp>& sorted, double p) {
  const auto n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * n));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

inline Summary summarize(std::vector<Timestamp> v) {
  Summary s;
  s.count = v.size();
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  long double total = 0;
  for (auto x : v) total += x;
  s.mean = static_cast<double>(total / v.size());
  s.median = nearest_rank(v, 50);
  s.p90 = nearest_rank(v, 90);
  s.p99 = nearest_rank(v, 99);
  s.max = v.back();
  return s;
}

struct DelaySummary {
  Summary apply_delay;
  Summary replayer_delay;
  std::size_t unordered_rows = 0;
};

inline DelaySummary summarize(const std::vector<DeliveryRecord>& rows) {
  std::vector<Timestamp> apply, replayer;
  DelaySummary out;
  apply.reserve(rows.size());
  replayer.reserve(rows.size());
  for (const auto& r : rows) {
    apply.push_back(r.apply_delay());
    replayer.push_back(r.replayer_delay());
    if (!r.ordered()) ++out.unordered_rows;
  }
  out.apply_delay = summarize(std::move(apply));
  out.replayer_delay = summarize(std::move(replayer));
  return out;
}

// One line per row: `index=5 target=2 commit=.. dispatch=.. apply=..`.
inline void write_records(std::ostream& out, const std::vector<DeliveryRecord>& rows) {
  for (const auto& r : rows)
    out << "index=" << r.index << " target=" << r.target << " commit=" << r.commit_time
        << " dispatch=" << r.dispatch_time << " apply=" << r.apply_time << '\n';
}

// Aggregate block; `scale` divides raw values (1 for steps, 1000 for ns to us).
inline void write_summary(std::ostream& out, const DelaySummary& s, double scale, const char* unit) {
  auto row = [&](const char* name, const Summary& m) {
    out << "summary " << name << " count=" << m.count << " mean=" << m.mean / scale
        << " median=" << static_cast<double>(m.median) / scale << " p90=" << static_cast<double>(m.p90) / scale
        << " p99=" << static_cast<double>(m.p99) / scale << " max=" << static_cast<double>(m.max) / scale
        << " unit=" << unit << '\n';
  };
  row("replayer_delay", s.replayer_delay);
  row("apply_delay", s.apply_delay);
  out << "summary unordered_rows=" << s.unordered_rows << '\n';
}

}  // namespace logplayer
