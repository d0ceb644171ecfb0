#include <gtest/gtest.h>

#include <thread>

#include "logplayer/runtime.hpp"

using namespace logplayer;
using namespace std::chrono_literals;

namespace {

template <class Pred>
bool wait_for(Pred p, std::chrono::milliseconds limit = 20s) {
  const auto deadline = std::chrono::steady_clock::now() + limit;
  while (!p()) {
    if (std::chrono::steady_clock::now() > deadline) return false;
    std::this_thread::sleep_for(1ms);
  }
  return true;
}

Index append_to(LogService& log, std::vector<TargetId> ids) {
  std::map<TargetId, PayloadRef> p;
  for (TargetId id : ids) p[id] = make_payload(32);
  return log.append(std::move(ids), std::move(p));
}

std::vector<Index> real_indexes(const std::vector<AppliedRecord>& v) {
  std::vector<Index> out;
  for (const auto& r : v)
    if (!r.is_dummy) out.push_back(r.index);
  return out;
}

}  // namespace

TEST(Bench, SmallRunCompletesWithOrderedRows) {
  BenchConfig c;
  c.targets = 2;
  c.entries = 500;
  c.payload_kb = 2;
  c.timeout = 60s;
  BenchResult r = run_bench(c);
  ASSERT_TRUE(r.completed);
  EXPECT_EQ(r.rejected, 0u);
  EXPECT_FALSE(r.rows.empty());
  for (const auto& row : r.rows) EXPECT_TRUE(row.ordered());
  EXPECT_EQ(r.summary.unordered_rows, 0u);
}

TEST(Bench, SingleTargetEmptyPayload) {
  BenchConfig c;
  c.targets = 1;
  c.payload_kb = 0;
  c.entries = 200;
  c.timeout = 60s;
  BenchResult r = run_bench(c);
  ASSERT_TRUE(r.completed);
  ASSERT_EQ(r.rows.size(), 200u);
  for (const auto& row : r.rows) {
    EXPECT_TRUE(row.ordered());
    EXPECT_GT(row.replayer_delay(), 0);
  }
}

TEST(Threaded, CrashAndRestoreDeliversExactlyOnce) {
  LogService log;
  ThreadedTransport net(2);
  Replayer rp(log, net, {4, 5, Mutant::none});
  net.start();
  rp.start();
  for (int i = 0; i < 200; ++i) append_to(log, {1, 2});
  ASSERT_TRUE(wait_for([&] { return net.persisted_index(2) >= 50; }));
  net.crash(2);
  rp.report({2, HealthEvent::Kind::down});
  for (int i = 0; i < 200; ++i) append_to(log, {1, 2});
  const Epoch e = net.restore(2);
  EXPECT_EQ(e, 2u);
  rp.report({2, HealthEvent::Kind::up});
  ASSERT_TRUE(wait_for([&] { return net.persisted_index(1) == 400 && net.persisted_index(2) == 400; }))
      << net.persisted_index(1) << " " << net.persisted_index(2);
  rp.stop();
  net.stop();
  std::vector<Index> all(400);
  for (Index i = 0; i < 400; ++i) all[i] = i + 1;
  EXPECT_EQ(real_indexes(net.applied(1)), all);
  EXPECT_EQ(real_indexes(net.applied(2)), all);
  EXPECT_EQ(net.rejected_count(), 0u);
  EXPECT_EQ(rp.recoveries_started(), 1u);
}

TEST(Threaded, ReplayerRestartResumesAtSlowestTarget) {
  LogService log;
  ThreadedTransport net(2);
  net.start();
  {
    Replayer first(log, net, {4, 0, Mutant::none});
    EXPECT_EQ(first.start(), 1u);
    for (int i = 0; i < 50; ++i) append_to(log, {1, 2});
    ASSERT_TRUE(wait_for([&] { return net.persisted_index(1) == 50 && net.persisted_index(2) == 50; }));
  }
  for (int i = 0; i < 10; ++i) append_to(log, {1});
  Replayer second(log, net, {4, 0, Mutant::none});
  // New connections: fresh epochs on both links.
  net.restore(1);
  net.restore(2);
  EXPECT_EQ(second.start(), 51u);
  ASSERT_TRUE(wait_for([&] { return net.persisted_index(1) == 60; }));
  second.stop();
  net.stop();
  EXPECT_EQ(net.rejected_count(), 0u);
  EXPECT_EQ(net.applied(1).size(), 60u);
}
