#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <stop_token>
#include <thread>
#include <tuple>
#include <vector>

#include "logplayer/dispatcher.hpp"
#include "logplayer/log_service.hpp"
#include "logplayer/metrics.hpp"
#include "logplayer/recovery.hpp"
#include "logplayer/transport.hpp"

namespace logplayer {

/// In-process streaming transport with one consumer thread per target.
/// A write completes once the batch is buffered on the link; the target
/// thread applies batches in order and answers armed reads with acks.
class ThreadedTransport {
 public:
  ThreadedTransport(std::size_t targets, std::size_t ack_batching = 1) {
    for (std::size_t i = 0; i < targets; ++i)
      links_.push_back(std::make_unique<Link>(static_cast<TargetId>(i + 1), ack_batching));
  }
  ~ThreadedTransport() { stop(); }

  ThreadedTransport(const ThreadedTransport&) = delete;
  ThreadedTransport& operator=(const ThreadedTransport&) = delete;

  void start() {
    for (auto& l : links_) {
      Link* link = l.get();
      threads_.emplace_back([this, link](std::stop_token st) { target_loop(*link, st); });
    }
  }

  void stop() {
    for (auto& t : threads_) t.request_stop();
    for (auto& l : links_) l->cv.notify_all();
    threads_.clear();
  }

  CompletionQueue& cq() noexcept { return cq_; }
  std::size_t target_count() const noexcept { return links_.size(); }

  void write(TargetId id, Epoch epoch, const Batch& batch, CompletionTag tag) {
    Link& l = link(id);
    {
      std::lock_guard g(l.mu);
      if (!l.alive || l.epoch != epoch) {
        cq_.push({tag, epoch, false, std::nullopt});
        return;
      }
      l.inbound.push_back(batch);
      cq_.push({tag, epoch, true, std::nullopt});
    }
    l.cv.notify_all();
  }

  void read(TargetId id, Epoch epoch, CompletionTag tag) {
    Link& l = link(id);
    std::lock_guard g(l.mu);
    if (!l.alive || l.epoch != epoch) {
      cq_.push({tag, epoch, false, std::nullopt});
      return;
    }
    if (!l.acks.empty()) {
      cq_.push({tag, epoch, true, l.acks.front()});
      l.acks.pop_front();
      return;
    }
    l.read_armed = true;
  }

  std::optional<Index> get_last_ack(TargetId id) {
    Link& l = link(id);
    std::lock_guard g(l.mu);
    if (!l.alive) return std::nullopt;
    return l.store.get_last_ack();
  }

  Epoch epoch(TargetId id) {
    Link& l = link(id);
    std::lock_guard g(l.mu);
    return l.epoch;
  }

  /// Target process dies. In-flight data is lost; an armed read fails.
  void crash(TargetId id) {
    Link& l = link(id);
    std::lock_guard g(l.mu);
    l.alive = false;
    l.inbound.clear();
    l.acks.clear();
    if (l.read_armed) cq_.push({{id, OpKind::read}, l.epoch, false, std::nullopt});
    l.read_armed = false;
  }

  /// Target back with a fresh connection; returns its epoch.
  Epoch restore(TargetId id) {
    Link& l = link(id);
    std::lock_guard g(l.mu);
    l.alive = true;
    ++l.epoch;
    l.inbound.clear();
    l.acks.clear();
    l.read_armed = false;
    return l.epoch;
  }

  Index persisted_index(TargetId id) {
    Link& l = link(id);
    std::lock_guard g(l.mu);
    return l.store.persisted_index();
  }

  std::vector<AppliedRecord> applied(TargetId id) {
    Link& l = link(id);
    std::lock_guard g(l.mu);
    return l.store.applied();
  }

  std::vector<DeliveryRecord> records(TargetId id) {
    Link& l = link(id);
    std::lock_guard g(l.mu);
    return l.records;
  }

  std::size_t record_count() {
    std::size_t n = 0;
    for (auto& l : links_) {
      std::lock_guard g(l->mu);
      n += l->records.size();
    }
    return n;
  }

  std::size_t rejected_count() {
    std::size_t n = 0;
    for (auto& l : links_) {
      std::lock_guard g(l->mu);
      n += l->rejected;
    }
    return n;
  }

 private:
  struct Link {
    Link(TargetId id, std::size_t ack_batching) : id(id), store(id, ack_batching) {}
    TargetId id;
    std::mutex mu;
    std::condition_variable_any cv;
    std::deque<Batch> inbound;
    std::deque<Ack> acks;
    bool read_armed = false;
    bool alive = true;
    Epoch epoch = 1;
    TargetStore store;
    std::vector<DeliveryRecord> records;
    std::size_t rejected = 0;
  };

  Link& link(TargetId id) { return *links_.at(id - 1); }

  void target_loop(Link& l, std::stop_token st) {
    std::unique_lock lock(l.mu);
    while (true) {
      l.cv.wait(lock, st, [&] { return !l.inbound.empty(); });
      if (st.stop_requested()) return;
      Batch b = std::move(l.inbound.front());
      l.inbound.pop_front();
      // Apply and persist under the link lock: one atomic durable step.
      auto hook = [&](const Message& m, Timestamp now) {
        if (!m.is_dummy) l.records.push_back({m.index, l.id, m.commit_time, m.dispatch_time, now});
      };
      ConsumeResult r = l.store.consume(b, steady_now_ns(), hook);
      l.rejected += r.rejected.size();
      for (const Ack& a : r.acks) l.acks.push_back(a);
      if (l.read_armed && !l.acks.empty()) {
        l.read_armed = false;
        cq_.push({{l.id, OpKind::read}, l.epoch, true, l.acks.front()});
        l.acks.pop_front();
      }
    }
  }

  std::vector<std::unique_ptr<Link>> links_;
  CompletionQueue cq_;
  std::vector<std::jthread> threads_;
};

struct ReplayerConfig {
  std::size_t max_batch_size = 16;
  Index dummy_interval = 0;
  Mutant mutant = Mutant::none;
};

/// The replayer process: main fetcher, completion-queue consumer, health
/// checker and recovery fetchers, each on its own thread.
class Replayer {
 public:
  using Disp = Dispatcher<ThreadedTransport, std::mutex>;

  Replayer(const LogService& log, ThreadedTransport& net, ReplayerConfig cfg)
      : log_(log), net_(net), disp_(net, net.target_count(), {cfg.max_batch_size, cfg.dummy_interval, cfg.mutant}) {}

  ~Replayer() { stop(); }

  /// Learns target progress and starts every thread. Returns the main
  /// fetcher's start index.
  Index start() {
    for (TargetId id = 1; id <= disp_.target_count(); ++id) disp_.attach_stream(id, net_.epoch(id));
    FetcherSpec spec = on_replayer_restart(disp_);
    consumer_ = std::jthread([this](std::stop_token st) {
      while (auto c = net_.cq().next(st)) disp_.on_completion(*c);
    });
    health_ = std::jthread([this](std::stop_token st) { health_loop(st); });
    main_ = std::jthread([this, spec](std::stop_token st) { run_fetcher(spec, log_, disp_, st); });
    return spec.start_index;
  }

  void stop() {
    health_ = {};
    main_ = {};
    {
      std::lock_guard g(recovery_mu_);
      recovery_.clear();
    }
    consumer_ = {};
  }

  /// Health checker input: target observed down or back up.
  void report(HealthEvent ev) {
    {
      std::lock_guard g(health_mu_);
      health_events_.push_back(ev);
    }
    health_cv_.notify_all();
  }

  Disp& dispatcher() noexcept { return disp_; }

  std::size_t recoveries_started() const noexcept { return recoveries_.load(); }

 private:
  void health_loop(std::stop_token st) {
    std::unique_lock lock(health_mu_);
    while (true) {
      health_cv_.wait(lock, st, [&] { return !health_events_.empty(); });
      if (st.stop_requested()) return;
      HealthEvent ev = health_events_.front();
      health_events_.pop_front();
      lock.unlock();
      if (ev.kind == HealthEvent::Kind::down) {
        on_target_down(disp_, ev.target_id);
      } else {
        TargetUpResult r = on_target_up(disp_, ev.target_id, net_.epoch(ev.target_id));
        if (r.recovery) {
          ++recoveries_;
          std::lock_guard g(recovery_mu_);
          recovery_.emplace_back([this, spec = *r.recovery](std::stop_token s) {
            run_fetcher(spec, log_, disp_, s);
          });
        }
      }
      lock.lock();
    }
  }

  const LogService& log_;
  ThreadedTransport& net_;
  Disp disp_;
  std::jthread consumer_;
  std::jthread health_;
  std::jthread main_;
  std::mutex recovery_mu_;
  std::list<std::jthread> recovery_;
  std::mutex health_mu_;
  std::condition_variable_any health_cv_;
  std::deque<HealthEvent> health_events_;
  std::atomic<std::size_t> recoveries_{0};
};

struct BenchConfig {
  std::size_t targets = 4;
  std::size_t payload_kb = 1;  // key-values of 1 KB each, spread over random targets; 0: one empty payload
  std::size_t entries = 10000;
  std::size_t batch_size = 16;
  Index dummy_interval = 10;
  std::chrono::microseconds append_latency{0};
  std::chrono::microseconds append_interval{20};  // producer pacing
  std::chrono::seconds timeout{120};
  std::uint64_t seed = 1;
};

struct BenchResult {
  bool completed = false;
  std::vector<DeliveryRecord> rows;
  DelaySummary summary;
  std::size_t rejected = 0;
  std::chrono::nanoseconds wall{0};
};

/// Fault-free run at wall-clock speed. Times are nanoseconds.
inline BenchResult run_bench(const BenchConfig& cfg) {
  if (cfg.targets < 1) throw std::invalid_argument("bench needs at least one target");
  LogService::LatencyModel latency;
  if (cfg.append_latency.count() > 0) latency = [d = cfg.append_latency](Index) { return d; };
  LogService log(steady_now_ns, latency);
  ThreadedTransport net(cfg.targets);
  Replayer replayer(log, net, {cfg.batch_size, cfg.dummy_interval, Mutant::none});
  net.start();
  replayer.start();

  std::mt19937_64 rng(cfg.seed);
  std::size_t expected = 0;
  const auto t0 = std::chrono::steady_clock::now();
  auto next_append = t0;
  for (std::size_t i = 0; i < cfg.entries; ++i) {
    std::map<TargetId, std::size_t> kv;
    for (std::size_t k = 0; k < cfg.payload_kb; ++k) kv[static_cast<TargetId>(rng() % cfg.targets + 1)] += 1024;
    if (kv.empty()) kv[static_cast<TargetId>(rng() % cfg.targets + 1)] = 0;
    std::vector<TargetId> ids;
    std::map<TargetId, PayloadRef> payloads;
    for (auto [t, bytes] : kv) {
      ids.push_back(t);
      payloads[t] = make_payload(bytes, std::byte{0x5a});
    }
    expected += ids.size();
    if (cfg.append_interval.count() > 0) {
      next_append += cfg.append_interval;
      std::this_thread::sleep_until(next_append);
    }
    log.append(std::move(ids), std::move(payloads));
  }

  BenchResult res;
  const auto deadline = std::chrono::steady_clock::now() + cfg.timeout;
  while (net.record_count() < expected && std::chrono::steady_clock::now() < deadline)
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  res.wall = std::chrono::steady_clock::now() - t0;
  replayer.stop();
  net.stop();
  res.completed = net.record_count() == expected;
  res.rejected = net.rejected_count();
  for (TargetId id = 1; id <= cfg.targets; ++id) {
    auto r = net.records(id);
    res.rows.insert(res.rows.end(), r.begin(), r.end());
  }
  std::sort(res.rows.begin(), res.rows.end(),
            [](const auto& a, const auto& b) { return std::tie(a.index, a.target) < std::tie(b.index, b.target); });
  res.summary = summarize(res.rows);
  return res;
}

}  // namespace logplayer
