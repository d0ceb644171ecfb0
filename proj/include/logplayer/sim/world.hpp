#pragma once

#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "logplayer/dispatcher.hpp"
#include "logplayer/log_service.hpp"
#include "logplayer/metrics.hpp"
#include "logplayer/recovery.hpp"
#include "logplayer/sim/sim_transport.hpp"
#include "logplayer/sim/state_encoder.hpp"

namespace logplayer::sim {

/// One atomic step of the simulated system.
///
///   append          producer appends the next workload entry
///   main_dispatch   main fetcher reads one entry and runs the whole dispatch body
///   recovery_step   a recovery fetcher dispatches one entry, or signals completion
///   cq_next         completion-queue consumer handles one completion
///   surface_write   transport reports a finished write
///   deliver         a batch reaches its target, which applies it and acks
///   complete_read   an ack fills the armed read
///   surface_failure transport reports a failed operation (fail mode)
///   crash           target dies (in flush mode detection is part of the step)
///   detect          health checker notices a dead target and suspends its queue
///   target_up       target restarts and reconnects; restart handling runs
///   replayer_restart replayer dies and restarts from target progress
enum class ActionKind : std::uint8_t {
  append,
  main_dispatch,
  recovery_step,
  cq_next,
  surface_write,
  deliver,
  complete_read,
  surface_failure,
  crash,
  detect,
  target_up,
  replayer_restart,
};

inline const char* to_string(ActionKind k) {
  switch (k) {
    case ActionKind::append: return "append";
    case ActionKind::main_dispatch: return "main_dispatch";
    case ActionKind::recovery_step: return "recovery_step";
    case ActionKind::cq_next: return "cq_next";
    case ActionKind::surface_write: return "surface_write";
    case ActionKind::deliver: return "deliver";
    case ActionKind::complete_read: return "complete_read";
    case ActionKind::surface_failure: return "surface_failure";
    case ActionKind::crash: return "crash";
    case ActionKind::detect: return "detect";
    case ActionKind::target_up: return "target_up";
    case ActionKind::replayer_restart: return "replayer_restart";
  }
  return "?";
}

struct Action {
  ActionKind kind = ActionKind::append;
  TargetId target = 0;
  std::uint32_t slot = 0;
  bool operator==(const Action&) const = default;
};

inline std::string to_string(const Action& a) {
  std::string s = to_string(a.kind);
  if (a.target) s += " target=" + std::to_string(a.target);
  if (a.kind == ActionKind::recovery_step) s += " slot=" + std::to_string(a.slot);
  return s;
}

struct PlannedEntry {
  std::vector<TargetId> targets;
  std::size_t payload_bytes = 0;
};

struct WorldConfig {
  std::size_t targets = 1;
  std::size_t batch_size = 4;
  Index dummy_interval = 0;
  std::size_t ack_batching = 1;
  CqFailureMode cq_mode = CqFailureMode::flush;
  Mutant mutant = Mutant::none;
  // When positive, crashes and restarts are part of the enabled actions
  // (explorer mode), with at most this many crashes.
  std::size_t nondet_failures = 0;
  // Log holds the whole workload up front instead of appending step by step.
  bool prefill_log = false;
  bool tracing = false;
  bool collect_metrics = false;
};

enum class TargetHealth : std::uint8_t { up, crashed, down };

struct Violation {
  // safety.duplicate, safety.order, safety.misroute, contract, transition,
  // monotonicity, liveness, quiescence
  std::string property;
  std::string detail;
};

/// The whole simulated system as a value: log, replayer, transport, targets,
/// fetchers and fault state. Copies are independent (except the immutable
/// prefilled log), which lets the explorer branch.
class World {
 public:
  using Disp = Dispatcher<SimTransport, NullMutex>;

  World(WorldConfig cfg, std::vector<PlannedEntry> workload, std::vector<Index> initial_progress = {})
      : cfg_(cfg),
        workload_(std::make_shared<const std::vector<PlannedEntry>>(std::move(workload))),
        clock_(std::make_shared<Timestamp>(0)),
        net_(cfg.targets, cfg.ack_batching, cfg.cq_mode),
        health_(cfg.targets, TargetHealth::up) {
    log_ = std::make_shared<LogService>([c = clock_] { return *c; });
    if (initial_progress.empty()) initial_progress.assign(cfg.targets, 0);
    initial_progress_ = initial_progress;
    oracle_persisted_ = initial_progress;
    for (TargetId id = 1; id <= cfg.targets; ++id) net_.target(id).set_initial_progress(initial_progress[id - 1]);
    if (cfg_.prefill_log)
      while (appended_ < workload_->size()) append_next();
    start_replayer();
  }

  World(const World& o) { *this = o; }
  World& operator=(const World& o) {
    if (this == &o) return *this;
    cfg_ = o.cfg_;
    workload_ = o.workload_;
    clock_ = o.clock_;
    log_ = o.log_;
    net_ = o.net_;
    disp_ = o.disp_;
    main_ = o.main_;
    recovery_ = o.recovery_;
    health_ = o.health_;
    failures_used_ = o.failures_used_;
    appended_ = o.appended_;
    step_ = o.step_;
    initial_progress_ = o.initial_progress_;
    oracle_persisted_ = o.oracle_persisted_;
    prev_last_acks_ = o.prev_last_acks_;
    prev_terms_ = o.prev_terms_;
    prev_current_index_ = o.prev_current_index_;
    violation_ = o.violation_;
    trace_ = o.trace_;
    metrics_ = o.metrics_;
    restart_starts_ = o.restart_starts_;
    rebind();
    return *this;
  }

  const WorldConfig& config() const noexcept { return cfg_; }
  std::uint64_t step() const noexcept { return step_; }
  const std::optional<Violation>& violation() const noexcept { return violation_; }
  const std::string& trace() const noexcept { return trace_; }
  const std::vector<DeliveryRecord>& metrics() const noexcept { return metrics_; }
  const LogService& log() const noexcept { return *log_; }
  const SimTransport& transport() const noexcept { return net_; }
  const Disp& dispatcher() const { return *disp_; }
  TargetHealth health(TargetId id) const { return health_[id - 1]; }
  std::size_t failures_used() const noexcept { return failures_used_; }
  std::size_t recovery_fetchers() const noexcept { return recovery_.size(); }
  const std::vector<Index>& restart_start_indexes() const noexcept { return restart_starts_; }
  bool workload_done() const { return appended_ == workload_->size(); }

  std::vector<Action> enabled() const {
    std::vector<Action> out;
    if (violation_) return out;
    if (appended_ < workload_->size()) out.push_back({ActionKind::append});
    if (main_ && !main_->done && main_->next <= log_->size()) out.push_back({ActionKind::main_dispatch});
    for (std::uint32_t k = 0; k < recovery_.size(); ++k) out.push_back({ActionKind::recovery_step, 0, k});
    if (!net_.cq_empty()) out.push_back({ActionKind::cq_next});
    for (TargetId id = 1; id <= cfg_.targets; ++id) {
      if (net_.can_surface_write(id)) out.push_back({ActionKind::surface_write, id});
      if (net_.can_deliver(id)) out.push_back({ActionKind::deliver, id});
      if (net_.can_complete_read(id)) out.push_back({ActionKind::complete_read, id});
      if (net_.can_surface_failure(id)) out.push_back({ActionKind::surface_failure, id});
      if (health_[id - 1] == TargetHealth::crashed) out.push_back({ActionKind::detect, id});
    }
    if (cfg_.nondet_failures > 0) {
      for (TargetId id = 1; id <= cfg_.targets; ++id) {
        if (fault_enabled({ActionKind::crash, id})) out.push_back({ActionKind::crash, id});
        if (fault_enabled({ActionKind::target_up, id})) out.push_back({ActionKind::target_up, id});
      }
    }
    return out;
  }

  /// Whether a fault action can be applied now.
  bool fault_enabled(const Action& a) const {
    switch (a.kind) {
      case ActionKind::crash:
        if (cfg_.nondet_failures > 0 && failures_used_ >= cfg_.nondet_failures) return false;
        return health_[a.target - 1] == TargetHealth::up;
      case ActionKind::target_up:
        return health_[a.target - 1] == TargetHealth::down;
      case ActionKind::replayer_restart:
        return std::all_of(health_.begin(), health_.end(), [](TargetHealth h) { return h == TargetHealth::up; });
      default:
        return false;
    }
  }

  void apply(const Action& a) {
    ++step_;
    *clock_ = static_cast<Timestamp>(step_);
    try {
      apply_inner(a);
    } catch (const ContractViolation& e) {
      fail("contract", e.what());
    }
    if (!violation_) check_invariants();
  }

  /// Problems with a quiescent end state: missing deliveries, leftover
  /// queue content, or a replayer that has not caught up.
  std::optional<Violation> final_problems() const {
    if (violation_) return violation_;
    if (!workload_done()) return Violation{"liveness", "workload not fully appended"};
    for (TargetId id = 1; id <= cfg_.targets; ++id) {
      if (health_[id - 1] != TargetHealth::up)
        return Violation{"liveness", "target " + std::to_string(id) + " still down"};
      std::vector<Index> expected, got;
      for (Index i = initial_progress_[id - 1] + 1; i <= log_->size(); ++i)
        if (log_->read(i)->targets(id)) expected.push_back(i);
      for (const auto& r : net_.target(id).applied())
        if (!r.is_dummy) got.push_back(r.index);
      if (got != expected)
        return Violation{"liveness", "target " + std::to_string(id) + " applied " + join(got) + " expected " +
                                         join(expected)};
    }
    if (!main_ || main_->next != log_->size() + 1)
      return Violation{"liveness", "main fetcher not at log head"};
    if (!recovery_.empty()) return Violation{"liveness", "recovery fetcher still active"};
    for (TargetId id = 1; id <= cfg_.targets; ++id) {
      auto s = disp_->queue(id).snapshot();
      if (s.state != QueueState::normal || !s.normal.empty() || !s.catchup.empty() || !s.popped.empty())
        return Violation{"quiescence", "target " + std::to_string(id) + " queue " + describe_queue(s)};
    }
    return std::nullopt;
  }

  void encode(StateEncoder& out) const {
    for (Index p : initial_progress_) out.put(p);
    out.put(appended_);
    out.put(main_ ? main_->next * 2 + (main_->done ? 1 : 0) : 0);
    out.put(recovery_.size());
    for (const auto& r : recovery_) {
      out.put(r.spec.target);
      out.put(r.next);
      out.put(*r.spec.end_index);
      out.put(r.spec.term);
    }
    for (auto h : health_) out.put(static_cast<std::uint64_t>(h));
    out.put(failures_used_);
    disp_->encode(out);
    net_.encode(out);
  }

  std::string describe() const {
    std::ostringstream os;
    os << "step=" << step_ << " log_size=" << log_->size() << " current_index=" << disp_->current_index()
       << " main_next=" << (main_ ? main_->next : 0) << " recovery_fetchers=" << recovery_.size() << '\n';
    for (TargetId id = 1; id <= cfg_.targets; ++id) {
      auto s = disp_->queue(id).snapshot();
      auto st = disp_->stream(id);
      os << "target " << id << ": health=" << static_cast<int>(health_[id - 1])
         << " persisted=" << net_.target(id).persisted_index() << " last_ack=" << disp_->last_ack(id)
         << " queue=" << describe_queue(s) << " write=" << (st.write_status == Readiness::ready ? "ready" : "busy")
         << " read=" << (st.read_status == Readiness::ready ? "ready" : "busy") << " epoch=" << st.epoch << '\n';
    }
    os << "cq=" << net_.cq().size() << '\n';
    return os.str();
  }

  static std::string describe_queue(const QueueSnapshot& s) {
    std::ostringstream os;
    os << to_string(s.state) << " term=" << s.current_term << " normal=" << join(s.normal)
       << " catchup=" << join(s.catchup) << " popped=" << join(s.popped);
    return os.str();
  }

  template <class C>
  static std::string join(const C& v) {
    std::string s = "[";
    bool first = true;
    for (const auto& x : v) {
      if (!first) s += ",";
      s += std::to_string(x);
      first = false;
    }
    return s + "]";
  }

 private:
  void rebind() {
    if (disp_) {
      disp_->rebind(net_);
      install_hooks();
    }
  }

  void install_hooks() {
    if (!cfg_.tracing) return;
    DispatcherHooks h;
    h.on_dispatch = [this](const DispatchEvent& ev) {
      line() << "dispatch idx=" << ev.index << " mode=" << (ev.is_normal ? "normal" : "recovery")
             << " term=" << ev.term << " pushed=" << join(ev.pushed) << '\n';
    };
    h.on_dummy = [this](TargetId id, Index idx) { line() << "dummy target=" << id << " idx=" << idx << '\n'; };
    h.on_write = [this](TargetId id, Epoch epoch, const Batch& b) {
      std::vector<Index> idx;
      for (const auto& m : b.messages) idx.push_back(m.index);
      line() << "write target=" << id << " epoch=" << epoch << " idx=" << join(idx)
             << " tag=" << CompletionTag{id, OpKind::write}.encode() << '\n';
    };
    disp_->set_hooks(std::move(h));
  }

  // Appends one trace line on destruction; a no-op when tracing is off.
  class LineWriter {
   public:
    LineWriter(std::string* out, std::uint64_t step) : out_(out) {
      if (out_) os_.emplace() << step << ' ';
    }
    LineWriter(const LineWriter&) = delete;
    ~LineWriter() {
      if (out_) *out_ += os_->str();
    }
    template <class T>
    LineWriter& operator<<(const T& v) {
      if (out_) *os_ << v;
      return *this;
    }

   private:
    std::string* out_;
    std::optional<std::ostringstream> os_;
  };

  LineWriter line() { return LineWriter(cfg_.tracing ? &trace_ : nullptr, step_); }

  void fail(std::string property, std::string detail) {
    if (violation_) return;
    line() << "violation " << property << ": " << detail << '\n';
    violation_ = Violation{std::move(property), std::move(detail)};
  }

  void append_next() {
    const PlannedEntry& p = (*workload_)[appended_++];
    std::map<TargetId, PayloadRef> payloads;
    for (TargetId t : p.targets) payloads[t] = make_payload(p.payload_bytes);
    Index idx = log_->append(p.targets, std::move(payloads));
    if (cfg_.tracing) line() << "append idx=" << idx << " targets=" << join(log_->read(idx)->target_ids) << '\n';
  }

  void start_replayer() {
    disp_.emplace(net_, cfg_.targets, DispatcherConfig{cfg_.batch_size, cfg_.dummy_interval, cfg_.mutant});
    install_hooks();
    for (TargetId id = 1; id <= cfg_.targets; ++id) disp_->attach_stream(id, net_.epoch(id));
    FetcherSpec spec = on_replayer_restart(*disp_);
    main_.emplace(spec);
    recovery_.clear();
    prev_last_acks_ = disp_->last_acks();
    prev_terms_.assign(cfg_.targets, 1);
    prev_current_index_ = disp_->current_index();
    restart_starts_.push_back(spec.start_index);
    line() << "restart start_index=" << spec.start_index << " last_acks=" << join(prev_last_acks_) << '\n';
  }

  void apply_inner(const Action& a) {
    switch (a.kind) {
      case ActionKind::append:
        append_next();
        break;
      case ActionKind::main_dispatch:
        main_->step(*log_, *disp_, *clock_);
        break;
      case ActionKind::recovery_step: {
        FetchCursor& c = recovery_.at(a.slot);
        if (c.step(*log_, *disp_, *clock_) == FetchCursor::Step::completed) {
          line() << "fetch_done target=" << c.spec.target << " term=" << c.spec.term
                 << " state=" << to_string(disp_->queue(c.spec.target).state()) << '\n';
          recovery_.erase(recovery_.begin() + a.slot);
        }
        break;
      }
      case ActionKind::cq_next: {
        Completion c = net_.pop_completion();
        bool handled = disp_->on_completion(c);
        line() << "cq target=" << c.tag.target_id << " kind=" << (c.tag.kind == OpKind::write ? "write" : "read")
               << " ok=" << c.ok << " epoch=" << c.epoch << " tag=" << c.tag.encode()
               << " ack=" << (c.response ? std::to_string(c.response->index) : "-") << " handled=" << handled
               << '\n';
        break;
      }
      case ActionKind::surface_write:
        net_.surface_write(a.target);
        line() << "write_done target=" << a.target << " epoch=" << net_.epoch(a.target) << '\n';
        break;
      case ActionKind::deliver: {
        auto hook = [&](const Message& m, Timestamp now) { on_apply(a.target, m, now); };
        auto [batch, result] = net_.deliver(a.target, *clock_, hook);
        if (cfg_.tracing) {
          std::vector<Index> idx;
          for (const auto& m : batch.messages) idx.push_back(m.index);
          line() << "deliver target=" << a.target << " epoch=" << net_.epoch(a.target) << " idx=" << join(idx)
                 << '\n';
        }
        for (Index r : result.rejected) {
          const auto& applied = net_.target(a.target).applied();
          const bool again = std::any_of(applied.begin(), applied.end(), [&](const auto& x) { return x.index == r; });
          fail(again ? "safety.duplicate" : "safety.order",
               "target " + std::to_string(a.target) + " received index " + std::to_string(r) +
                   (again ? " a second time" : " out of order") + " (persisted " +
                   std::to_string(net_.target(a.target).persisted_index()) + ")");
        }
        for (const Ack& ack : result.acks)
          line() << "ack target=" << a.target << " epoch=" << net_.epoch(a.target) << " idx=" << ack.index << '\n';
        break;
      }
      case ActionKind::complete_read: {
        Ack ack = net_.complete_read(a.target);
        line() << "read_done target=" << a.target << " epoch=" << net_.epoch(a.target) << " idx=" << ack.index
               << '\n';
        break;
      }
      case ActionKind::surface_failure: {
        auto f = net_.surface_failure(a.target);
        line() << "op_failed target=" << a.target << " kind=" << (f.kind == OpKind::write ? "write" : "read")
               << " epoch=" << f.epoch << '\n';
        break;
      }
      case ActionKind::crash:
        net_.crash(a.target);
        ++failures_used_;
        health_[a.target - 1] = TargetHealth::crashed;
        line() << "crash target=" << a.target << '\n';
        if (cfg_.cq_mode == CqFailureMode::flush) detect(a.target);
        break;
      case ActionKind::detect:
        detect(a.target);
        break;
      case ActionKind::target_up: {
        Epoch epoch = net_.connect(a.target);
        health_[a.target - 1] = TargetHealth::up;
        TargetUpResult r = on_target_up(*disp_, a.target, epoch);
        line() << "up target=" << a.target << " epoch=" << epoch << " term=" << r.term
               << " persisted=" << r.last_ack << " current_index=" << r.current_index << " recovery="
               << (r.recovery ? std::to_string(r.recovery->start_index) + ".." +
                                    std::to_string(*r.recovery->end_index)
                              : std::string("none"))
               << '\n';
        if (r.recovery) recovery_.emplace_back(*r.recovery);
        break;
      }
      case ActionKind::replayer_restart:
        net_.replayer_restart();
        line() << "replayer_crash\n";
        start_replayer();
        break;
    }
  }

  void detect(TargetId id) {
    on_target_down(*disp_, id);
    health_[id - 1] = TargetHealth::down;
    line() << "down target=" << id << '\n';
  }

  // Independent safety oracle: every apply is checked against the log.
  void on_apply(TargetId t, const Message& m, Timestamp now) {
    line() << "apply target=" << t << " idx=" << m.index << " dummy=" << m.is_dummy << '\n';
    Index& prev = oracle_persisted_[t - 1];
    if (m.index <= prev) {
      fail("safety.order", "target " + std::to_string(t) + " applied " + std::to_string(m.index) + " after " +
                         std::to_string(prev));
      return;
    }
    Index next_member = 0;
    for (Index i = prev + 1; i <= log_->size(); ++i)
      if (log_->read(i)->targets(t)) {
        next_member = i;
        break;
      }
    if (!m.is_dummy) {
      auto e = log_->read(m.index);
      if (!e || !e->targets(t))
        fail("safety.misroute", "target " + std::to_string(t) + " applied entry " + std::to_string(m.index) +
                           " that is not addressed to it");
      else if (m.index != next_member)
        fail("safety.order", "target " + std::to_string(t) + " applied " + std::to_string(m.index) +
                           " but the next entry for it is " + std::to_string(next_member));
    } else if (next_member != 0 && next_member <= m.index) {
      fail("safety.order", "target " + std::to_string(t) + " dummy " + std::to_string(m.index) + " skips entry " +
                         std::to_string(next_member));
    }
    prev = m.index;
    if (cfg_.collect_metrics && !m.is_dummy)
      metrics_.push_back({m.index, t, m.commit_time, m.dispatch_time, now});
  }

  void check_invariants() {
    for (TargetId id = 1; id <= cfg_.targets; ++id) {
      const auto& q = disp_->queue(id);
      if ((q.transitions() & ~kLegalTransitions) != 0)
        return fail("transition", "target " + std::to_string(id) + " queue took an illegal transition");
      const Term term = q.current_term();
      if (term < prev_terms_[id - 1])
        return fail("monotonicity", "term of target " + std::to_string(id) + " decreased");
      prev_terms_[id - 1] = term;
      Index la = disp_->last_ack(id);
      if (la < prev_last_acks_[id - 1])
        return fail("monotonicity", "last_ack of target " + std::to_string(id) + " went from " +
                                        std::to_string(prev_last_acks_[id - 1]) + " to " + std::to_string(la));
      prev_last_acks_[id - 1] = la;
    }
    Index ci = disp_->current_index();
    if (ci < prev_current_index_ || ci > log_->size())
      return fail("monotonicity", "current_index " + std::to_string(ci) + " out of order");
    prev_current_index_ = ci;
  }

  WorldConfig cfg_;
  std::shared_ptr<const std::vector<PlannedEntry>> workload_;
  std::shared_ptr<Timestamp> clock_;
  std::shared_ptr<LogService> log_;
  SimTransport net_;
  std::optional<Disp> disp_;
  std::optional<FetchCursor> main_;
  std::vector<FetchCursor> recovery_;
  std::vector<TargetHealth> health_;
  std::size_t failures_used_ = 0;
  std::size_t appended_ = 0;
  std::uint64_t step_ = 0;
  std::vector<Index> initial_progress_;
  std::vector<Index> oracle_persisted_;
  std::vector<Index> prev_last_acks_;
  std::vector<Term> prev_terms_;
  Index prev_current_index_ = 0;
  std::optional<Violation> violation_;
  std::string trace_;
  std::vector<DeliveryRecord> metrics_;
  std::vector<Index> restart_starts_;
};

}  // namespace logplayer::sim
