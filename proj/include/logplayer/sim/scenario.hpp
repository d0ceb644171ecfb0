#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <istream>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "logplayer/sim/world.hpp"

namespace logplayer::sim {

/// Seeded PRNG. Draws use plain modulo so sequences are identical across
/// standard library implementations (distributions are not portable).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : g_(seed) {}
  std::uint64_t next() { return g_(); }
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : g_() % n; }
  std::uint64_t between(std::uint64_t lo, std::uint64_t hi) { return lo + below(hi - lo + 1); }
  template <class T>
  const T& pick(const std::vector<T>& v) {
    return v[below(v.size())];
  }

 private:
  std::mt19937_64 g_;
};

enum class FaultKind : std::uint8_t { target_down, target_up, replayer_restart };

inline const char* to_string(FaultKind k) {
  switch (k) {
    case FaultKind::target_down: return "target_down";
    case FaultKind::target_up: return "target_up";
    case FaultKind::replayer_restart: return "replayer_restart";
  }
  return "?";
}

struct FaultEvent {
  std::optional<std::uint64_t> step;  // nullopt: drawn from the seed
  FaultKind kind = FaultKind::target_down;
  TargetId target = 0;
};

struct Scenario {
  std::string name = "unnamed";
  std::size_t targets = 3;
  std::size_t entries = 100;
  std::size_t batch_size = 4;
  Index dummy_interval = 0;
  std::size_t ack_batching = 1;
  CqFailureMode cq_mode = CqFailureMode::flush;
  std::size_t payload_bytes = 16;
  std::string membership = "random";  // random | all
  std::vector<TargetId> idle_targets;
  Mutant mutant = Mutant::none;
  std::uint64_t seed = 1;
  std::vector<FaultEvent> faults;
};

class ScenarioError : public std::runtime_error {
 public:
  ScenarioError(std::size_t line, const std::string& field, const std::string& what)
      : std::runtime_error((line ? "line " + std::to_string(line) + ", " : std::string()) + "field '" + field +
                           "': " + what),
        line_(line),
        field_(field) {}
  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

namespace detail {

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::uint64_t parse_uint(const std::string& v, std::size_t line, const std::string& field) {
  if (v.empty() || !std::all_of(v.begin(), v.end(), [](unsigned char c) { return std::isdigit(c); }))
    throw ScenarioError(line, field, "expected a non-negative integer, got '" + v + "'");
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ScenarioError(line, field, "integer out of range: '" + v + "'");
  }
}

}  // namespace detail

/// Checks cross-field rules: sizes, target ids, and down/up alternation per
/// target (in list order, starting with down).
inline void validate(const Scenario& sc) {
  auto bad = [](const std::string& field, const std::string& what) { throw ScenarioError(0, field, what); };
  if (sc.targets < 1 || sc.targets > 64) bad("targets", "must be in 1..64");
  if (sc.batch_size < 1) bad("batch_size", "must be positive");
  if (sc.membership != "random" && sc.membership != "all") bad("membership", "expected random or all");
  for (TargetId t : sc.idle_targets)
    if (t < 1 || t > sc.targets) bad("idle_targets", "unknown target " + std::to_string(t));
  if (sc.entries > 0 && sc.idle_targets.size() >= sc.targets) bad("idle_targets", "every target is idle");
  std::vector<bool> down(sc.targets + 1, false);
  for (const auto& f : sc.faults) {
    if (f.kind == FaultKind::replayer_restart) continue;
    if (f.target < 1 || f.target > sc.targets) bad("fault", "unknown target " + std::to_string(f.target));
    const bool want_down = f.kind == FaultKind::target_down;
    if (down[f.target] == want_down)
      bad("fault", std::string(to_string(f.kind)) + " for target " + std::to_string(f.target) +
                       " breaks down/up alternation");
    down[f.target] = want_down;
  }
}

/// Line format: `key = value`, `fault <step|nondet> <kind> [target]`, and
/// `#` comments.
inline Scenario parse_scenario(std::istream& in) {
  Scenario sc;
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    if (auto h = raw.find('#'); h != std::string::npos) raw.erase(h);
    std::string line = detail::trim(raw);
    if (line.empty()) continue;
    if (line.rfind("fault", 0) == 0 && (line.size() == 5 || line[5] == ' ' || line[5] == '\t')) {
      std::istringstream ls(line.substr(5));
      std::string when, kind, target, extra;
      ls >> when >> kind >> target >> extra;
      if (when.empty() || kind.empty()) throw ScenarioError(lineno, "fault", "expected 'fault <step|nondet> <kind> [target]'");
      if (!extra.empty()) throw ScenarioError(lineno, "fault", "unexpected trailing '" + extra + "'");
      FaultEvent f;
      if (when != "nondet") f.step = detail::parse_uint(when, lineno, "fault.step");
      if (kind == "target_down") f.kind = FaultKind::target_down;
      else if (kind == "target_up") f.kind = FaultKind::target_up;
      else if (kind == "replayer_restart") f.kind = FaultKind::replayer_restart;
      else throw ScenarioError(lineno, "fault.kind", "unknown fault kind '" + kind + "'");
      if (f.kind == FaultKind::replayer_restart) {
        if (!target.empty()) throw ScenarioError(lineno, "fault.target", "replayer_restart takes no target");
      } else {
        if (target.empty()) throw ScenarioError(lineno, "fault.target", "missing target id");
        f.target = static_cast<TargetId>(detail::parse_uint(target, lineno, "fault.target"));
      }
      sc.faults.push_back(f);
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ScenarioError(lineno, line, "expected 'key = value'");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    auto num = [&] { return detail::parse_uint(value, lineno, key); };
    try {
      if (key == "name") sc.name = value;
      else if (key == "targets") sc.targets = num();
      else if (key == "entries") sc.entries = num();
      else if (key == "batch_size") sc.batch_size = num();
      else if (key == "dummy_interval") sc.dummy_interval = num();
      else if (key == "ack_batching") sc.ack_batching = num();
      else if (key == "payload_bytes") sc.payload_bytes = num();
      else if (key == "seed") sc.seed = num();
      else if (key == "membership") sc.membership = value;
      else if (key == "cq_mode") sc.cq_mode = parse_cq_mode(value);
      else if (key == "mutant") sc.mutant = parse_mutant(value);
      else if (key == "idle_targets") {
        std::stringstream ss(value);
        std::string item;
        while (std::getline(ss, item, ','))
          sc.idle_targets.push_back(static_cast<TargetId>(detail::parse_uint(detail::trim(item), lineno, key)));
      } else {
        throw ScenarioError(lineno, key, "unknown key");
      }
    } catch (const std::invalid_argument& e) {
      throw ScenarioError(lineno, key, e.what());
    }
  }
  validate(sc);
  return sc;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file '" + path + "'");
  return parse_scenario(in);
}

inline std::string to_text(const Scenario& sc) {
  std::ostringstream os;
  os << "name = " << sc.name << '\n'
     << "targets = " << sc.targets << '\n'
     << "entries = " << sc.entries << '\n'
     << "batch_size = " << sc.batch_size << '\n'
     << "dummy_interval = " << sc.dummy_interval << '\n'
     << "ack_batching = " << sc.ack_batching << '\n'
     << "cq_mode = " << to_string(sc.cq_mode) << '\n'
     << "payload_bytes = " << sc.payload_bytes << '\n'
     << "membership = " << sc.membership << '\n';
  if (!sc.idle_targets.empty()) {
    os << "idle_targets = ";
    for (std::size_t i = 0; i < sc.idle_targets.size(); ++i) os << (i ? "," : "") << sc.idle_targets[i];
    os << '\n';
  }
  if (sc.mutant != Mutant::none) os << "mutant = " << to_string(sc.mutant) << '\n';
  os << "seed = " << sc.seed << '\n';
  for (const auto& f : sc.faults) {
    os << "fault " << (f.step ? std::to_string(*f.step) : "nondet") << ' ' << to_string(f.kind);
    if (f.kind != FaultKind::replayer_restart) os << ' ' << f.target;
    os << '\n';
  }
  return os.str();
}

inline std::vector<PlannedEntry> make_workload(const Scenario& sc, Rng& rng) {
  std::vector<TargetId> active;
  for (TargetId t = 1; t <= sc.targets; ++t)
    if (std::find(sc.idle_targets.begin(), sc.idle_targets.end(), t) == sc.idle_targets.end()) active.push_back(t);
  std::vector<PlannedEntry> out(sc.entries);
  for (auto& e : out) {
    e.payload_bytes = sc.payload_bytes;
    if (sc.membership == "all") {
      e.targets = active;
      continue;
    }
    for (TargetId t : active)
      if (rng.below(2)) e.targets.push_back(t);
    if (e.targets.empty()) e.targets.push_back(rng.pick(active));
  }
  return out;
}

inline WorldConfig world_config(const Scenario& sc) {
  WorldConfig c;
  c.targets = sc.targets;
  c.batch_size = sc.batch_size;
  c.dummy_interval = sc.dummy_interval;
  c.ack_batching = sc.ack_batching;
  c.cq_mode = sc.cq_mode;
  c.mutant = sc.mutant;
  return c;
}

struct RunOptions {
  bool tracing = false;
  bool collect_metrics = false;
};

struct RunResult {
  bool pass = false;
  std::optional<Violation> violation;
  std::uint64_t steps = 0;
  std::uint64_t baseline_steps = 0;
  std::uint64_t drain_budget = 0;
  std::uint64_t drain_steps = 0;  // steps after the last fault
  std::vector<std::uint64_t> fault_steps;  // resolved step per fault event
  std::vector<Index> restart_starts;
  std::vector<Index> last_acks;
  Index current_index = 0;
  Index log_size = 0;
  std::string trace;
  std::vector<DeliveryRecord> metrics;
};

namespace detail {

inline std::uint64_t scheduler_seed(std::uint64_t seed) { return splitmix64(seed ^ 0x5eed5eed5eed5eedULL); }

inline Action fault_action(const FaultEvent& f) {
  switch (f.kind) {
    case FaultKind::target_down: return {ActionKind::crash, f.target};
    case FaultKind::target_up: return {ActionKind::target_up, f.target};
    case FaultKind::replayer_restart: return {ActionKind::replayer_restart};
  }
  return {};
}

struct Timed {
  FaultEvent event;
  std::uint64_t at = 0;
  std::size_t id = 0;
};

// Runs one schedule to quiescence. `faults` carry resolved steps.
inline RunResult simulate(const Scenario& sc, const std::vector<PlannedEntry>& workload, std::vector<Timed> faults,
                          std::uint64_t seed, std::uint64_t drain_budget, RunOptions opt) {
  WorldConfig cfg = world_config(sc);
  cfg.tracing = opt.tracing;
  cfg.collect_metrics = opt.collect_metrics;
  World w(cfg, workload);
  Rng rng(scheduler_seed(seed));
  RunResult r;
  r.drain_budget = drain_budget;
  r.fault_steps.assign(faults.size(), 0);
  std::uint64_t last_fault = 0;
  std::uint64_t latest_planned = 0;
  for (const auto& f : faults) latest_planned = std::max(latest_planned, f.at);
  const std::uint64_t hard_cap = 100 * (drain_budget + latest_planned) + 100000;
  std::optional<Violation> harness_problem;

  auto blocked = [&](std::size_t i) {
    // Earlier events on the same target, or an earlier restart, go first.
    for (std::size_t j = 0; j < i; ++j) {
      const auto& a = faults[j].event;
      const auto& b = faults[i].event;
      if (a.kind == FaultKind::replayer_restart || b.kind == FaultKind::replayer_restart || a.target == b.target)
        return true;
    }
    return false;
  };

  while (!w.violation()) {
    auto acts = w.enabled();
    bool fired = false;
    for (std::size_t i = 0; i < faults.size(); ++i) {
      if (blocked(i)) continue;
      if (faults[i].at > w.step() && !acts.empty()) continue;
      Action a = fault_action(faults[i].event);
      if (!w.fault_enabled(a)) continue;
      w.apply(a);
      r.fault_steps[faults[i].id] = w.step();
      last_fault = w.step();
      faults.erase(faults.begin() + static_cast<std::ptrdiff_t>(i));
      fired = true;
      break;
    }
    if (fired) continue;
    if (acts.empty()) {
      if (!faults.empty()) harness_problem = Violation{"liveness", "fault schedule cannot make progress"};
      break;
    }
    if (faults.empty() && w.step() - last_fault > drain_budget) {
      harness_problem = Violation{"liveness", "no quiescence within drain budget of " +
                                                  std::to_string(drain_budget) + " steps after the last fault"};
      break;
    }
    if (w.step() > hard_cap) {
      harness_problem = Violation{"liveness", "step cap exceeded"};
      break;
    }
    w.apply(acts[rng.below(acts.size())]);
  }

  r.steps = w.step();
  r.drain_steps = w.step() - last_fault;
  r.violation = w.violation();
  if (!r.violation) r.violation = harness_problem;
  if (!r.violation) r.violation = w.final_problems();
  r.pass = !r.violation;
  r.restart_starts = w.restart_start_indexes();
  r.last_acks = w.dispatcher().last_acks();
  r.current_index = w.dispatcher().current_index();
  r.log_size = w.log().size();
  r.trace = w.trace();
  if (r.violation && opt.tracing)
    r.trace += std::to_string(w.step()) + " verdict fail " + r.violation->property + ": " + r.violation->detail + '\n';
  r.metrics = w.metrics();
  return r;
}

}  // namespace detail

/// Runs a scenario under the deterministic scheduler. The result is a pure
/// function of (scenario, seed, options).
inline RunResult run_scenario(const Scenario& sc, std::uint64_t seed, RunOptions opt = {}) {
  validate(sc);
  Rng rng(seed);
  auto workload = make_workload(sc, rng);

  // Fault-free baseline of the same workload and seed sizes the drain budget
  // and the window for nondet fault times.
  Scenario clean = sc;
  clean.faults.clear();
  RunResult base = detail::simulate(clean, workload, {}, seed, std::numeric_limits<std::uint64_t>::max() / 1000,
                                    RunOptions{});
  const std::uint64_t baseline = std::max<std::uint64_t>(base.steps, 1);
  if (sc.faults.empty()) {
    RunResult r = detail::simulate(sc, workload, {}, seed, 10 * baseline, opt);
    r.baseline_steps = baseline;
    return r;
  }

  std::vector<detail::Timed> timed;
  for (std::size_t i = 0; i < sc.faults.size(); ++i) {
    const auto& f = sc.faults[i];
    timed.push_back({f, f.step ? *f.step : rng.between(1, baseline), i});
  }
  // Keep per-target order: a nondet up never lands before its down.
  for (std::size_t i = 0; i < timed.size(); ++i)
    for (std::size_t j = 0; j < i; ++j) {
      const auto& a = timed[j].event;
      const auto& b = timed[i].event;
      if (a.kind == FaultKind::replayer_restart || b.kind == FaultKind::replayer_restart || a.target == b.target)
        timed[i].at = std::max(timed[i].at, timed[j].at);
    }
  std::stable_sort(timed.begin(), timed.end(), [](const auto& a, const auto& b) { return a.at < b.at; });
  RunResult r = detail::simulate(sc, workload, timed, seed, 10 * baseline, opt);
  r.baseline_steps = baseline;
  return r;
}

struct FuzzOptions {
  std::uint64_t iterations = 10000;
  std::uint64_t seed = 1;
  std::size_t max_entries = 50;
  std::size_t max_targets = 4;
  std::size_t max_faults = 3;
  Mutant mutant = Mutant::none;
  std::size_t stop_after_failures = 1;  // 0: never stop early
};

/// Seed of fuzz iteration `i`; running `fuzz_case(case_seed(...))` repeats it.
inline std::uint64_t case_seed(std::uint64_t master, std::uint64_t i) { return splitmix64(master + i); }

inline Scenario random_scenario(std::uint64_t seed, const FuzzOptions& o) {
  Rng r(seed);
  Scenario sc;
  sc.name = "fuzz-" + std::to_string(seed);
  sc.seed = seed;
  sc.targets = r.between(1, o.max_targets);
  sc.entries = r.between(1, o.max_entries);
  sc.batch_size = r.pick(std::vector<std::size_t>{1, 4, 16});
  sc.ack_batching = r.pick(std::vector<std::size_t>{1, 4});
  sc.dummy_interval = r.pick(std::vector<Index>{1, 5, 10});
  sc.cq_mode = r.below(2) ? CqFailureMode::fail : CqFailureMode::flush;
  sc.payload_bytes = 8;
  sc.mutant = o.mutant;
  const std::size_t nfaults = r.between(0, o.max_faults);
  for (std::size_t k = 0; k < nfaults; ++k) {
    if (r.below(4) == 0) {
      sc.faults.push_back({std::nullopt, FaultKind::replayer_restart, 0});
    } else {
      auto t = static_cast<TargetId>(r.between(1, sc.targets));
      sc.faults.push_back({std::nullopt, FaultKind::target_down, t});
      sc.faults.push_back({std::nullopt, FaultKind::target_up, t});
    }
  }
  return sc;
}

struct FuzzFailure {
  std::uint64_t case_seed = 0;
  Scenario scenario;
  Violation violation;
};

struct FuzzReport {
  std::uint64_t iterations_run = 0;
  std::uint64_t total_steps = 0;
  std::uint64_t faults_injected = 0;
  std::vector<FuzzFailure> failures;
};

inline RunResult fuzz_case(std::uint64_t seed, const FuzzOptions& o, RunOptions opt = {}) {
  return run_scenario(random_scenario(seed, o), seed, opt);
}

template <class OnFailure>
FuzzReport fuzz(const FuzzOptions& o, OnFailure&& on_failure) {
  FuzzReport rep;
  for (std::uint64_t i = 0; i < o.iterations; ++i) {
    const std::uint64_t s = case_seed(o.seed, i);
    Scenario sc = random_scenario(s, o);
    RunResult r = run_scenario(sc, s);
    ++rep.iterations_run;
    rep.total_steps += r.steps;
    rep.faults_injected += sc.faults.size();
    if (!r.pass) {
      rep.failures.push_back({s, sc, *r.violation});
      on_failure(rep.failures.back());
      if (o.stop_after_failures && rep.failures.size() >= o.stop_after_failures) break;
    }
  }
  return rep;
}

inline FuzzReport fuzz(const FuzzOptions& o) {
  return fuzz(o, [](const FuzzFailure&) {});
}

}  // namespace logplayer::sim
