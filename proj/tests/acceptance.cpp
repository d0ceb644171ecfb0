// Acceptance run: one PASS/FAIL line per criterion, details indented below.
// Exit status is the number of failed criteria.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <unistd.h>

#include "logplayer/runtime.hpp"
#include "logplayer/sim/explorer.hpp"
#include "logplayer/sim/scenario.hpp"
#include "support.hpp"

using namespace logplayer;
using namespace logplayer::sim;
using Clock = std::chrono::steady_clock;

namespace {

constexpr double kExplorerLimitSec = 300;
constexpr double kFuzzLimitSec = 600;
constexpr std::uint64_t kFuzzIterations = 10000;
constexpr Index kDummyE = 10;
constexpr std::size_t kDummyDispatches = 1000;
constexpr double kBenchMedianLimitMs = 10;

const std::vector<std::string> kBundled = {"crash-one-target", "replayer-restart", "crash-during-recovery",
                                           "idle-target", "random-faults"};

int failures = 0;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void verdict(int n, const std::string& name, bool ok, const std::string& detail) {
  std::cout << "criterion " << n << " " << name << ": " << (ok ? "PASS" : "FAIL") << " (" << detail << ")"
            << std::endl;
  if (!ok) ++failures;
}

std::string fmt(double v, int prec = 2) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(prec);
  os << v;
  return os.str();
}

std::string scenario_path(const std::string& name) {
  return std::string(LOGPLAYER_SCENARIO_DIR) + "/" + name + ".scenario";
}

// Replays a counterexample through its file form and checks the violation
// and trace come back identical.
bool replays(const Counterexample& cx) {
  std::stringstream file;
  write_counterexample(file, cx);
  Counterexample back = read_counterexample(file);
  Counterexample again = make_counterexample(back.config, back.initial_progress, back.choices);
  return again.violation.property == cx.violation.property && again.violation.detail == cx.violation.detail &&
         again.trace == cx.trace;
}

void explorer_clean_pass() {
  std::size_t passed = 0, total = 0;
  double worst = 0;
  std::uint64_t states = 0;
  std::string first_problem;
  for (std::size_t n = 1; n <= 4; ++n) {
    for (std::size_t f = 0; f <= 2; ++f) {
      for (auto mode : {CqFailureMode::flush, CqFailureMode::fail}) {
        ExplorerConfig c;
        c.nmessages = n;
        c.nfailures = f;
        c.cq_mode = mode;
        const auto t0 = Clock::now();
        ExploreResult r = explore(c);
        const double sec = seconds_since(t0);
        ++total;
        worst = std::max(worst, sec);
        states += r.stats.distinct_states;
        const bool ok = r.pass && !r.truncated && sec < kExplorerLimitSec;
        passed += ok;
        std::cout << "  explore n=" << n << " f=" << f << " mode=" << to_string(mode) << " initial=0.." << n
                  << " states=" << r.stats.distinct_states << " terminal=" << r.stats.terminal_states
                  << " depth=" << r.stats.max_depth << " time=" << fmt(sec) << "s "
                  << (ok ? "ok" : "FAILED") << std::endl;
        if (!ok && first_problem.empty())
          first_problem = r.counterexample ? r.counterexample->violation.property + ": " +
                                                 r.counterexample->violation.detail
                                           : (r.truncated ? "state limit reached" : "over time limit");
      }
    }
  }
  verdict(1, "explorer-clean-pass", passed == total,
          std::to_string(passed) + "/" + std::to_string(total) + " configurations clean, " + std::to_string(states) +
              " distinct states, slowest " + fmt(worst) + "s, limit " + fmt(kExplorerLimitSec, 0) + "s" +
              (first_problem.empty() ? "" : ", first problem: " + first_problem));
}

// First counterexample whose property is in `accept`, searching flush then
// fail mode.
std::optional<Counterexample> find_bug(ExplorerConfig c, const std::vector<std::string>& accept,
                                       std::uint64_t& states) {
  states = 0;
  for (auto mode : {CqFailureMode::flush, CqFailureMode::fail}) {
    c.cq_mode = mode;
    ExploreResult r = explore(c);
    states += r.stats.distinct_states;
    if (r.pass || !r.counterexample) continue;
    for (const auto& p : accept)
      if (r.counterexample->violation.property == p) return r.counterexample;
  }
  return std::nullopt;
}

std::string describe(const std::optional<Counterexample>& cx, std::uint64_t states) {
  if (!cx) return "no counterexample in " + std::to_string(states) + " states, both modes";
  return cx->violation.property + ": " + cx->violation.detail + " in " + std::to_string(cx->choices.size()) +
         " steps (mode " + to_string(cx->config.cq_mode) + ")";
}

void mutation_oracles() {
  std::uint64_t states = 0;

  // no-term at (3, 1): a duplicate delivery is required.
  ExplorerConfig nt;
  nt.nmessages = 3;
  nt.nfailures = 1;
  nt.mutant = Mutant::no_term;
  nt.want = "safety.duplicate";
  auto dup = find_bug(nt, {"safety.duplicate"}, states);
  const bool nt_replays = dup && replays(*dup);
  std::cout << "  no-term (3,1): " << describe(dup, states) << std::endl;

  // Same mutant with a second failure, reported for context.
  nt.nfailures = 2;
  auto dup2 = find_bug(nt, {"safety.duplicate"}, states);
  std::cout << "  info: no-term (3,2): " << describe(dup2, states)
            << (dup2 ? std::string(", replays: ") + (replays(*dup2) ? "yes" : "no") : "") << std::endl;

  // no-fc-transition at (3, 1): a stuck or ordering counterexample.
  ExplorerConfig fc;
  fc.nmessages = 3;
  fc.nfailures = 1;
  fc.mutant = Mutant::no_fc_transition;
  auto stuck = find_bug(fc, {"liveness", "quiescence", "safety.order"}, states);
  const bool fc_replays = stuck && replays(*stuck);
  std::cout << "  no-fc-transition (3,1): " << describe(stuck, states) << std::endl;

  verdict(2, "mutation-oracles", dup && nt_replays && stuck && fc_replays,
          std::string("no-term duplicate at (3,1): ") + (dup ? "found" : "not found") +
              ", replays: " + (nt_replays ? "yes" : "no") +
              "; no-fc-transition stuck/ordering at (3,1): " + (stuck ? "found" : "not found") +
              ", replays: " + (fc_replays ? "yes" : "no"));
}

void fuzzer() {
  FuzzOptions o;
  o.iterations = kFuzzIterations;
  o.seed = 1;
  o.stop_after_failures = 0;
  const auto t0 = Clock::now();
  FuzzReport rep = fuzz(o, [](const FuzzFailure& f) {
    std::cout << "  failing case seed=" << f.case_seed << " " << f.violation.property << ": " << f.violation.detail
              << std::endl;
  });
  const double sec = seconds_since(t0);
  std::cout << "  iterations=" << rep.iterations_run << " steps=" << rep.total_steps
            << " fault_events=" << rep.faults_injected << std::endl;
  verdict(3, "fuzzer", rep.failures.empty() && rep.iterations_run == kFuzzIterations && sec < kFuzzLimitSec,
          std::to_string(rep.iterations_run) + " scenarios, " + std::to_string(rep.failures.size()) + " failures, " +
              fmt(sec) + "s, limit " + fmt(kFuzzLimitSec, 0) + "s");
}

void recovery_ranges() {
  std::size_t traces = 0, ups = 0, ranged = 0, restarts = 0;
  std::vector<std::string> errors;
  auto check = [&](const std::string& label, const RunResult& r, std::size_t targets) {
    ++traces;
    auto rc = lptest::check_recovery_ranges(r.trace, targets);
    ups += rc.ups;
    ranged += rc.ups_with_recovery;
    restarts += rc.restarts;
    for (const auto& e : rc.errors) errors.push_back(label + ": " + e);
    if (!r.pass) errors.push_back(label + ": run failed");
  };
  for (const auto& name : kBundled) {
    Scenario sc = load_scenario(scenario_path(name));
    check(name, run_scenario(sc, sc.seed, {true, false}), sc.targets);
  }
  FuzzOptions o;
  for (std::uint64_t i = 0; i < 3000; ++i) {
    const std::uint64_t s = case_seed(1, i);
    Scenario sc = random_scenario(s, o);
    if (sc.faults.empty()) continue;
    check("fuzz " + std::to_string(s), run_scenario(sc, s, {true, false}), sc.targets);
  }
  for (std::size_t k = 0; k < std::min<std::size_t>(errors.size(), 5); ++k) std::cout << "  " << errors[k] << std::endl;
  verdict(4, "recovery-range-exactness", errors.empty() && ranged > 0,
          std::to_string(traces) + " traces, " + std::to_string(ups) + " target restarts (" + std::to_string(ranged) +
              " with a recovery range), " + std::to_string(restarts) + " replayer starts, " +
              std::to_string(errors.size()) + " mismatches");
}

void dummy_effectiveness() {
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    auto p = lptest::run_dummy_probe(kDummyDispatches, kDummyE, 3, seed);
    const bool lag_ok = p.worst_lag <= 2 * kDummyE;
    const bool restart_ok = p.restart_start + 2 * kDummyE >= p.log_size + 1;
    const bool run_ok = p.dispatches == kDummyDispatches;
    ok = ok && lag_ok && restart_ok && run_ok;
    std::cout << "  seed=" << seed << " dispatches=" << p.dispatches << " samples=" << p.samples
              << " worst_lag=" << p.worst_lag << " dummies_applied=" << p.dummies_applied
              << " restart_start=" << p.restart_start << " log_size=" << p.log_size << std::endl;
    if (detail.empty())
      detail = "E=" + std::to_string(kDummyE) + ", worst lag " + std::to_string(p.worst_lag) + " <= " +
               std::to_string(2 * kDummyE) + ", restart at " + std::to_string(p.restart_start) + " for log head " +
               std::to_string(p.log_size);
  }
  verdict(5, "dummy-entry-effectiveness", ok, detail + ", 3 seeds");
}

void bench_sanity() {
  BenchConfig c;
  c.targets = 4;
  c.payload_kb = 1;
  c.entries = 10000;
  BenchResult r = run_bench(c);
  const double median_ms = static_cast<double>(r.summary.replayer_delay.median) / 1e6;
  const bool ordered = r.summary.unordered_rows == 0;
  std::cout << "  rows=" << r.rows.size() << " wall=" << fmt(std::chrono::duration<double>(r.wall).count()) << "s"
            << " replayer_delay mean=" << fmt(r.summary.replayer_delay.mean / 1e3, 1)
            << "us median=" << fmt(r.summary.replayer_delay.median / 1e3, 1)
            << "us p99=" << fmt(r.summary.replayer_delay.p99 / 1e3, 1)
            << "us apply_delay median=" << fmt(r.summary.apply_delay.median / 1e3, 1) << "us" << std::endl;
  verdict(6, "benchmark-sanity", r.completed && ordered && median_ms < kBenchMedianLimitMs,
          std::string("completed: ") + (r.completed ? "yes" : "no") + ", unordered rows " +
              std::to_string(r.summary.unordered_rows) + ", median replayer delay " + fmt(median_ms, 3) +
              " ms < " + fmt(kBenchMedianLimitMs, 0) + " ms");
}

void determinism() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("logplayer-acceptance-" + std::to_string(::getpid()));
  fs::create_directories(dir);
  auto write = [](const fs::path& p, const std::string& s) {
    std::ofstream(p, std::ios::binary) << s;
  };
  auto read = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  std::size_t compared = 0, differing = 0;
  auto compare = [&](const std::string& label, const std::string& a, const std::string& b) {
    write(dir / (label + ".1.trace"), a);
    write(dir / (label + ".2.trace"), b);
    ++compared;
    if (a.empty() || read(dir / (label + ".1.trace")) != read(dir / (label + ".2.trace"))) {
      ++differing;
      std::cout << "  differs: " << label << std::endl;
    }
  };
  for (const auto& name : kBundled) {
    Scenario sc = load_scenario(scenario_path(name));
    compare(name, run_scenario(sc, sc.seed, {true, true}).trace, run_scenario(sc, sc.seed, {true, true}).trace);
  }
  FuzzOptions o;
  for (std::uint64_t i = 0; i < 500; ++i) {
    const std::uint64_t s = case_seed(7, i);
    compare("fuzz-" + std::to_string(s), fuzz_case(s, o, {true, false}).trace, fuzz_case(s, o, {true, false}).trace);
  }
  fs::remove_all(dir);
  verdict(7, "determinism", differing == 0,
          std::to_string(compared) + " trace files written twice, " + std::to_string(differing) + " differ");
}

}  // namespace

int main(int argc, char** argv) {
  // Optional: run a single criterion, e.g. `logplayer_acceptance 3`.
  const int only = argc > 1 ? std::atoi(argv[1]) : 0;
  const auto t0 = Clock::now();
  if (!only || only == 1) explorer_clean_pass();
  if (!only || only == 2) mutation_oracles();
  if (!only || only == 3) fuzzer();
  if (!only || only == 4) recovery_ranges();
  if (!only || only == 5) dummy_effectiveness();
  if (!only || only == 6) bench_sanity();
  if (!only || only == 7) determinism();
  std::cout << "acceptance: " << failures << " failed, total " << fmt(seconds_since(t0), 1) << "s" << std::endl;
  return failures;
}
