// logplayer: run scenarios, explore interleavings, fuzz, and benchmark.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "logplayer/metrics.hpp"
#include "logplayer/runtime.hpp"
#include "logplayer/sim/explorer.hpp"
#include "logplayer/sim/scenario.hpp"

namespace lp = logplayer;
namespace sim = logplayer::sim;

namespace {

constexpr int kPass = 0;
constexpr int kViolation = 1;
constexpr int kUsage = 2;

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
}

int cmd_run(const std::string& path, std::optional<std::uint64_t> seed, const std::string& mutant,
            const std::string& out) {
  sim::Scenario sc;
  try {
    sc = sim::load_scenario(path);
    if (!mutant.empty()) sc.mutant = lp::parse_mutant(mutant);
  } catch (const std::exception& e) {
    std::cerr << path << ": " << e.what() << '\n';
    return kUsage;
  }
  const std::uint64_t s = seed.value_or(sc.seed);
  sim::RunResult r = sim::run_scenario(sc, s, {true, true});
  std::cout << "scenario " << sc.name << " seed=" << s << " targets=" << sc.targets << " entries=" << sc.entries
            << '\n'
            << "steps=" << r.steps << " baseline_steps=" << r.baseline_steps << " drain_steps=" << r.drain_steps
            << " drain_budget=" << r.drain_budget << '\n';
  for (std::size_t i = 0; i < sc.faults.size(); ++i)
    std::cout << "fault " << sim::to_string(sc.faults[i].kind)
              << (sc.faults[i].target ? " target=" + std::to_string(sc.faults[i].target) : std::string())
              << " at step " << r.fault_steps[i] << '\n';
  for (std::size_t i = 0; i < r.restart_starts.size(); ++i)
    std::cout << (i == 0 ? "start" : "restart") << " main fetcher start_index=" << r.restart_starts[i] << '\n';
  std::cout << "last_acks=" << sim::World::join(r.last_acks) << " current_index=" << r.current_index
            << " log_size=" << r.log_size << '\n';
  lp::write_summary(std::cout, lp::summarize(r.metrics), 1, "steps");
  if (!out.empty()) {
    write_file(out, r.trace);
    std::ofstream m(out + ".metrics");
    lp::write_records(m, r.metrics);
    lp::write_summary(m, lp::summarize(r.metrics), 1, "steps");
    std::cout << "trace written to " << out << " (metrics: " << out << ".metrics)\n";
  }
  if (r.pass) {
    std::cout << "verdict PASS\n";
    return kPass;
  }
  std::cout << "verdict FAIL " << r.violation->property << ": " << r.violation->detail << '\n';
  return kViolation;
}

void print_stats(const sim::ExplorerConfig& c, const sim::ExploreResult& r, double secs) {
  std::cout << "explore nmessages=" << c.nmessages << " nfailures=" << c.nfailures << " targets=" << c.targets
            << " batch_size=" << c.batch_size << " cq_mode=" << sim::to_string(c.cq_mode)
            << " mutant=" << lp::to_string(c.mutant) << '\n'
            << "  initial_states=" << r.stats.initial_states << " distinct_states=" << r.stats.distinct_states
            << " transitions=" << r.stats.transitions << " terminal_states=" << r.stats.terminal_states
            << " max_depth=" << r.stats.max_depth;
  if (!c.want.empty()) std::cout << " other_violations=" << r.stats.other_violations;
  std::cout << " seconds=" << std::fixed << std::setprecision(2) << secs
            << std::defaultfloat << '\n';
}

int cmd_replay(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    std::cerr << "cannot open '" << path << "'\n";
    return kUsage;
  }
  sim::Counterexample saved;
  try {
    saved = sim::read_counterexample(in);
  } catch (const std::exception& e) {
    std::cerr << path << ": " << e.what() << '\n';
    return kUsage;
  }
  auto cx = sim::make_counterexample(saved.config, saved.initial_progress, saved.choices);
  std::cout << cx.trace << cx.final_state;
  std::cout << "replayed " << cx.choices.size() << " steps: " << cx.violation.property << ": " << cx.violation.detail
            << '\n';
  const bool same = cx.violation.property == saved.violation.property && cx.violation.detail == saved.violation.detail;
  std::cout << (same ? "reproduced" : "NOT reproduced") << '\n';
  return cx.violation.property == "none" ? kPass : kViolation;
}

int cmd_explore(sim::ExplorerConfig c, const std::string& modes, const std::string& out) {
  std::vector<lp::sim::CqFailureMode> list;
  if (modes == "both") list = {sim::CqFailureMode::flush, sim::CqFailureMode::fail};
  else list = {sim::parse_cq_mode(modes)};
  try {
    sim::check_bounds(c);
  } catch (const std::exception& e) {
    std::cerr << "refusing: " << e.what() << '\n';
    return kUsage;
  }
  for (auto mode : list) {
    c.cq_mode = mode;
    const auto t0 = std::chrono::steady_clock::now();
    sim::ExploreResult r = sim::explore(c);
    print_stats(c, r, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    if (r.truncated) {
      std::cout << "verdict INCOMPLETE: state limit reached\n";
      return kViolation;
    }
    if (!r.pass) {
      const auto& cx = *r.counterexample;
      std::ofstream f(out);
      sim::write_counterexample(f, cx);
      std::cout << "verdict FAIL " << cx.violation.property << ": " << cx.violation.detail << '\n'
                << "counterexample (" << cx.choices.size() << " steps, initial last_ack "
                << sim::World::join(cx.initial_progress) << ") written to " << out << '\n';
      return kViolation;
    }
    std::cout << "verdict PASS (no safety violation, no deadlock, every terminal state fully delivered)\n";
  }
  return kPass;
}

int cmd_fuzz(const sim::FuzzOptions& o, std::optional<std::uint64_t> one_case, const std::string& out) {
  if (one_case) {
    sim::Scenario sc = sim::random_scenario(*one_case, o);
    sim::RunResult r = sim::run_scenario(sc, *one_case, {true, false});
    std::cout << sim::to_text(sc);
    if (!out.empty()) {
      write_file(out, r.trace);
      std::cout << "trace written to " << out << '\n';
    }
    if (r.pass) {
      std::cout << "case " << *one_case << " PASS steps=" << r.steps << '\n';
      return kPass;
    }
    std::cout << "case " << *one_case << " FAIL " << r.violation->property << ": " << r.violation->detail << '\n';
    return kViolation;
  }
  const auto t0 = std::chrono::steady_clock::now();
  auto rep = sim::fuzz(o, [&](const sim::FuzzFailure& f) {
    std::cout << "FAIL case seed " << f.case_seed << ": " << f.violation.property << ": " << f.violation.detail << '\n'
              << "  rerun with: logplayer fuzz --case=" << f.case_seed
              << (o.mutant != lp::Mutant::none ? std::string(" --mutant=") + lp::to_string(o.mutant) : "") << '\n';
    if (!out.empty()) {
      std::filesystem::create_directories(out);
      const std::string base = out + "/case-" + std::to_string(f.case_seed);
      write_file(base + ".scenario", sim::to_text(f.scenario));
      write_file(base + ".trace", sim::run_scenario(f.scenario, f.case_seed, {true, false}).trace);
      std::cout << "  scenario and trace written to " << base << ".*\n";
    }
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "fuzz iterations=" << rep.iterations_run << " failures=" << rep.failures.size()
            << " faults_injected=" << rep.faults_injected << " total_steps=" << rep.total_steps
            << " seconds=" << std::fixed << std::setprecision(2) << secs << '\n';
  return rep.failures.empty() ? kPass : kViolation;
}

int cmd_bench(const lp::BenchConfig& cfg, const std::string& out) {
  lp::BenchResult r = lp::run_bench(cfg);
  std::cout << "bench targets=" << cfg.targets << " payload_kb=" << cfg.payload_kb << " entries=" << cfg.entries
            << " batch_size=" << cfg.batch_size << " dummy_interval=" << cfg.dummy_interval << '\n'
            << "rows=" << r.rows.size() << " completed=" << (r.completed ? "yes" : "no")
            << " rejected=" << r.rejected << " wall_ms=" << std::chrono::duration<double, std::milli>(r.wall).count()
            << '\n';
  std::cout << std::left << std::setw(16) << "measure" << std::right << std::setw(12) << "mean_us" << std::setw(12)
            << "median_us" << std::setw(12) << "p90_us" << std::setw(12) << "p99_us" << '\n';
  auto row = [](const char* name, const lp::Summary& s) {
    std::cout << std::left << std::setw(16) << name << std::right << std::fixed << std::setprecision(1)
              << std::setw(12) << s.mean / 1000 << std::setw(12) << s.median / 1000.0 << std::setw(12)
              << s.p90 / 1000.0 << std::setw(12) << s.p99 / 1000.0 << std::defaultfloat << '\n';
  };
  row("replayer_delay", r.summary.replayer_delay);
  row("apply_delay", r.summary.apply_delay);
  std::cout << "unordered_rows=" << r.summary.unordered_rows << '\n';
  if (!out.empty()) {
    std::ofstream f(out);
    lp::write_records(f, r.rows);
    lp::write_summary(f, r.summary, 1000, "us");
    std::cout << "records written to " << out << '\n';
  }
  return r.completed && r.summary.unordered_rows == 0 && r.rejected == 0 ? kPass : kViolation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Log replay engine with exactly-once delivery and a deterministic simulation harness"};
  app.require_subcommand(1);

  std::string mutant;
  std::string out;

  auto* run = app.add_subcommand("run", "Run a scenario file under the deterministic scheduler");
  std::string scenario;
  std::optional<std::uint64_t> seed;
  run->add_option("--scenario", scenario, "Scenario file")->required();
  run->add_option("--seed", seed, "Scheduler seed (default: the scenario's seed)");
  run->add_option("--mutant", mutant, "Protocol mutant: none, no-term, no-fc-transition");
  run->add_option("--out", out, "Trace file (metrics go to <out>.metrics)");

  auto* exp = app.add_subcommand("explore", "Exhaustively explore interleavings");
  sim::ExplorerConfig ec;
  std::string modes = "both";
  std::string replay_path;
  std::optional<lp::Index> initial;
  exp->add_option("--nmessages", ec.nmessages, "Log entries")->capture_default_str();
  exp->add_option("--nfailures", ec.nfailures, "Target crashes")->capture_default_str();
  exp->add_option("--targets", ec.targets, "Targets")->capture_default_str();
  exp->add_option("--batch-size", ec.batch_size, "Max batch size")->capture_default_str();
  exp->add_option("--dummy-interval", ec.dummy_interval, "Dummy interval E (0: off)")->capture_default_str();
  exp->add_option("--ack-batching", ec.ack_batching, "Ack every k-th message, 0 for end of batch only")->capture_default_str();
  exp->add_option("--cq-mode", modes, "flush, fail or both")->capture_default_str();
  exp->add_option("--initial-last-ack", initial, "Fix the initial last_ack (default: all of [0, nmessages])");
  exp->add_option("--mutant", mutant, "Protocol mutant: none, no-term, no-fc-transition");
  exp->add_option("--out", out, "Counterexample file")->default_str("counterexample.txt");
  exp->add_option("--want", ec.want, "Only stop on violations whose property starts with this (e.g. safety.duplicate)");
  exp->add_option("--replay", replay_path, "Replay a counterexample file instead of exploring");

  auto* fz = app.add_subcommand("fuzz", "Randomized fault-injection scenarios");
  sim::FuzzOptions fo;
  std::optional<std::uint64_t> one_case;
  fz->add_option("--iterations", fo.iterations, "Scenarios to run")->capture_default_str();
  fz->add_option("--seed", fo.seed, "Master seed")->capture_default_str();
  fz->add_option("--entries", fo.max_entries, "Max entries per scenario")->capture_default_str();
  fz->add_option("--targets", fo.max_targets, "Max targets per scenario")->capture_default_str();
  fz->add_option("--nfailures", fo.max_faults, "Max faults per scenario")->capture_default_str();
  fz->add_option("--case", one_case, "Rerun one case by its seed");
  fz->add_option("--mutant", mutant, "Protocol mutant: none, no-term, no-fc-transition");
  fz->add_option("--out", out, "Directory for failing cases (with --case: trace file)");

  auto* bn = app.add_subcommand("bench", "Fault-free latency benchmark on real threads");
  lp::BenchConfig bc;
  long latency_us = 0, interval_us = 20;
  bn->add_option("--targets", bc.targets, "Targets")->capture_default_str();
  bn->add_option("--payload-kb", bc.payload_kb, "Key-values of 1 KB per entry")->capture_default_str();
  bn->add_option("--entries", bc.entries, "Entries to append")->capture_default_str();
  bn->add_option("--batch-size", bc.batch_size, "Max batch size")->capture_default_str();
  bn->add_option("--dummy-interval", bc.dummy_interval, "Dummy interval E (0: off)")->capture_default_str();
  bn->add_option("--seed", bc.seed, "Workload seed")->capture_default_str();
  bn->add_option("--append-latency-us", latency_us, "Simulated append latency")->capture_default_str();
  bn->add_option("--interval-us", interval_us, "Producer pacing between appends")->capture_default_str();
  bn->add_option("--out", out, "Record file (one line per entry per target)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(scenario, seed, mutant, out);
    if (*exp) {
      if (!replay_path.empty()) return cmd_replay(replay_path);
      ec.mutant = lp::parse_mutant(mutant);
      ec.initial_last_ack = initial;
      return cmd_explore(ec, modes, out.empty() ? "counterexample.txt" : out);
    }
    if (*fz) {
      fo.mutant = lp::parse_mutant(mutant);
      return cmd_fuzz(fo, one_case, out);
    }
    if (*bn) {
      bc.append_latency = std::chrono::microseconds(latency_us);
      bc.append_interval = std::chrono::microseconds(interval_us);
      return cmd_bench(bc, out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
