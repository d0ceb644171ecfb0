#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "logplayer/sim/explorer.hpp"
#include "logplayer/sim/scenario.hpp"
#include "support.hpp"

using namespace logplayer;
using namespace logplayer::sim;

namespace {

const std::vector<std::string> kBundled = {"crash-one-target", "replayer-restart", "crash-during-recovery",
                                           "idle-target", "random-faults"};

std::string scenario_path(const std::string& name) {
  return std::string(LOGPLAYER_SCENARIO_DIR) + "/" + name + ".scenario";
}

ScenarioError parse_error(const std::string& text) {
  std::istringstream in(text);
  try {
    parse_scenario(in);
  } catch (const ScenarioError& e) {
    return e;
  }
  ADD_FAILURE() << "no error for:\n" << text;
  return ScenarioError(0, "", "");
}

}  // namespace

TEST(ScenarioParse, AllKeysAndFaults) {
  std::istringstream in(
      "# comment\n"
      "name = demo\n"
      "targets = 2   # trailing comment\n"
      "entries = 10\n"
      "batch_size = 3\n"
      "dummy_interval = 5\n"
      "ack_batching = 2\n"
      "payload_bytes = 64\n"
      "seed = 9\n"
      "membership = all\n"
      "cq_mode = fail\n"
      "mutant = none\n"
      "idle_targets = 2\n"
      "fault 10 target_down 1\n"
      "fault nondet target_up 1\n"
      "fault nondet replayer_restart\n");
  Scenario sc = parse_scenario(in);
  EXPECT_EQ(sc.name, "demo");
  EXPECT_EQ(sc.targets, 2u);
  EXPECT_EQ(sc.entries, 10u);
  EXPECT_EQ(sc.batch_size, 3u);
  EXPECT_EQ(sc.dummy_interval, 5u);
  EXPECT_EQ(sc.ack_batching, 2u);
  EXPECT_EQ(sc.payload_bytes, 64u);
  EXPECT_EQ(sc.seed, 9u);
  EXPECT_EQ(sc.membership, "all");
  EXPECT_EQ(sc.cq_mode, CqFailureMode::fail);
  EXPECT_EQ(sc.idle_targets, std::vector<TargetId>{2});
  ASSERT_EQ(sc.faults.size(), 3u);
  EXPECT_EQ(sc.faults[0].step, std::optional<std::uint64_t>(10));
  EXPECT_FALSE(sc.faults[1].step);
  EXPECT_EQ(sc.faults[2].kind, FaultKind::replayer_restart);

  std::istringstream again(to_text(sc));
  Scenario sc2 = parse_scenario(again);
  EXPECT_EQ(to_text(sc2), to_text(sc));
}

TEST(ScenarioParse, ErrorsNameLineAndField) {
  auto e = parse_error("targets = 2\nbatch_size = four\n");
  EXPECT_EQ(e.line(), 2u);
  EXPECT_EQ(e.field(), "batch_size");

  e = parse_error("targets = 2\n\nbogus = 1\n");
  EXPECT_EQ(e.line(), 3u);
  EXPECT_EQ(e.field(), "bogus");

  e = parse_error("fault 5 explode 1\n");
  EXPECT_EQ(e.line(), 1u);
  EXPECT_EQ(e.field(), "fault.kind");

  e = parse_error("fault 5 target_down\n");
  EXPECT_EQ(e.field(), "fault.target");

  e = parse_error("cq_mode = sometimes\n");
  EXPECT_EQ(e.field(), "cq_mode");

  e = parse_error("just words\n");
  EXPECT_EQ(e.line(), 1u);
}

TEST(ScenarioParse, CrossFieldErrors) {
  auto e = parse_error("targets = 2\nfault 5 target_up 1\n");
  EXPECT_EQ(e.line(), 0u);
  EXPECT_EQ(e.field(), "fault");
  e = parse_error("targets = 2\nfault 5 target_down 3\n");
  EXPECT_EQ(e.field(), "fault");
  e = parse_error("targets = 1\nidle_targets = 1\n");
  EXPECT_EQ(e.field(), "idle_targets");
}

TEST(ScenarioParse, BundledScenariosLoad) {
  for (const auto& name : kBundled) EXPECT_NO_THROW(load_scenario(scenario_path(name))) << name;
  EXPECT_THROW(load_scenario(scenario_path("does-not-exist")), std::runtime_error);
}

TEST(RunScenario, FaultFreeAllMembershipReachesHundred) {
  Scenario sc;
  sc.targets = 3;
  sc.entries = 100;
  sc.membership = "all";
  sc.dummy_interval = 10;
  RunResult r = run_scenario(sc, 1);
  ASSERT_TRUE(r.pass) << r.violation->property << ": " << r.violation->detail;
  EXPECT_EQ(r.last_acks, (std::vector<Index>{100, 100, 100}));
  EXPECT_EQ(r.log_size, 100u);
}

TEST(RunScenario, FaultFreeRandomMembershipDummiesCatchUp) {
  Scenario sc;
  sc.targets = 3;
  sc.entries = 100;
  sc.dummy_interval = 1;
  RunResult r = run_scenario(sc, 5);
  ASSERT_TRUE(r.pass);
  for (Index a : r.last_acks) EXPECT_GE(a + 1, r.log_size);
}

TEST(RunScenario, BundledScenariosPassWithExactRecoveryRanges) {
  for (const auto& name : kBundled) {
    Scenario sc = load_scenario(scenario_path(name));
    RunResult r = run_scenario(sc, sc.seed, {true, true});
    ASSERT_TRUE(r.pass) << name << ": " << r.violation->property << " " << r.violation->detail;
    auto rc = lptest::check_recovery_ranges(r.trace, sc.targets);
    EXPECT_TRUE(rc.errors.empty()) << name << ": " << rc.errors.front();
    EXPECT_EQ(rc.restarts, r.restart_starts.size());
    for (const auto& m : r.metrics) EXPECT_TRUE(m.ordered());
  }
}

TEST(RunScenario, CrashOneTargetShowsRecoveryRange) {
  Scenario sc = load_scenario(scenario_path("crash-one-target"));
  RunResult r = run_scenario(sc, sc.seed, {true, false});
  ASSERT_TRUE(r.pass);
  auto rc = lptest::check_recovery_ranges(r.trace, sc.targets);
  EXPECT_GE(rc.ups_with_recovery, 1u);
}

TEST(RunScenario, ReplayerRestartStartsAtMinPlusOne) {
  Scenario sc = load_scenario(scenario_path("replayer-restart"));
  RunResult r = run_scenario(sc, sc.seed, {true, false});
  ASSERT_TRUE(r.pass);
  ASSERT_EQ(r.restart_starts.size(), 2u);
  auto rc = lptest::check_recovery_ranges(r.trace, sc.targets);
  EXPECT_EQ(rc.restarts, 2u);
  EXPECT_TRUE(rc.errors.empty());
}

TEST(RunScenario, SameSeedSameTrace) {
  for (const auto& name : kBundled) {
    Scenario sc = load_scenario(scenario_path(name));
    auto a = run_scenario(sc, sc.seed, {true, true});
    auto b = run_scenario(sc, sc.seed, {true, true});
    EXPECT_EQ(a.trace, b.trace) << name;
    EXPECT_FALSE(a.trace.empty());
  }
}

TEST(RunScenario, DifferentSeedsDiffer) {
  Scenario sc = load_scenario(scenario_path("random-faults"));
  EXPECT_NE(run_scenario(sc, 1, {true, false}).trace, run_scenario(sc, 2, {true, false}).trace);
}

TEST(RunScenario, MutantScenarioFails) {
  Scenario sc = load_scenario(scenario_path("crash-during-recovery"));
  sc.mutant = Mutant::no_fc_transition;
  bool failed = false;
  for (std::uint64_t s = 1; s <= 50 && !failed; ++s) failed = !run_scenario(sc, s).pass;
  EXPECT_TRUE(failed);
}

TEST(Explorer, TrivialConfigPasses) {
  ExplorerConfig c;
  c.nmessages = 1;
  c.nfailures = 0;
  auto r = explore(c);
  EXPECT_TRUE(r.pass);
  EXPECT_GE(r.stats.distinct_states, 1u);
  EXPECT_EQ(r.stats.initial_states, 2u);  // last_ack in {0, 1}
}

TEST(Explorer, CleanModelCheckBothModes) {
  for (auto mode : {CqFailureMode::flush, CqFailureMode::fail}) {
    ExplorerConfig c;
    c.nmessages = 3;
    c.nfailures = 0;
    c.cq_mode = mode;
    auto r = explore(c);
    EXPECT_TRUE(r.pass) << to_string(mode) << ": " << r.counterexample->violation.detail;
    EXPECT_EQ(r.stats.initial_states, 4u);
  }
}

TEST(Explorer, OneFailurePasses) {
  ExplorerConfig c;
  c.nmessages = 2;
  c.nfailures = 1;
  c.cq_mode = CqFailureMode::fail;
  EXPECT_TRUE(explore(c).pass);
}

TEST(Explorer, MultiTargetWithDummies) {
  ExplorerConfig c;
  c.nmessages = 2;
  c.nfailures = 1;
  c.targets = 2;
  c.dummy_interval = 1;
  c.initial_last_ack = 0;
  EXPECT_TRUE(explore(c).pass);
}

TEST(Explorer, BoundsAreEnforced) {
  ExplorerConfig c;
  c.nmessages = 7;
  EXPECT_THROW(explore(c), std::invalid_argument);
  c.nmessages = 3;
  c.targets = 3;
  c.nfailures = 3;
  EXPECT_THROW(explore(c), std::invalid_argument);
}

TEST(Explorer, NoFcTransitionMutantIsCaught) {
  ExplorerConfig c;
  c.nmessages = 3;
  c.nfailures = 1;
  c.mutant = Mutant::no_fc_transition;
  auto r = explore(c);
  ASSERT_FALSE(r.pass);
  ASSERT_TRUE(r.counterexample);
  const auto& p = r.counterexample->violation.property;
  EXPECT_TRUE(p == "liveness" || p == "quiescence" || p.rfind("safety.order", 0) == 0) << p;
}

TEST(Explorer, NoTermMutantDuplicatesWithTwoFailures) {
  ExplorerConfig c;
  c.nmessages = 3;
  c.nfailures = 2;
  c.mutant = Mutant::no_term;
  c.want = "safety.duplicate";
  auto r = explore(c);
  ASSERT_FALSE(r.pass);
  EXPECT_EQ(r.counterexample->violation.property, "safety.duplicate");
}

TEST(Explorer, CounterexampleFileRoundTripsAndReplays) {
  ExplorerConfig c;
  c.nmessages = 3;
  c.nfailures = 1;
  c.mutant = Mutant::no_fc_transition;
  auto r = explore(c);
  ASSERT_TRUE(r.counterexample);
  std::stringstream file;
  write_counterexample(file, *r.counterexample);
  Counterexample back = read_counterexample(file);
  EXPECT_EQ(back.choices, r.counterexample->choices);
  EXPECT_EQ(back.initial_progress, r.counterexample->initial_progress);
  EXPECT_EQ(back.violation.property, r.counterexample->violation.property);
  Counterexample again = make_counterexample(back.config, back.initial_progress, back.choices);
  EXPECT_EQ(again.violation.property, back.violation.property);
  EXPECT_EQ(again.violation.detail, back.violation.detail);
  EXPECT_EQ(again.trace, r.counterexample->trace);
}

TEST(Explorer, ReplayRejectsDisabledChoice) {
  ExplorerConfig c;
  c.nmessages = 1;
  c.nfailures = 0;
  EXPECT_THROW(replay(c, {0}, {Action{ActionKind::deliver, 1}}), std::runtime_error);
}

TEST(ExplorerAction, ParsePrintRoundTrip) {
  for (Action a : {Action{ActionKind::cq_next}, Action{ActionKind::deliver, 2}, Action{ActionKind::recovery_step, 0, 1},
                   Action{ActionKind::crash, 3}}) {
    EXPECT_EQ(parse_action(to_string(a)), a) << to_string(a);
  }
}

TEST(Fuzz, SmallRunIsClean) {
  FuzzOptions o;
  o.iterations = 300;
  o.seed = 99;
  auto rep = fuzz(o);
  EXPECT_EQ(rep.iterations_run, 300u);
  EXPECT_TRUE(rep.failures.empty()) << rep.failures.front().case_seed << " "
                                    << rep.failures.front().violation.detail;
}

TEST(Fuzz, MutantFailsEarlyAndReplays) {
  FuzzOptions o;
  o.iterations = 300;
  o.mutant = Mutant::no_fc_transition;
  auto rep = fuzz(o);
  ASSERT_EQ(rep.failures.size(), 1u);
  const auto seed = rep.failures[0].case_seed;
  auto a = fuzz_case(seed, o, {true, false});
  auto b = fuzz_case(seed, o, {true, false});
  EXPECT_FALSE(a.pass);
  EXPECT_EQ(a.trace, b.trace);
  EXPECT_EQ(a.violation->property, rep.failures[0].violation.property);
}

TEST(Fuzz, RandomScenariosStayInBounds) {
  FuzzOptions o;
  for (std::uint64_t i = 0; i < 2000; ++i) {
    Scenario sc = random_scenario(case_seed(1, i), o);
    ASSERT_NO_THROW(validate(sc));
    EXPECT_LE(sc.entries, 50u);
    EXPECT_LE(sc.targets, 4u);
    std::size_t faults = 0;
    for (const auto& f : sc.faults) faults += f.kind != FaultKind::target_up;
    EXPECT_LE(faults, 3u);
    EXPECT_TRUE(sc.batch_size == 1 || sc.batch_size == 4 || sc.batch_size == 16);
    EXPECT_TRUE(sc.ack_batching == 1 || sc.ack_batching == 4);
    EXPECT_TRUE(sc.dummy_interval == 1 || sc.dummy_interval == 5 || sc.dummy_interval == 10);
  }
}

TEST(TraceChecker, FlagsWrongRange) {
  const std::string trace =
      "1 dispatch idx=1 mode=normal term=0 pushed=[1]\n"
      "2 apply target=1 idx=1 dummy=0\n"
      "3 dispatch idx=2 mode=normal term=0 pushed=[1]\n"
      "4 up target=1 epoch=2 term=2 persisted=1 current_index=2 recovery=1..2\n";
  auto rc = lptest::check_recovery_ranges(trace, 1);
  ASSERT_EQ(rc.errors.size(), 1u);
  EXPECT_NE(rc.errors[0].find("expected 2..2"), std::string::npos);
}

TEST(DummyProbe, IdleTargetStaysWithinTwoE) {
  auto p = lptest::run_dummy_probe(200, 10, 3, 4);
  EXPECT_EQ(p.dispatches, 200u);
  EXPECT_GT(p.samples, 200u);
  EXPECT_LE(p.worst_lag, 20u);
  EXPECT_GE(p.restart_start + 20, p.log_size + 1);
  EXPECT_GT(p.dummies_applied, 0u);
}
