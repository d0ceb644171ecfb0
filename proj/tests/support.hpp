#pragma once

// Test-side oracles that do not reuse the code under test.

#include <algorithm>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "logplayer/sim/scenario.hpp"
#include "logplayer/sim/world.hpp"

namespace lptest {

using logplayer::Index;
using logplayer::TargetId;

struct TraceLine {
  std::uint64_t step = 0;
  std::string kind;
  std::map<std::string, std::string> fields;

  std::uint64_t num(const std::string& k) const { return std::stoull(fields.at(k)); }
};

inline std::vector<TraceLine> parse_trace(const std::string& text) {
  std::vector<TraceLine> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    std::istringstream ls(line);
    TraceLine t;
    ls >> t.step >> t.kind;
    for (std::string f; ls >> f;) {
      auto eq = f.find('=');
      if (eq != std::string::npos) t.fields[f.substr(0, eq)] = f.substr(eq + 1);
    }
    out.push_back(std::move(t));
  }
  return out;
}

struct RangeCheck {
  std::size_t ups = 0;
  std::size_t ups_with_recovery = 0;
  std::size_t restarts = 0;
  std::vector<std::string> errors;
};

/// Recomputes each target's persisted index from `apply` lines and
/// current_index from normal `dispatch` lines, then checks every `up` line's
/// recovery range against [persisted + 1, current_index] and every
/// `restart` start index against min(persisted) + 1.
inline RangeCheck check_recovery_ranges(const std::string& trace, std::size_t targets,
                                        std::vector<Index> persisted = {}) {
  if (persisted.empty()) persisted.assign(targets, 0);
  RangeCheck rc;
  Index current = 0;
  for (const auto& t : parse_trace(trace)) {
    auto err = [&](const std::string& what) {
      rc.errors.push_back("step " + std::to_string(t.step) + " " + t.kind + ": " + what);
    };
    if (t.kind == "apply") {
      persisted[t.num("target") - 1] = t.num("idx");
    } else if (t.kind == "dispatch" && t.fields.at("mode") == "normal") {
      current = t.num("idx");
    } else if (t.kind == "restart") {
      ++rc.restarts;
      const Index expect = *std::min_element(persisted.begin(), persisted.end()) + 1;
      if (t.num("start_index") != expect)
        err("start_index " + t.fields.at("start_index") + ", expected " + std::to_string(expect));
      current = expect - 1;
    } else if (t.kind == "up") {
      ++rc.ups;
      const TargetId id = static_cast<TargetId>(t.num("target"));
      const Index p = persisted[id - 1];
      const std::string want = p < current ? std::to_string(p + 1) + ".." + std::to_string(current) : "none";
      if (t.fields.at("recovery") != want) err("recovery " + t.fields.at("recovery") + ", expected " + want);
      if (want != "none") ++rc.ups_with_recovery;
    }
  }
  return rc;
}

struct DummyProbe {
  std::size_t samples = 0;      // one per scheduler step
  Index worst_lag = 0;          // max over samples of current_index - last_ack(idle)
  Index dispatches = 0;
  Index restart_start = 0;
  Index log_size = 0;
  std::size_t dummies_applied = 0;
};

/// Appends `n` entries for every target except the last (which stays idle),
/// draining to quiescence after each append and sampling the idle target's
/// lag after every step. Then restarts the replayer and records its start
/// index.
inline DummyProbe run_dummy_probe(std::size_t n, Index E, std::size_t targets, std::uint64_t seed) {
  using namespace logplayer::sim;
  std::vector<TargetId> active;
  for (TargetId t = 1; t < targets; ++t) active.push_back(t);
  std::vector<PlannedEntry> workload(n, PlannedEntry{active, 8});
  WorldConfig cfg;
  cfg.targets = targets;
  cfg.batch_size = 4;
  cfg.dummy_interval = E;
  World w(cfg, workload);
  Rng rng(seed);
  const auto idle = static_cast<TargetId>(targets);
  DummyProbe p;
  auto sample = [&] {
    const Index ci = w.dispatcher().current_index();
    const Index ack = w.dispatcher().last_ack(idle);
    p.worst_lag = std::max(p.worst_lag, ci > ack ? ci - ack : 0);
    ++p.samples;
  };
  auto drain = [&] {
    while (true) {
      auto acts = w.enabled();
      std::erase_if(acts, [](const Action& a) { return a.kind == ActionKind::append; });
      if (acts.empty()) return;
      w.apply(acts[rng.below(acts.size())]);
      sample();
    }
  };
  for (std::size_t i = 0; i < n; ++i) {
    w.apply({ActionKind::append});
    drain();
  }
  p.dispatches = w.dispatcher().current_index();
  w.apply({ActionKind::replayer_restart});
  p.restart_start = w.restart_start_indexes().back();
  p.log_size = w.log().size();
  drain();
  for (const auto& r : w.transport().target(idle).applied()) p.dummies_applied += r.is_dummy;
  return p;
}

}  // namespace lptest
