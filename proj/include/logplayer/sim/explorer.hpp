#pragma once

#include <deque>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "logplayer/sim/state_encoder.hpp"
#include "logplayer/sim/world.hpp"

namespace logplayer::sim {

struct ExplorerConfig {
  std::size_t nmessages = 3;
  std::size_t nfailures = 1;
  std::size_t targets = 1;
  std::size_t batch_size = 2;
  std::size_t ack_batching = 1;
  Index dummy_interval = 0;
  CqFailureMode cq_mode = CqFailureMode::flush;
  Mutant mutant = Mutant::none;
  // Initial persisted index of every target; empty explores all of [0, nmessages].
  std::optional<Index> initial_last_ack;
  std::size_t max_states = 20'000'000;
  // When set, only violations whose property starts with this prefix end the
  // search; other violating states are counted and not expanded.
  std::string want;
};

/// Refuses configurations whose state space is out of reach.
inline void check_bounds(const ExplorerConfig& c) {
  if (c.nmessages < 1) throw std::invalid_argument("nmessages must be at least 1");
  if (c.nmessages > 6) throw std::invalid_argument("nmessages above 6 is out of bounds for exhaustive search");
  if (c.nfailures > 3) throw std::invalid_argument("nfailures above 3 is out of bounds for exhaustive search");
  if (c.targets < 1 || c.targets > 3) throw std::invalid_argument("targets must be in 1..3");
  if (c.targets > 1 && c.nmessages + c.nfailures > 5)
    throw std::invalid_argument("multi-target exploration is limited to nmessages + nfailures <= 5");
  if (c.batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (c.initial_last_ack && *c.initial_last_ack > c.nmessages)
    throw std::invalid_argument("initial last_ack must be in [0, nmessages]");
}

inline WorldConfig world_config(const ExplorerConfig& c) {
  WorldConfig w;
  w.targets = c.targets;
  w.batch_size = c.batch_size;
  w.ack_batching = c.ack_batching;
  w.dummy_interval = c.dummy_interval;
  w.cq_mode = c.cq_mode;
  w.mutant = c.mutant;
  w.nondet_failures = c.nfailures;
  w.prefill_log = true;
  return w;
}

// Every entry goes to every target.
inline std::vector<PlannedEntry> explorer_workload(const ExplorerConfig& c) {
  std::vector<TargetId> all;
  for (TargetId t = 1; t <= c.targets; ++t) all.push_back(t);
  return std::vector<PlannedEntry>(c.nmessages, PlannedEntry{all, 1});
}

/// Initial persisted indexes to explore: every vector in [0, nmessages]^targets.
inline std::vector<std::vector<Index>> initial_progress_set(const ExplorerConfig& c) {
  std::vector<std::vector<Index>> out;
  if (c.initial_last_ack) {
    out.emplace_back(c.targets, *c.initial_last_ack);
    return out;
  }
  std::vector<Index> cur(c.targets, 0);
  while (true) {
    out.push_back(cur);
    std::size_t k = 0;
    while (k < cur.size() && cur[k] == c.nmessages) cur[k++] = 0;
    if (k == cur.size()) break;
    ++cur[k];
  }
  return out;
}

struct Counterexample {
  ExplorerConfig config;
  std::vector<Index> initial_progress;
  std::vector<Action> choices;
  Violation violation;
  std::string trace;
  std::string final_state;
};

struct ExploreStats {
  std::uint64_t transitions = 0;
  std::uint64_t distinct_states = 0;
  std::uint64_t terminal_states = 0;
  std::uint64_t max_depth = 0;
  std::uint64_t initial_states = 0;
  std::uint64_t other_violations = 0;  // skipped because they did not match `want`
};

struct ExploreResult {
  bool pass = true;
  bool truncated = false;  // max_states reached
  ExploreStats stats;
  std::optional<Counterexample> counterexample;
};

inline Action parse_action(const std::string& text) {
  std::istringstream is(text);
  std::string kind;
  is >> kind;
  Action a;
  static const std::vector<std::pair<const char*, ActionKind>> kinds = {
      {"append", ActionKind::append},
      {"main_dispatch", ActionKind::main_dispatch},
      {"recovery_step", ActionKind::recovery_step},
      {"cq_next", ActionKind::cq_next},
      {"surface_write", ActionKind::surface_write},
      {"deliver", ActionKind::deliver},
      {"complete_read", ActionKind::complete_read},
      {"surface_failure", ActionKind::surface_failure},
      {"crash", ActionKind::crash},
      {"detect", ActionKind::detect},
      {"target_up", ActionKind::target_up},
      {"replayer_restart", ActionKind::replayer_restart},
  };
  bool found = false;
  for (const auto& [name, k] : kinds)
    if (kind == name) {
      a.kind = k;
      found = true;
    }
  if (!found) throw std::invalid_argument("unknown action '" + kind + "'");
  std::string field;
  while (is >> field) {
    auto eq = field.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("bad action field '" + field + "'");
    auto key = field.substr(0, eq);
    auto v = std::stoul(field.substr(eq + 1));
    if (key == "target") a.target = static_cast<TargetId>(v);
    else if (key == "slot") a.slot = static_cast<std::uint32_t>(v);
    else throw std::invalid_argument("bad action field '" + field + "'");
  }
  return a;
}

namespace detail {

inline Fingerprint fingerprint_of(const World& w) {
  StateEncoder enc;
  w.encode(enc);
  return fingerprint(enc.bytes());
}

// Quiescent: nothing left to do except inject another crash.
inline bool quiescent(const std::vector<Action>& acts) {
  return std::all_of(acts.begin(), acts.end(), [](const Action& a) { return a.kind == ActionKind::crash; });
}

// Problem with the state reached, if any: an invariant broken by the last
// step, or a quiescent state that is not fully delivered.
inline std::optional<Violation> problem(const World& w, const std::vector<Action>& acts) {
  if (w.violation()) return w.violation();
  if (quiescent(acts)) return w.final_problems();
  return std::nullopt;
}

inline bool wanted(const Violation& v, const std::string& want) { return v.property.rfind(want, 0) == 0; }

// Shortest path to a wanted violating state, bounded by `depth`.
inline std::optional<std::vector<Action>> shortest_violation(const World& root, std::uint64_t depth,
                                                             const std::string& want) {
  std::vector<std::pair<std::size_t, Action>> links;  // parent link per node id
  std::vector<World> frontier{root};
  std::vector<std::size_t> ids{0};
  links.push_back({0, {}});
  std::unordered_set<Fingerprint, FingerprintHash> seen{fingerprint_of(root)};
  auto path_to = [&](std::size_t id) {
    std::vector<Action> p;
    while (id != 0) {
      p.push_back(links[id].second);
      id = links[id].first;
    }
    return std::vector<Action>(p.rbegin(), p.rend());
  };
  {
    if (auto p = problem(root, root.enabled())) {
      if (wanted(*p, want)) return std::vector<Action>{};
      return std::nullopt;
    }
  }
  for (std::uint64_t d = 0; d < depth && !frontier.empty(); ++d) {
    std::vector<World> next;
    std::vector<std::size_t> next_ids;
    for (std::size_t i = 0; i < frontier.size(); ++i) {
      for (const Action& a : frontier[i].enabled()) {
        World w = frontier[i];
        w.apply(a);
        links.push_back({ids[i], a});
        const std::size_t id = links.size() - 1;
        auto acts = w.enabled();
        if (auto p = problem(w, acts)) {
          if (wanted(*p, want)) return path_to(id);
          continue;
        }
        if (seen.insert(fingerprint_of(w)).second) {
          next.push_back(std::move(w));
          next_ids.push_back(id);
        }
      }
    }
    frontier = std::move(next);
    ids = std::move(next_ids);
  }
  return std::nullopt;
}

}  // namespace detail

/// Replays a choice sequence from the initial state, with tracing on.
/// Throws if a choice is not enabled where it is taken.
inline World replay(const ExplorerConfig& c, const std::vector<Index>& initial, const std::vector<Action>& choices) {
  WorldConfig wc = world_config(c);
  wc.tracing = true;
  World w(wc, explorer_workload(c), initial);
  for (std::size_t i = 0; i < choices.size(); ++i) {
    auto acts = w.enabled();
    if (std::find(acts.begin(), acts.end(), choices[i]) == acts.end())
      throw std::runtime_error("replay: choice " + std::to_string(i + 1) + " (" + to_string(choices[i]) +
                               ") is not enabled");
    w.apply(choices[i]);
  }
  return w;
}

inline Counterexample make_counterexample(const ExplorerConfig& c, const std::vector<Index>& initial,
                                          std::vector<Action> choices) {
  World w = replay(c, initial, choices);
  Counterexample cx;
  cx.config = c;
  cx.initial_progress = initial;
  cx.choices = std::move(choices);
  auto p = detail::problem(w, w.enabled());
  cx.violation = p ? *p : Violation{"none", "replay did not reproduce a violation"};
  cx.trace = w.trace();
  cx.final_state = w.describe();
  return cx;
}

/// Exhaustive depth-first search over every interleaving from every initial
/// state, with fingerprint pruning. A state reached again while still on the
/// DFS stack is a cycle (possible livelock) and counts as a violation. The
/// first violation found is shortened to a minimal-depth counterexample.
inline ExploreResult explore(const ExplorerConfig& c) {
  check_bounds(c);
  ExploreResult res;
  std::unordered_set<Fingerprint, FingerprintHash> visited;
  const WorldConfig wc = world_config(c);
  const auto workload = explorer_workload(c);

  struct Frame {
    World world;
    Fingerprint fp;
    std::vector<Action> actions;
    std::size_t next = 0;
  };

  for (const auto& initial : initial_progress_set(c)) {
    ++res.stats.initial_states;
    World root(wc, workload, initial);
    std::unordered_set<Fingerprint, FingerprintHash> on_stack;
    std::vector<Frame> stack;
    std::optional<Violation> found;
    std::vector<Action> found_path;

    auto enter = [&](World w) -> bool {
      Fingerprint fp = detail::fingerprint_of(w);
      if (on_stack.count(fp)) {
        Violation v{"liveness", "cycle: a state repeats without progress"};
        if (!detail::wanted(v, c.want)) {
          ++res.stats.other_violations;
          return true;
        }
        found = v;
        return false;
      }
      if (!visited.insert(fp).second) return true;
      ++res.stats.distinct_states;
      auto acts = w.enabled();
      if (auto p = detail::problem(w, acts)) {
        if (!detail::wanted(*p, c.want)) {
          ++res.stats.other_violations;
          return true;
        }
        found = p;
        return false;
      }
      if (detail::quiescent(acts)) ++res.stats.terminal_states;
      if (acts.empty()) return true;
      on_stack.insert(fp);
      stack.push_back({std::move(w), fp, std::move(acts), 0});
      res.stats.max_depth = std::max<std::uint64_t>(res.stats.max_depth, stack.size() - 1);
      return true;
    };

    bool ok = enter(root);
    while (ok && !stack.empty()) {
      if (res.stats.distinct_states >= c.max_states) {
        res.truncated = true;
        break;
      }
      Frame& top = stack.back();
      if (top.next == top.actions.size()) {
        on_stack.erase(top.fp);
        stack.pop_back();
        continue;
      }
      const Action a = top.actions[top.next++];
      World child = top.world;
      child.apply(a);
      ++res.stats.transitions;
      ok = enter(std::move(child));
      if (!ok) {
        for (const Frame& f : stack) found_path.push_back(f.actions[f.next - 1]);
      }
    }
    if (found) {
      res.pass = false;
      auto shortest = detail::shortest_violation(root, found_path.size(), c.want);
      std::vector<Action> path = shortest ? *shortest : found_path;
      res.counterexample = make_counterexample(c, initial, path);
      if (res.counterexample->violation.property == "none") {
        // Cycles are not visible on a single path; keep the DFS finding.
        res.counterexample->violation = *found;
      }
      return res;
    }
    if (res.truncated) {
      res.pass = false;
      return res;
    }
  }
  return res;
}

inline void write_counterexample(std::ostream& out, const Counterexample& cx) {
  const auto& c = cx.config;
  out << "# replay with: logplayer explore --replay=<this file>\n"
      << "nmessages = " << c.nmessages << '\n'
      << "nfailures = " << c.nfailures << '\n'
      << "targets = " << c.targets << '\n'
      << "batch_size = " << c.batch_size << '\n'
      << "ack_batching = " << c.ack_batching << '\n'
      << "dummy_interval = " << c.dummy_interval << '\n'
      << "cq_mode = " << to_string(c.cq_mode) << '\n'
      << "mutant = " << to_string(c.mutant) << '\n';
  if (!c.want.empty()) out << "want = " << c.want << '\n';
  out << "initial =";
  for (Index i : cx.initial_progress) out << ' ' << i;
  out << '\n' << "property = " << cx.violation.property << '\n' << "detail = " << cx.violation.detail << '\n';
  for (const Action& a : cx.choices) out << "step " << to_string(a) << '\n';
  out << "# trace\n";
  std::istringstream t(cx.trace);
  for (std::string line; std::getline(t, line);) out << "# " << line << '\n';
  out << "# final state\n";
  std::istringstream f(cx.final_state);
  for (std::string line; std::getline(f, line);) out << "# " << line << '\n';
}

inline Counterexample read_counterexample(std::istream& in) {
  Counterexample cx;
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    if (raw.empty() || raw[0] == '#') continue;
    try {
      if (raw.rfind("step ", 0) == 0) {
        cx.choices.push_back(parse_action(raw.substr(5)));
        continue;
      }
      auto eq = raw.find(" = ");
      if (eq == std::string::npos) throw std::invalid_argument("expected 'key = value'");
      auto key = raw.substr(0, eq);
      auto v = raw.substr(eq + 3);
      auto& c = cx.config;
      if (key == "nmessages") c.nmessages = std::stoul(v);
      else if (key == "nfailures") c.nfailures = std::stoul(v);
      else if (key == "targets") c.targets = std::stoul(v);
      else if (key == "batch_size") c.batch_size = std::stoul(v);
      else if (key == "ack_batching") c.ack_batching = std::stoul(v);
      else if (key == "dummy_interval") c.dummy_interval = std::stoul(v);
      else if (key == "cq_mode") c.cq_mode = parse_cq_mode(v);
      else if (key == "mutant") c.mutant = parse_mutant(v);
      else if (key == "want") c.want = v;
      else if (key == "property") cx.violation.property = v;
      else if (key == "detail") cx.violation.detail = v;
      else if (key == "initial") {
        std::istringstream is(v);
        for (Index i; is >> i;) cx.initial_progress.push_back(i);
      } else {
        throw std::invalid_argument("unknown key '" + key + "'");
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("counterexample line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (cx.initial_progress.size() != cx.config.targets)
    throw std::runtime_error("counterexample: 'initial' must list one index per target");
  return cx;
}

}  // namespace logplayer::sim
