#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "argprog/expert.hpp"
#include "argprog/search.hpp"
#include "fixtures.hpp"

using namespace argprog;

namespace {

using S = ArgSlot;

SearchTree tree_with_children(std::vector<double> priors, std::vector<int> visits, std::vector<double> q) {
  SearchTree tree;
  SearchNode root;
  root.expanded = true;
  tree.add(std::move(root));
  for (std::size_t i = 0; i < priors.size(); ++i) {
    SearchNode child;
    child.prior = priors[i];
    child.visits = visits[i];
    child.value_sum = q[i] * visits[i];
    const int id = tree.add(std::move(child));
    tree[0].children.push_back(id);
  }
  return tree;
}

PolicyOutput uniform_output(int programs) {
  PolicyOutput out;
  out.program_probs = Eigen::VectorXd::Constant(programs, 1.0 / programs);
  out.arg_probs = Eigen::VectorXd::Constant(kNumArgTuples, 1.0 / kNumArgTuples);
  out.value = 0.5;
  return out;
}

SearchTree rooted_at(const EnvState& env) {
  SearchTree tree;
  SearchNode root;
  root.env = env;
  tree.add(std::move(root));
  return tree;
}

void check_tree_invariants(const SearchTree& tree, const ProgramLibrary& lib, int cap_children) {
  for (int i = 0; i < tree.size(); ++i) {
    const auto& node = tree[i];
    REQUIRE(node.q() >= 0.0);
    REQUIRE(node.q() <= 1.0);
    if (node.children.empty()) continue;
    REQUIRE(node.env.has_value());
    REQUIRE(static_cast<int>(node.children.size()) <= cap_children);
    int sum = 0;
    for (int c : node.children) {
      sum += tree[c].visits;
      REQUIRE(call_feasible(*node.env, tree[c].edge, lib));
    }
    REQUIRE(sum == node.visits - 1);
  }
}

}  // namespace

TEST_CASE("puct selection") {
  SUBCASE("prior dominates when nothing is visited") {
    const auto tree = tree_with_children({0.8, 0.2}, {0, 0}, {0, 0});
    CHECK(puct_select(tree, 0, 1.0) == 1);  // node ids: root 0, children 1 and 2
  }
  SUBCASE("value dominates a heavily visited sibling") {
    const auto tree = tree_with_children({0.5, 0.5}, {10, 1}, {0.0, 1.0});
    // 0 + 0.5*sqrt(12)/11 = 0.157 vs 1 + 0.5*sqrt(12)/2 = 1.866
    CHECK(puct_select(tree, 0, 1.0) == 2);
  }
  SUBCASE("c = 0 is greedy on Q") {
    const auto tree = tree_with_children({0.9, 0.05, 0.05}, {3, 3, 3}, {0.2, 0.7, 0.4});
    CHECK(puct_select(tree, 0, 0.0) == 2);
  }
  SUBCASE("ties go to the lowest child") {
    const auto tree = tree_with_children({0.5, 0.5}, {0, 0}, {0, 0});
    CHECK(puct_select(tree, 0, 1.0) == 1);
  }
  SUBCASE("no children") {
    SearchTree tree;
    tree.add(SearchNode{});
    CHECK_THROWS_AS((void)puct_select(tree, 0, 1.0), PreconditionError);
  }
}

TEST_CASE("expansion") {
  const ProgramLibrary lib(LibraryMode::Args);
  const auto env = EnvState::make({4, 1, 3, 5, 2}, 1, 4, 2, {{0, 1}}, 1);
  const auto feasible = feasible_pairs(env, 5, lib);
  REQUIRE(feasible.size() >= 10);
  const std::span<const ProgramCall> ten(feasible.data(), 10);
  const auto out = uniform_output(lib.size());
  std::mt19937_64 rng(3);

  SUBCASE("approximate expansion creates exactly n distinct children") {
    SearchConfig cfg;
    cfg.mode = ExpansionMode::Approx;
    cfg.n_expand = 3;
    for (int trial = 0; trial < 200; ++trial) {
      auto tree = rooted_at(env);
      SearchStats stats;
      CHECK(expand(tree, 0, out, ten, cfg, trial % 2 == 0, rng, stats) == 3);
      std::set<std::pair<int, int>> distinct;
      double prior = 0.0;
      for (int c : tree[0].children) {
        distinct.insert({tree[c].edge.program, args_encode(tree[c].edge.args)});
        prior += tree[c].prior;
      }
      REQUIRE(distinct.size() == 3);
      REQUIRE(prior == doctest::Approx(1.0));
      REQUIRE(stats.nodes_expanded == 3);
      REQUIRE(stats.max_children_per_expansion == 3);
      REQUIRE(stats.min_branching == 10);
    }
  }
  SUBCASE("n >= M gives the exact child set") {
    SearchConfig exact;
    exact.mode = ExpansionMode::Exact;
    SearchConfig approx;
    approx.mode = ExpansionMode::Approx;
    approx.n_expand = static_cast<int>(feasible.size());
    auto a = rooted_at(env);
    auto b = rooted_at(env);
    std::mt19937_64 r1(5), r2(5);
    SearchStats s1, s2;
    (void)expand(a, 0, out, feasible, exact, true, r1, s1);
    (void)expand(b, 0, out, feasible, approx, true, r2, s2);
    REQUIRE(a.size() == b.size());
    for (int i = 1; i < a.size(); ++i) {
      CHECK(a[i].edge == b[i].edge);
      CHECK(a[i].prior == b[i].prior);
    }
  }
  SUBCASE("exact priors are the renormalized product of the heads") {
    auto skewed = out;
    skewed.program_probs.setConstant(0.0);
    skewed.program_probs(*lib.find("swap")) = 0.75;
    skewed.program_probs(*lib.find("ptr_right")) = 0.25;
    SearchConfig cfg;
    cfg.mode = ExpansionMode::Exact;
    auto tree = rooted_at(env);
    SearchStats stats;
    (void)expand(tree, 0, skewed, feasible, cfg, false, rng, stats);
    double swap_mass = 0.0;
    for (int c : tree[0].children) {
      if (tree[c].edge.program == *lib.find("swap")) swap_mass += tree[c].prior;
    }
    // masking renormalizes over the feasible programs; args are uniform
    int swaps = 0, rights = 0;
    for (const auto& call : feasible) {
      swaps += call.program == *lib.find("swap") ? 1 : 0;
      rights += call.program == *lib.find("ptr_right") ? 1 : 0;
    }
    REQUIRE(swaps > 0);
    REQUIRE(rights > 0);
    // arg mass per program is uniform over the union of feasible tuples
    double swap_raw = 0.75 * swaps, right_raw = 0.25 * rights;
    CHECK(swap_mass == doctest::Approx(swap_raw / (swap_raw + right_raw)));
    CHECK(stats.nodes_expanded == feasible.size());
  }
  SUBCASE("quicksort entry has no pop child") {
    const auto qs = EnvState::make({3, 1, 2}, 0, 2, 0);
    auto tree = rooted_at(qs);
    SearchConfig cfg;
    cfg.mode = ExpansionMode::Exact;
    SearchStats stats;
    (void)expand(tree, 0, uniform_output(lib.size()), feasible_pairs(qs, 5, lib), cfg, false, rng, stats);
    for (int c : tree[0].children) CHECK(tree[c].edge.program != *lib.find("pop"));
  }
  SUBCASE("no feasible pairs marks a terminal") {
    auto tree = rooted_at(env);
    SearchStats stats;
    CHECK(expand(tree, 0, out, {}, SearchConfig{}, false, rng, stats) == 0);
    CHECK(tree[0].terminal);
    CHECK(tree[0].terminal_value == 0.0);
  }
}

TEST_CASE("backup arithmetic") {
  SearchTree tree;
  for (int i = 0; i < 3; ++i) tree.add(SearchNode{});
  const int path[] = {0, 1, 2};
  backup(tree, path, 1.0);
  for (int i = 0; i < 3; ++i) {
    CHECK(tree[i].visits == 1);
    CHECK(tree[i].q() == 1.0);
  }
  backup(tree, path, 0.0);
  CHECK(tree[2].q() == 0.5);

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    backup(tree, std::span<const int>(path, 1 + i % 3), u(rng));
    REQUIRE(tree[0].q() >= 0.0);
    REQUIRE(tree[0].q() <= 1.0);
  }
}

TEST_CASE("search trees keep their invariants") {
  for (auto mode : {ExpansionMode::Exact, ExpansionMode::Approx}) {
    const ProgramLibrary lib(LibraryMode::Args);
    const auto params = init_params(11, NetworkShape::for_library(lib));
    const NetworkPolicy model(params);
    SearchConfig cfg;
    cfg.mode = mode;
    cfg.simulations = 60;
    cfg.nested_simulations = 20;
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 30; ++trial) {
      const TaskId task = kAllTasks[static_cast<std::size_t>(trial % 4)];
      const auto env = sample_task_env(task, 2 + trial % 5, rng);
      SearchStats stats;
      SearchEngine engine(lib, model, cfg, stats, static_cast<std::uint64_t>(trial));
      const auto out = engine.run_search(task, env, env, 0, model.initial_hidden(), true, rng);
      check_tree_invariants(engine.last_tree(), lib, mode == ExpansionMode::Approx ? cfg.n_expand : 1 << 20);
      CHECK(engine.last_tree()[0].visits == cfg.simulations + 1);
      double ps = 0.0, as = 0.0;
      for (double p : out.program_policy) ps += p;
      for (double a : out.arg_policy) as += a;
      CHECK(ps == doctest::Approx(1.0));
      CHECK(as == doctest::Approx(1.0));
      for (const auto& [call, visits] : out.root_visits) {
        if (visits == 0) continue;
        CHECK(out.program_policy[static_cast<std::size_t>(call.program)] > 0.0);
      }
      if (mode == ExpansionMode::Approx) CHECK(stats.max_children_per_expansion <= cfg.n_expand);
    }
  }
}

TEST_CASE("zero temperature gives a one-hot tree policy") {
  const ProgramLibrary lib(LibraryMode::Args);
  const UniformPolicy model(lib.size(), 0.3);
  SearchConfig cfg;
  cfg.temperature = 0.0;
  cfg.simulations = 50;
  SearchStats stats;
  SearchEngine engine(lib, model, cfg, stats, 1);
  std::mt19937_64 rng(4);
  const auto env = sample_task_env(TaskId::PartitionUpdate, 6, rng);
  const auto out = engine.run_search(TaskId::PartitionUpdate, env, env, 0, model.initial_hidden(), true, rng);
  int ones = 0;
  for (double p : out.program_policy) {
    CHECK((p == 0.0 || p == 1.0));
    ones += p == 1.0 ? 1 : 0;
  }
  CHECK(ones == 1);
  CHECK(out.program_policy[static_cast<std::size_t>(out.chosen.program)] == 1.0);
  CHECK(out.arg_policy[static_cast<std::size_t>(args_encode(out.chosen.args))] == 1.0);
}

TEST_CASE("exact and approximate search agree when n covers every branching") {
  const ProgramLibrary lib(LibraryMode::Args);
  const auto params = init_params(2, NetworkShape::for_library(lib));
  const NetworkPolicy model(params);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 env_rng(seed);
    const auto env = sample_task_env(TaskId::PartitionUpdate, 5, env_rng);
    auto run = [&](ExpansionMode mode) {
      SearchConfig cfg;
      cfg.mode = mode;
      cfg.n_expand = 1000;
      cfg.simulations = 80;
      SearchStats stats;
      SearchEngine engine(lib, model, cfg, stats, seed);
      std::mt19937_64 rng(seed);
      auto ep = engine.run_episode(TaskId::PartitionUpdate, env, true, rng);
      return std::make_pair(ep, stats);
    };
    const auto [exact, es] = run(ExpansionMode::Exact);
    const auto [approx, as] = run(ExpansionMode::Approx);
    REQUIRE(exact.steps.size() == approx.steps.size());
    for (std::size_t i = 0; i < exact.steps.size(); ++i) {
      CHECK(exact.steps[i].call == approx.steps[i].call);
      CHECK(exact.steps[i].program_policy == approx.steps[i].program_policy);
    }
    CHECK(es.nodes_expanded == as.nodes_expanded);
  }
}

TEST_CASE("approximate expansion respects its budget") {
  // Per expansion approx creates min(n, M) <= M children. Whole searches are
  // not ordered run by run: an exact search that finds a reward-1 leaf spends
  // its remaining simulations revisiting it and stops expanding. So compare
  // the per-expansion cap exactly and the totals in aggregate.
  const ProgramLibrary lib(LibraryMode::Args);
  const auto params = init_params(8, NetworkShape::for_library(lib));
  const NetworkPolicy model(params);
  std::uint64_t totals[2] = {0, 0};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 env_rng(seed);
    const auto env = sample_task_env(TaskId::PartitionUpdate, 6, env_rng);
    int i = 0;
    for (auto mode : {ExpansionMode::Exact, ExpansionMode::Approx}) {
      SearchConfig cfg;
      cfg.mode = mode;
      cfg.simulations = 100;
      SearchStats stats;
      SearchEngine engine(lib, model, cfg, stats, seed);
      std::mt19937_64 rng(seed);
      (void)engine.run_search(TaskId::PartitionUpdate, env, env, 0, model.initial_hidden(), true, rng);
      if (mode == ExpansionMode::Approx) {
        CHECK(stats.max_children_per_expansion <= 5);
        CHECK(stats.nodes_expanded <= 5 * stats.expansions);
      } else {
        CHECK(stats.nodes_expanded >= static_cast<std::uint64_t>(stats.min_branching) * stats.expansions);
      }
      totals[i++] += stats.nodes_expanded;
    }
  }
  CHECK(totals[1] < totals[0]);
}

TEST_CASE("one-step fixture ranks the finishing call first") {
  const ProgramLibrary lib(LibraryMode::Args);
  int correct = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) correct += fixtures::run_one_step_fixture(seed).correct_first ? 1 : 0;
  CHECK(correct >= 95);

  // the fixture's premise: exactly one call followed by stop earns the reward
  const auto env = fixtures::one_step_env(0);
  int finishing = 0;
  for (const auto& call : feasible_pairs(env, 1, lib)) {
    if (lib.at(call.program).op == AtomicOp::Stop) continue;
    if (reward(TaskId::PartitionUpdate, env, apply_call(env, call, lib)) == 1) {
      ++finishing;
      CHECK(call == fixtures::one_step_answer(lib));
    }
  }
  CHECK(finishing == 1);
}

TEST_CASE("nested search") {
  const ProgramLibrary lib(LibraryMode::Args);
  const ScriptedExpertPolicy expert(lib);
  std::mt19937_64 rng(6);

  SUBCASE("expert priors make recursion reproduce the oracle") {
    SearchConfig cfg;
    cfg.simulations = 30;
    cfg.nested_simulations = 30;
    for (int i = 0; i < 50; ++i) {
      const auto env = sample_task_env(TaskId::Partition, 2 + i % 6, rng);
      SearchStats stats;
      SearchEngine engine(lib, expert, cfg, stats, static_cast<std::uint64_t>(i));
      const auto r = engine.recurse_subprogram(env, TaskId::Partition, 1);
      REQUIRE(r.success);
      REQUIRE(*r.env == oracle_transform(TaskId::Partition, env));
    }
  }
  SUBCASE("quicksort_update choosing partition") {
    SearchConfig cfg;
    cfg.simulations = 40;
    cfg.nested_simulations = 40;
    for (int i = 0; i < 20; ++i) {
      const auto env = sample_task_env(TaskId::QuicksortUpdate, 3 + i % 4, rng);
      SearchStats stats;
      SearchEngine engine(lib, expert, cfg, stats, static_cast<std::uint64_t>(i));
      const auto run = engine.run_episode(TaskId::QuicksortUpdate, env, false, rng);
      CHECK(run.reward == 1);
      CHECK(run.output == oracle_transform(TaskId::QuicksortUpdate, env));
      bool partition_called = false;
      for (const auto& s : run.steps) partition_called |= s.call.program == lib.index_of(TaskId::Partition);
      CHECK(partition_called == (env.stack().back().lo < env.stack().back().hi));
    }
  }
  SUBCASE("zero nested budget fails and marks the edge") {
    SearchConfig cfg;
    cfg.simulations = 30;
    cfg.nested_simulations = 0;
    SearchStats stats;
    SearchEngine engine(lib, expert, cfg, stats, 1);
    const auto env = sample_task_env(TaskId::Partition, 5, rng);
    CHECK_FALSE(engine.recurse_subprogram(env, TaskId::Partition, 1).success);

    const auto qsu = EnvState::make({5, 1, 4, 2, 3}, 0, 0, 0, {{0, 4}});
    std::mt19937_64 r(1);
    (void)engine.run_search(TaskId::QuicksortUpdate, qsu, qsu, 0, expert.initial_hidden(), false, r);
    const auto& tree = engine.last_tree();
    int partition_edges = 0;
    for (int i = 1; i < tree.size(); ++i) {
      if (tree[i].edge.program != lib.index_of(TaskId::Partition) || !tree[i].env) continue;
      ++partition_edges;
      CHECK(tree[i].failed_recursion);
      CHECK(tree[i].q() == 0.0);
    }
    CHECK(partition_edges > 0);
  }
  SUBCASE("recursion never calls a program at or above the caller") {
    const auto params = init_params(4, NetworkShape::for_library(lib));
    const NetworkPolicy model(params);
    SearchConfig cfg;
    cfg.mode = ExpansionMode::Exact;
    cfg.simulations = 40;
    cfg.nested_simulations = 10;
    for (int i = 0; i < 10; ++i) {
      const auto env = sample_task_env(TaskId::Quicksort, 4, rng);
      SearchStats stats;
      SearchEngine engine(lib, model, cfg, stats, static_cast<std::uint64_t>(i));
      const auto run = engine.run_episode(TaskId::Quicksort, env, true, rng);
      for (const auto& s : run.steps) CHECK(lib.at(s.call.program).level < lib.at(lib.index_of(TaskId::Quicksort)).level);
      CHECK(stats.max_depth >= 1);
    }
  }
}

TEST_CASE("greedy execution") {
  const ProgramLibrary lib(LibraryMode::Args);
  const StepCaps caps;
  std::mt19937_64 rng(10);

  SUBCASE("expert policy solves every task") {
    const ScriptedExpertPolicy expert(lib);
    for (auto task : kAllTasks) {
      for (int i = 0; i < 50; ++i) {
        const auto env = sample_task_env(task, 2 + i % 10, rng);
        const auto r = execute_greedy(env, task, expert, lib, caps);
        REQUIRE(r.reward == 1);
        const auto expected = oracle_transform(task, env);
        if (task == TaskId::Quicksort) {
          // quicksort leaves its pointers wherever the last partition put them
          REQUIRE(std::equal(r.final_env.list().begin(), r.final_env.list().end(), expected.list().begin()));
        } else {
          REQUIRE(r.final_env == expected);
        }
        REQUIRE(lib.at(r.trace.back().call.program).op == AtomicOp::Stop);
      }
    }
  }
  SUBCASE("random parameters never crash and respect the cap") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto params = init_params(seed, NetworkShape::for_library(lib));
      const NetworkPolicy model(params);
      for (auto task : kAllTasks) {
        const auto env = sample_task_env(task, 5, rng);
        const auto a = execute_greedy(env, task, model, lib, caps);
        const auto b = execute_greedy(env, task, model, lib, caps);
        REQUIRE(a.trace.size() == b.trace.size());
        for (std::size_t i = 0; i < a.trace.size(); ++i) REQUIRE(a.trace[i].call == b.trace[i].call);
        int top = 0;
        for (const auto& e : a.trace) top += e.depth == 0 ? 1 : 0;
        CHECK(top <= caps.max_steps(task, 5));
        if (a.cap_exceeded) {
          CHECK(a.reward == 0);
          CHECK_FALSE(a.diagnostic.empty());
        }
      }
    }
  }
  SUBCASE("precondition is enforced") {
    const ScriptedExpertPolicy expert(lib);
    CHECK_THROWS_AS((void)execute_greedy(EnvState::make({1, 2}, 0, 1, 0), TaskId::PartitionUpdate, expert, lib, caps),
                    PreconditionError);
  }
}
