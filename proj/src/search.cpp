#include "argprog/search.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "argprog/rng.hpp"

namespace argprog {

namespace {

std::vector<double> dirichlet(std::size_t k, double alpha, std::mt19937_64& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> x(k);
  double total = 0.0;
  for (auto& v : x) {
    v = gamma(rng);
    total += v;
  }
  if (total <= 0.0) {
    std::fill(x.begin(), x.end(), 1.0 / static_cast<double>(k));
  } else {
    for (auto& v : x) v /= total;
  }
  return x;
}

int program_level(const ProgramLibrary& lib, TaskId task) { return lib.at(lib.index_of(task)).level; }

}  // namespace

std::string_view expansion_mode_name(ExpansionMode mode) { return mode == ExpansionMode::Exact ? "exact" : "approx"; }

std::optional<ExpansionMode> parse_expansion_mode(std::string_view name) {
  if (name == "exact") return ExpansionMode::Exact;
  if (name == "approx") return ExpansionMode::Approx;
  return std::nullopt;
}

int StepCaps::max_steps(TaskId task, int length) const {
  switch (task) {
    case TaskId::PartitionUpdate:
      return partition_update;
    case TaskId::Partition:
      return 2 * length + partition_offset;
    case TaskId::QuicksortUpdate:
      return quicksort_update;
    case TaskId::Quicksort:
      return length + quicksort_offset;
  }
  return 0;
}

void SearchStats::merge(const SearchStats& other) {
  nodes_expanded += other.nodes_expanded;
  expansions += other.expansions;
  simulations += other.simulations;
  recursions += other.recursions;
  max_depth = std::max(max_depth, other.max_depth);
  max_children_per_expansion = std::max(max_children_per_expansion, other.max_children_per_expansion);
  if (other.min_branching > 0 && (min_branching == 0 || other.min_branching < min_branching)) {
    min_branching = other.min_branching;
  }
}

// ─── Tree primitives ─────────────────────────────────

int puct_select(const SearchTree& tree, int node, double c_puct) {
  const auto& parent = tree[node];
  if (parent.children.empty()) throw PreconditionError("puct_select: node has no children");
  int total_visits = 0;
  for (int c : parent.children) total_visits += tree[c].visits;
  const double scale = std::sqrt(static_cast<double>(total_visits) + 1.0);
  int best = parent.children.front();
  double best_score = -1e300;
  for (int c : parent.children) {
    const auto& child = tree[c];
    const double score = child.q() + c_puct * child.prior * scale / (1.0 + child.visits);
    if (score > best_score) {
      best_score = score;
      best = c;
    }
  }
  return best;
}

int expand(SearchTree& tree, int node, const PolicyOutput& out, std::span<const ProgramCall> feasible,
           const SearchConfig& cfg, bool add_noise, std::mt19937_64& rng, SearchStats& stats) {
  if (tree[node].expanded || tree[node].terminal) throw PreconditionError("expand: node already expanded or terminal");
  if (feasible.empty()) {
    tree[node].terminal = true;
    tree[node].terminal_value = 0.0;
    return 0;
  }
  const auto masked = masked_distributions(out, feasible);
  const std::size_t m = feasible.size();
  std::vector<double> prior(m);
  for (std::size_t i = 0; i < m; ++i) {
    prior[i] = masked.program_probs(feasible[i].program) * masked.arg_probs(args_encode(feasible[i].args));
  }
  double total = std::accumulate(prior.begin(), prior.end(), 0.0);
  if (!(total > 0.0)) {
    std::fill(prior.begin(), prior.end(), 1.0);
    total = static_cast<double>(m);
  }
  for (auto& p : prior) p /= total;

  if (add_noise && cfg.dirichlet_weight > 0.0 && m > 1) {
    auto noise = dirichlet(m, cfg.dirichlet_alpha, rng);
    for (std::size_t i = 0; i < m; ++i) {
      prior[i] = (1.0 - cfg.dirichlet_weight) * prior[i] + cfg.dirichlet_weight * noise[i];
    }
  }

  std::vector<std::size_t> chosen(m);
  std::iota(chosen.begin(), chosen.end(), 0);
  if (cfg.mode == ExpansionMode::Approx && static_cast<std::size_t>(cfg.n_expand) < m) {
    // Weighted sampling without replacement, then restore library order.
    std::vector<double> weight = prior;
    chosen.clear();
    for (int draw = 0; draw < cfg.n_expand; ++draw) {
      double remaining = 0.0;
      for (std::size_t i = 0; i < m; ++i) remaining += weight[i];
      std::size_t pick = m;
      if (remaining > 0.0) {
        double u = std::uniform_real_distribution<double>(0.0, remaining)(rng);
        for (std::size_t i = 0; i < m; ++i) {
          if (weight[i] <= 0.0) continue;
          pick = i;
          if (u < weight[i]) break;
          u -= weight[i];
        }
      } else {
        std::vector<std::size_t> open;
        for (std::size_t i = 0; i < m; ++i) {
          if (std::find(chosen.begin(), chosen.end(), i) == chosen.end()) open.push_back(i);
        }
        pick = open[std::uniform_int_distribution<std::size_t>(0, open.size() - 1)(rng)];
      }
      chosen.push_back(pick);
      weight[pick] = 0.0;
    }
    std::sort(chosen.begin(), chosen.end());
  }

  double kept = 0.0;
  for (auto i : chosen) kept += prior[i];
  const int parent_steps = tree[node].steps;
  const int parent_depth = tree[node].depth;
  for (auto i : chosen) {
    SearchNode child;
    child.edge = feasible[i];
    child.prior = kept > 0.0 ? prior[i] / kept : 1.0 / static_cast<double>(chosen.size());
    child.steps = parent_steps + 1;
    child.depth = parent_depth + 1;
    const int id = tree.add(std::move(child));
    tree[node].children.push_back(id);
  }
  tree[node].expanded = true;

  const int created = static_cast<int>(chosen.size());
  stats.nodes_expanded += static_cast<std::uint64_t>(created);
  stats.expansions += 1;
  stats.max_children_per_expansion = std::max(stats.max_children_per_expansion, created);
  const int branching = static_cast<int>(m);
  if (stats.min_branching == 0 || branching < stats.min_branching) stats.min_branching = branching;
  return created;
}

void backup(SearchTree& tree, std::span<const int> path, double value) {
  for (int id : path) {
    auto& node = tree[id];
    node.visits += 1;
    node.value_sum += value;
  }
}

// ─── Engine ──────────────────────────────────────────

SearchEngine::SearchEngine(const ProgramLibrary& lib, const PolicyModel& model, SearchConfig cfg, SearchStats& stats,
                           std::uint64_t salt)
    : lib_(lib), model_(model), cfg_(cfg), stats_(stats), salt_(salt) {}

void SearchEngine::materialize(SearchTree& tree, int parent, int child, TaskId task, const EnvState& input, int cap,
                               int depth) {
  const EnvState& parent_env = *tree[parent].env;
  auto& node = tree[child];
  const auto& program = lib_.at(node.edge.program);
  if (program.atomic() && program.op == AtomicOp::Stop) {
    node.env = parent_env;
    node.terminal = true;
    node.terminal_value = reward(task, input, parent_env);
    return;
  }
  if (program.atomic()) {
    node.env = apply_call(parent_env, node.edge, lib_);
  } else {
    // Nested searches build their own trees, so `node` stays valid.
    auto nested = recurse_subprogram(parent_env, *program.task, depth + 1);
    if (!nested.success) {
      node.env = parent_env;
      node.terminal = true;
      node.failed_recursion = true;
      node.terminal_value = 0.0;
      return;
    }
    node.env = std::move(nested.env);
  }
  if (node.steps >= cap) {
    node.terminal = true;
    node.terminal_value = 0.0;
  }
}

SearchOutcome SearchEngine::run_search(TaskId task, const EnvState& input, const EnvState& root_env, int steps_taken,
                                       const HiddenState& hidden, bool training, std::mt19937_64& rng, int depth) {
  if (cfg_.simulations < 1) throw PreconditionError("run_search: simulations must be at least 1");
  const int level = program_level(lib_, task);
  const int cap = cfg_.caps.max_steps(task, input.size());
  const bool noise = training;

  SearchTree tree;
  {
    SearchNode root;
    root.env = root_env;
    root.steps = steps_taken;
    tree.add(std::move(root));
  }

  auto evaluate_and_expand = [&](int id, const HiddenState& h_in) {
    auto out = model_.evaluate(*tree[id].env, task, h_in);
    auto feasible = feasible_pairs(*tree[id].env, level, lib_);
    tree[id].hidden = out.hidden;
    expand(tree, id, out, feasible, cfg_, noise, rng, stats_);
    return out.value;
  };

  const auto root_feasible = feasible_pairs(root_env, level, lib_);
  if (root_feasible.empty()) throw PreconditionError("run_search: dead-end root");

  const double root_value = evaluate_and_expand(0, hidden);
  {
    const int path[] = {0};
    backup(tree, path, root_value);
  }

  std::vector<int> path;
  for (int sim = 0; sim < cfg_.simulations; ++sim) {
    path.assign(1, 0);
    int id = 0;
    while (tree[id].expanded && !tree[id].terminal) {
      const int next = puct_select(tree, id, cfg_.c_puct);
      if (!tree[next].env) materialize(tree, id, next, task, input, cap, depth);
      path.push_back(next);
      id = next;
    }
    double value = 0.0;
    if (tree[id].terminal) {
      value = tree[id].terminal_value;
    } else {
      const int parent = path[path.size() - 2];
      value = evaluate_and_expand(id, tree[parent].hidden);
    }
    backup(tree, path, value);
    stats_.simulations += 1;
    stats_.max_depth = std::max(stats_.max_depth, tree[id].depth);
  }

  const auto& root = tree[0];
  SearchOutcome result;
  result.program_policy.assign(static_cast<std::size_t>(lib_.size()), 0.0);
  result.arg_policy.assign(kNumArgTuples, 0.0);
  result.root_value = root_value;
  result.branching = static_cast<int>(root_feasible.size());
  result.hidden = root.hidden;

  std::vector<double> weight;
  int most_visited = -1;
  for (int c : root.children) {
    const auto& child = tree[c];
    result.root_visits.emplace_back(child.edge, child.visits);
    if (most_visited < 0 || child.visits > tree[most_visited].visits) most_visited = c;
  }
  if (cfg_.temperature <= 0.0 || !training) {
    for (int c : root.children) weight.push_back(c == most_visited ? 1.0 : 0.0);
  } else {
    for (int c : root.children) {
      weight.push_back(std::pow(static_cast<double>(tree[c].visits), 1.0 / cfg_.temperature));
    }
  }
  const double total = std::accumulate(weight.begin(), weight.end(), 0.0);
  for (std::size_t i = 0; i < root.children.size(); ++i) {
    const auto& edge = tree[root.children[i]].edge;
    weight[i] /= total;
    result.program_policy[static_cast<std::size_t>(edge.program)] += weight[i];
    result.arg_policy[static_cast<std::size_t>(args_encode(edge.args))] += weight[i];
  }

  int chosen = most_visited;
  if (training && cfg_.temperature > 0.0) {
    std::discrete_distribution<std::size_t> pick(weight.begin(), weight.end());
    chosen = root.children[pick(rng)];
  }
  const auto& picked = tree[chosen];
  result.chosen = picked.edge;
  result.next_env = *picked.env;
  result.failed = picked.failed_recursion;
  result.stop = lib_.at(picked.edge.program).atomic() && lib_.at(picked.edge.program).op == AtomicOp::Stop;
  last_tree_ = std::move(tree);
  return result;
}

EpisodeRun SearchEngine::run_episode(TaskId task, const EnvState& input, bool training, std::mt19937_64& rng,
                                     int depth) {
  if (!task_precondition(task, input)) {
    throw PreconditionError("run_episode: " + std::string(task_name(task)) + " precondition fails on " +
                            input.to_record());
  }
  EpisodeRun run;
  run.task = task;
  run.input = input;
  const int cap = cfg_.caps.max_steps(task, input.size());
  EnvState env = input;
  HiddenState hidden = model_.initial_hidden();
  while (true) {
    if (static_cast<int>(run.steps.size()) >= cap) {
      run.cap_exceeded = true;
      break;
    }
    auto outcome = run_search(task, input, env, static_cast<int>(run.steps.size()), hidden, training, rng, depth);
    EpisodeStep step;
    step.observation = observe(env);
    step.program_policy = std::move(outcome.program_policy);
    step.arg_policy = std::move(outcome.arg_policy);
    step.hidden = std::move(hidden);
    step.call = outcome.chosen;
    step.env_after = outcome.next_env;
    run.steps.push_back(std::move(step));
    if (outcome.failed) {
      run.failed_recursion = true;
      break;
    }
    if (outcome.stop) {
      run.reward = reward(task, input, env);
      break;
    }
    env = std::move(outcome.next_env);
    hidden = std::move(outcome.hidden);
  }
  run.output = env;
  return run;
}

NestedResult SearchEngine::recurse_subprogram(const EnvState& env, TaskId task, int depth) {
  if (depth > lib_.height()) throw Error("recursion depth exceeds library height");
  if (cfg_.nested_simulations <= 0) return {};
  std::string key;
  key.reserve(64);
  key.append(task_name(task)).append("|").append(env.to_record());
  if (cfg_.cache_recursion) {
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  }
  stats_.recursions += 1;

  SearchConfig nested_cfg = cfg_;
  nested_cfg.simulations = cfg_.nested_simulations;
  std::swap(cfg_, nested_cfg);
  std::mt19937_64 rng(derive_seed(salt_, {hash_string(key)}));
  NestedResult result;
  try {
    auto run = run_episode(task, env, /*training=*/false, rng, depth);
    result.success = run.reward == 1;
    if (result.success) result.env = run.output;
  } catch (...) {
    std::swap(cfg_, nested_cfg);
    throw;
  }
  std::swap(cfg_, nested_cfg);
  if (cfg_.cache_recursion) cache_.emplace(std::move(key), result);
  return result;
}

// ─── Greedy ──────────────────────────────────────────

namespace {

struct GreedyFrame {
  EnvState env;
  bool ok = true;
};

GreedyFrame run_greedy(const EnvState& input, TaskId task, const PolicyModel& model, const ProgramLibrary& lib,
                       const StepCaps& caps, int depth, GreedyResult& result) {
  if (depth > lib.height()) throw Error("greedy recursion depth exceeds library height");
  const int level = program_level(lib, task);
  const int cap = caps.max_steps(task, input.size());
  EnvState env = input;
  HiddenState hidden = model.initial_hidden();
  for (int step = 0; step < cap; ++step) {
    auto out = model.evaluate(env, task, hidden);
    hidden = out.hidden;
    auto feasible = feasible_pairs(env, level, lib);
    const auto call = greedy_select(out, feasible);
    const auto& program = lib.at(call.program);
    if (program.atomic() && program.op == AtomicOp::Stop) {
      result.trace.push_back({call, depth, env});
      return {env, true};
    }
    if (program.atomic()) {
      env = apply_call(env, call, lib);
      result.trace.push_back({call, depth, env});
      continue;
    }
    const auto marker = result.trace.size();
    result.trace.push_back({call, depth, env});
    auto sub = run_greedy(env, *program.task, model, lib, caps, depth + 1, result);
    if (!sub.ok) return {sub.env, false};
    env = sub.env;
    result.trace[marker].env_after = env;
  }
  result.cap_exceeded = true;
  result.diagnostic = std::string(task_name(task)) + " exceeded its step cap of " + std::to_string(cap) +
                      " at depth " + std::to_string(depth);
  return {env, false};
}

}  // namespace

GreedyResult execute_greedy(const EnvState& env, TaskId task, const PolicyModel& model, const ProgramLibrary& lib,
                            const StepCaps& caps) {
  if (!task_precondition(task, env)) {
    throw PreconditionError("execute_greedy: " + std::string(task_name(task)) + " precondition fails on " +
                            env.to_record());
  }
  GreedyResult result;
  auto frame = run_greedy(env, task, model, lib, caps, 0, result);
  result.final_env = frame.env;
  result.reward = frame.ok ? reward(task, env, frame.env) : 0;
  return result;
}

}  // namespace argprog
