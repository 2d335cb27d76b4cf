#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "argprog/environment.hpp"
#include "argprog/policy_network.hpp"
#include "argprog/programs.hpp"

namespace argprog {

// ─── Policy models ───────────────────────────────────

// Anything that maps (state, task, recurrent state) to the two priors, a value
// and the next recurrent state. The network is the production implementation;
// tests plug in scripted or uniform doubles.
class PolicyModel {
 public:
  virtual ~PolicyModel() = default;
  [[nodiscard]] virtual PolicyOutput evaluate(const EnvState& env, TaskId task, const HiddenState& prev) const = 0;
  [[nodiscard]] virtual HiddenState initial_hidden() const = 0;
};

class NetworkPolicy final : public PolicyModel {
 public:
  explicit NetworkPolicy(const ParameterSet& params) : params_(params) {}
  [[nodiscard]] PolicyOutput evaluate(const EnvState& env, TaskId task, const HiddenState& prev) const override {
    return forward(params_, observe(env), task_index(task), prev);
  }
  [[nodiscard]] HiddenState initial_hidden() const override { return HiddenState::zeros(params_.shape().hidden); }

 private:
  const ParameterSet& params_;
};

// ─── Configuration ───────────────────────────────────

enum class ExpansionMode : std::uint8_t { Exact, Approx };

[[nodiscard]] std::string_view expansion_mode_name(ExpansionMode mode);
[[nodiscard]] std::optional<ExpansionMode> parse_expansion_mode(std::string_view name);

// Maximum number of calls (stop included) a program may make.
struct StepCaps {
  int partition_update = 4;
  int partition_offset = 4;  // 2n + offset
  int quicksort_update = 8;
  int quicksort_offset = 4;  // n + offset

  [[nodiscard]] int max_steps(TaskId task, int length) const;
};

struct SearchConfig {
  ExpansionMode mode = ExpansionMode::Approx;
  int n_expand = 5;
  int simulations = 200;
  double c_puct = 1.0;
  double dirichlet_alpha = 0.3;
  double dirichlet_weight = 0.25;
  double temperature = 1.0;
  int nested_simulations = 100;
  bool cache_recursion = true;
  StepCaps caps;
};

struct SearchStats {
  std::uint64_t nodes_expanded = 0;  // children created
  std::uint64_t expansions = 0;
  std::uint64_t simulations = 0;
  std::uint64_t recursions = 0;
  int max_depth = 0;
  int max_children_per_expansion = 0;
  int min_branching = 0;  // smallest M seen at an expansion (0 = none yet)

  void merge(const SearchStats& other);
};

// ─── Tree ────────────────────────────────────────────

struct SearchNode {
  ProgramCall edge;
  double prior = 0.0;
  int visits = 0;
  double value_sum = 0.0;
  std::vector<int> children;
  std::optional<EnvState> env;  // materialized on first visit
  HiddenState hidden;           // recurrent state after evaluating this node
  int steps = 0;                // calls made in the program so far
  int depth = 0;
  bool expanded = false;
  bool terminal = false;
  bool failed_recursion = false;
  double terminal_value = 0.0;

  [[nodiscard]] double q() const { return value_sum / std::max(visits, 1); }
};

class SearchTree {
 public:
  int add(SearchNode node) {
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size()) - 1;
  }
  SearchNode& operator[](int i) { return nodes_[static_cast<std::size_t>(i)]; }
  const SearchNode& operator[](int i) const { return nodes_[static_cast<std::size_t>(i)]; }
  [[nodiscard]] int size() const { return static_cast<int>(nodes_.size()); }

 private:
  std::vector<SearchNode> nodes_;
};

// argmax over children of Q + c * P * sqrt(sum N + 1) / (1 + N); ties -> lowest child.
[[nodiscard]] int puct_select(const SearchTree& tree, int node, double c_puct);

// Creates children of node from feasible calls. Exact: all of them. Approx:
// min(n, M) distinct calls sampled from the (optionally noised) joint prior.
// Priors are pi_p'(p) * pi_a'(a) renormalized over the created children.
int expand(SearchTree& tree, int node, const PolicyOutput& out, std::span<const ProgramCall> feasible,
           const SearchConfig& cfg, bool add_noise, std::mt19937_64& rng, SearchStats& stats);

void backup(SearchTree& tree, std::span<const int> path, double value);

// ─── Search and execution ────────────────────────────

struct SearchOutcome {
  std::vector<double> program_policy;  // tree policy marginal over programs
  std::vector<double> arg_policy;      // tree policy marginal over the 64 argument indices
  std::vector<std::pair<ProgramCall, int>> root_visits;
  ProgramCall chosen;
  EnvState next_env;
  HiddenState hidden;  // recurrent state after the root observation
  double root_value = 0.0;
  int branching = 0;   // M at the root
  bool stop = false;
  bool failed = false;  // chosen sub-program call did not succeed
};

struct EpisodeStep {
  Observation observation{};
  std::vector<double> program_policy;
  std::vector<double> arg_policy;
  HiddenState hidden;  // recurrent state fed into this step (inspection only)
  ProgramCall call;
  EnvState env_after;
};

struct EpisodeRun {
  TaskId task = TaskId::PartitionUpdate;
  EnvState input;
  EnvState output;
  std::vector<EpisodeStep> steps;
  int reward = 0;
  bool cap_exceeded = false;
  bool failed_recursion = false;
};

struct NestedResult {
  bool success = false;
  std::optional<EnvState> env;
};

// Recursive MCTS over (program, argument) calls. Owns nothing but a recursion
// cache; the policy model is shared read-only.
class SearchEngine {
 public:
  SearchEngine(const ProgramLibrary& lib, const PolicyModel& model, SearchConfig cfg, SearchStats& stats,
               std::uint64_t salt = 0);

  // One action of program `task`: cfg.simulations guided simulations from
  // root_env, then the chosen call applied. `input` is the program's entry state.
  SearchOutcome run_search(TaskId task, const EnvState& input, const EnvState& root_env, int steps_taken,
                           const HiddenState& hidden, bool training, std::mt19937_64& rng, int depth = 0);

  // Runs run_search per action until stop or the step cap.
  EpisodeRun run_episode(TaskId task, const EnvState& input, bool training, std::mt19937_64& rng, int depth = 0);

  // Nested search for a learned program from a fresh recurrent state with the
  // nested budget; success iff the sub-program earns reward 1.
  NestedResult recurse_subprogram(const EnvState& env, TaskId task, int depth);

  [[nodiscard]] const SearchConfig& config() const { return cfg_; }
  [[nodiscard]] SearchConfig& config() { return cfg_; }

  // Last completed tree (root at index 0); kept for inspection in tests.
  [[nodiscard]] const SearchTree& last_tree() const { return last_tree_; }

 private:
  void materialize(SearchTree& tree, int parent, int child, TaskId task, const EnvState& input, int cap, int depth);

  const ProgramLibrary& lib_;
  const PolicyModel& model_;
  SearchConfig cfg_;
  SearchStats& stats_;
  std::uint64_t salt_;
  std::unordered_map<std::string, NestedResult> cache_;
  SearchTree last_tree_;
};

// ─── Greedy execution ────────────────────────────────

struct TraceEvent {
  ProgramCall call;
  int depth = 0;  // 0 = called by the top-level program
  EnvState env_after;
};

struct GreedyResult {
  std::vector<TraceEvent> trace;
  int reward = 0;
  EnvState final_env;
  bool cap_exceeded = false;
  std::string diagnostic;
};

// Argmax execution without search; sub-programs recurse greedily with a fresh
// recurrent state. Reward comes from the environment oracle.
[[nodiscard]] GreedyResult execute_greedy(const EnvState& env, TaskId task, const PolicyModel& model,
                                          const ProgramLibrary& lib, const StepCaps& caps);

}  // namespace argprog
