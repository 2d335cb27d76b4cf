#pragma once

// Shared between the unit tests and the acceptance binary.

#include <cstdint>
#include <random>

#include "argprog/expert.hpp"
#include "argprog/search.hpp"

namespace argprog::fixtures {

// partition_update state with A[p3] >= A[p2]: the only single call that
// finishes the job before stop is ptr_right(P3).
inline EnvState one_step_env(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  while (true) {
    auto env = sample_task_env(TaskId::PartitionUpdate, 5, rng);
    if (env.value_at(env.p3()) >= env.value_at(env.p2())) return env;
  }
}

inline ProgramCall one_step_answer(const ProgramLibrary& lib) { return {*lib.find("ptr_right"), {ArgSlot::P3}}; }

struct OneStepResult {
  bool correct_first = false;
  ProgramCall best;
  int best_visits = 0;
};

// Exact search, uniform priors (no Dirichlet noise), zero value estimate.
// The seed picks the environment.
inline OneStepResult run_one_step_fixture(std::uint64_t seed, int simulations = 100) {
  const ProgramLibrary lib(LibraryMode::Args);
  const UniformPolicy model(lib.size(), 0.0);
  SearchConfig cfg;
  cfg.mode = ExpansionMode::Exact;
  cfg.simulations = simulations;
  SearchStats stats;
  SearchEngine engine(lib, model, cfg, stats, seed);
  const auto env = one_step_env(seed);
  std::mt19937_64 rng(seed);
  const auto out = engine.run_search(TaskId::PartitionUpdate, env, env, 0, model.initial_hidden(), false, rng);
  OneStepResult r;
  int runner_up = -1;
  for (const auto& [call, visits] : out.root_visits) {
    if (visits > r.best_visits) {
      runner_up = r.best_visits;
      r.best_visits = visits;
      r.best = call;
    } else {
      runner_up = std::max(runner_up, visits);
    }
  }
  // a tie for first place is not a ranking
  r.correct_first = r.best == one_step_answer(lib) && r.best_visits > runner_up;
  return r;
}

}  // namespace argprog::fixtures
