#pragma once

#include <vector>

#include "argprog/search.hpp"

namespace argprog {

// Program counter of a hand-written expert program.
struct ExpertMemory {
  int step = 0;
  int phase = 0;
};

// Next call of the hand-written implementation of `task`. Quicksort and
// quicksort_update need argument-taking actions and are only scripted for
// the argument library; other combinations throw PreconditionError.
[[nodiscard]] ProgramCall expert_action(TaskId task, const EnvState& env, ExpertMemory& memory,
                                        const ProgramLibrary& lib);

struct ExpertRun {
  EnvState output;
  std::vector<TraceEvent> trace;
  int top_level_steps = 0;
  int reward = 0;
};

// Executes the expert, recursing into learned sub-programs with their own
// experts. Every call is checked against feasibility and every program
// against its step cap; a violation throws PreconditionError.
[[nodiscard]] ExpertRun run_expert(TaskId task, const EnvState& input, const ProgramLibrary& lib,
                                   const StepCaps& caps);

// Policy double that emits one-hot priors for the expert's next call. The
// program counter travels in the first two hidden-state entries.
class ScriptedExpertPolicy final : public PolicyModel {
 public:
  explicit ScriptedExpertPolicy(const ProgramLibrary& lib, int hidden_size = 4) : lib_(lib), hidden_(hidden_size) {}
  [[nodiscard]] PolicyOutput evaluate(const EnvState& env, TaskId task, const HiddenState& prev) const override;
  [[nodiscard]] HiddenState initial_hidden() const override { return HiddenState::zeros(hidden_); }

 private:
  const ProgramLibrary& lib_;
  int hidden_;
};

// Uniform priors over everything with a constant value estimate.
class UniformPolicy final : public PolicyModel {
 public:
  UniformPolicy(int programs, double value, int hidden_size = 4)
      : programs_(programs), value_(value), hidden_(hidden_size) {}
  [[nodiscard]] PolicyOutput evaluate(const EnvState& env, TaskId task, const HiddenState& prev) const override;
  [[nodiscard]] HiddenState initial_hidden() const override { return HiddenState::zeros(hidden_); }

 private:
  int programs_;
  double value_;
  int hidden_;
};

}  // namespace argprog
