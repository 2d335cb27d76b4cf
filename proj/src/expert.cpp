#include "argprog/expert.hpp"

namespace argprog {

namespace {

using S = ArgSlot;

ProgramCall call(const ProgramLibrary& lib, std::string_view name, ArgTuple args = {}) {
  auto index = lib.find(name);
  if (!index) throw PreconditionError("expert: library has no program '" + std::string(name) + "'");
  return {*index, args};
}

ProgramCall call(const ProgramLibrary& lib, TaskId task) { return {lib.index_of(task), {}}; }

constexpr int kDone = 99;

ProgramCall partition_update_step(const EnvState& env, ExpertMemory& m, const ProgramLibrary& lib) {
  const bool args = lib.mode() == LibraryMode::Args;
  if (m.phase == kDone) return call(lib, "stop");
  if (m.step == 0) {
    const bool less = env.value_at(env.p3()) < env.value_at(env.p2());
    if (less && env.p1() != env.p3()) {
      m.phase = 1;
      return args ? call(lib, "swap", {S::P1, S::P3}) : call(lib, "swap_pivot");
    }
    if (less) {
      if (args) {
        m.phase = kDone;
        return call(lib, "ptr_right", {S::P1, S::P3});
      }
      m.phase = 2;
      return call(lib, "ptr_1_right");
    }
    m.phase = kDone;
    return args ? call(lib, "ptr_right", {S::P3}) : call(lib, "ptr_3_right");
  }
  if (m.phase == 1) {
    if (args) {
      m.phase = kDone;
      return call(lib, "ptr_right", {S::P1, S::P3});
    }
    m.phase = 2;
    return call(lib, "ptr_1_right");
  }
  // phase 2: no-argument library moves the two pointers one at a time
  m.phase = kDone;
  return call(lib, "ptr_3_right");
}

ProgramCall partition_step(const EnvState& env, ExpertMemory& m, const ProgramLibrary& lib) {
  if (m.phase == kDone) return call(lib, "stop");
  if (env.p3() < env.p2()) return call(lib, TaskId::PartitionUpdate);
  m.phase = kDone;
  if (env.p1() != env.p2()) {
    return lib.mode() == LibraryMode::Args ? call(lib, "swap", {S::P1, S::P2}) : call(lib, "swap");
  }
  return call(lib, "stop");
}

ProgramCall quicksort_update_step(const EnvState& env, ExpertMemory& m, const ProgramLibrary& lib) {
  switch (m.step) {
    case 0:
      return call(lib, "pop");
    case 1:
      return call(lib, "save_ptr", {S::P1});
    case 2:
      return call(lib, TaskId::Partition);
    case 3:
      return call(lib, "load_ptr", {S::P3});
    case 4:
      if (atomic_precondition(env, AtomicOp::Push, {})) return call(lib, "push");
      return call(lib, "stop");
    default:
      return call(lib, "stop");
  }
}

ProgramCall quicksort_step(const EnvState& env, ExpertMemory& m, const ProgramLibrary& lib) {
  switch (m.step) {
    case 0:
      return call(lib, "save_ptr", {S::P1});
    case 1:
      return call(lib, TaskId::Partition);
    case 2:
      return call(lib, "load_ptr", {S::P3});
    case 3:
      if (atomic_precondition(env, AtomicOp::Push, {})) return call(lib, "push");
      [[fallthrough]];
    default:
      if (!env.stack().empty()) return call(lib, TaskId::QuicksortUpdate);
      return call(lib, "stop");
  }
}

}  // namespace

ProgramCall expert_action(TaskId task, const EnvState& env, ExpertMemory& memory, const ProgramLibrary& lib) {
  ProgramCall next;
  switch (task) {
    case TaskId::PartitionUpdate:
      next = partition_update_step(env, memory, lib);
      break;
    case TaskId::Partition:
      next = partition_step(env, memory, lib);
      break;
    case TaskId::QuicksortUpdate:
    case TaskId::Quicksort:
      if (lib.mode() != LibraryMode::Args) {
        throw PreconditionError("expert for " + std::string(task_name(task)) + " needs the argument library");
      }
      next = task == TaskId::Quicksort ? quicksort_step(env, memory, lib) : quicksort_update_step(env, memory, lib);
      break;
  }
  memory.step += 1;
  return next;
}

namespace {

EnvState run_expert_into(TaskId task, const EnvState& input, const ProgramLibrary& lib, const StepCaps& caps,
                         int depth, std::vector<TraceEvent>& trace, int* top_steps) {
  const int cap = caps.max_steps(task, input.size());
  const int level = lib.at(lib.index_of(task)).level;
  EnvState env = input;
  ExpertMemory memory;
  for (int step = 0; step < cap; ++step) {
    const auto next = expert_action(task, env, memory, lib);
    const auto& program = lib.at(next.program);
    if (program.level >= level || !call_feasible(env, next, lib)) {
      throw PreconditionError("expert for " + std::string(task_name(task)) + " made an infeasible call " +
                              lib.describe(next) + " on " + env.to_record());
    }
    if (top_steps != nullptr) *top_steps = step + 1;
    if (program.atomic() && program.op == AtomicOp::Stop) {
      trace.push_back({next, depth, env});
      return env;
    }
    if (program.atomic()) {
      env = apply_call(env, next, lib);
      trace.push_back({next, depth, env});
      continue;
    }
    const auto marker = trace.size();
    trace.push_back({next, depth, env});
    env = run_expert_into(*program.task, env, lib, caps, depth + 1, trace, nullptr);
    trace[marker].env_after = env;
  }
  throw PreconditionError("expert for " + std::string(task_name(task)) + " exceeded its step cap of " +
                          std::to_string(cap) + " on " + input.to_record());
}

}  // namespace

ExpertRun run_expert(TaskId task, const EnvState& input, const ProgramLibrary& lib, const StepCaps& caps) {
  if (!task_precondition(task, input)) {
    throw PreconditionError("run_expert: precondition of " + std::string(task_name(task)) + " fails");
  }
  ExpertRun run;
  run.output = run_expert_into(task, input, lib, caps, 0, run.trace, &run.top_level_steps);
  run.reward = reward(task, input, run.output);
  return run;
}

PolicyOutput ScriptedExpertPolicy::evaluate(const EnvState& env, TaskId task, const HiddenState& prev) const {
  ExpertMemory memory{static_cast<int>(prev.h(0)), static_cast<int>(prev.h(1))};
  const auto next = expert_action(task, env, memory, lib_);
  PolicyOutput out;
  out.program_probs = Eigen::VectorXd::Zero(lib_.size());
  out.program_probs(next.program) = 1.0;
  out.arg_probs = Eigen::VectorXd::Zero(kNumArgTuples);
  out.arg_probs(args_encode(next.args)) = 1.0;
  out.value = 1.0;
  out.hidden = HiddenState::zeros(hidden_);
  out.hidden.h(0) = memory.step;
  out.hidden.h(1) = memory.phase;
  return out;
}

PolicyOutput UniformPolicy::evaluate(const EnvState&, TaskId, const HiddenState&) const {
  PolicyOutput out;
  out.program_probs = Eigen::VectorXd::Constant(programs_, 1.0 / programs_);
  out.arg_probs = Eigen::VectorXd::Constant(kNumArgTuples, 1.0 / kNumArgTuples);
  out.value = value_;
  out.hidden = HiddenState::zeros(hidden_);
  return out;
}

}  // namespace argprog
