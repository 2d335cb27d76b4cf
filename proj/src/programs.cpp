#include "argprog/programs.hpp"

#include <algorithm>

#include "json.hpp"

namespace argprog {

namespace {

using S = ArgSlot;

ProgramSpec atomic(std::string name, int arity, AtomicOp op, std::optional<ArgTuple> bound = std::nullopt) {
  return ProgramSpec{std::move(name), 0, arity, ProgramKind::Atomic, op, bound, std::nullopt};
}

ProgramSpec learned(std::string name, int level, TaskId task) {
  return ProgramSpec{std::move(name), level, 0, ProgramKind::Learned, AtomicOp::Stop, std::nullopt, task};
}

std::vector<ProgramSpec> args_programs() {
  return {
      atomic("stop", 0, AtomicOp::Stop),
      atomic("save_ptr", 1, AtomicOp::SavePtr),
      atomic("load_ptr", 1, AtomicOp::LoadPtr),
      atomic("push", 0, AtomicOp::Push),
      atomic("pop", 0, AtomicOp::Pop),
      atomic("swap", 2, AtomicOp::Swap),
      atomic("ptr_left", 3, AtomicOp::PtrLeft),
      atomic("ptr_right", 3, AtomicOp::PtrRight),
  };
}

// Cartesian product of the argument-taking actions with their arguments.
std::vector<ProgramSpec> noargs_programs() {
  return {
      atomic("stop", 0, AtomicOp::Stop),
      atomic("save_ptr_1", 0, AtomicOp::SavePtr, ArgTuple(S::P1)),
      atomic("load_ptr_1", 0, AtomicOp::LoadPtr, ArgTuple(S::P1)),
      atomic("push", 0, AtomicOp::Push, ArgTuple()),
      atomic("pop", 0, AtomicOp::Pop, ArgTuple()),
      atomic("swap", 0, AtomicOp::Swap, ArgTuple(S::P1, S::P2)),
      atomic("swap_pivot", 0, AtomicOp::Swap, ArgTuple(S::P1, S::P3)),
      atomic("ptr_1_left", 0, AtomicOp::PtrLeft, ArgTuple(S::P1)),
      atomic("ptr_2_left", 0, AtomicOp::PtrLeft, ArgTuple(S::P2)),
      atomic("ptr_3_left", 0, AtomicOp::PtrLeft, ArgTuple(S::P3)),
      atomic("ptr_1_right", 0, AtomicOp::PtrRight, ArgTuple(S::P1)),
      atomic("ptr_2_right", 0, AtomicOp::PtrRight, ArgTuple(S::P2)),
      atomic("ptr_3_right", 0, AtomicOp::PtrRight, ArgTuple(S::P3)),
  };
}

bool strictly_increasing_prefix(const ArgTuple& t) {
  // Pointers first, NONE padding after, pointers strictly increasing.
  int last = 0;
  bool padding = false;
  for (auto s : t.slots) {
    int v = static_cast<int>(s);
    if (v == 0) {
      padding = true;
      continue;
    }
    if (padding || v <= last) return false;
    last = v;
  }
  return true;
}

}  // namespace

std::string_view mode_name(LibraryMode mode) { return mode == LibraryMode::Args ? "args" : "noargs"; }

std::optional<LibraryMode> parse_library_mode(std::string_view name) {
  if (name == "args") return LibraryMode::Args;
  if (name == "noargs") return LibraryMode::NoArgs;
  return std::nullopt;
}

std::vector<ArgTuple> valid_arg_tuples(const ProgramSpec& program) {
  std::vector<ArgTuple> out;
  if (!program.atomic() || program.bound_args || program.arity == 0) {
    out.emplace_back();
    return out;
  }
  for (int index = 0; index < kNumArgTuples; ++index) {
    ArgTuple t = args_decode(index);
    if (!strictly_increasing_prefix(t)) continue;
    const int k = t.count();
    bool ok = false;
    switch (program.op) {
      case AtomicOp::SavePtr:
      case AtomicOp::LoadPtr:
        ok = k == 1;
        break;
      case AtomicOp::Swap:
        ok = k == 2;
        break;
      case AtomicOp::PtrLeft:
      case AtomicOp::PtrRight:
        ok = k >= 1;
        break;
      default:
        ok = k == 0;
    }
    if (ok) out.push_back(t);
  }
  return out;
}

ProgramLibrary::ProgramLibrary(LibraryMode mode) : mode_(mode) {
  programs_ = mode == LibraryMode::Args ? args_programs() : noargs_programs();
  programs_.push_back(learned("partition_update", 1, TaskId::PartitionUpdate));
  programs_.push_back(learned("partition", 2, TaskId::Partition));
  programs_.push_back(learned("quicksort_update", 4, TaskId::QuicksortUpdate));
  programs_.push_back(learned("quicksort", 5, TaskId::Quicksort));
  for (int i = 0; i < size(); ++i) {
    const auto& p = programs_[static_cast<std::size_t>(i)];
    by_name_.emplace(p.name, i);
    arg_domains_.push_back(argprog::valid_arg_tuples(p));
    if (p.task) task_program_[static_cast<std::size_t>(*p.task)] = i;
  }
}

ProgramLibrary build_library(LibraryMode mode) { return ProgramLibrary(mode); }

std::optional<int> ProgramLibrary::find(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

int ProgramLibrary::height() const {
  int h = 0;
  for (const auto& p : programs_) h = std::max(h, p.level);
  return h;
}

std::string ProgramLibrary::manifest_json() const {
  nlohmann::json doc;
  doc["version"] = kManifestVersion;
  doc["mode"] = std::string(mode_name(mode_));
  auto& list = doc["programs"];
  list = nlohmann::json::array();
  for (int i = 0; i < size(); ++i) {
    const auto& p = programs_[static_cast<std::size_t>(i)];
    list.push_back({{"name", p.name},
                    {"level", p.level},
                    {"arity", p.arity},
                    {"kind", p.atomic() ? "atomic" : "learned"},
                    {"index", i}});
  }
  return doc.dump();
}

std::string ProgramLibrary::describe(const ProgramCall& call) const {
  const auto& p = at(call.program);
  if (call.args.empty()) return p.name;
  return p.name + "(" + to_string(call.args) + ")";
}

bool atomic_feasible(const EnvState& env, const ProgramSpec& action, const ArgTuple& args) {
  if (!action.atomic()) throw PreconditionError("atomic_feasible called on learned program " + action.name);
  auto domain = valid_arg_tuples(action);
  if (std::find(domain.begin(), domain.end(), args) == domain.end()) return false;
  return atomic_precondition(env, action.op, action.bound_args.value_or(args));
}

bool program_precondition(const ProgramSpec& program, const EnvState& env) {
  if (program.atomic()) return true;
  return task_precondition(*program.task, env);
}

bool call_feasible(const EnvState& env, const ProgramCall& call, const ProgramLibrary& lib) {
  if (call.program < 0 || call.program >= lib.size()) return false;
  const auto& p = lib.at(call.program);
  if (p.atomic()) {
    const auto& domain = lib.valid_arg_tuples(call.program);
    if (std::find(domain.begin(), domain.end(), call.args) == domain.end()) return false;
    return atomic_precondition(env, p.op, p.bound_args.value_or(call.args));
  }
  return call.args.empty() && program_precondition(p, env);
}

std::vector<ProgramCall> feasible_pairs(const EnvState& env, int caller_level, const ProgramLibrary& lib) {
  std::vector<ProgramCall> out;
  for (int i = 0; i < lib.size(); ++i) {
    const auto& p = lib.at(i);
    if (p.level >= caller_level) continue;
    if (!p.atomic()) {
      if (program_precondition(p, env)) out.push_back({i, ArgTuple()});
      continue;
    }
    for (const auto& args : lib.valid_arg_tuples(i)) {
      if (atomic_precondition(env, p.op, p.bound_args.value_or(args))) out.push_back({i, args});
    }
  }
  return out;
}

EnvState apply_call(const EnvState& env, const ProgramCall& call, const ProgramLibrary& lib) {
  const auto& p = lib.at(call.program);
  if (!p.atomic()) throw PreconditionError("apply_call: " + p.name + " is not atomic");
  if (!call_feasible(env, call, lib)) {
    throw PreconditionError("apply_call: " + lib.describe(call) + " infeasible on " + env.to_record());
  }
  return apply_atomic(env, p.op, p.bound_args.value_or(call.args));
}

}  // namespace argprog
