#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "argprog/core.hpp"
#include "argprog/environment.hpp"

namespace argprog {

enum class LibraryMode : std::uint8_t { Args, NoArgs };

enum class ProgramKind : std::uint8_t { Atomic, Learned };

[[nodiscard]] std::string_view mode_name(LibraryMode mode);
[[nodiscard]] std::optional<LibraryMode> parse_library_mode(std::string_view name);

struct ProgramSpec {
  std::string name;
  int level = 0;
  int arity = 0;
  ProgramKind kind = ProgramKind::Atomic;
  AtomicOp op = AtomicOp::Stop;            // atomic only
  std::optional<ArgTuple> bound_args;      // no-argument variants carry their pointers here
  std::optional<TaskId> task;              // learned only

  [[nodiscard]] bool atomic() const { return kind == ProgramKind::Atomic; }
};

// A program invocation: library position plus the argument tuple the policy chose.
struct ProgramCall {
  int program = 0;
  ArgTuple args;
  bool operator==(const ProgramCall&) const = default;
};

// Immutable, ordered program library. Order is part of the checkpoint contract
// since the program head's output dimension follows it.
class ProgramLibrary {
 public:
  static constexpr int kManifestVersion = 1;

  explicit ProgramLibrary(LibraryMode mode);

  [[nodiscard]] LibraryMode mode() const { return mode_; }
  [[nodiscard]] int size() const { return static_cast<int>(programs_.size()); }
  [[nodiscard]] const ProgramSpec& at(int index) const { return programs_.at(static_cast<std::size_t>(index)); }
  [[nodiscard]] const std::vector<ProgramSpec>& programs() const { return programs_; }
  [[nodiscard]] std::optional<int> find(std::string_view name) const;
  [[nodiscard]] int index_of(TaskId task) const { return task_program_[static_cast<std::size_t>(task)]; }
  [[nodiscard]] int stop_index() const { return 0; }
  [[nodiscard]] int height() const;

  // Static argument domain before environment filtering, in args_encode order.
  [[nodiscard]] const std::vector<ArgTuple>& valid_arg_tuples(int program) const {
    return arg_domains_.at(static_cast<std::size_t>(program));
  }

  [[nodiscard]] std::string manifest_json() const;

  [[nodiscard]] std::string describe(const ProgramCall& call) const;

 private:
  LibraryMode mode_;
  std::vector<ProgramSpec> programs_;
  std::vector<std::vector<ArgTuple>> arg_domains_;
  std::unordered_map<std::string, int> by_name_;
  std::array<int, kNumTasks> task_program_{};
};

[[nodiscard]] ProgramLibrary build_library(LibraryMode mode);

// Static argument domain of a program, in args_encode order. Symmetric
// actions only accept the canonical (increasing) pointer order.
[[nodiscard]] std::vector<ArgTuple> valid_arg_tuples(const ProgramSpec& program);

// Feasibility of an atomic program with a policy-chosen tuple: static domain
// membership plus the environment precondition on the effective arguments.
[[nodiscard]] bool atomic_feasible(const EnvState& env, const ProgramSpec& action, const ArgTuple& args);

[[nodiscard]] bool program_precondition(const ProgramSpec& program, const EnvState& env);

// Every (program, args) callable from a program of caller_level in env, in
// library order then args_encode order. Its size is the branching factor M.
[[nodiscard]] std::vector<ProgramCall> feasible_pairs(const EnvState& env, int caller_level,
                                                      const ProgramLibrary& lib);

[[nodiscard]] bool call_feasible(const EnvState& env, const ProgramCall& call, const ProgramLibrary& lib);

// Executes an atomic call; throws PreconditionError if infeasible.
[[nodiscard]] EnvState apply_call(const EnvState& env, const ProgramCall& call, const ProgramLibrary& lib);

}  // namespace argprog
