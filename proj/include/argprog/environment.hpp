#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "argprog/core.hpp"

namespace argprog {

inline constexpr int kMinValue = 0;
inline constexpr int kMaxValue = 10;
inline constexpr int kMinLength = 2;
inline constexpr int kMaxLength = 60;

// Observation layout (all entries in [0,1], booleans as 0/1):
//   0-2   A[p1]/10, A[p2]/10, A[p3]/10
//   3-8   p1 left/right end, p2 left/right end, p3 left/right end
//   9-11  p1==p2, p1==p3, p2==p3
//   12-14 p1<p2, p3<p2, p1<=p3
//   15-16 A[p1]<A[p2], A[p3]<A[p2]
//   17-20 stack empty, registry empty, registry==p1, list sorted
inline constexpr int kObservationSize = 21;
using Observation = std::array<double, kObservationSize>;

struct RangeFrame {
  int lo = 0;
  int hi = 0;
  auto operator<=>(const RangeFrame&) const = default;
};

// Immutable list-manipulation world: values, three pointers, a range stack
// and a one-slot registry. Construction validates every invariant.
class EnvState {
 public:
  // Single-element list [0], every pointer at 0.
  EnvState() : list_{0} {}

  static EnvState make(std::vector<int> list, int p1, int p2, int p3,
                       std::vector<RangeFrame> stack = {}, std::optional<int> registry = std::nullopt);

  [[nodiscard]] std::span<const int> list() const { return list_; }
  [[nodiscard]] int size() const { return static_cast<int>(list_.size()); }
  [[nodiscard]] int value_at(int index) const { return list_[static_cast<std::size_t>(index)]; }
  [[nodiscard]] int pointer(ArgSlot slot) const;
  [[nodiscard]] int p1() const { return ptr_[0]; }
  [[nodiscard]] int p2() const { return ptr_[1]; }
  [[nodiscard]] int p3() const { return ptr_[2]; }
  [[nodiscard]] std::span<const RangeFrame> stack() const { return stack_; }
  [[nodiscard]] std::optional<int> registry() const { return registry_; }
  [[nodiscard]] bool is_sorted() const;

  // list=<csv>;p=<p1,p2,p3>;stack=<lo:hi|...>;reg=<int|->
  [[nodiscard]] std::string to_record() const;
  static EnvState from_record(std::string_view record);

  bool operator==(const EnvState&) const = default;

 private:
  void validate() const;

  friend EnvState apply_atomic(const EnvState&, AtomicOp, const ArgTuple&);
  friend EnvState oracle_transform(TaskId, const EnvState&);

  std::vector<int> list_;
  std::array<int, 3> ptr_{};
  std::vector<RangeFrame> stack_;
  std::optional<int> registry_;
};

[[nodiscard]] Observation observe(const EnvState& env);

// Environment-side precondition of an atomic operation for a concrete
// argument tuple. Static argument-shape validity is the program library's job.
[[nodiscard]] bool atomic_precondition(const EnvState& env, AtomicOp op, const ArgTuple& args);

// Throws PreconditionError when atomic_precondition does not hold.
[[nodiscard]] EnvState apply_atomic(const EnvState& env, AtomicOp op, const ArgTuple& args);

// Entry precondition of a learned program.
[[nodiscard]] bool task_precondition(TaskId task, const EnvState& env);

// Reference final state of a task. Throws PreconditionError if env does not
// satisfy the task's precondition.
[[nodiscard]] EnvState oracle_transform(TaskId task, const EnvState& input);

// 1 iff output matches the oracle on the fields the task constrains.
[[nodiscard]] int reward(TaskId task, const EnvState& input, const EnvState& output);

// Random state satisfying the task precondition, values i.i.d. uniform on [0,10].
[[nodiscard]] EnvState sample_task_env(TaskId task, int length, std::mt19937_64& rng);

// Random valid state with no task constraint (pointers anywhere, 0-2 frames,
// optional registry). Used for fuzzing.
[[nodiscard]] EnvState sample_any_env(int length, std::mt19937_64& rng);

[[nodiscard]] std::vector<int> parse_int_list(std::string_view csv);

}  // namespace argprog
