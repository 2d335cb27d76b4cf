#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace argprog {

// ─── Errors ──────────────────────────────────────────

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidStateError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

// ─── Arguments ───────────────────────────────────────

enum class ArgSlot : std::uint8_t { None = 0, P1 = 1, P2 = 2, P3 = 3 };

inline constexpr int kNumArgTuples = 64;

// Ordered triple of pointer references. NONE pads unused slots.
struct ArgTuple {
  std::array<ArgSlot, 3> slots{ArgSlot::None, ArgSlot::None, ArgSlot::None};

  constexpr ArgTuple() = default;
  constexpr ArgTuple(ArgSlot a, ArgSlot b = ArgSlot::None, ArgSlot c = ArgSlot::None)
      : slots{a, b, c} {}

  [[nodiscard]] constexpr bool empty() const {
    return slots[0] == ArgSlot::None && slots[1] == ArgSlot::None && slots[2] == ArgSlot::None;
  }
  [[nodiscard]] constexpr int count() const {
    int k = 0;
    for (auto s : slots) k += s != ArgSlot::None ? 1 : 0;
    return k;
  }

  auto operator<=>(const ArgTuple&) const = default;
};

// index = 16*s1 + 4*s2 + s3 with NONE=0, P1=1, P2=2, P3=3
[[nodiscard]] constexpr int args_encode(const ArgTuple& t) {
  return 16 * static_cast<int>(t.slots[0]) + 4 * static_cast<int>(t.slots[1]) +
         static_cast<int>(t.slots[2]);
}

[[nodiscard]] ArgTuple args_decode(int index);

[[nodiscard]] std::string to_string(const ArgTuple& t);

// ─── Atomic operations and tasks ─────────────────────

enum class AtomicOp : std::uint8_t { Stop, SavePtr, LoadPtr, Push, Pop, Swap, PtrLeft, PtrRight };

enum class TaskId : std::uint8_t { PartitionUpdate = 0, Partition = 1, QuicksortUpdate = 2, Quicksort = 3 };

inline constexpr int kNumTasks = 4;
inline constexpr std::array<TaskId, kNumTasks> kAllTasks{TaskId::PartitionUpdate, TaskId::Partition,
                                                         TaskId::QuicksortUpdate, TaskId::Quicksort};

[[nodiscard]] constexpr int task_index(TaskId t) { return static_cast<int>(t); }
[[nodiscard]] std::string_view task_name(TaskId t);
[[nodiscard]] std::optional<TaskId> parse_task(std::string_view name);

}  // namespace argprog
