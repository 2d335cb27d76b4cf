#include "argprog/environment.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

namespace argprog {

namespace {

constexpr std::array<std::string_view, kNumTasks> kTaskNames{"partition_update", "partition",
                                                            "quicksort_update", "quicksort"};

int parse_int(std::string_view text) {
  int value = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end || text.empty()) {
    throw FormatError("invalid integer '" + std::string(text) + "'");
  }
  return value;
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    auto pos = text.find(sep, start);
    parts.push_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

std::vector<int> random_list(int length, std::mt19937_64& rng) {
  std::vector<int> list(static_cast<std::size_t>(length));
  for (auto& v : list) v = uniform_int(rng, kMinValue, kMaxValue);
  return list;
}

RangeFrame random_frame(int length, std::mt19937_64& rng) {
  int lo = uniform_int(rng, 0, length - 2);
  int hi = uniform_int(rng, lo + 1, length - 1);
  return {lo, hi};
}

// 0-2 frames with probability 1/2 each way; keeps sub-program training
// states close to the ones seen when called from a parent program.
std::vector<RangeFrame> random_stack(int length, std::mt19937_64& rng) {
  std::vector<RangeFrame> stack;
  if (uniform_int(rng, 0, 1) == 0) return stack;
  int frames = uniform_int(rng, 1, 2);
  for (int i = 0; i < frames; ++i) stack.push_back(random_frame(length, rng));
  return stack;
}

void check_length(TaskId task, int length) {
  if (length < kMinLength) {
    throw PreconditionError("list length " + std::to_string(length) + " too small for task " +
                            std::string(task_name(task)));
  }
}

// Lomuto partition of [lo, hi] with pivot at hi; returns the pivot's final index.
int lomuto(std::vector<int>& a, int lo, int hi) {
  const int pivot = a[static_cast<std::size_t>(hi)];
  int store = lo;
  for (int scan = lo; scan < hi; ++scan) {
    if (a[static_cast<std::size_t>(scan)] < pivot) {
      std::swap(a[static_cast<std::size_t>(store)], a[static_cast<std::size_t>(scan)]);
      ++store;
    }
  }
  std::swap(a[static_cast<std::size_t>(store)], a[static_cast<std::size_t>(hi)]);
  return store;
}

int slot_index(ArgSlot s) {
  if (s == ArgSlot::None) throw PreconditionError("NONE does not name a pointer");
  return static_cast<int>(s) - 1;
}

}  // namespace

// ─── core.hpp helpers ────────────────────────────────

ArgTuple args_decode(int index) {
  if (index < 0 || index >= kNumArgTuples) {
    throw FormatError("argument index " + std::to_string(index) + " outside [0,64)");
  }
  return ArgTuple(static_cast<ArgSlot>(index / 16), static_cast<ArgSlot>((index / 4) % 4),
                  static_cast<ArgSlot>(index % 4));
}

std::string to_string(const ArgTuple& t) {
  std::string out;
  for (auto s : t.slots) {
    if (s == ArgSlot::None) continue;
    if (!out.empty()) out += ',';
    out += "P" + std::to_string(static_cast<int>(s));
  }
  return out;
}

std::string_view task_name(TaskId t) { return kTaskNames[static_cast<std::size_t>(t)]; }

std::optional<TaskId> parse_task(std::string_view name) {
  for (auto t : kAllTasks) {
    if (task_name(t) == name) return t;
  }
  return std::nullopt;
}

// ─── EnvState ────────────────────────────────────────

EnvState EnvState::make(std::vector<int> list, int p1, int p2, int p3, std::vector<RangeFrame> stack,
                        std::optional<int> registry) {
  EnvState env;
  env.list_ = std::move(list);
  env.ptr_ = {p1, p2, p3};
  env.stack_ = std::move(stack);
  env.registry_ = registry;
  env.validate();
  return env;
}

void EnvState::validate() const {
  const int n = size();
  if (n == 0) throw InvalidStateError("list must not be empty");
  for (int v : list_) {
    if (v < kMinValue || v > kMaxValue) {
      throw InvalidStateError("list value " + std::to_string(v) + " outside [0,10]");
    }
  }
  for (int i = 0; i < 3; ++i) {
    if (ptr_[static_cast<std::size_t>(i)] < 0 || ptr_[static_cast<std::size_t>(i)] >= n) {
      throw InvalidStateError("pointer p" + std::to_string(i + 1) + "=" +
                              std::to_string(ptr_[static_cast<std::size_t>(i)]) + " outside [0," +
                              std::to_string(n) + ")");
    }
  }
  for (const auto& f : stack_) {
    if (f.lo < 0 || f.lo > f.hi || f.hi >= n) {
      throw InvalidStateError("stack frame (" + std::to_string(f.lo) + "," + std::to_string(f.hi) +
                              ") invalid for length " + std::to_string(n));
    }
  }
  if (registry_ && (*registry_ < 0 || *registry_ >= n)) {
    throw InvalidStateError("registry " + std::to_string(*registry_) + " outside list");
  }
}

int EnvState::pointer(ArgSlot slot) const { return ptr_[static_cast<std::size_t>(slot_index(slot))]; }

bool EnvState::is_sorted() const { return std::is_sorted(list_.begin(), list_.end()); }

std::string EnvState::to_record() const {
  std::ostringstream out;
  out << "list=";
  for (std::size_t i = 0; i < list_.size(); ++i) out << (i ? "," : "") << list_[i];
  out << ";p=" << ptr_[0] << ',' << ptr_[1] << ',' << ptr_[2] << ";stack=";
  for (std::size_t i = 0; i < stack_.size(); ++i) out << (i ? "|" : "") << stack_[i].lo << ':' << stack_[i].hi;
  out << ";reg=";
  if (registry_) {
    out << *registry_;
  } else {
    out << '-';
  }
  return out.str();
}

EnvState EnvState::from_record(std::string_view record) {
  auto fields = split(record, ';');
  if (fields.size() != 4) throw FormatError("environment record needs 4 fields: " + std::string(record));
  auto value_of = [&](std::size_t i, std::string_view key) {
    auto f = fields[i];
    if (f.substr(0, key.size()) != key || f.size() <= key.size() || f[key.size()] != '=') {
      throw FormatError("expected field '" + std::string(key) + "=' in record");
    }
    return f.substr(key.size() + 1);
  };

  auto list = parse_int_list(value_of(0, "list"));

  auto ptrs = split(value_of(1, "p"), ',');
  if (ptrs.size() != 3) throw FormatError("pointer field needs three values");

  std::vector<RangeFrame> stack;
  auto stack_text = value_of(2, "stack");
  if (!stack_text.empty()) {
    for (auto frame : split(stack_text, '|')) {
      auto bounds = split(frame, ':');
      if (bounds.size() != 2) throw FormatError("stack frame must be lo:hi");
      stack.push_back({parse_int(bounds[0]), parse_int(bounds[1])});
    }
  }

  std::optional<int> registry;
  auto reg_text = value_of(3, "reg");
  if (reg_text != "-") registry = parse_int(reg_text);

  try {
    return make(std::move(list), parse_int(ptrs[0]), parse_int(ptrs[1]), parse_int(ptrs[2]), std::move(stack),
                registry);
  } catch (const InvalidStateError& e) {
    throw FormatError(std::string("record describes an invalid state: ") + e.what());
  }
}

std::vector<int> parse_int_list(std::string_view csv) {
  std::vector<int> values;
  if (csv.empty()) return values;
  for (auto part : split(csv, ',')) {
    while (!part.empty() && part.front() == ' ') part.remove_prefix(1);
    while (!part.empty() && part.back() == ' ') part.remove_suffix(1);
    values.push_back(parse_int(part));
  }
  return values;
}

// ─── Observation ─────────────────────────────────────

Observation observe(const EnvState& env) {
  const int n = env.size();
  const int p1 = env.p1(), p2 = env.p2(), p3 = env.p3();
  const int a1 = env.value_at(p1), a2 = env.value_at(p2), a3 = env.value_at(p3);
  auto flag = [](bool b) { return b ? 1.0 : 0.0; };
  return Observation{
      a1 / 10.0,
      a2 / 10.0,
      a3 / 10.0,
      flag(p1 == 0),
      flag(p1 == n - 1),
      flag(p2 == 0),
      flag(p2 == n - 1),
      flag(p3 == 0),
      flag(p3 == n - 1),
      flag(p1 == p2),
      flag(p1 == p3),
      flag(p2 == p3),
      flag(p1 < p2),
      flag(p3 < p2),
      flag(p1 <= p3),
      flag(a1 < a2),
      flag(a3 < a2),
      flag(env.stack().empty()),
      flag(!env.registry().has_value()),
      flag(env.registry().has_value() && *env.registry() == p1),
      flag(env.is_sorted()),
  };
}

// ─── Atomic actions ──────────────────────────────────

bool atomic_precondition(const EnvState& env, AtomicOp op, const ArgTuple& args) {
  const int n = env.size();
  const int p1 = env.p1(), p2 = env.p2(), p3 = env.p3();
  switch (op) {
    case AtomicOp::Stop:
      return true;
    case AtomicOp::SavePtr:
      return args.slots[0] != ArgSlot::None;
    case AtomicOp::LoadPtr:
      return args.slots[0] != ArgSlot::None && env.registry().has_value();
    case AtomicOp::Push:
      return (p1 + 1 < p2) || (p1 - 1 > 0 && p3 < p1 - 1);
    case AtomicOp::Pop:
      return !env.stack().empty();
    case AtomicOp::Swap:
      if (args.slots[0] == ArgSlot::None || args.slots[1] == ArgSlot::None) return false;
      return env.pointer(args.slots[0]) != env.pointer(args.slots[1]);
    case AtomicOp::PtrLeft:
    case AtomicOp::PtrRight: {
      if (args.empty()) return false;
      for (auto s : args.slots) {
        if (s == ArgSlot::None) continue;
        int pos = env.pointer(s);
        if (op == AtomicOp::PtrLeft ? pos == 0 : pos == n - 1) return false;
      }
      return true;
    }
  }
  return false;
}

EnvState apply_atomic(const EnvState& env, AtomicOp op, const ArgTuple& args) {
  if (!atomic_precondition(env, op, args)) {
    throw PreconditionError("atomic action not feasible (" + to_string(args) + ") on " + env.to_record());
  }
  EnvState next = env;
  auto& ptr = next.ptr_;
  switch (op) {
    case AtomicOp::Stop:
      break;
    case AtomicOp::SavePtr:
      next.registry_ = env.pointer(args.slots[0]);
      break;
    case AtomicOp::LoadPtr:
      ptr[static_cast<std::size_t>(slot_index(args.slots[0]))] = *env.registry();
      next.registry_.reset();
      break;
    case AtomicOp::Push: {
      const int p1 = ptr[0], p2 = ptr[1], p3 = ptr[2];
      if (p1 + 1 < p2) next.stack_.push_back({p1 + 1, p2});
      if (p1 - 1 > 0 && p3 < p1 - 1) next.stack_.push_back({p3, p1 - 1});
      break;
    }
    case AtomicOp::Pop: {
      auto frame = next.stack_.back();
      next.stack_.pop_back();
      ptr = {frame.lo, frame.hi, frame.lo};
      break;
    }
    case AtomicOp::Swap:
      std::swap(next.list_[static_cast<std::size_t>(env.pointer(args.slots[0]))],
                next.list_[static_cast<std::size_t>(env.pointer(args.slots[1]))]);
      break;
    case AtomicOp::PtrLeft:
    case AtomicOp::PtrRight: {
      const int step = op == AtomicOp::PtrLeft ? -1 : 1;
      std::array<bool, 3> moved{};
      for (auto s : args.slots) {
        if (s == ArgSlot::None) continue;
        auto i = static_cast<std::size_t>(slot_index(s));
        if (!moved[i]) ptr[i] += step;
        moved[i] = true;
      }
      break;
    }
  }
  return next;
}

// ─── Tasks ───────────────────────────────────────────

bool task_precondition(TaskId task, const EnvState& env) {
  const int n = env.size();
  const int p1 = env.p1(), p2 = env.p2(), p3 = env.p3();
  switch (task) {
    case TaskId::PartitionUpdate:
      // Non-strict p1 <= p3: the first loop iteration of partition has p1 == p3.
      return p1 <= p3 && p3 < p2 && env.registry().has_value();
    case TaskId::Partition:
      return env.registry().has_value() && *env.registry() == p1 && p1 == p3 && p1 < p2;
    case TaskId::QuicksortUpdate:
      return !env.stack().empty() && !env.registry().has_value();
    case TaskId::Quicksort:
      return p1 == 0 && p3 == 0 && p2 == n - 1 && env.stack().empty();
  }
  return false;
}

EnvState oracle_transform(TaskId task, const EnvState& input) {
  if (!task_precondition(task, input)) {
    throw PreconditionError("oracle: " + std::string(task_name(task)) + " precondition fails on " +
                            input.to_record());
  }
  EnvState out = input;
  auto& a = out.list_;
  auto& ptr = out.ptr_;
  switch (task) {
    case TaskId::PartitionUpdate: {
      auto& p1 = ptr[0];
      auto& p3 = ptr[2];
      if (a[static_cast<std::size_t>(p3)] < a[static_cast<std::size_t>(ptr[1])]) {
        std::swap(a[static_cast<std::size_t>(p1)], a[static_cast<std::size_t>(p3)]);
        ++p1;
      }
      ++p3;
      break;
    }
    case TaskId::Partition: {
      ptr[0] = lomuto(a, ptr[0], ptr[1]);
      ptr[2] = ptr[1];
      break;
    }
    case TaskId::QuicksortUpdate: {
      auto frame = out.stack_.back();
      out.stack_.pop_back();
      const int pivot = lomuto(a, frame.lo, frame.hi);
      ptr = {pivot, frame.hi, frame.lo};
      if (pivot + 1 < frame.hi) out.stack_.push_back({pivot + 1, frame.hi});
      if (pivot - 1 > 0 && frame.lo < pivot - 1) out.stack_.push_back({frame.lo, pivot - 1});
      out.registry_.reset();
      break;
    }
    case TaskId::Quicksort:
      std::sort(a.begin(), a.end());
      out.stack_.clear();
      out.registry_.reset();
      break;
  }
  return out;
}

int reward(TaskId task, const EnvState& input, const EnvState& output) {
  if (!task_precondition(task, input)) return 0;
  const EnvState expected = oracle_transform(task, input);
  if (task == TaskId::Quicksort) {
    bool ok = std::equal(expected.list().begin(), expected.list().end(), output.list().begin(),
                         output.list().end()) &&
              output.stack().empty() && !output.registry().has_value();
    return ok ? 1 : 0;
  }
  return expected == output ? 1 : 0;
}

EnvState sample_task_env(TaskId task, int length, std::mt19937_64& rng) {
  check_length(task, length);
  auto list = random_list(length, rng);
  switch (task) {
    case TaskId::Quicksort:
      return EnvState::make(std::move(list), 0, length - 1, 0);
    case TaskId::QuicksortUpdate: {
      std::vector<RangeFrame> stack;
      int frames = uniform_int(rng, 1, 2);
      for (int i = 0; i < frames; ++i) stack.push_back(random_frame(length, rng));
      int p1 = uniform_int(rng, 0, length - 1);
      int p2 = uniform_int(rng, 0, length - 1);
      int p3 = uniform_int(rng, 0, length - 1);
      return EnvState::make(std::move(list), p1, p2, p3, std::move(stack));
    }
    case TaskId::Partition: {
      auto range = random_frame(length, rng);
      auto stack = random_stack(length, rng);
      return EnvState::make(std::move(list), range.lo, range.hi, range.lo, std::move(stack), range.lo);
    }
    case TaskId::PartitionUpdate: {
      int p1 = 0, p2 = 0, p3 = 0;
      do {
        p1 = uniform_int(rng, 0, length - 1);
        p2 = uniform_int(rng, 0, length - 1);
        p3 = uniform_int(rng, 0, length - 1);
      } while (!(p1 <= p3 && p3 < p2));
      int registry = uniform_int(rng, 0, p1);
      auto stack = random_stack(length, rng);
      return EnvState::make(std::move(list), p1, p2, p3, std::move(stack), registry);
    }
  }
  throw PreconditionError("unknown task");
}

EnvState sample_any_env(int length, std::mt19937_64& rng) {
  if (length < 1) throw PreconditionError("length must be positive");
  auto list = random_list(length, rng);
  int p1 = uniform_int(rng, 0, length - 1);
  int p2 = uniform_int(rng, 0, length - 1);
  int p3 = uniform_int(rng, 0, length - 1);
  std::vector<RangeFrame> stack;
  int frames = uniform_int(rng, 0, 2);
  for (int i = 0; i < frames; ++i) {
    int lo = uniform_int(rng, 0, length - 1);
    stack.push_back({lo, uniform_int(rng, lo, length - 1)});
  }
  std::optional<int> registry;
  if (uniform_int(rng, 0, 1) == 1) registry = uniform_int(rng, 0, length - 1);
  return EnvState::make(std::move(list), p1, p2, p3, std::move(stack), registry);
}

}  // namespace argprog
