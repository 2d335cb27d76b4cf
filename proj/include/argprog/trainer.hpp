#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "argprog/search.hpp"

namespace argprog {

struct TrainConfig {
  std::uint64_t seed = 42;
  LibraryMode library = LibraryMode::Args;
  int episodes_per_iteration = 20;
  int batch_size = 64;
  int iterations = 200;
  int gradient_steps = 2;
  double epsilon = 0.2;  // chance of replaying a previously failed env
  double unlock_threshold = 0.9;
  double ema_decay = 0.95;
  int replay_capacity = 2000;
  int failed_capacity = 200;  // per task
  int min_length = 2;
  int max_length = 7;
  std::vector<int> eval_lengths{5, 10, 20, 40, 60};
  int eval_trials = 50;
  TaskId max_task = TaskId::Quicksort;  // highest task the curriculum may unlock
  bool value_on_failures = false;
  int threads = 1;
  bool wall_clock = true;  // false writes wall_ms as 0 so metrics files compare byte-for-byte
  int encoder_dim = 64;
  int embedding_dim = 32;
  int hidden_dim = 128;
  AdamConfig adam;
};

// ─── Traces ──────────────────────────────────────────

struct TraceRecord {
  TaskId task = TaskId::PartitionUpdate;
  EnvState input;
  EnvState output;
  std::vector<EpisodeStep> steps;
  int reward = 0;
  bool value_only = false;      // failed episode kept only as a value target
  TrainingSequence sequence;    // network-facing view, built once
};

[[nodiscard]] TraceRecord make_trace_record(EpisodeRun run, bool value_only = false);

// Re-executes the recorded calls from the input and recomputes the reward.
// Atomic calls are re-applied; sub-program calls are accepted iff their
// recorded effect earns reward 1 for that sub-program.
[[nodiscard]] int replay_trace(const TraceRecord& record, const ProgramLibrary& lib);

[[nodiscard]] nlohmann::json trace_to_json(const TraceRecord& record, const ProgramLibrary& lib);

// ─── Buffers ─────────────────────────────────────────

// FIFO of successful traces.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

  // Throws PreconditionError for anything but a reward-1 record.
  void push(TraceRecord record);
  // Uniform draws with replacement; empty when the buffer is empty.
  [[nodiscard]] std::vector<const TraceRecord*> sample(std::size_t k, std::mt19937_64& rng) const;

  [[nodiscard]] std::size_t size() const { return records_.size(); }
  [[nodiscard]] bool empty() const { return records_.empty(); }
  [[nodiscard]] std::size_t capacity() const { return capacity_; }
  [[nodiscard]] const TraceRecord& at(std::size_t i) const { return records_.at(i); }

 private:
  std::size_t capacity_;
  std::deque<TraceRecord> records_;
};

// Per-task FIFO of environments the agent failed on, with failure counts.
class FailedEnvBuffer {
 public:
  struct Entry {
    EnvState env;
    int failures = 0;
  };

  explicit FailedEnvBuffer(std::size_t capacity_per_task) : capacity_(capacity_per_task) {}

  void record_failure(TaskId task, const EnvState& env);
  // A later success drops the env, so the buffer holds only unsolved inputs.
  void record_success(TaskId task, const EnvState& env);
  // Draw proportional to failure count; nullopt when the task's buffer is empty.
  [[nodiscard]] std::optional<EnvState> sample(TaskId task, std::mt19937_64& rng) const;

  [[nodiscard]] const std::deque<Entry>& entries(TaskId task) const { return per_task_[task_index(task)]; }
  [[nodiscard]] std::size_t size() const;

 private:
  std::size_t capacity_;
  std::array<std::deque<Entry>, kNumTasks> per_task_;
};

// ─── Curriculum ──────────────────────────────────────

struct TaskStat {
  double ema = 0.0;
  std::uint64_t attempts = 0;
  bool unlocked = false;
};

// Lower-level programs first; tasks that fail often are drawn more often.
class Curriculum {
 public:
  Curriculum(double ema_decay, double unlock_threshold, TaskId max_task = TaskId::Quicksort);

  [[nodiscard]] TaskId select(std::mt19937_64& rng) const;
  [[nodiscard]] double probability(TaskId task) const;

  void update(TaskId task, double success_rate);
  void set_ema(TaskId task, double ema);

  [[nodiscard]] const TaskStat& stat(TaskId task) const { return stats_[task_index(task)]; }

 private:
  void refresh_unlocks();

  double decay_;
  double threshold_;
  TaskId max_task_;
  std::array<TaskStat, kNumTasks> stats_{};
};

// With probability epsilon (and a non-empty buffer) a failed env, otherwise
// a fresh sample at a uniform training length.
[[nodiscard]] EnvState sample_initial_env(TaskId task, const FailedEnvBuffer& failed, const TrainConfig& cfg,
                                          std::mt19937_64& rng);

// ─── Episodes and iterations ─────────────────────────

struct EpisodeResult {
  TraceRecord record;
  SearchStats stats;
  std::string error;  // non-empty if the search threw; the episode then counts as r=0
};

// One training episode against a fixed parameter snapshot.
[[nodiscard]] EpisodeResult run_training_episode(TaskId task, const EnvState& input, const PolicyModel& model,
                                                 const ProgramLibrary& lib, const SearchConfig& search,
                                                 std::uint64_t seed);

struct MetricsRow {
  int iteration = 0;
  TaskId task = TaskId::PartitionUpdate;
  std::string mode;
  int episodes = 0;
  int successes = 0;
  double ema = 0.0;
  std::optional<double> loss;  // absent when no gradient step ran
  std::uint64_t nodes_expanded_cum = 0;
  std::int64_t wall_ms = 0;
};

struct SearchStatsRow {
  int iteration = 0;
  TaskId task = TaskId::PartitionUpdate;
  std::string mode;
  std::uint64_t simulations = 0;
  std::uint64_t nodes_expanded = 0;
  int max_depth = 0;
};

[[nodiscard]] std::string metrics_csv_header();
[[nodiscard]] std::string to_csv(const MetricsRow& row);
[[nodiscard]] std::string search_stats_csv_header();
[[nodiscard]] std::string to_csv(const SearchStatsRow& row);

// "args+exact" and friends.
[[nodiscard]] std::string variant_name(LibraryMode library, ExpansionMode mode);

class Trainer {
 public:
  Trainer(TrainConfig cfg, SearchConfig search);

  MetricsRow train_iteration();

  void save_checkpoint(const std::filesystem::path& path) const;
  void load_checkpoint(const std::filesystem::path& path);

  [[nodiscard]] const ProgramLibrary& library() const { return lib_; }
  [[nodiscard]] const ParameterSet& params() const { return params_; }
  [[nodiscard]] const Curriculum& curriculum() const { return curriculum_; }
  [[nodiscard]] const ReplayBuffer& replay() const { return replay_; }
  [[nodiscard]] const FailedEnvBuffer& failed() const { return failed_; }
  [[nodiscard]] const TrainConfig& config() const { return cfg_; }
  [[nodiscard]] const SearchConfig& search_config() const { return search_; }
  [[nodiscard]] int iteration() const { return iteration_; }
  [[nodiscard]] const SearchStats& cumulative_stats() const { return total_stats_; }
  [[nodiscard]] const SearchStatsRow& last_search_row() const { return last_search_row_; }
  // Traces from the most recent iteration, successes and failures alike.
  [[nodiscard]] const std::vector<TraceRecord>& last_traces() const { return last_traces_; }

 private:
  std::vector<EpisodeResult> run_episodes(TaskId task, const std::vector<EnvState>& inputs);

  TrainConfig cfg_;
  SearchConfig search_;
  ProgramLibrary lib_;
  ParameterSet params_;
  AdamState adam_;
  Curriculum curriculum_;
  ReplayBuffer replay_;
  FailedEnvBuffer failed_;
  std::deque<TraceRecord> value_only_;
  std::mt19937_64 rng_;
  int iteration_ = 0;
  SearchStats total_stats_;
  SearchStatsRow last_search_row_;
  std::vector<TraceRecord> last_traces_;
};

// ─── Evaluation ──────────────────────────────────────

struct AccuracyRow {
  TaskId task = TaskId::PartitionUpdate;
  int length = 0;
  int trials = 0;
  int successes = 0;
  [[nodiscard]] double accuracy() const { return trials > 0 ? static_cast<double>(successes) / trials : 0.0; }
};

// Greedy execution on `trials` fresh envs per (task, length). Envs depend only
// on (seed, task, length, trial), so different models see the same lists.
[[nodiscard]] std::vector<AccuracyRow> evaluate_generalization(const PolicyModel& model, const ProgramLibrary& lib,
                                                               const StepCaps& caps, std::span<const TaskId> tasks,
                                                               std::span<const int> lengths, int trials,
                                                               std::uint64_t seed);

// program,length,accuracy with two decimals.
[[nodiscard]] std::string accuracy_csv(std::span<const AccuracyRow> rows);

}  // namespace argprog
