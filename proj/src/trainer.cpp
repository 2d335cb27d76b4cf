#include "argprog/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <thread>

#include "argprog/rng.hpp"

namespace argprog {

// ─── Traces ──────────────────────────────────────────

TraceRecord make_trace_record(EpisodeRun run, bool value_only) {
  TraceRecord record;
  record.task = run.task;
  record.input = std::move(run.input);
  record.output = std::move(run.output);
  record.reward = run.reward;
  record.value_only = value_only;
  record.sequence.task = task_index(run.task);
  record.sequence.reward = static_cast<double>(run.reward);
  record.sequence.steps.reserve(run.steps.size());
  for (const auto& step : run.steps) {
    TrainingStep ts;
    ts.observation = step.observation;
    if (value_only) {
      // Zero targets: the cross-entropy terms vanish, only (V - r)^2 remains.
      ts.program_target.assign(step.program_policy.size(), 0.0);
      ts.arg_target.assign(step.arg_policy.size(), 0.0);
    } else {
      ts.program_target = step.program_policy;
      ts.arg_target = step.arg_policy;
    }
    record.sequence.steps.push_back(std::move(ts));
  }
  record.steps = std::move(run.steps);
  return record;
}

int replay_trace(const TraceRecord& record, const ProgramLibrary& lib) {
  if (!task_precondition(record.task, record.input)) return 0;
  const int level = lib.at(lib.index_of(record.task)).level;
  EnvState env = record.input;
  for (const auto& step : record.steps) {
    const auto& program = lib.at(step.call.program);
    if (program.level >= level || !call_feasible(env, step.call, lib)) return 0;
    if (program.atomic() && program.op == AtomicOp::Stop) return reward(record.task, record.input, env);
    if (program.atomic()) {
      env = apply_call(env, step.call, lib);
      if (!(env == step.env_after)) return 0;
      continue;
    }
    if (reward(*program.task, env, step.env_after) != 1) return 0;
    env = step.env_after;
  }
  return 0;  // no stop
}

nlohmann::json trace_to_json(const TraceRecord& record, const ProgramLibrary& lib) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& step : record.steps) {
    nlohmann::json args = nlohmann::json::array();
    for (auto slot : step.call.args.slots) {
      if (slot != ArgSlot::None) args.push_back("P" + std::to_string(static_cast<int>(slot)));
    }
    steps.push_back({{"call", lib.describe(step.call)},
                     {"program", lib.at(step.call.program).name},
                     {"args", args},
                     {"program_policy", step.program_policy},
                     {"arg_policy", step.arg_policy},
                     {"env_after", step.env_after.to_record()}});
  }
  return {{"task", task_name(record.task)},
          {"input", record.input.to_record()},
          {"steps", steps},
          {"output", record.output.to_record()},
          {"reward", record.reward}};
}

// ─── Buffers ─────────────────────────────────────────

void ReplayBuffer::push(TraceRecord record) {
  if (record.reward != 1) throw PreconditionError("replay buffer only stores successful traces");
  if (capacity_ == 0) return;
  if (records_.size() == capacity_) records_.pop_front();
  records_.push_back(std::move(record));
}

std::vector<const TraceRecord*> ReplayBuffer::sample(std::size_t k, std::mt19937_64& rng) const {
  std::vector<const TraceRecord*> out;
  if (records_.empty()) return out;
  std::uniform_int_distribution<std::size_t> pick(0, records_.size() - 1);
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(&records_[pick(rng)]);
  return out;
}

void FailedEnvBuffer::record_failure(TaskId task, const EnvState& env) {
  auto& entries = per_task_[task_index(task)];
  for (auto& e : entries) {
    if (e.env == env) {
      e.failures += 1;
      return;
    }
  }
  if (capacity_ == 0) return;
  if (entries.size() == capacity_) entries.pop_front();
  entries.push_back({env, 1});
}

void FailedEnvBuffer::record_success(TaskId task, const EnvState& env) {
  auto& entries = per_task_[task_index(task)];
  std::erase_if(entries, [&](const Entry& e) { return e.env == env; });
}

std::optional<EnvState> FailedEnvBuffer::sample(TaskId task, std::mt19937_64& rng) const {
  const auto& entries = per_task_[task_index(task)];
  if (entries.empty()) return std::nullopt;
  std::vector<double> weights;
  weights.reserve(entries.size());
  for (const auto& e : entries) weights.push_back(e.failures);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  return entries[pick(rng)].env;
}

std::size_t FailedEnvBuffer::size() const {
  std::size_t n = 0;
  for (const auto& q : per_task_) n += q.size();
  return n;
}

// ─── Curriculum ──────────────────────────────────────

Curriculum::Curriculum(double ema_decay, double unlock_threshold, TaskId max_task)
    : decay_(ema_decay), threshold_(unlock_threshold), max_task_(max_task) {
  stats_[task_index(TaskId::PartitionUpdate)].unlocked = true;
  refresh_unlocks();
}

void Curriculum::refresh_unlocks() {
  // Tasks are indexed by level, and a program may call everything below it.
  for (int t = 1; t <= task_index(max_task_); ++t) {
    bool ready = true;
    for (int lower = 0; lower < t; ++lower) ready = ready && stats_[lower].ema >= threshold_;
    if (ready) stats_[t].unlocked = true;
  }
}

double Curriculum::probability(TaskId task) const {
  double total = 0.0;
  for (const auto& s : stats_) {
    if (s.unlocked) total += 1.0 - s.ema + 0.1;
  }
  const auto& s = stats_[task_index(task)];
  return s.unlocked ? (1.0 - s.ema + 0.1) / total : 0.0;
}

TaskId Curriculum::select(std::mt19937_64& rng) const {
  std::array<double, kNumTasks> weights{};
  for (int t = 0; t < kNumTasks; ++t) weights[t] = stats_[t].unlocked ? 1.0 - stats_[t].ema + 0.1 : 0.0;
  std::discrete_distribution<int> pick(weights.begin(), weights.end());
  return kAllTasks[pick(rng)];
}

void Curriculum::update(TaskId task, double success_rate) {
  auto& s = stats_[task_index(task)];
  s.ema = std::clamp(decay_ * s.ema + (1.0 - decay_) * success_rate, 0.0, 1.0);
  s.attempts += 1;
  refresh_unlocks();
}

void Curriculum::set_ema(TaskId task, double ema) {
  stats_[task_index(task)].ema = std::clamp(ema, 0.0, 1.0);
  refresh_unlocks();
}

EnvState sample_initial_env(TaskId task, const FailedEnvBuffer& failed, const TrainConfig& cfg,
                            std::mt19937_64& rng) {
  if (cfg.epsilon > 0.0 && !failed.entries(task).empty()) {
    if (std::bernoulli_distribution(std::min(cfg.epsilon, 1.0))(rng)) return *failed.sample(task, rng);
  }
  const int length = std::uniform_int_distribution<int>(cfg.min_length, cfg.max_length)(rng);
  return sample_task_env(task, length, rng);
}

// ─── Episodes ────────────────────────────────────────

EpisodeResult run_training_episode(TaskId task, const EnvState& input, const PolicyModel& model,
                                   const ProgramLibrary& lib, const SearchConfig& search, std::uint64_t seed) {
  EpisodeResult result;
  std::mt19937_64 rng(seed);
  SearchEngine engine(lib, model, search, result.stats, derive_seed(seed, {0x5eed}));
  try {
    result.record = make_trace_record(engine.run_episode(task, input, /*training=*/true, rng));
  } catch (const Error& e) {
    result.error = e.what();
    result.record = TraceRecord{};
    result.record.task = task;
    result.record.input = input;
    result.record.output = input;
    result.record.sequence.task = task_index(task);
  }
  return result;
}

std::string variant_name(LibraryMode library, ExpansionMode mode) {
  return std::string(mode_name(library)) + "+" + std::string(expansion_mode_name(mode));
}

namespace {

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

}  // namespace

std::string metrics_csv_header() {
  return "iteration,task,mode,episodes,successes,ema,loss,nodes_expanded_cum,wall_ms";
}

std::string to_csv(const MetricsRow& row) {
  std::string out;
  out += std::to_string(row.iteration) + ",";
  out += std::string(task_name(row.task)) + ",";
  out += row.mode + ",";
  out += std::to_string(row.episodes) + ",";
  out += std::to_string(row.successes) + ",";
  out += fmt("%.6f", row.ema) + ",";
  out += (row.loss ? fmt("%.6f", *row.loss) : std::string("nan")) + ",";
  out += std::to_string(row.nodes_expanded_cum) + ",";
  out += std::to_string(row.wall_ms);
  return out;
}

std::string search_stats_csv_header() { return "iteration,task,mode,simulations,nodes_expanded,max_depth"; }

std::string to_csv(const SearchStatsRow& row) {
  return std::to_string(row.iteration) + "," + std::string(task_name(row.task)) + "," + row.mode + "," +
         std::to_string(row.simulations) + "," + std::to_string(row.nodes_expanded) + "," +
         std::to_string(row.max_depth);
}

// ─── Trainer ─────────────────────────────────────────

Trainer::Trainer(TrainConfig cfg, SearchConfig search)
    : cfg_(std::move(cfg)),
      search_(search),
      lib_(cfg_.library),
      params_(init_params(derive_seed(cfg_.seed, {0x1417}),
                          NetworkShape::for_library(lib_, cfg_.encoder_dim, cfg_.embedding_dim, cfg_.hidden_dim))),
      adam_(AdamState::for_params(params_)),
      curriculum_(cfg_.ema_decay, cfg_.unlock_threshold, cfg_.max_task),
      replay_(static_cast<std::size_t>(cfg_.replay_capacity)),
      failed_(static_cast<std::size_t>(cfg_.failed_capacity)),
      rng_(derive_seed(cfg_.seed, {0x7a1})) {
  if (cfg_.episodes_per_iteration < 1 || cfg_.batch_size < 1 || cfg_.gradient_steps < 0) {
    throw PreconditionError("trainer: episode, batch and step counts must be positive");
  }
  if (cfg_.min_length < kMinLength || cfg_.max_length > kMaxLength || cfg_.min_length > cfg_.max_length) {
    throw PreconditionError("trainer: training lengths must lie in [2, 60] with min <= max");
  }
}

std::vector<EpisodeResult> Trainer::run_episodes(TaskId task, const std::vector<EnvState>& inputs) {
  // Parameters are read-only for the whole phase; each episode owns its RNG,
  // statistics and recursion cache, so threads share nothing mutable.
  std::vector<EpisodeResult> results(inputs.size());
  const NetworkPolicy model(params_);
  auto run_one = [&](std::size_t e) {
    const auto seed = derive_seed(cfg_.seed, {static_cast<std::uint64_t>(iteration_), e});
    results[e] = run_training_episode(task, inputs[e], model, lib_, search_, seed);
  };
  const auto workers = static_cast<std::size_t>(std::max(1, cfg_.threads));
  if (workers == 1 || inputs.size() == 1) {
    for (std::size_t e = 0; e < inputs.size(); ++e) run_one(e);
    return results;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, inputs.size()); ++w) {
    pool.emplace_back([&] {
      for (std::size_t e = next++; e < inputs.size(); e = next++) run_one(e);
    });
  }
  for (auto& t : pool) t.join();
  return results;
}

MetricsRow Trainer::train_iteration() {
  const auto start = std::chrono::steady_clock::now();
  const TaskId task = curriculum_.select(rng_);

  std::vector<EnvState> inputs;
  inputs.reserve(static_cast<std::size_t>(cfg_.episodes_per_iteration));
  for (int e = 0; e < cfg_.episodes_per_iteration; ++e) inputs.push_back(sample_initial_env(task, failed_, cfg_, rng_));

  auto results = run_episodes(task, inputs);

  // Commit phase, in episode order.
  SearchStats iteration_stats;
  int successes = 0;
  last_traces_.clear();
  for (auto& result : results) {
    iteration_stats.merge(result.stats);
    auto& record = result.record;
    last_traces_.push_back(record);
    if (record.reward == 1) {
      ++successes;
      failed_.record_success(task, record.input);
      replay_.push(std::move(record));
    } else {
      failed_.record_failure(task, record.input);
      if (cfg_.value_on_failures && !record.steps.empty()) {
        EpisodeRun run{record.task, record.input, record.output, std::move(record.steps), 0, false, false};
        if (value_only_.size() == static_cast<std::size_t>(cfg_.replay_capacity)) value_only_.pop_front();
        value_only_.push_back(make_trace_record(std::move(run), /*value_only=*/true));
      }
    }
  }
  total_stats_.merge(iteration_stats);

  std::optional<double> mean_loss;
  if (!replay_.empty()) {
    double sum = 0.0;
    for (int k = 0; k < cfg_.gradient_steps; ++k) {
      auto records = replay_.sample(static_cast<std::size_t>(cfg_.batch_size), rng_);
      std::vector<const TrainingSequence*> batch;
      batch.reserve(records.size());
      for (const auto* r : records) batch.push_back(&r->sequence);
      if (!value_only_.empty()) {
        // A quarter-batch of failure traces, value head only.
        std::uniform_int_distribution<std::size_t> pick(0, value_only_.size() - 1);
        for (int i = 0; i < std::max(1, cfg_.batch_size / 4); ++i) batch.push_back(&value_only_[pick(rng_)].sequence);
      }
      sum += train_step(params_, adam_, batch, cfg_.adam);
    }
    if (cfg_.gradient_steps > 0) mean_loss = sum / cfg_.gradient_steps;

    std::uniform_int_distribution<std::size_t> pick(0, replay_.size() - 1);
    const auto& probe = replay_.at(pick(rng_));
    if (replay_trace(probe, lib_) != probe.reward) {
      throw Error("replay check failed for a stored " + std::string(task_name(probe.task)) + " trace on " +
                  probe.input.to_record());
    }
  }

  const double rate = static_cast<double>(successes) / cfg_.episodes_per_iteration;
  curriculum_.update(task, rate);

  MetricsRow row;
  row.iteration = iteration_;
  row.task = task;
  row.mode = variant_name(cfg_.library, search_.mode);
  row.episodes = cfg_.episodes_per_iteration;
  row.successes = successes;
  row.ema = curriculum_.stat(task).ema;
  row.loss = mean_loss;
  row.nodes_expanded_cum = total_stats_.nodes_expanded;
  if (cfg_.wall_clock) {
    row.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start)
                      .count();
  }

  last_search_row_ = {iteration_, task, row.mode, iteration_stats.simulations, iteration_stats.nodes_expanded,
                      iteration_stats.max_depth};
  ++iteration_;
  return row;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  checkpoint_save(path, params_, adam_, lib_, static_cast<std::uint64_t>(iteration_));
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  auto ckpt = checkpoint_load(path, lib_);
  if (!(ckpt.params.shape() == params_.shape())) throw CheckpointError("checkpoint network shape differs from config");
  params_ = std::move(ckpt.params);
  adam_ = std::move(ckpt.optimizer);
  iteration_ = static_cast<int>(ckpt.iteration);
}

// ─── Evaluation ──────────────────────────────────────

std::vector<AccuracyRow> evaluate_generalization(const PolicyModel& model, const ProgramLibrary& lib,
                                                 const StepCaps& caps, std::span<const TaskId> tasks,
                                                 std::span<const int> lengths, int trials, std::uint64_t seed) {
  std::vector<AccuracyRow> rows;
  for (auto task : tasks) {
    for (int length : lengths) {
      AccuracyRow row{task, length, trials, 0};
      for (int trial = 0; trial < trials; ++trial) {
        std::mt19937_64 rng(derive_seed(seed, {static_cast<std::uint64_t>(task_index(task)),
                                               static_cast<std::uint64_t>(length), static_cast<std::uint64_t>(trial)}));
        const auto env = sample_task_env(task, length, rng);
        try {
          row.successes += execute_greedy(env, task, model, lib, caps).reward;
        } catch (const Error&) {
          // an untrained model may wander into a state no program can leave; that is a miss
        }
      }
      rows.push_back(row);
    }
  }
  return rows;
}

std::string accuracy_csv(std::span<const AccuracyRow> rows) {
  std::string out = "program,length,accuracy\n";
  for (const auto& r : rows) {
    out += std::string(task_name(r.task)) + "," + std::to_string(r.length) + "," + fmt("%.2f", r.accuracy()) + "\n";
  }
  return out;
}

}  // namespace argprog
