// argprog: train, evaluate and inspect recursive list-manipulation programs.
//
// Exit codes: 0 success, 1 runtime error, 2 usage or config error,
// 3 missing or unreadable checkpoint, 4 a check reported failures.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "argprog/config.hpp"
#include "argprog/expert.hpp"
#include "argprog/rng.hpp"
#include "argprog/trainer.hpp"

namespace fs = std::filesystem;
using namespace argprog;

namespace {

enum Exit : int { kOk = 0, kRuntime = 1, kUsage = 2, kNoCheckpoint = 3, kCheckFailed = 4 };

struct UsageError : Error {
  using Error::Error;
};

RunConfig read_config(const std::string& path) {
  if (path.empty()) return parse_config("");
  return load_config(path);
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

// Either the network from a checkpoint or the scripted expert.
struct LoadedPolicy {
  std::optional<ParameterSet> params;
  std::unique_ptr<PolicyModel> model;
};

LoadedPolicy load_policy(const std::string& kind, const std::string& checkpoint, const ProgramLibrary& lib) {
  LoadedPolicy loaded;
  if (kind == "expert") {
    loaded.model = std::make_unique<ScriptedExpertPolicy>(lib);
    return loaded;
  }
  if (kind != "network") throw UsageError("--policy must be network or expert");
  if (!fs::exists(checkpoint)) throw CheckpointError("checkpoint not found: " + checkpoint);
  loaded.params = checkpoint_load(checkpoint, lib).params;
  loaded.model = std::make_unique<NetworkPolicy>(*loaded.params);
  return loaded;
}

// Entry state of a program for a bare list: pointers spanning the list, and
// whatever stack/registry the program's precondition asks for.
EnvState entry_state(TaskId task, std::vector<int> list) {
  const int last = static_cast<int>(list.size()) - 1;
  switch (task) {
    case TaskId::PartitionUpdate:
    case TaskId::Partition:
      return EnvState::make(std::move(list), 0, last, 0, {}, 0);
    case TaskId::QuicksortUpdate:
      return EnvState::make(std::move(list), 0, last, 0, {{0, last}});
    case TaskId::Quicksort:
      return EnvState::make(std::move(list), 0, last, 0);
  }
  throw UsageError("unknown task");
}

std::string join(std::span<const int> xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::to_string(xs[i]);
  return out;
}

// ─── train ───────────────────────────────────────────

struct TrainArgs {
  std::string config;
  std::optional<int> iterations;
  std::optional<std::string> checkpoint;
  std::optional<std::string> metrics_dir;
  std::optional<std::string> trace_dir;
  std::optional<int> threads;
  std::string resume;
};

int cmd_train(const TrainArgs& args) {
  auto cfg = read_config(args.config);
  if (args.iterations) cfg.train.iterations = *args.iterations;
  if (args.checkpoint) cfg.checkpoint = *args.checkpoint;
  if (args.metrics_dir) cfg.metrics_dir = *args.metrics_dir;
  if (args.threads) cfg.train.threads = *args.threads;

  Trainer trainer(cfg.train, cfg.search);
  if (!args.resume.empty()) {
    if (!fs::exists(args.resume)) throw CheckpointError("checkpoint not found: " + args.resume);
    trainer.load_checkpoint(args.resume);
  }
  const fs::path dir = cfg.metrics_dir;
  auto metrics = open_output(dir / "metrics.csv");
  auto search_csv = open_output(dir / "search_stats.csv");
  std::ofstream progress;
  metrics << metrics_csv_header() << "\n";
  search_csv << search_stats_csv_header() << "\n";
  if (cfg.eval_every > 0) {
    progress = open_output(dir / "eval_progress.csv");
    progress << "iteration,program,length,accuracy\n";
  }

  const int first = trainer.iteration();
  for (int it = first; it < first + cfg.train.iterations; ++it) {
    const auto row = trainer.train_iteration();
    metrics << to_csv(row) << "\n" << std::flush;
    search_csv << to_csv(trainer.last_search_row()) << "\n" << std::flush;
    if (args.trace_dir) {
      for (std::size_t e = 0; e < trainer.last_traces().size(); ++e) {
        auto out = open_output(fs::path(*args.trace_dir) /
                               ("iter" + std::to_string(row.iteration) + "_ep" + std::to_string(e) + ".json"));
        out << trace_to_json(trainer.last_traces()[e], trainer.library()).dump(2) << "\n";
      }
    }
    std::fprintf(stderr, "iter %d %s %d/%d ema %.3f\n", row.iteration, std::string(task_name(row.task)).c_str(),
                 row.successes, row.episodes, row.ema);
    const int done = it - first + 1;
    if (cfg.eval_every > 0 && done % cfg.eval_every == 0) {
      const NetworkPolicy model(trainer.params());
      std::vector<TaskId> tasks;
      for (auto t : kAllTasks) {
        if (trainer.curriculum().stat(t).unlocked) tasks.push_back(t);
      }
      const int length[] = {cfg.train.eval_lengths.front()};
      for (const auto& r : evaluate_generalization(model, trainer.library(), cfg.search.caps, tasks, length,
                                                   cfg.train.eval_trials, cfg.train.seed)) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "%d,%s,%d,%.2f\n", row.iteration, std::string(task_name(r.task)).c_str(),
                      r.length, r.accuracy());
        progress << buf << std::flush;
      }
    }
    if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) trainer.save_checkpoint(cfg.checkpoint);
  }
  trainer.save_checkpoint(cfg.checkpoint);
  return kOk;
}

// ─── eval ────────────────────────────────────────────

int cmd_eval(const std::string& config, const std::string& checkpoint_override, const std::string& policy,
             const std::string& out_path, const std::vector<std::string>& task_names) {
  auto cfg = read_config(config);
  const std::string checkpoint = checkpoint_override.empty() ? cfg.checkpoint : checkpoint_override;
  const ProgramLibrary lib(cfg.train.library);
  auto loaded = load_policy(policy, checkpoint, lib);
  std::vector<TaskId> tasks;
  for (const auto& name : task_names) {
    auto t = parse_task(name);
    if (!t) throw UsageError("unknown program '" + name + "'");
    tasks.push_back(*t);
  }
  if (tasks.empty()) tasks.assign(kAllTasks.begin(), kAllTasks.end());
  const auto rows = evaluate_generalization(*loaded.model, lib, cfg.search.caps, tasks, cfg.train.eval_lengths,
                                            cfg.train.eval_trials, cfg.train.seed);
  const auto csv = accuracy_csv(rows);
  if (out_path.empty()) {
    std::cout << csv;
  } else {
    open_output(out_path) << csv;
  }
  return kOk;
}

// ─── run ─────────────────────────────────────────────

int cmd_run(const std::string& config, const std::string& checkpoint_override, const std::string& policy,
            const std::string& program, const std::string& list, const std::string& record) {
  auto cfg = read_config(config);
  const std::string checkpoint = checkpoint_override.empty() ? cfg.checkpoint : checkpoint_override;
  const auto task = parse_task(program);
  if (!task) throw UsageError("unknown program '" + program + "'");
  EnvState env;
  try {
    env = record.empty() ? entry_state(*task, parse_int_list(list)) : EnvState::from_record(record);
  } catch (const UsageError&) {
    throw;
  } catch (const Error& e) {
    throw UsageError(std::string("invalid input: ") + e.what());
  }
  if (!task_precondition(*task, env)) {
    throw UsageError("precondition of " + program + " does not hold on " + env.to_record());
  }
  const ProgramLibrary lib(cfg.train.library);
  auto loaded = load_policy(policy, checkpoint, lib);
  const auto result = execute_greedy(env, *task, *loaded.model, lib, cfg.search.caps);

  std::cout << program << " on " << env.to_record() << "\n";
  for (const auto& ev : result.trace) {
    std::cout << std::string(2 * static_cast<std::size_t>(ev.depth + 1), ' ') << lib.describe(ev.call) << "  -> "
              << ev.env_after.to_record() << "\n";
  }
  if (!result.diagnostic.empty()) std::cout << "note: " << result.diagnostic << "\n";
  std::cout << "final list " << join(result.final_env.list()) << "\n";
  std::cout << "reward " << result.reward << "\n";
  return kOk;
}

// ─── oracle-check ────────────────────────────────────

int cmd_oracle_check(int trials, std::uint64_t seed, const std::vector<int>& lengths) {
  const ProgramLibrary lib(LibraryMode::Args);
  const StepCaps caps;
  bool all_ok = true;
  for (auto task : kAllTasks) {
    int passed = 0;
    int total = 0;
    std::string first_failure;
    for (int length : lengths) {
      std::mt19937_64 rng(derive_seed(seed, {static_cast<std::uint64_t>(task_index(task)),
                                             static_cast<std::uint64_t>(length)}));
      for (int t = 0; t < trials; ++t) {
        const auto env = sample_task_env(task, length, rng);
        ++total;
        try {
          if (run_expert(task, env, lib, caps).reward == 1) {
            ++passed;
            continue;
          }
          if (first_failure.empty()) first_failure = "reward 0 on " + env.to_record();
        } catch (const Error& e) {
          if (first_failure.empty()) first_failure = e.what();
        }
      }
    }
    const bool ok = passed == total;
    all_ok = all_ok && ok;
    std::cout << (ok ? "PASS " : "FAIL ") << task_name(task) << " " << passed << "/" << total;
    if (!ok) std::cout << "  first failure: " << first_failure;
    std::cout << "\n";
  }
  return all_ok ? kOk : kCheckFailed;
}

// ─── search-bench ────────────────────────────────────

int cmd_search_bench(const std::string& config, const std::string& task_name_arg, int sims, int n_expand, int runs,
                     int length, const std::string& checkpoint, const std::string& out_path) {
  auto cfg = read_config(config);
  const auto task = parse_task(task_name_arg);
  if (!task) throw UsageError("unknown program '" + task_name_arg + "'");
  const ProgramLibrary lib(cfg.train.library);
  std::optional<ParameterSet> params;
  if (checkpoint.empty()) {
    params = init_params(cfg.train.seed, NetworkShape::for_library(lib, cfg.train.encoder_dim,
                                                                   cfg.train.embedding_dim, cfg.train.hidden_dim));
  } else {
    if (!fs::exists(checkpoint)) throw CheckpointError("checkpoint not found: " + checkpoint);
    params = checkpoint_load(checkpoint, lib).params;
  }
  const NetworkPolicy model(*params);

  std::string csv = "seed,task,length,simulations,n_expand,min_branching,exact_nodes,approx_nodes\n";
  bool all_ok = true;
  for (int run = 0; run < runs; ++run) {
    const auto seed = derive_seed(cfg.train.seed, {0xbe7c, static_cast<std::uint64_t>(run)});
    std::mt19937_64 env_rng(seed);
    const auto env = sample_task_env(*task, length, env_rng);
    std::uint64_t nodes[2] = {0, 0};
    int min_branching = 0;
    for (int m = 0; m < 2; ++m) {
      SearchConfig sc = cfg.search;
      sc.mode = m == 0 ? ExpansionMode::Exact : ExpansionMode::Approx;
      sc.simulations = sims;
      sc.n_expand = n_expand;
      const auto result = run_training_episode(*task, env, model, lib, sc, seed);
      nodes[m] = result.stats.nodes_expanded;
      if (m == 0) min_branching = result.stats.min_branching;
    }
    all_ok = all_ok && nodes[1] <= nodes[0];
    csv += std::to_string(seed) + "," + std::string(task_name(*task)) + "," + std::to_string(length) + "," +
           std::to_string(sims) + "," + std::to_string(n_expand) + "," + std::to_string(min_branching) + "," +
           std::to_string(nodes[0]) + "," + std::to_string(nodes[1]) + "\n";
  }
  if (out_path.empty()) {
    std::cout << csv;
  } else {
    open_output(out_path) << csv;
  }
  return all_ok ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train and inspect recursive list-manipulation programs found by tree search"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "run the curriculum training loop");
  train->add_option("-c,--config", train_args.config, "config file (key = value lines)");
  train->add_option("--iterations", train_args.iterations, "override the iteration count");
  train->add_option("--checkpoint", train_args.checkpoint, "checkpoint output path");
  train->add_option("--metrics-dir", train_args.metrics_dir, "directory for metrics CSV files");
  train->add_option("--trace-dir", train_args.trace_dir, "write every episode trace as JSON here");
  train->add_option("--threads", train_args.threads, "episode worker threads");
  train->add_option("--resume", train_args.resume, "start from this checkpoint");

  std::string config, checkpoint, policy = "network", out;
  std::vector<std::string> programs;
  auto* eval = app.add_subcommand("eval", "generalization grid of greedy accuracy");
  eval->add_option("-c,--config", config, "config file");
  eval->add_option("--checkpoint", checkpoint, "checkpoint to evaluate (default: from config)");
  eval->add_option("--policy", policy, "network or expert")->check(CLI::IsMember({"network", "expert"}));
  eval->add_option("--program", programs, "restrict to these programs");
  eval->add_option("-o,--out", out, "accuracy CSV path (default: stdout)");

  std::string program, list, record;
  auto* run = app.add_subcommand("run", "execute one program greedily and print its call trace");
  run->add_option("-c,--config", config, "config file");
  run->add_option("--checkpoint", checkpoint, "checkpoint (default: from config)");
  run->add_option("--policy", policy, "network or expert")->check(CLI::IsMember({"network", "expert"}));
  run->add_option("--program", program, "program name")->required();
  auto* list_opt = run->add_option("--list", list, "comma-separated values in 0..10");
  auto* env_opt = run->add_option("--env", record, "full environment record instead of a list");
  list_opt->excludes(env_opt);

  int trials = 200;
  std::uint64_t seed = 1;
  std::vector<int> lengths{2, 3, 4, 5, 6, 7, 20};
  auto* oracle = app.add_subcommand("oracle-check", "run the hand-written programs on random environments");
  oracle->add_option("--trials", trials, "environments per program and length")->check(CLI::PositiveNumber);
  oracle->add_option("--seed", seed, "sampling seed");
  oracle->add_option("--lengths", lengths, "list lengths")->delimiter(',')->check(CLI::Range(kMinLength, kMaxLength));

  std::string bench_task = "partition_update";
  int sims = 100, n_expand = 5, runs = 20, length = 5;
  auto* bench = app.add_subcommand("search-bench", "compare node counts of exact and approximate expansion");
  bench->add_option("-c,--config", config, "config file");
  bench->add_option("--task", bench_task, "program to search");
  bench->add_option("--sims", sims, "simulations per search")->check(CLI::PositiveNumber);
  bench->add_option("--n", n_expand, "children per approximate expansion")->check(CLI::PositiveNumber);
  bench->add_option("--runs", runs, "matched-seed runs")->check(CLI::PositiveNumber);
  bench->add_option("--length", length, "list length")->check(CLI::Range(kMinLength, kMaxLength));
  bench->add_option("--checkpoint", checkpoint, "network weights (default: seeded initialization)");
  bench->add_option("-o,--out", out, "CSV path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(train_args);
    if (*eval) return cmd_eval(config, checkpoint, policy, out, programs);
    if (*run) {
      if (list.empty() && record.empty()) throw UsageError("run needs --list or --env");
      return cmd_run(config, checkpoint, policy, program, list, record);
    }
    if (*oracle) return cmd_oracle_check(trials, seed, lengths);
    if (*bench) return cmd_search_bench(config, bench_task, sims, n_expand, runs, length, checkpoint, out);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kNoCheckpoint;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
