#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "argprog/environment.hpp"
#include "argprog/programs.hpp"

namespace argprog {

class CheckpointError : public Error {
 public:
  using Error::Error;
};

struct NetworkShape {
  int observation = kObservationSize;
  int encoder = 64;
  int embedding = 32;
  int hidden = 128;
  int programs = 0;
  int tasks = kNumTasks;
  int args = kNumArgTuples;

  static NetworkShape for_library(const ProgramLibrary& lib, int encoder = 64, int embedding = 32, int hidden = 128) {
    NetworkShape s;
    s.encoder = encoder;
    s.embedding = embedding;
    s.hidden = hidden;
    s.programs = lib.size();
    return s;
  }
  bool operator==(const NetworkShape&) const = default;
};

// LSTM cell and output vectors; zero at every program entry.
struct HiddenState {
  Eigen::VectorXd h;
  Eigen::VectorXd c;

  static HiddenState zeros(int size) { return {Eigen::VectorXd::Zero(size), Eigen::VectorXd::Zero(size)}; }
};

struct PolicyOutput {
  Eigen::VectorXd program_probs;  // over the whole library
  Eigen::VectorXd arg_probs;      // over the 64 argument indices
  double value = 0.0;             // logistic, in [0,1]
  HiddenState hidden;
};

// All weights of the encoder / program matrix / LSTM core / three heads.
// Biases are stored as single-column matrices so every group is a MatrixXd.
class ParameterSet {
 public:
  ParameterSet() = default;
  explicit ParameterSet(const NetworkShape& shape);  // all zeros

  [[nodiscard]] const NetworkShape& shape() const { return shape_; }

  Eigen::MatrixXd enc_w1, enc_b1;    // observation -> encoder, ReLU
  Eigen::MatrixXd enc_w2, enc_b2;    // encoder -> encoder, ReLU
  Eigen::MatrixXd embedding;         // tasks x embedding
  Eigen::MatrixXd lstm_wx, lstm_wh;  // gates (i,f,g,o) x input / hidden
  Eigen::MatrixXd lstm_b;
  Eigen::MatrixXd prog_w, prog_b;
  Eigen::MatrixXd arg_w, arg_b;
  Eigen::MatrixXd value_w, value_b;

  template <class F>
  void for_each(F&& f) {
    f("enc_w1", enc_w1);
    f("enc_b1", enc_b1);
    f("enc_w2", enc_w2);
    f("enc_b2", enc_b2);
    f("embedding", embedding);
    f("lstm_wx", lstm_wx);
    f("lstm_wh", lstm_wh);
    f("lstm_b", lstm_b);
    f("prog_w", prog_w);
    f("prog_b", prog_b);
    f("arg_w", arg_w);
    f("arg_b", arg_b);
    f("value_w", value_w);
    f("value_b", value_b);
  }
  template <class F>
  void for_each(F&& f) const {
    const_cast<ParameterSet*>(this)->for_each(
        [&](const char* name, Eigen::MatrixXd& m) { f(name, static_cast<const Eigen::MatrixXd&>(m)); });
  }

  [[nodiscard]] std::size_t count() const;
  [[nodiscard]] bool all_finite() const;
  bool operator==(const ParameterSet& other) const;

 private:
  NetworkShape shape_;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every group; deterministic per seed.
[[nodiscard]] ParameterSet init_params(std::uint64_t seed, const NetworkShape& shape);

[[nodiscard]] PolicyOutput forward(const ParameterSet& params, const Observation& obs, int task_index,
                                   const HiddenState& prev);

// Restriction of both heads to the supports present in feasible, renormalized.
// Throws PreconditionError when feasible is empty.
struct MaskedPolicy {
  Eigen::VectorXd program_probs;
  Eigen::VectorXd arg_probs;
};
[[nodiscard]] MaskedPolicy masked_distributions(const PolicyOutput& out, std::span<const ProgramCall> feasible);

// argmax masked program, then argmax masked argument among the tuples feasible
// for that program; ties go to the lowest index.
[[nodiscard]] ProgramCall greedy_select(const PolicyOutput& out, std::span<const ProgramCall> feasible);

// ─── Training ────────────────────────────────────────

struct TrainingStep {
  Observation observation{};
  std::vector<double> program_target;  // tree policy over programs
  std::vector<double> arg_target;      // tree policy over argument indices
};

// One stored program execution. Hidden states are recomputed from zero along
// the observations, never read from storage.
struct TrainingSequence {
  int task = 0;
  std::vector<TrainingStep> steps;
  double reward = 0.0;
};

struct LossOptions {
  double log_clamp = 1e-12;
};

// Sum over all steps of -pi_p^T log pi - pi_a^T log pi_a + (V - r)^2.
// When grad is non-null it must have the parameters' shape and is overwritten.
double loss_and_gradient(const ParameterSet& params, std::span<const TrainingSequence* const> batch,
                         ParameterSet* grad, const LossOptions& opts = {});

[[nodiscard]] double loss(const ParameterSet& params, std::span<const TrainingSequence* const> batch,
                          const LossOptions& opts = {});

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 1.0;
  LossOptions loss;
};

struct AdamState {
  ParameterSet m;
  ParameterSet v;
  std::uint64_t step = 0;

  static AdamState for_params(const ParameterSet& params) {
    return {ParameterSet(params.shape()), ParameterSet(params.shape()), 0};
  }
};

// One clipped Adam update on the batch loss. Returns the loss evaluated before
// the update. Throws Error on a non-finite loss or gradient.
double train_step(ParameterSet& params, AdamState& state, std::span<const TrainingSequence* const> batch,
                  const AdamConfig& cfg);

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::string worst_group;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // probes that flipped a ReLU, where the loss has a kink
};

// Central differences over every parameter. Relative error is
// |analytic - numeric| / max(|analytic| + |numeric|, 1e-6).
// Cancellation in L(+h) - L(-h) costs about eps*L/h; with batch losses in the
// tens that is ~1e-10 at h = 1e-4, a visible fraction of the ~1e-7 gradients
// some recurrent weights have. 3e-4 keeps truncation and roundoff both well
// below 1e-5. A probe that flips a ReLU straddles a kink, so that coordinate
// is not differentiable at the probe scale and is counted in `skipped`.
[[nodiscard]] GradientCheckReport finite_diff_check(const ParameterSet& params,
                                                    std::span<const TrainingSequence* const> batch,
                                                    double step = 3e-4);

// ─── Checkpoints ─────────────────────────────────────

struct Checkpoint {
  ParameterSet params;
  AdamState optimizer;
  std::string manifest;  // library manifest JSON
  std::uint64_t iteration = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void checkpoint_save(const std::filesystem::path& path, const ParameterSet& params, const AdamState& optimizer,
                     const ProgramLibrary& lib, std::uint64_t iteration = 0);

// Throws CheckpointError on version/manifest mismatch or a corrupt file.
[[nodiscard]] Checkpoint checkpoint_load(const std::filesystem::path& path, const ProgramLibrary& expected);

}  // namespace argprog
