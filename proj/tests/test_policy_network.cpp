#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "argprog/policy_network.hpp"

using namespace argprog;

namespace {

NetworkShape small_shape(int programs = 12) {
  NetworkShape s;
  s.encoder = 6;
  s.embedding = 4;
  s.hidden = 8;
  s.programs = programs;
  return s;
}

Observation random_observation(std::mt19937_64& rng) {
  Observation obs{};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& x : obs) x = u(rng);
  return obs;
}

std::vector<double> random_distribution(int n, std::mt19937_64& rng, bool one_hot) {
  std::vector<double> d(static_cast<std::size_t>(n), 0.0);
  if (one_hot) {
    d[rng() % d.size()] = 1.0;
    return d;
  }
  std::uniform_real_distribution<double> u(0.01, 1.0);
  double total = 0.0;
  for (auto& x : d) total += (x = u(rng));
  for (auto& x : d) x /= total;
  return d;
}

TrainingSequence random_sequence(const NetworkShape& s, int steps, std::mt19937_64& rng) {
  TrainingSequence seq;
  seq.task = static_cast<int>(rng() % 4);
  seq.reward = static_cast<double>(rng() % 2);
  for (int t = 0; t < steps; ++t) {
    TrainingStep step;
    step.observation = random_observation(rng);
    step.program_target = random_distribution(s.programs, rng, t % 2 == 0);
    step.arg_target = random_distribution(s.args, rng, t % 2 == 1);
    seq.steps.push_back(step);
  }
  return seq;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("argprog_test_" + name);
}

}  // namespace

TEST_CASE("initialization is deterministic and sized by the library") {
  const ProgramLibrary args(LibraryMode::Args);
  const ProgramLibrary noargs(LibraryMode::NoArgs);
  const auto a = init_params(42, NetworkShape::for_library(args));
  const auto b = init_params(42, NetworkShape::for_library(args));
  CHECK(a == b);
  CHECK_FALSE(a == init_params(43, NetworkShape::for_library(args)));
  CHECK(a.prog_w.rows() == 12);
  CHECK(init_params(42, NetworkShape::for_library(noargs)).prog_w.rows() == 17);
  CHECK(a.arg_w.rows() == 64);
  CHECK(a.lstm_wx.rows() == 4 * 128);
  CHECK(a.lstm_wx.cols() == 64 + 32);
  CHECK(a.enc_w1.cols() == kObservationSize);
  // uniform +-1/sqrt(fan_in)
  CHECK(a.enc_w1.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(21.0));
  CHECK(a.lstm_wh.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(128.0));
}

TEST_CASE("forward produces normalized heads and a value in [0,1]") {
  const ProgramLibrary lib(LibraryMode::Args);
  const auto params = init_params(7, NetworkShape::for_library(lib));
  std::mt19937_64 rng(1);
  HiddenState h = HiddenState::zeros(128);
  for (int i = 0; i < 10000; ++i) {
    const auto out = forward(params, random_observation(rng), i % 4, h);
    REQUIRE(std::abs(out.program_probs.sum() - 1.0) < 1e-6);
    REQUIRE(std::abs(out.arg_probs.sum() - 1.0) < 1e-6);
    REQUIRE(out.value >= 0.0);
    REQUIRE(out.value <= 1.0);
    h = i % 7 == 0 ? HiddenState::zeros(128) : out.hidden;
  }
  const auto obs = random_observation(rng);
  const auto x = forward(params, obs, 2, h);
  const auto y = forward(params, obs, 2, h);
  CHECK(x.program_probs == y.program_probs);
  CHECK(x.arg_probs == y.arg_probs);
  CHECK(x.value == y.value);
  CHECK_THROWS_AS((void)forward(params, obs, 4, h), PreconditionError);
}

TEST_CASE("masked distributions") {
  PolicyOutput out;
  out.program_probs = Eigen::Vector2d(0.5, 0.5);
  out.arg_probs = Eigen::VectorXd::Constant(64, 1.0 / 64);
  const std::vector<ProgramCall> only_zero{{0, {}}};
  const auto m = masked_distributions(out, only_zero);
  CHECK(m.program_probs(0) == doctest::Approx(1.0));
  CHECK(m.program_probs(1) == 0.0);

  const std::vector<ProgramCall> four{{1, args_decode(16)}, {1, args_decode(28)}, {1, args_decode(24)},
                                      {1, args_decode(0)}};
  const auto m4 = masked_distributions(out, four);
  for (int a : {16, 28, 24, 0}) CHECK(m4.arg_probs(a) == doctest::Approx(0.25));
  CHECK(m4.arg_probs.sum() == doctest::Approx(1.0));

  std::vector<ProgramCall> everything;
  for (int p = 0; p < 2; ++p) {
    for (int a = 0; a < 64; ++a) everything.push_back({p, args_decode(a)});
  }
  const auto all = masked_distributions(out, everything);
  CHECK((all.program_probs - out.program_probs).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((all.arg_probs - out.arg_probs).cwiseAbs().maxCoeff() < 1e-9);

  CHECK_THROWS_AS((void)masked_distributions(out, std::vector<ProgramCall>{}), PreconditionError);
}

TEST_CASE("greedy selection") {
  PolicyOutput out;
  out.arg_probs = Eigen::VectorXd::Constant(64, 1.0 / 64);
  out.program_probs = Eigen::Vector3d(0.1, 0.7, 0.2);
  const std::vector<ProgramCall> all3{{0, {}}, {1, {}}, {2, {}}};
  CHECK(greedy_select(out, all3).program == 1);

  out.program_probs = Eigen::Vector3d(0.5, 0.5, 0.0);
  CHECK(greedy_select(out, all3).program == 0);

  out.program_probs = Eigen::Vector3d(0.1, 0.7, 0.2);
  const std::vector<ProgramCall> masked{{0, {}}, {2, {}}};
  CHECK(greedy_select(out, masked).program == 2);

  // argument choice is restricted to the tuples feasible for the chosen program
  out.arg_probs.setConstant(0.0);
  out.arg_probs(16) = 0.6;  // P1
  out.arg_probs(28) = 0.3;  // P1,P3
  out.arg_probs(0) = 0.1;
  const std::vector<ProgramCall> with_args{{1, args_decode(28)}, {2, args_decode(16)}};
  const auto pick = greedy_select(out, with_args);
  CHECK(pick.program == 1);
  CHECK(args_encode(pick.args) == 28);
}

TEST_CASE("greedy choice is invariant to a constant logit shift") {
  const ProgramLibrary lib(LibraryMode::Args);
  auto params = init_params(3, NetworkShape::for_library(lib));
  std::mt19937_64 rng(8);
  std::vector<ProgramCall> feasible;
  for (int p = 0; p < 12; ++p) feasible.push_back({p, args_decode(static_cast<int>(rng() % 64))});
  for (int i = 0; i < 200; ++i) {
    const auto obs = random_observation(rng);
    const auto before = greedy_select(forward(params, obs, 1, HiddenState::zeros(128)), feasible);
    auto shifted = params;
    shifted.prog_b.array() += 3.7;
    shifted.arg_b.array() -= 1.3;
    const auto after = greedy_select(forward(shifted, obs, 1, HiddenState::zeros(128)), feasible);
    REQUIRE(before == after);
  }
}

TEST_CASE("loss of the hand-computed example") {
  // Two programs and two argument indices with all-zero weights: both heads are
  // exactly uniform and the value is sigmoid(0) = 0.5.
  NetworkShape s = small_shape(2);
  s.args = 2;
  const ParameterSet zero(s);
  TrainingSequence seq;
  seq.task = 0;
  seq.reward = 1.0;
  seq.steps.push_back({Observation{}, {1.0, 0.0}, {0.0, 1.0}});
  const TrainingSequence* batch[] = {&seq};
  const double expected = 2.0 * std::log(2.0) + 0.25;
  CHECK(loss(zero, batch) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(std::abs(loss(zero, batch) - 1.6363) < 1e-4);

  const TrainingSequence* doubled[] = {&seq, &seq};
  CHECK(loss(zero, doubled) == doctest::Approx(2.0 * loss(zero, batch)).epsilon(1e-12));
}

TEST_CASE("loss is the target entropy when the network matches the targets") {
  // Targets equal to the uniform output; V = r = 0.5 is impossible with r in
  // {0,1}, so compare against the entropy plus the value term.
  NetworkShape s = small_shape(4);
  s.args = 4;
  const ParameterSet zero(s);
  TrainingSequence seq;
  seq.reward = 0.0;
  seq.steps.push_back({Observation{}, {0.25, 0.25, 0.25, 0.25}, {0.25, 0.25, 0.25, 0.25}});
  const TrainingSequence* batch[] = {&seq};
  CHECK(loss(zero, batch) == doctest::Approx(2.0 * std::log(4.0) + 0.25).epsilon(1e-12));
}

TEST_CASE("log clamp bounds the loss of a zero-probability target") {
  NetworkShape s = small_shape(2);
  s.args = 2;
  ParameterSet p(s);
  p.prog_b(0, 0) = 100.0;  // program 1 gets probability ~e^-100 < 1e-12
  TrainingSequence seq;
  seq.reward = 0.5;
  seq.steps.push_back({Observation{}, {0.0, 1.0}, {0.5, 0.5}});
  const TrainingSequence* batch[] = {&seq};
  const double l = loss(p, batch);
  CHECK(l == doctest::Approx(-std::log(1e-12) + std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("analytic gradients match central differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    CAPTURE(seed);
    std::mt19937_64 rng(seed);
    const auto shape = small_shape();
    const auto params = init_params(seed, shape);
    auto a = random_sequence(shape, 3, rng);
    auto b = random_sequence(shape, 2, rng);
    const TrainingSequence* batch[] = {&a, &b};
    const auto report = finite_diff_check(params, batch);
    CAPTURE(report.worst_group);
    CAPTURE(report.worst_index);
    CHECK(report.checked + report.skipped == params.count());
    CHECK(report.skipped * 100 <= params.count());  // kinks are rare, not the norm
    CHECK(report.max_relative_error < 1e-4);
    // deterministic per seed
    CHECK(finite_diff_check(params, batch).max_relative_error == report.max_relative_error);
  }
}

TEST_CASE("probes across a ReLU kink are set aside") {
  // Put a first-layer pre-activation right at zero: any probe of its bias
  // flips the unit, so that coordinate must be skipped, not compared.
  const auto shape = small_shape();
  auto params = init_params(2, shape);
  std::mt19937_64 rng(7);
  auto seq = random_sequence(shape, 1, rng);
  const Eigen::Map<const Eigen::VectorXd> x(seq.steps[0].observation.data(), kObservationSize);
  params.enc_b1(0, 0) = -params.enc_w1.row(0).dot(x) + 1e-6;
  const TrainingSequence* batch[] = {&seq};
  const auto report = finite_diff_check(params, batch);
  CHECK(report.skipped >= 1);
  CHECK(report.max_relative_error < 1e-4);
}

TEST_CASE("dead units give zero gradient in both computations") {
  const auto shape = small_shape();
  auto params = init_params(9, shape);
  params.enc_b1(0, 0) = -1e3;  // unit 0 of the first layer never fires
  std::mt19937_64 rng(4);
  auto seq = random_sequence(shape, 2, rng);
  const TrainingSequence* batch[] = {&seq};
  ParameterSet grad;
  loss_and_gradient(params, batch, &grad);
  CHECK(grad.enc_b1(0, 0) == 0.0);
  CHECK(grad.enc_w1.row(0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adam steps") {
  const auto shape = small_shape();
  std::mt19937_64 rng(12);
  auto seq = random_sequence(shape, 1, rng);
  seq.steps[0].program_target = random_distribution(shape.programs, rng, true);
  seq.steps[0].arg_target = random_distribution(shape.args, rng, true);
  const TrainingSequence* batch[] = {&seq};

  SUBCASE("zero learning rate leaves parameters unchanged") {
    auto params = init_params(1, shape);
    const auto before = params;
    auto state = AdamState::for_params(params);
    AdamConfig cfg;
    cfg.learning_rate = 0.0;
    (void)train_step(params, state, batch, cfg);
    CHECK(params == before);
  }
  SUBCASE("loss is non-increasing when overfitting one step") {
    auto params = init_params(1, shape);
    auto state = AdamState::for_params(params);
    double previous = loss(params, batch);
    for (int i = 0; i < 100; ++i) {
      (void)train_step(params, state, batch, AdamConfig{});
      const double now = loss(params, batch);
      REQUIRE(now <= previous + 1e-12);
      previous = now;
    }
  }
  SUBCASE("identical streams give identical trajectories") {
    auto p1 = init_params(1, shape);
    auto p2 = init_params(1, shape);
    auto s1 = AdamState::for_params(p1);
    auto s2 = AdamState::for_params(p2);
    for (int i = 0; i < 20; ++i) {
      REQUIRE(train_step(p1, s1, batch, AdamConfig{}) == train_step(p2, s2, batch, AdamConfig{}));
    }
    CHECK(p1 == p2);
  }
  SUBCASE("non-finite parameters abort the step") {
    auto params = init_params(1, shape);
    params.value_b(0, 0) = std::nan("");
    auto state = AdamState::for_params(params);
    CHECK_THROWS_AS((void)train_step(params, state, batch, AdamConfig{}), Error);
  }
}

TEST_CASE("a single stored trace can be overfit") {
  const ProgramLibrary lib(LibraryMode::Args);
  const auto shape = NetworkShape::for_library(lib);
  auto params = init_params(5, shape);
  auto state = AdamState::for_params(params);
  std::mt19937_64 rng(6);
  TrainingSequence seq;
  seq.task = 0;
  seq.reward = 1.0;
  for (int t = 0; t < 3; ++t) {
    TrainingStep step;
    step.observation = random_observation(rng);
    step.program_target = random_distribution(shape.programs, rng, true);
    step.arg_target = random_distribution(shape.args, rng, true);
    seq.steps.push_back(step);
  }
  const TrainingSequence* batch[] = {&seq};
  double last = 0.0;
  int steps = 0;
  for (; steps < 2000; ++steps) {
    last = train_step(params, state, batch, AdamConfig{});
    if (last < 0.01) break;
  }
  CAPTURE(steps);
  CHECK(last < 0.01);
}

TEST_CASE("checkpoints round-trip exactly") {
  const ProgramLibrary lib(LibraryMode::Args);
  auto params = init_params(21, NetworkShape::for_library(lib));
  auto state = AdamState::for_params(params);
  std::mt19937_64 rng(2);
  auto seq = random_sequence(params.shape(), 2, rng);
  const TrainingSequence* batch[] = {&seq};
  (void)train_step(params, state, batch, AdamConfig{});

  const auto path = temp_path("roundtrip.bin");
  checkpoint_save(path, params, state, lib, 17);
  const auto loaded = checkpoint_load(path, lib);
  CHECK(loaded.params == params);
  CHECK(loaded.optimizer.m == state.m);
  CHECK(loaded.optimizer.v == state.v);
  CHECK(loaded.optimizer.step == state.step);
  CHECK(loaded.iteration == 17);
  const auto obs = random_observation(rng);
  const auto x = forward(params, obs, 3, HiddenState::zeros(128));
  const auto y = forward(loaded.params, obs, 3, HiddenState::zeros(128));
  CHECK(x.program_probs == y.program_probs);
  CHECK(x.arg_probs == y.arg_probs);
  CHECK(x.value == y.value);

  SUBCASE("library mismatch is rejected") {
    CHECK_THROWS_AS((void)checkpoint_load(path, ProgramLibrary(LibraryMode::NoArgs)), CheckpointError);
  }
  SUBCASE("truncated file is rejected") {
    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size / 2);
    CHECK_THROWS_AS((void)checkpoint_load(path, lib), CheckpointError);
  }
  SUBCASE("flipped byte fails the checksum") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(200);
    char c = 0;
    f.read(&c, 1);
    f.seekp(200);
    c = static_cast<char>(c ^ 0x5a);
    f.write(&c, 1);
    f.close();
    CHECK_THROWS_AS((void)checkpoint_load(path, lib), CheckpointError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS((void)checkpoint_load(temp_path("does_not_exist.bin"), lib), CheckpointError);
  }
  std::filesystem::remove(path);
}
