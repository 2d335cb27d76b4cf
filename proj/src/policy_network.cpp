#include "argprog/policy_network.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace argprog {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

VectorXd softmax(const VectorXd& logits) {
  VectorXd out = (logits.array() - logits.maxCoeff()).exp();
  return out / out.sum();
}

Eigen::Map<const VectorXd> as_vector(const Observation& obs) {
  return Eigen::Map<const VectorXd>(obs.data(), static_cast<Eigen::Index>(obs.size()));
}

// Everything the backward pass needs from one forward step.
struct StepCache {
  VectorXd x, z1, a1, z2, s, u;
  VectorXd i, f, g, o;
  VectorXd c_prev, c, tanh_c, h_prev, h;
  VectorXd pi_p, pi_a;
  double value = 0.0;
};

void forward_cached(const ParameterSet& p, const Observation& obs, int task, const VectorXd& h_prev,
                    const VectorXd& c_prev, StepCache& k) {
  const auto& shape = p.shape();
  const int H = shape.hidden;
  k.x = as_vector(obs);
  k.z1.noalias() = p.enc_w1 * k.x;
  k.z1 += p.enc_b1.col(0);
  k.a1 = k.z1.cwiseMax(0.0);
  k.z2.noalias() = p.enc_w2 * k.a1;
  k.z2 += p.enc_b2.col(0);
  k.s = k.z2.cwiseMax(0.0);
  k.u.resize(shape.encoder + shape.embedding);
  k.u.head(shape.encoder) = k.s;
  k.u.tail(shape.embedding) = p.embedding.row(task).transpose();

  VectorXd gates = p.lstm_b.col(0);
  gates.noalias() += p.lstm_wx * k.u;
  gates.noalias() += p.lstm_wh * h_prev;
  k.i = gates.segment(0, H).unaryExpr(&sigmoid);
  k.f = gates.segment(H, H).unaryExpr(&sigmoid);
  k.g = gates.segment(2 * H, H).array().tanh();
  k.o = gates.segment(3 * H, H).unaryExpr(&sigmoid);
  k.c_prev = c_prev;
  k.h_prev = h_prev;
  k.c = k.f.cwiseProduct(c_prev) + k.i.cwiseProduct(k.g);
  k.tanh_c = k.c.array().tanh();
  k.h = k.o.cwiseProduct(k.tanh_c);

  VectorXd logits_p = p.prog_b.col(0);
  logits_p.noalias() += p.prog_w * k.h;
  VectorXd logits_a = p.arg_b.col(0);
  logits_a.noalias() += p.arg_w * k.h;
  k.pi_p = softmax(logits_p);
  k.pi_a = softmax(logits_a);
  k.value = sigmoid(p.value_w.row(0).dot(k.h) + p.value_b(0, 0));
}

double cross_entropy(const std::vector<double>& target, const VectorXd& probs, double clamp) {
  double total = 0.0;
  const double floor = std::log(clamp);
  for (Eigen::Index j = 0; j < probs.size(); ++j) {
    const double t = target[static_cast<std::size_t>(j)];
    if (t == 0.0) continue;
    total -= t * std::max(std::log(probs(j)), floor);
  }
  return total;
}

// d/dlogits of -t^T log(max(softmax, clamp)); clamped entries contribute no gradient.
VectorXd cross_entropy_grad(const std::vector<double>& target, const VectorXd& probs, double clamp) {
  VectorXd dprob(probs.size());
  for (Eigen::Index j = 0; j < probs.size(); ++j) {
    const double t = target[static_cast<std::size_t>(j)];
    dprob(j) = (t != 0.0 && probs(j) > clamp) ? -t / probs(j) : 0.0;
  }
  const double dot = probs.dot(dprob);
  return probs.cwiseProduct((dprob.array() - dot).matrix());
}

double frobenius_sq(const ParameterSet& p) {
  double total = 0.0;
  p.for_each([&](const char*, const MatrixXd& m) { total += m.squaredNorm(); });
  return total;
}

void check_shape(const ParameterSet& params, const Observation&, int task) {
  if (task < 0 || task >= params.shape().tasks) {
    throw PreconditionError("task index " + std::to_string(task) + " has no program embedding row");
  }
}

}  // namespace

ParameterSet::ParameterSet(const NetworkShape& s) : shape_(s) {
  const int G = 4 * s.hidden;
  enc_w1 = MatrixXd::Zero(s.encoder, s.observation);
  enc_b1 = MatrixXd::Zero(s.encoder, 1);
  enc_w2 = MatrixXd::Zero(s.encoder, s.encoder);
  enc_b2 = MatrixXd::Zero(s.encoder, 1);
  embedding = MatrixXd::Zero(s.tasks, s.embedding);
  lstm_wx = MatrixXd::Zero(G, s.encoder + s.embedding);
  lstm_wh = MatrixXd::Zero(G, s.hidden);
  lstm_b = MatrixXd::Zero(G, 1);
  prog_w = MatrixXd::Zero(s.programs, s.hidden);
  prog_b = MatrixXd::Zero(s.programs, 1);
  arg_w = MatrixXd::Zero(s.args, s.hidden);
  arg_b = MatrixXd::Zero(s.args, 1);
  value_w = MatrixXd::Zero(1, s.hidden);
  value_b = MatrixXd::Zero(1, 1);
}

std::size_t ParameterSet::count() const {
  std::size_t n = 0;
  for_each([&](const char*, const MatrixXd& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

bool ParameterSet::all_finite() const {
  bool ok = true;
  for_each([&](const char*, const MatrixXd& m) { ok = ok && m.allFinite(); });
  return ok;
}

bool ParameterSet::operator==(const ParameterSet& other) const {
  if (!(shape_ == other.shape_)) return false;
  std::vector<const MatrixXd*> mine, theirs;
  for_each([&](const char*, const MatrixXd& m) { mine.push_back(&m); });
  other.for_each([&](const char*, const MatrixXd& m) { theirs.push_back(&m); });
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (*mine[i] != *theirs[i]) return false;
  }
  return true;
}

ParameterSet init_params(std::uint64_t seed, const NetworkShape& shape) {
  ParameterSet p(shape);
  std::mt19937_64 rng(seed);
  auto fill = [&](MatrixXd& m, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = dist(rng);
    }
  };
  fill(p.enc_w1, shape.observation);
  fill(p.enc_b1, shape.observation);
  fill(p.enc_w2, shape.encoder);
  fill(p.enc_b2, shape.encoder);
  fill(p.embedding, shape.embedding);
  fill(p.lstm_wx, shape.hidden);
  fill(p.lstm_wh, shape.hidden);
  fill(p.lstm_b, shape.hidden);
  fill(p.prog_w, shape.hidden);
  fill(p.prog_b, shape.hidden);
  fill(p.arg_w, shape.hidden);
  fill(p.arg_b, shape.hidden);
  fill(p.value_w, shape.hidden);
  fill(p.value_b, shape.hidden);
  return p;
}

PolicyOutput forward(const ParameterSet& params, const Observation& obs, int task_index, const HiddenState& prev) {
  check_shape(params, obs, task_index);
  if (prev.h.size() != params.shape().hidden || prev.c.size() != params.shape().hidden) {
    throw PreconditionError("hidden state size does not match the network");
  }
  StepCache k;
  forward_cached(params, obs, task_index, prev.h, prev.c, k);
  PolicyOutput out;
  out.program_probs = std::move(k.pi_p);
  out.arg_probs = std::move(k.pi_a);
  out.value = k.value;
  out.hidden = {std::move(k.h), std::move(k.c)};
  return out;
}

MaskedPolicy masked_distributions(const PolicyOutput& out, std::span<const ProgramCall> feasible) {
  if (feasible.empty()) throw PreconditionError("no feasible program call (dead-end state)");
  MaskedPolicy m{VectorXd::Zero(out.program_probs.size()), VectorXd::Zero(out.arg_probs.size())};
  for (const auto& call : feasible) {
    m.program_probs(call.program) = out.program_probs(call.program);
    const int a = args_encode(call.args);
    m.arg_probs(a) = out.arg_probs(a);
  }
  auto normalize = [&](VectorXd& v, auto support) {
    const double total = v.sum();
    if (total > 0.0 && std::isfinite(total)) {
      v /= total;
      return;
    }
    // Underflow: fall back to uniform over the support.
    v.setZero();
    for (const auto& call : feasible) v(support(call)) = 1.0;
    v /= v.sum();
  };
  normalize(m.program_probs, [](const ProgramCall& c) { return c.program; });
  normalize(m.arg_probs, [](const ProgramCall& c) { return args_encode(c.args); });
  return m;
}

ProgramCall greedy_select(const PolicyOutput& out, std::span<const ProgramCall> feasible) {
  auto masked = masked_distributions(out, feasible);
  int best_program = -1;
  for (const auto& call : feasible) {
    if (best_program < 0 || masked.program_probs(call.program) > masked.program_probs(best_program) ||
        (masked.program_probs(call.program) == masked.program_probs(best_program) && call.program < best_program)) {
      best_program = call.program;
    }
  }
  const ProgramCall* best = nullptr;
  for (const auto& call : feasible) {
    if (call.program != best_program) continue;
    if (best == nullptr) {
      best = &call;
      continue;
    }
    const double a = masked.arg_probs(args_encode(call.args));
    const double b = masked.arg_probs(args_encode(best->args));
    if (a > b || (a == b && args_encode(call.args) < args_encode(best->args))) best = &call;
  }
  return *best;
}

// ─── Loss and gradient ───────────────────────────────

double loss_and_gradient(const ParameterSet& params, std::span<const TrainingSequence* const> batch,
                         ParameterSet* grad, const LossOptions& opts) {
  const auto& shape = params.shape();
  const int H = shape.hidden;
  const int E = shape.encoder;
  if (grad != nullptr) *grad = ParameterSet(shape);

  double total = 0.0;
  std::vector<StepCache> caches;
  for (const TrainingSequence* seq : batch) {
    const auto n_steps = seq->steps.size();
    caches.resize(n_steps);
    VectorXd h = VectorXd::Zero(H);
    VectorXd c = VectorXd::Zero(H);
    for (std::size_t t = 0; t < n_steps; ++t) {
      const auto& step = seq->steps[t];
      check_shape(params, step.observation, seq->task);
      forward_cached(params, step.observation, seq->task, h, c, caches[t]);
      h = caches[t].h;
      c = caches[t].c;
      const auto& k = caches[t];
      total += cross_entropy(step.program_target, k.pi_p, opts.log_clamp);
      total += cross_entropy(step.arg_target, k.pi_a, opts.log_clamp);
      total += (k.value - seq->reward) * (k.value - seq->reward);
    }
    if (grad == nullptr) continue;

    ParameterSet& g = *grad;
    VectorXd dh_next = VectorXd::Zero(H);
    VectorXd dc_next = VectorXd::Zero(H);
    for (std::size_t t = n_steps; t-- > 0;) {
      const auto& k = caches[t];
      const auto& step = seq->steps[t];

      VectorXd dlp = cross_entropy_grad(step.program_target, k.pi_p, opts.log_clamp);
      VectorXd dla = cross_entropy_grad(step.arg_target, k.pi_a, opts.log_clamp);
      const double dzv = 2.0 * (k.value - seq->reward) * k.value * (1.0 - k.value);

      g.prog_w.noalias() += dlp * k.h.transpose();
      g.prog_b.col(0) += dlp;
      g.arg_w.noalias() += dla * k.h.transpose();
      g.arg_b.col(0) += dla;
      g.value_w.row(0) += dzv * k.h.transpose();
      g.value_b(0, 0) += dzv;

      VectorXd dh = dh_next;
      dh.noalias() += params.prog_w.transpose() * dlp;
      dh.noalias() += params.arg_w.transpose() * dla;
      dh += dzv * params.value_w.row(0).transpose();

      VectorXd dout = dh.cwiseProduct(k.tanh_c);
      VectorXd dc = dc_next + dh.cwiseProduct(k.o).cwiseProduct((1.0 - k.tanh_c.array().square()).matrix());

      VectorXd dgates(4 * H);
      dgates.segment(0, H) = dc.cwiseProduct(k.g).cwiseProduct(k.i.cwiseProduct((1.0 - k.i.array()).matrix()));
      dgates.segment(H, H) =
          dc.cwiseProduct(k.c_prev).cwiseProduct(k.f.cwiseProduct((1.0 - k.f.array()).matrix()));
      dgates.segment(2 * H, H) = dc.cwiseProduct(k.i).cwiseProduct((1.0 - k.g.array().square()).matrix());
      dgates.segment(3 * H, H) = dout.cwiseProduct(k.o.cwiseProduct((1.0 - k.o.array()).matrix()));

      g.lstm_wx.noalias() += dgates * k.u.transpose();
      g.lstm_wh.noalias() += dgates * k.h_prev.transpose();
      g.lstm_b.col(0) += dgates;

      VectorXd du = params.lstm_wx.transpose() * dgates;
      dh_next.noalias() = params.lstm_wh.transpose() * dgates;
      dc_next = dc.cwiseProduct(k.f);

      g.embedding.row(seq->task) += du.tail(shape.embedding).transpose();

      VectorXd dz2 = du.head(E).cwiseProduct((k.z2.array() > 0.0).cast<double>().matrix());
      g.enc_w2.noalias() += dz2 * k.a1.transpose();
      g.enc_b2.col(0) += dz2;
      VectorXd dz1 = (params.enc_w2.transpose() * dz2).cwiseProduct((k.z1.array() > 0.0).cast<double>().matrix());
      g.enc_w1.noalias() += dz1 * k.x.transpose();
      g.enc_b1.col(0) += dz1;
    }
  }
  return total;
}

double loss(const ParameterSet& params, std::span<const TrainingSequence* const> batch, const LossOptions& opts) {
  return loss_and_gradient(params, batch, nullptr, opts);
}

double train_step(ParameterSet& params, AdamState& state, std::span<const TrainingSequence* const> batch,
                  const AdamConfig& cfg) {
  ParameterSet grad;
  const double value = loss_and_gradient(params, batch, &grad, cfg.loss);
  const double norm_sq = frobenius_sq(grad);
  if (!std::isfinite(value) || !std::isfinite(norm_sq)) {
    std::ostringstream msg;
    msg << "non-finite training step: loss=" << value << " grad_norm^2=" << norm_sq << " batch=" << batch.size();
    throw Error(msg.str());
  }
  const double norm = std::sqrt(norm_sq);
  const double scale = (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) ? cfg.clip_norm / norm : 1.0;

  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

  std::vector<MatrixXd*> p_groups, g_groups, m_groups, v_groups;
  params.for_each([&](const char*, MatrixXd& m) { p_groups.push_back(&m); });
  grad.for_each([&](const char*, MatrixXd& m) { g_groups.push_back(&m); });
  state.m.for_each([&](const char*, MatrixXd& m) { m_groups.push_back(&m); });
  state.v.for_each([&](const char*, MatrixXd& m) { v_groups.push_back(&m); });

  for (std::size_t i = 0; i < p_groups.size(); ++i) {
    MatrixXd gi = *g_groups[i] * scale;
    *m_groups[i] = cfg.beta1 * *m_groups[i] + (1.0 - cfg.beta1) * gi;
    *v_groups[i] = cfg.beta2 * *v_groups[i] + (1.0 - cfg.beta2) * gi.cwiseProduct(gi);
    auto m_hat = m_groups[i]->array() / bc1;
    auto v_hat = v_groups[i]->array() / bc2;
    p_groups[i]->array() -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
  }
  return value;
}

namespace {

// On/off state of every encoder ReLU over the batch.
std::vector<bool> relu_pattern(const ParameterSet& params, std::span<const TrainingSequence* const> batch) {
  std::vector<bool> pattern;
  StepCache k;
  for (const TrainingSequence* seq : batch) {
    VectorXd h = VectorXd::Zero(params.shape().hidden);
    VectorXd c = VectorXd::Zero(params.shape().hidden);
    for (const auto& step : seq->steps) {
      forward_cached(params, step.observation, seq->task, h, c, k);
      for (Eigen::Index j = 0; j < k.z1.size(); ++j) pattern.push_back(k.z1(j) > 0.0);
      for (Eigen::Index j = 0; j < k.z2.size(); ++j) pattern.push_back(k.z2(j) > 0.0);
      h = k.h;
      c = k.c;
    }
  }
  return pattern;
}

}  // namespace

GradientCheckReport finite_diff_check(const ParameterSet& params, std::span<const TrainingSequence* const> batch,
                                      double step) {
  ParameterSet analytic;
  loss_and_gradient(params, batch, &analytic);

  ParameterSet probe = params;
  const auto base_pattern = relu_pattern(params, batch);
  std::vector<std::pair<const char*, MatrixXd*>> probe_groups;
  std::vector<const MatrixXd*> grad_groups;
  probe.for_each([&](const char* name, MatrixXd& m) { probe_groups.emplace_back(name, &m); });
  analytic.for_each([&](const char*, MatrixXd& m) { grad_groups.push_back(&m); });

  GradientCheckReport report;
  for (std::size_t gi = 0; gi < probe_groups.size(); ++gi) {
    MatrixXd& m = *probe_groups[gi].second;
    for (Eigen::Index idx = 0; idx < m.size(); ++idx) {
      const double saved = m.data()[idx];
      m.data()[idx] = saved + step;
      const double up = loss(probe, batch);
      const bool kink_up = relu_pattern(probe, batch) != base_pattern;
      m.data()[idx] = saved - step;
      const double down = loss(probe, batch);
      const bool kink_down = relu_pattern(probe, batch) != base_pattern;
      m.data()[idx] = saved;
      if (kink_up || kink_down) {
        ++report.skipped;
        continue;
      }
      const double numeric = (up - down) / (2.0 * step);
      const double exact = grad_groups[gi]->data()[idx];
      const double rel = std::abs(exact - numeric) / std::max(std::abs(exact) + std::abs(numeric), 1e-6);
      ++report.checked;
      if (rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_group = probe_groups[gi].first;
        report.worst_index = static_cast<std::size_t>(idx);
      }
    }
  }
  return report;
}

}  // namespace argprog
