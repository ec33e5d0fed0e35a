#include "sdrpn/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace sdrpn {

std::uint64_t warmup_steps(const StudentConfig& cfg) {
  return static_cast<std::uint64_t>(std::ceil(cfg.warmup_ratio * static_cast<double>(cfg.total_steps)));
}

double lr_at_step(std::uint64_t step, const StudentConfig& cfg) {
  const std::uint64_t T = cfg.total_steps;
  if (T == 0) throw std::invalid_argument("learning-rate schedule needs total_steps > 0");
  if (step > T) throw std::out_of_range("step " + std::to_string(step) + " beyond total steps " + std::to_string(T));
  const std::uint64_t wm = warmup_steps(cfg);
  if (step <= wm) return wm == 0 ? cfg.peak_lr : cfg.peak_lr * static_cast<double>(step) / static_cast<double>(wm);
  const double progress = static_cast<double>(step - wm) / static_cast<double>(T - wm);
  return cfg.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

TrainingState TrainingState::init(const StudentModel& model) {
  TrainingState s;
  const auto& P = model.params();
  s.m.resize(P.size());
  s.v.resize(P.size());
  for (std::size_t i = 0; i < P.size(); ++i) {
    if (!P[i].trainable) continue;
    s.m[i] = Mat::Zero(P[i].value.rows(), P[i].value.cols());
    s.v[i] = Mat::Zero(P[i].value.rows(), P[i].value.cols());
  }
  return s;
}

void adamw_update(StudentModel& model, TrainingState& state, const Gradients& grads, const StudentConfig& cfg,
                  double lr) {
  auto& P = model.params();
  if (grads.g.size() != P.size() || state.m.size() != P.size())
    throw std::invalid_argument("optimizer state does not match the model");
  for (std::size_t i = 0; i < P.size(); ++i) {
    if (!P[i].trainable) continue;
    if (!grads.g[i].allFinite()) throw std::domain_error("non-finite gradient for parameter " + P[i].name);
  }
  ++state.step;
  state.lr = lr;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < P.size(); ++i) {
    if (!P[i].trainable) continue;
    auto& w = P[i].value;
    const auto& g = grads.g[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    const auto mhat = state.m[i].array() / bc1;
    const auto vhat = state.v[i].array() / bc2;
    w.array() -= lr * (mhat / (vhat.sqrt() + cfg.eps) + cfg.weight_decay * w.array());
  }
}

void adamw_step(StudentModel& model, TrainingState& state, const Gradients& grads, const StudentConfig& cfg) {
  adamw_update(model, state, grads, cfg, lr_at_step(state.step + 1, cfg));
}

}  // namespace sdrpn
