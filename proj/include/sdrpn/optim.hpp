// AdamW with decoupled weight decay, and the warmup + cosine learning-rate schedule.

#pragma once

#include <cstdint>
#include <vector>

#include "sdrpn/student.hpp"

namespace sdrpn {

/// ceil(warmup_ratio * total_steps).
std::uint64_t warmup_steps(const StudentConfig& cfg);

/// Linear 0 -> peak over [0, Wm], cosine peak -> 0 over [Wm, T]. Throws when cfg.total_steps is 0
/// or step > T.
double lr_at_step(std::uint64_t step, const StudentConfig& cfg);

struct TrainingState {
  std::uint64_t step = 0;
  double lr = 0.0;
  std::vector<Mat> m, v;  // empty for frozen parameters

  static TrainingState init(const StudentModel& model);
};

/// One AdamW update at the given learning rate; increments state.step first (bias correction uses it).
/// Throws std::domain_error naming the parameter when a gradient is non-finite.
void adamw_update(StudentModel& model, TrainingState& state, const Gradients& grads, const StudentConfig& cfg,
                  double lr);

/// adamw_update with lr = lr_at_step(state.step + 1, cfg).
void adamw_step(StudentModel& model, TrainingState& state, const Gradients& grads, const StudentConfig& cfg);

}  // namespace sdrpn
