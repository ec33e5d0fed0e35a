// Toy decoder-style RoI student: a frozen backbone of B pre-norm transformer
// blocks under R trainable blocks initialized from the teacher, and a RoI head
// that reuses the last trainable block's norm and query/key projections on the
// hidden states one block below it.
//
// Token order is [visual tokens (H*W), query tokens (one per turn)] under a causal
// mask. All math is f64 with hand-written reverse-mode gradients.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sdrpn/grid.hpp"
#include "sdrpn/pseudo_label.hpp"
#include "sdrpn/rng.hpp"

namespace sdrpn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class LossKind { bce, mse };

LossKind parse_loss_kind(const std::string& s);
const char* loss_kind_name(LossKind k);

struct StudentConfig {
  std::uint32_t d_model = 64;
  std::uint32_t heads = 4;
  std::uint32_t mlp_ratio = 4;
  std::uint32_t depth = 6;      // L, teacher depth
  std::uint32_t frozen = 3;     // B
  std::uint32_t trainable = 3;  // R
  std::uint32_t turns = 1;

  // AdamW with linear warmup and cosine decay.
  double peak_lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double warmup_ratio = 0.03;
  std::uint32_t epochs = 1;
  std::uint32_t batch_size = 128;
  std::uint64_t total_steps = 0;  // 0: derived from data size, batch size and epochs

  LossKind loss = LossKind::bce;
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument on any violated invariant.
  void validate() const;
};

struct Param {
  std::string name;
  Mat value;
  bool trainable = false;
};

struct BlockSlots {
  std::size_t ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2;
};

class StudentModel {
 public:
  /// Randomly initialized full-depth teacher network (all blocks frozen).
  static StudentModel init_teacher(const StudentConfig& cfg, std::uint32_t feature_dim, std::uint64_t seed);

  /// Student built from a teacher: every parameter copied, blocks B+1..B+R marked trainable.
  static StudentModel from_teacher(const StudentModel& teacher, const StudentConfig& cfg);

  /// Empty model with the right parameter names and shapes (used when loading checkpoints).
  static StudentModel skeleton(const StudentConfig& cfg, std::uint32_t feature_dim);

  const StudentConfig& config() const noexcept { return cfg_; }
  std::uint32_t feature_dim() const noexcept { return feature_dim_; }

  std::vector<Param>& params() noexcept { return params_; }
  const std::vector<Param>& params() const noexcept { return params_; }
  const Param& param(const std::string& name) const;
  const BlockSlots& block(std::size_t i) const { return blocks_.at(i); }
  std::size_t embed_w() const noexcept { return w_in_; }
  std::size_t embed_b() const noexcept { return b_in_; }
  std::size_t type_visual() const noexcept { return type_vis_; }
  std::size_t type_query() const noexcept { return type_q_; }

  /// FNV-1a over the encoded bytes of every frozen parameter, in declaration order.
  std::uint64_t frozen_hash() const;
  std::uint64_t full_hash() const;

 private:
  void build_layout(std::uint32_t feature_dim);

  StudentConfig cfg_;
  std::uint32_t feature_dim_ = 0;
  std::vector<Param> params_;
  std::vector<BlockSlots> blocks_;
  std::size_t w_in_ = 0, b_in_ = 0, type_vis_ = 0, type_q_ = 0;
};

/// One training/inference example in model space.
struct StudentInput {
  Mat visual;   // [H*W, feature_dim]
  Mat queries;  // [turns, feature_dim]
};

StudentInput make_student_input(const Grid& features, const Grid& queries);

/// Token-embedding plus frozen blocks 1..B; constant for a sample, so callers may cache it.
Mat frozen_backbone(const StudentModel& m, const StudentInput& in);

/// Hidden states after block B+R-1 for every token.
Mat forward_hidden(const StudentModel& m, const StudentInput& in);
Mat forward_hidden_from(const StudentModel& m, const Mat& frozen_out);

/// Rows of `hidden` at the given boundaries (the last token of each user turn), in order.
Mat select_query_states(const Mat& hidden, std::span<const std::size_t> boundaries);

/// Turn boundaries for the standard layout: query token i sits at index H*W + i.
std::vector<std::size_t> default_boundaries(std::size_t visual_tokens, std::size_t turns);

/// Mean over heads of the per-head products Q_h K_h^T; q is [n, d], k is [N, d].
Mat head_average_logits(const Mat& q, const Mat& k, std::uint32_t heads);

/// RoI logits [turns, H*W]: head-averaged dot products of LP_q(Norm(H_RoI)) and LP_k(Norm(H_v)).
Mat predict_roi(const StudentModel& m, const Mat& hidden, const Mat& roi_states, std::size_t visual_tokens);

struct LossTerms {
  double sum = 0.0;        // summed per-token loss
  std::size_t count = 0;   // contributing tokens
  Mat grad;                // d(sum) / d(logits)
};

/// Numerically stable BCE-with-logits summed over tokens where valid != 0; targets may be soft.
LossTerms masked_bce_terms(const Mat& logits, const Mat& targets, const Mat& valid);

/// (sigmoid(logit) - target)^2 summed over valid tokens.
LossTerms masked_mse_terms(const Mat& logits, const Mat& targets, const Mat& valid);

struct LossValue {
  double loss = 0.0;
  Mat grad;  // gradient of the mean loss
  std::size_t valid = 0;
  bool skipped = false;
};

/// Mean masked BCE against {-1,0,1} labels ([turns, H*W]); -1 is ignored.
LossValue masked_bce_loss(const Mat& logits, const Mat& labels);

/// Gradients aligned with StudentModel::params(); frozen entries stay empty.
struct Gradients {
  std::vector<Mat> g;
  void zero_like(const StudentModel& m);
  void scale(double s);
};

/// Forward from cached frozen output through the head, then reverse-mode accumulate
/// d(loss_sum)/d(param) for trainable parameters into `grads`. Returns the loss terms.
struct ExampleTargets {
  Mat targets;  // [turns, H*W]
  Mat valid;    // [turns, H*W], 1 where the token contributes
};

LossTerms forward_backward(const StudentModel& m, const Mat& frozen_out, std::size_t visual_tokens,
                           const ExampleTargets& t, LossKind loss, Gradients& grads);

/// Logits for one example, from the cached frozen output.
Mat predict_from_frozen(const StudentModel& m, const Mat& frozen_out, std::size_t visual_tokens);

/// Convenience: logits from raw inputs.
Mat predict(const StudentModel& m, const StudentInput& in);

}  // namespace sdrpn
