// Monte Carlo checks for noisy attention as a proxy label.
//
// A latent foreground bit Y ~ Bernoulli(eta(X)) is observed through an activation A.
// Under flip noise (CCN) and under the additive model the conditional mean
// h*(x) = E[A | X = x] is an increasing affine function of eta(x); the checks below
// measure that affinity, the gap between regressing on A and using A directly, and
// the matching classification error rates.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace sdrpn {

enum class LabelNoise { ccn, symmetric_ccn, additive };
enum class Posterior { logistic, constant, step };
enum class FeatureDist { normal, uniform };

LabelNoise parse_label_noise(const std::string& s);  // "ccn", "symccn", "additive"
const char* label_noise_name(LabelNoise m);
Posterior parse_posterior(const std::string& s);      // "logistic", "constant", "step"
const char* posterior_name(Posterior p);
FeatureDist parse_feature_dist(const std::string& s); // "normal", "uniform"
const char* feature_dist_name(FeatureDist d);

struct NoiseSpec {
  LabelNoise model = LabelNoise::ccn;
  double rho0 = 0.1, rho1 = 0.2;  // ccn: P(A=1 | Y=0), P(A=0 | Y=1)
  double rho = 0.1;               // symmetric ccn
  double mu0 = 0.2, mu1 = 0.8;    // additive: mean activation per class
  double noise_scale = 0.05;      // additive: sd of the Gaussian noise before the clamp to [0,1]
  Posterior posterior = Posterior::logistic;
  double slope = 4.0;             // logistic: eta(x) = sigmoid(slope * x)
  double constant = 0.5;          // constant: eta(x) = constant
  FeatureDist feature = FeatureDist::normal;  // normal: N(0,1); uniform: U(-1,1)

  void validate() const;  // throws std::invalid_argument
  double eta(double x) const;
  /// Closed-form E[A | eta] (the clamp of the additive model is ignored).
  double affine(double eta) const;
  /// Closed-form Var(A | eta), clamp ignored.
  double conditional_variance(double eta) const;
  /// True when A is a deterministic function of Y.
  bool noiseless() const;
};

struct NoiseTable {
  std::vector<double> x, eta, a;
  std::vector<std::uint8_t> y;
  std::size_t size() const noexcept { return x.size(); }
};

/// n draws in shards of `shard_size`; shard k uses its own stream derived from (seed, k), so the
/// table is identical for any evaluation order of the shards.
NoiseTable simulate(const NoiseSpec& spec, std::size_t n, std::uint64_t seed, std::size_t shard_size = 1 << 16);

struct BinRow {
  std::size_t bin = 0;
  double x_lo = 0.0, x_hi = 0.0;
  std::size_t count = 0;
  double mean_eta = 0.0;
  double mean_a = 0.0;
  double predicted = 0.0;  // affine(mean_eta)
  double gap = 0.0;        // mean_a - predicted
  double std_error = 0.0;  // sample sd of A in the bin / sqrt(count)
  bool within = false;     // |gap| <= 3 std_error
};

struct AffinityReport {
  std::vector<BinRow> rows;
  std::size_t dropped_bins = 0;  // fewer than min_count samples
  double max_abs_gap = 0.0;
  double within_fraction = 0.0;
  bool pass = false;             // within_fraction >= 0.95
};

/// Equal-count bins over sorted X; bins with fewer than `min_count` samples are dropped and counted.
AffinityReport conditional_mean_check(const NoiseTable& t, const NoiseSpec& spec, std::size_t bins = 20,
                                      std::size_t min_count = 100);

/// Monotone regressogram: bin means of A over equal-count X bins, then pool-adjacent-violators so
/// the fit is non-decreasing in X. `fitted` is aligned with the table.
struct Regressogram {
  std::vector<double> edges_hi;  // upper X edge of each bin
  std::vector<double> values;    // fitted value per bin
  std::vector<double> fitted;    // per sample
};

Regressogram fit_regressogram(const NoiseTable& t, std::size_t bins = 50);

struct VarianceReport {
  double mse_raw = 0.0;             // mean (A - h*(X))^2
  double mse_fit = 0.0;             // mean (h_hat(X) - h*(X))^2
  double expected_cond_var = 0.0;   // mean of the closed-form Var(A | X)
  bool equality_case = false;       // A is a function of X, so mse_raw is zero and nothing can beat it
  bool noise_free = false;          // the noise model adds no label noise (A may still vary through Y)
  bool ordering = false;            // mse_fit < mse_raw, or the equality case
  bool monotone = false;            // fitted values non-decreasing in eta
};

VarianceReport variance_reduction_check(const NoiseTable& t, const NoiseSpec& spec, std::size_t bins = 50);

struct ClassificationReport {
  double error_raw = 0.0;       // best threshold on A
  double threshold_raw = 0.0;
  double error_fit = 0.0;       // best threshold on h_hat(X)
  double threshold_fit = 0.0;
  double bayes_error = 0.0;     // mean of min(eta, 1 - eta)
  bool fit_better = false;      // error_fit < error_raw
};

/// Default grid: 102 thresholds from -0.005 to 1.005 in steps of 0.01; the decision is score > t.
std::vector<double> default_threshold_grid();

/// Symmetric CCN only; otherwise std::invalid_argument.
ClassificationReport classification_comparison(const NoiseTable& t, const NoiseSpec& spec,
                                               const std::vector<double>& thresholds = default_threshold_grid(),
                                               std::size_t bins = 50);

struct TheoryReport {
  NoiseSpec spec;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  AffinityReport affinity;
  VarianceReport variance;
  bool classified = false;  // classification applies to symmetric CCN only
  ClassificationReport classification;
  /// Affinity, ordering and monotonicity. The classification comparison is reported, not gated:
  /// h_hat only wins when the Bayes error of eta is below the flip rate.
  bool pass() const;
};

TheoryReport verify_theory(const NoiseSpec& spec, std::size_t n, std::uint64_t seed, std::size_t affinity_bins = 20,
                           std::size_t fit_bins = 50);

/// theory_bins.csv (per-bin affinity rows) and theory.json (summary).
void write_theory_report(const TheoryReport& r, const std::filesystem::path& dir);

}  // namespace sdrpn
