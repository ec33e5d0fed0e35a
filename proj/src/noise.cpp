#include "sdrpn/noise.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "sdrpn/rng.hpp"

namespace sdrpn {

namespace {

constexpr std::uint64_t kNoiseStream = 0x0e7a5e1f00000011ULL;

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

std::vector<std::size_t> order_by_x(const NoiseTable& t) {
  std::vector<std::size_t> idx(t.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return t.x[a] < t.x[b]; });
  return idx;
}

// [begin, end) positions into the sorted order for each of `bins` equal-count bins.
std::vector<std::pair<std::size_t, std::size_t>> equal_count_bins(std::size_t n, std::size_t bins) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t b = 0; b < bins; ++b) out.emplace_back(b * n / bins, (b + 1) * n / bins);
  return out;
}

}  // namespace

LabelNoise parse_label_noise(const std::string& s) {
  if (s == "ccn") return LabelNoise::ccn;
  if (s == "symccn" || s == "symmetric-ccn" || s == "symmetric_ccn") return LabelNoise::symmetric_ccn;
  if (s == "additive") return LabelNoise::additive;
  throw std::invalid_argument("unknown noise model '" + s + "' (expected ccn, symccn or additive)");
}

const char* label_noise_name(LabelNoise m) {
  switch (m) {
    case LabelNoise::ccn: return "ccn";
    case LabelNoise::symmetric_ccn: return "symccn";
    case LabelNoise::additive: return "additive";
  }
  return "?";
}

Posterior parse_posterior(const std::string& s) {
  if (s == "logistic") return Posterior::logistic;
  if (s == "constant") return Posterior::constant;
  if (s == "step") return Posterior::step;
  throw std::invalid_argument("unknown posterior '" + s + "' (expected logistic, constant or step)");
}

const char* posterior_name(Posterior p) {
  switch (p) {
    case Posterior::logistic: return "logistic";
    case Posterior::constant: return "constant";
    case Posterior::step: return "step";
  }
  return "?";
}

FeatureDist parse_feature_dist(const std::string& s) {
  if (s == "normal") return FeatureDist::normal;
  if (s == "uniform") return FeatureDist::uniform;
  throw std::invalid_argument("unknown feature distribution '" + s + "' (expected normal or uniform)");
}

const char* feature_dist_name(FeatureDist d) { return d == FeatureDist::normal ? "normal" : "uniform"; }

void NoiseSpec::validate() const {
  auto prob = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(std::string(name) + " must lie in [0, 1]");
  };
  switch (model) {
    case LabelNoise::ccn:
      prob(rho0, "rho0");
      prob(rho1, "rho1");
      if (!(rho0 + rho1 < 1.0)) throw std::invalid_argument("ccn requires rho0 + rho1 < 1");
      break;
    case LabelNoise::symmetric_ccn:
      prob(rho, "rho");
      if (!(rho < 0.5)) throw std::invalid_argument("symmetric ccn requires rho < 0.5");
      break;
    case LabelNoise::additive:
      if (!(mu1 > mu0)) throw std::invalid_argument("additive model requires mu1 > mu0");
      if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale))
        throw std::invalid_argument("additive noise scale must be finite and non-negative");
      break;
  }
  if (posterior == Posterior::logistic && !(slope > 0.0 && std::isfinite(slope)))
    throw std::invalid_argument("logistic slope must be positive");
  if (posterior == Posterior::constant) prob(constant, "constant posterior");
}

double NoiseSpec::eta(double x) const {
  switch (posterior) {
    case Posterior::logistic: return 1.0 / (1.0 + std::exp(-slope * x));
    case Posterior::constant: return constant;
    case Posterior::step: return x > 0.0 ? 1.0 : 0.0;
  }
  return 0.0;
}

double NoiseSpec::affine(double e) const {
  switch (model) {
    case LabelNoise::ccn: return (1.0 - rho0 - rho1) * e + rho0;
    case LabelNoise::symmetric_ccn: return (1.0 - 2.0 * rho) * e + rho;
    case LabelNoise::additive: return mu0 + (mu1 - mu0) * e;
  }
  return 0.0;
}

double NoiseSpec::conditional_variance(double e) const {
  if (model == LabelNoise::additive) return noise_scale * noise_scale + (mu1 - mu0) * (mu1 - mu0) * e * (1.0 - e);
  const double p = affine(e);
  return p * (1.0 - p);
}

bool NoiseSpec::noiseless() const {
  switch (model) {
    case LabelNoise::ccn: return rho0 == 0.0 && rho1 == 0.0;
    case LabelNoise::symmetric_ccn: return rho == 0.0;
    case LabelNoise::additive: return noise_scale == 0.0;
  }
  return false;
}

NoiseTable simulate(const NoiseSpec& spec, std::size_t n, std::uint64_t seed, std::size_t shard_size) {
  spec.validate();
  if (n == 0) throw std::invalid_argument("simulate needs at least one sample");
  if (shard_size == 0) throw std::invalid_argument("shard size must be positive");
  NoiseTable t;
  t.x.resize(n);
  t.eta.resize(n);
  t.a.resize(n);
  t.y.resize(n);
  const RngStream root(seed, kNoiseStream);
  for (std::size_t begin = 0, shard = 0; begin < n; begin += shard_size, ++shard) {
    RngStream rng = root.derive(shard);
    const std::size_t end = std::min(n, begin + shard_size);
    for (std::size_t i = begin; i < end; ++i) {
      const double x = spec.feature == FeatureDist::normal ? rng.normal() : 2.0 * rng.uniform() - 1.0;
      const double e = spec.eta(x);
      const bool y = rng.bernoulli(e);
      double a = 0.0;
      switch (spec.model) {
        case LabelNoise::ccn: {
          const double u = rng.uniform();
          a = y ? (u < spec.rho1 ? 0.0 : 1.0) : (u < spec.rho0 ? 1.0 : 0.0);
          break;
        }
        case LabelNoise::symmetric_ccn: a = (rng.uniform() < spec.rho) != y ? 1.0 : 0.0; break;
        case LabelNoise::additive:
          a = clamp01((y ? spec.mu1 : spec.mu0) + spec.noise_scale * rng.normal());
          break;
      }
      t.x[i] = x;
      t.eta[i] = e;
      t.y[i] = y ? 1 : 0;
      t.a[i] = a;
    }
  }
  return t;
}

AffinityReport conditional_mean_check(const NoiseTable& t, const NoiseSpec& spec, std::size_t bins,
                                      std::size_t min_count) {
  if (bins == 0) throw std::invalid_argument("need at least one bin");
  const auto idx = order_by_x(t);
  AffinityReport r;
  std::size_t within = 0;
  for (const auto& [lo, hi] : equal_count_bins(t.size(), bins)) {
    const std::size_t c = hi - lo;
    if (c < min_count || c == 0) {
      ++r.dropped_bins;
      continue;
    }
    BinRow row;
    row.bin = r.rows.size() + r.dropped_bins;
    row.x_lo = t.x[idx[lo]];
    row.x_hi = t.x[idx[hi - 1]];
    row.count = c;
    double se = 0.0, sa = 0.0;
    for (std::size_t k = lo; k < hi; ++k) {
      se += t.eta[idx[k]];
      sa += t.a[idx[k]];
    }
    row.mean_eta = se / static_cast<double>(c);
    row.mean_a = sa / static_cast<double>(c);
    double ss = 0.0;
    for (std::size_t k = lo; k < hi; ++k) ss += (t.a[idx[k]] - row.mean_a) * (t.a[idx[k]] - row.mean_a);
    const double var = c > 1 ? ss / static_cast<double>(c - 1) : 0.0;
    row.std_error = std::sqrt(var / static_cast<double>(c));
    row.predicted = spec.affine(row.mean_eta);
    row.gap = row.mean_a - row.predicted;
    row.within = std::abs(row.gap) <= std::max(3.0 * row.std_error, 1e-12);
    within += row.within;
    r.max_abs_gap = std::max(r.max_abs_gap, std::abs(row.gap));
    r.rows.push_back(row);
  }
  r.within_fraction = r.rows.empty() ? 0.0 : static_cast<double>(within) / static_cast<double>(r.rows.size());
  r.pass = !r.rows.empty() && r.within_fraction >= 0.95;
  return r;
}

Regressogram fit_regressogram(const NoiseTable& t, std::size_t bins) {
  if (t.size() == 0) throw std::invalid_argument("cannot fit an empty table");
  bins = std::min(std::max<std::size_t>(bins, 1), t.size());
  const auto idx = order_by_x(t);
  const auto ranges = equal_count_bins(t.size(), bins);

  // Pool adjacent violators over the weighted bin means.
  struct Block {
    double sum, weight;
    std::size_t first, last;
  };
  std::vector<Block> st;
  for (std::size_t b = 0; b < bins; ++b) {
    const auto [lo, hi] = ranges[b];
    double s = 0.0;
    for (std::size_t k = lo; k < hi; ++k) s += t.a[idx[k]];
    st.push_back({s, static_cast<double>(hi - lo), b, b});
    while (st.size() > 1 && st[st.size() - 2].sum / st[st.size() - 2].weight > st.back().sum / st.back().weight) {
      Block top = st.back();
      st.pop_back();
      st.back().sum += top.sum;
      st.back().weight += top.weight;
      st.back().last = top.last;
    }
  }

  Regressogram g;
  g.values.resize(bins);
  for (const auto& blk : st)
    for (std::size_t b = blk.first; b <= blk.last; ++b) g.values[b] = blk.sum / blk.weight;
  g.fitted.resize(t.size());
  for (std::size_t b = 0; b < bins; ++b) {
    const auto [lo, hi] = ranges[b];
    g.edges_hi.push_back(t.x[idx[hi - 1]]);
    for (std::size_t k = lo; k < hi; ++k) g.fitted[idx[k]] = g.values[b];
  }
  return g;
}

VarianceReport variance_reduction_check(const NoiseTable& t, const NoiseSpec& spec, std::size_t bins) {
  const Regressogram g = fit_regressogram(t, bins);
  VarianceReport r;
  const double n = static_cast<double>(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double h = spec.affine(t.eta[i]);
    r.mse_raw += (t.a[i] - h) * (t.a[i] - h);
    r.mse_fit += (g.fitted[i] - h) * (g.fitted[i] - h);
    r.expected_cond_var += spec.conditional_variance(t.eta[i]);
  }
  r.mse_raw /= n;
  r.mse_fit /= n;
  r.expected_cond_var /= n;
  r.noise_free = spec.noiseless();
  r.equality_case = r.mse_raw <= 1e-12;
  r.ordering = r.equality_case || r.mse_fit < r.mse_raw;

  // Non-decreasing in eta: compare fitted values across samples sorted by eta.
  std::vector<std::size_t> idx(t.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return t.eta[a] < t.eta[b] || (t.eta[a] == t.eta[b] && t.x[a] < t.x[b]);
  });
  r.monotone = true;
  double best_below = -1.0;  // max fitted value among strictly smaller eta
  double run_max = -1.0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (k > 0 && t.eta[idx[k]] != t.eta[idx[k - 1]]) best_below = std::max(best_below, run_max);
    if (g.fitted[idx[k]] < best_below) {
      r.monotone = false;
      break;
    }
    run_max = std::max(run_max, g.fitted[idx[k]]);
  }
  return r;
}

std::vector<double> default_threshold_grid() {
  std::vector<double> g;
  for (int k = 0; k <= 101; ++k) g.push_back(-0.005 + 0.01 * k);
  return g;
}

namespace {

// Lowest 0/1 error of "predict 1 iff score > t" over the grid; returns (error, threshold).
std::pair<double, double> best_threshold(const std::vector<double>& score, const std::vector<std::uint8_t>& y,
                                         std::vector<double> thr) {
  std::sort(thr.begin(), thr.end());
  // k = number of thresholds strictly below the score: the sample is predicted 1 for thr[0..k).
  std::vector<std::size_t> pos(thr.size() + 1, 0), neg(thr.size() + 1, 0);
  for (std::size_t i = 0; i < score.size(); ++i) {
    const std::size_t k = static_cast<std::size_t>(std::lower_bound(thr.begin(), thr.end(), score[i]) - thr.begin());
    (y[i] ? pos : neg)[k]++;
  }
  // error(t_j) = #{y=0, k > j} + #{y=1, k <= j}
  std::size_t neg_above = std::accumulate(neg.begin(), neg.end(), std::size_t{0});
  std::size_t pos_below = 0;
  double best = 2.0, best_t = thr.front();
  for (std::size_t j = 0; j < thr.size(); ++j) {
    neg_above -= neg[j];
    pos_below += pos[j];
    const double err = static_cast<double>(neg_above + pos_below) / static_cast<double>(score.size());
    if (err < best) {
      best = err;
      best_t = thr[j];
    }
  }
  return {best, best_t};
}

}  // namespace

ClassificationReport classification_comparison(const NoiseTable& t, const NoiseSpec& spec,
                                               const std::vector<double>& thresholds, std::size_t bins) {
  if (spec.model != LabelNoise::symmetric_ccn)
    throw std::invalid_argument("classification comparison is defined for the symmetric ccn model");
  if (thresholds.empty()) throw std::invalid_argument("threshold grid is empty");
  const Regressogram g = fit_regressogram(t, bins);
  ClassificationReport r;
  std::tie(r.error_raw, r.threshold_raw) = best_threshold(t.a, t.y, thresholds);
  std::tie(r.error_fit, r.threshold_fit) = best_threshold(g.fitted, t.y, thresholds);
  for (double e : t.eta) r.bayes_error += std::min(e, 1.0 - e);
  r.bayes_error /= static_cast<double>(t.size());
  r.fit_better = r.error_fit < r.error_raw;
  return r;
}

bool TheoryReport::pass() const { return affinity.pass && variance.ordering && variance.monotone; }

TheoryReport verify_theory(const NoiseSpec& spec, std::size_t n, std::uint64_t seed, std::size_t affinity_bins,
                           std::size_t fit_bins) {
  TheoryReport r;
  r.spec = spec;
  r.samples = n;
  r.seed = seed;
  const NoiseTable t = simulate(spec, n, seed);
  r.affinity = conditional_mean_check(t, spec, affinity_bins);
  r.variance = variance_reduction_check(t, spec, fit_bins);
  if (spec.model == LabelNoise::symmetric_ccn) {
    r.classified = true;
    r.classification = classification_comparison(t, spec, default_threshold_grid(), fit_bins);
  }
  return r;
}

void write_theory_report(const TheoryReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "theory_bins.csv", std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + (dir / "theory_bins.csv").string());
    f << "bin,x_lo,x_hi,count,mean_eta,mean_a,predicted,gap,std_error,within\n" << std::setprecision(17);
    for (const auto& b : r.affinity.rows)
      f << b.bin << ',' << b.x_lo << ',' << b.x_hi << ',' << b.count << ',' << b.mean_eta << ',' << b.mean_a << ','
        << b.predicted << ',' << b.gap << ',' << b.std_error << ',' << (b.within ? 1 : 0) << '\n';
  }
  const NoiseSpec& s = r.spec;
  nlohmann::json spec{{"model", label_noise_name(s.model)},
                      {"posterior", posterior_name(s.posterior)},
                      {"feature", feature_dist_name(s.feature)}};
  switch (s.model) {
    case LabelNoise::ccn: spec["rho0"] = s.rho0, spec["rho1"] = s.rho1; break;
    case LabelNoise::symmetric_ccn: spec["rho"] = s.rho; break;
    case LabelNoise::additive: spec["mu0"] = s.mu0, spec["mu1"] = s.mu1, spec["noise_scale"] = s.noise_scale; break;
  }
  if (s.posterior == Posterior::logistic) spec["slope"] = s.slope;
  if (s.posterior == Posterior::constant) spec["constant"] = s.constant;
  nlohmann::json j{{"spec", spec},
                   {"samples", r.samples},
                   {"seed", r.seed},
                   {"affinity",
                    {{"bins", r.affinity.rows.size()},
                     {"dropped_bins", r.affinity.dropped_bins},
                     {"max_abs_gap", r.affinity.max_abs_gap},
                     {"within_fraction", r.affinity.within_fraction},
                     {"pass", r.affinity.pass}}},
                   {"variance",
                    {{"mse_raw", r.variance.mse_raw},
                     {"mse_fit", r.variance.mse_fit},
                     {"expected_conditional_variance", r.variance.expected_cond_var},
                     {"equality_case", r.variance.equality_case},
                     {"noise_free", r.variance.noise_free},
                     {"ordering", r.variance.ordering},
                     {"monotone", r.variance.monotone}}},
                   {"pass", r.pass()}};
  if (r.classified)
    j["classification"] = {{"error_raw", r.classification.error_raw},
                           {"threshold_raw", r.classification.threshold_raw},
                           {"error_fit", r.classification.error_fit},
                           {"threshold_fit", r.classification.threshold_fit},
                           {"bayes_error", r.classification.bayes_error},
                           {"fit_better", r.classification.fit_better}};
  std::ofstream f(dir / "theory.json", std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + (dir / "theory.json").string());
  f << j.dump(2) << "\n";
}

}  // namespace sdrpn
