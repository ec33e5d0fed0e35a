// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   acceptance [--work DIR] [--only 1,4,...]
//
// --work keeps the benchmark artifacts (default: a temporary directory that is removed).

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "oracles.hpp"
#include "sdrpn/grid.hpp"
#include "sdrpn/noise.hpp"
#include "sdrpn/pipeline.hpp"
#include "sdrpn/pseudo_label.hpp"
#include "sdrpn/roi.hpp"
#include "sdrpn/student.hpp"
#include "sdrpn/teacher.hpp"
#include "test_util.hpp"

using namespace sdrpn;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v, int prec = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << v;
  return s.str();
}

// ---- 1: pseudo-label oracle equivalence ---------------------------------------------------

Outcome pseudo_label_oracle() {
  const auto t0 = Clock::now();
  RngStream rng(0xacce55, 1);
  std::size_t mismatches = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t h = 2 + rng.below(15), w = 2 + rng.below(15);
    RealMap m(h, w);
    for (auto& v : m.data) {
      const auto k = rng.below(10);
      v = k == 0 ? 0.0 : k == 1 ? 0.5 : rng.uniform();
    }
    LabelThresholds t;
    do {
      const double a = rng.uniform(), b = rng.uniform();
      t.tau_fg = std::max(a, b);
      t.tau_bg = std::min(a, b);
    } while (!(t.tau_bg < t.tau_fg));
    if (assign_labels(m, t).labels != oracle::brute_force_labels(m, t.tau_fg, t.tau_bg)) ++mismatches;
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 10.0,
          std::to_string(mismatches) + "/1000 mismatches, " + num(secs, 2) + " s"};
}

// ---- 2: sink-removal exactness ----------------------------------------------------------------

Outcome sink_removal_exactness() {
  const auto t0 = Clock::now();
  TeacherConfig cfg;
  cfg.sink_multiplier = 4.0;
  cfg.sink_count = 3;
  std::size_t exact = 0;
  for (std::uint64_t id = 0; id < 1000; ++id) {
    const auto s = generate_sample(cfg, id);
    const auto r = remove_sink_tokens(s.roi_maps[0], s.feats.features, NormThreshold::automatic());
    exact += r.zeroed == s.feats.sinks;
  }
  const double secs = seconds_since(t0);
  return {exact >= 990 && secs < 30.0, std::to_string(exact) + "/1000 exact at multiplier 4 with 3 sinks, " +
                                           num(secs, 2) + " s"};
}

// ---- 3: gradient correctness --------------------------------------------------------------------

double summed_loss(const StudentModel& m, const Mat& frozen, std::size_t n_vis, const ExampleTargets& t, LossKind k) {
  const Mat logits = predict_from_frozen(m, frozen, n_vis);
  return (k == LossKind::bce ? masked_bce_terms(logits, t.targets, t.valid)
                             : masked_mse_terms(logits, t.targets, t.valid))
      .sum;
}

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  constexpr double h = 1e-5;
  double worst = 0.0;
  std::size_t groups = 0;
  bool ignored_exact = true;
  const int configs = 24;
  for (int trial = 0; trial < configs; ++trial) {
    RngStream rng(0xacce55 + 3, static_cast<std::uint64_t>(trial));
    StudentConfig cfg;
    cfg.heads = 1 + static_cast<std::uint32_t>(rng.below(2));
    cfg.d_model = cfg.heads * (2 + static_cast<std::uint32_t>(rng.below(3)));
    cfg.mlp_ratio = 1 + static_cast<std::uint32_t>(rng.below(2));
    cfg.trainable = 1 + static_cast<std::uint32_t>(rng.below(3));
    cfg.frozen = static_cast<std::uint32_t>(rng.below(2));
    cfg.depth = cfg.frozen + cfg.trainable + static_cast<std::uint32_t>(rng.below(2));
    cfg.turns = 1 + static_cast<std::uint32_t>(rng.below(2));
    const auto kind = trial % 3 == 2 ? LossKind::mse : LossKind::bce;
    const std::uint32_t fdim = 2 + static_cast<std::uint32_t>(rng.below(3));
    const Eigen::Index n_vis = 3 + static_cast<Eigen::Index>(rng.below(5));

    auto m = StudentModel::from_teacher(StudentModel::init_teacher(cfg, fdim, static_cast<std::uint64_t>(trial)), cfg);
    for (auto& p : m.params())
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] += 0.2 * rng.normal();
    StudentInput in{Mat(n_vis, fdim), Mat(cfg.turns, fdim)};
    for (Eigen::Index i = 0; i < in.visual.size(); ++i) in.visual.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < in.queries.size(); ++i) in.queries.data()[i] = rng.normal();
    const Mat frozen = frozen_backbone(m, in);

    ExampleTargets t{Mat(cfg.turns, n_vis), Mat(cfg.turns, n_vis)};
    for (Eigen::Index i = 0; i < t.targets.size(); ++i) {
      t.targets.data()[i] = trial % 4 == 3 ? rng.uniform() : static_cast<double>(rng.below(2));
      t.valid.data()[i] = rng.below(4) == 0 ? 0.0 : 1.0;
    }
    t.valid(0, 0) = 1.0;
    t.valid(0, n_vis - 1) = 0.0;

    Gradients g;
    g.zero_like(m);
    forward_backward(m, frozen, static_cast<std::size_t>(n_vis), t, kind, g);

    // Rewriting targets at ignored positions must leave every gradient bit-identical.
    ExampleTargets t2 = t;
    for (Eigen::Index i = 0; i < t2.targets.size(); ++i)
      if (t2.valid.data()[i] == 0.0) t2.targets.data()[i] = 1.0 - t2.targets.data()[i] + 0.37;
    Gradients g2;
    g2.zero_like(m);
    forward_backward(m, frozen, static_cast<std::size_t>(n_vis), t2, kind, g2);
    for (std::size_t pi = 0; pi < g.g.size(); ++pi) ignored_exact &= g.g[pi] == g2.g[pi];

    // A fully ignored example contributes exactly zero.
    ExampleTargets none{t.targets, Mat::Zero(t.valid.rows(), t.valid.cols())};
    Gradients gz;
    gz.zero_like(m);
    forward_backward(m, frozen, static_cast<std::size_t>(n_vis), none, kind, gz);
    for (const auto& x : gz.g) ignored_exact &= x.isZero(0.0);

    for (std::size_t pi = 0; pi < m.params().size(); ++pi) {
      auto& p = m.params()[pi];
      if (!p.trainable) continue;
      ++groups;
      for (Eigen::Index i = 0; i < p.value.size(); ++i) {
        const double w0 = p.value.data()[i];
        p.value.data()[i] = w0 + h;
        const double up = summed_loss(m, frozen, static_cast<std::size_t>(n_vis), t, kind);
        p.value.data()[i] = w0 - h;
        const double dn = summed_loss(m, frozen, static_cast<std::size_t>(n_vis), t, kind);
        p.value.data()[i] = w0;
        worst = std::max(worst, oracle::relative_error(g.g[pi].data()[i], (up - dn) / (2 * h)));
      }
    }
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << configs << " configs, " << groups << " trainable tensors, max rel error " << std::scientific
    << std::setprecision(2) << worst << ", ignored positions " << (ignored_exact ? "exactly zero" : "LEAK") << ", "
    << std::fixed << std::setprecision(1) << secs << " s";
  return {worst < 1e-5 && ignored_exact && secs < 120.0, d.str()};
}

// ---- 4-6: benchmark ---------------------------------------------------------------------------------

struct BenchResult {
  std::map<std::uint64_t, std::map<std::string, RunSummary>> runs;  // seed -> arm -> summary
  std::map<std::uint64_t, double> seconds;
};

BenchResult run_benchmark(const fs::path& work) {
  BenchConfig cfg;
  cfg.student = benchmark_student_config();
  BenchResult out;
  std::vector<RunSummary> all;
  for (const auto seed : cfg.seeds) {
    BenchConfig one = cfg;
    one.seeds = {seed};
    const auto t0 = Clock::now();
    for (auto& s : run_bench(one, work)) {
      out.runs[seed][s.arm] = s;
      all.push_back(s);
    }
    out.seconds[seed] = seconds_since(t0);
    std::cout << "  seed " << seed << " (" << num(out.seconds[seed], 1) << " s):";
    for (const auto& [arm, s] : out.runs[seed]) std::cout << " " << arm << "=" << num(s.mean_iou, 3);
    std::cout << std::endl;
  }
  write_report_csv(all, work / "report.csv");
  return out;
}

Outcome beats_raw_attention(const BenchResult& b) {
  double diff = 0.0, worst_secs = 0.0;
  std::ostringstream d;
  for (const auto& [seed, arms] : b.runs) {
    const double student = arms.at("masked-upscale").mean_iou, raw = arms.at("raw-attention").mean_iou;
    diff += student - raw;
    worst_secs = std::max(worst_secs, b.seconds.at(seed));
    d << "s" << seed << " " << num(student, 3) << " vs " << num(raw, 3) << "; ";
  }
  diff /= static_cast<double>(b.runs.size());
  d << "mean gain " << num(diff, 3) << ", slowest seed " << num(worst_secs, 0) << " s";
  return {diff >= 0.05 && worst_secs < 300.0, d.str()};
}

Outcome label_assignment_beats_regression(const BenchResult& b) {
  std::size_t strict = 0;
  bool never_worse = true;
  std::ostringstream d;
  for (const auto& [seed, arms] : b.runs) {
    const double la = arms.at("label-assign").mean_iou, mse = arms.at("attn-prediction").mean_iou;
    strict += la > mse;
    never_worse &= la >= mse;
    d << "s" << seed << " " << num(la, 3) << " vs " << num(mse, 3) << "; ";
  }
  d << strict << "/" << b.runs.size() << " strict";
  return {never_worse && strict >= 4, d.str()};
}

Outcome pre_vs_post_smoothing(const BenchResult& b) {
  bool all = true;
  std::ostringstream d;
  for (const auto& [seed, arms] : b.runs) {
    const double pre = arms.at("pre-smoothing").converged_loss, post = arms.at("remove-sink").converged_loss;
    all &= pre > post;
    d << "s" << seed << " " << num(pre) << " > " << num(post) << (pre > post ? "" : " (violated)") << "; ";
  }
  return {all, d.str()};
}

// ---- 7: noise theory ---------------------------------------------------------------------------------

Outcome noise_theory() {
  const auto t0 = Clock::now();
  NoiseSpec ccn;
  ccn.model = LabelNoise::ccn;
  ccn.rho0 = 0.1;
  ccn.rho1 = 0.2;
  NoiseSpec sym;
  sym.model = LabelNoise::symmetric_ccn;
  sym.rho = 0.1;
  NoiseSpec add;
  add.model = LabelNoise::additive;
  add.mu0 = 0.2;
  add.mu1 = 0.8;
  add.noise_scale = 0.05;
  NoiseSpec sym3 = sym;
  sym3.rho = 0.3;

  constexpr std::size_t n = 1000000;
  bool affinity = true, ordering = true;
  std::ostringstream d;
  for (const auto& [name, spec] : {std::pair{"ccn", ccn}, {"symccn", sym}, {"additive", add}}) {
    const auto t = simulate(spec, n, 7);
    const auto a = conditional_mean_check(t, spec, 20);
    const auto v = variance_reduction_check(t, spec, 50);
    affinity &= a.pass;
    ordering &= v.mse_fit < v.mse_raw;
    d << name << " within3se " << num(a.within_fraction, 2) << " mse " << std::scientific << std::setprecision(1)
      << v.mse_fit << "<" << v.mse_raw << std::fixed << "; ";
  }
  const auto c = classification_comparison(simulate(sym3, n, 8), sym3);
  const double secs = seconds_since(t0);
  d << "rho=0.3 error " << num(c.error_fit) << " < " << num(c.error_raw) << ", " << num(secs, 1) << " s";
  return {affinity && ordering && c.error_fit < c.error_raw && secs < 60.0, d.str()};
}

// ---- 8: geometry -------------------------------------------------------------------------------------------

Outcome geometry() {
  RngStream rng(0xacce55, 8);
  std::size_t bad = 0;
  for (int i = 0; i < 1000; ++i) {
    BinaryMask m(1 + rng.below(16), 1 + rng.below(16));
    const double p = rng.uniform();
    for (auto& v : m.data) v = rng.bernoulli(p) ? 1 : 0;
    const auto regs = connected_components(m);
    std::vector<int> owner(m.size(), -1);
    bool ok = true;
    for (std::size_t r = 0; r < regs.size(); ++r)
      for (const auto& t : regs[r].tokens) {
        const std::size_t k = t.r * m.cols + t.c;
        ok &= m.data[k] == 1 && owner[k] == -1;
        owner[k] = static_cast<int>(r);
      }
    for (std::size_t k = 0; k < m.size(); ++k) ok &= (m.data[k] == 1) == (owner[k] >= 0);
    if (!regs.empty()) {
      const auto all = masked_upscale(regs, m);
      for (const auto& b : box_upscale(regs, m.rows, m.cols).boxes)
        ok &= all.b_all->contains(b.r0, b.c0) && all.b_all->contains(b.r1, b.c1);
      ok &= iou(m, m) == 1.0;
      ok &= iou(*all.b_all, *all.b_all) == 1.0;
      BinaryMask inv = m;
      for (auto& v : inv.data) v = 1 - v;
      ok &= iou(m, inv) == 0.0;
    }
    bad += !ok;
  }
  const double seventh = iou(TokenBox{0, 0, 1, 1}, TokenBox{1, 1, 2, 2});
  const bool boxes_ok = iou(TokenBox{0, 0, 1, 1}, TokenBox{3, 3, 4, 4}) == 0.0 && seventh == 1.0 / 7.0;
  return {bad == 0 && boxes_ok,
          std::to_string(bad) + "/1000 masks violate partition or enclosure; (0,0,1,1) vs (1,1,2,2) = " +
              num(seventh, 17)};
}

// ---- 9: reproducibility -----------------------------------------------------------------------------------

Outcome reproducibility(const fs::path& work) {
  BenchConfig cfg;
  cfg.teacher.height = cfg.teacher.width = 10;
  cfg.student = benchmark_student_config();
  cfg.student.total_steps = 4;
  cfg.train_samples = 24;
  cfg.eval_samples = 8;
  cfg.seeds = {11};
  run_bench(cfg, work / "a");
  run_bench(cfg, work / "b");
  std::size_t grids = 0, checkpoints = 0, differ = 0;
  for (const auto& e : fs::recursive_directory_iterator(work / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), work / "a");
    grids += e.path().extension() == ".grid";
    checkpoints += e.path().filename() == "meta.json";
    if (!fs::exists(work / "b" / rel) || hash_file(e.path()) != hash_file(work / "b" / rel)) ++differ;
  }
  const bool same = hash_tree(work / "a") == hash_tree(work / "b");
  return {same && differ == 0 && grids > 0 && checkpoints > 0,
          std::to_string(grids) + " grid files and " + std::to_string(checkpoints) + " checkpoints, " +
              std::to_string(differ) + " differing files"};
}

// ---- 10: format round trip ----------------------------------------------------------------------------------

Outcome format_round_trip(const fs::path& work) {
  RngStream rng(0xacce55, 10);
  std::size_t bad = 0, negative_i8 = 0;
  fs::create_directories(work);
  for (int i = 0; i < 1000; ++i) {
    const Grid g = test::random_grid(rng);
    if (g.dtype() == DType::i8)
      for (auto v : g.values<std::int8_t>()) negative_i8 += v < 0;
    const fs::path p = work / ("g" + std::to_string(i) + ".grid");
    write_grid(g, p);
    const Grid back = read_grid(p);
    bad += !(back == g) || encode_grid(back) != encode_grid(g);
  }
  return {bad == 0 && negative_i8 > 0,
          std::to_string(bad) + "/1000 mismatches, " + std::to_string(negative_i8) + " negative i8 values"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-10"};
  std::string work_arg;
  std::vector<int> only;
  app.add_option("--work", work_arg, "Keep artifacts under this directory");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  std::optional<test::TempDir> tmp;
  fs::path work;
  if (work_arg.empty()) {
    tmp.emplace("sdrpn-acceptance");
    work = tmp->path;
  } else {
    work = work_arg;
    fs::create_directories(work);
  }
  const std::set<int> selected(only.begin(), only.end());
  auto wanted = [&](int k) { return selected.empty() || selected.count(k); };

  int failed = 0, ran = 0;
  auto report = [&](int k, const std::string& title, const Outcome& o) {
    ++ran;
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << k << ": " << title << " -- " << o.detail << std::endl;
  };
  auto guarded = [&](int k, const std::string& title, const std::function<Outcome()>& f) {
    if (!wanted(k)) return;
    try {
      report(k, title, f());
    } catch (const std::exception& e) {
      report(k, title, {false, std::string("exception: ") + e.what()});
    }
  };

  guarded(1, "pseudo-label oracle equivalence", pseudo_label_oracle);
  guarded(2, "sink-removal exactness", sink_removal_exactness);
  guarded(3, "gradient correctness", gradient_correctness);

  if (wanted(4) || wanted(5) || wanted(6)) {
    std::optional<BenchResult> bench;
    std::string error;
    try {
      std::cout << "running the 256-sample benchmark over seeds 1-5" << std::endl;
      bench = run_benchmark(work / "bench");
    } catch (const std::exception& e) {
      error = std::string("benchmark failed: ") + e.what();
    }
    auto bench_guard = [&](int k, const std::string& title, Outcome (*f)(const BenchResult&)) {
      if (!wanted(k)) return;
      if (!bench) return report(k, title, {false, error});
      report(k, title, f(*bench));
    };
    bench_guard(4, "self-distillation beats raw attention", beats_raw_attention);
    bench_guard(5, "label assignment beats MSE regression", label_assignment_beats_regression);
    bench_guard(6, "pre-smoothing converges to a higher masked loss than post-smoothing", pre_vs_post_smoothing);
  }

  guarded(7, "noise-theory verification", noise_theory);
  guarded(8, "geometry correctness", geometry);
  guarded(9, "reproducibility", [&] { return reproducibility(work / "repro"); });
  guarded(10, "format round trip", [&] { return format_round_trip(work / "grids"); });

  std::cout << (ran - failed) << "/" << ran << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
