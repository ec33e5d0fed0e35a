#include <doctest.h>

#include <cmath>
#include <fstream>

#include "sdrpn/noise.hpp"
#include "sdrpn/rng.hpp"
#include "test_util.hpp"

using namespace sdrpn;

namespace {

NoiseSpec ccn(double r0, double r1) {
  NoiseSpec s;
  s.model = LabelNoise::ccn;
  s.rho0 = r0;
  s.rho1 = r1;
  return s;
}

NoiseSpec symccn(double rho) {
  NoiseSpec s;
  s.model = LabelNoise::symmetric_ccn;
  s.rho = rho;
  return s;
}

NoiseSpec additive(double mu0, double mu1, double sd) {
  NoiseSpec s;
  s.model = LabelNoise::additive;
  s.mu0 = mu0;
  s.mu1 = mu1;
  s.noise_scale = sd;
  return s;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Error of "score > t" at a single threshold, counted directly.
double error_at(const std::vector<double>& score, const std::vector<std::uint8_t>& y, double t) {
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < score.size(); ++i) wrong += (score[i] > t) != (y[i] == 1);
  return static_cast<double>(wrong) / static_cast<double>(score.size());
}

}  // namespace

TEST_CASE("noise spec validation") {
  CHECK_THROWS_AS(ccn(0.6, 0.6).validate(), std::invalid_argument);
  CHECK_THROWS_AS(ccn(-0.1, 0.2).validate(), std::invalid_argument);
  CHECK_THROWS_AS(symccn(0.5).validate(), std::invalid_argument);
  CHECK_THROWS_AS(additive(0.8, 0.2, 0.05).validate(), std::invalid_argument);
  CHECK_THROWS_AS(additive(0.2, 0.8, -1.0).validate(), std::invalid_argument);
  NoiseSpec s = ccn(0.1, 0.2);
  s.slope = 0.0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  CHECK_THROWS_AS(simulate(ccn(0.1, 0.2), 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(parse_label_noise("gaussian"), std::invalid_argument);
  CHECK(parse_label_noise("symccn") == LabelNoise::symmetric_ccn);
  CHECK_NOTHROW(ccn(0.1, 0.2).validate());
}

TEST_CASE("simulate: closed-form means") {
  SUBCASE("no noise and eta = 1 gives A = 1") {
    NoiseSpec s = symccn(0.0);
    s.posterior = Posterior::constant;
    s.constant = 1.0;
    const auto t = simulate(s, 10000, 3);
    for (double a : t.a) REQUIRE(a == 1.0);
  }
  SUBCASE("ccn(0.1, 0.2) with eta = 0.5") {
    NoiseSpec s = ccn(0.1, 0.2);
    s.posterior = Posterior::constant;
    s.constant = 0.5;
    const std::size_t n = 200000;
    const double sd = std::sqrt(0.45 * 0.55 / n);
    CHECK(std::abs(mean(simulate(s, n, 5).a) - 0.45) < 3 * sd);
  }
  SUBCASE("symmetric ccn(0.1) with eta = 0.7") {
    NoiseSpec s = symccn(0.1);
    s.posterior = Posterior::constant;
    s.constant = 0.7;
    const std::size_t n = 200000;
    const double sd = std::sqrt(0.66 * 0.34 / n);
    CHECK(std::abs(mean(simulate(s, n, 6).a) - 0.66) < 3 * sd);
  }
  SUBCASE("additive activations stay in [0, 1]") {
    const auto t = simulate(additive(0.05, 0.95, 0.3), 20000, 7);
    for (double a : t.a) REQUIRE((a >= 0.0 && a <= 1.0));
  }
}

TEST_CASE("simulate is deterministic and shard-stable") {
  const NoiseSpec s = ccn(0.1, 0.2);
  const auto a = simulate(s, 5000, 11, 1024);
  const auto b = simulate(s, 5000, 11, 1024);
  const auto longer = simulate(s, 9000, 11, 1024);
  CHECK(a.x == b.x);
  CHECK(a.a == b.a);
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a.x[i] == longer.x[i]);
    REQUIRE(a.a[i] == longer.a[i]);
  }
  CHECK(simulate(s, 5000, 12, 1024).x != a.x);
}

TEST_CASE("conditional mean is affine in eta") {
  SUBCASE("ccn(0.1, 0.2)") {
    const auto t = simulate(ccn(0.1, 0.2), 1000000, 1);
    const auto r = conditional_mean_check(t, ccn(0.1, 0.2), 20);
    CHECK(r.rows.size() == 20);
    CHECK(r.dropped_bins == 0);
    CHECK(r.max_abs_gap < 0.02);
    CHECK(r.pass);
    for (const auto& b : r.rows) CHECK(b.count >= 100);
  }
  SUBCASE("noiseless: bin mean of A tracks mean eta") {
    const auto t = simulate(ccn(0.0, 0.0), 200000, 2);
    const auto r = conditional_mean_check(t, ccn(0.0, 0.0), 20);
    for (const auto& b : r.rows) CHECK(b.predicted == doctest::Approx(b.mean_eta).epsilon(1e-15));
    CHECK(r.pass);
  }
  SUBCASE("additive(0.2, 0.8, 0.05)") {
    const auto s = additive(0.2, 0.8, 0.05);
    const auto r = conditional_mean_check(simulate(s, 1000000, 3), s, 20);
    CHECK(r.max_abs_gap < 0.02);
    CHECK(r.pass);
  }
  SUBCASE("a wrong closed form is detected") {
    const auto t = simulate(ccn(0.1, 0.2), 200000, 4);
    CHECK_FALSE(conditional_mean_check(t, ccn(0.2, 0.1), 20).pass);
  }
  SUBCASE("bins below the minimum count are dropped") {
    const auto t = simulate(ccn(0.1, 0.2), 1000, 4);
    const auto r = conditional_mean_check(t, ccn(0.1, 0.2), 20, 100);
    CHECK(r.rows.empty());
    CHECK(r.dropped_bins == 20);
    CHECK_FALSE(r.pass);
  }
}

TEST_CASE("regressogram is monotone and mean-preserving") {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    RngStream rng(seed, 77);
    NoiseSpec s = symccn(0.45 * rng.uniform());
    s.slope = 0.5 + 6.0 * rng.uniform();
    const std::size_t n = 200 + rng.below(3000);
    const auto t = simulate(s, n, seed);
    const std::size_t bins = 1 + rng.below(60);
    const auto g = fit_regressogram(t, bins);
    for (std::size_t b = 1; b < g.values.size(); ++b) REQUIRE(g.values[b - 1] <= g.values[b]);
    double sa = 0.0, sf = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sa += t.a[i];
      sf += g.fitted[i];
    }
    CHECK(sf == doctest::Approx(sa).epsilon(1e-12));
    CHECK(variance_reduction_check(t, s, bins).monotone);
  }
}

TEST_CASE("variance reduction") {
  SUBCASE("symmetric ccn(0.1) has positive conditional variance") {
    const auto s = symccn(0.1);
    const auto r = variance_reduction_check(simulate(s, 200000, 8), s);
    CHECK(r.expected_cond_var > 0.0);
    CHECK(r.mse_raw == doctest::Approx(r.expected_cond_var).epsilon(0.02));
    CHECK(r.ordering);
    CHECK_FALSE(r.equality_case);
  }
  SUBCASE("zero noise with a deterministic posterior is the equality case") {
    NoiseSpec s = ccn(0.0, 0.0);
    s.posterior = Posterior::step;
    const auto r = variance_reduction_check(simulate(s, 100000, 9), s);
    CHECK(r.mse_raw == 0.0);
    CHECK(r.equality_case);
    CHECK(r.noise_free);
    CHECK(r.ordering);
  }
  SUBCASE("ccn(0.1, 0.2): the fit removes most of the error") {
    const auto s = ccn(0.1, 0.2);
    const auto r = variance_reduction_check(simulate(s, 1000000, 10), s, 50);
    CHECK(r.mse_fit < 0.2 * r.mse_raw);
    CHECK(r.ordering);
    CHECK(r.monotone);
  }
}

TEST_CASE("best threshold matches a direct scan") {
  const auto s = symccn(0.2);
  const auto t = simulate(s, 3000, 21);
  const auto grid = default_threshold_grid();
  const auto r = classification_comparison(t, s, grid, 17);
  const auto g = fit_regressogram(t, 17);
  double best_raw = 2.0, best_fit = 2.0;
  for (double th : grid) {
    best_raw = std::min(best_raw, error_at(t.a, t.y, th));
    best_fit = std::min(best_fit, error_at(g.fitted, t.y, th));
  }
  CHECK(r.error_raw == best_raw);
  CHECK(r.error_fit == best_fit);
  CHECK(error_at(t.a, t.y, r.threshold_raw) == best_raw);
}

TEST_CASE("classification: fitted predictor against raw activations") {
  SUBCASE("rho = 0.3 with a logistic posterior") {
    const auto s = symccn(0.3);
    const auto r = classification_comparison(simulate(s, 1000000, 12), s);
    CHECK(r.error_fit < r.error_raw);
    CHECK(r.error_raw == doctest::Approx(0.3).epsilon(0.01));
    CHECK(r.error_fit >= r.bayes_error - 0.005);
  }
  SUBCASE("rho = 0 with a deterministic posterior: both are exact") {
    NoiseSpec s = symccn(0.0);
    s.posterior = Posterior::step;
    const auto r = classification_comparison(simulate(s, 100000, 13), s);
    CHECK(r.error_raw == 0.0);
    CHECK(r.bayes_error == 0.0);
    CHECK(r.error_fit < 0.01);
  }
  SUBCASE("rho near 1/2: raw activations carry no information") {
    const auto s = symccn(0.499);
    const auto r = classification_comparison(simulate(s, 200000, 14), s);
    CHECK(r.error_raw > 0.49);
  }
  SUBCASE("other noise models are rejected") {
    const auto s = ccn(0.1, 0.2);
    CHECK_THROWS_AS(classification_comparison(simulate(s, 1000, 1), s), std::invalid_argument);
  }
}

TEST_CASE("verify_theory writes its report") {
  test::TempDir dir;
  const auto r = verify_theory(symccn(0.3), 100000, 1);
  CHECK(r.pass());
  CHECK(r.classified);
  write_theory_report(r, dir.path);
  std::ifstream csv(dir.path / "theory_bins.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "bin,x_lo,x_hi,count,mean_eta,mean_a,predicted,gap,std_error,within");
  std::size_t lines = 0;
  for (std::string l; std::getline(csv, l);) ++lines;
  CHECK(lines == r.affinity.rows.size());
  CHECK(std::filesystem::exists(dir.path / "theory.json"));
}
