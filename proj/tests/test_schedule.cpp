#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tcdiff/schedule.hpp"

using namespace tcdiff;

namespace {
NoiseSchedule default_sched() { return NoiseSchedule(25.0, 100, 20, 80); }
}  // namespace

TEST_CASE("construction guards") {
    CHECK_THROWS_AS(NoiseSchedule(1.0, 100, 20, 80), ConfigError);
    CHECK_THROWS_AS(NoiseSchedule(25.0, 100, 80, 20), ConfigError);
    CHECK_THROWS_AS(NoiseSchedule(25.0, 100, 0, 80), ConfigError);
    CHECK_THROWS_AS(NoiseSchedule(25.0, 100, 20, 100), ConfigError);
}

TEST_CASE("var[0] = 0 and marginal_std at T") {
    auto s = default_sched();
    CHECK(s.var(0) == 0.0);
    CHECK(s.marginal_std(0) == 0.0);
    // oracle: numerically integrate int_0^1 sigma^{2u} du by fine trapezoid,
    // which equals (sigma^2 - 1)/(2 ln sigma) = var(T)
    const int steps = 2'000'000;
    double integral = 0.0;
    for (int i = 0; i < steps; ++i) {
        double u0 = static_cast<double>(i) / steps, u1 = static_cast<double>(i + 1) / steps;
        integral += 0.5 * (std::pow(25.0, 2 * u0) + std::pow(25.0, 2 * u1)) / steps;
    }
    CHECK(s.var(100) == doctest::Approx(integral).epsilon(1e-6));
    CHECK(s.marginal_std(100) == doctest::Approx(9.8452).epsilon(1e-4));
}

TEST_CASE("marginal_std strictly increasing") {
    auto s = default_sched();
    for (int t = 0; t < 100; ++t) CHECK(s.marginal_std(t) < s.marginal_std(t + 1));
}

TEST_CASE("step range guarded") {
    auto s = default_sched();
    CHECK_THROWS_AS(s.var(-1), ConfigError);
    CHECK_THROWS_AS(s.var(101), ConfigError);
    CHECK_THROWS_AS(s.stage_of(0), ConfigError);
}

TEST_CASE("stage boundaries belong to the lower stage") {
    auto s = default_sched();
    CHECK(s.stage_of(1) == Stage::Target);
    CHECK(s.stage_of(20) == Stage::Target);
    CHECK(s.stage_of(21) == Stage::Bridging);
    CHECK(s.stage_of(80) == Stage::Bridging);
    CHECK(s.stage_of(81) == Stage::Reference);
    CHECK(s.stage_of(100) == Stage::Reference);
}

TEST_CASE("phi ramp") {
    auto s = default_sched();
    CHECK(s.phi(20) == 0.0);
    CHECK(s.phi(80) == 1.0);
    CHECK(s.phi(50) == 0.5);
    CHECK(s.phi(0) == 0.0);
    CHECK(s.phi(100) == 1.0);
    for (int t = 0; t < 100; ++t) CHECK(s.phi(t) <= s.phi(t + 1));
}

TEST_CASE("cascade_mean stage limits") {
    auto s = default_sched();
    Matrix x0 = Matrix::Constant(2, 3, 1.5);
    Matrix r1 = Matrix::Constant(2, 3, -2.0);
    Matrix r2 = Matrix::Constant(2, 3, 4.0);
    CHECK(s.cascade_mean(20, x0, r1, r2, 0.3) == x0);
    CHECK(s.cascade_mean(95, x0, r1, r2, 1.0) == r1);
    // midway, alpha=0.5, target 0, refs 2 and 4 -> 1.5
    Matrix z = Matrix::Zero(1, 1);
    Matrix a = Matrix::Constant(1, 1, 2.0), b = Matrix::Constant(1, 1, 4.0);
    CHECK(s.cascade_mean(50, z, a, b, 0.5)(0, 0) == doctest::Approx(1.5));
    CHECK_THROWS_AS(s.cascade_mean(50, z, r1, r2, 0.5), DimensionError);
}

TEST_CASE("cascade_mean one-sided limits agree exactly at t1 and t2") {
    auto s = default_sched();
    Matrix x0 = Matrix::Constant(1, 4, 0.7);
    Matrix r1 = Matrix::Constant(1, 4, -1.1);
    Matrix r2 = Matrix::Constant(1, 4, 2.2);
    double alpha = 0.37;
    // continuity in the ramp: evaluating the bridging formula at the boundary
    // steps must equal the adjacent stages' constants
    CHECK(s.cascade_mean(20, x0, r1, r2, alpha) == s.cascade_mean(19, x0, r1, r2, alpha));
    CHECK(s.cascade_mean(80, x0, r1, r2, alpha) == s.cascade_mean(81, x0, r1, r2, alpha));
    CHECK(s.cascade_mean(80, x0, r1, r2, alpha) ==
          (alpha * r1 + (1 - alpha) * r2).eval());
}

TEST_CASE("forward_perturb at t=0 returns mu exactly") {
    auto s = default_sched();
    Matrix mu = Matrix::Constant(2, 2, 3.14);
    Matrix noise = Matrix::Constant(2, 2, 1.0);
    CHECK(s.forward_perturb(0, mu, noise) == mu);
}

TEST_CASE("forward_perturb Monte Carlo moments") {
    auto s = default_sched();
    CounterRng rng({123});
    const int n = 100000;
    for (int t : {10, 50, 100}) {
        double sum = 0.0, sumsq = 0.0;
        Matrix mu = Matrix::Constant(1, 1, 2.0);
        for (int i = 0; i < n; ++i) {
            Matrix eps = Matrix::Constant(1, 1, rng.normal(static_cast<std::uint64_t>(t) * n + i));
            double x = s.forward_perturb(t, mu, eps)(0, 0);
            sum += x;
            sumsq += x * x;
        }
        double mean = sum / n;
        double var = sumsq / n - mean * mean;
        CHECK(var == doctest::Approx(s.var(t)).epsilon(0.02));
        CHECK(std::abs(mean - 2.0) < 3.0 * s.marginal_std(t) / std::sqrt(double(n)));
    }
}

TEST_CASE("telescoping variance bookkeeping") {
    auto s = default_sched();
    for (int k : {1, 20, 57, 100}) {
        double acc = 0.0;
        for (int t = 1; t <= k; ++t) acc += s.var(t) - s.var(t - 1);
        CHECK(acc == doctest::Approx(s.var(k)).epsilon(1e-12));
    }
}
