#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <set>

#include "twoturn/numeric.hpp"

using namespace twoturn;

TEST_CASE("sigmoid and logit are inverses") {
    for (double p : {0.01, 0.3, 0.5, 0.77, 0.999}) {
        REQUIRE(sigmoid(logit(p)) == Catch::Approx(p).epsilon(1e-12));
    }
    REQUIRE(sigmoid(0.0) == Catch::Approx(0.5));
    REQUIRE(sigmoid(800.0) == Catch::Approx(1.0));
    REQUIRE(sigmoid(-800.0) == Catch::Approx(0.0).margin(1e-300));
}

TEST_CASE("logsumexp is shift invariant and handles extremes") {
    std::vector<double> v = {1.0, 2.0, 3.0};
    double base = logsumexp(v);
    REQUIRE(base == Catch::Approx(std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0))));
    std::vector<double> shifted = {1001.0, 1002.0, 1003.0};
    REQUIRE(logsumexp(shifted) == Catch::Approx(base + 1000.0));
    std::vector<double> single = {-5.0};
    REQUIRE(logsumexp(single) == Catch::Approx(-5.0));
}

TEST_CASE("quantile interpolates linearly") {
    std::vector<double> v = {4.0, 1.0, 3.0, 2.0};
    REQUIRE(quantile(v, 0.0) == Catch::Approx(1.0));
    REQUIRE(quantile(v, 1.0) == Catch::Approx(4.0));
    REQUIRE(quantile(v, 0.5) == Catch::Approx(2.5));
    REQUIRE(median(v) == Catch::Approx(2.5));
    std::vector<double> odd = {5.0, 1.0, 3.0};
    REQUIRE(median(odd) == Catch::Approx(3.0));
}

TEST_CASE("average ranks break ties by averaging") {
    std::vector<double> v = {10.0, 20.0, 20.0, 30.0};
    auto r = average_ranks(v);
    REQUIRE(r[0] == Catch::Approx(1.0));
    REQUIRE(r[1] == Catch::Approx(2.5));
    REQUIRE(r[2] == Catch::Approx(2.5));
    REQUIRE(r[3] == Catch::Approx(4.0));
}

TEST_CASE("variance matches the two-pass definition") {
    std::vector<double> v = {2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0};
    REQUIRE(mean(v) == Catch::Approx(5.0));
    REQUIRE(variance(v) == Catch::Approx(32.0 / 7.0));
}

TEST_CASE("trial rng streams differ by question and condition") {
    auto a = trial_rng(1, "q1", "c1");
    auto b = trial_rng(1, "q1", "c2");
    auto c = trial_rng(1, "q2", "c1");
    auto a2 = trial_rng(1, "q1", "c1");
    REQUIRE(a() == a2());
    std::set<uint64_t> firsts = {trial_rng(1, "q1", "c1")(), b(), c(), trial_rng(2, "q1", "c1")()};
    REQUIRE(firsts.size() == 4);
}

TEST_CASE("nelder_mead minimizes a shifted quadratic bowl") {
    auto f = [](const std::vector<double>& x) {
        double a = x[0] - 1.5, b = x[1] + 2.0;
        return a * a + 3.0 * b * b + 7.0;
    };
    auto r = nelder_mead(f, {0.0, 0.0});
    REQUIRE(r.converged);
    REQUIRE(r.x[0] == Catch::Approx(1.5).margin(1e-4));
    REQUIRE(r.x[1] == Catch::Approx(-2.0).margin(1e-4));
    REQUIRE(r.fmin == Catch::Approx(7.0).margin(1e-8));
}

TEST_CASE("nelder_mead handles the rosenbrock valley") {
    auto f = [](const std::vector<double>& x) {
        double a = 1.0 - x[0], b = x[1] - x[0] * x[0];
        return a * a + 100.0 * b * b;
    };
    auto r = nelder_mead(f, {-1.2, 1.0}, 0.5, 20000, 1e-14);
    REQUIRE(r.fmin < 1e-6);
}

TEST_CASE("strfmt formats like printf") {
    REQUIRE(strfmt("%.2f|%d|%s", 1.5, 7, "x") == "1.50|7|x");
    REQUIRE(strfmt("%g", 57.5) == "57.5");
    REQUIRE(strfmt("%g", 70.0) == "70");
}

TEST_CASE("fnv1a64 differs by seed and content") {
    REQUIRE(fnv1a64("abc") != fnv1a64("abd"));
    REQUIRE(fnv1a64("abc") != fnv1a64("abc", 12345));
    REQUIRE(fnv1a64("abc") == fnv1a64("abc"));
}
