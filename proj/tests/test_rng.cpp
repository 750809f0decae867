#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ldfa/rng.hpp"

using namespace ldfa;

TEST_CASE("same seed gives bit-identical streams", "[rng]") {
    Rng a(42), b(42);
    const Matrix ma = sample_gaussian(a, 16, 16, 1.0);
    const Matrix mb = sample_gaussian(b, 16, 16, 1.0);
    REQUIRE(ma.data() == mb.data());

    Rng c(43);
    REQUIRE(sample_gaussian(c, 16, 16, 1.0).data() != ma.data());
}

TEST_CASE("sigma zero gives the zero matrix", "[rng]") {
    Rng rng(0);
    const Matrix m = sample_gaussian(rng, 8, 8, 0.0);
    REQUIRE(m.max_abs() == 0.0);
    REQUIRE_THROWS_AS(sample_gaussian(rng, 2, 2, -1.0), std::invalid_argument);
}

TEST_CASE("seed 42 moments: mean within 0.01, std within 1 +- 0.01", "[rng]") {
    Rng rng(42);
    const Matrix m = sample_gaussian(rng, 1000, 1000, 1.0);
    double mean = 0.0;
    for (double v : m.data()) mean += v;
    mean /= static_cast<double>(m.size());
    double var = 0.0;
    for (double v : m.data()) var += (v - mean) * (v - mean);
    var /= static_cast<double>(m.size());
    REQUIRE(std::abs(mean) < 0.01);
    REQUIRE(std::abs(std::sqrt(var) - 1.0) < 0.01);
}

TEST_CASE("unit draws stay inside (0,1)", "[rng]") {
    Rng rng(5);
    for (int i = 0; i < 100000; ++i) {
        const double u = rng.next_unit();
        REQUIRE(u > 0.0);
        REQUIRE(u < 1.0);
    }
}

TEST_CASE("kaiming uniform respects the fan-in bound", "[rng]") {
    Rng rng(9);
    const std::size_t fan_in = 24;
    const Matrix m = sample_kaiming_uniform(rng, 50, fan_in);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    REQUIRE(m.max_abs() <= bound);
    REQUIRE(m.max_abs() > 0.5 * bound);  // not degenerate
}
