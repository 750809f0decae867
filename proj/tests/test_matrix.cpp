#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "ldfa/matrix.hpp"
#include "ldfa/rng.hpp"

using namespace ldfa;

TEST_CASE("matrix construction and indexing", "[matrix]") {
    Matrix m(2, 3);
    REQUIRE(m.rows() == 2);
    REQUIRE(m.cols() == 3);
    REQUIRE(m.size() == 6);
    m(1, 2) = 4.5;
    REQUIRE(m(1, 2) == 4.5);
    REQUIRE(m(0, 0) == 0.0);

    REQUIRE_THROWS_AS(Matrix(2, 3, std::vector<double>(5)), std::invalid_argument);
}

TEST_CASE("matmul against a hand-computed product", "[matrix]") {
    const Matrix a(2, 3, {1, 2, 3, 4, 5, 6});
    const Matrix b(3, 2, {7, 8, 9, 10, 11, 12});
    const Matrix c = matmul(a, b);
    REQUIRE(c(0, 0) == 58.0);
    REQUIRE(c(0, 1) == 64.0);
    REQUIRE(c(1, 0) == 139.0);
    REQUIRE(c(1, 1) == 154.0);

    REQUIRE_THROWS_AS(matmul(a, a), std::invalid_argument);
}

TEST_CASE("transpose kernels agree with explicit transposes", "[matrix]") {
    Rng rng(7);
    for (auto [m, k, n] : {std::array<std::size_t, 3>{4, 6, 3}, {1, 5, 7}, {8, 2, 8}}) {
        const Matrix a = sample_gaussian(rng, m, k, 1.0);
        const Matrix b = sample_gaussian(rng, n, k, 1.0);
        const Matrix via_nt = matmul_nt(a, b);
        const Matrix direct = matmul(a, b.transposed());
        REQUIRE((via_nt - direct).max_abs() < 1e-14);

        const Matrix c = sample_gaussian(rng, k, m, 1.0);
        const Matrix d = sample_gaussian(rng, k, n, 1.0);
        REQUIRE((matmul_tn(c, d) - matmul(c.transposed(), d)).max_abs() < 1e-14);
    }
}

TEST_CASE("kernels count exactly rows*inner*cols multiply-accumulates", "[matrix]") {
    Rng rng(3);
    const Matrix a = sample_gaussian(rng, 5, 7, 1.0);
    const Matrix b = sample_gaussian(rng, 7, 4, 1.0);
    MacCount mc = 0;
    matmul(a, b, &mc);
    REQUIRE(mc == 5ull * 7ull * 4ull);
    const Matrix c = sample_gaussian(rng, 6, 7, 1.0);
    matmul_nt(a, c, &mc);
    REQUIRE(mc == 5ull * 7ull * 4ull + 5ull * 7ull * 6ull);
}

TEST_CASE("dump format round-trips bit-exactly", "[matrix]") {
    Rng rng(11);
    const Matrix m = sample_gaussian(rng, 9, 5, 3.7);
    std::stringstream ss;
    dump_matrix(m, ss);
    const Matrix back = parse_matrix(ss);
    REQUIRE(back.rows() == m.rows());
    REQUIRE(back.cols() == m.cols());
    REQUIRE(back.data() == m.data());  // exact, not approximate
}

TEST_CASE("dump format header and layout", "[matrix]") {
    const Matrix m(1, 2, {1.0, -0.5});
    std::stringstream ss;
    dump_matrix(m, ss);
    std::string first;
    std::getline(ss, first);
    REQUIRE(first == "1 2");
}

TEST_CASE("elementwise helpers", "[matrix]") {
    const Matrix a(2, 2, {1, 2, 3, 4});
    const Matrix b(2, 2, {2, 0.5, -1, 2});
    REQUIRE(hadamard(a, b)(0, 0) == 2.0);
    REQUIRE(hadamard(a, b)(1, 0) == -3.0);
    Matrix x = a;
    add_scaled(x, b, 2.0);
    REQUIRE(x(0, 0) == 5.0);
    REQUIRE(x(1, 1) == 8.0);
    REQUIRE((a + b - a - b).max_abs() == 0.0);
}
