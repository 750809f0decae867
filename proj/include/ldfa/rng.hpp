#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "ldfa/matrix.hpp"

namespace ldfa {

/// Counter-based pseudorandom source (splitmix64). The stream is a pure
/// function of the 64-bit seed and the draw counter, so identical seeds give
/// bit-identical streams on every platform. Gaussian variates come from the
/// Box-Muller transform applied to 53-bit uniforms in (0,1).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform in the open interval (0,1): ((x >> 11) + 0.5) * 2^-53.
    double next_unit() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

    /// Standard normal via Box-Muller; the second variate of each pair is
    /// cached so consecutive calls consume uniforms in a fixed pattern.
    double next_gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = next_unit();
        const double u2 = next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

private:
    std::uint64_t seed_;
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// rows x cols matrix of i.i.d. N(0, sigma^2) entries in row-major draw order.
inline Matrix sample_gaussian(Rng& rng, std::size_t rows, std::size_t cols, double sigma) {
    if (sigma < 0.0) throw std::invalid_argument("sample_gaussian: sigma must be >= 0");
    Matrix m(rows, cols);
    for (double& v : m.data()) v = sigma * rng.next_gaussian();
    return m;
}

inline Matrix sample_uniform(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = rng.next_uniform(lo, hi);
    return m;
}

/// Kaiming-uniform fan-in initialization, U(-b, b) with b = 1/sqrt(cols)
/// (the torch linear-layer default, gain for a = sqrt(5)).
inline Matrix sample_kaiming_uniform(Rng& rng, std::size_t rows, std::size_t cols) {
    if (cols == 0) throw std::invalid_argument("sample_kaiming_uniform: cols must be >= 1");
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    return sample_uniform(rng, rows, cols, -bound, bound);
}

}  // namespace ldfa
