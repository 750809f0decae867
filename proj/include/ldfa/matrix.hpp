#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ldfa {

using MacCount = std::uint64_t;

/// Dense real matrix, row-major, double precision. The universal carrier for
/// weights, activations, errors and covariances. Values are freely copyable;
/// no operation mutates its inputs unless it takes the matrix by non-const
/// reference.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw std::invalid_argument("Matrix: data length " + std::to_string(data_.size()) +
                                        " does not equal rows*cols = " +
                                        std::to_string(rows_ * cols_));
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* row(std::size_t i) { return data_.data() + i * cols_; }
    const double* row(std::size_t i) const { return data_.data() + i * cols_; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    Matrix transposed() const {
        Matrix t(cols_, rows_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

    double frobenius_norm() const {
        double s = 0.0;
        for (double v : data_) s += v * v;
        return std::sqrt(s);
    }

    double max_abs() const {
        double m = 0.0;
        for (double v : data_) m = std::max(m, std::abs(v));
        return m;
    }

    Matrix& operator+=(const Matrix& o) {
        check_same_shape(o, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    Matrix& operator-=(const Matrix& o) {
        check_same_shape(o, "-=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }

    Matrix& operator*=(double a) {
        for (double& v : data_) v *= a;
        return *this;
    }

    friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
    friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
    friend Matrix operator*(Matrix a, double s) { return a *= s; }
    friend Matrix operator*(double s, Matrix a) { return a *= s; }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    void check_same_shape(const Matrix& o, const char* op) const {
        if (rows_ != o.rows_ || cols_ != o.cols_) {
            throw std::invalid_argument(std::string("Matrix ") + op + ": shape mismatch (" +
                                        std::to_string(rows_) + "x" + std::to_string(cols_) +
                                        " vs " + std::to_string(o.rows_) + "x" +
                                        std::to_string(o.cols_) + ")");
        }
    }

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

namespace detail {
inline void check_inner(std::size_t a, std::size_t b, const char* op) {
    if (a != b) {
        throw std::invalid_argument(std::string(op) + ": inner dimensions differ (" +
                                    std::to_string(a) + " vs " + std::to_string(b) + ")");
    }
}
}  // namespace detail

/// c = a * b. When `mc` is given it is incremented by the number of
/// multiply-accumulate operations the kernel executes (rows*inner*cols).
inline void matmul_into(const Matrix& a, const Matrix& b, Matrix& c, MacCount* mc = nullptr) {
    detail::check_inner(a.cols(), b.rows(), "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    c = Matrix(m, n);
    for (std::size_t i = 0; i < m; ++i) {
        double* __restrict crow = c.row(i);
        const double* arow = a.row(i);
        for (std::size_t l = 0; l < k; ++l) {
            const double av = arow[l];
            const double* __restrict brow = b.row(l);
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    if (mc) *mc += static_cast<MacCount>(m) * k * n;
}

inline Matrix matmul(const Matrix& a, const Matrix& b, MacCount* mc = nullptr) {
    Matrix c;
    matmul_into(a, b, c, mc);
    return c;
}

/// a * b^T. Goes through an explicit transpose of b so the product runs in
/// the vector-friendly row-major kernel; the copy is negligible next to the
/// product itself. Only product MACs are counted.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b, MacCount* mc = nullptr) {
    detail::check_inner(a.cols(), b.cols(), "matmul_nt");
    return matmul(a, b.transposed(), mc);
}

/// a^T * b. The transpose of `a` is small in every use here, so it is formed
/// explicitly and fed to the row-major kernel.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b, MacCount* mc = nullptr) {
    return matmul(a.transposed(), b, mc);
}

/// x += alpha * y
inline void add_scaled(Matrix& x, const Matrix& y, double alpha) {
    if (x.rows() != y.rows() || x.cols() != y.cols())
        throw std::invalid_argument("add_scaled: shape mismatch");
    double* xd = x.data().data();
    const double* yd = y.data().data();
    for (std::size_t i = 0; i < x.size(); ++i) xd[i] += alpha * yd[i];
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument("hadamard: shape mismatch");
    Matrix c = a;
    double* cd = c.data().data();
    const double* bd = b.data().data();
    for (std::size_t i = 0; i < c.size(); ++i) cd[i] *= bd[i];
    return c;
}

// --- plain-text dump format -------------------------------------------------
// First line "rows cols", then one row per line in full-precision scientific
// notation. %.17g round-trips IEEE doubles exactly, so reload is bit-exact.

inline void dump_matrix(const Matrix& m, std::ostream& os) {
    os << m.rows() << ' ' << m.cols() << '\n';
    char buf[40];
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17e", m(i, j));
            if (j) os << ' ';
            os << buf;
        }
        os << '\n';
    }
}

inline Matrix parse_matrix(std::istream& is) {
    std::size_t rows = 0, cols = 0;
    if (!(is >> rows >> cols)) throw std::runtime_error("parse_matrix: bad header line");
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows * cols; ++i) {
        if (!(is >> m.data()[i])) throw std::runtime_error("parse_matrix: truncated data");
    }
    return m;
}

inline void save_matrix(const Matrix& m, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_matrix: cannot open " + path);
    dump_matrix(m, f);
    if (!f) throw std::runtime_error("save_matrix: write failed for " + path);
}

inline Matrix load_matrix(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_matrix: cannot open " + path);
    return parse_matrix(f);
}

}  // namespace ldfa
