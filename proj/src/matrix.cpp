#include "distill/matrix.hpp"

#include <cmath>
#include <string>

#include "distill/errors.hpp"
#include "distill/kernels.hpp"

namespace distill {

namespace {

std::string shape_str(const Matrix& m) {
    return "(" + std::to_string(m.rows()) + " x " + std::to_string(m.cols()) +
           ")";
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
        throw ShapeError("matrix data has " + std::to_string(data_.size()) +
                         " entries, expected " + std::to_string(rows_ * cols_) +
                         " for " + shape_str(*this));
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

bool Matrix::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void Matrix::fill(double value) {
    for (double& v : data_) v = value;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions differ, " + shape_str(a) +
                         " * " + shape_str(b));
    Matrix c(a.rows(), b.cols());
    kernels::table().matmul(a.data(), b.data(), c.data(), a.rows(), a.cols(),
                            b.cols());
    return c;
}

Matrix matmul_transpose_a(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows())
        throw ShapeError("matmul_transpose_a: row counts differ, " +
                         shape_str(a) + "^T * " + shape_str(b));
    Matrix c(a.cols(), b.cols());
    kernels::table().matmul_at(a.data(), b.data(), c.data(), a.cols(),
                               a.rows(), b.cols());
    return c;
}

Matrix matmul_transpose_b(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols())
        throw ShapeError("matmul_transpose_b: column counts differ, " +
                         shape_str(a) + " * " + shape_str(b) + "^T");
    Matrix c(a.rows(), b.rows());
    kernels::table().matmul_bt(a.data(), b.data(), c.data(), a.rows(),
                               a.cols(), b.rows());
    return c;
}

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
    return t;
}

}  // namespace distill
