#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace cotrainlab {

// Row-major dense matrix of doubles. Rows are examples throughout the library.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

    std::span<double> row(std::size_t i) noexcept { return {values.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const noexcept {
        return {values.data() + i * cols, cols};
    }

    double& operator()(std::size_t i, std::size_t j) noexcept { return values[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return values[i * cols + j]; }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

}  // namespace cotrainlab
