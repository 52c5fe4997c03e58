#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "flowguide/errors.hpp"

namespace flowguide {

// Dense row-major tensor of doubles. Rank 1 holds points and parameter
// vectors, rank 2 holds batches (n x d) and weight matrices (out x in).
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (count(shape_) != data_.size())
            throw DimensionError("tensor: shape does not match data length");
    }

    static Tensor zeros(std::initializer_list<std::size_t> shape) {
        return Tensor(std::vector<std::size_t>(shape));
    }

    static Tensor vector(std::vector<double> values) {
        const std::size_t n = values.size();
        return Tensor({n}, std::move(values));
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
        return Tensor({rows, cols}, std::move(values));
    }

    static Tensor identity(std::size_t n) {
        Tensor out({n, n});
        for (std::size_t i = 0; i < n; ++i) out.at(i, i) = 1.0;
        return out;
    }

    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    const std::vector<std::size_t>& shape() const { return shape_; }

    std::size_t rows() const { return rank() == 2 ? shape_[0] : (rank() == 1 ? 1 : 0); }
    std::size_t cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 0); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    std::span<double> row(std::size_t i) {
        return std::span<double>(data_.data() + i * shape_[1], shape_[1]);
    }
    std::span<const double> row(std::size_t i) const {
        return std::span<const double>(data_.data() + i * shape_[1], shape_[1]);
    }

    std::span<double> span() { return std::span<double>(data_); }
    std::span<const double> span() const { return std::span<const double>(data_); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    std::string shape_string() const;

private:
    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t s : shape) n *= s;
        return shape.empty() ? 0 : n;
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

// Elementwise helpers; shapes must match exactly.
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double c, const Tensor& a);
Tensor hadamard(const Tensor& a, const Tensor& b);

// (rows x inner) * (inner x cols)
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// A (n x m) times vector x (m) -> n
Tensor matvec(const Tensor& a, const Tensor& x);
void matvec_into(const Tensor& a, std::span<const double> x, std::span<double> out);
// A^T x for A (n x m), x (n) -> m
void matvec_transposed_into(const Tensor& a, std::span<const double> x, std::span<double> out);

bool tensor_all_finite(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace flowguide
