#pragma once

#include <utility>
#include <vector>

#include "flowguide/tensor.hpp"

namespace flowguide {

// Small dense symmetric linear algebra used by the oracles, the covariance
// guidance and the inverse-problem solvers (d <= 64; no external BLAS).

// Lower-triangular Cholesky factor of an SPD matrix; throws NumericalError if
// the matrix is not positive definite.
Tensor cholesky(const Tensor& a);

// Solve A x = b given the Cholesky factor L of A.
Tensor cholesky_solve(const Tensor& l, const Tensor& b);
void cholesky_solve_into(const Tensor& l, std::span<const double> b, std::span<double> x);

// Solve A X = B column-wise (B is d x m).
Tensor cholesky_solve_matrix(const Tensor& l, const Tensor& b);

Tensor spd_inverse(const Tensor& a);
double spd_log_det(const Tensor& l_factor);

struct SymmetricEigen {
    Tensor values;   // ascending, length d
    Tensor vectors;  // columns are eigenvectors, d x d
};

// Cyclic Jacobi eigendecomposition of a symmetric matrix.
SymmetricEigen eigen_symmetric(const Tensor& a);

// Clamp negative eigenvalues to `floor` (>= 0). Returns the projected matrix
// and the largest clamped magnitude.
std::pair<Tensor, double> psd_project(const Tensor& a, double floor = 0.0);

// L y = z sampling helper: x = mean + L * z where z ~ N(0, I).
void affine_sample(const Tensor& l, std::span<const double> mean,
                   std::span<const double> z, std::span<double> out);

}  // namespace flowguide
