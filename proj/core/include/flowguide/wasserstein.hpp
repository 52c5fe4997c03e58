#pragma once

#include "flowguide/tensor.hpp"

namespace flowguide {

// Exact discrete Wasserstein-2 between equal-size point sets: square root of
// the mean optimally-assigned squared distance. O(n^3) via the assignment
// solver; intended for n up to ~2000 points.
double w2_distance(const Tensor& a, const Tensor& b);

}  // namespace flowguide
