#pragma once

#include <cstddef>
#include <vector>

#include "flowguide/tensor.hpp"

namespace flowguide {

// Exact solution of the square assignment problem: returns the permutation
// pi minimizing sum_i cost(i, pi(i)). Shortest-augmenting-path with dual
// potentials (Jonker-Volgenant family), O(n^3) worst case. Non-finite cost
// entries are rejected.
std::vector<std::size_t> solve_assignment(const Tensor& cost);

double assignment_cost(const Tensor& cost, const std::vector<std::size_t>& perm);

}  // namespace flowguide
