#include "flowguide/wasserstein.hpp"

#include <cmath>

#include "flowguide/assignment.hpp"
#include "flowguide/errors.hpp"
#include "flowguide/numeric.hpp"

namespace flowguide {

double w2_distance(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw DimensionError("w2_distance: (n x d) point sets required");
    if (a.shape() != b.shape())
        throw ValidationError("w2_distance: point sets must have equal size " +
                              a.shape_string() + " vs " + b.shape_string());
    const std::size_t n = a.shape()[0];
    if (n == 0) return 0.0;

    Tensor cost({n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            cost.at(i, j) = squared_distance(a.row(i), b.row(j));

    const std::vector<std::size_t> perm = solve_assignment(cost);
    const double total = assignment_cost(cost, perm);
    return std::sqrt(total / static_cast<double>(n));
}

}  // namespace flowguide
