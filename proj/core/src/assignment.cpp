#include "flowguide/assignment.hpp"

#include <cmath>
#include <limits>

#include "flowguide/errors.hpp"

namespace flowguide {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

std::vector<std::size_t> solve_assignment(const Tensor& cost) {
    if (cost.rank() != 2 || cost.shape()[0] != cost.shape()[1])
        throw ValidationError("solve_assignment: square cost matrix required");
    const std::size_t n = cost.shape()[0];
    if (!tensor_all_finite(cost))
        throw ValidationError("solve_assignment: cost matrix has non-finite entries");
    if (n == 0) return {};

    std::vector<double> u(n, 0.0), v(n, 0.0), shortest(n);
    std::vector<int> row_of_col(n, -1), col_of_row(n, -1), path(n, -1);
    std::vector<char> scanned_row(n, 0), scanned_col(n, 0);
    std::vector<std::size_t> remaining(n);

    const double* c = cost.data();

    for (std::size_t cur_row = 0; cur_row < n; ++cur_row) {
        std::fill(shortest.begin(), shortest.end(), kInf);
        std::fill(scanned_row.begin(), scanned_row.end(), 0);
        std::fill(scanned_col.begin(), scanned_col.end(), 0);
        for (std::size_t j = 0; j < n; ++j) remaining[j] = n - j - 1;
        std::size_t num_remaining = n;

        double min_val = 0.0;
        int sink = -1;
        std::size_t i = cur_row;
        while (sink == -1) {
            scanned_row[i] = 1;
            std::size_t index = 0;
            double lowest = kInf;
            for (std::size_t it = 0; it < num_remaining; ++it) {
                const std::size_t j = remaining[it];
                const double r = min_val + c[i * n + j] - u[i] - v[j];
                if (r < shortest[j]) {
                    path[j] = static_cast<int>(i);
                    shortest[j] = r;
                }
                if (shortest[j] < lowest ||
                    (shortest[j] == lowest && row_of_col[j] == -1)) {
                    lowest = shortest[j];
                    index = it;
                }
            }
            min_val = lowest;
            const std::size_t j = remaining[index];
            if (row_of_col[j] == -1)
                sink = static_cast<int>(j);
            else
                i = static_cast<std::size_t>(row_of_col[j]);
            scanned_col[j] = 1;
            remaining[index] = remaining[--num_remaining];
        }

        u[cur_row] += min_val;
        for (std::size_t r = 0; r < n; ++r)
            if (scanned_row[r] && r != cur_row)
                u[r] += min_val - shortest[static_cast<std::size_t>(col_of_row[r])];
        for (std::size_t j = 0; j < n; ++j)
            if (scanned_col[j]) v[j] -= min_val - shortest[j];

        // augment along the alternating path ending at sink
        int j = sink;
        while (true) {
            const int r = path[j];
            row_of_col[j] = r;
            const int next_j = col_of_row[r];
            col_of_row[r] = j;
            if (r == static_cast<int>(cur_row)) break;
            j = next_j;
        }
    }

    std::vector<std::size_t> perm(n);
    for (std::size_t r = 0; r < n; ++r) perm[r] = static_cast<std::size_t>(col_of_row[r]);
    return perm;
}

double assignment_cost(const Tensor& cost, const std::vector<std::size_t>& perm) {
    double s = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i) s += cost.at(i, perm[i]);
    return s;
}

}  // namespace flowguide
