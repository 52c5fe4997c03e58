#include "flowguide/coupling.hpp"

#include "flowguide/assignment.hpp"
#include "flowguide/errors.hpp"
#include "flowguide/numeric.hpp"

namespace flowguide {

CouplingMode coupling_mode_from_string(const std::string& name) {
    if (name == "independent") return CouplingMode::Independent;
    if (name == "minibatch_ot") return CouplingMode::MinibatchOt;
    throw ValidationError("unknown coupling mode '" + name +
                          "' (expected independent|minibatch_ot)");
}

std::string coupling_mode_to_string(CouplingMode mode) {
    return mode == CouplingMode::Independent ? "independent" : "minibatch_ot";
}

CouplingSampler::CouplingSampler(Density2D source, Density2D target,
                                 CouplingMode mode, std::size_t batch_size)
    : source_(std::move(source)), target_(std::move(target)),
      mode_(mode), batch_size_(batch_size) {
    if (mode_ == CouplingMode::MinibatchOt && batch_size_ < 2)
        throw ValidationError("minibatch_ot coupling needs batch_size >= 2");
}

void CouplingSampler::sample_pairs(std::size_t n, Rng& rng, Tensor& x0, Tensor& x1) const {
    if (x0.shape() != std::vector<std::size_t>{n, 2}) x0 = Tensor({n, 2});
    if (x1.shape() != std::vector<std::size_t>{n, 2}) x1 = Tensor({n, 2});

    if (mode_ == CouplingMode::Independent) {
        for (std::size_t i = 0; i < n; ++i) {
            source_.sample_point(rng, x0.row(i));
            target_.sample_point(rng, x1.row(i));
        }
        return;
    }

    if (n % batch_size_ != 0)
        throw ValidationError("minibatch_ot coupling: n (" + std::to_string(n) +
                              ") must be a multiple of batch_size (" +
                              std::to_string(batch_size_) + ")");

    const std::size_t b = batch_size_;
    Tensor cost({b, b});
    Tensor batch1({b, 2});
    for (std::size_t off = 0; off < n; off += b) {
        for (std::size_t i = 0; i < b; ++i) source_.sample_point(rng, x0.row(off + i));
        for (std::size_t i = 0; i < b; ++i) target_.sample_point(rng, batch1.row(i));
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < b; ++j)
                cost.at(i, j) = squared_distance(x0.row(off + i), batch1.row(j));
        const std::vector<std::size_t> perm = solve_assignment(cost);
        for (std::size_t i = 0; i < b; ++i) {
            x1.at(off + i, 0) = batch1.at(perm[i], 0);
            x1.at(off + i, 1) = batch1.at(perm[i], 1);
        }
    }
}

std::pair<Tensor, Tensor> CouplingSampler::couple(std::size_t n, Rng& rng) const {
    Tensor x0, x1;
    sample_pairs(n, rng, x0, x1);
    return {std::move(x0), std::move(x1)};
}

void CallablePairSampler::sample_pairs(std::size_t n, Rng& rng, Tensor& x0, Tensor& x1) const {
    if (x0.shape() != std::vector<std::size_t>{n, dim_}) x0 = Tensor({n, dim_});
    if (x1.shape() != std::vector<std::size_t>{n, dim_}) x1 = Tensor({n, dim_});
    for (std::size_t i = 0; i < n; ++i) {
        source_(rng, x0.row(i));
        target_(rng, x1.row(i));
    }
}

}  // namespace flowguide
