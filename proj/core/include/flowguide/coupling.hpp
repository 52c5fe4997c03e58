#pragma once

#include <functional>

#include "flowguide/density.hpp"
#include "flowguide/rng.hpp"
#include "flowguide/tensor.hpp"

namespace flowguide {

// Source of endpoint pairs (x0, x1) ~ pi. Implementations must be pure given
// the rng; parallel use splits streams.
class PairSampler {
public:
    virtual ~PairSampler() = default;
    virtual std::size_t dim() const = 0;
    virtual void sample_pairs(std::size_t n, Rng& rng, Tensor& x0, Tensor& x1) const = 0;
};

enum class CouplingMode { Independent, MinibatchOt };

CouplingMode coupling_mode_from_string(const std::string& name);
std::string coupling_mode_to_string(CouplingMode mode);

// 2-D coupling over synthetic densities. Independent mode pairs independent
// draws; minibatch-OT re-pairs each drawn batch by the exact optimal
// assignment under squared Euclidean cost.
class CouplingSampler : public PairSampler {
public:
    CouplingSampler() = default;
    CouplingSampler(Density2D source, Density2D target,
                    CouplingMode mode = CouplingMode::Independent,
                    std::size_t batch_size = 128);

    std::size_t dim() const override { return 2; }
    void sample_pairs(std::size_t n, Rng& rng, Tensor& x0, Tensor& x1) const override;

    // convenience form returning fresh tensors
    std::pair<Tensor, Tensor> couple(std::size_t n, Rng& rng) const;

    const Density2D& source() const { return source_; }
    const Density2D& target() const { return target_; }
    CouplingMode mode() const { return mode_; }
    std::size_t batch_size() const { return batch_size_; }

private:
    Density2D source_ = Density2D::standard_gaussian();
    Density2D target_ = Density2D::standard_gaussian();
    CouplingMode mode_ = CouplingMode::Independent;
    std::size_t batch_size_ = 128;
};

// Pair sampler over arbitrary-dimension callables; used by the oracle flows
// and the inverse-problem experiments.
class CallablePairSampler : public PairSampler {
public:
    using PointFn = std::function<void(Rng&, std::span<double>)>;

    CallablePairSampler(std::size_t dim, PointFn source, PointFn target)
        : dim_(dim), source_(std::move(source)), target_(std::move(target)) {}

    std::size_t dim() const override { return dim_; }
    void sample_pairs(std::size_t n, Rng& rng, Tensor& x0, Tensor& x1) const override;

private:
    std::size_t dim_;
    PointFn source_, target_;
};

}  // namespace flowguide
