#include <benchmark/benchmark.h>

#include "flowguide/assignment.hpp"
#include "flowguide/guidance.hpp"
#include "flowguide/mlp.hpp"
#include "flowguide/oracle.hpp"
#include "flowguide/tape.hpp"
#include "flowguide/wasserstein.hpp"

using namespace flowguide;

namespace {

MlpModel bench_model(std::size_t hidden) {
    Rng rng(1);
    return MlpModel::make({2, hidden, hidden, hidden, 2}, ActivationKind::Tanh, 16, rng);
}

void MlpForward(benchmark::State& state) {
    MlpModel m = bench_model(static_cast<std::size_t>(state.range(0)));
    std::vector<double> x = {0.3, -0.4};
    for (auto _ : state) {
        Tensor out = mlp_forward(m, x, 0.5);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(MlpForward)->Arg(64)->Arg(128)->Arg(256);

void MlpTrainStep(benchmark::State& state) {
    MlpModel m = bench_model(64);
    const std::size_t batch = static_cast<std::size_t>(state.range(0));
    Rng rng(2);
    Tensor x({batch, 2}), target({batch, 2});
    std::vector<double> ts(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        x.at(i, 0) = rng.normal();
        x.at(i, 1) = rng.normal();
        target.at(i, 0) = rng.normal();
        target.at(i, 1) = rng.normal();
        ts[i] = rng.uniform();
    }
    for (auto _ : state) {
        Tape tape;
        Tape::NodeId xn = tape.leaf(x);
        std::vector<Tape::NodeId> leaves;
        Tape::NodeId pred = mlp_forward_tape(m, tape, xn, ts, leaves);
        Tape::NodeId loss = tape.scale(
            tape.sum(tape.square(tape.sub(pred, tape.leaf(target)))),
            1.0 / static_cast<double>(batch));
        std::vector<Tensor> grads = tape.gradients(loss, leaves);
        benchmark::DoNotOptimize(grads.data());
    }
}
BENCHMARK(MlpTrainStep)->Arg(64)->Arg(256);

void McGuidance(benchmark::State& state) {
    static const Density2D target = Density2D::gaussian_mixture(
        {0.5, 0.5}, {{{-1.2, 0.0}}, {{1.2, 0.0}}},
        {{{0.2, 0.0, 0.0, 0.2}}, {{0.2, 0.0, 0.0, 0.2}}});
    static const GmmFlowOracle oracle = GmmFlowOracle::from_density(target);
    static const GmmFlowOracle::Field field = oracle.field();
    static const CouplingSampler pairs(Density2D::standard_gaussian(), target);
    GuidanceContext ctx;
    ctx.field = &field;
    ctx.schedule = Schedule::linear();
    ctx.pairs = &pairs;
    ctx.sigma_mc = 0.1;
    EnergyFn energy = EnergyFn::quadratic(Tensor({2}, {0.5, 0.5}),
                                          Tensor::identity(2), 0.5);
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    std::vector<double> x = {0.3, 0.2};
    std::uint64_t step = 0;
    for (auto _ : state) {
        Rng rng = Rng::from_path(11, {step++});
        Tensor g = g_mc(ctx, x, 0.5, energy, n, rng);
        benchmark::DoNotOptimize(g.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                            static_cast<std::int64_t>(n));
}
BENCHMARK(McGuidance)->Arg(1000)->Arg(10000)->Arg(100000);

void AssignmentSolve(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    Rng rng(3);
    Tensor cost({n, n});
    for (std::size_t i = 0; i < cost.size(); ++i) cost[i] = rng.uniform();
    for (auto _ : state) {
        auto perm = solve_assignment(cost);
        benchmark::DoNotOptimize(perm.data());
    }
    state.SetComplexityN(static_cast<std::int64_t>(n));
}
BENCHMARK(AssignmentSolve)->RangeMultiplier(2)->Range(64, 1024)->Complexity();

void W2Distance(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    Rng rng(4);
    Tensor a({n, 2}), b({n, 2});
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = rng.normal();
        b[i] = rng.normal();
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(w2_distance(a, b));
    }
}
BENCHMARK(W2Distance)->Arg(500)->Arg(1000);

}  // namespace

BENCHMARK_MAIN();
