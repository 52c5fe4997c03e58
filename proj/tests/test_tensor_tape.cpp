#include <doctest.h>

#include "flowguide/errors.hpp"
#include "flowguide/linalg.hpp"
#include "flowguide/mlp.hpp"
#include "flowguide/tape.hpp"
#include "test_util.hpp"

using namespace flowguide;
using fgtest::rel_err;

TEST_CASE("tensor shape/data invariant") {
    CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), DimensionError);
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.at(1, 2) == 0.0);
}

TEST_CASE("tensor matmul and transpose") {
    Tensor a = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
    Tensor b = Tensor::matrix(3, 2, {7, 8, 9, 10, 11, 12});
    Tensor c = matmul(a, b);
    CHECK(c.at(0, 0) == 58);
    CHECK(c.at(1, 1) == 154);
    Tensor at = transpose(a);
    CHECK(at.at(2, 1) == 6);
    CHECK_THROWS_AS(matmul(a, a), DimensionError);
}

TEST_CASE("grad of x^2 at 3 is 6") {
    Tape tape;
    auto x = tape.leaf(Tensor({1}, {3.0}));
    auto y = tape.square(x);
    tape.backward_scalar(tape.sum(y));
    CHECK(tape.adjoint(x)[0] == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("grad of sum is all ones") {
    Tape tape;
    auto x = tape.leaf(Tensor({4}, {0.3, -1.0, 2.0, 5.0}));
    auto s = tape.sum(x);
    tape.backward_scalar(s);
    for (int i = 0; i < 4; ++i) CHECK(tape.adjoint(x)[i] == 1.0);
}

TEST_CASE("grad requires a scalar output") {
    Tape tape;
    auto x = tape.leaf(Tensor({2}, {1.0, 2.0}));
    auto y = tape.square(x);
    CHECK_THROWS_AS(tape.backward_scalar(y), ContractError);
}

TEST_CASE("random MLP scalar head matches finite differences") {
    // the spec-level gradient-correctness property: 100 random models
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        Rng rng(1000 + trial);
        const std::size_t hidden = 4 + rng.below(12);
        MlpModel m = MlpModel::make({2, hidden, hidden, 1},
                                    trial % 3 == 0   ? ActivationKind::Tanh
                                    : trial % 3 == 1 ? ActivationKind::Gelu
                                                     : ActivationKind::Relu,
                                    8, rng);
        std::vector<double> x = {rng.normal(), rng.normal()};
        const double t = rng.uniform();

        Tape tape;
        auto xn = tape.leaf(Tensor({2}, {x[0], x[1]}));
        std::vector<Tape::NodeId> leaves;
        auto out = mlp_forward_tape(m, tape, xn, std::span<const double>(&t, 1), leaves);
        tape.backward_scalar(out);

        auto f = [&](std::span<const double> xq) {
            return mlp_forward(m, xq, t)[0];
        };
        auto fd = fgtest::fd_grad(f, x);
        for (int j = 0; j < 2; ++j) {
            if (std::abs(fd[j]) < 1e-8) continue;
            worst = std::max(worst, rel_err(tape.adjoint(xn)[j], fd[j], 1e-8));
        }
        // spot-check a few parameter entries too
        for (std::size_t k = 0; k < 3; ++k) {
            MlpModel mp = m, mm = m;
            const double h = 1e-5;
            mp.weights[0][k] += h;
            mm.weights[0][k] -= h;
            const double fd_p =
                (mlp_forward(mp, x, t)[0] - mlp_forward(mm, x, t)[0]) / (2 * h);
            if (std::abs(fd_p) < 1e-8) continue;
            worst = std::max(worst, rel_err(tape.adjoint(leaves[0])[k], fd_p, 1e-8));
        }
    }
    CHECK(worst <= 1e-6);
}

TEST_CASE("gradient linearity: grad(a f + b g) = a grad f + b grad g") {
    Rng rng(4);
    MlpModel m1 = MlpModel::make({2, 8, 1}, ActivationKind::Tanh, 4, rng);
    MlpModel m2 = MlpModel::make({2, 8, 1}, ActivationKind::Tanh, 4, rng);
    const double a = 2.5, b = -1.25;
    std::vector<double> x = {0.4, -0.9};
    const double t = 0.3;

    auto grad_of = [&](double ca, double cb) {
        Tape tape;
        auto xn = tape.leaf(Tensor({2}, {x[0], x[1]}));
        std::vector<Tape::NodeId> leaves;
        auto f = mlp_forward_tape(m1, tape, xn, std::span<const double>(&t, 1), leaves);
        auto g = mlp_forward_tape(m2, tape, xn, std::span<const double>(&t, 1), leaves);
        auto combo = tape.add(tape.scale(f, ca), tape.scale(g, cb));
        tape.backward_scalar(tape.sum(combo));
        return tape.adjoint(xn);
    };
    Tensor g_ab = grad_of(a, b);
    Tensor g_f = grad_of(1.0, 0.0);
    Tensor g_g = grad_of(0.0, 1.0);
    for (int j = 0; j < 2; ++j)
        CHECK(g_ab[j] == doctest::Approx(a * g_f[j] + b * g_g[j]).epsilon(1e-15));
}

TEST_CASE("tape replay reproduces recorded values bit-identically") {
    Rng rng(5);
    MlpModel m = MlpModel::make({2, 16, 16, 2}, ActivationKind::Gelu, 8, rng);
    Tape tape;
    auto xn = tape.leaf(Tensor({2}, {0.7, -0.2}));
    std::vector<Tape::NodeId> leaves;
    const double t = 0.6;
    auto out = mlp_forward_tape(m, tape, xn, std::span<const double>(&t, 1), leaves);
    const Tensor before = tape.value(out);
    tape.replay();
    CHECK(max_abs_diff(before, tape.value(out)) == 0.0);
}

TEST_CASE("determinism: same seed, same gradients") {
    auto run = [] {
        Rng rng(77);
        MlpModel m = MlpModel::make({2, 32, 2}, ActivationKind::Tanh, 8, rng);
        Tape tape;
        auto xn = tape.leaf(Tensor({2}, {0.1, 0.2}));
        std::vector<Tape::NodeId> leaves;
        const double t = 0.25;
        auto out = mlp_forward_tape(m, tape, xn, std::span<const double>(&t, 1), leaves);
        tape.backward_scalar(tape.sum(tape.square(out)));
        return std::pair<Tensor, Tensor>(tape.value(out), tape.adjoint(leaves[0]));
    };
    auto [v1, g1] = run();
    auto [v2, g2] = run();
    CHECK(max_abs_diff(v1, v2) == 0.0);
    CHECK(max_abs_diff(g1, g2) == 0.0);
}

TEST_CASE("linalg: cholesky solve and eigen round trips") {
    Rng rng(6);
    const std::size_t d = 5;
    Tensor b({d, d});
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = rng.normal();
    Tensor a({d, d});
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double s = i == j ? 0.5 : 0.0;
            for (std::size_t k = 0; k < d; ++k) s += b.at(i, k) * b.at(j, k);
            a.at(i, j) = s;
        }
    Tensor l = cholesky(a);
    Tensor x({d});
    for (std::size_t i = 0; i < d; ++i) x[i] = rng.normal();
    Tensor rhs = matvec(a, x);
    Tensor sol = cholesky_solve(l, rhs);
    CHECK(max_abs_diff(sol, x) < 1e-10);

    SymmetricEigen eig = eigen_symmetric(a);
    // reconstruct V diag(w) V^T
    Tensor rec({d, d});
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k)
                s += eig.vectors.at(i, k) * eig.values[k] * eig.vectors.at(j, k);
            rec.at(i, j) = s;
        }
    CHECK(max_abs_diff(rec, a) < 1e-10);

    auto [proj, clamped] = psd_project(Tensor({2, 2}, {1.0, 0.0, 0.0, -0.5}));
    CHECK(clamped == doctest::Approx(0.5));
    CHECK(proj.at(1, 1) == doctest::Approx(0.0));
}
