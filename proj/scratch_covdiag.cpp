#include <cstdio>
#include <cmath>
#include "flowguide/numeric.hpp"
#include "flowguide/oracle.hpp"
#include "flowguide/trainguide.hpp"
using namespace flowguide;
static double rel_l2s(std::span<const double> a, std::span<const double> b) {
    double n = 0, d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) { n += (a[i]-b[i])*(a[i]-b[i]); d += b[i]*b[i]; }
    return std::sqrt(n / std::max(d, 1e-24));
}
int main() {
    for (double s2 : {0.4, 1.0}) {
        GmmFlowOracle oracle = GmmFlowOracle::single(Tensor({2}, {1.0, -0.5}),
                                                     Tensor({2, 2}, {s2, 0, 0, s2}));
        CouplingSampler pairs(Density2D::standard_gaussian(),
                              Density2D::gaussian({1.0, -0.5}, {s2, 0.0, 0.0, s2}));
        auto field = oracle.field();
        GuidanceContext ctx; ctx.field = &field; ctx.schedule = Schedule::linear();
        CovTrainConfig cfg;
        cfg.steps = 5000; cfg.batch = 384; cfg.lr = 2e-3;
        cfg.hidden = {64, 64}; cfg.seed = 33;
        CovModel cov = train_cov_model(pairs, Schedule::linear(), cfg);
        Rng rng(34);
        std::vector<double> rels;
        double bucket_err[7] = {0};
        int bucket_n[7] = {0};
        for (int rep = 0; rep < 300; ++rep) {
            const double t = 0.15 + 0.7 * rng.uniform();
            Tensor x; oracle.sample_path(1, t, rng, x);
            Tensor got = cov_model_sigma(cov, ctx, x.row(0), t);
            Tensor want = oracle.posterior(x.row(0), t).covariance();
            rels.push_back(rel_l2s(got.span(), want.span()));
            const int b = std::min(6, (int)((t - 0.15) / 0.1));
            bucket_err[b] += rels.back(); bucket_n[b] += 1;
        }
        std::printf("s2=%.1f: median rel %.4f | t-profile:", s2, median(rels));
        for (int b = 0; b < 7; ++b)
            std::printf(" %.2f", bucket_err[b] / std::max(bucket_n[b], 1));
        std::printf("\n");
    }
    return 0;
}
