#include "flowguide/trainguide.hpp"

#include <cmath>

#include "flowguide/errors.hpp"
#include "flowguide/linalg.hpp"
#include "flowguide/numeric.hpp"
#include "flowguide/optim.hpp"

namespace flowguide {

GuidanceLossKind guidance_loss_from_string(const std::string& name) {
    if (name == "gm") return GuidanceLossKind::GM;
    if (name == "vgm") return GuidanceLossKind::VGM;
    if (name == "rgm") return GuidanceLossKind::RGM;
    if (name == "mrgm") return GuidanceLossKind::MRGM;
    throw ValidationError("unknown guidance loss '" + name + "' (expected gm|vgm|rgm|mrgm)");
}

std::string guidance_loss_to_string(GuidanceLossKind kind) {
    switch (kind) {
        case GuidanceLossKind::GM: return "gm";
        case GuidanceLossKind::VGM: return "vgm";
        case GuidanceLossKind::RGM: return "rgm";
        case GuidanceLossKind::MRGM: return "mrgm";
    }
    return "gm";
}

namespace {

double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

double clamped_exp_neg(double j) { return std::exp(std::min(-j, 700.0)); }

struct TrainBatch {
    Tensor xt;                   // (b x d)
    std::vector<double> ts;      // per row
    Tensor v_target;             // conditional VF per row
    std::vector<double> energy_exp;  // e^{-J(x1)}
};

TrainBatch draw_batch(const PairSampler& pairs, const Schedule& schedule,
                      const EnergyFn& energy, std::size_t b, Rng& rng) {
    const std::size_t d = pairs.dim();
    Tensor x0, x1;
    pairs.sample_pairs(b, rng, x0, x1);
    TrainBatch batch;
    batch.xt = Tensor({b, d});
    batch.v_target = Tensor({b, d});
    batch.ts.resize(b);
    batch.energy_exp.resize(b);
    const bool has_sigma = schedule.eval(0.5).sigma > 0.0;
    std::vector<double> noise(d, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
        batch.ts[i] = rng.uniform();
        if (has_sigma)
            for (std::size_t j = 0; j < d; ++j) noise[j] = rng.normal();
        sample_conditional_path(x0.row(i), x1.row(i), batch.ts[i], noise, schedule,
                                batch.xt.row(i));
        conditional_vf(x0.row(i), x1.row(i), batch.ts[i], noise, schedule,
                       batch.v_target.row(i));
        batch.energy_exp[i] = clamped_exp_neg(energy.value(x1.row(i)));
    }
    return batch;
}

std::vector<Tensor> model_params(const MlpModel& m) {
    std::vector<Tensor> p;
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
        p.push_back(m.weights[l]);
        p.push_back(m.biases[l]);
    }
    return p;
}

void params_to_model(const std::vector<Tensor>& p, MlpModel& m) {
    for (std::size_t l = 0, i = 0; l < m.weights.size(); ++l) {
        m.weights[l] = p[i++];
        m.biases[l] = p[i++];
    }
}

// one Adam step on || softplus(z_raw) + floor - e^{-J} ||^2
double z_train_step(GuidanceNets& nets, std::vector<Tensor>& params, AdamState& adam,
                    const TrainBatch& batch) {
    params_to_model(params, nets.z_net);
    const std::size_t b = batch.ts.size();
    Tape tape;
    Tape::NodeId x_node = tape.leaf(batch.xt);
    std::vector<Tape::NodeId> leaves;
    Tape::NodeId raw = mlp_forward_tape(nets.z_net, tape, x_node, batch.ts, leaves);
    Tape::NodeId zed = tape.activation(raw, ActivationKind::Softplus);
    Tensor floor_t({b, 1});
    floor_t.fill(nets.z_floor);
    zed = tape.add(zed, tape.leaf(std::move(floor_t)));
    Tensor target({b, 1});
    for (std::size_t i = 0; i < b; ++i) target.at(i, 0) = batch.energy_exp[i];
    Tape::NodeId diff = tape.sub(zed, tape.leaf(std::move(target)));
    Tape::NodeId loss =
        tape.scale(tape.sum(tape.square(diff)), 1.0 / static_cast<double>(b));
    const double loss_value = tape.value(loss)[0];
    if (!std::isfinite(loss_value))
        throw TrainingError("guidance z training diverged", adam.step);
    std::vector<Tensor> grads = tape.gradients(loss, leaves);
    adam_step(params, grads, adam);
    return loss_value;
}

// one Adam step on the selected guidance-matching loss; Z enters through its
// value only (stop-gradient).
double g_train_step(GuidanceNets& nets, const VectorField& base_field,
                    std::vector<Tensor>& params, AdamState& adam,
                    const TrainBatch& batch) {
    params_to_model(params, nets.g_net);
    const std::size_t b = batch.ts.size();
    const std::size_t d = batch.xt.shape()[1];
    const GuidanceLossKind kind = nets.loss_kind;

    std::vector<double> ratio(b), weight(b);
    Tensor v_theta({b, d});
    const bool needs_vtheta = kind != GuidanceLossKind::GM;
    for (std::size_t i = 0; i < b; ++i) {
        double z_sg;
        if (kind == GuidanceLossKind::MRGM) {
            z_sg = nets.mrgm_z;
        } else {
            z_sg = z_value(nets, batch.xt.row(i), batch.ts[i]);
        }
        if (z_sg < nets.z_floor) {
            z_sg = nets.z_floor;
            nets.z_clamp_events += 1;
        }
        ratio[i] = batch.energy_exp[i] / z_sg;
        weight[i] = ratio[i];
        if (needs_vtheta)
            base_field.eval(batch.xt.row(i), batch.ts[i], v_theta.row(i));
    }

    Tape tape;
    Tape::NodeId x_node = tape.leaf(batch.xt);
    std::vector<Tape::NodeId> leaves;
    Tape::NodeId pred = mlp_forward_tape(nets.g_net, tape, x_node, batch.ts, leaves);

    Tape::NodeId loss = -1;
    switch (kind) {
        case GuidanceLossKind::GM: {
            Tensor target({b, d});
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < d; ++j)
                    target.at(i, j) = (ratio[i] - 1.0) * batch.v_target.at(i, j);
            Tape::NodeId diff = tape.sub(pred, tape.leaf(std::move(target)));
            loss = tape.scale(tape.sum(tape.square(diff)), 1.0 / static_cast<double>(b));
            break;
        }
        case GuidanceLossKind::VGM: {
            Tensor target({b, d});
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < d; ++j)
                    target.at(i, j) =
                        ratio[i] * batch.v_target.at(i, j) - v_theta.at(i, j);
            Tape::NodeId diff = tape.sub(pred, tape.leaf(std::move(target)));
            loss = tape.scale(tape.sum(tape.square(diff)), 1.0 / static_cast<double>(b));
            break;
        }
        case GuidanceLossKind::RGM:
        case GuidanceLossKind::MRGM: {
            Tensor target({b, d});
            Tensor weights({b, d});
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < d; ++j) {
                    target.at(i, j) = batch.v_target.at(i, j) - v_theta.at(i, j);
                    weights.at(i, j) = weight[i];
                }
            Tape::NodeId diff = tape.sub(pred, tape.leaf(std::move(target)));
            Tape::NodeId weighted = tape.mul(tape.square(diff), tape.leaf(std::move(weights)));
            loss = tape.scale(tape.sum(weighted), 1.0 / static_cast<double>(b));
            break;
        }
    }

    const double loss_value = tape.value(loss)[0];
    if (!std::isfinite(loss_value))
        throw TrainingError("guidance matching training diverged", adam.step);
    std::vector<Tensor> grads = tape.gradients(loss, leaves);
    adam_step(params, grads, adam);
    return loss_value;
}

}  // namespace

double z_value(const GuidanceNets& nets, std::span<const double> x, double t) {
    const Tensor raw = mlp_forward(nets.z_net, x, t);
    return softplus(raw[0]) + nets.z_floor;
}

AdamState guidance_adam_init(const MlpModel& model, double lr) {
    AdamConfig cfg;
    cfg.lr = lr;
    return AdamState::init(model_params(model), cfg);
}

double guidance_z_step(GuidanceNets& nets, const PairSampler& pairs,
                       const Schedule& schedule, const EnergyFn& energy,
                       AdamState& adam, std::size_t batch, Rng& rng) {
    TrainBatch b = draw_batch(pairs, schedule, energy, batch, rng);
    std::vector<Tensor> params = model_params(nets.z_net);
    const double loss = z_train_step(nets, params, adam, b);
    params_to_model(params, nets.z_net);
    return loss;
}

double guidance_g_step(GuidanceNets& nets, const VectorField& base_field,
                       const PairSampler& pairs, const Schedule& schedule,
                       const EnergyFn& energy, AdamState& adam, std::size_t batch,
                       Rng& rng) {
    TrainBatch b = draw_batch(pairs, schedule, energy, batch, rng);
    std::vector<Tensor> params = model_params(nets.g_net);
    const double loss = g_train_step(nets, base_field, params, adam, b);
    params_to_model(params, nets.g_net);
    return loss;
}

Tensor g_value(const GuidanceNets& nets, std::span<const double> x, double t) {
    return mlp_forward(nets.g_net, x, t);
}

double loss_z_probe(const GuidanceNets& nets, const PairSampler& pairs,
                    const Schedule& schedule, const EnergyFn& energy,
                    std::size_t batch, Rng& rng) {
    TrainBatch b = draw_batch(pairs, schedule, energy, batch, rng);
    double total = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
        const double z = z_value(nets, b.xt.row(i), b.ts[i]);
        const double diff = z - b.energy_exp[i];
        total += diff * diff;
    }
    return total / static_cast<double>(batch);
}

double loss_g_probe(const GuidanceNets& nets, const VectorField& base_field,
                    const PairSampler& pairs, const Schedule& schedule,
                    const EnergyFn& energy, GuidanceLossKind kind,
                    std::size_t batch, Rng& rng) {
    TrainBatch b = draw_batch(pairs, schedule, energy, batch, rng);
    const std::size_t d = pairs.dim();
    std::vector<double> g(d), vt(d);
    double total = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
        const double z_sg = kind == GuidanceLossKind::MRGM
                                ? nets.mrgm_z
                                : std::max(z_value(nets, b.xt.row(i), b.ts[i]), nets.z_floor);
        const double ratio = b.energy_exp[i] / z_sg;
        Tensor pred = g_value(nets, b.xt.row(i), b.ts[i]);
        if (kind != GuidanceLossKind::GM)
            base_field.eval(b.xt.row(i), b.ts[i], vt);
        double row = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            double r;
            switch (kind) {
                case GuidanceLossKind::GM:
                    r = pred[j] - (ratio - 1.0) * b.v_target.at(i, j);
                    break;
                case GuidanceLossKind::VGM:
                    r = pred[j] + vt[j] - ratio * b.v_target.at(i, j);
                    break;
                default:
                    r = pred[j] + vt[j] - b.v_target.at(i, j);
                    break;
            }
            row += r * r;
        }
        if (kind == GuidanceLossKind::RGM || kind == GuidanceLossKind::MRGM)
            row *= ratio;
        total += row;
    }
    return total / static_cast<double>(batch);
}

GuidanceNets train_guidance(const VectorField& base_field, const PairSampler& pairs,
                            const Schedule& schedule, const EnergyFn& energy,
                            const GuidanceTrainConfig& config) {
    const std::size_t d = pairs.dim();
    GuidanceNets nets;
    nets.loss_kind = config.kind;
    nets.z_floor = config.z_floor;
    nets.has_z = config.kind != GuidanceLossKind::MRGM;

    Rng rng = Rng::from_path(config.seed, {0x21});

    std::vector<std::size_t> g_sizes;
    g_sizes.push_back(d);
    g_sizes.insert(g_sizes.end(), config.g_hidden.begin(), config.g_hidden.end());
    g_sizes.push_back(d);
    nets.g_net = MlpModel::make(g_sizes, config.activation, config.time_embedding, rng);

    if (nets.has_z) {
        std::vector<std::size_t> z_sizes;
        z_sizes.push_back(d);
        z_sizes.insert(z_sizes.end(), config.z_hidden.begin(), config.z_hidden.end());
        z_sizes.push_back(1);
        nets.z_net = MlpModel::make(z_sizes, config.activation, config.time_embedding, rng);
    } else {
        // dataset-level constant Z = E_{x1}[e^{-J}]
        Tensor x0, x1;
        pairs.sample_pairs(config.mrgm_z_samples, rng, x0, x1);
        double total = 0.0;
        for (std::size_t i = 0; i < config.mrgm_z_samples; ++i)
            total += clamped_exp_neg(energy.value(x1.row(i)));
        nets.mrgm_z = std::max(total / static_cast<double>(config.mrgm_z_samples),
                               config.z_floor);
    }

    if (config.steps == 0) return nets;

    std::vector<Tensor> g_params = model_params(nets.g_net);
    AdamConfig adam_cfg;
    adam_cfg.lr = config.lr;
    AdamState g_adam = AdamState::init(g_params, adam_cfg);
    EmaState g_ema = EmaState::init(g_params, config.ema_decay);

    std::vector<Tensor> z_params;
    AdamState z_adam;
    EmaState z_ema;
    if (nets.has_z) {
        z_params = model_params(nets.z_net);
        z_adam = AdamState::init(z_params, adam_cfg);
        z_ema = EmaState::init(z_params, config.ema_decay);
    }

    if (config.joint) {
        for (std::size_t step = 0; step < config.steps; ++step) {
            const double lr = config.cosine_lr
                                  ? config.lr * cosine_anneal(step, config.steps)
                                  : config.lr;
            z_adam.config.lr = lr;
            g_adam.config.lr = lr;
            TrainBatch batch = draw_batch(pairs, schedule, energy, config.batch, rng);
            if (nets.has_z) {
                nets.z_loss_curve.push_back(z_train_step(nets, z_params, z_adam, batch));
                z_ema.update(z_params);
            }
            nets.g_loss_curve.push_back(
                g_train_step(nets, base_field, g_params, g_adam, batch));
            g_ema.update(g_params);
        }
    } else {
        if (nets.has_z) {
            for (std::size_t step = 0; step < config.steps; ++step) {
                z_adam.config.lr = config.cosine_lr
                                       ? config.lr * cosine_anneal(step, config.steps)
                                       : config.lr;
                TrainBatch batch = draw_batch(pairs, schedule, energy, config.batch, rng);
                nets.z_loss_curve.push_back(z_train_step(nets, z_params, z_adam, batch));
                z_ema.update(z_params);
            }
            // the g phase reads the averaged normalizer
            params_to_model(z_ema.average, nets.z_net);
        }
        for (std::size_t step = 0; step < config.steps; ++step) {
            g_adam.config.lr = config.cosine_lr
                                   ? config.lr * cosine_anneal(step, config.steps)
                                   : config.lr;
            TrainBatch batch = draw_batch(pairs, schedule, energy, config.batch, rng);
            nets.g_loss_curve.push_back(
                g_train_step(nets, base_field, g_params, g_adam, batch));
            g_ema.update(g_params);
        }
    }

    params_to_model(g_ema.average, nets.g_net);
    if (nets.has_z) params_to_model(z_ema.average, nets.z_net);
    return nets;
}

CovModel train_cov_model(const VectorField& base_field, const PairSampler& pairs,
                         const Schedule& schedule, const CovTrainConfig& config) {
    const std::size_t d = pairs.dim();
    const std::size_t packed = d * (d + 1) / 2;
    CovModel cov;
    cov.dim = d;

    Rng rng = Rng::from_path(config.seed, {0x31});
    std::vector<std::size_t> sizes;
    sizes.push_back(d);
    sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
    sizes.push_back(packed);
    cov.m2_net = MlpModel::make(sizes, config.activation, config.time_embedding, rng);

    std::vector<Tensor> params = model_params(cov.m2_net);
    AdamConfig adam_cfg;
    adam_cfg.lr = config.lr;
    AdamState adam = AdamState::init(params, adam_cfg);
    EmaState ema = EmaState::init(params, config.ema_decay);

    const std::size_t b = config.batch;
    const bool has_sigma = schedule.eval(0.5).sigma > 0.0;
    const double t_cap = 1.0 - 1e-4;  // x1_hat needs t < 1
    Tensor x0, x1;
    std::vector<double> noise(d, 0.0), v(d), x1_hat(d), resid(d);
    for (std::size_t step = 0; step < config.steps; ++step) {
        adam.config.lr = config.cosine_lr
                             ? config.lr * cosine_anneal(step, config.steps)
                             : config.lr;
        pairs.sample_pairs(b, rng, x0, x1);
        Tensor xt({b, d});
        Tensor target({b, packed});
        std::vector<double> ts(b);
        for (std::size_t i = 0; i < b; ++i) {
            ts[i] = rng.uniform();
            if (has_sigma)
                for (std::size_t j = 0; j < d; ++j) noise[j] = rng.normal();
            sample_conditional_path(x0.row(i), x1.row(i), ts[i], noise, schedule,
                                    xt.row(i));
            const double te = std::min(ts[i], t_cap);
            base_field.eval(xt.row(i), te, v);
            estimate_x1(xt.row(i), te, v, schedule, x1_hat);
            for (std::size_t j = 0; j < d; ++j) resid[j] = x1.at(i, j) - x1_hat[j];
            std::size_t p = 0;
            for (std::size_t r = 0; r < d; ++r)
                for (std::size_t c = r; c < d; ++c)
                    target.at(i, p++) = resid[r] * resid[c];
        }

        params_to_model(params, cov.m2_net);
        Tape tape;
        Tape::NodeId x_node = tape.leaf(xt);
        std::vector<Tape::NodeId> leaves;
        Tape::NodeId pred = mlp_forward_tape(cov.m2_net, tape, x_node, ts, leaves);
        Tape::NodeId diff = tape.sub(pred, tape.leaf(std::move(target)));
        Tape::NodeId loss =
            tape.scale(tape.sum(tape.square(diff)), 1.0 / static_cast<double>(b));
        const double loss_value = tape.value(loss)[0];
        if (!std::isfinite(loss_value))
            throw TrainingError("covariance model training diverged",
                                static_cast<long>(step));
        cov.loss_curve.push_back(loss_value);
        std::vector<Tensor> grads = tape.gradients(loss, leaves);
        adam_step(params, grads, adam);
        ema.update(params);
    }
    params_to_model(ema.average, cov.m2_net);
    return cov;
}

Tensor cov_model_sigma(const CovModel& cov, const GuidanceContext& ctx,
                       std::span<const double> x_t, double t, double* clamp_fraction) {
    (void)ctx;
    const std::size_t d = cov.dim;
    const Tensor packed = mlp_forward(cov.m2_net, x_t, t);
    Tensor m2({d, d});
    std::size_t p = 0;
    for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = r; c < d; ++c) {
            m2.at(r, c) = packed[p];
            m2.at(c, r) = packed[p];
            ++p;
        }

    auto [sigma, clamped] = psd_project(m2, 0.0);
    if (clamp_fraction) {
        double max_eig = 0.0;
        for (std::size_t i = 0; i < d; ++i) max_eig = std::max(max_eig, std::abs(sigma.at(i, i)));
        *clamp_fraction = clamped / std::max(max_eig, 1e-12);
    }
    return sigma;
}

Tensor g_cov_l(const GuidanceContext& ctx, std::span<const double> x_t, double t,
               const EnergyFn& energy, const CovModel& cov) {
    const std::size_t d = x_t.size();
    const ScheduleEval e = ctx.schedule.eval(t);
    if (!(e.beta > 0.0))
        throw NumericalError("g_cov_l: beta_t = 0 (t = 1 excluded)");
    const double coef = -(e.dalpha * e.beta - e.dbeta * e.alpha) / e.beta;

    Tensor sigma = cov_model_sigma(cov, ctx, x_t, t);
    Tensor v = ctx.field->eval(x_t, t);
    std::vector<double> x1_hat(d);
    estimate_x1(x_t, t, v.span(), ctx.schedule, x1_hat);
    Tensor dj = energy.grad(x1_hat);
    if (!all_finite(dj.span()))
        throw NumericalError("g_cov_l: non-finite energy gradient");

    Tensor g({d});
    matvec_into(sigma, dj.span(), g.span());
    for (std::size_t j = 0; j < d; ++j) g[j] *= coef;
    return g;
}

GuidanceFn make_learned_guidance(const GuidanceNets& nets) {
    const GuidanceNets* np = &nets;
    return [np](std::size_t, int, std::span<const double> x, double t,
                std::span<double> out, McDiagnostics*, bool*) {
        Tensor g = g_value(*np, x, t);
        for (std::size_t j = 0; j < out.size(); ++j) out[j] = g[j];
    };
}

GuidanceFn make_cov_l_guidance(const GuidanceContext& ctx, const CovModel& cov,
                               const EnergyFn* energy) {
    auto ctx_copy = std::make_shared<GuidanceContext>(ctx);
    const CovModel* cp = &cov;
    return [ctx_copy, cp, energy](std::size_t, int, std::span<const double> x, double t,
                                  std::span<double> out, McDiagnostics*, bool*) {
        Tensor g = g_cov_l(*ctx_copy, x, t, *energy, *cp);
        for (std::size_t j = 0; j < out.size(); ++j) out[j] = g[j];
    };
}

double ZNetScalarField::value(std::span<const double> x, double t) const {
    return std::log(z_value(*nets_, x, t));
}

void ZNetScalarField::grad(std::span<const double> x, double t,
                           std::span<double> out) const {
    // d log(softplus(raw) + floor) / d raw = sigmoid(raw) / (softplus(raw) + floor)
    const Tensor raw = mlp_forward(nets_->z_net, x, t);
    const double r = raw[0];
    const double sp = softplus(r) + nets_->z_floor;
    const double sig = r > 30.0 ? 1.0 : (r < -30.0 ? std::exp(r) : 1.0 / (1.0 + std::exp(-r)));
    const double cot = sig / sp;
    Tensor g = mlp_vjp(nets_->z_net, x, t, std::span<const double>(&cot, 1));
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = g[j];
}

GuidanceFn make_diff_logz_guidance(const GuidanceContext& ctx, const GuidanceNets& nets) {
    auto ctx_copy = std::make_shared<GuidanceContext>(ctx);
    auto field = std::make_shared<ZNetScalarField>(&nets);
    return [ctx_copy, field](std::size_t, int, std::span<const double> x, double t,
                             std::span<double> out, McDiagnostics*, bool*) {
        Tensor g = g_diff_logz(*ctx_copy, x, t, *field);
        for (std::size_t j = 0; j < out.size(); ++j) out[j] = g[j];
    };
}

}  // namespace flowguide
