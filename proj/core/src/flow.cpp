#include "flowguide/flow.hpp"

#include <cmath>

#include "flowguide/errors.hpp"
#include "flowguide/numeric.hpp"
#include "flowguide/optim.hpp"
#include "flowguide/parallel.hpp"

namespace flowguide {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

void sample_conditional_path(std::span<const double> x0, std::span<const double> x1,
                             double t, std::span<const double> noise,
                             const Schedule& schedule, std::span<double> out) {
    const ScheduleEval e = schedule.eval(t);
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = e.alpha * x1[i] + e.beta * x0[i];
        if (e.sigma != 0.0) v += e.sigma * noise[i];
        out[i] = v;
    }
}

void conditional_vf(std::span<const double> x0, std::span<const double> x1, double t,
                    std::span<const double> noise, const Schedule& schedule,
                    std::span<double> out) {
    const ScheduleEval e = schedule.eval(t);
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = e.dalpha * x1[i] + e.dbeta * x0[i];
        if (e.dsigma != 0.0) v += e.dsigma * noise[i];
        out[i] = v;
    }
}

double conditional_log_density(std::span<const double> x_t, std::span<const double> x0,
                               std::span<const double> x1, double t,
                               const Schedule& schedule, double sigma_eff) {
    if (!(sigma_eff > 0.0))
        throw ContractError("conditional_log_density: sigma_eff must be positive");
    const ScheduleEval e = schedule.eval(t);
    const double inv_var = 1.0 / (sigma_eff * sigma_eff);
    double quad = 0.0;
    for (std::size_t i = 0; i < x_t.size(); ++i) {
        const double d = x_t[i] - (e.alpha * x1[i] + e.beta * x0[i]);
        quad += d * d;
    }
    const double d = static_cast<double>(x_t.size());
    return -0.5 * d * (kLog2Pi + 2.0 * std::log(sigma_eff)) - 0.5 * quad * inv_var;
}

double pushforward_log_density_x1(
    std::span<const double> x_t, std::span<const double> x1, double t,
    const Schedule& schedule,
    const std::function<double(std::span<const double>)>& source_log_density) {
    const ScheduleEval e = schedule.eval(t);
    if (!(e.beta > 0.0))
        throw NumericalError("pushforward_log_density_x1: beta_t = 0 (t = 1 excluded)");
    std::vector<double> u(x_t.size());
    for (std::size_t i = 0; i < u.size(); ++i)
        u[i] = (x_t[i] - e.alpha * x1[i]) / e.beta;
    return source_log_density(u) - static_cast<double>(x_t.size()) * std::log(e.beta);
}

void estimate_x1(std::span<const double> x_t, double t, std::span<const double> v,
                 const Schedule& schedule, std::span<double> out) {
    const ScheduleEval e = schedule.eval(t);
    const double den = e.dalpha * e.beta - e.dbeta * e.alpha;
    if (den == 0.0)
        throw NumericalError("estimate_x1: schedule denominator vanishes at t = " +
                             std::to_string(t));
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = (-e.dbeta * x_t[i] + e.beta * v[i]) / den;
}

void estimate_x0(std::span<const double> x_t, double t, std::span<const double> v,
                 const Schedule& schedule, std::span<double> out) {
    const ScheduleEval e = schedule.eval(t);
    const double den = e.dalpha * e.beta - e.dbeta * e.alpha;
    if (den == 0.0)
        throw NumericalError("estimate_x0: schedule denominator vanishes at t = " +
                             std::to_string(t));
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = (e.dalpha * x_t[i] - e.alpha * v[i]) / den;
}

OdeMethod ode_method_from_string(const std::string& name) {
    if (name == "euler") return OdeMethod::Euler;
    if (name == "rk4") return OdeMethod::Rk4;
    throw ValidationError("unknown ODE method '" + name + "' (expected euler|rk4)");
}

std::string ode_method_to_string(OdeMethod method) {
    return method == OdeMethod::Euler ? "euler" : "rk4";
}

OdeResult ode_sample(const SampleField& field, const Tensor& x0_batch,
                     const OdeOptions& options) {
    if (options.steps < 1) throw ContractError("ode_sample: steps >= 1 required");
    if (x0_batch.rank() != 2) throw DimensionError("ode_sample: batch must be (n x d)");
    const std::size_t n = x0_batch.shape()[0];
    const std::size_t d = x0_batch.shape()[1];
    const std::size_t record = std::min(options.record_trajectories, n);
    const double h = (options.t_end - options.t_start) / static_cast<double>(options.steps);

    OdeResult result;
    result.final_states = x0_batch;
    result.trajectories.resize(record);
    for (std::size_t s = 0; s < record; ++s) {
        result.trajectories[s].times.resize(options.steps + 1);
        result.trajectories[s].states = Tensor({options.steps + 1, d});
    }

    parallel_for(n, options.threads, [&](std::size_t s) {
        std::vector<double> x(d), k1(d), k2(d), k3(d), k4(d), tmp(d);
        for (std::size_t i = 0; i < d; ++i) x[i] = x0_batch.at(s, i);
        if (s < record) {
            result.trajectories[s].times[0] = options.t_start;
            for (std::size_t i = 0; i < d; ++i) result.trajectories[s].states.at(0, i) = x[i];
        }
        for (std::size_t step = 0; step < options.steps; ++step) {
            const double t = options.t_start + h * static_cast<double>(step);
            if (options.method == OdeMethod::Euler) {
                field(s, static_cast<int>(step), x, t, k1);
                for (std::size_t i = 0; i < d; ++i) x[i] += h * k1[i];
            } else {
                field(s, static_cast<int>(step), x, t, k1);
                for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + 0.5 * h * k1[i];
                field(s, static_cast<int>(step), tmp, t + 0.5 * h, k2);
                for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + 0.5 * h * k2[i];
                field(s, static_cast<int>(step), tmp, t + 0.5 * h, k3);
                for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + h * k3[i];
                field(s, static_cast<int>(step), tmp, t + h, k4);
                for (std::size_t i = 0; i < d; ++i)
                    x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if (!all_finite(x))
                throw NumericalError("ode_sample: non-finite state at step " +
                                     std::to_string(step),
                                     static_cast<long>(step));
            if (s < record) {
                result.trajectories[s].times[step + 1] = t + h;
                for (std::size_t i = 0; i < d; ++i)
                    result.trajectories[s].states.at(step + 1, i) = x[i];
            }
        }
        for (std::size_t i = 0; i < d; ++i) result.final_states.at(s, i) = x[i];
    });
    return result;
}

OdeResult ode_sample(const VectorField& field, const Tensor& x0_batch,
                     const OdeOptions& options) {
    SampleField fn = [&field](std::size_t, int, std::span<const double> x, double t,
                              std::span<double> out) { field.eval(x, t, out); };
    return ode_sample(fn, x0_batch, options);
}

FlowModel cfm_train(const CfmConfig& config) {
    FlowModel flow;
    flow.schedule = config.schedule;
    flow.coupling = CouplingSampler(config.source, config.target, config.coupling,
                                    config.ot_batch_size);
    flow.seed = config.seed;
    flow.train_steps = config.steps;

    Rng rng = Rng::from_path(config.seed, {0x11});
    std::vector<std::size_t> sizes;
    sizes.push_back(2);
    sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
    sizes.push_back(2);
    flow.model = MlpModel::make(sizes, config.activation, config.time_embedding, rng);

    if (config.steps == 0) return flow;

    std::vector<Tensor> params;
    for (std::size_t l = 0; l < flow.model.weights.size(); ++l) {
        params.push_back(flow.model.weights[l]);
        params.push_back(flow.model.biases[l]);
    }
    AdamConfig adam_cfg;
    adam_cfg.lr = config.lr;
    AdamState adam = AdamState::init(params, adam_cfg);
    EmaState ema = EmaState::init(params);

    const std::size_t b = config.batch;
    const bool has_sigma = config.schedule.eval(0.5).sigma > 0.0;
    Tensor x0, x1;
    Tensor xt({b, 2}), target({b, 2});
    std::vector<double> ts(b), noise(2);
    flow.loss_curve.reserve(config.steps);

    const double base_lr = config.lr;
    for (std::size_t step = 0; step < config.steps; ++step) {
        if (config.cosine_lr)
            adam.config.lr = base_lr * cosine_anneal(step, config.steps);
        flow.coupling.sample_pairs(b, rng, x0, x1);
        for (std::size_t i = 0; i < b; ++i) {
            ts[i] = rng.uniform();
            if (has_sigma) {
                auto [n0, n1] = rng.normal2();
                noise[0] = n0;
                noise[1] = n1;
            } else {
                noise[0] = noise[1] = 0.0;
            }
            sample_conditional_path(x0.row(i), x1.row(i), ts[i], noise,
                                    config.schedule, xt.row(i));
            conditional_vf(x0.row(i), x1.row(i), ts[i], noise, config.schedule,
                           target.row(i));
        }

        Tape tape;
        Tape::NodeId x_node = tape.leaf(xt);
        std::vector<Tape::NodeId> leaves;
        // sync model tensors from the optimizer's parameter copies
        for (std::size_t l = 0, p = 0; l < flow.model.weights.size(); ++l) {
            flow.model.weights[l] = params[p++];
            flow.model.biases[l] = params[p++];
        }
        Tape::NodeId pred = mlp_forward_tape(flow.model, tape, x_node, ts, leaves);
        Tape::NodeId diff = tape.sub(pred, tape.leaf(target));
        Tape::NodeId loss =
            tape.scale(tape.sum(tape.square(diff)), 1.0 / static_cast<double>(b));

        const double loss_value = tape.value(loss)[0];
        if (!std::isfinite(loss_value))
            throw TrainingError("cfm_train: non-finite loss at step " +
                                std::to_string(step), static_cast<long>(step));
        flow.loss_curve.push_back(loss_value);

        std::vector<Tensor> grads = tape.gradients(loss, leaves);
        adam_step(params, grads, adam);
        ema.update(params);
    }

    for (std::size_t l = 0, p = 0; l < flow.model.weights.size(); ++l) {
        flow.model.weights[l] = ema.average[p++];
        flow.model.biases[l] = ema.average[p++];
    }
    return flow;
}

double cfm_loss_probe(const FlowModel& flow, std::size_t batch, Rng& rng) {
    Tensor x0, x1;
    flow.coupling.sample_pairs(batch, rng, x0, x1);
    const bool has_sigma = flow.schedule.eval(0.5).sigma > 0.0;
    std::vector<double> xt(2), target(2), noise = {0.0, 0.0};
    double total = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
        const double t = rng.uniform();
        if (has_sigma) {
            auto [n0, n1] = rng.normal2();
            noise[0] = n0;
            noise[1] = n1;
        }
        sample_conditional_path(x0.row(i), x1.row(i), t, noise, flow.schedule, xt);
        conditional_vf(x0.row(i), x1.row(i), t, noise, flow.schedule, target);
        Tensor v = mlp_forward(flow.model, xt, t);
        for (std::size_t j = 0; j < 2; ++j) {
            const double d = v[j] - target[j];
            total += d * d;
        }
    }
    return total / static_cast<double>(batch);
}

}  // namespace flowguide
