#include "bridgets/bridge.hpp"

#include <cmath>
#include <stdexcept>

namespace bridgets {

MarginalParams marginal_coefficients(const BridgeSchedule& s, double t) {
    const ScheduleCoefficients c = coefficients(s, t);
    MarginalParams p;
    p.x0_coef = c.alpha_t * c.sigma2_bar_t / c.sigma2_1;
    p.xT_coef = c.alpha_bar_t * c.sigma2_t / c.sigma2_1;
    p.var = c.alpha_t * c.alpha_t * c.sigma2_bar_t * c.sigma2_t / c.sigma2_1;
    return p;
}

Array3 marginal_mean(const BridgeSchedule& s, const Array3& x0, const Array3& xT, double t) {
    if (!x0.same_shape(xT)) throw std::invalid_argument("marginal: endpoint shape mismatch");
    const MarginalParams p = marginal_coefficients(s, t);
    Array3 mean = x0;
    for (size_t i = 0; i < mean.v.size(); ++i)
        mean.v[i] = p.x0_coef * x0.v[i] + p.xT_coef * xT.v[i];
    return mean;
}

Array3 sample_marginal(const BridgeSchedule& s, const Array3& x0, const Array3& xT,
                       double t, Rng& rng, bool stochastic) {
    Array3 x = marginal_mean(s, x0, xT, t);
    if (stochastic) {
        const double sd = std::sqrt(marginal_coefficients(s, t).var);
        for (double& xi : x.v) xi += sd * rng.normal();
    }
    return x;
}

TransitionParams transition_coefficients(const BridgeSchedule& s, double t, double t_prev) {
    if (!(t_prev >= 0.0)) throw std::invalid_argument("transition: t_prev must be >= 0");
    if (!(t_prev < t)) throw std::invalid_argument("transition: t_prev must be < t");
    if (!(t <= 1.0)) throw std::invalid_argument("transition: t must be <= 1");
    const double s_t = sigma2_at(s, t);
    const double s_prev = sigma2_at(s, t_prev);
    TransitionParams p;
    p.x_t_coef = s_prev / s_t;
    p.x0_coef = 1.0 - p.x_t_coef;
    p.var = s_prev * (s_t - s_prev) / s_t;
    return p;
}

Array3 transition_sample(const BridgeSchedule& s, const Array3& x_t, const Array3& x0_hat,
                         double t, double t_prev, Rng& rng, bool stochastic) {
    if (!x_t.same_shape(x0_hat))
        throw std::invalid_argument("transition: state/estimate shape mismatch");
    const TransitionParams p = transition_coefficients(s, t, t_prev);
    Array3 out = x_t;
    const double sd = stochastic ? std::sqrt(p.var) : 0.0;
    for (size_t i = 0; i < out.v.size(); ++i) {
        double v = p.x_t_coef * x_t.v[i] + p.x0_coef * x0_hat.v[i];
        if (stochastic) v += sd * rng.normal();
        out.v[i] = v;
    }
    return out;
}

void SamplerConfig::validate() const {
    if (steps < 1) throw std::invalid_argument("sampler: steps must be >= 1");
}

TimeSeriesWindow sample_imputation(const DenoiserFn& denoiser, const TimeSeriesWindow& x_ob,
                                   const PriorStack& prior, const ObservationMask& mask,
                                   const BridgeSchedule& s, const SamplerConfig& cfg,
                                   Rng& rng) {
    cfg.validate();
    const Array3& stack = prior.values;
    if (stack.rows != x_ob.values.rows || stack.cols != x_ob.values.cols)
        throw std::invalid_argument("sample_imputation: prior/window shape mismatch");
    if (mask.rows != stack.rows || mask.cols != stack.cols)
        throw std::invalid_argument("sample_imputation: mask shape mismatch");

    Array3 x = stack;
    for (int k = 0; k < cfg.steps; ++k) {
        const double t = 1.0 - static_cast<double>(k) / cfg.steps;
        const double t_prev = 1.0 - static_cast<double>(k + 1) / cfg.steps;
        Array3 x0_hat = denoiser(x, t, stack, mask);
        if (!x0_hat.same_shape(x))
            throw std::invalid_argument("sample_imputation: model output shape mismatch");
        if (!all_finite(x0_hat))
            throw NumericalError("sample_imputation: non-finite model output");
        x = transition_sample(s, x, x0_hat, t, t_prev < 0.0 ? 0.0 : t_prev, rng,
                              cfg.stochastic);
        if (cfg.fuse_per_step && stack.depth > 1) {
            const Array2 fused = fuse_output(x);
            for (int l = 0; l < x.rows; ++l)
                for (int c = 0; c < x.cols; ++c)
                    for (int n = 0; n < x.depth; ++n) x.at(l, c, n) = fused.at(l, c);
        }
    }

    TimeSeriesWindow out;
    out.start_index = x_ob.start_index;
    out.values = fuse_output(x);
    if (cfg.clamp_observed) {
        for (int l = 0; l < out.values.rows; ++l)
            for (int c = 0; c < out.values.cols; ++c)
                if (mask.observed(l, c)) out.values.at(l, c) = x_ob.values.at(l, c);
    }
    if (!all_finite(out.values)) throw NumericalError("sample_imputation: non-finite output");
    return out;
}

TimeSeriesWindow sample_imputation(const DenoiserModel& model, const TimeSeriesWindow& x_ob,
                                   const PriorStack& prior, const ObservationMask& mask,
                                   const BridgeSchedule& s, const SamplerConfig& cfg,
                                   Rng& rng) {
    DenoiserFn fn = [&model](const Array3& x, double t, const Array3& p,
                             const ObservationMask& m) { return model.forward(x, t, p, m); };
    return sample_imputation(fn, x_ob, prior, mask, s, cfg, rng);
}

BridgeLossResult bridge_loss(DenoiserModel& model, const TimeSeriesWindow& target,
                             const PriorStack& prior, const ObservationMask& mask,
                             const BridgeSchedule& s, Rng& rng, bool probabilistic,
                             bool want_prior_grad) {
    const Array3& stack = prior.values;
    if (stack.rows != target.values.rows || stack.cols != target.values.cols)
        throw std::invalid_argument("bridge_loss: prior/window shape mismatch");
    if (mask.rows != stack.rows || mask.cols != stack.cols)
        throw std::invalid_argument("bridge_loss: mask shape mismatch");

    BridgeLossResult res;
    res.model_grad.assign(model.param_count(), 0.0);
    res.prior_grad = Array3(stack.rows, stack.cols, stack.depth);

    const size_t miss = mask.missing_count();
    if (miss == 0) return res;  // nothing to predict

    res.t = s.t_min + (1.0 - s.t_min) * rng.uniform();

    const int n = stack.depth;
    Array3 x0_rep(stack.rows, stack.cols, n);
    for (int l = 0; l < stack.rows; ++l)
        for (int c = 0; c < stack.cols; ++c) {
            const double v = target.values.at(l, c);
            for (int i = 0; i < n; ++i) x0_rep.at(l, c, i) = v;
        }

    const MarginalParams mp = marginal_coefficients(s, res.t);
    Array3 x_t = sample_marginal(s, x0_rep, stack, res.t, rng, probabilistic);

    DenoiserCache cache;
    const Array3 out = model.forward(x_t, res.t, stack, mask, &cache);

    // Fused prediction scored on missing entries only.
    const Array2 fused = fuse_output(out);
    double loss = 0.0;
    Array3 d_out(stack.rows, stack.cols, n);
    const double scale = 2.0 / (static_cast<double>(miss) * n);
    for (int l = 0; l < stack.rows; ++l)
        for (int c = 0; c < stack.cols; ++c) {
            if (mask.observed(l, c)) continue;
            const double diff = fused.at(l, c) - target.values.at(l, c);
            loss += diff * diff;
            for (int i = 0; i < n; ++i) d_out.at(l, c, i) = scale * diff;
        }
    res.loss = loss / static_cast<double>(miss);

    Array3 d_x_t, d_prior_in;
    model.backward(cache, d_out, res.model_grad,
                   want_prior_grad ? &d_x_t : nullptr,
                   want_prior_grad ? &d_prior_in : nullptr);

    if (want_prior_grad) {
        // The prior reaches the loss twice: as conditioning input and through
        // the noised state (weight xT_coef).
        for (size_t i = 0; i < res.prior_grad.v.size(); ++i)
            res.prior_grad.v[i] = d_prior_in.v[i] + mp.xT_coef * d_x_t.v[i];
    }
    return res;
}

}  // namespace bridgets
