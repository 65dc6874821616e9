#include <doctest.h>

#include <cmath>

#include "bridgets/bridge.hpp"
#include "oracles.hpp"

using namespace bridgets;

namespace {

BridgeSchedule unit_constant() {
    BridgeSchedule s;
    s.kind = ScheduleKind::Constant;
    s.g2_0 = 1.0;
    return s;
}

Array3 scalar3(double v) { return Array3(1, 1, 1, v); }

Array3 random_tensor(int l, int c, int n, Rng& rng, double scale = 1.0) {
    Array3 t(l, c, n);
    for (double& x : t.v) x = rng.uniform(-scale, scale);
    return t;
}

}  // namespace

TEST_SUITE("bridge") {

TEST_CASE("marginal parameters at the midpoint of a unit bridge") {
    // Frozen by substituting the closed-form coefficients: at t=0.5 with
    // g^2=1, both endpoint weights are 0.5 and the variance is 0.25.
    const BridgeSchedule s = unit_constant();
    const MarginalParams p = marginal_coefficients(s, 0.5);
    CHECK(p.x0_coef == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(p.xT_coef == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(p.var == doctest::Approx(0.25).epsilon(1e-14));

    const Array3 mean = marginal_mean(s, scalar3(0.0), scalar3(2.0), 0.5);
    CHECK(mean.at(0, 0, 0) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("marginal boundaries are exact") {
    for (int kind = 0; kind < 2; ++kind) {
        BridgeSchedule s;
        s.kind = kind == 0 ? ScheduleKind::Constant : ScheduleKind::GMax;
        const Array3 x0 = scalar3(-0.75);
        const Array3 xT = scalar3(1.5);
        const MarginalParams at0 = marginal_coefficients(s, 0.0);
        CHECK(at0.x0_coef == 1.0);
        CHECK(at0.xT_coef == 0.0);
        CHECK(at0.var == 0.0);
        CHECK(marginal_mean(s, x0, xT, 0.0).at(0, 0, 0) == -0.75);
        const MarginalParams at1 = marginal_coefficients(s, 1.0);
        CHECK(at1.x0_coef == 0.0);
        CHECK(at1.xT_coef == 1.0);
        CHECK(at1.var == 0.0);
        CHECK(marginal_mean(s, x0, xT, 1.0).at(0, 0, 0) == 1.5);
    }
}

TEST_CASE("marginal mean weights form a convex combination") {
    Rng rng(41);
    for (int trial = 0; trial < 200; ++trial) {
        BridgeSchedule s;
        s.kind = trial % 2 == 0 ? ScheduleKind::Constant : ScheduleKind::GMax;
        s.g2_0 = 0.01 + rng.uniform() * 2.0;
        s.g2_1 = s.g2_0 + rng.uniform() * 20.0;
        const MarginalParams p = marginal_coefficients(s, rng.uniform());
        CHECK(std::fabs(p.x0_coef + p.xT_coef - 1.0) <= 1e-12);
        CHECK(p.var >= 0.0);
    }
}

TEST_CASE("sample_marginal pins the endpoints and is seed-reproducible") {
    const BridgeSchedule s = unit_constant();
    const Array3 x0 = scalar3(0.3);
    const Array3 xT = scalar3(-1.1);
    Rng rng_a(1), rng_b(2);
    CHECK(sample_marginal(s, x0, xT, 0.0, rng_a).at(0, 0, 0) == 0.3);
    CHECK(sample_marginal(s, x0, xT, 0.0, rng_b).at(0, 0, 0) == 0.3);

    Rng r1(77), r2(77);
    const Array3 a = sample_marginal(s, x0, xT, 0.5, r1);
    const Array3 b = sample_marginal(s, x0, xT, 0.5, r2);
    CHECK(a.v == b.v);
}

TEST_CASE("sample_marginal moments match the closed form") {
    const BridgeSchedule s = unit_constant();
    const Array3 x0 = scalar3(0.0);
    const Array3 xT = scalar3(2.0);
    Rng rng(99);
    const int n = 100000;
    std::vector<double> samples;
    samples.reserve(n);
    for (int i = 0; i < n; ++i)
        samples.push_back(sample_marginal(s, x0, xT, 0.5, rng).at(0, 0, 0));
    const oracles::Moments m = oracles::moments(samples);
    const double se_mean = 0.5 / std::sqrt(static_cast<double>(n));
    CHECK(std::fabs(m.mean - 1.0) <= 4.0 * se_mean);
    CHECK(std::fabs(m.var - 0.25) <= 0.02 * 0.25);
}

TEST_CASE("transition kernel parameters and pinned endpoint") {
    const BridgeSchedule s = unit_constant();
    // Frozen from the composition oracle: stepping 0.5 -> 0.25 mixes
    // (0.5, 0.5) and leaves variance 0.125.
    const TransitionParams p = transition_coefficients(s, 0.5, 0.25);
    CHECK(p.x_t_coef == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(p.x0_coef == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(p.var == doctest::Approx(0.125).epsilon(1e-14));

    Rng rng(5);
    const Array3 hop =
        transition_sample(s, scalar3(1.0), scalar3(0.0), 0.5, 0.0, rng);
    CHECK(hop.at(0, 0, 0) == 0.0);  // pinned exactly at the estimate

    const TransitionParams nearly = transition_coefficients(s, 0.5, 0.5 - 1e-9);
    CHECK(nearly.x_t_coef == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(nearly.var <= 2e-9);
}

TEST_CASE("transition rejects bad time pairs") {
    const BridgeSchedule s = unit_constant();
    CHECK_THROWS_AS(transition_coefficients(s, 0.5, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(transition_coefficients(s, 0.5, 0.7), std::invalid_argument);
    CHECK_THROWS_AS(transition_coefficients(s, 0.5, -0.1), std::invalid_argument);
    CHECK_THROWS_AS(transition_coefficients(s, 1.2, 0.5), std::invalid_argument);
}

TEST_CASE("analytic composition of marginal and kernel reproduces the marginal") {
    Rng rng(2025);
    for (int trial = 0; trial < 100; ++trial) {
        BridgeSchedule s;
        s.kind = trial % 2 == 0 ? ScheduleKind::Constant : ScheduleKind::GMax;
        s.g2_0 = 0.01 + rng.uniform();
        s.g2_1 = s.g2_0 + rng.uniform() * 20.0;
        double t_prev = rng.uniform(), t = rng.uniform();
        if (t_prev > t) std::swap(t_prev, t);
        if (t - t_prev < 1e-6) t = t_prev + 1e-6;
        if (t > 1.0) t = 1.0;

        const MarginalParams at_t = marginal_coefficients(s, t);
        const MarginalParams at_prev = marginal_coefficients(s, t_prev);
        const TransitionParams k = transition_coefficients(s, t, t_prev);

        // Affine composition of the two Gaussians.
        const double x0_coef = k.x_t_coef * at_t.x0_coef + k.x0_coef;
        const double xT_coef = k.x_t_coef * at_t.xT_coef;
        const double var = k.x_t_coef * k.x_t_coef * at_t.var + k.var;
        CHECK(std::fabs(x0_coef - at_prev.x0_coef) <= 1e-10);
        CHECK(std::fabs(xT_coef - at_prev.xT_coef) <= 1e-10);
        CHECK(std::fabs(var - at_prev.var) <= 1e-10 * std::max(1.0, at_prev.var));
    }
}

TEST_CASE("Monte Carlo composition matches the marginal law") {
    const BridgeSchedule s = unit_constant();
    const Array3 x0 = scalar3(-0.5);
    const Array3 xT = scalar3(1.75);
    const double t = 0.8, t_prev = 0.3;
    Rng rng(321);
    const int n = 30000;
    std::vector<double> samples;
    samples.reserve(n);
    for (int i = 0; i < n; ++i) {
        const Array3 x_t = sample_marginal(s, x0, xT, t, rng);
        samples.push_back(transition_sample(s, x_t, x0, t, t_prev, rng).at(0, 0, 0));
    }
    const MarginalParams expect = marginal_coefficients(s, t_prev);
    const double mean = expect.x0_coef * -0.5 + expect.xT_coef * 1.75;
    const oracles::Moments m = oracles::moments(samples);
    const double se_mean = std::sqrt(expect.var / n);
    const double se_var = expect.var * std::sqrt(2.0 / (n - 1.0));
    CHECK(std::fabs(m.mean - mean) <= 4.0 * se_mean);
    CHECK(std::fabs(m.var - expect.var) <= 4.0 * se_var);
}

TEST_CASE("bridge loss is zero for a perfect constant predictor") {
    // Constant target plus a model whose output bias equals it exactly.
    const int L = 8, C = 2;
    DenoiserModel model(C, 1, DenoiserArch{1, 8, 3, 8});
    auto& p = model.params();
    p[p.size() - 2] = 0.6;
    p[p.size() - 1] = 0.6;

    TimeSeriesWindow target;
    target.values = Array2(L, C, 0.6);
    PriorEstimate est;
    est.values = Array2(L, C, 0.6);
    est.source_id = "flat";
    const PriorStack stack = stack_priors({est});
    Rng mask_rng(9);
    const ObservationMask mask = gen_mask(L, C, 0.5, mask_rng);
    BridgeSchedule s = unit_constant();

    Rng rng(4);
    const BridgeLossResult res = bridge_loss(model, target, stack, mask, s, rng);
    CHECK(res.loss == 0.0);
}

TEST_CASE("bridge loss arithmetic on two missing cells") {
    // Zero model, targets {1, 2} missing: (1 + 4) / 2.
    const int L = 2, C = 1;
    DenoiserModel model(C, 1, DenoiserArch{1, 8, 3, 8});

    TimeSeriesWindow target;
    target.values = Array2(L, C);
    target.values.at(0, 0) = 1.0;
    target.values.at(1, 0) = 2.0;

    PriorEstimate est;
    est.values = Array2(L, C, 0.0);
    est.source_id = "zero";
    const PriorStack stack = stack_priors({est});

    ObservationMask mask(L, C, 0);  // everything missing
    BridgeSchedule s = unit_constant();
    Rng rng(8);
    const BridgeLossResult res = bridge_loss(model, target, stack, mask, s, rng);
    CHECK(res.loss == doctest::Approx(2.5).epsilon(1e-14));
}

TEST_CASE("all-observed mask yields zero loss and zero gradients") {
    DenoiserModel model(2, 1, DenoiserArch{1, 8, 3, 8});
    Rng init(3);
    for (double& x : model.params()) x = init.uniform(-0.3, 0.3);
    TimeSeriesWindow target;
    target.values = Array2(6, 2, 1.0);
    PriorEstimate est;
    est.values = Array2(6, 2, 0.5);
    const PriorStack stack = stack_priors({est});
    const ObservationMask mask(6, 2, 1);
    BridgeSchedule s = unit_constant();
    Rng rng(12);
    const BridgeLossResult res = bridge_loss(model, target, stack, mask, s, rng);
    CHECK(res.loss == 0.0);
    for (double g : res.model_grad) CHECK(g == 0.0);
}

TEST_CASE("stacked loss with one prior equals the unstacked objective") {
    // Independent re-derivation: consume the same random stream by hand,
    // build the state, and score the plain (no-stack) objective.
    const int L = 10, C = 2;
    const uint64_t seed = 55;
    DenoiserModel model(C, 1, DenoiserArch{1, 8, 3, 8});
    Rng init(21);
    for (double& x : model.params()) x = init.uniform(-0.3, 0.3);

    Dataset ds = synthetic_sinusoid_dataset(L, C, 2, 0.0);
    TimeSeriesWindow target;
    target.values = ds.values;
    PriorEstimate est;
    est.values = Array2(L, C, 0.0);
    const PriorStack stack = stack_priors({est});
    Rng mask_rng(31);
    const ObservationMask mask = gen_mask(L, C, 0.4, mask_rng);
    BridgeSchedule s = unit_constant();

    Rng lib_rng(seed);
    const BridgeLossResult res = bridge_loss(model, target, stack, mask, s, lib_rng);

    Rng manual(seed);
    const double t = s.t_min + (1.0 - s.t_min) * manual.uniform();
    const MarginalParams mp = marginal_coefficients(s, t);
    Array3 x_t(L, C, 1);
    const double sd = std::sqrt(mp.var);
    for (int l = 0; l < L; ++l)
        for (int c = 0; c < C; ++c)
            x_t.at(l, c, 0) = mp.x0_coef * target.values.at(l, c) +
                              mp.xT_coef * est.values.at(l, c) + sd * manual.normal();
    const Array3 out = model.forward(x_t, t, stack.values, mask);
    double loss = 0.0;
    size_t miss = 0;
    for (int l = 0; l < L; ++l)
        for (int c = 0; c < C; ++c) {
            if (mask.observed(l, c)) continue;
            const double d = out.at(l, c, 0) - target.values.at(l, c);
            loss += d * d;
            ++miss;
        }
    loss /= static_cast<double>(miss);
    CHECK(res.loss == loss);
    CHECK(res.t == t);
}

TEST_CASE("bridge loss gradients match finite differences end to end") {
    const int L = 8, C = 2;
    const uint64_t seed = 1234;
    DenoiserModel model(C, 1, DenoiserArch{2, 8, 3, 8});
    Rng init(71);
    for (double& x : model.params()) x = init.uniform(-0.3, 0.3);

    Dataset ds = synthetic_sinusoid_dataset(L, C, 4, 0.0);
    TimeSeriesWindow target;
    target.values = ds.values;
    PriorEstimate est;
    est.values = Array2(L, C, 0.1);
    PriorStack stack = stack_priors({est});
    Rng mask_rng(47);
    const ObservationMask mask = gen_mask(L, C, 0.5, mask_rng);
    BridgeSchedule s = unit_constant();

    Rng lib_rng(seed);
    const BridgeLossResult res =
        bridge_loss(model, target, stack, mask, s, lib_rng, true, true);

    auto loss_of_params = [&](const std::vector<double>& params) {
        DenoiserModel probe = model;
        probe.params() = params;
        Rng r(seed);
        return bridge_loss(probe, target, stack, mask, s, r).loss;
    };
    CHECK(oracles::max_rel_error(res.model_grad,
                                 oracles::finite_diff_grad(loss_of_params,
                                                           model.params())) <= 1e-4);

    auto loss_of_prior = [&](const std::vector<double>& flat) {
        PriorStack probe = stack;
        probe.values.v = flat;
        Rng r(seed);
        return bridge_loss(model, target, probe, mask, s, r).loss;
    };
    CHECK(oracles::max_rel_error(res.prior_grad.v,
                                 oracles::finite_diff_grad(loss_of_prior,
                                                           stack.values.v)) <= 1e-4);
}

TEST_CASE("oracle denoiser recovers the target for any step count and seed") {
    const int L = 12, C = 3, N = 2;
    Dataset ds = synthetic_sinusoid_dataset(L, C, 6, 0.0);
    TimeSeriesWindow truth;
    truth.values = ds.values;

    Array3 truth_rep(L, C, N);
    for (int l = 0; l < L; ++l)
        for (int c = 0; c < C; ++c)
            for (int n = 0; n < N; ++n) truth_rep.at(l, c, n) = truth.values.at(l, c);
    DenoiserFn oracle = [&truth_rep](const Array3&, double, const Array3&,
                                     const ObservationMask&) { return truth_rep; };

    PriorEstimate a, b;
    a.values = Array2(L, C, 0.3);
    b.values = Array2(L, C, -0.6);
    const PriorStack stack = stack_priors({a, b});
    BridgeSchedule s = unit_constant();
    Rng mask_rng(53);
    const ObservationMask mask = gen_mask(L, C, 0.5, mask_rng);

    for (int steps : {1, 2, 8, 17}) {
        for (uint64_t seed : {0ull, 9ull}) {
            SamplerConfig cfg;
            cfg.steps = steps;
            cfg.clamp_observed = false;
            Rng rng(seed);
            const TimeSeriesWindow out =
                sample_imputation(oracle, truth, stack, mask, s, cfg, rng);
            for (int l = 0; l < L; ++l)
                for (int c = 0; c < C; ++c)
                    CHECK(std::fabs(out.values.at(l, c) - truth.values.at(l, c)) <=
                          1e-12);
        }
    }
}

TEST_CASE("one deterministic step collapses to the t=1 prediction") {
    const int L = 6, C = 2;
    DenoiserModel model(C, 1, DenoiserArch{1, 8, 3, 8});
    Rng init(81);
    for (double& x : model.params()) x = init.uniform(-0.3, 0.3);

    TimeSeriesWindow x_ob;
    x_ob.values = Array2(L, C, 0.25);
    PriorEstimate est;
    est.values = Array2(L, C, -0.4);
    const PriorStack stack = stack_priors({est});
    Rng mask_rng(91);
    const ObservationMask mask = gen_mask(L, C, 0.5, mask_rng);
    BridgeSchedule s = unit_constant();

    SamplerConfig cfg;
    cfg.steps = 1;
    cfg.stochastic = false;
    cfg.clamp_observed = false;
    Rng rng(2);
    const TimeSeriesWindow out =
        sample_imputation(model, x_ob, stack, mask, s, cfg, rng);
    const Array3 pred = model.forward(stack.values, 1.0, stack.values, mask);
    const Array2 fused = fuse_output(pred);
    CHECK(out.values.v == fused.v);
}

TEST_CASE("clamp_observed copies observations through") {
    const int L = 6, C = 2;
    DenoiserModel model(C, 1, DenoiserArch{1, 8, 3, 8});
    TimeSeriesWindow x_ob;
    Rng vals(7);
    x_ob.values = Array2(L, C);
    for (double& v : x_ob.values.v) v = vals.uniform(-1, 1);
    PriorEstimate est;
    est.values = Array2(L, C, 0.0);
    const PriorStack stack = stack_priors({est});
    Rng mask_rng(15);
    const ObservationMask mask = gen_mask(L, C, 0.5, mask_rng);
    BridgeSchedule s = unit_constant();
    SamplerConfig cfg;
    Rng rng(3);
    const TimeSeriesWindow out =
        sample_imputation(model, x_ob, stack, mask, s, cfg, rng);
    for (int l = 0; l < L; ++l)
        for (int c = 0; c < C; ++c)
            if (mask.observed(l, c))
                CHECK(out.values.at(l, c) == x_ob.values.at(l, c));
}

TEST_CASE("imputation ignores values stored at missing entries") {
    const int L = 8, C = 2;
    DenoiserModel model(C, 1, DenoiserArch{1, 8, 3, 8});
    Rng init(19);
    for (double& x : model.params()) x = init.uniform(-0.3, 0.3);

    TimeSeriesWindow x_ob;
    Rng vals(23);
    x_ob.values = Array2(L, C);
    for (double& v : x_ob.values.v) v = vals.uniform(-1, 1);
    Rng mask_rng(29);
    const ObservationMask mask = gen_mask(L, C, 0.5, mask_rng);

    // Experts read through the mask, so build the stack from the masked view.
    TimeSeriesWindow tampered = x_ob;
    for (int l = 0; l < L; ++l)
        for (int c = 0; c < C; ++c)
            if (!mask.observed(l, c)) tampered.values.at(l, c) = 99.0;

    const PriorEstimate est_a = impute_linear(x_ob, mask);
    const PriorEstimate est_b = impute_linear(tampered, mask);
    const PriorStack stack_a = stack_priors({est_a});
    const PriorStack stack_b = stack_priors({est_b});
    BridgeSchedule s = unit_constant();
    SamplerConfig cfg;
    Rng rng_a(17), rng_b(17);
    const TimeSeriesWindow out_a =
        sample_imputation(model, x_ob, stack_a, mask, s, cfg, rng_a);
    const TimeSeriesWindow out_b =
        sample_imputation(model, tampered, stack_b, mask, s, cfg, rng_b);
    for (int l = 0; l < L; ++l)
        for (int c = 0; c < C; ++c)
            if (!mask.observed(l, c))
                CHECK(out_a.values.at(l, c) == out_b.values.at(l, c));
}

TEST_CASE("sampler rejects broken denoisers") {
    const int L = 4, C = 1;
    TimeSeriesWindow x_ob;
    x_ob.values = Array2(L, C, 0.0);
    PriorEstimate est;
    est.values = Array2(L, C, 0.0);
    const PriorStack stack = stack_priors({est});
    ObservationMask mask(L, C, 0);
    BridgeSchedule s = unit_constant();
    SamplerConfig cfg;

    DenoiserFn wrong_shape = [](const Array3&, double, const Array3&,
                                const ObservationMask&) { return Array3(2, 1, 1); };
    Rng r1(1);
    CHECK_THROWS_AS(sample_imputation(wrong_shape, x_ob, stack, mask, s, cfg, r1),
                    std::invalid_argument);

    DenoiserFn not_finite = [L](const Array3&, double, const Array3&,
                                const ObservationMask&) {
        return Array3(L, 1, 1, std::numeric_limits<double>::infinity());
    };
    Rng r2(1);
    CHECK_THROWS_AS(sample_imputation(not_finite, x_ob, stack, mask, s, cfg, r2),
                    NumericalError);

    SamplerConfig bad;
    bad.steps = 0;
    DenoiserFn ok = [L](const Array3& x, double, const Array3&,
                        const ObservationMask&) { return x; };
    Rng r3(1);
    CHECK_THROWS_AS(sample_imputation(ok, x_ob, stack, mask, s, bad, r3),
                    std::invalid_argument);
}

}  // TEST_SUITE
