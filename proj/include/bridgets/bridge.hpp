#ifndef BRIDGETS_BRIDGE_HPP
#define BRIDGETS_BRIDGE_HPP

#include <functional>
#include <vector>

#include "bridgets/composition.hpp"
#include "bridgets/data.hpp"
#include "bridgets/model.hpp"
#include "bridgets/rng.hpp"
#include "bridgets/schedule.hpp"

namespace bridgets {

/// Gaussian law of the bridge state at time t for fixed endpoints.
struct MarginalParams {
    double x0_coef = 0.0;  // weight on the data endpoint
    double xT_coef = 0.0;  // weight on the prior endpoint
    double var = 0.0;      // isotropic elementwise variance
};

/// Endpoint-pinned interpolation coefficients and variance at time t.
MarginalParams marginal_coefficients(const BridgeSchedule& s, double t);

/// Mean tensor of the bridge state at t; x0 and xT must share a shape.
Array3 marginal_mean(const BridgeSchedule& s, const Array3& x0, const Array3& xT, double t);

/// Draws the bridge state at t: mean + sqrt(var) * eps, elementwise.
Array3 sample_marginal(const BridgeSchedule& s, const Array3& x0, const Array3& xT,
                       double t, Rng& rng, bool stochastic = true);

/// Scalar-state posterior parameters for stepping t -> t_prev given a clean
/// estimate pinned at time zero.
struct TransitionParams {
    double x_t_coef = 0.0;
    double x0_coef = 0.0;
    double var = 0.0;
};

/// Requires 0 <= t_prev < t <= 1.
TransitionParams transition_coefficients(const BridgeSchedule& s, double t, double t_prev);

Array3 transition_sample(const BridgeSchedule& s, const Array3& x_t, const Array3& x0_hat,
                         double t, double t_prev, Rng& rng, bool stochastic = true);

/// Reverse-simulation settings. Step times run 1, 1-1/steps, ..., 1/steps,
/// with a final hop to zero.
struct SamplerConfig {
    int steps = 8;
    bool stochastic = true;
    bool clamp_observed = true;
    bool fuse_per_step = false;  // average slices after every step instead of once

    void validate() const;
};

/// Clean-target predictor signature: (x, t, prior, mask) -> x0 estimate.
using DenoiserFn =
    std::function<Array3(const Array3&, double, const Array3&, const ObservationMask&)>;

/// Runs the reverse process from the prior stack at t=1 down to zero and
/// fuses the slices by channel mean. Observed entries are overwritten with
/// the observations when clamp_observed is set.
TimeSeriesWindow sample_imputation(const DenoiserFn& denoiser, const TimeSeriesWindow& x_ob,
                                   const PriorStack& prior, const ObservationMask& mask,
                                   const BridgeSchedule& s, const SamplerConfig& cfg,
                                   Rng& rng);

TimeSeriesWindow sample_imputation(const DenoiserModel& model, const TimeSeriesWindow& x_ob,
                                   const PriorStack& prior, const ObservationMask& mask,
                                   const BridgeSchedule& s, const SamplerConfig& cfg,
                                   Rng& rng);

struct BridgeLossResult {
    double loss = 0.0;
    std::vector<double> model_grad;  // d(loss)/d(model parameters)
    Array3 prior_grad;               // d(loss)/d(prior stack), for joint expert training
    double t = 0.0;                  // the sampled time
};

/// One training-objective evaluation: draws t ~ U(t_min, 1), forms the
/// noised state between the replicated target and the prior stack, runs the
/// model, and scores the fused prediction against the target over missing
/// entries only. Returns exact gradients. An all-observed mask yields loss 0
/// with zero gradients.
BridgeLossResult bridge_loss(DenoiserModel& model, const TimeSeriesWindow& target,
                             const PriorStack& prior, const ObservationMask& mask,
                             const BridgeSchedule& s, Rng& rng, bool probabilistic = true,
                             bool want_prior_grad = false);

}  // namespace bridgets

#endif  // BRIDGETS_BRIDGE_HPP
