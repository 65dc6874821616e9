#ifndef BRIDGETS_SCHEDULE_HPP
#define BRIDGETS_SCHEDULE_HPP

#include <functional>
#include <string>

#include "bridgets/common.hpp"

namespace bridgets {

enum class ScheduleKind { Constant, GMax };

ScheduleKind schedule_kind_from_string(const std::string& s);
std::string to_string(ScheduleKind k);

/// Diffusion schedule on t in [0,1] with zero drift and fixed horizon 1.
///
/// `constant`: g^2(t) = g2_0.
/// `gmax`:     g^2(t) = g2_0 + t * (g2_1 - g2_0), linearly increasing.
struct BridgeSchedule {
    ScheduleKind kind = ScheduleKind::Constant;
    double g2_0 = 0.01;   // diffusion-squared at t=0, must be > 0
    double g2_1 = 20.0;   // diffusion-squared at t=1, gmax only, must be >= g2_0
    double t_min = 1e-4;  // training-time lower clamp on sampled t

    void validate() const;
    double g2(double t) const;
};

/// Closed-form integral coefficients of the schedule at a given t.
/// With zero drift, alpha_t = alpha_bar_t = 1 and
/// sigma2_t + sigma2_bar_t = sigma2_1 holds exactly.
struct ScheduleCoefficients {
    double alpha_t = 1.0;
    double alpha_bar_t = 1.0;
    double sigma2_t = 0.0;
    double sigma2_bar_t = 0.0;
    double sigma2_1 = 0.0;
};

/// Evaluates the closed forms; throws std::invalid_argument for t outside [0,1].
ScheduleCoefficients coefficients(const BridgeSchedule& s, double t);

/// Accumulated noise integral sigma2_t alone (same closed form).
double sigma2_at(const BridgeSchedule& s, double t);

/// Remaining noise integral over [t, 1], in closed form.
double sigma2_bar_at(const BridgeSchedule& s, double t);

struct BoundaryReport {
    double residual_at_start = 0.0;  // |sigma2(0)|
    double residual_at_end = 0.0;    // |sigma2_bar(1)|
    bool ok = false;                 // both residuals within 1e-12
};

using CoefficientFn = std::function<ScheduleCoefficients(double)>;

/// Checks sigma2(0) = 0 and sigma2_bar(1) = 0. The CoefficientFn overload
/// exists so a corrupted coefficient table can be probed in tests.
BoundaryReport snr_boundary_check(const BridgeSchedule& s);
BoundaryReport snr_boundary_check(const CoefficientFn& fn);

}  // namespace bridgets

#endif  // BRIDGETS_SCHEDULE_HPP
