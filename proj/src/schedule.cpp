#include "bridgets/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace bridgets {

ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "constant") return ScheduleKind::Constant;
    if (s == "gmax") return ScheduleKind::GMax;
    throw std::invalid_argument("unknown schedule kind: " + s);
}

std::string to_string(ScheduleKind k) {
    return k == ScheduleKind::Constant ? "constant" : "gmax";
}

void BridgeSchedule::validate() const {
    if (!(g2_0 > 0.0)) throw std::invalid_argument("schedule: g2_0 must be > 0");
    if (kind == ScheduleKind::GMax && !(g2_1 >= g2_0))
        throw std::invalid_argument("schedule: g2_1 must be >= g2_0 for gmax");
    if (!(t_min > 0.0 && t_min <= 0.1))
        throw std::invalid_argument("schedule: t_min must lie in (0, 0.1]");
}

double BridgeSchedule::g2(double t) const {
    return kind == ScheduleKind::Constant ? g2_0 : g2_0 + t * (g2_1 - g2_0);
}

double sigma2_at(const BridgeSchedule& s, double t) {
    if (!(t >= 0.0 && t <= 1.0))
        throw std::invalid_argument("schedule: t must lie in [0, 1]");
    if (s.kind == ScheduleKind::Constant) return s.g2_0 * t;
    return s.g2_0 * t + 0.5 * (s.g2_1 - s.g2_0) * t * t;
}

double sigma2_bar_at(const BridgeSchedule& s, double t) {
    if (!(t >= 0.0 && t <= 1.0))
        throw std::invalid_argument("schedule: t must lie in [0, 1]");
    if (s.kind == ScheduleKind::Constant) return s.g2_0 * (1.0 - t);
    return s.g2_0 * (1.0 - t) + 0.5 * (s.g2_1 - s.g2_0) * (1.0 - t * t);
}

ScheduleCoefficients coefficients(const BridgeSchedule& s, double t) {
    ScheduleCoefficients c;
    c.alpha_t = 1.0;
    c.alpha_bar_t = 1.0;
    c.sigma2_t = sigma2_at(s, t);
    c.sigma2_bar_t = sigma2_bar_at(s, t);
    // The total is taken as the sum of the two tail integrals so the
    // complement identity holds bit-exactly at every t.
    c.sigma2_1 = c.sigma2_t + c.sigma2_bar_t;
    return c;
}

BoundaryReport snr_boundary_check(const CoefficientFn& fn) {
    BoundaryReport r;
    r.residual_at_start = std::fabs(fn(0.0).sigma2_t);
    r.residual_at_end = std::fabs(fn(1.0).sigma2_bar_t);
    r.ok = r.residual_at_start <= 1e-12 && r.residual_at_end <= 1e-12;
    return r;
}

BoundaryReport snr_boundary_check(const BridgeSchedule& s) {
    return snr_boundary_check([&s](double t) { return coefficients(s, t); });
}

}  // namespace bridgets
