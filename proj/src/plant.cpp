#include "nnmpc/plant.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "nnmpc/error.hpp"

namespace nnmpc::plant {

void PlantParams::validate() const {
    auto finite = [](double v) { return std::isfinite(v); };
    if (!(finite(cb1) && finite(cb2) && finite(k1) && finite(k2) && finite(outflow_coeff) &&
          finite(w2_fixed))) {
        throw DomainError("plant parameters must be finite");
    }
    if (!(cb1 > cb2 && cb2 >= 0.0)) throw DomainError("plant parameters require cb1 > cb2 >= 0");
    if (k1 < 0.0 || k2 < 0.0) throw DomainError("plant rate constants must be non-negative");
    if (!(outflow_coeff > 0.0)) throw DomainError("plant outflow_coeff must be positive");
    if (w2_fixed < 0.0) throw DomainError("plant w2_fixed must be non-negative");
}

double concentration_residual(double cb, double h, double w1, const PlantParams& p) {
    const double reaction = p.k1 * cb / ((1.0 + p.k2 * cb) * (1.0 + p.k2 * cb));
    return (p.cb1 - cb) * w1 / h + (p.cb2 - cb) * p.w2_fixed / h - reaction;
}

StateDerivative derivatives(const PlantState& state, double w1, const PlantParams& p) {
    if (std::isnan(state.h) || std::isnan(state.cb) || std::isnan(w1)) {
        throw DomainError("NaN input to plant derivatives");
    }
    if (!(state.h > 0.0)) {
        std::ostringstream msg;
        msg << "plant level must be positive, got h=" << state.h;
        throw DomainError(msg.str());
    }
    if (w1 < 0.0) throw DomainError("feed flow w1 must be non-negative");
    return {w1 + p.w2_fixed - p.outflow_coeff * std::sqrt(state.h),
            concentration_residual(state.cb, state.h, w1, p)};
}

namespace {

PlantState advance(const PlantState& x, const StateDerivative& d, double scale) {
    return {x.h + scale * d.dh_dt, x.cb + scale * d.dcb_dt};
}

StateDerivative stage(const PlantState& x, double w1, const PlantParams& p, int index) {
    if (!(x.h > 0.0)) {
        std::ostringstream msg;
        msg << "RK4 stage " << index << " reached non-positive level h=" << x.h;
        throw IntegrationError(msg.str(), index);
    }
    return derivatives(x, w1, p);
}

}  // namespace

PlantState step(const PlantState& state, double w1, double dt, const PlantParams& p) {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw DomainError("integration step dt must be positive");
    if (w1 < 0.0) throw DomainError("feed flow w1 must be non-negative");

    const StateDerivative k1 = stage(state, w1, p, 1);
    const StateDerivative k2 = stage(advance(state, k1, 0.5 * dt), w1, p, 2);
    const StateDerivative k3 = stage(advance(state, k2, 0.5 * dt), w1, p, 3);
    const StateDerivative k4 = stage(advance(state, k3, dt), w1, p, 4);

    PlantState next{state.h + dt / 6.0 * (k1.dh_dt + 2.0 * k2.dh_dt + 2.0 * k3.dh_dt + k4.dh_dt),
                    state.cb + dt / 6.0 * (k1.dcb_dt + 2.0 * k2.dcb_dt + 2.0 * k3.dcb_dt + k4.dcb_dt)};
    if (!(next.h > 0.0) || !std::isfinite(next.cb)) {
        std::ostringstream msg;
        msg << "RK4 update produced invalid state h=" << next.h << " cb=" << next.cb;
        throw IntegrationError(msg.str(), 0);
    }
    return next;
}

long substep_count(double duration, double substep) {
    if (!(duration > 0.0) || !(substep > 0.0)) {
        throw DomainError("duration and substep must be positive");
    }
    const double ratio = duration / substep;
    const double rounded = std::round(ratio);
    if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-9 * rounded) {
        std::ostringstream msg;
        msg << "duration " << duration << " is not a multiple of substep " << substep;
        throw DomainError(msg.str());
    }
    return static_cast<long>(rounded);
}

PlantState simulate(const PlantState& state, double w1, double duration, double substep,
                    const PlantParams& p) {
    const long n = substep_count(duration, substep);
    const double dt = duration / static_cast<double>(n);
    PlantState x = state;
    for (long i = 0; i < n; ++i) x = step(x, w1, dt, p);
    return x;
}

PlantState steady_state(double w1, const PlantParams& p) {
    if (std::isnan(w1) || w1 < 0.0) throw DomainError("feed flow w1 must be non-negative");
    const double inflow = w1 + p.w2_fixed;
    if (!(inflow > 0.0)) throw DomainError("steady state requires w1 + w2_fixed > 0");

    const double root_h = inflow / p.outflow_coeff;
    const double h = root_h * root_h;

    double lo = 0.0;
    double hi = std::max(p.cb1, p.cb2);
    double f_lo = concentration_residual(lo, h, w1, p);
    const double f_hi = concentration_residual(hi, h, w1, p);
    if (f_lo == 0.0) return {h, lo};
    if (f_hi == 0.0) return {h, hi};
    if ((f_lo > 0.0) == (f_hi > 0.0)) {
        std::ostringstream msg;
        msg << "concentration bracket [" << lo << ", " << hi << "] does not straddle a root: "
            << "residual signs " << (f_lo > 0 ? '+' : '-') << "/" << (f_hi > 0 ? '+' : '-');
        throw DomainError(msg.str());
    }
    // Bisect until the bracket stops shrinking in floating point.
    for (int it = 0; it < 2000; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        const double f_mid = concentration_residual(mid, h, w1, p);
        if (f_mid == 0.0) return {h, mid};
        if ((f_mid > 0.0) == (f_lo > 0.0)) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    return {h, 0.5 * (lo + hi)};
}

}  // namespace nnmpc::plant
