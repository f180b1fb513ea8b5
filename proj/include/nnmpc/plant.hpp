#pragma once

// Continuous stirred tank reactor: liquid level h and product concentration cb
// driven by the concentrated feed flow w1 (the diluted feed w2 is held fixed).
//
//   dh/dt  = w1 + w2 - c_out * sqrt(h)
//   dcb/dt = (cb1 - cb) w1 / h + (cb2 - cb) w2 / h - k1 cb / (1 + k2 cb)^2

namespace nnmpc::plant {

struct PlantParams {
    double cb1 = 24.9;
    double cb2 = 0.1;
    double k1 = 1.0;
    double k2 = 1.0;
    double outflow_coeff = 0.2;
    double w2_fixed = 0.1;

    /// Throws DomainError when an invariant is violated.
    void validate() const;
};

struct PlantState {
    double h = 1.0;
    double cb = 0.0;
};

struct StateDerivative {
    double dh_dt = 0.0;
    double dcb_dt = 0.0;
};

StateDerivative derivatives(const PlantState& state, double w1, const PlantParams& params);

/// One classical RK4 step with w1 held over dt. Throws IntegrationError if a
/// stage evaluates the dynamics at h <= 0.
PlantState step(const PlantState& state, double w1, double dt, const PlantParams& params);

/// Integrates over `duration` with fixed RK4 substeps. `duration` must be an
/// integer multiple of `substep` (to 1e-9 relative).
PlantState simulate(const PlantState& state, double w1, double duration, double substep,
                    const PlantParams& params);

/// Equilibrium for constant w1: analytic level, concentration by bisection.
PlantState steady_state(double w1, const PlantParams& params);

/// Scalar residual of the concentration balance at level h; zero at equilibrium.
double concentration_residual(double cb, double h, double w1, const PlantParams& params);

/// Number of RK4 substeps spanning `duration`; throws DomainError if not integral.
long substep_count(double duration, double substep);

}  // namespace nnmpc::plant
