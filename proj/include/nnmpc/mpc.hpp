#pragma once

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nnmpc/narx.hpp"

namespace nnmpc::mpc {

struct MpcConfig {
    int n1 = 1;
    int n2 = 7;
    int nu = 2;
    double rho = 0.05;
    double u_min = 0.0;
    double u_max = 4.0;
    int max_lm_iterations = 50;
    double lambda0 = 1e-2;
    double lambda_up = 10.0;
    double lambda_down = 10.0;
    /// Damping above which the solve stops with the best iterate.
    double lambda_max = 1e10;
    /// Stop tolerance on the projected gradient norm.
    double tol = 1e-8;

    /// Checks horizon ordering, including nu <= n2 - delay + 1.
    void validate(const narx::RegressorSpec& spec) const;
};

/// Multi-step predictor the optimizer works against.
class Predictor {
public:
    virtual ~Predictor() = default;

    virtual const narx::RegressorSpec& spec() const = 0;

    /// y_hat(k+1..k+n2) given history at k and future_u[0] = u(k).
    virtual Eigen::VectorXd predict(const narx::History& history, std::span<const double> future_u,
                                    int n2) const = 0;

    /// n2 x n2 matrix d y_hat(k+i) / d u(k+j).
    virtual Eigen::MatrixXd jacobian(const narx::History& history, std::span<const double> future_u,
                                     int n2) const = 0;
};

class NarxPredictor final : public Predictor {
public:
    explicit NarxPredictor(narx::NarxModel model) : model_(std::move(model)) {}

    const narx::RegressorSpec& spec() const override { return model_.spec(); }
    Eigen::VectorXd predict(const narx::History& history, std::span<const double> future_u,
                            int n2) const override;
    Eigen::MatrixXd jacobian(const narx::History& history, std::span<const double> future_u,
                             int n2) const override;

    const narx::NarxModel& model() const noexcept { return model_; }

private:
    narx::NarxModel model_;
};

/// y(k+1) = a . [y(k) .. y(k-ny+1)] + b . [u(k-delay+1) .. u(k-delay-nu+2)] + c
class LinearArxPredictor final : public Predictor {
public:
    LinearArxPredictor(narx::RegressorSpec spec, Eigen::VectorXd a, Eigen::VectorXd b, double c);

    const narx::RegressorSpec& spec() const override { return spec_; }
    Eigen::VectorXd predict(const narx::History& history, std::span<const double> future_u,
                            int n2) const override;
    Eigen::MatrixXd jacobian(const narx::History& history, std::span<const double> future_u,
                             int n2) const override;

private:
    narx::RegressorSpec spec_;
    Eigen::VectorXd a_;
    Eigen::VectorXd b_;
    double c_;
};

/// Moves beyond the control horizon repeat the last one.
Eigen::VectorXd expand_controls(const Eigen::VectorXd& u_seq, int n2);

/// n2 x nu matrix E with expand_controls(u) = E u.
Eigen::MatrixXd expansion_matrix(int nu, int n2);

/// Everything fixed during one control step. `reference` holds r(k+n1..k+n2).
struct Problem {
    const Predictor& predictor;
    const narx::History& history;
    std::span<const double> reference;
    double u_prev;
    const MpcConfig& cfg;
};

/// J = sum_{i=n1..n2} (r(k+i) - y_hat(k+i))^2 + rho sum_{i=1..nu} du(k+i-1)^2
double cost(const Problem& problem, const Eigen::VectorXd& u_seq);

/// G = -2 phi^T e + 2 rho D^T du
Eigen::VectorXd cost_gradient(const Problem& problem, const Eigen::VectorXd& u_seq);

/// Gauss-Newton H = 2 phi^T phi + 2 rho D^T D.
Eigen::MatrixXd cost_hessian_gn(const Problem& problem, const Eigen::VectorXd& u_seq);

/// Predictions y_hat(k+n1..k+n2) for a control sequence.
Eigen::VectorXd predicted_outputs(const Problem& problem, const Eigen::VectorXd& u_seq);

struct TraceRow {
    int iteration = 0;
    double j_value = 0.0;
    double lambda = 0.0;
    double gradient_norm = 0.0;
};

struct ControlSolution {
    Eigen::VectorXd u_sequence;
    double j_value = 0.0;
    int iterations = 0;
    double gradient_norm = 0.0;
    Eigen::VectorXd predicted_y;
    /// Initial iterate then one row per accepted step.
    std::vector<TraceRow> trace;
};

/// Box-projected Levenberg-Marquardt on the cost. Without a warm start the
/// iteration begins from u_prev held over the control horizon.
ControlSolution solve(const Problem& problem, const std::optional<Eigen::VectorXd>& warm_start = {});

/// Receding-horizon controller: one solve per measurement, first move applied.
class Controller {
public:
    Controller(std::shared_ptr<const Predictor> predictor, MpcConfig cfg, double u_initial);

    /// Appends y(k), solves warm-started from the shifted previous solution and
    /// returns u(k). `reference` holds r(k+n1..k+n2). Missing history at
    /// startup is filled with the first measurement and u_initial.
    double step(double measurement, std::span<const double> reference);

    const std::optional<ControlSolution>& last_solution() const noexcept { return last_; }
    const narx::History& history() const noexcept { return history_; }
    double last_input() const noexcept { return u_prev_; }
    const MpcConfig& config() const noexcept { return cfg_; }

private:
    std::shared_ptr<const Predictor> predictor_;
    MpcConfig cfg_;
    narx::History history_;
    double u_prev_;
    std::optional<ControlSolution> last_;
};

/// `step,iteration,j,lambda,grad_norm` rows for one or more control steps.
std::string trace_to_csv_rows(int step, const std::vector<TraceRow>& trace);
inline constexpr std::string_view kTraceHeader = "step,iteration,j,lambda,grad_norm\n";

}  // namespace nnmpc::mpc
