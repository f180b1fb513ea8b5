#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nnmpc/narx.hpp"
#include "nnmpc/plant.hpp"

namespace nnmpc::training {

struct Bounds {
    double lo = 0.0;
    double hi = 4.0;
};

enum class ExcitationKind {
    /// Amplitude-modulated pseudo-random steps.
    Aprbs,
};

std::string_view to_string(ExcitationKind kind);
ExcitationKind excitation_kind_from_string(std::string_view name);

/// Piecewise-constant signal: hold lengths uniform in [min_hold, max_hold]
/// samples, levels uniform in bounds. Same seed gives the same sequence.
std::vector<double> generate_excitation(ExcitationKind kind, std::size_t n, std::uint64_t seed,
                                        Bounds bounds, int min_hold = 5, int max_hold = 20);

/// u[k] is held over sampling interval k and y[k] is the concentration at the
/// end of that interval. Indices [0, split) are training, [split, size) validation.
struct Dataset {
    double ts = 0.2;
    std::vector<double> u;
    std::vector<double> y;
    std::size_t split = 0;

    std::size_t size() const noexcept { return y.size(); }
    void validate() const;
};

/// Simulates the plant under zero-order-hold u. ts must be a multiple of substep.
/// Integration failures are rethrown as IntegrationError naming the sample index.
Dataset sample_plant(std::span<const double> u, double ts, double substep,
                     const plant::PlantParams& params, plant::PlantState x0,
                     double train_fraction = 0.7);

/// Dataset CSV: hash comment, header `k,t,u,y`, t = k * ts (start of interval).
std::string dataset_to_csv(const Dataset& data, std::string_view config_hash);
Dataset dataset_from_csv(std::string_view text, double train_fraction = 0.7);

/// One-step regression problem over targets y[begin..end).
struct RegressionSet {
    Eigen::MatrixXd regressors;  // one regressor per row
    Eigen::VectorXd targets;
    std::vector<std::size_t> target_index;
};

/// First target index for which a full regressor exists.
std::size_t first_target_index(const narx::RegressorSpec& spec);

RegressionSet build_regressions(const Dataset& data, const narx::RegressorSpec& spec,
                                std::size_t begin, std::size_t end);

struct TrainConfig {
    int max_iterations = 500;
    double lambda0 = 1e-3;
    double lambda_up = 10.0;
    double lambda_down = 10.0;
    double lambda_max = 1e10;
    double tol_gradient = 1e-9;
    /// Relative loss decrease below which training stops.
    double tol_loss = 1e-12;
    std::uint64_t seed = 1;

    void validate() const;
};

/// Scaling fitted to the training split plus weights uniform in [-0.5, 0.5].
narx::NarxModel initial_model(const narx::RegressorSpec& spec, int hidden_width,
                              const Dataset& data, std::uint64_t seed);

struct LossRecord {
    int iteration = 0;
    double loss = 0.0;
    double lambda = 0.0;
};

enum class StopReason { Converged, GradientTolerance, LossTolerance, MaxIterations, DampingLimit };
std::string_view to_string(StopReason reason);

struct TrainResult {
    narx::NarxModel model;
    /// Entry 0 is the initial loss, then one entry per accepted step.
    std::vector<LossRecord> loss_curve;
    StopReason stop_reason = StopReason::MaxIterations;
};

/// Damped Gauss-Newton step solving (J^T J + lambda I) delta = J^T e.
/// Returns false if the damped normal matrix cannot be factorized.
bool lm_step(const Eigen::MatrixXd& jacobian, const Eigen::VectorXd& residual, double lambda,
             Eigen::VectorXd& delta);

/// Batch Levenberg-Marquardt on summed squared one-step residuals of the training split.
TrainResult train_lm(const narx::NarxModel& model, const Dataset& data, const TrainConfig& cfg);

std::string loss_curve_to_csv(const std::vector<LossRecord>& curve, std::string_view config_hash);

struct Correlations {
    std::vector<double> autocorr;        // lags 1..max_auto_lag
    std::vector<double> cross_corr;      // lags -max_cross_lag..max_cross_lag
    double confidence_band = 0.0;
    bool degenerate = false;
};

/// Normalized residual autocorrelation and input-residual cross-correlation
/// r_ue(tau) = sum (u_t - mean u)(e_{t+tau} - mean e) / sqrt(S_uu S_ee).
Correlations residual_correlations(std::span<const double> residuals, std::span<const double> inputs,
                                   int max_auto_lag = 20, int max_cross_lag = 10);

double fraction_inside(std::span<const double> values, double band);

struct Prediction {
    std::size_t index = 0;
    bool train = true;
    double y = 0.0;
    double y_hat = 0.0;
};

struct ValidationReport {
    double rmse_train = 0.0;
    double rmse_test = 0.0;
    /// max(y) - min(y) over the whole dataset.
    double output_range = 0.0;
    std::vector<double> residual_autocorr;
    std::vector<double> cross_corr_u_residual;
    double confidence_band = 0.0;
    bool degenerate = false;
    double autocorr_inside_fraction = 0.0;
    double cross_corr_inside_fraction = 0.0;
    bool all_inside = false;
    std::vector<Prediction> predictions;
};

/// One-step predictions over both splits; correlations use validation-split residuals.
ValidationReport validate(const narx::NarxModel& model, const Dataset& data);

/// Per-sample predictions: `k,split,y,y_hat,residual`.
std::string validation_to_csv(const ValidationReport& report, std::string_view config_hash);

/// Correlation table: `kind,lag,value,inside`.
std::string correlations_to_csv(const ValidationReport& report, std::string_view config_hash);

}  // namespace nnmpc::training
