#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nnmpc::narx {

/// Lag structure of the one-step predictor
///   y(k+1) = f(y(k), ..., y(k-ny+1), u(k-delay+1), ..., u(k-delay-nu+2)).
struct RegressorSpec {
    int ny = 2;
    int nu = 2;
    int delay = 1;

    int width() const noexcept { return ny + nu; }
    std::size_t required_outputs() const noexcept { return static_cast<std::size_t>(ny); }
    /// Inputs needed up to and including u(k).
    std::size_t required_inputs() const noexcept { return static_cast<std::size_t>(nu + delay - 1); }
    void validate() const;

    friend bool operator==(const RegressorSpec&, const RegressorSpec&) = default;
};

/// scaled = gain * physical + offset
struct AffineScale {
    double gain = 1.0;
    double offset = 0.0;

    double to_scaled(double physical) const noexcept { return gain * physical + offset; }
    double to_physical(double scaled) const noexcept { return (scaled - offset) / gain; }

    /// Maps [lo, hi] onto [-1, 1]. A degenerate range maps to a unit-gain shift.
    static AffineScale unit_range(double lo, double hi);

    friend bool operator==(const AffineScale&, const AffineScale&) = default;
};

/// Single-hidden-layer feedforward network with logistic hidden units and a
/// linear output, wrapped in per-input and output affine scaling.
class NarxModel {
public:
    NarxModel(RegressorSpec spec, Eigen::MatrixXd weights_input_hidden, Eigen::VectorXd bias_hidden,
              Eigen::VectorXd weights_hidden_output, double bias_output,
              std::vector<AffineScale> input_scale, AffineScale output_scale);

    /// All weights zero, identity scaling.
    static NarxModel zeros(RegressorSpec spec, int hidden_width);

    const RegressorSpec& spec() const noexcept { return spec_; }
    int hidden_width() const noexcept { return static_cast<int>(bias_hidden_.size()); }
    int input_width() const noexcept { return spec_.width(); }

    const Eigen::MatrixXd& weights_input_hidden() const noexcept { return weights_input_hidden_; }
    const Eigen::VectorXd& bias_hidden() const noexcept { return bias_hidden_; }
    const Eigen::VectorXd& weights_hidden_output() const noexcept { return weights_hidden_output_; }
    double bias_output() const noexcept { return bias_output_; }
    const std::vector<AffineScale>& input_scale() const noexcept { return input_scale_; }
    const AffineScale& output_scale() const noexcept { return output_scale_; }

    /// Flattened parameters: input-hidden weights row-major, hidden biases,
    /// hidden-output weights, output bias.
    std::size_t parameter_count() const noexcept;
    Eigen::VectorXd parameters() const;
    NarxModel with_parameters(const Eigen::VectorXd& theta) const;
    NarxModel with_scaling(std::vector<AffineScale> input_scale, AffineScale output_scale) const;

    /// Exact (bitwise-value) equality of structure, weights and scaling.
    friend bool operator==(const NarxModel& a, const NarxModel& b);

private:
    void check() const;

    RegressorSpec spec_;
    Eigen::MatrixXd weights_input_hidden_;
    Eigen::VectorXd bias_hidden_;
    Eigen::VectorXd weights_hidden_output_;
    double bias_output_;
    std::vector<AffineScale> input_scale_;
    AffineScale output_scale_;
};

/// Past samples as seen at time k: `y` ends with the measurement y(k), `u`
/// ends with the last applied input u(k-1).
struct History {
    std::vector<double> y;
    std::vector<double> u;
};

/// [y(k), ..., y(k-ny+1), u(k-delay+1), ..., u(k-delay-nu+2)] where the last
/// element of past_y is y(k) and the last element of past_u is u(k).
Eigen::VectorXd regressor(std::span<const double> past_y, std::span<const double> past_u,
                          const RegressorSpec& spec);

double forward(const NarxModel& model, const Eigen::VectorXd& reg);

/// Network evaluation on an already scaled regressor; returns the scaled output.
double forward_scaled(const NarxModel& model, const Eigen::VectorXd& scaled_reg);

/// d forward / d parameters, same ordering as NarxModel::parameters().
Eigen::VectorXd gradient_wrt_weights(const NarxModel& model, const Eigen::VectorXd& reg);

/// d forward / d regressor.
Eigen::VectorXd gradient_wrt_regressor(const NarxModel& model, const Eigen::VectorXd& reg);

/// Recursive prediction y_hat(k+1..k+n2); future_u[0] is u(k).
Eigen::VectorXd predict_horizon(const NarxModel& model, const History& history,
                                std::span<const double> future_u, int n2);

/// n2 x n2 sensitivity d y_hat(k+i) / d u(k+j), rows i = 1..n2, columns j = 0..n2-1.
Eigen::MatrixXd jacobian_output_wrt_u(const NarxModel& model, const History& history,
                                      std::span<const double> future_u, int n2);

/// JSON model file. config_hash is carried as metadata and returned on load.
std::string serialize(const NarxModel& model, std::string_view config_hash = {});

struct ModelFile {
    NarxModel model;
    std::string config_hash;
};

ModelFile deserialize(std::string_view text);

inline constexpr int kModelFormatVersion = 1;

}  // namespace nnmpc::narx
