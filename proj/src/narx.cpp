#include "nnmpc/narx.hpp"

#include <cmath>
#include <nlohmann/json.hpp>
#include <sstream>

#include "nnmpc/error.hpp"

namespace nnmpc::narx {

namespace {

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Eigen::VectorXd scale_inputs(const NarxModel& model, const Eigen::VectorXd& reg) {
    if (reg.size() != model.input_width()) {
        std::ostringstream msg;
        msg << "regressor length " << reg.size() << " does not match model input width "
            << model.input_width();
        throw DimensionError(msg.str());
    }
    Eigen::VectorXd scaled(reg.size());
    for (Eigen::Index i = 0; i < reg.size(); ++i) {
        scaled[i] = model.input_scale()[static_cast<std::size_t>(i)].to_scaled(reg[i]);
    }
    return scaled;
}

Eigen::VectorXd hidden_activation(const NarxModel& model, const Eigen::VectorXd& scaled) {
    Eigen::VectorXd z = model.weights_input_hidden() * scaled + model.bias_hidden();
    return z.unaryExpr([](double v) { return logistic(v); });
}

void check_history(const NarxModel& model, const History& history, std::size_t future_size,
                   int n2) {
    const RegressorSpec& spec = model.spec();
    if (n2 < 1) throw DimensionError("prediction horizon must be at least 1");
    if (history.y.size() < spec.required_outputs()) {
        throw HistoryError("output history too short for regressor", spec.required_outputs(),
                           history.y.size());
    }
    // u(k) comes from future_u, so history needs one input fewer.
    const std::size_t need_u = spec.required_inputs() - 1;
    if (history.u.size() < need_u) {
        throw HistoryError("input history too short for regressor", need_u, history.u.size());
    }
    const std::size_t need_future = static_cast<std::size_t>(std::max(1, n2 - spec.delay + 1));
    if (future_size < need_future) {
        throw HistoryError("future input sequence shorter than prediction horizon", need_future,
                           future_size);
    }
}

// Output at offset `t` relative to k (t <= 0 measured, t >= 1 predicted).
double output_at(const History& history, const std::vector<double>& predicted, int t) {
    if (t >= 1) return predicted[static_cast<std::size_t>(t - 1)];
    return history.y[history.y.size() - 1 - static_cast<std::size_t>(-t)];
}

// Input at offset `t` relative to k (t <= -1 past, t >= 0 future).
double input_at(const History& history, std::span<const double> future_u, int t) {
    if (t >= 0) return future_u[static_cast<std::size_t>(t)];
    return history.u[history.u.size() - static_cast<std::size_t>(-t)];
}

Eigen::VectorXd horizon_regressor(const RegressorSpec& spec, const History& history,
                                  const std::vector<double>& predicted,
                                  std::span<const double> future_u, int i) {
    // Regressor for y_hat(k+i): "current" time is k+i-1.
    Eigen::VectorXd reg(spec.width());
    for (int l = 0; l < spec.ny; ++l) reg[l] = output_at(history, predicted, i - 1 - l);
    for (int m = 0; m < spec.nu; ++m) reg[spec.ny + m] = input_at(history, future_u, i - spec.delay - m);
    return reg;
}

}  // namespace

void RegressorSpec::validate() const {
    if (ny < 1 || nu < 1 || delay < 1) {
        throw DimensionError("regressor spec requires ny >= 1, nu >= 1, delay >= 1");
    }
}

AffineScale AffineScale::unit_range(double lo, double hi) {
    if (!(hi > lo)) return {1.0, -lo};
    const double gain = 2.0 / (hi - lo);
    return {gain, -1.0 - gain * lo};
}

NarxModel::NarxModel(RegressorSpec spec, Eigen::MatrixXd weights_input_hidden,
                     Eigen::VectorXd bias_hidden, Eigen::VectorXd weights_hidden_output,
                     double bias_output, std::vector<AffineScale> input_scale,
                     AffineScale output_scale)
    : spec_(spec),
      weights_input_hidden_(std::move(weights_input_hidden)),
      bias_hidden_(std::move(bias_hidden)),
      weights_hidden_output_(std::move(weights_hidden_output)),
      bias_output_(bias_output),
      input_scale_(std::move(input_scale)),
      output_scale_(output_scale) {
    check();
}

void NarxModel::check() const {
    spec_.validate();
    const Eigen::Index hidden = bias_hidden_.size();
    if (hidden < 1) throw DimensionError("hidden layer must have at least one neuron");
    if (weights_input_hidden_.rows() != hidden || weights_input_hidden_.cols() != spec_.width() ||
        weights_hidden_output_.size() != hidden) {
        throw DimensionError("network weight dimensions inconsistent with spec and hidden width");
    }
    if (input_scale_.size() != static_cast<std::size_t>(spec_.width())) {
        throw DimensionError("input scaling count must equal the regressor width");
    }
    if (!weights_input_hidden_.allFinite() || !bias_hidden_.allFinite() ||
        !weights_hidden_output_.allFinite() || !std::isfinite(bias_output_)) {
        throw DomainError("network weights must be finite");
    }
    auto invertible = [](const AffineScale& s) {
        return s.gain != 0.0 && std::isfinite(s.gain) && std::isfinite(s.offset);
    };
    for (const auto& s : input_scale_) {
        if (!invertible(s)) throw DomainError("input scaling must be finite with nonzero gain");
    }
    if (!invertible(output_scale_)) throw DomainError("output scaling must be finite with nonzero gain");
}

NarxModel NarxModel::zeros(RegressorSpec spec, int hidden_width) {
    spec.validate();
    if (hidden_width < 1) throw DimensionError("hidden layer must have at least one neuron");
    return NarxModel(spec, Eigen::MatrixXd::Zero(hidden_width, spec.width()),
                     Eigen::VectorXd::Zero(hidden_width), Eigen::VectorXd::Zero(hidden_width), 0.0,
                     std::vector<AffineScale>(static_cast<std::size_t>(spec.width())),
                     AffineScale{});
}

std::size_t NarxModel::parameter_count() const noexcept {
    const auto h = static_cast<std::size_t>(hidden_width());
    return h * static_cast<std::size_t>(input_width()) + 2 * h + 1;
}

Eigen::VectorXd NarxModel::parameters() const {
    Eigen::VectorXd theta(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index p = 0;
    for (Eigen::Index h = 0; h < weights_input_hidden_.rows(); ++h) {
        for (Eigen::Index m = 0; m < weights_input_hidden_.cols(); ++m) theta[p++] = weights_input_hidden_(h, m);
    }
    for (Eigen::Index h = 0; h < bias_hidden_.size(); ++h) theta[p++] = bias_hidden_[h];
    for (Eigen::Index h = 0; h < weights_hidden_output_.size(); ++h) theta[p++] = weights_hidden_output_[h];
    theta[p] = bias_output_;
    return theta;
}

NarxModel NarxModel::with_parameters(const Eigen::VectorXd& theta) const {
    if (static_cast<std::size_t>(theta.size()) != parameter_count()) {
        throw DimensionError("parameter vector length does not match the network");
    }
    Eigen::MatrixXd w_ih(weights_input_hidden_.rows(), weights_input_hidden_.cols());
    Eigen::VectorXd b_h(bias_hidden_.size());
    Eigen::VectorXd w_ho(weights_hidden_output_.size());
    Eigen::Index p = 0;
    for (Eigen::Index h = 0; h < w_ih.rows(); ++h) {
        for (Eigen::Index m = 0; m < w_ih.cols(); ++m) w_ih(h, m) = theta[p++];
    }
    for (Eigen::Index h = 0; h < b_h.size(); ++h) b_h[h] = theta[p++];
    for (Eigen::Index h = 0; h < w_ho.size(); ++h) w_ho[h] = theta[p++];
    return NarxModel(spec_, std::move(w_ih), std::move(b_h), std::move(w_ho), theta[p], input_scale_,
                     output_scale_);
}

NarxModel NarxModel::with_scaling(std::vector<AffineScale> input_scale, AffineScale output_scale) const {
    return NarxModel(spec_, weights_input_hidden_, bias_hidden_, weights_hidden_output_, bias_output_,
                     std::move(input_scale), output_scale);
}

bool operator==(const NarxModel& a, const NarxModel& b) {
    auto same = [](const auto& x, const auto& y) {
        return x.rows() == y.rows() && x.cols() == y.cols() && x == y;
    };
    return a.spec_ == b.spec_ && same(a.weights_input_hidden_, b.weights_input_hidden_) &&
           same(a.bias_hidden_, b.bias_hidden_) &&
           same(a.weights_hidden_output_, b.weights_hidden_output_) &&
           a.bias_output_ == b.bias_output_ && a.input_scale_ == b.input_scale_ &&
           a.output_scale_ == b.output_scale_;
}

Eigen::VectorXd regressor(std::span<const double> past_y, std::span<const double> past_u,
                          const RegressorSpec& spec) {
    spec.validate();
    if (past_y.size() < spec.required_outputs()) {
        std::ostringstream msg;
        msg << "regressor needs " << spec.required_outputs() << " outputs, history has "
            << past_y.size();
        throw HistoryError(msg.str(), spec.required_outputs(), past_y.size());
    }
    if (past_u.size() < spec.required_inputs()) {
        std::ostringstream msg;
        msg << "regressor needs " << spec.required_inputs() << " inputs, history has "
            << past_u.size();
        throw HistoryError(msg.str(), spec.required_inputs(), past_u.size());
    }
    Eigen::VectorXd reg(spec.width());
    const std::size_t last_y = past_y.size() - 1;
    const std::size_t last_u = past_u.size() - 1;
    for (int l = 0; l < spec.ny; ++l) reg[l] = past_y[last_y - static_cast<std::size_t>(l)];
    for (int m = 0; m < spec.nu; ++m) {
        reg[spec.ny + m] = past_u[last_u - static_cast<std::size_t>(spec.delay - 1 + m)];
    }
    return reg;
}

double forward_scaled(const NarxModel& model, const Eigen::VectorXd& scaled_reg) {
    if (scaled_reg.size() != model.input_width()) {
        throw DimensionError("scaled regressor length does not match model input width");
    }
    return model.weights_hidden_output().dot(hidden_activation(model, scaled_reg)) +
           model.bias_output();
}

double forward(const NarxModel& model, const Eigen::VectorXd& reg) {
    return model.output_scale().to_physical(forward_scaled(model, scale_inputs(model, reg)));
}

Eigen::VectorXd gradient_wrt_weights(const NarxModel& model, const Eigen::VectorXd& reg) {
    const Eigen::VectorXd x = scale_inputs(model, reg);
    const Eigen::VectorXd a = hidden_activation(model, x);
    const double out_gain = 1.0 / model.output_scale().gain;
    const Eigen::Index hidden = a.size();
    const Eigen::Index width = x.size();

    Eigen::VectorXd grad(static_cast<Eigen::Index>(model.parameter_count()));
    const Eigen::VectorXd delta =
        (model.weights_hidden_output().array() * a.array() * (1.0 - a.array())).matrix() * out_gain;
    Eigen::Index p = 0;
    for (Eigen::Index h = 0; h < hidden; ++h) {
        for (Eigen::Index m = 0; m < width; ++m) grad[p++] = delta[h] * x[m];
    }
    for (Eigen::Index h = 0; h < hidden; ++h) grad[p++] = delta[h];
    for (Eigen::Index h = 0; h < hidden; ++h) grad[p++] = a[h] * out_gain;
    grad[p] = out_gain;
    return grad;
}

Eigen::VectorXd gradient_wrt_regressor(const NarxModel& model, const Eigen::VectorXd& reg) {
    const Eigen::VectorXd x = scale_inputs(model, reg);
    const Eigen::VectorXd a = hidden_activation(model, x);
    const Eigen::VectorXd delta =
        (model.weights_hidden_output().array() * a.array() * (1.0 - a.array())).matrix();
    Eigen::VectorXd grad = model.weights_input_hidden().transpose() * delta;
    for (Eigen::Index m = 0; m < grad.size(); ++m) {
        grad[m] *= model.input_scale()[static_cast<std::size_t>(m)].gain / model.output_scale().gain;
    }
    return grad;
}

Eigen::VectorXd predict_horizon(const NarxModel& model, const History& history,
                                std::span<const double> future_u, int n2) {
    check_history(model, history, future_u.size(), n2);
    std::vector<double> predicted;
    predicted.reserve(static_cast<std::size_t>(n2));
    for (int i = 1; i <= n2; ++i) {
        predicted.push_back(forward(model, horizon_regressor(model.spec(), history, predicted, future_u, i)));
    }
    return Eigen::Map<const Eigen::VectorXd>(predicted.data(), n2);
}

Eigen::MatrixXd jacobian_output_wrt_u(const NarxModel& model, const History& history,
                                      std::span<const double> future_u, int n2) {
    check_history(model, history, future_u.size(), n2);
    const RegressorSpec& spec = model.spec();
    std::vector<double> predicted;
    predicted.reserve(static_cast<std::size_t>(n2));
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n2, n2);
    for (int i = 1; i <= n2; ++i) {
        const Eigen::VectorXd reg = horizon_regressor(spec, history, predicted, future_u, i);
        const Eigen::VectorXd g = gradient_wrt_regressor(model, reg);
        for (int l = 0; l < spec.ny; ++l) {
            const int t = i - 1 - l;  // ŷ(k+t) feeds back when t >= 1
            if (t >= 1) jac.row(i - 1) += g[l] * jac.row(t - 1);
        }
        for (int m = 0; m < spec.nu; ++m) {
            const int j = i - spec.delay - m;
            if (j >= 0 && j < n2) jac(i - 1, j) += g[spec.ny + m];
        }
        predicted.push_back(forward(model, reg));
    }
    return jac;
}

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json scale_to_json(const AffineScale& s) { return {{"gain", s.gain}, {"offset", s.offset}}; }

AffineScale scale_from_json(const ordered_json& j) {
    return {j.at("gain").get<double>(), j.at("offset").get<double>()};
}

}  // namespace

std::string serialize(const NarxModel& model, std::string_view config_hash) {
    ordered_json doc;
    doc["format_version"] = kModelFormatVersion;
    doc["config_hash"] = std::string(config_hash);
    doc["spec"] = {{"ny", model.spec().ny}, {"nu", model.spec().nu}, {"delay", model.spec().delay}};
    doc["hidden_width"] = model.hidden_width();

    ordered_json w_ih = ordered_json::array();
    for (Eigen::Index h = 0; h < model.weights_input_hidden().rows(); ++h) {
        ordered_json row = ordered_json::array();
        for (Eigen::Index m = 0; m < model.weights_input_hidden().cols(); ++m) {
            row.push_back(model.weights_input_hidden()(h, m));
        }
        w_ih.push_back(std::move(row));
    }
    doc["weights_input_hidden"] = std::move(w_ih);
    doc["bias_hidden"] = std::vector<double>(model.bias_hidden().begin(), model.bias_hidden().end());
    doc["weights_hidden_output"] = std::vector<double>(model.weights_hidden_output().begin(),
                                                       model.weights_hidden_output().end());
    doc["bias_output"] = model.bias_output();

    ordered_json in_scale = ordered_json::array();
    for (const auto& s : model.input_scale()) in_scale.push_back(scale_to_json(s));
    doc["input_scale"] = std::move(in_scale);
    doc["output_scale"] = scale_to_json(model.output_scale());
    return doc.dump(2) + "\n";
}

ModelFile deserialize(std::string_view text) {
    ordered_json doc;
    try {
        doc = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FileError(std::string("model file is not valid JSON: ") + e.what());
    }
    try {
        const int version = doc.at("format_version").get<int>();
        if (version != kModelFormatVersion) {
            throw FileError("unsupported model format_version " + std::to_string(version));
        }
        RegressorSpec spec{doc.at("spec").at("ny").get<int>(), doc.at("spec").at("nu").get<int>(),
                           doc.at("spec").at("delay").get<int>()};
        const int hidden = doc.at("hidden_width").get<int>();
        const auto& rows = doc.at("weights_input_hidden");
        if (hidden < 1 || rows.size() != static_cast<std::size_t>(hidden)) {
            throw DimensionError("weights_input_hidden row count does not match hidden_width");
        }
        Eigen::MatrixXd w_ih(hidden, spec.width());
        for (int h = 0; h < hidden; ++h) {
            const auto& row = rows.at(static_cast<std::size_t>(h));
            if (row.size() != static_cast<std::size_t>(spec.width())) {
                throw DimensionError("weights_input_hidden row width does not match the regressor");
            }
            for (int m = 0; m < spec.width(); ++m) w_ih(h, m) = row.at(static_cast<std::size_t>(m)).get<double>();
        }
        auto vec = [](const ordered_json& j) {
            const auto v = j.get<std::vector<double>>();
            return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
        };
        std::vector<AffineScale> in_scale;
        for (const auto& s : doc.at("input_scale")) in_scale.push_back(scale_from_json(s));
        return {NarxModel(spec, std::move(w_ih), vec(doc.at("bias_hidden")),
                          vec(doc.at("weights_hidden_output")), doc.at("bias_output").get<double>(),
                          std::move(in_scale), scale_from_json(doc.at("output_scale"))),
                doc.value("config_hash", std::string{})};
    } catch (const nlohmann::json::exception& e) {
        throw FileError(std::string("malformed model file: ") + e.what());
    }
}

}  // namespace nnmpc::narx
