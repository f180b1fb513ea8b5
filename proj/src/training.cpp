#include "nnmpc/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "nnmpc/error.hpp"
#include "nnmpc/io.hpp"

namespace nnmpc::training {

namespace {

// Fixed mappings from the raw engine so sequences are identical across
// standard library implementations.
double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
    return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

}  // namespace

std::string_view to_string(ExcitationKind kind) {
    switch (kind) {
        case ExcitationKind::Aprbs: return "aprbs";
    }
    return "unknown";
}

ExcitationKind excitation_kind_from_string(std::string_view name) {
    if (name == "aprbs") return ExcitationKind::Aprbs;
    throw DomainError("unknown excitation kind '" + std::string(name) + "'");
}

std::vector<double> generate_excitation(ExcitationKind kind, std::size_t n, std::uint64_t seed,
                                        Bounds bounds, int min_hold, int max_hold) {
    if (kind != ExcitationKind::Aprbs) throw DomainError("unsupported excitation kind");
    if (n < 50) throw DomainError("excitation needs at least 50 samples");
    if (!std::isfinite(bounds.lo) || !std::isfinite(bounds.hi) || !(bounds.hi > bounds.lo)) {
        throw DomainError("excitation bounds must be finite with lo < hi");
    }
    if (bounds.lo < 0.0) throw DomainError("excitation lower bound must be a non-negative flow");
    if (min_hold < 1 || max_hold < min_hold) throw DomainError("excitation hold range invalid");

    std::mt19937_64 rng(seed);
    std::vector<double> u;
    u.reserve(n);
    while (u.size() < n) {
        const double level = bounds.lo + (bounds.hi - bounds.lo) * unit_uniform(rng);
        const int hold = uniform_int(rng, min_hold, max_hold);
        for (int i = 0; i < hold && u.size() < n; ++i) u.push_back(level);
    }
    return u;
}

void Dataset::validate() const {
    if (u.size() != y.size()) throw DomainError("dataset u and y lengths differ");
    if (y.size() < 50) throw DomainError("dataset needs at least 50 samples");
    if (!(ts > 0.0) || !std::isfinite(ts)) throw DomainError("dataset sampling period must be positive");
    if (split > y.size()) throw DomainError("dataset split beyond end of data");
    for (std::size_t k = 0; k < y.size(); ++k) {
        if (!std::isfinite(u[k]) || !std::isfinite(y[k])) {
            throw DomainError("dataset sample " + std::to_string(k) + " is not finite");
        }
        if (!(y[k] > 0.0)) throw DomainError("dataset output " + std::to_string(k) + " is not positive");
    }
}

namespace {

std::size_t split_index(std::size_t n, double train_fraction) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw DomainError("train fraction must lie in (0, 1)");
    }
    return static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
}

}  // namespace

Dataset sample_plant(std::span<const double> u, double ts, double substep,
                     const plant::PlantParams& params, plant::PlantState x0, double train_fraction) {
    params.validate();
    const long per_sample = plant::substep_count(ts, substep);
    const double dt = ts / static_cast<double>(per_sample);

    Dataset data;
    data.ts = ts;
    data.u.assign(u.begin(), u.end());
    data.y.reserve(u.size());
    plant::PlantState x = x0;
    for (std::size_t k = 0; k < u.size(); ++k) {
        try {
            for (long s = 0; s < per_sample; ++s) x = plant::step(x, u[k], dt, params);
        } catch (const IntegrationError& e) {
            throw IntegrationError("sample " + std::to_string(k) + ": " + e.what(), e.substage());
        }
        data.y.push_back(x.cb);
    }
    data.split = split_index(u.size(), train_fraction);
    return data;
}

std::string dataset_to_csv(const Dataset& data, std::string_view config_hash) {
    std::string out = io::hash_comment(config_hash);
    out += "k,t,u,y\n";
    for (std::size_t k = 0; k < data.size(); ++k) {
        out += std::to_string(k);
        out += ',';
        out += io::format_double(static_cast<double>(k) * data.ts);
        out += ',';
        out += io::format_double(data.u[k]);
        out += ',';
        out += io::format_double(data.y[k]);
        out += '\n';
    }
    return out;
}

Dataset dataset_from_csv(std::string_view text, double train_fraction) {
    Dataset data;
    std::istringstream in{std::string(text)};
    std::string line;
    bool header_seen = false;
    std::vector<double> times;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        if (!header_seen) {
            if (line != "k,t,u,y") throw FileError("dataset CSV header must be 'k,t,u,y'");
            header_seen = true;
            continue;
        }
        const auto fields = io::split_csv_line(line);
        if (fields.size() != 4) throw FileError("dataset CSV row needs 4 fields: " + line);
        times.push_back(io::parse_double(fields[1], "dataset t"));
        data.u.push_back(io::parse_double(fields[2], "dataset u"));
        data.y.push_back(io::parse_double(fields[3], "dataset y"));
    }
    if (!header_seen) throw FileError("dataset CSV is empty");
    if (times.size() < 2) throw FileError("dataset CSV needs at least two rows");
    data.ts = times[1] - times[0];
    data.split = split_index(data.size(), train_fraction);
    data.validate();
    return data;
}

std::size_t first_target_index(const narx::RegressorSpec& spec) {
    // Target y[m] uses y[m-1..m-ny] and u[m-delay+1..m-delay-nu+2].
    return static_cast<std::size_t>(std::max(spec.ny, spec.delay + spec.nu - 2));
}

RegressionSet build_regressions(const Dataset& data, const narx::RegressorSpec& spec,
                                std::size_t begin, std::size_t end) {
    spec.validate();
    begin = std::max(begin, first_target_index(spec));
    end = std::min(end, data.size());
    RegressionSet set;
    if (end <= begin) {
        set.regressors.resize(0, spec.width());
        return set;
    }
    const auto rows = static_cast<Eigen::Index>(end - begin);
    set.regressors.resize(rows, spec.width());
    set.targets.resize(rows);
    set.target_index.reserve(end - begin);
    const std::span<const double> ys(data.y);
    const std::span<const double> us(data.u);
    for (std::size_t m = begin; m < end; ++m) {
        const auto r = static_cast<Eigen::Index>(m - begin);
        set.regressors.row(r) = narx::regressor(ys.first(m), us.first(m + 1), spec).transpose();
        set.targets[r] = data.y[m];
        set.target_index.push_back(m);
    }
    return set;
}

void TrainConfig::validate() const {
    if (max_iterations < 1) throw DomainError("train.max_iterations must be >= 1");
    if (!(lambda0 > 0.0)) throw DomainError("train.lambda0 must be positive");
    if (!(lambda_up > 1.0) || !(lambda_down > 1.0)) throw DomainError("train damping factors must exceed 1");
    if (!(lambda_max > lambda0)) throw DomainError("train.lambda_max must exceed lambda0");
    if (!(tol_gradient > 0.0) || !(tol_loss > 0.0)) throw DomainError("train tolerances must be positive");
}

narx::NarxModel initial_model(const narx::RegressorSpec& spec, int hidden_width, const Dataset& data,
                              std::uint64_t seed) {
    spec.validate();
    if (data.split < 2) throw DomainError("training split too small to fit scaling");
    const auto y_begin = data.y.begin();
    const auto u_begin = data.u.begin();
    const auto split = static_cast<std::ptrdiff_t>(data.split);
    const auto [y_lo, y_hi] = std::minmax_element(y_begin, y_begin + split);
    const auto [u_lo, u_hi] = std::minmax_element(u_begin, u_begin + split);
    const narx::AffineScale y_scale = narx::AffineScale::unit_range(*y_lo, *y_hi);
    const narx::AffineScale u_scale = narx::AffineScale::unit_range(*u_lo, *u_hi);

    std::vector<narx::AffineScale> input_scale;
    for (int l = 0; l < spec.ny; ++l) input_scale.push_back(y_scale);
    for (int m = 0; m < spec.nu; ++m) input_scale.push_back(u_scale);

    const narx::NarxModel shape = narx::NarxModel::zeros(spec, hidden_width);
    std::mt19937_64 rng(seed);
    Eigen::VectorXd theta(static_cast<Eigen::Index>(shape.parameter_count()));
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] = unit_uniform(rng) - 0.5;
    return shape.with_parameters(theta).with_scaling(std::move(input_scale), y_scale);
}

std::string_view to_string(StopReason reason) {
    switch (reason) {
        case StopReason::Converged: return "converged";
        case StopReason::GradientTolerance: return "gradient_tolerance";
        case StopReason::LossTolerance: return "loss_tolerance";
        case StopReason::MaxIterations: return "max_iterations";
        case StopReason::DampingLimit: return "damping_limit";
    }
    return "unknown";
}

bool lm_step(const Eigen::MatrixXd& jacobian, const Eigen::VectorXd& residual, double lambda,
             Eigen::VectorXd& delta) {
    Eigen::MatrixXd normal = jacobian.transpose() * jacobian;
    normal.diagonal().array() += lambda;
    const Eigen::LLT<Eigen::MatrixXd> llt(normal);
    if (llt.info() != Eigen::Success) return false;
    delta = llt.solve(jacobian.transpose() * residual);
    return delta.allFinite();
}

namespace {

// Keeps lambda away from zero so rejected steps can grow it again.
constexpr double kLambdaFloor = 1e-15;

struct Linearization {
    Eigen::VectorXd residual;
    Eigen::MatrixXd jacobian;
    double loss = 0.0;
};

double loss_only(const narx::NarxModel& model, const RegressionSet& set) {
    double loss = 0.0;
    for (Eigen::Index r = 0; r < set.targets.size(); ++r) {
        const double e = set.targets[r] - narx::forward(model, set.regressors.row(r).transpose());
        loss += e * e;
    }
    return loss;
}

Linearization linearize(const narx::NarxModel& model, const RegressionSet& set) {
    Linearization lin;
    const Eigen::Index rows = set.targets.size();
    lin.residual.resize(rows);
    lin.jacobian.resize(rows, static_cast<Eigen::Index>(model.parameter_count()));
    for (Eigen::Index r = 0; r < rows; ++r) {
        const Eigen::VectorXd reg = set.regressors.row(r).transpose();
        lin.residual[r] = set.targets[r] - narx::forward(model, reg);
        lin.jacobian.row(r) = narx::gradient_wrt_weights(model, reg).transpose();
    }
    lin.loss = lin.residual.squaredNorm();
    return lin;
}

}  // namespace

TrainResult train_lm(const narx::NarxModel& model, const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    data.validate();
    const RegressionSet set = build_regressions(data, model.spec(), 0, data.split);
    if (set.targets.size() < 1) throw DomainError("training split too short to form regressors");

    TrainResult result{model, {}, StopReason::MaxIterations};
    double lambda = cfg.lambda0;
    Linearization lin = linearize(result.model, set);
    if (!std::isfinite(lin.loss)) throw TrainingError("non-finite initial loss", 0);
    result.loss_curve.push_back({0, lin.loss, lambda});

    if (lin.loss == 0.0) {
        result.stop_reason = StopReason::Converged;
        return result;
    }
    if ((lin.jacobian.transpose() * lin.residual).norm() < cfg.tol_gradient) {
        result.stop_reason = StopReason::GradientTolerance;
        return result;
    }

    Eigen::VectorXd theta = result.model.parameters();
    for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
        bool accepted = false;
        while (!accepted) {
            Eigen::VectorXd delta;
            if (!lm_step(lin.jacobian, lin.residual, lambda, delta)) {
                lambda *= cfg.lambda_up;
                if (lambda > cfg.lambda_max) {
                    throw TrainingError("normal matrix singular even at lambda " +
                                            io::format_double(lambda), iter);
                }
                continue;
            }
            const Eigen::VectorXd trial_theta = theta + delta;
            if (!trial_theta.allFinite()) throw TrainingError("non-finite weight update", iter);
            const narx::NarxModel trial = result.model.with_parameters(trial_theta);
            const double trial_loss = loss_only(trial, set);
            if (!std::isfinite(trial_loss)) {
                throw TrainingError("non-finite loss at iteration " + std::to_string(iter), iter);
            }
            if (trial_loss < lin.loss) {
                const double previous = lin.loss;
                lambda = std::max(lambda / cfg.lambda_down, kLambdaFloor);
                theta = trial_theta;
                result.model = trial;
                lin = linearize(result.model, set);
                result.loss_curve.push_back({iter, lin.loss, lambda});
                accepted = true;
                if (lin.loss == 0.0) {
                    result.stop_reason = StopReason::Converged;
                    return result;
                }
                if ((previous - lin.loss) < cfg.tol_loss * previous) {
                    result.stop_reason = StopReason::LossTolerance;
                    return result;
                }
                if ((lin.jacobian.transpose() * lin.residual).norm() < cfg.tol_gradient) {
                    result.stop_reason = StopReason::GradientTolerance;
                    return result;
                }
            } else {
                lambda *= cfg.lambda_up;
                if (lambda > cfg.lambda_max) {
                    result.stop_reason = StopReason::DampingLimit;
                    return result;
                }
            }
        }
    }
    result.stop_reason = StopReason::MaxIterations;
    return result;
}

std::string loss_curve_to_csv(const std::vector<LossRecord>& curve, std::string_view config_hash) {
    std::string out = io::hash_comment(config_hash);
    out += "iter,loss,lambda\n";
    for (const auto& rec : curve) {
        out += std::to_string(rec.iteration) + ',' + io::format_double(rec.loss) + ',' +
               io::format_double(rec.lambda) + '\n';
    }
    return out;
}

Correlations residual_correlations(std::span<const double> residuals, std::span<const double> inputs,
                                   int max_auto_lag, int max_cross_lag) {
    if (residuals.size() != inputs.size()) throw DimensionError("residual and input lengths differ");
    const std::size_t n = residuals.size();
    if (n < 2) throw DimensionError("need at least two residuals for correlation tests");

    Correlations out;
    out.confidence_band = 1.96 / std::sqrt(static_cast<double>(n));
    out.autocorr.assign(static_cast<std::size_t>(max_auto_lag), 0.0);
    out.cross_corr.assign(static_cast<std::size_t>(2 * max_cross_lag + 1), 0.0);

    const double e_mean = std::accumulate(residuals.begin(), residuals.end(), 0.0) / static_cast<double>(n);
    const double u_mean = std::accumulate(inputs.begin(), inputs.end(), 0.0) / static_cast<double>(n);
    std::vector<double> e(n), u(n);
    double e_scale = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        e[t] = residuals[t] - e_mean;
        u[t] = inputs[t] - u_mean;
        e_scale = std::max(e_scale, std::abs(residuals[t]));
    }
    double see = 0.0, suu = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        see += e[t] * e[t];
        suu += u[t] * u[t];
    }
    // Residuals that are constant to rounding carry no correlation information.
    double e_spread = 0.0;
    for (double v : e) e_spread = std::max(e_spread, std::abs(v));
    if (see == 0.0 || e_spread <= 1e-12 * std::max(1.0, e_scale)) {
        out.degenerate = true;
        return out;
    }
    for (int lag = 1; lag <= max_auto_lag; ++lag) {
        double acc = 0.0;
        for (std::size_t t = 0; t + static_cast<std::size_t>(lag) < n; ++t) acc += e[t] * e[t + static_cast<std::size_t>(lag)];
        out.autocorr[static_cast<std::size_t>(lag - 1)] = acc / see;
    }
    if (suu > 0.0) {
        const double norm = std::sqrt(suu * see);
        for (int lag = -max_cross_lag; lag <= max_cross_lag; ++lag) {
            double acc = 0.0;
            for (std::size_t t = 0; t < n; ++t) {
                const long s = static_cast<long>(t) + lag;
                if (s >= 0 && s < static_cast<long>(n)) acc += u[t] * e[static_cast<std::size_t>(s)];
            }
            out.cross_corr[static_cast<std::size_t>(lag + max_cross_lag)] = acc / norm;
        }
    }
    return out;
}

double fraction_inside(std::span<const double> values, double band) {
    if (values.empty()) return 1.0;
    const auto inside = std::count_if(values.begin(), values.end(),
                                      [band](double v) { return std::abs(v) <= band; });
    return static_cast<double>(inside) / static_cast<double>(values.size());
}

ValidationReport validate(const narx::NarxModel& model, const Dataset& data) {
    data.validate();
    if (data.split == 0 || data.split >= data.size()) throw DomainError("dataset split must be defined");
    ValidationReport report;

    const auto [y_lo, y_hi] = std::minmax_element(data.y.begin(), data.y.end());
    report.output_range = *y_hi - *y_lo;

    auto run = [&](std::size_t begin, std::size_t end, bool train, std::vector<double>& residuals,
                   std::vector<double>& inputs) {
        const RegressionSet set = build_regressions(data, model.spec(), begin, end);
        double sse = 0.0;
        for (Eigen::Index r = 0; r < set.targets.size(); ++r) {
            const double y_hat = narx::forward(model, set.regressors.row(r).transpose());
            const double e = set.targets[r] - y_hat;
            sse += e * e;
            residuals.push_back(e);
            inputs.push_back(data.u[set.target_index[static_cast<std::size_t>(r)]]);
            report.predictions.push_back({set.target_index[static_cast<std::size_t>(r)], train,
                                          set.targets[r], y_hat});
        }
        if (set.targets.size() == 0) throw DomainError("split too short to form regressors");
        return std::sqrt(sse / static_cast<double>(set.targets.size()));
    };

    std::vector<double> train_res, train_u, test_res, test_u;
    report.rmse_train = run(0, data.split, true, train_res, train_u);
    report.rmse_test = run(data.split, data.size(), false, test_res, test_u);

    const Correlations corr = residual_correlations(test_res, test_u);
    report.residual_autocorr = corr.autocorr;
    report.cross_corr_u_residual = corr.cross_corr;
    report.confidence_band = corr.confidence_band;
    report.degenerate = corr.degenerate;
    report.autocorr_inside_fraction = fraction_inside(corr.autocorr, corr.confidence_band);
    report.cross_corr_inside_fraction = fraction_inside(corr.cross_corr, corr.confidence_band);
    report.all_inside = report.autocorr_inside_fraction == 1.0 && report.cross_corr_inside_fraction == 1.0;
    return report;
}

std::string validation_to_csv(const ValidationReport& report, std::string_view config_hash) {
    std::string out = io::hash_comment(config_hash);
    out += "k,split,y,y_hat,residual\n";
    for (const auto& p : report.predictions) {
        out += std::to_string(p.index) + ',' + (p.train ? "train" : "test") + ',' +
               io::format_double(p.y) + ',' + io::format_double(p.y_hat) + ',' +
               io::format_double(p.y - p.y_hat) + '\n';
    }
    return out;
}

std::string correlations_to_csv(const ValidationReport& report, std::string_view config_hash) {
    std::string out = io::hash_comment(config_hash);
    out += "kind,lag,value,inside\n";
    const double band = report.confidence_band;
    for (std::size_t i = 0; i < report.residual_autocorr.size(); ++i) {
        const double v = report.residual_autocorr[i];
        out += "autocorr," + std::to_string(i + 1) + ',' + io::format_double(v) + ',' +
               (std::abs(v) <= band ? "1" : "0") + '\n';
    }
    const long max_lag = static_cast<long>(report.cross_corr_u_residual.size() / 2);
    for (std::size_t i = 0; i < report.cross_corr_u_residual.size(); ++i) {
        const double v = report.cross_corr_u_residual[i];
        out += "crosscorr," + std::to_string(static_cast<long>(i) - max_lag) + ',' +
               io::format_double(v) + ',' + (std::abs(v) <= band ? "1" : "0") + '\n';
    }
    return out;
}

}  // namespace nnmpc::training
