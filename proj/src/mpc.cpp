#include "nnmpc/mpc.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "nnmpc/error.hpp"
#include "nnmpc/io.hpp"

namespace nnmpc::mpc {

void MpcConfig::validate(const narx::RegressorSpec& spec) const {
    std::ostringstream msg;
    if (n1 < 1 || n1 > n2) msg << "mpc requires 1 <= n1 <= n2 (n1=" << n1 << ", n2=" << n2 << ")";
    else if (nu < 1 || nu > n2 - spec.delay + 1)
        msg << "mpc requires 1 <= nu <= n2 - delay + 1 (nu=" << nu << ", n2=" << n2
            << ", delay=" << spec.delay << ")";
    else if (!(rho >= 0.0) || !std::isfinite(rho)) msg << "mpc rho must be non-negative";
    else if (!(u_min < u_max) || !std::isfinite(u_min) || !std::isfinite(u_max))
        msg << "mpc requires u_min < u_max";
    else if (max_lm_iterations < 1) msg << "mpc max_lm_iterations must be >= 1";
    else if (!(lambda0 > 0.0) || !(lambda_max > lambda0)) msg << "mpc requires 0 < lambda0 < lambda_max";
    else if (!(lambda_up > 1.0) || !(lambda_down > 1.0)) msg << "mpc damping factors must exceed 1";
    else if (!(tol > 0.0)) msg << "mpc tol must be positive";
    const std::string text = msg.str();
    if (!text.empty()) throw DomainError(text);
}

Eigen::VectorXd NarxPredictor::predict(const narx::History& history, std::span<const double> future_u,
                                       int n2) const {
    return narx::predict_horizon(model_, history, future_u, n2);
}

Eigen::MatrixXd NarxPredictor::jacobian(const narx::History& history, std::span<const double> future_u,
                                        int n2) const {
    return narx::jacobian_output_wrt_u(model_, history, future_u, n2);
}

LinearArxPredictor::LinearArxPredictor(narx::RegressorSpec spec, Eigen::VectorXd a, Eigen::VectorXd b,
                                       double c)
    : spec_(spec), a_(std::move(a)), b_(std::move(b)), c_(c) {
    spec_.validate();
    if (a_.size() != spec_.ny || b_.size() != spec_.nu) {
        throw DimensionError("linear predictor coefficient counts must match ny and nu");
    }
}

namespace {

void check_linear_history(const narx::RegressorSpec& spec, const narx::History& history,
                          std::size_t future, int n2) {
    if (n2 < 1) throw DimensionError("prediction horizon must be at least 1");
    if (history.y.size() < spec.required_outputs()) {
        throw HistoryError("output history too short", spec.required_outputs(), history.y.size());
    }
    if (history.u.size() + 1 < spec.required_inputs()) {
        throw HistoryError("input history too short", spec.required_inputs() - 1, history.u.size());
    }
    const auto need = static_cast<std::size_t>(std::max(1, n2 - spec.delay + 1));
    if (future < need) throw HistoryError("future input sequence too short", need, future);
}

}  // namespace

Eigen::VectorXd LinearArxPredictor::predict(const narx::History& history,
                                            std::span<const double> future_u, int n2) const {
    check_linear_history(spec_, history, future_u.size(), n2);
    Eigen::VectorXd out(n2);
    for (int i = 1; i <= n2; ++i) {
        double v = c_;
        for (int l = 0; l < spec_.ny; ++l) {
            const int t = i - 1 - l;
            v += a_[l] * (t >= 1 ? out[t - 1] : history.y[history.y.size() - 1 - static_cast<std::size_t>(-t)]);
        }
        for (int m = 0; m < spec_.nu; ++m) {
            const int t = i - spec_.delay - m;
            v += b_[m] * (t >= 0 ? future_u[static_cast<std::size_t>(t)]
                                 : history.u[history.u.size() - static_cast<std::size_t>(-t)]);
        }
        out[i - 1] = v;
    }
    return out;
}

Eigen::MatrixXd LinearArxPredictor::jacobian(const narx::History& history,
                                             std::span<const double> future_u, int n2) const {
    check_linear_history(spec_, history, future_u.size(), n2);
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n2, n2);
    for (int i = 1; i <= n2; ++i) {
        for (int l = 0; l < spec_.ny; ++l) {
            const int t = i - 1 - l;
            if (t >= 1) jac.row(i - 1) += a_[l] * jac.row(t - 1);
        }
        for (int m = 0; m < spec_.nu; ++m) {
            const int j = i - spec_.delay - m;
            if (j >= 0 && j < n2) jac(i - 1, j) += b_[m];
        }
    }
    return jac;
}

Eigen::VectorXd expand_controls(const Eigen::VectorXd& u_seq, int n2) {
    if (u_seq.size() < 1 || u_seq.size() > n2) {
        throw DimensionError("control sequence length must lie in [1, n2]");
    }
    Eigen::VectorXd out(n2);
    for (int i = 0; i < n2; ++i) out[i] = u_seq[std::min<Eigen::Index>(i, u_seq.size() - 1)];
    return out;
}

Eigen::MatrixXd expansion_matrix(int nu, int n2) {
    if (nu < 1 || nu > n2) throw DimensionError("control horizon must lie in [1, n2]");
    Eigen::MatrixXd e = Eigen::MatrixXd::Zero(n2, nu);
    for (int i = 0; i < n2; ++i) e(i, std::min(i, nu - 1)) = 1.0;
    return e;
}

namespace {

// Damping never shrinks below this, so a failed factorization can always
// be escaped by growing lambda again.
constexpr double kLambdaFloor = 1e-15;

Eigen::MatrixXd difference_matrix(int nu) {
    Eigen::MatrixXd d = Eigen::MatrixXd::Identity(nu, nu);
    for (int i = 1; i < nu; ++i) d(i, i - 1) = -1.0;
    return d;
}

struct Evaluation {
    Eigen::VectorXd y_hat;     // n1..n2
    Eigen::VectorXd error;     // r - y_hat over n1..n2
    Eigen::VectorXd du;        // nu increments
    double j = 0.0;
    Eigen::MatrixXd phi;       // (n2-n1+1) x nu, only with derivatives
};

void check_problem(const Problem& p, const Eigen::VectorXd& u_seq) {
    const MpcConfig& cfg = p.cfg;
    cfg.validate(p.predictor.spec());
    if (p.reference.size() != static_cast<std::size_t>(cfg.n2 - cfg.n1 + 1)) {
        std::ostringstream msg;
        msg << "reference must hold n2 - n1 + 1 = " << cfg.n2 - cfg.n1 + 1 << " entries, got "
            << p.reference.size();
        throw DimensionError(msg.str());
    }
    if (u_seq.size() != cfg.nu) throw DimensionError("control sequence length must equal nu");
}

Evaluation evaluate(const Problem& p, const Eigen::VectorXd& u_seq, bool with_derivatives) {
    check_problem(p, u_seq);
    const MpcConfig& cfg = p.cfg;
    const Eigen::VectorXd future = expand_controls(u_seq, cfg.n2);
    const std::span<const double> future_span(future.data(), static_cast<std::size_t>(future.size()));
    const int rows = cfg.n2 - cfg.n1 + 1;

    Evaluation ev;
    ev.y_hat = p.predictor.predict(p.history, future_span, cfg.n2).segment(cfg.n1 - 1, rows);
    ev.error.resize(rows);
    for (int i = 0; i < rows; ++i) ev.error[i] = p.reference[static_cast<std::size_t>(i)] - ev.y_hat[i];
    ev.du.resize(cfg.nu);
    ev.du[0] = u_seq[0] - p.u_prev;
    for (int i = 1; i < cfg.nu; ++i) ev.du[i] = u_seq[i] - u_seq[i - 1];
    ev.j = ev.error.squaredNorm() + cfg.rho * ev.du.squaredNorm();

    if (with_derivatives) {
        const Eigen::MatrixXd full = p.predictor.jacobian(p.history, future_span, cfg.n2);
        ev.phi = (full * expansion_matrix(cfg.nu, cfg.n2)).middleRows(cfg.n1 - 1, rows);
    }
    return ev;
}

Eigen::VectorXd gradient_of(const Evaluation& ev, const MpcConfig& cfg) {
    return -2.0 * ev.phi.transpose() * ev.error + 2.0 * cfg.rho * difference_matrix(cfg.nu).transpose() * ev.du;
}

Eigen::MatrixXd hessian_of(const Evaluation& ev, const MpcConfig& cfg) {
    const Eigen::MatrixXd d = difference_matrix(cfg.nu);
    Eigen::MatrixXd h = 2.0 * ev.phi.transpose() * ev.phi + 2.0 * cfg.rho * d.transpose() * d;
    // Exact symmetry regardless of rounding in the products above.
    return 0.5 * (h + h.transpose());
}

// Components held at a bound by a gradient pushing outward are fixed.
std::vector<bool> free_set(const Eigen::VectorXd& u, const Eigen::VectorXd& g, const MpcConfig& cfg) {
    std::vector<bool> free(static_cast<std::size_t>(u.size()), true);
    for (Eigen::Index i = 0; i < u.size(); ++i) {
        if ((u[i] <= cfg.u_min && g[i] > 0.0) || (u[i] >= cfg.u_max && g[i] < 0.0)) {
            free[static_cast<std::size_t>(i)] = false;
        }
    }
    return free;
}

double projected_norm(const Eigen::VectorXd& g, const std::vector<bool>& free) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < g.size(); ++i) {
        if (free[static_cast<std::size_t>(i)]) s += g[i] * g[i];
    }
    return std::sqrt(s);
}

Eigen::VectorXd clamp(Eigen::VectorXd u, const MpcConfig& cfg) {
    for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = std::clamp(u[i], cfg.u_min, cfg.u_max);
    return u;
}

// Solves (H + lambda I) d = -G on the free components; fixed components get d = 0.
bool damped_direction(const Eigen::MatrixXd& h, const Eigen::VectorXd& g, const std::vector<bool>& free,
                      double lambda, Eigen::VectorXd& d) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < g.size(); ++i) {
        if (free[static_cast<std::size_t>(i)]) idx.push_back(i);
    }
    d = Eigen::VectorXd::Zero(g.size());
    if (idx.empty()) return true;
    const auto n = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd a(n, n);
    Eigen::VectorXd b(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        b[r] = -g[idx[static_cast<std::size_t>(r)]];
        for (Eigen::Index c = 0; c < n; ++c) a(r, c) = h(idx[static_cast<std::size_t>(r)], idx[static_cast<std::size_t>(c)]);
        a(r, r) += lambda;
    }
    const Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) return false;
    const Eigen::VectorXd sol = llt.solve(b);
    if (!sol.allFinite()) return false;
    for (Eigen::Index r = 0; r < n; ++r) d[idx[static_cast<std::size_t>(r)]] = sol[r];
    return true;
}

}  // namespace

double cost(const Problem& problem, const Eigen::VectorXd& u_seq) {
    return evaluate(problem, u_seq, false).j;
}

Eigen::VectorXd cost_gradient(const Problem& problem, const Eigen::VectorXd& u_seq) {
    return gradient_of(evaluate(problem, u_seq, true), problem.cfg);
}

Eigen::MatrixXd cost_hessian_gn(const Problem& problem, const Eigen::VectorXd& u_seq) {
    return hessian_of(evaluate(problem, u_seq, true), problem.cfg);
}

Eigen::VectorXd predicted_outputs(const Problem& problem, const Eigen::VectorXd& u_seq) {
    return evaluate(problem, u_seq, false).y_hat;
}

ControlSolution solve(const Problem& problem, const std::optional<Eigen::VectorXd>& warm_start) {
    const MpcConfig& cfg = problem.cfg;
    cfg.validate(problem.predictor.spec());

    Eigen::VectorXd u;
    if (warm_start) {
        if (warm_start->size() != cfg.nu) throw DimensionError("warm start length must equal nu");
        u = clamp(*warm_start, cfg);
    } else {
        u = clamp(Eigen::VectorXd::Constant(cfg.nu, problem.u_prev), cfg);
    }

    Evaluation ev = evaluate(problem, u, true);
    Eigen::VectorXd g = gradient_of(ev, cfg);
    Eigen::MatrixXd h = hessian_of(ev, cfg);
    std::vector<bool> free = free_set(u, g, cfg);
    double lambda = cfg.lambda0;

    ControlSolution sol;
    sol.trace.push_back({0, ev.j, lambda, projected_norm(g, free)});

    bool stalled = false;
    for (int iter = 1; iter <= cfg.max_lm_iterations && !stalled; ++iter) {
        if (projected_norm(g, free) < cfg.tol) break;
        while (true) {
            Eigen::VectorXd d;
            if (!damped_direction(h, g, free, lambda, d)) {
                lambda *= cfg.lambda_up;
                if (lambda > cfg.lambda_max) {
                    throw SolverError("damped system not solvable, lambda=" + io::format_double(lambda), lambda);
                }
                continue;
            }
            const Eigen::VectorXd trial = clamp(u + d, cfg);
            Evaluation ev_trial = evaluate(problem, trial, true);
            bool accept = std::isfinite(ev_trial.j) && ev_trial.j < ev.j;
            Eigen::VectorXd g_trial;
            std::vector<bool> free_trial;
            if (!accept && ev_trial.j == ev.j) {
                // Cost flat to rounding: still accept if the projected gradient shrinks.
                g_trial = gradient_of(ev_trial, cfg);
                free_trial = free_set(trial, g_trial, cfg);
                accept = projected_norm(g_trial, free_trial) < projected_norm(g, free);
            }
            if (accept) {
                lambda = std::max(lambda / cfg.lambda_down, kLambdaFloor);
                u = trial;
                ev = std::move(ev_trial);
                g = gradient_of(ev, cfg);
                h = hessian_of(ev, cfg);
                free = free_set(u, g, cfg);
                sol.iterations = iter;
                sol.trace.push_back({iter, ev.j, lambda, projected_norm(g, free)});
                break;
            }
            lambda *= cfg.lambda_up;
            if (lambda > cfg.lambda_max) {
                stalled = true;
                break;
            }
        }
    }

    sol.u_sequence = u;
    sol.j_value = ev.j;
    sol.gradient_norm = projected_norm(g, free);
    sol.predicted_y = ev.y_hat;
    return sol;
}

Controller::Controller(std::shared_ptr<const Predictor> predictor, MpcConfig cfg, double u_initial)
    : predictor_(std::move(predictor)), cfg_(cfg), u_prev_(u_initial) {
    if (!predictor_) throw DomainError("controller needs a predictor");
    cfg_.validate(predictor_->spec());
    if (u_initial < cfg_.u_min || u_initial > cfg_.u_max) {
        throw DomainError("initial input outside controller bounds");
    }
}

double Controller::step(double measurement, std::span<const double> reference) {
    if (!std::isfinite(measurement)) throw DomainError("measurement must be finite");
    const narx::RegressorSpec& spec = predictor_->spec();
    const std::size_t keep_y = spec.required_outputs();
    const std::size_t keep_u = spec.required_inputs() - 1;

    if (history_.y.empty()) {
        history_.y.assign(keep_y, measurement);
        history_.u.assign(keep_u, u_prev_);
    } else {
        history_.y.push_back(measurement);
        if (history_.y.size() > keep_y) history_.y.erase(history_.y.begin(), history_.y.end() - static_cast<std::ptrdiff_t>(keep_y));
    }

    std::optional<Eigen::VectorXd> warm;
    if (last_) {
        Eigen::VectorXd shifted(cfg_.nu);
        for (int i = 0; i < cfg_.nu; ++i) shifted[i] = last_->u_sequence[std::min(i + 1, cfg_.nu - 1)];
        warm = shifted;
    }
    const Problem problem{*predictor_, history_, reference, u_prev_, cfg_};
    last_ = solve(problem, warm);

    u_prev_ = last_->u_sequence[0];
    if (keep_u > 0) {
        history_.u.push_back(u_prev_);
        if (history_.u.size() > keep_u) history_.u.erase(history_.u.begin(), history_.u.end() - static_cast<std::ptrdiff_t>(keep_u));
    }
    return u_prev_;
}

std::string trace_to_csv_rows(int step, const std::vector<TraceRow>& trace) {
    std::string out;
    for (const auto& row : trace) {
        out += std::to_string(step) + ',' + std::to_string(row.iteration) + ',' +
               io::format_double(row.j_value) + ',' + io::format_double(row.lambda) + ',' +
               io::format_double(row.gradient_norm) + '\n';
    }
    return out;
}

}  // namespace nnmpc::mpc
