#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include "nnmpc/error.hpp"
#include "nnmpc/mpc.hpp"
#include "nnmpc/training.hpp"
#include "oracles.hpp"

using namespace nnmpc;
using namespace nnmpc::mpc;

namespace {

const narx::RegressorSpec kSpec{2, 2, 1};

/// y(k+1) = 0.5 y(k) + 0.2 y(k-1) + 0.3 u(k) + 0.1 u(k-1) + 0.2, steady at u = 1, y = 2.
LinearArxPredictor stable_arx() {
    return LinearArxPredictor(kSpec, Eigen::Vector2d(0.5, 0.2), Eigen::Vector2d(0.3, 0.1), 0.2);
}

narx::NarxModel small_model(std::mt19937_64& rng, double w = 0.3) {
    std::uniform_real_distribution<double> gain(0.5, 1.5), off(-0.5, 0.5);
    std::vector<narx::AffineScale> in;
    for (int i = 0; i < 4; ++i) in.push_back({gain(rng), off(rng)});
    const narx::NarxModel shape = narx::NarxModel::zeros(kSpec, 5).with_scaling(in, {gain(rng), off(rng)});
    return shape.with_parameters(
        oracles::random_vector(rng, static_cast<Eigen::Index>(shape.parameter_count()), -w, w));
}

narx::History random_history(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> d(0.0, 2.0);
    return {{d(rng), d(rng), d(rng)}, {d(rng), d(rng)}};
}

MpcConfig wide_config(int n2 = 5, int nu = 3, double rho = 0.1) {
    MpcConfig cfg;
    cfg.n2 = n2;
    cfg.nu = nu;
    cfg.rho = rho;
    cfg.u_min = -1e3;
    cfg.u_max = 1e3;
    cfg.tol = 1e-12;
    cfg.max_lm_iterations = 200;
    return cfg;
}

}  // namespace

TEST(ExpandControls, Examples) {
    const Eigen::Vector3d u(1, 2, 3);
    EXPECT_EQ(expand_controls(u, 3), u);
    EXPECT_EQ(expand_controls(Eigen::VectorXd::Constant(1, 0.3), 5), Eigen::VectorXd::Constant(5, 0.3));
    EXPECT_EQ(expand_controls(Eigen::Vector2d(7, 9), 4), Eigen::Vector4d(7, 9, 9, 9));
    EXPECT_EQ(expansion_matrix(2, 4) * Eigen::Vector2d(7, 9), Eigen::Vector4d(7, 9, 9, 9));
    EXPECT_THROW(expand_controls(Eigen::VectorXd::Zero(4), 3), DimensionError);
}

TEST(Cost, ZeroAtMatchedReferenceAndHeldInput) {
    const LinearArxPredictor p = stable_arx();
    const narx::History h{{2, 2}, {1}};
    const MpcConfig cfg = wide_config();
    const std::vector<double> r(5, 2.0);
    const Problem prob{p, h, r, 1.0, cfg};
    EXPECT_EQ(cost(prob, Eigen::VectorXd::Constant(3, 1.0)), 0.0);
    EXPECT_TRUE(cost_gradient(prob, Eigen::VectorXd::Constant(3, 1.0)).isZero(0.0));
}

TEST(Cost, SingleStepHandValue) {
    // y_hat(k+1) = u(k); r - y_hat = 2 with u = 1, du = 1, rho = 0.5 -> 4 + 0.5.
    const LinearArxPredictor p({1, 1, 1}, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1), 0.0);
    const narx::History h{{5}, {}};
    MpcConfig cfg = wide_config(1, 1, 0.5);
    const std::vector<double> r{3.0};
    const Problem prob{p, h, r, 0.0, cfg};
    EXPECT_DOUBLE_EQ(cost(prob, Eigen::VectorXd::Ones(1)), 4.5);
}

TEST(Cost, ZeroRhoIsPureTrackingError) {
    std::mt19937_64 rng(1);
    const NarxPredictor p(small_model(rng));
    const narx::History h = random_history(rng);
    MpcConfig cfg = wide_config(6, 3, 0.0);
    cfg.n1 = 2;
    const std::vector<double> r{0.1, 0.2, 0.3, 0.4, 0.5};
    const Problem prob{p, h, r, 0.7, cfg};
    const Eigen::Vector3d u(0.2, 0.9, 0.4);
    const Eigen::VectorXd y = p.predict(h, std::span<const double>(expand_controls(u, 6).data(), 6), 6);
    double sse = 0.0;
    for (int i = 2; i <= 6; ++i) sse += std::pow(r[static_cast<std::size_t>(i - 2)] - y[i - 1], 2);
    EXPECT_NEAR(cost(prob, u), sse, 1e-14 * (1 + sse));
    EXPECT_EQ(predicted_outputs(prob, u), y.tail(5));
}

TEST(CostGradient, MatchesFiniteDifferences) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> d(0.0, 2.0);
    for (int i = 0; i < 100; ++i) {
        const NarxPredictor p(small_model(rng, 1.0));
        const narx::History h = random_history(rng);
        MpcConfig cfg = wide_config(2 + i % 6, 1, 0.05 * (i % 4));
        cfg.nu = 1 + i % cfg.n2;
        cfg.n1 = 1 + i % 2 < cfg.n2 ? 1 + i % 2 : 1;
        std::vector<double> r;
        for (int j = cfg.n1; j <= cfg.n2; ++j) r.push_back(d(rng));
        const Problem prob{p, h, r, d(rng), cfg};
        const Eigen::VectorXd u = oracles::random_vector(rng, cfg.nu, 0.0, 2.0);
        const Eigen::VectorXd numeric = oracles::fd_gradient([&](const Eigen::VectorXd& x) { return cost(prob, x); }, u);
        EXPECT_LE(oracles::relative_error(cost_gradient(prob, u), numeric), 1e-5) << "instance " << i;
    }
}

TEST(CostGradient, ConstantModelKeepsOnlyMovePenalty) {
    narx::NarxModel m = narx::NarxModel::zeros(kSpec, 3).with_scaling(std::vector<narx::AffineScale>(4), {1.0, -1.5});
    const NarxPredictor p(m);
    const narx::History h{{1, 1}, {0.5}};
    const MpcConfig cfg = wide_config(5, 3, 0.3);
    const std::vector<double> r{4, 3, 2, 1, 0};
    const Problem prob{p, h, r, 0.5, cfg};
    const Eigen::Vector3d u(1.0, 0.25, 2.0);
    const Eigen::Vector3d du(0.5, -0.75, 1.75);
    // D^T du for the first-difference operator.
    const Eigen::Vector3d dt_du(du[0] - du[1], du[1] - du[2], du[2]);
    EXPECT_LE((cost_gradient(prob, u) - 2 * 0.3 * dt_du).norm(), 1e-14);
}

TEST(CostHessian, SymmetricPositiveSemidefinite) {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 100; ++i) {
        const NarxPredictor p(small_model(rng, 1.0));
        const narx::History h = random_history(rng);
        const MpcConfig cfg = wide_config(7, 1 + i % 7, 0.01 * (i % 5));
        const std::vector<double> r(7, 1.0);
        const Problem prob{p, h, r, 0.5, cfg};
        const Eigen::MatrixXd hess = cost_hessian_gn(prob, oracles::random_vector(rng, cfg.nu, 0, 2));
        EXPECT_EQ(hess, hess.transpose());
        const double scale = std::max(1.0, hess.cwiseAbs().maxCoeff());
        EXPECT_GE(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(hess).eigenvalues().minCoeff(), -1e-12 * scale);
    }
}

TEST(CostHessian, ScalarMoveForm) {
    std::mt19937_64 rng(4);
    const NarxPredictor p(small_model(rng, 1.0));
    const narx::History h = random_history(rng);
    const MpcConfig cfg = wide_config(4, 1, 0.2);
    const std::vector<double> r(4, 0.5);
    const Problem prob{p, h, r, 0.5, cfg};
    const Eigen::VectorXd u = Eigen::VectorXd::Constant(1, 0.8);
    const Eigen::VectorXd full = expand_controls(u, 4);
    const Eigen::VectorXd phi = p.jacobian(h, std::span<const double>(full.data(), 4), 4).rowwise().sum();
    const Eigen::MatrixXd hess = cost_hessian_gn(prob, u);
    ASSERT_EQ(hess.rows(), 1);
    EXPECT_NEAR(hess(0, 0), 2 * phi.squaredNorm() + 2 * 0.2, 1e-13);
    EXPECT_GT(hess(0, 0), 0.0);
}

TEST(CostHessian, MatchesSecondDifferencesAtZeroResidual) {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 20; ++i) {
        const NarxPredictor p(small_model(rng, 1.0));
        const narx::History h = random_history(rng);
        const MpcConfig cfg = wide_config(5, 3, 0.1);
        const Eigen::VectorXd u = oracles::random_vector(rng, 3, 0, 2);
        const Eigen::VectorXd full = expand_controls(u, 5);
        const Eigen::VectorXd y = p.predict(h, std::span<const double>(full.data(), 5), 5);
        const std::vector<double> r(y.data(), y.data() + 5);
        const double u_prev = u[0];
        const Problem prob{p, h, r, u_prev, cfg};
        const double s = 1e-4;
        Eigen::MatrixXd numeric(3, 3);
        for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 3; ++b) {
                auto at = [&](double da, double db) {
                    Eigen::VectorXd x = u;
                    x[a] += da;
                    x[b] += db;
                    return cost(prob, x);
                };
                numeric(a, b) = (at(s, s) - at(s, -s) - at(-s, s) + at(-s, -s)) / (4 * s * s);
            }
        }
        EXPECT_LE(oracles::relative_error(cost_hessian_gn(prob, u), numeric), 1e-3) << "instance " << i;
    }
}

TEST(Solve, StationaryStartReturnsPreviousInput) {
    const LinearArxPredictor p = stable_arx();
    const narx::History h{{2, 2}, {1}};
    MpcConfig cfg;
    const std::vector<double> r(static_cast<std::size_t>(cfg.n2), 2.0);
    const Problem prob{p, h, r, 1.0, cfg};
    const ControlSolution s = solve(prob, Eigen::VectorXd::Constant(cfg.nu, 1.0));
    EXPECT_EQ(s.u_sequence, Eigen::VectorXd::Constant(cfg.nu, 1.0));
    EXPECT_EQ(s.j_value, 0.0);
    EXPECT_EQ(s.iterations, 0);
}

TEST(Solve, StationaryNarxFixedPoint) {
    std::mt19937_64 rng(6);
    const narx::NarxModel m = small_model(rng);
    const double u_star = 0.5;
    double y_star = 0.0;
    for (int i = 0; i < 2000; ++i) y_star = narx::forward(m, Eigen::Vector4d(y_star, y_star, u_star, u_star));
    ASSERT_EQ(y_star, narx::forward(m, Eigen::Vector4d(y_star, y_star, u_star, u_star)));
    const NarxPredictor p(m);
    const narx::History h{{y_star, y_star}, {u_star}};
    MpcConfig cfg;
    const std::vector<double> r(7, y_star);
    const ControlSolution s = solve({p, h, r, u_star, cfg}, Eigen::VectorXd::Constant(2, u_star));
    EXPECT_EQ(s.u_sequence, Eigen::VectorXd::Constant(2, u_star));
}

TEST(Solve, LinearPredictorMatchesNormalEquations) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    for (int i = 0; i < 50; ++i) {
        const Eigen::Vector2d a(0.4 * d(rng), 0.3 * d(rng)), b(1.0 + 0.5 * d(rng), 0.5 * d(rng));
        const double c = d(rng);
        const LinearArxPredictor p(kSpec, a, b, c);
        const narx::History h = random_history(rng);
        MpcConfig cfg = wide_config(6, 1 + i % 6, 0.01 + 0.5 * (1 + d(rng)));
        cfg.n1 = 1 + i % 3;
        std::vector<double> r;
        for (int j = cfg.n1; j <= cfg.n2; ++j) r.push_back(2 + d(rng));
        const double u_prev = 1 + d(rng);

        const Eigen::VectorXd expected =
            oracles::arx2_mpc_minimizer(a, b, c, h.y, h.u, r, cfg.n1, cfg.n2, cfg.nu, cfg.rho, u_prev);

        const ControlSolution s = solve({p, h, r, u_prev, cfg});
        EXPECT_LE((s.u_sequence - expected).cwiseAbs().maxCoeff(), 1e-8) << "instance " << i;
    }
}

TEST(Solve, OneStepHorizonLeastSquares) {
    // nu = n2 = 1: minimize (r - y0 - b0 u)^2 + rho (u - u_prev)^2.
    const LinearArxPredictor p = stable_arx();
    const narx::History h{{1.0, 3.0}, {0.4}};
    const MpcConfig cfg = wide_config(1, 1, 0.2);
    const std::vector<double> r{2.5};
    const double y0 = 0.5 * 3.0 + 0.2 * 1.0 + 0.1 * 0.4 + 0.2;
    const double u = (0.3 * (2.5 - y0) + 0.2 * 0.9) / (0.3 * 0.3 + 0.2);
    EXPECT_NEAR(solve({p, h, r, 0.9, cfg}).u_sequence[0], u, 1e-10);
}

TEST(Solve, ClampsToUpperBound) {
    const LinearArxPredictor p = stable_arx();
    const narx::History h{{2, 2}, {1}};
    MpcConfig cfg;
    cfg.nu = 1;
    cfg.n2 = 3;
    cfg.u_max = 1.5;
    const std::vector<double> r(3, 10.0);
    const Problem prob{p, h, r, 1.0, cfg};
    double best_u = cfg.u_min, best_j = cost(prob, Eigen::VectorXd::Constant(1, best_u));
    for (int i = 1; i <= 150000; ++i) {
        const double u = cfg.u_min + (cfg.u_max - cfg.u_min) * i / 150000.0;
        const double j = cost(prob, Eigen::VectorXd::Constant(1, u));
        if (j < best_j) best_j = j, best_u = u;
    }
    ASSERT_EQ(best_u, cfg.u_max);
    const ControlSolution s = solve(prob);
    EXPECT_EQ(s.u_sequence[0], cfg.u_max);
    EXPECT_NEAR(s.j_value, best_j, 1e-12 * best_j);
}

TEST(Solve, BoxFeasibleAndMonotoneTrace) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> d(0.0, 3.0);
    for (int i = 0; i < 100; ++i) {
        const NarxPredictor p(small_model(rng, 2.0));
        const narx::History h = random_history(rng);
        MpcConfig cfg;
        cfg.u_min = 0.2;
        cfg.u_max = 1.2;
        std::vector<double> r(7);
        for (auto& v : r) v = d(rng) - 1.0;
        const ControlSolution s = solve({p, h, r, d(rng) / 2, cfg});
        for (Eigen::Index j = 0; j < s.u_sequence.size(); ++j) {
            EXPECT_GE(s.u_sequence[j], cfg.u_min);
            EXPECT_LE(s.u_sequence[j], cfg.u_max);
        }
        ASSERT_FALSE(s.trace.empty());
        for (std::size_t t = 1; t < s.trace.size(); ++t) EXPECT_LE(s.trace[t].j_value, s.trace[t - 1].j_value);
        EXPECT_EQ(s.trace.back().j_value, s.j_value);
        EXPECT_GE(s.j_value, 0.0);
    }
}

TEST(Solve, LargerMovePenaltyNeverIncreasesMoves) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    for (int i = 0; i < 20; ++i) {
        const LinearArxPredictor p(kSpec, Eigen::Vector2d(0.3 * d(rng), 0.2 * d(rng)),
                                   Eigen::Vector2d(1 + 0.5 * d(rng), 0.3 * d(rng)), d(rng));
        const narx::History h = random_history(rng);
        std::vector<double> r(7);
        for (auto& v : r) v = 2 + d(rng);
        double previous = std::numeric_limits<double>::infinity();
        for (double rho : {0.0, 0.01, 0.05, 0.2, 1.0, 5.0, 50.0}) {
            MpcConfig cfg;
            cfg.rho = rho;
            cfg.nu = 3;
            cfg.tol = 1e-12;
            cfg.max_lm_iterations = 200;
            const double u_prev = 1.0;
            const ControlSolution s = solve({p, h, r, u_prev, cfg});
            Eigen::VectorXd du(3);
            du << s.u_sequence[0] - u_prev, s.u_sequence[1] - s.u_sequence[0], s.u_sequence[2] - s.u_sequence[1];
            EXPECT_LE(du.norm(), previous + 1e-7) << "instance " << i << " rho " << rho;
            previous = du.norm();
        }
    }
}

TEST(Solve, WarmAndColdStartsAgree) {
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> d(0.0, 2.0);
    for (int i = 0; i < 100; ++i) {
        const NarxPredictor p(small_model(rng, 0.3));
        const narx::History h = random_history(rng);
        MpcConfig cfg;
        cfg.tol = 1e-10;
        // Unreachable references leave large residuals, where Gauss-Newton
        // converges only linearly.
        cfg.max_lm_iterations = 5000;
        std::vector<double> r(7);
        for (auto& v : r) v = d(rng);
        const double u_prev = d(rng);
        const Problem prob{p, h, r, u_prev, cfg};
        const ControlSolution cold = solve(prob);
        const ControlSolution warm = solve(prob, oracles::random_vector(rng, cfg.nu, 0.0, 4.0));
        EXPECT_NEAR(warm.j_value, cold.j_value, 1e-8 * (1 + cold.j_value)) << "instance " << i;
    }
}

TEST(Solve, RejectsBadArguments) {
    const LinearArxPredictor p = stable_arx();
    const narx::History h{{2, 2}, {1}};
    MpcConfig cfg;
    const std::vector<double> short_r(3, 2.0);
    EXPECT_THROW(solve({p, h, short_r, 1.0, cfg}), DimensionError);
    const std::vector<double> r(7, 2.0);
    EXPECT_THROW(solve({p, h, r, 1.0, cfg}, Eigen::VectorXd::Ones(5)), DimensionError);
    const narx::History thin{{2}, {1}};
    EXPECT_THROW(solve({p, thin, r, 1.0, cfg}), HistoryError);
}

TEST(MpcConfigTest, Validation) {
    MpcConfig cfg;
    EXPECT_NO_THROW(cfg.validate(kSpec));
    cfg.n1 = 8;
    EXPECT_THROW(cfg.validate(kSpec), DomainError);
    cfg = {};
    cfg.nu = 8;
    EXPECT_THROW(cfg.validate(kSpec), DomainError);
    cfg = {};
    cfg.nu = 7;
    EXPECT_THROW(cfg.validate({2, 2, 2}), DomainError);
    cfg = {};
    cfg.u_min = 4.0;
    EXPECT_THROW(cfg.validate(kSpec), DomainError);
    cfg = {};
    cfg.rho = -1.0;
    EXPECT_THROW(cfg.validate(kSpec), DomainError);
    cfg = {};
    cfg.lambda_down = 1.0;
    EXPECT_THROW(cfg.validate(kSpec), DomainError);
}

TEST(ControllerTest, HoldsInputAtSteadyStateWithExactModel) {
    auto p = std::make_shared<const LinearArxPredictor>(stable_arx());
    Controller ctl(p, MpcConfig{}, 1.0);
    std::vector<double> y{2.0, 2.0}, u{1.0, 1.0};
    const std::vector<double> r(7, 2.0);
    for (int k = 0; k < 50; ++k) {
        const double applied = ctl.step(y.back(), r);
        EXPECT_EQ(applied, 1.0) << "step " << k;
        u.push_back(applied);
        y.push_back(0.5 * y[y.size() - 1] + 0.2 * y[y.size() - 2] + 0.3 * u[u.size() - 1] + 0.1 * u[u.size() - 2] + 0.2);
    }
    EXPECT_LE(ctl.history().y.size(), 4u);
}

TEST(ControllerTest, SetpointStepUpRaisesFeed) {
    // Plant oracle: more concentrated feed raises the steady concentration.
    ASSERT_GT(oracles::steady_concentration(0.11), oracles::steady_concentration(0.1));

    const auto u = training::generate_excitation(training::ExcitationKind::Aprbs, 800, 3, {0.0, 0.3});
    const training::Dataset data = training::sample_plant(u, 0.2, 0.01, {}, plant::steady_state(0.1, {}));
    training::TrainConfig tc;
    tc.max_iterations = 60;
    const narx::NarxModel m = training::train_lm(training::initial_model(kSpec, 7, data, 1), data, tc).model;

    Controller ctl(std::make_shared<const NarxPredictor>(m), MpcConfig{}, 0.1);
    const std::vector<double> r(7, 13.0);
    const double applied = ctl.step(oracles::steady_concentration(0.1), r);
    EXPECT_GT(applied - 0.1, 0.0);
    ASSERT_TRUE(ctl.last_solution().has_value());
    EXPECT_EQ(ctl.last_input(), applied);
}

TEST(ControllerTest, RejectsBadInputs) {
    auto p = std::make_shared<const LinearArxPredictor>(stable_arx());
    EXPECT_THROW(Controller(p, MpcConfig{}, 5.0), DomainError);
    EXPECT_THROW(Controller(nullptr, MpcConfig{}, 1.0), DomainError);
    Controller ctl(p, MpcConfig{}, 1.0);
    const std::vector<double> r(7, 2.0);
    EXPECT_THROW(ctl.step(std::nan(""), r), DomainError);
}

TEST(TraceCsv, RowsCarryStepIndex) {
    const std::vector<TraceRow> rows{{0, 2.5, 0.01, 1.0}, {1, 1.25, 0.001, 0.5}};
    EXPECT_EQ(trace_to_csv_rows(3, rows), "3,0,2.5,0.01,1\n3,1,1.25,0.001,0.5\n");
}
