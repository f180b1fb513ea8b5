#include <gtest/gtest.h>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "nnmpc/config.hpp"
#include "nnmpc/error.hpp"
#include "nnmpc/experiment.hpp"
#include "nnmpc/io.hpp"
#include "oracles.hpp"

using namespace nnmpc;
namespace fs = std::filesystem;

namespace {

constexpr double kSteadyCb = 12.148653535975756;

fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("nnmpc_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) { return io::read_file(p); }

/// Smaller than the defaults so end-to-end runs stay quick.
config::ExperimentConfig quick_config() {
    config::ExperimentConfig cfg = config::default_config();
    cfg.excitation.samples = 800;
    cfg.train.max_iterations = 40;
    cfg.duration = 60;
    cfg.reference = {{0, 12.147}, {20, 13.0}};
    return cfg;
}

struct RunResult {
    int status = -1;
    std::string out;
    std::string err;
};

RunResult run_cli(const std::string& args, const fs::path& dir) {
    const fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
    const std::string cmd = std::string(NNMPC_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int raw = std::system(cmd.c_str());
    RunResult r;
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = fs::exists(out) ? slurp(out) : "";
    r.err = fs::exists(err) ? slurp(err) : "";
    return r;
}

/// The default model, trained once for the closed-loop tests.
class DefaultModel : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        cfg_ = new config::ExperimentConfig(config::default_config());
        const training::Dataset data = experiment::generate_dataset(*cfg_);
        model_ = new narx::NarxModel(experiment::train_model(*cfg_, data).model);
    }
    static void TearDownTestSuite() {
        delete model_;
        delete cfg_;
    }

    static experiment::TrajectoryLog run(std::vector<config::ReferenceStep> reference, std::size_t duration) {
        config::ExperimentConfig cfg = *cfg_;
        cfg.reference = std::move(reference);
        cfg.duration = duration;
        return experiment::closed_loop(experiment::loop_setup(cfg), *model_, cfg.mpc);
    }

    static config::ExperimentConfig* cfg_;
    static narx::NarxModel* model_;
};

config::ExperimentConfig* DefaultModel::cfg_ = nullptr;
narx::NarxModel* DefaultModel::model_ = nullptr;

}  // namespace

TEST_F(DefaultModel, StationaryReferenceHoldsInput) {
    const auto log = run({{0, kSteadyCb}}, 200);
    ASSERT_FALSE(log.failure.has_value());
    ASSERT_EQ(log.records.size(), 200u);
    for (const auto& r : log.records) {
        EXPECT_NEAR(r.u, 0.1, 1e-3);
        EXPECT_LE(std::abs(r.y - r.r), 0.005 * r.r);
    }
    for (std::size_t k = 100; k < 200; ++k) EXPECT_NEAR(log.records[k].u, log.records.back().u, 1e-6);
    EXPECT_TRUE(log.cost_monotone);
}

TEST_F(DefaultModel, SetpointStepSettlesAndBeatsFrozenInput) {
    const std::vector<config::ReferenceStep> ref{{0, 12.147}, {50, 13.0}};
    const auto log = run(ref, 150);
    ASSERT_FALSE(log.failure.has_value());
    std::size_t settled = log.records.size();
    for (std::size_t k = log.records.size(); k-- > 50;) {
        if (std::abs(log.records[k].y - 13.0) > 0.02 * 13.0) break;
        settled = k;
    }
    EXPECT_LE(settled, 90u);

    config::ExperimentConfig cfg = *cfg_;
    cfg.reference = ref;
    cfg.duration = 150;
    const auto frozen = experiment::frozen_input(experiment::loop_setup(cfg), *model_);
    double err_ctl = 0.0, err_frozen = 0.0;
    bool frozen_reaches = false;
    for (std::size_t k = 50; k < 150; ++k) {
        err_ctl += std::pow(log.records[k].y - 13.0, 2);
        err_frozen += std::pow(frozen.records[k].y - 13.0, 2);
        frozen_reaches |= std::abs(frozen.records[k].y - 13.0) <= 0.02 * 13.0;
        EXPECT_EQ(frozen.records[k].u, 0.1);
    }
    EXPECT_LT(err_ctl, err_frozen);
    EXPECT_FALSE(frozen_reaches);
}

TEST_F(DefaultModel, TrajectoryInvariants) {
    const auto log = run(cfg_->reference, 120);
    ASSERT_EQ(log.records.size(), 120u);
    for (std::size_t k = 0; k < log.records.size(); ++k) {
        const auto& r = log.records[k];
        EXPECT_EQ(r.k, k);
        if (k) EXPECT_GT(r.t, log.records[k - 1].t);
        EXPECT_GE(r.u, cfg_->mpc.u_min);
        EXPECT_LE(r.u, cfg_->mpc.u_max);
        EXPECT_TRUE(std::isfinite(r.y) && std::isfinite(r.y_hat) && std::isfinite(r.j));
        EXPECT_GE(r.j, 0.0);
        EXPECT_EQ(r.r, config::reference_at(cfg_->reference, k));
    }
    EXPECT_TRUE(log.cost_monotone);
    const std::string csv = experiment::trajectory_to_csv(log);
    EXPECT_NE(csv.find("k,t,r,y,y_hat,u,j,lm_iters\n"), std::string::npos);
}

TEST(LoopSetup, StartsAtSteadyStateOfInitialFlow) {
    const auto setup = experiment::loop_setup(config::default_config());
    EXPECT_EQ(setup.initial_state.h, 1.0);
    EXPECT_NEAR(setup.initial_state.cb, oracles::steady_concentration(0.1), 1e-9);
}

TEST(Pipeline, DeterministicAndHashTagged) {
    const config::ExperimentConfig cfg = quick_config();
    const fs::path a = scratch_dir("pipe_a"), b = scratch_dir("pipe_b");
    experiment::run_pipeline(cfg, a, true);
    experiment::run_pipeline(cfg, b, true);
    const std::string hash = config::config_hash(cfg);
    std::size_t files = 0;
    for (const auto& entry : fs::directory_iterator(a)) {
        ++files;
        const std::string name = entry.path().filename().string();
        const std::string text = slurp(entry.path());
        EXPECT_EQ(text, slurp(b / name)) << name;
        if (name != "plot.gp") EXPECT_NE(text.find(hash), std::string::npos) << name;
    }
    for (const char* name : {"dataset.csv", "model.json", "loss.csv", "validation.csv", "correlations.csv",
                             "trajectory.csv", "baseline.csv", "config.toml", "plot.gp"}) {
        EXPECT_TRUE(fs::exists(a / name)) << name;
    }
    EXPECT_EQ(files, 9u);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Pipeline, HashChangesWithConfig) {
    config::ExperimentConfig cfg = quick_config();
    const fs::path dir = scratch_dir("pipe_hash");
    cfg.excitation.samples = 300;
    cfg.duration = 10;
    experiment::run_pipeline(cfg, dir);
    const std::string first = slurp(dir / "trajectory.csv");
    cfg.seed = 2;
    experiment::run_pipeline(cfg, dir);
    const std::string second = slurp(dir / "trajectory.csv");
    EXPECT_NE(first.substr(0, first.find('\n')), second.substr(0, second.find('\n')));
    fs::remove_all(dir);
}

TEST(Pipeline, StageFailureNamesStage) {
    const fs::path dir = scratch_dir("pipe_fail");
    // A directory where dataset.csv should go makes the first write fail.
    fs::create_directories(dir / "dataset.csv" / "blocker");
    try {
        experiment::run_pipeline(quick_config(), dir);
        FAIL() << "expected a stage error";
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "gen-data");
        EXPECT_EQ(std::string(e.what()).rfind("gen-data: ", 0), 0u);
    }
    EXPECT_TRUE(fs::exists(dir / "config.toml"));
    fs::remove_all(dir);
}

TEST(Cli, PipelineThenControlIsReproducible) {
    const fs::path dir = scratch_dir("cli_pipe");
    io::write_file_atomic(dir / "cfg.toml", config::to_toml(quick_config()));
    const std::string common = "--config " + (dir / "cfg.toml").string() + " --out-dir " + (dir / "out").string();
    const RunResult pipe = run_cli("pipeline " + common, dir);
    ASSERT_EQ(pipe.status, 0) << pipe.err;
    EXPECT_NE(pipe.out.find("config_hash=" + config::config_hash(quick_config())), std::string::npos);
    for (const char* name : {"dataset.csv", "model.json", "validation.csv", "trajectory.csv"}) {
        EXPECT_TRUE(fs::exists(dir / "out" / name)) << name;
    }

    const std::string model = " --model " + (dir / "out" / "model.json").string();
    ASSERT_EQ(run_cli("control " + common + model, dir).status, 0);
    const std::string first = slurp(dir / "out" / "trajectory.csv");
    ASSERT_EQ(run_cli("control " + common + model, dir).status, 0);
    EXPECT_EQ(slurp(dir / "out" / "trajectory.csv"), first);
    EXPECT_NE(first.find("# model=model.json"), std::string::npos);
    fs::remove_all(dir);
}

TEST(Cli, StagewiseSubcommands) {
    const fs::path dir = scratch_dir("cli_stages");
    io::write_file_atomic(dir / "cfg.toml", config::to_toml(quick_config()));
    const std::string common = "--config " + (dir / "cfg.toml").string() + " --out-dir " + (dir / "out").string();
    EXPECT_EQ(run_cli("gen-data " + common, dir).status, 0);
    EXPECT_EQ(run_cli("train " + common, dir).status, 0);
    const RunResult v = run_cli("validate " + common, dir);
    EXPECT_EQ(v.status, 0) << v.err;
    EXPECT_NE(v.out.find("rmse_test="), std::string::npos);
    EXPECT_EQ(run_cli("control " + common + " --gnuplot-script", dir).status, 0);
    EXPECT_TRUE(fs::exists(dir / "out" / "plot.gp"));
    EXPECT_TRUE(fs::exists(dir / "out" / "loss.csv"));
    fs::remove_all(dir);
}

TEST(Cli, ValidateZeroWeightModelReportsRmse) {
    const fs::path dir = scratch_dir("cli_zero");
    config::ExperimentConfig cfg = quick_config();
    const training::Dataset data = experiment::generate_dataset(cfg);
    io::write_file_atomic(dir / "dataset.csv", training::dataset_to_csv(data, config::config_hash(cfg)));
    io::write_file_atomic(dir / "zero.json", narx::serialize(narx::NarxModel::zeros({}, 7)));
    io::write_file_atomic(dir / "cfg.toml", config::to_toml(cfg));
    const RunResult r = run_cli("validate --config " + (dir / "cfg.toml").string() + " --out-dir " + dir.string() +
                                    " --model " + (dir / "zero.json").string(),
                                dir);
    ASSERT_EQ(r.status, 0) << r.err;
    // The zero model predicts 0, so its rmse is the root mean square of the targets.
    double ss = 0.0;
    std::size_t n = 0;
    for (std::size_t k = std::max<std::size_t>(data.split, 2); k < data.size(); ++k, ++n) ss += data.y[k] * data.y[k];
    const auto pos = r.out.find("rmse_test=") + 10;
    const double reported = std::stod(r.out.substr(pos, r.out.find('\n', pos) - pos));
    EXPECT_NEAR(reported, std::sqrt(ss / static_cast<double>(n)), 1e-12);
    EXPECT_NE(r.out.find("degenerate=false"), std::string::npos);
    fs::remove_all(dir);
}

TEST(Cli, ErrorExitCodes) {
    const fs::path dir = scratch_dir("cli_errors");
    io::write_file_atomic(dir / "bad.toml", "schema_version = 1\n[mpc]\nrho = \"high\"\n");
    const RunResult bad = run_cli("gen-data --config " + (dir / "bad.toml").string(), dir);
    EXPECT_EQ(bad.status, 2);
    EXPECT_NE(bad.err.find("key=mpc.rho"), std::string::npos) << bad.err;
    EXPECT_EQ(std::count(bad.err.begin(), bad.err.end(), '\n'), 1);

    EXPECT_EQ(run_cli("gen-data --config " + (dir / "missing.toml").string(), dir).status, 3);
    EXPECT_EQ(run_cli("control --out-dir " + dir.string() + " --model " + (dir / "none.json").string(), dir).status, 3);
    EXPECT_NE(run_cli("no-such-command", dir).status, 0);
    fs::remove_all(dir);
}

TEST(Cli, HelpAndDefaults) {
    const fs::path dir = scratch_dir("cli_help");
    const RunResult help = run_cli("pipeline --help", dir);
    EXPECT_EQ(help.status, 0);
    for (const char* flag : {"--config", "--seed", "--out-dir", "--dump-defaults", "--gnuplot-script"}) {
        EXPECT_NE(help.out.find(flag), std::string::npos) << flag;
    }
    const RunResult dump = run_cli("pipeline --dump-defaults", dir);
    EXPECT_EQ(dump.status, 0);
    EXPECT_EQ(dump.out, config::to_toml(config::default_config()));
    fs::remove_all(dir);
}
