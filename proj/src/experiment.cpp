#include "nnmpc/experiment.hpp"

#include <algorithm>
#include <memory>

#include "nnmpc/error.hpp"
#include "nnmpc/io.hpp"

namespace nnmpc::experiment {

namespace fs = std::filesystem;

Artifacts::Artifacts(const fs::path& dir)
    : dataset(dir / "dataset.csv"),
      model(dir / "model.json"),
      loss(dir / "loss.csv"),
      validation(dir / "validation.csv"),
      correlations(dir / "correlations.csv"),
      trajectory(dir / "trajectory.csv"),
      baseline(dir / "baseline.csv"),
      solver_trace(dir / "solver_trace.csv"),
      config(dir / "config.toml"),
      gnuplot(dir / "plot.gp") {}

LoopSetup loop_setup(const config::ExperimentConfig& cfg) {
    LoopSetup setup;
    setup.plant = cfg.plant;
    setup.initial_flow = cfg.initial_flow;
    setup.initial_state = plant::steady_state(cfg.initial_flow, cfg.plant);
    setup.ts = cfg.sampling.ts;
    setup.substep = cfg.sampling.substep;
    setup.reference = cfg.reference;
    setup.duration = cfg.duration;
    setup.record_trace = cfg.solver_trace;
    return setup;
}

namespace {

// Running y/u record padded at startup the same way the controller seeds its history.
class SignalLog {
public:
    SignalLog(const narx::RegressorSpec& spec, double y0, double u0)
        : spec_(spec), y_(spec.required_outputs() - 1, y0), u_(spec.required_inputs() - 1, u0) {}

    void push_y(double y) { y_.push_back(y); }
    void push_u(double u) { u_.push_back(u); }

    /// One-step prediction of the next output once u(k) has been pushed.
    double predict_next(const narx::NarxModel& model) const {
        return narx::forward(model, narx::regressor(y_, u_, spec_));
    }

private:
    narx::RegressorSpec spec_;
    std::vector<double> y_;
    std::vector<double> u_;
};

bool non_increasing(const std::vector<mpc::TraceRow>& trace) {
    for (std::size_t i = 1; i < trace.size(); ++i) {
        if (trace[i].j_value > trace[i - 1].j_value) return false;
    }
    return true;
}

}  // namespace

TrajectoryLog closed_loop(const LoopSetup& setup, const narx::NarxModel& model, const mpc::MpcConfig& mpc_cfg) {
    TrajectoryLog log;
    mpc::Controller controller(std::make_shared<mpc::NarxPredictor>(model), mpc_cfg, setup.initial_flow);
    SignalLog signals(model.spec(), setup.initial_state.cb, setup.initial_flow);

    plant::PlantState x = setup.initial_state;
    double y_hat = x.cb;
    std::vector<double> window(static_cast<std::size_t>(mpc_cfg.n2 - mpc_cfg.n1 + 1));
    for (std::size_t k = 0; k < setup.duration; ++k) {
        const double y = x.cb;
        // Future set-point changes are not announced: the current level spans the horizon.
        std::fill(window.begin(), window.end(), config::reference_at(setup.reference, k));
        double u = 0.0;
        try {
            u = controller.step(y, window);
        } catch (const Error& e) {
            log.failure = "step " + std::to_string(k) + ": controller failed: " + e.what();
            break;
        }
        const mpc::ControlSolution& sol = *controller.last_solution();
        if (!non_increasing(sol.trace)) log.cost_monotone = false;
        if (setup.record_trace) log.solver_trace += mpc::trace_to_csv_rows(static_cast<int>(k), sol.trace);

        log.records.push_back({k, static_cast<double>(k) * setup.ts, config::reference_at(setup.reference, k), y,
                               y_hat, u, sol.j_value, sol.iterations});
        signals.push_y(y);
        signals.push_u(u);
        y_hat = signals.predict_next(model);
        try {
            x = plant::simulate(x, u, setup.ts, setup.substep, setup.plant);
        } catch (const Error& e) {
            log.failure = "step " + std::to_string(k) + ": plant integration failed: " + e.what();
            break;
        }
    }
    return log;
}

TrajectoryLog frozen_input(const LoopSetup& setup, const narx::NarxModel& model) {
    TrajectoryLog log;
    SignalLog signals(model.spec(), setup.initial_state.cb, setup.initial_flow);
    plant::PlantState x = setup.initial_state;
    double y_hat = x.cb;
    const double u = setup.initial_flow;
    for (std::size_t k = 0; k < setup.duration; ++k) {
        const double y = x.cb;
        log.records.push_back({k, static_cast<double>(k) * setup.ts, config::reference_at(setup.reference, k), y,
                               y_hat, u, 0.0, 0});
        signals.push_y(y);
        signals.push_u(u);
        y_hat = signals.predict_next(model);
        try {
            x = plant::simulate(x, u, setup.ts, setup.substep, setup.plant);
        } catch (const Error& e) {
            log.failure = "step " + std::to_string(k) + ": plant integration failed: " + e.what();
            break;
        }
    }
    return log;
}

std::string trajectory_to_csv(const TrajectoryLog& log) {
    std::string out = io::hash_comment(log.config_hash);
    out += "# model=" + log.model_ref + "\n";
    if (log.failure) out += "# failure=" + *log.failure + "\n";
    out += "k,t,r,y,y_hat,u,j,lm_iters\n";
    for (const auto& rec : log.records) {
        out += std::to_string(rec.k) + ',' + io::format_double(rec.t) + ',' + io::format_double(rec.r) + ',' +
               io::format_double(rec.y) + ',' + io::format_double(rec.y_hat) + ',' + io::format_double(rec.u) +
               ',' + io::format_double(rec.j) + ',' + std::to_string(rec.lm_iters) + '\n';
    }
    return out;
}

training::Dataset generate_dataset(const config::ExperimentConfig& cfg) {
    const auto& ex = cfg.excitation;
    const std::vector<double> u =
        training::generate_excitation(ex.kind, ex.samples, cfg.seed, ex.bounds, ex.min_hold, ex.max_hold);
    return training::sample_plant(u, cfg.sampling.ts, cfg.sampling.substep, cfg.plant,
                                  plant::steady_state(cfg.initial_flow, cfg.plant), cfg.sampling.train_fraction);
}

training::TrainResult train_model(const config::ExperimentConfig& cfg, const training::Dataset& data) {
    training::TrainConfig train = cfg.train;
    train.seed = cfg.seed;
    const narx::NarxModel init = training::initial_model(cfg.narx.spec, cfg.narx.hidden_width, data, train.seed);
    return training::train_lm(init, data, train);
}

void write_validation(const training::ValidationReport& report, const Artifacts& files, const std::string& hash) {
    io::write_file_atomic(files.validation, training::validation_to_csv(report, hash));
    io::write_file_atomic(files.correlations, training::correlations_to_csv(report, hash));
}

std::pair<TrajectoryLog, TrajectoryLog> run_control(const config::ExperimentConfig& cfg,
                                                    const narx::NarxModel& model, const fs::path& out_dir,
                                                    const std::string& model_ref) {
    const std::string hash = config::config_hash(cfg);
    const Artifacts files(out_dir);
    const LoopSetup setup = loop_setup(cfg);

    TrajectoryLog trajectory = closed_loop(setup, model, cfg.mpc);
    trajectory.config_hash = hash;
    trajectory.model_ref = model_ref;
    TrajectoryLog baseline = frozen_input(setup, model);
    baseline.config_hash = hash;
    baseline.model_ref = model_ref;

    io::write_file_atomic(files.trajectory, trajectory_to_csv(trajectory));
    io::write_file_atomic(files.baseline, trajectory_to_csv(baseline));
    if (cfg.solver_trace) {
        io::write_file_atomic(files.solver_trace,
                              io::hash_comment(hash) + std::string(mpc::kTraceHeader) + trajectory.solver_trace);
    }
    if (trajectory.failure) throw Error(*trajectory.failure);
    return {std::move(trajectory), std::move(baseline)};
}

namespace {

template <typename Fn>
auto stage(const char* name, Fn&& fn) {
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const Error& e) {
        throw StageError(name, e.what());
    }
}

}  // namespace

PipelineResult run_pipeline(const config::ExperimentConfig& cfg, const fs::path& out_dir, bool gnuplot) {
    cfg.validate();
    fs::create_directories(out_dir);
    const Artifacts files(out_dir);
    const std::string hash = config::config_hash(cfg);
    io::write_file_atomic(files.config, "# config_hash=" + hash + "\n" + config::to_toml(cfg));
    if (gnuplot) io::write_file_atomic(files.gnuplot, gnuplot_script());

    training::Dataset data = stage("gen-data", [&] {
        training::Dataset d = generate_dataset(cfg);
        d.validate();
        io::write_file_atomic(files.dataset, training::dataset_to_csv(d, hash));
        return d;
    });
    training::TrainResult trained = stage("train", [&] {
        training::TrainResult r = train_model(cfg, data);
        io::write_file_atomic(files.model, narx::serialize(r.model, hash));
        io::write_file_atomic(files.loss, training::loss_curve_to_csv(r.loss_curve, hash));
        return r;
    });
    training::ValidationReport report = stage("validate", [&] {
        training::ValidationReport v = training::validate(trained.model, data);
        write_validation(v, files, hash);
        return v;
    });
    auto [trajectory, baseline] = stage("control", [&] {
        return run_control(cfg, trained.model, out_dir, files.model.filename().string());
    });
    return {std::move(data), std::move(trained), std::move(report), std::move(trajectory), std::move(baseline)};
}

std::string gnuplot_script() {
    return R"(# Closed-loop response and control signal from trajectory.csv / baseline.csv.
set datafile separator ','
set datafile commentschars '#'
set key autotitle columnhead
set multiplot layout 2,1
set ylabel 'concentration'
plot 'trajectory.csv' using 2:3 with lines title 'reference', \
     'trajectory.csv' using 2:4 with lines title 'with controller', \
     'baseline.csv' using 2:4 with lines title 'without controller'
set ylabel 'feed flow w1'
set xlabel 't'
plot 'trajectory.csv' using 2:6 with steps title 'control signal'
unset multiplot
pause -1
)";
}

}  // namespace nnmpc::experiment
