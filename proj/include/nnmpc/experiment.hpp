#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nnmpc/config.hpp"
#include "nnmpc/mpc.hpp"
#include "nnmpc/narx.hpp"
#include "nnmpc/plant.hpp"
#include "nnmpc/training.hpp"

namespace nnmpc::experiment {

struct TrajectoryRecord {
    std::size_t k = 0;
    double t = 0.0;
    double r = 0.0;
    double y = 0.0;
    /// One-step model prediction of y(k) made at k-1 (y itself at k = 0).
    double y_hat = 0.0;
    double u = 0.0;
    double j = 0.0;
    int lm_iters = 0;
};

struct TrajectoryLog {
    std::vector<TrajectoryRecord> records;
    std::string config_hash;
    std::string model_ref;
    /// Set when the run stopped early; holds the step index and cause.
    std::optional<std::string> failure;
    /// Concatenated solver trace rows (without header); empty unless requested.
    std::string solver_trace;
    /// Every logged solve had non-increasing J over its accepted iterates.
    bool cost_monotone = true;
};

struct LoopSetup {
    plant::PlantParams plant;
    plant::PlantState initial_state;
    double initial_flow = 0.1;
    double ts = 0.2;
    double substep = 0.01;
    std::vector<config::ReferenceStep> reference;
    std::size_t duration = 0;
    bool record_trace = false;
};

LoopSetup loop_setup(const config::ExperimentConfig& cfg);

/// Per sample: measure cb, run one controller step, hold u over ts on the plant.
TrajectoryLog closed_loop(const LoopSetup& setup, const narx::NarxModel& model, const mpc::MpcConfig& mpc_cfg);

/// Same plant and reference with the input frozen at the initial flow.
TrajectoryLog frozen_input(const LoopSetup& setup, const narx::NarxModel& model);

/// Header `k,t,r,y,y_hat,u,j,lm_iters` after hash and model comment lines.
std::string trajectory_to_csv(const TrajectoryLog& log);

struct Artifacts {
    std::filesystem::path dataset;
    std::filesystem::path model;
    std::filesystem::path loss;
    std::filesystem::path validation;
    std::filesystem::path correlations;
    std::filesystem::path trajectory;
    std::filesystem::path baseline;
    std::filesystem::path solver_trace;
    std::filesystem::path config;
    std::filesystem::path gnuplot;

    explicit Artifacts(const std::filesystem::path& dir);
};

training::Dataset generate_dataset(const config::ExperimentConfig& cfg);

training::TrainResult train_model(const config::ExperimentConfig& cfg, const training::Dataset& data);

struct PipelineResult {
    training::Dataset data;
    training::TrainResult training;
    training::ValidationReport validation;
    TrajectoryLog trajectory;
    TrajectoryLog baseline;
};

/// Excitation, sampling, training, validation, closed loop; writes every
/// artifact into out_dir. A failing stage throws StageError after the files of
/// the completed stages have been written.
PipelineResult run_pipeline(const config::ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                            bool gnuplot_script = false);

/// Writes trajectory.csv, baseline.csv and optionally solver_trace.csv.
std::pair<TrajectoryLog, TrajectoryLog> run_control(const config::ExperimentConfig& cfg,
                                                    const narx::NarxModel& model,
                                                    const std::filesystem::path& out_dir,
                                                    const std::string& model_ref);

void write_validation(const training::ValidationReport& report, const Artifacts& files,
                      const std::string& hash);

std::string gnuplot_script();

}  // namespace nnmpc::experiment
