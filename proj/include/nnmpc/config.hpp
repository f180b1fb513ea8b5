#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nnmpc/mpc.hpp"
#include "nnmpc/narx.hpp"
#include "nnmpc/plant.hpp"
#include "nnmpc/training.hpp"

namespace nnmpc::config {

inline constexpr int kSchemaVersion = 1;

struct SamplingConfig {
    double ts = 0.2;
    double substep = 0.01;
    double train_fraction = 0.7;
};

struct ExcitationConfig {
    training::ExcitationKind kind = training::ExcitationKind::Aprbs;
    std::size_t samples = 3000;
    training::Bounds bounds{0.0, 0.3};
    int min_hold = 5;
    int max_hold = 20;
};

struct NarxConfig {
    narx::RegressorSpec spec;
    int hidden_width = 7;
};

/// Setpoint `level` from sample `start` until the next step.
struct ReferenceStep {
    std::size_t start = 0;
    double level = 0.0;
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    plant::PlantParams plant;
    /// The plant starts at the steady state of this feed flow.
    double initial_flow = 0.1;
    SamplingConfig sampling;
    ExcitationConfig excitation;
    NarxConfig narx;
    training::TrainConfig train;
    mpc::MpcConfig mpc;
    std::vector<ReferenceStep> reference;
    /// Closed-loop length in samples.
    std::size_t duration = 250;
    bool solver_trace = false;

    /// Throws ConfigError naming the offending key path.
    void validate() const;
};

ExperimentConfig default_config();

/// Strict parse: unknown keys and wrongly typed values are errors.
ExperimentConfig parse_config(std::string_view toml_text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical TOML text containing every setting.
std::string to_toml(const ExperimentConfig& cfg);

/// 16 hex digits of FNV-1a 64 over to_toml(cfg).
std::string config_hash(const ExperimentConfig& cfg);

double reference_at(const std::vector<ReferenceStep>& profile, std::size_t k);

/// Lowest and highest steady-state concentration over feed flows in [u_min, u_max].
std::pair<double, double> reachable_range(const plant::PlantParams& params, double u_min, double u_max);

}  // namespace nnmpc::config
