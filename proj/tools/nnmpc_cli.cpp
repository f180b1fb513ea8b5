// Command-line front end: gen-data, train, validate, control, pipeline.

#include <CLI11.hpp>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "nnmpc/config.hpp"
#include "nnmpc/error.hpp"
#include "nnmpc/experiment.hpp"
#include "nnmpc/io.hpp"

namespace fs = std::filesystem;
using namespace nnmpc;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitMissingFile = 3;

struct Options {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir = "out";
    std::string model_path;
    std::string data_path;
    bool dump_defaults = false;
    bool gnuplot = false;
};

std::string quote(std::string_view text) {
    std::string out = "\"";
    for (char c : text) {
        if (c == '"' || c == '\\') out += '\\';
        out += (c == '\n') ? ' ' : c;
    }
    return out + "\"";
}

config::ExperimentConfig resolve_config(const Options& opt) {
    config::ExperimentConfig cfg =
        opt.config_path.empty() ? config::default_config() : config::load_config(opt.config_path);
    if (opt.seed) {
        cfg.seed = *opt.seed;
        cfg.train.seed = *opt.seed;
    }
    cfg.validate();
    return cfg;
}

fs::path or_default(const std::string& given, const fs::path& fallback) {
    return given.empty() ? fallback : fs::path(given);
}

training::Dataset load_dataset(const config::ExperimentConfig& cfg, const fs::path& path) {
    if (!fs::exists(path)) throw FileError("dataset file not found: " + path.string());
    training::Dataset data = training::dataset_from_csv(io::read_file(path), cfg.sampling.train_fraction);
    if (std::abs(data.ts - cfg.sampling.ts) > 1e-9 * cfg.sampling.ts) {
        throw ConfigError("dataset sampling period " + io::format_double(data.ts) + " differs from config",
                          "sampling.ts");
    }
    return data;
}

narx::NarxModel load_model(const fs::path& path) {
    if (!fs::exists(path)) throw FileError("model file not found: " + path.string());
    return narx::deserialize(io::read_file(path)).model;
}

void print_validation(const training::ValidationReport& v) {
    std::cout << "rmse_train=" << io::format_double(v.rmse_train) << "\n"
              << "rmse_test=" << io::format_double(v.rmse_test) << "\n"
              << "output_range=" << io::format_double(v.output_range) << "\n"
              << "confidence_band=" << io::format_double(v.confidence_band) << "\n"
              << "autocorr_inside_fraction=" << io::format_double(v.autocorr_inside_fraction) << "\n"
              << "crosscorr_inside_fraction=" << io::format_double(v.cross_corr_inside_fraction) << "\n"
              << "degenerate=" << (v.degenerate ? "true" : "false") << "\n";
}

int cmd_gen_data(const Options& opt) {
    const auto cfg = resolve_config(opt);
    fs::create_directories(opt.out_dir);
    const experiment::Artifacts files(opt.out_dir);
    const training::Dataset data = experiment::generate_dataset(cfg);
    io::write_file_atomic(files.dataset, training::dataset_to_csv(data, config::config_hash(cfg)));
    std::cout << "dataset=" << files.dataset.string() << "\nsamples=" << data.size() << "\n";
    return 0;
}

int cmd_train(const Options& opt) {
    const auto cfg = resolve_config(opt);
    fs::create_directories(opt.out_dir);
    const experiment::Artifacts files(opt.out_dir);
    const training::Dataset data = load_dataset(cfg, or_default(opt.data_path, files.dataset));
    const training::TrainResult result = experiment::train_model(cfg, data);
    const std::string hash = config::config_hash(cfg);
    const fs::path model_path = or_default(opt.model_path, files.model);
    io::write_file_atomic(model_path, narx::serialize(result.model, hash));
    io::write_file_atomic(files.loss, training::loss_curve_to_csv(result.loss_curve, hash));
    std::cout << "model=" << model_path.string() << "\n"
              << "final_loss=" << io::format_double(result.loss_curve.back().loss) << "\n"
              << "accepted_steps=" << result.loss_curve.size() - 1 << "\n"
              << "stop_reason=" << training::to_string(result.stop_reason) << "\n";
    return 0;
}

int cmd_validate(const Options& opt) {
    const auto cfg = resolve_config(opt);
    fs::create_directories(opt.out_dir);
    const experiment::Artifacts files(opt.out_dir);
    const narx::NarxModel model = load_model(or_default(opt.model_path, files.model));
    const training::Dataset data = load_dataset(cfg, or_default(opt.data_path, files.dataset));
    const training::ValidationReport report = training::validate(model, data);
    experiment::write_validation(report, files, config::config_hash(cfg));
    print_validation(report);
    return 0;
}

int cmd_control(const Options& opt) {
    const auto cfg = resolve_config(opt);
    fs::create_directories(opt.out_dir);
    const experiment::Artifacts files(opt.out_dir);
    const fs::path model_path = or_default(opt.model_path, files.model);
    const narx::NarxModel model = load_model(model_path);
    const auto [trajectory, baseline] =
        experiment::run_control(cfg, model, opt.out_dir, model_path.filename().string());
    if (opt.gnuplot) io::write_file_atomic(files.gnuplot, experiment::gnuplot_script());
    std::cout << "trajectory=" << files.trajectory.string() << "\nsteps=" << trajectory.records.size() << "\n";
    return 0;
}

int cmd_pipeline(const Options& opt) {
    if (opt.dump_defaults) {
        std::cout << config::to_toml(config::default_config());
        return 0;
    }
    const auto cfg = resolve_config(opt);
    const auto result = experiment::run_pipeline(cfg, opt.out_dir, opt.gnuplot);
    std::cout << "config_hash=" << config::config_hash(cfg) << "\n"
              << "out_dir=" << opt.out_dir << "\n"
              << "final_loss=" << io::format_double(result.training.loss_curve.back().loss) << "\n";
    print_validation(result.validation);
    std::cout << "closed_loop_steps=" << result.trajectory.records.size() << "\n";
    return 0;
}

void add_common(CLI::App* cmd, Options& opt) {
    cmd->add_option("--config", opt.config_path, "Experiment config file (TOML); defaults when omitted");
    cmd->add_option("--seed", opt.seed, "Override the experiment seed");
    cmd->add_option("--out-dir", opt.out_dir, "Directory for output artifacts")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Neural-network model predictive control of a stirred tank reactor"};
    app.require_subcommand(1);
    Options opt;

    auto* gen = app.add_subcommand("gen-data", "Excite the simulated plant and write dataset.csv");
    add_common(gen, opt);

    auto* train = app.add_subcommand("train", "Train the NARX model with Levenberg-Marquardt");
    add_common(train, opt);
    train->add_option("--data", opt.data_path, "Dataset CSV (default <out-dir>/dataset.csv)");
    train->add_option("--model", opt.model_path, "Output model file (default <out-dir>/model.json)");

    auto* validate = app.add_subcommand("validate", "One-step prediction errors and correlation tests");
    add_common(validate, opt);
    validate->add_option("--model", opt.model_path, "Model file (default <out-dir>/model.json)");
    validate->add_option("--data", opt.data_path, "Dataset CSV (default <out-dir>/dataset.csv)");

    auto* control = app.add_subcommand("control", "Closed-loop run against the simulated plant");
    add_common(control, opt);
    control->add_option("--model", opt.model_path, "Model file (default <out-dir>/model.json)");
    control->add_flag("--gnuplot-script", opt.gnuplot, "Also write plot.gp for the trajectory files");

    auto* pipeline = app.add_subcommand("pipeline", "Data, training, validation and closed loop in one run");
    add_common(pipeline, opt);
    pipeline->add_flag("--dump-defaults", opt.dump_defaults, "Print the default config and exit");
    pipeline->add_flag("--gnuplot-script", opt.gnuplot, "Also write plot.gp for the trajectory files");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(opt);
        if (train->parsed()) return cmd_train(opt);
        if (validate->parsed()) return cmd_validate(opt);
        if (control->parsed()) return cmd_control(opt);
        if (pipeline->parsed()) return cmd_pipeline(opt);
    } catch (const ConfigError& e) {
        std::cerr << "error kind=config key=" << e.key_path() << " message=" << quote(e.what()) << "\n";
        return kExitConfig;
    } catch (const FileError& e) {
        std::cerr << "error kind=file message=" << quote(e.what()) << "\n";
        return kExitMissingFile;
    } catch (const StageError& e) {
        std::cerr << "error kind=stage stage=" << e.stage() << " message=" << quote(e.what()) << "\n";
        return kExitFailure;
    } catch (const std::exception& e) {
        std::cerr << "error kind=runtime message=" << quote(e.what()) << "\n";
        return kExitFailure;
    }
    return kExitFailure;
}
