#include "nnmpc/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>
#include <toml.hpp>

#include "nnmpc/error.hpp"
#include "nnmpc/io.hpp"

namespace nnmpc::config {

namespace {

std::string join(std::string_view table, std::string_view key) {
    return table.empty() ? std::string(key) : std::string(table) + "." + std::string(key);
}

class TableReader {
public:
    TableReader(const toml::table* table, std::string path) : table_(table), path_(std::move(path)) {}

    double number(std::string_view key, double fallback) {
        const toml::node* node = find(key);
        if (!node) return fallback;
        if (auto v = node->value_exact<double>()) return *v;
        if (auto v = node->value_exact<std::int64_t>()) return static_cast<double>(*v);
        throw ConfigError("expected a number", join(path_, key));
    }

    std::int64_t integer(std::string_view key, std::int64_t fallback) {
        const toml::node* node = find(key);
        if (!node) return fallback;
        if (auto v = node->value_exact<std::int64_t>()) return *v;
        throw ConfigError("expected an integer", join(path_, key));
    }

    bool boolean(std::string_view key, bool fallback) {
        const toml::node* node = find(key);
        if (!node) return fallback;
        if (auto v = node->value_exact<bool>()) return *v;
        throw ConfigError("expected a boolean", join(path_, key));
    }

    std::string string(std::string_view key, std::string fallback) {
        const toml::node* node = find(key);
        if (!node) return fallback;
        if (auto v = node->value_exact<std::string>()) return *v;
        throw ConfigError("expected a string", join(path_, key));
    }

    const toml::node* raw(std::string_view key) { return find(key); }

    /// Subtable or nullptr if absent.
    const toml::table* table(std::string_view key) {
        const toml::node* node = find(key);
        if (!node) return nullptr;
        if (const auto* t = node->as_table()) return t;
        throw ConfigError("expected a table", join(path_, key));
    }

    /// Rejects keys that were never asked for.
    void finish() const {
        if (!table_) return;
        for (const auto& [key, node] : *table_) {
            if (!seen_.contains(std::string(key.str()))) {
                throw ConfigError("unknown key", join(path_, key.str()));
            }
        }
    }

    const std::string& path() const { return path_; }

private:
    const toml::node* find(std::string_view key) {
        seen_.insert(std::string(key));
        if (!table_) return nullptr;
        return table_->get(key);
    }

    const toml::table* table_;
    std::string path_;
    std::set<std::string> seen_;
};

int to_int(std::int64_t v, const std::string& path) {
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
        throw ConfigError("integer out of range", path);
    }
    return static_cast<int>(v);
}

std::size_t to_size(std::int64_t v, const std::string& path) {
    if (v < 0) throw ConfigError("expected a non-negative integer", path);
    return static_cast<std::size_t>(v);
}

std::string toml_double(double v) {
    std::string s = io::format_double(v);
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (s.find_first_of(".eE") == std::string::npos) s += ".0";
    return s;
}


}  // namespace

ExperimentConfig default_config() {
    ExperimentConfig cfg;
    cfg.reference = {{0, 12.147}, {50, 13.0}, {150, 11.5}};
    return cfg;
}

std::pair<double, double> reachable_range(const plant::PlantParams& params, double u_min, double u_max) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    constexpr int kGrid = 2000;
    for (int i = 0; i <= kGrid; ++i) {
        const double w1 = u_min + (u_max - u_min) * static_cast<double>(i) / kGrid;
        if (!(w1 + params.w2_fixed > 0.0)) continue;
        const double cb = plant::steady_state(w1, params).cb;
        lo = std::min(lo, cb);
        hi = std::max(hi, cb);
    }
    return {lo, hi};
}

double reference_at(const std::vector<ReferenceStep>& profile, std::size_t k) {
    if (profile.empty()) throw DomainError("reference profile is empty");
    double level = profile.front().level;
    for (const auto& step : profile) {
        if (step.start <= k) level = step.level;
        else break;
    }
    return level;
}

void ExperimentConfig::validate() const {
    auto wrap = [](const std::string& path, auto&& fn) {
        try {
            fn();
        } catch (const ConfigError&) {
            throw;
        } catch (const Error& e) {
            throw ConfigError(e.what(), path);
        }
    };
    wrap("plant", [&] { plant.validate(); });
    if (!(initial_flow >= 0.0) || !(initial_flow + plant.w2_fixed > 0.0)) {
        throw ConfigError("initial flow must be non-negative with positive total inflow", "plant.initial_flow");
    }
    if (!(sampling.ts > 0.0)) throw ConfigError("sampling period must be positive", "sampling.ts");
    if (!(sampling.substep > 0.0)) throw ConfigError("substep must be positive", "sampling.substep");
    wrap("sampling.ts", [&] { plant::substep_count(sampling.ts, sampling.substep); });
    if (!(sampling.train_fraction > 0.0 && sampling.train_fraction < 1.0)) {
        throw ConfigError("train fraction must lie in (0, 1)", "sampling.train_fraction");
    }
    if (excitation.samples < 50) throw ConfigError("need at least 50 samples", "excitation.samples");
    if (!(excitation.bounds.lo >= 0.0) || !(excitation.bounds.hi > excitation.bounds.lo)) {
        throw ConfigError("excitation bounds must satisfy 0 <= lo < hi", "excitation.lo");
    }
    if (excitation.min_hold < 1 || excitation.max_hold < excitation.min_hold) {
        throw ConfigError("hold range must satisfy 1 <= min_hold <= max_hold", "excitation.min_hold");
    }
    wrap("narx", [&] { narx.spec.validate(); });
    if (narx.hidden_width < 1) throw ConfigError("hidden width must be >= 1", "narx.hidden_width");
    wrap("train", [&] { train.validate(); });
    wrap("mpc", [&] { mpc.validate(narx.spec); });
    if (mpc.u_min < 0.0) throw ConfigError("feed flow bound must be non-negative", "mpc.u_min");
    if (initial_flow < mpc.u_min || initial_flow > mpc.u_max) {
        throw ConfigError("initial flow outside controller bounds", "plant.initial_flow");
    }
    if (duration < 1) throw ConfigError("duration must be >= 1", "duration");
    if (reference.empty()) throw ConfigError("reference needs at least one step", "reference.steps");
    if (reference.front().start != 0) throw ConfigError("first reference step must start at 0", "reference.steps");
    for (std::size_t i = 1; i < reference.size(); ++i) {
        if (reference[i].start <= reference[i - 1].start) {
            throw ConfigError("reference step starts must increase", "reference.steps");
        }
    }
    const auto [lo, hi] = reachable_range(plant, mpc.u_min, mpc.u_max);
    for (const auto& step : reference) {
        if (!(step.level >= lo && step.level <= hi)) {
            std::ostringstream msg;
            msg << "reference level " << step.level << " outside reachable range [" << lo << ", " << hi << "]";
            throw ConfigError(msg.str(), "reference.steps");
        }
    }
}

ExperimentConfig parse_config(std::string_view toml_text) {
    toml::table root;
    try {
        root = toml::parse(toml_text);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << "TOML syntax error: " << e.description() << " at line " << e.source().begin.line;
        throw ConfigError(msg.str(), "<document>");
    }

    ExperimentConfig cfg = default_config();
    TableReader top(&root, "");
    const std::int64_t version = top.integer("schema_version", -1);
    if (version != kSchemaVersion) {
        throw ConfigError("schema_version must be " + std::to_string(kSchemaVersion), "schema_version");
    }
    const std::int64_t seed = top.integer("seed", static_cast<std::int64_t>(cfg.seed));
    if (seed < 0) throw ConfigError("seed must be non-negative", "seed");
    cfg.seed = static_cast<std::uint64_t>(seed);
    cfg.duration = to_size(top.integer("duration", static_cast<std::int64_t>(cfg.duration)), "duration");
    cfg.solver_trace = top.boolean("solver_trace", cfg.solver_trace);

    {
        TableReader t(top.table("plant"), "plant");
        auto& p = cfg.plant;
        p.cb1 = t.number("cb1", p.cb1);
        p.cb2 = t.number("cb2", p.cb2);
        p.k1 = t.number("k1", p.k1);
        p.k2 = t.number("k2", p.k2);
        p.outflow_coeff = t.number("outflow_coeff", p.outflow_coeff);
        p.w2_fixed = t.number("w2_fixed", p.w2_fixed);
        cfg.initial_flow = t.number("initial_flow", cfg.initial_flow);
        t.finish();
    }
    {
        TableReader t(top.table("sampling"), "sampling");
        auto& s = cfg.sampling;
        s.ts = t.number("ts", s.ts);
        s.substep = t.number("substep", s.substep);
        s.train_fraction = t.number("train_fraction", s.train_fraction);
        t.finish();
    }
    {
        TableReader t(top.table("excitation"), "excitation");
        auto& e = cfg.excitation;
        const std::string kind = t.string("kind", std::string(training::to_string(e.kind)));
        try {
            e.kind = training::excitation_kind_from_string(kind);
        } catch (const Error& err) {
            throw ConfigError(err.what(), "excitation.kind");
        }
        e.samples = to_size(t.integer("samples", static_cast<std::int64_t>(e.samples)), "excitation.samples");
        e.bounds.lo = t.number("lo", e.bounds.lo);
        e.bounds.hi = t.number("hi", e.bounds.hi);
        e.min_hold = to_int(t.integer("min_hold", e.min_hold), "excitation.min_hold");
        e.max_hold = to_int(t.integer("max_hold", e.max_hold), "excitation.max_hold");
        t.finish();
    }
    {
        TableReader t(top.table("narx"), "narx");
        auto& n = cfg.narx;
        n.spec.ny = to_int(t.integer("ny", n.spec.ny), "narx.ny");
        n.spec.nu = to_int(t.integer("nu", n.spec.nu), "narx.nu");
        n.spec.delay = to_int(t.integer("delay", n.spec.delay), "narx.delay");
        n.hidden_width = to_int(t.integer("hidden_width", n.hidden_width), "narx.hidden_width");
        t.finish();
    }
    {
        TableReader t(top.table("train"), "train");
        auto& tr = cfg.train;
        tr.max_iterations = to_int(t.integer("max_iterations", tr.max_iterations), "train.max_iterations");
        tr.lambda0 = t.number("lambda0", tr.lambda0);
        tr.lambda_up = t.number("lambda_up", tr.lambda_up);
        tr.lambda_down = t.number("lambda_down", tr.lambda_down);
        tr.lambda_max = t.number("lambda_max", tr.lambda_max);
        tr.tol_gradient = t.number("tol_gradient", tr.tol_gradient);
        tr.tol_loss = t.number("tol_loss", tr.tol_loss);
        t.finish();
    }
    {
        TableReader t(top.table("mpc"), "mpc");
        auto& m = cfg.mpc;
        m.n1 = to_int(t.integer("n1", m.n1), "mpc.n1");
        m.n2 = to_int(t.integer("n2", m.n2), "mpc.n2");
        m.nu = to_int(t.integer("nu", m.nu), "mpc.nu");
        m.rho = t.number("rho", m.rho);
        m.u_min = t.number("u_min", m.u_min);
        m.u_max = t.number("u_max", m.u_max);
        m.max_lm_iterations = to_int(t.integer("max_lm_iterations", m.max_lm_iterations), "mpc.max_lm_iterations");
        m.lambda0 = t.number("lambda0", m.lambda0);
        m.lambda_up = t.number("lambda_up", m.lambda_up);
        m.lambda_down = t.number("lambda_down", m.lambda_down);
        m.lambda_max = t.number("lambda_max", m.lambda_max);
        m.tol = t.number("tol", m.tol);
        t.finish();
    }
    {
        TableReader t(top.table("reference"), "reference");
        if (const toml::node* node = t.raw("steps")) {
            const auto* arr = node->as_array();
            if (!arr) throw ConfigError("expected an array of [start, level] pairs", "reference.steps");
            cfg.reference.clear();
            for (std::size_t i = 0; i < arr->size(); ++i) {
                const std::string path = "reference.steps[" + std::to_string(i) + "]";
                const auto* pair = (*arr)[i].as_array();
                if (!pair || pair->size() != 2) throw ConfigError("expected [start, level]", path);
                const auto start = (*pair)[0].value_exact<std::int64_t>();
                std::optional<double> level = (*pair)[1].value_exact<double>();
                if (!level) {
                    if (auto iv = (*pair)[1].value_exact<std::int64_t>()) level = static_cast<double>(*iv);
                }
                if (!start || !level) throw ConfigError("expected [integer start, numeric level]", path);
                cfg.reference.push_back({to_size(*start, path), *level});
            }
        }
        t.finish();
    }
    top.finish();
    cfg.train.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw FileError("config file not found: " + path.string());
    return parse_config(io::read_file(path));
}

std::string to_toml(const ExperimentConfig& cfg) {
    std::ostringstream out;
    auto num = [&](std::string_view key, double v) { out << key << " = " << toml_double(v) << "\n"; };
    auto integer = [&](std::string_view key, auto v) { out << key << " = " << v << "\n"; };

    integer("schema_version", kSchemaVersion);
    integer("seed", cfg.seed);
    integer("duration", cfg.duration);
    out << "solver_trace = " << (cfg.solver_trace ? "true" : "false") << "\n";

    out << "\n[plant]\n";
    num("cb1", cfg.plant.cb1);
    num("cb2", cfg.plant.cb2);
    num("k1", cfg.plant.k1);
    num("k2", cfg.plant.k2);
    num("outflow_coeff", cfg.plant.outflow_coeff);
    num("w2_fixed", cfg.plant.w2_fixed);
    num("initial_flow", cfg.initial_flow);

    out << "\n[sampling]\n";
    num("ts", cfg.sampling.ts);
    num("substep", cfg.sampling.substep);
    num("train_fraction", cfg.sampling.train_fraction);

    out << "\n[excitation]\n";
    out << "kind = \"" << training::to_string(cfg.excitation.kind) << "\"\n";
    integer("samples", cfg.excitation.samples);
    num("lo", cfg.excitation.bounds.lo);
    num("hi", cfg.excitation.bounds.hi);
    integer("min_hold", cfg.excitation.min_hold);
    integer("max_hold", cfg.excitation.max_hold);

    out << "\n[narx]\n";
    integer("ny", cfg.narx.spec.ny);
    integer("nu", cfg.narx.spec.nu);
    integer("delay", cfg.narx.spec.delay);
    integer("hidden_width", cfg.narx.hidden_width);

    out << "\n[train]\n";
    integer("max_iterations", cfg.train.max_iterations);
    num("lambda0", cfg.train.lambda0);
    num("lambda_up", cfg.train.lambda_up);
    num("lambda_down", cfg.train.lambda_down);
    num("lambda_max", cfg.train.lambda_max);
    num("tol_gradient", cfg.train.tol_gradient);
    num("tol_loss", cfg.train.tol_loss);

    out << "\n[mpc]\n";
    integer("n1", cfg.mpc.n1);
    integer("n2", cfg.mpc.n2);
    integer("nu", cfg.mpc.nu);
    num("rho", cfg.mpc.rho);
    num("u_min", cfg.mpc.u_min);
    num("u_max", cfg.mpc.u_max);
    integer("max_lm_iterations", cfg.mpc.max_lm_iterations);
    num("lambda0", cfg.mpc.lambda0);
    num("lambda_up", cfg.mpc.lambda_up);
    num("lambda_down", cfg.mpc.lambda_down);
    num("lambda_max", cfg.mpc.lambda_max);
    num("tol", cfg.mpc.tol);

    out << "\n[reference]\nsteps = [";
    for (std::size_t i = 0; i < cfg.reference.size(); ++i) {
        out << (i ? ", " : "") << "[" << cfg.reference[i].start << ", " << toml_double(cfg.reference[i].level) << "]";
    }
    out << "]\n";
    return out.str();
}

std::string config_hash(const ExperimentConfig& cfg) {
    const std::string text = to_toml(cfg);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace nnmpc::config
