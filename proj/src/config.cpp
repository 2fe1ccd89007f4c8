#include "flood/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "flood/error.hpp"

namespace flood {

const std::vector<KeySpec>& config_schema() {
    static const std::vector<KeySpec> schema = {
        // grid and solver
        {"nx", "int", "64", "cells in x"},
        {"ny", "int", "64", "cells in y"},
        {"dx", "real", "50", "cell width (m)"},
        {"dy", "real", "50", "cell height (m)"},
        {"gravity", "real", "9.81", "gravitational acceleration (m/s^2)"},
        {"cfl", "real", "0.45", "Courant number"},
        {"theta", "real", "1.3", "minmod limiter parameter in [1, 2]"},
        {"h_eps", "real", "1e-6", "dry-cell depth threshold (m)"},
        {"max_dt", "real", "60", "upper bound on the solver step (s)"},
        // scenarios
        {"seed", "int", "1", "master seed for terrain, forcing and dataset shuffling"},
        {"n_subareas", "int", "9", "rain sub-areas"},
        {"horizon", "real", "7200", "simulated time per scenario (s)"},
        {"snapshot_every", "real", "300", "snapshot spacing (s)"},
        {"lead_time", "real", "1800", "prediction lead time (s), a multiple of snapshot_every"},
        {"forcing_interval", "real", "300", "length of each piecewise-constant forcing interval (s)"},
        {"rain_pattern", "string", "mixed", "constant | pulse | ramp | mixed"},
        {"rain_scale", "real", "2e-5", "peak rain rate (m/s)"},
        {"inflow_count", "int", "3", "point inflows per scenario"},
        {"inflow_scale", "real", "20", "peak inflow discharge (m^3/s)"},
        {"boundary_level_lo", "real", "1.0", "lowest boundary water level (m)"},
        {"boundary_level_hi", "real", "2.5", "highest boundary water level (m)"},
        {"spinup", "real", "1800", "drainage spin-up before t = 0 (s)"},
        {"n_scenarios", "int", "12", "scenarios used for training pairs"},
        {"holdout_scenarios", "int", "5", "extra scenarios kept out of the dataset for rollouts"},
        // simulate subcommand
        {"sim_mode", "string", "scenario", "scenario | lake_at_rest"},
        {"sim_scenario", "int", "0", "scenario index for simulate"},
        {"lake_level", "real", "1.5", "free-surface level for lake_at_rest"},
        {"sim_steps", "int", "0", "fixed number of solver steps for simulate (0 = run to horizon)"},
        // network and training
        {"arch", "string", "desk", "desk | full | custom"},
        {"layers_file", "string", "", "layer list for arch = custom"},
        {"state_skip", "bool", "true", "add the input state to the network output (desk and full presets)"},
        {"param_seed", "int", "7", "parameter initialization seed"},
        {"train_mode", "string", "l1_cnn", "l1_cnn | cgan"},
        {"epochs", "int", "30", "training epochs"},
        {"batch_size", "int", "8", "samples per batch"},
        {"optimizer", "string", "adam", "sgd | adam | rmsprop"},
        {"lr", "real", "1e-3", "base learning rate"},
        {"lr_schedule", "string", "fixed", "fixed | inverse_sqrt | periodic"},
        {"lr_period", "int", "10", "period in epochs of the periodic schedule"},
        {"input_noise_sigma", "real", "0.01", "input noise as a fraction of channel std"},
        {"l1_weight", "real", "1", "weight of the L1 term"},
        {"adversarial_weight", "real", "0", "weight of the adversarial term"},
        {"d_lr", "real", "2e-4", "discriminator learning rate"},
        {"label_real_lo", "real", "0.9", "soft label range for real pairs"},
        {"label_real_hi", "real", "1.0", "upper end of the real label range"},
        {"label_fake_lo", "real", "0.0", "soft label range for generated pairs"},
        {"label_fake_hi", "real", "0.1", "upper end of the generated label range"},
        {"train_seed", "int", "11", "batch order and noise seed"},
        {"max_train_samples", "int", "0", "cap on training samples (0 = all)"},
        // rollout, assimilation, evaluation
        {"rollout_steps", "int", "6", "surrogate steps per rollout"},
        {"rollout_scenario", "int", "-1", "held-out scenario for rollout (-1 = first)"},
        {"assim_fraction", "real", "0.1", "fraction of pixels observed per step"},
        {"localization_radius", "real", "8", "covariance localization radius (cells)"},
        {"obs_noise_factor", "real", "0.05", "observation noise std as a fraction of channel std"},
        {"assim_seed", "int", "5", "seed for observed-pixel selection and noise"},
        {"cov_samples", "int", "200", "one-step error samples for covariance estimation"},
        {"kmeans_restarts", "int", "50", "k-means restarts"},
        {"kmeans_seed", "int", "3", "k-means seed"},
        {"bench_repeats", "int", "5", "timing repetitions"},
        {"bench_horizon", "real", "1800", "benchmark horizon (s)"},
    };
    return schema;
}

namespace {

const KeySpec* find_spec(const std::string& key) {
    for (const auto& s : config_schema()) {
        if (s.key == key) return &s;
    }
    return nullptr;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

Config Config::parse(const std::string& text, const std::string& source) {
    Config c;
    c.source_ = source;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            fail(ErrorCategory::config, source + ":" + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty()) fail(ErrorCategory::config, source + ":" + std::to_string(lineno) + ": empty key");
        if (c.values_.count(key)) {
            fail(ErrorCategory::config, source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
        }
        c.values_[key] = value;
    }
    return c;
}

Config Config::load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) fail(ErrorCategory::io, "cannot read config '" + path.string() + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path.string());
}

void Config::check_known() const {
    for (const auto& [k, v] : values_) {
        if (!find_spec(k)) fail(ErrorCategory::config, source_ + ": unknown key '" + k + "'");
    }
}

std::string Config::raw(const std::string& key) const {
    const auto it = values_.find(key);
    if (it != values_.end()) return it->second;
    const KeySpec* s = find_spec(key);
    if (!s) fail(ErrorCategory::config, "no such config key '" + key + "'");
    return s->fallback;
}

std::string Config::get_string(const std::string& key) const { return raw(key); }

double Config::get_real(const std::string& key) const {
    const std::string v = raw(key);
    double out = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        fail(ErrorCategory::config, source_ + ": key '" + key + "' expects a real number, got '" + v + "'");
    }
    return out;
}

long long Config::get_int(const std::string& key) const {
    const std::string v = raw(key);
    long long out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        fail(ErrorCategory::config, source_ + ": key '" + key + "' expects an integer, got '" + v + "'");
    }
    return out;
}

std::uint64_t Config::get_u64(const std::string& key) const {
    const long long v = get_int(key);
    if (v < 0) fail(ErrorCategory::config, source_ + ": key '" + key + "' must be nonnegative");
    return static_cast<std::uint64_t>(v);
}

bool Config::get_bool(const std::string& key) const {
    const std::string v = raw(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail(ErrorCategory::config, source_ + ": key '" + key + "' expects true or false, got '" + v + "'");
}

std::string Config::to_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
}

std::string Config::effective_text() const {
    std::vector<std::string> keys;
    for (const auto& s : config_schema()) keys.push_back(s.key);
    std::sort(keys.begin(), keys.end());
    std::string out;
    for (const auto& k : keys) out += k + " = " + raw(k) + "\n";
    return out;
}

}  // namespace flood
