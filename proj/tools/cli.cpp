#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "flood/assimilation.hpp"
#include "flood/config.hpp"
#include "flood/evaluation.hpp"
#include "flood/hash.hpp"
#include "flood/pipeline.hpp"
#include "flood/scenario.hpp"
#include "flood/surrogate.hpp"
#include "flood/swe.hpp"

namespace fs = std::filesystem;

namespace flood::cli {

int exit_code(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::usage: return exit_usage;
        case ErrorCategory::config: return exit_config;
        case ErrorCategory::io:
        case ErrorCategory::malformed_header: return exit_io;
        case ErrorCategory::cfl_violation: return exit_solver;
        case ErrorCategory::divergence: return exit_divergence;
        case ErrorCategory::singular: return exit_singular;
        case ErrorCategory::size_mismatch:
        case ErrorCategory::grid_mismatch: return exit_data;
        case ErrorCategory::invalid_argument: return exit_argument;
    }
    return exit_other;
}

namespace {

struct Options {
    std::string command;
    std::string config_path;
    std::string out_dir;
    std::string data_dir;
    std::vector<std::string> models;
    std::vector<std::string> labels;
    std::vector<std::string> sets;
    std::optional<long long> seed;
    int threads = 1;
    bool force = false;
    int verbose = 0;
    bool quiet = false;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string num(double v) { return fmt("%.9g", v); }

/// State of one invocation: effective config, output directory and what was read and written.
class Run {
public:
    Run(const Options& opt, std::ostream& out) : opt_(opt), out_(out) {}

    const Options& opt() const { return opt_; }
    Config& cfg() { return cfg_; }
    const fs::path& dir() const { return dir_; }

    void load_config() {
        if (!opt_.config_path.empty()) {
            cfg_ = Config::load(opt_.config_path);
            input("config", opt_.config_path);
        }
        for (const std::string& kv : opt_.sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) fail(ErrorCategory::usage, "--set expects key=value, got '" + kv + "'");
            auto trim = [](std::string s) {
                const auto a = s.find_first_not_of(" \t"), b = s.find_last_not_of(" \t");
                return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
            };
            cfg_.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
        }
        if (opt_.seed) cfg_.set("seed", std::to_string(*opt_.seed));
        cfg_.check_known();
    }

    void open_output() {
        if (opt_.out_dir.empty()) fail(ErrorCategory::usage, "--out is required");
        dir_ = opt_.out_dir;
        if (!opt_.force) {
            for (const char* name : {"run_record.txt", "manifest.txt"}) {
                if (fs::exists(dir_ / name)) {
                    fail(ErrorCategory::io, "refusing to overwrite " + (dir_ / name).string() + " (pass --force)");
                }
            }
        }
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec) fail(ErrorCategory::io, "cannot create " + dir_.string() + ": " + ec.message());
    }

    void input(const std::string& role, const fs::path& path) {
        inputs_.push_back(role + " " + path.filename().string() + " " + sha256_file(path));
    }

    /// Registers a file written under the output directory.
    void artifact(const std::string& rel) { artifacts_.push_back(rel); }

    void write_text(const std::string& rel, const std::string& text) {
        std::ofstream f(dir_ / rel, std::ios::binary);
        if (!f) fail(ErrorCategory::io, "cannot write " + (dir_ / rel).string());
        f << text;
        if (!f) fail(ErrorCategory::io, "write failed for " + (dir_ / rel).string());
        artifact(rel);
    }

    std::ostream& info() {
        static std::ostream null(nullptr);
        return opt_.quiet ? null : out_;
    }
    std::ostream* detail() { return opt_.verbose > 0 && !opt_.quiet ? &out_ : nullptr; }

    void write_record() {
        std::ostringstream r;
        r << "command " << opt_.command << "\n";
        r << "seed " << cfg_.get_string("seed") << "\n";
        r << "threads 1\n";
        r << "[config]\n" << cfg_.effective_text();
        r << "[inputs]\n";
        for (const auto& s : inputs_) r << s << "\n";
        r << "[artifacts]\n";
        std::vector<std::string> names = artifacts_;
        std::sort(names.begin(), names.end());
        names.erase(std::unique(names.begin(), names.end()), names.end());
        for (const auto& a : names) r << a << " " << sha256_file(dir_ / a) << "\n";
        std::ofstream f(dir_ / "run_record.txt", std::ios::binary);
        f << r.str();
        if (!f) fail(ErrorCategory::io, "cannot write run_record.txt");
    }

private:
    const Options& opt_;
    std::ostream& out_;
    Config cfg_;
    fs::path dir_;
    std::vector<std::string> inputs_;
    std::vector<std::string> artifacts_;
};

scenario::Manifest load_dataset(Run& run) {
    if (run.opt().data_dir.empty()) fail(ErrorCategory::usage, "--data is required");
    const fs::path m = fs::path(run.opt().data_dir) / "manifest.txt";
    const scenario::Manifest manifest = scenario::read_manifest(m);
    run.input("dataset", m);
    return manifest;
}

struct NamedModel {
    std::string label;
    surrogate::Model model;
};

std::vector<NamedModel> load_models(Run& run, const scenario::Manifest& m, bool required) {
    const auto& paths = run.opt().models;
    const auto& labels = run.opt().labels;
    if (required && paths.empty()) fail(ErrorCategory::usage, "--model is required");
    if (!labels.empty() && labels.size() != paths.size()) fail(ErrorCategory::usage, "give one --label per --model");
    std::vector<NamedModel> out;
    for (std::size_t k = 0; k < paths.size(); ++k) {
        NamedModel nm;
        nm.label = labels.empty() ? (paths.size() == 1 ? "surrogate" : "m" + std::to_string(k + 1)) : labels[k];
        nm.model = surrogate::load_model(paths[k]);
        require_same_grid(nm.model.grid, m.grid, "model");
        run.input("model " + nm.label, paths[k]);
        out.push_back(std::move(nm));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

void cmd_simulate(Run& run) {
    Config& c = run.cfg();
    const scenario::ScenarioConfig sc = scenario::ScenarioConfig::from_config(c);
    const std::string mode = c.get_string("sim_mode");
    const long long fixed_steps = c.get_int("sim_steps");
    if (fixed_steps < 0) fail(ErrorCategory::config, "sim_steps must be >= 0");

    Terrain terrain = Terrain::flat(sc.grid);
    FlowState s0(sc.grid);
    ForcingPlan forcing = ForcingPlan::none(sc.grid, sc.horizon);
    if (mode == "lake_at_rest") {
        const double level = c.get_real("lake_level");
        terrain = scenario::synth_terrain(sc.seed, sc.grid);
        s0 = FlowState::lake_at_rest(terrain, level);
        forcing.boundary_level = level;
    } else if (mode == "scenario") {
        scenario::Scenario s = scenario::sample_scenario(sc, static_cast<std::uint64_t>(c.get_int("sim_scenario")));
        terrain = std::move(s.terrain);
        s0 = std::move(s.initial);
        forcing = std::move(s.forcing);
    } else {
        fail(ErrorCategory::config, "sim_mode must be scenario or lake_at_rest");
    }

    std::vector<FlowState> snaps;
    std::size_t steps = 0;
    swe::VolumeBudget budget;
    if (fixed_steps > 0) {
        FlowState s = s0;
        for (long long k = 0; k < fixed_steps; ++k) s = swe::step(s, terrain, forcing, sc.solver, swe::stable_dt(s, sc.solver), &budget);
        steps = static_cast<std::size_t>(fixed_steps);
        snaps = {s0, s};
    } else {
        std::vector<swe::SnapshotBudget> b;
        snaps = swe::run(s0, terrain, forcing, sc.solver, sc.horizon, sc.snapshot_every, &b, &steps);
        budget = b.back().total;
    }
    const FlowState& last = snaps.back();
    double max_q = 0.0, max_dh = 0.0, max_h = 0.0;
    std::size_t wet = 0;
    for (std::size_t i = 0; i < sc.grid.cells(); ++i) {
        max_q = std::max({max_q, std::abs(last.qx()[i]), std::abs(last.qy()[i])});
        max_dh = std::max(max_dh, std::abs(last.h()[i] - s0.h()[i]));
        max_h = std::max(max_h, last.h()[i]);
        if (last.h()[i] > sc.solver.h_eps) ++wet;
    }

    std::vector<FlowState> stored;
    for (const auto& s : snaps) stored.push_back(quantize(s));
    scenario::write_run(run.dir() / "run.ff", stored);
    run.artifact("run.ff");

    std::ostringstream r;
    r << "mode " << mode << "\n";
    r << "steps " << steps << "\n";
    r << "final_time " << num(last.time()) << "\n";
    r << "snapshots " << snaps.size() << "\n";
    r << "max_abs_q " << fmt("%.6e", max_q) << "\n";
    r << "max_abs_dh " << fmt("%.6e", max_dh) << "\n";
    r << "max_depth " << num(max_h) << "\n";
    r << "wet_cells " << wet << "\n";
    r << "volume_initial " << num(s0.interior_volume()) << "\n";
    r << "volume_final " << num(last.interior_volume()) << "\n";
    r << "forcing_in " << num(budget.forcing_in) << "\n";
    r << "boundary_out " << num(budget.boundary_out) << "\n";
    run.write_text("summary.txt", r.str());
    run.info() << "simulate: " << steps << " steps to t = " << last.time() << " s, max|q| " << fmt("%.3e", max_q)
               << ", max|dh| " << fmt("%.3e", max_dh) << "\n";
}

void cmd_gen_data(Run& run) {
    Config& c = run.cfg();
    const scenario::ScenarioConfig sc = scenario::ScenarioConfig::from_config(c);
    const auto n = static_cast<int>(c.get_int("n_scenarios"));
    const auto holdout = static_cast<int>(c.get_int("holdout_scenarios"));
    const scenario::Manifest m = scenario::build_dataset(sc, n, holdout, run.dir(), run.detail());
    run.artifact("manifest.txt");
    std::size_t failed = 0;
    for (const auto& s : m.scenarios) {
        if (s.ok) run.artifact(s.file);
        else ++failed;
    }
    for (const auto& s : m.train) run.artifact(s);
    for (const auto& s : m.val) run.artifact(s);
    run.info() << "gen-data: " << m.scenarios.size() << " scenarios (" << failed << " failed), " << m.train.size() << " train / "
               << m.val.size() << " val samples\n";
}

void cmd_train(Run& run) {
    Config& c = run.cfg();
    const scenario::Manifest m = load_dataset(run);
    const fs::path data = run.opt().data_dir;
    const scenario::ScenarioConfig sc = pipeline::scenario_config(m);
    const surrogate::TrainConfig tc = surrogate::TrainConfig::from_config(c);
    const auto norm = surrogate::Normalizer::from_stats(m.input_stats);
    surrogate::Model model(surrogate::network_config_from(c), norm, m.grid, sc.lead_time);

    const auto max_train = static_cast<std::size_t>(std::max(0LL, c.get_int("max_train_samples")));
    const surrogate::TrainData train = surrogate::load_split(data, m, "train", norm, max_train);
    const surrogate::TrainData val = surrogate::load_split(data, m, "val", norm);
    const surrogate::TrainData* vp = val.count > 0 ? &val : nullptr;
    run.info() << "train: " << train.count << " samples, " << model.net.parameter_count() << " parameters, " << tc.epochs
               << " epochs\n";

    surrogate::TrainHistory h;
    if (tc.mode == surrogate::TrainMode::cgan) {
        nn::Network<float> disc(nn::NetworkConfig::patch_discriminator());
        h = surrogate::train_cgan(model, disc, train, vp, tc, run.detail());
    } else {
        h = surrogate::train_l1(model, train, vp, tc, run.detail());
    }

    surrogate::save_model(run.dir() / "model.bin", model);
    run.artifact("model.bin");
    run.artifact("model.bin.layers");

    std::ostringstream csv;
    csv << "epoch,train_l1,val_l1,d_loss,g_adv_loss\n";
    for (std::size_t e = 0; e < h.train_loss.size(); ++e) {
        auto at = [e](const std::vector<double>& v) { return e < v.size() ? num(v[e]) : std::string(); };
        csv << e + 1 << "," << num(h.train_loss[e]) << "," << at(h.val_loss) << "," << at(h.d_loss) << "," << at(h.g_adv_loss)
            << "\n";
    }
    run.write_text("history.csv", csv.str());
    if (!h.train_loss.empty()) {
        run.info() << "train: final train_l1 " << num(h.train_loss.back());
        if (!h.val_loss.empty()) run.info() << " val_l1 " << num(h.val_loss.back());
        run.info() << "\n";
    }
}

int rollout_steps(Config& c) {
    const auto n = c.get_int("rollout_steps");
    if (n < 1) fail(ErrorCategory::config, "rollout_steps must be >= 1");
    return static_cast<int>(n);
}

std::int64_t chosen_scenario(Config& c) { return c.get_int("rollout_scenario"); }

void cmd_rollout(Run& run) {
    Config& c = run.cfg();
    const scenario::Manifest m = load_dataset(run);
    auto models = load_models(run, m, true);
    if (models.size() != 1) fail(ErrorCategory::usage, "rollout takes one --model");
    surrogate::Model& model = models.front().model;
    const int n = rollout_steps(c);
    auto held = pipeline::load_holdout(run.opt().data_dir, m, n, chosen_scenario(c));
    const pipeline::HeldOut& h = held.front();

    const auto pred = surrogate::rollout(model, h.reference.front(), h.forcing, n);
    const auto curve = eval::rollout_curve(pred, h.reference);
    std::vector<FlowState> stored;
    for (const auto& s : pred) stored.push_back(quantize(s));
    scenario::write_run(run.dir() / "rollout.ff", stored);
    run.artifact("rollout.ff");
    std::ostringstream csv;
    eval::write_curves_csv(csv, {{"s" + std::to_string(h.index), curve}});
    run.write_text("curves.csv", csv.str());
    eval::write_rollout_mosaic(run.dir() / "mosaic.pgm", h.reference, pred);
    run.artifact("mosaic.pgm");
    run.info() << "rollout: scenario " << h.index << ", " << n << " steps, final MSE " << num(curve.back().mse) << ", PSNR "
               << eval::psnr_text(curve.back().psnr) << " dB\n";
}

double mean_over_steps(const std::vector<eval::CurvePoint>& c) {
    double s = 0.0;
    for (std::size_t k = 1; k < c.size(); ++k) s += c[k].mse;
    return c.size() > 1 ? s / static_cast<double>(c.size() - 1) : 0.0;
}

void cmd_assimilate(Run& run) {
    Config& c = run.cfg();
    const scenario::Manifest m = load_dataset(run);
    auto models = load_models(run, m, true);
    if (models.size() != 1) fail(ErrorCategory::usage, "assimilate takes one --model");
    surrogate::Model& model = models.front().model;
    const int n = rollout_steps(c);
    const auto held = pipeline::load_holdout(run.opt().data_dir, m, n, chosen_scenario(c));

    const auto cov_n = static_cast<std::size_t>(std::max(2LL, c.get_int("cov_samples")));
    const auto samples = pipeline::load_samples(run.opt().data_dir, m, m.val.size() >= 2 ? "val" : "train", cov_n);
    const auto P = pipeline::error_covariance(model, samples, c.get_real("localization_radius"));
    const auto plan = pipeline::observation_plan(m, c.get_real("assim_fraction"), c.get_real("obs_noise_factor"),
                                                 c.get_u64("assim_seed"));

    std::vector<std::vector<eval::CurvePoint>> free_c, corr_c;
    std::vector<std::pair<std::string, std::vector<eval::CurvePoint>>> rows;
    std::vector<FlowState> refs;
    std::vector<FlowState> first_corrected;
    for (const auto& h : held) {
        const auto free = surrogate::rollout(model, h.reference.front(), h.forcing, n);
        const auto corr = assim::assimilated_rollout(model, h.forcing, h.reference, n, P, plan);
        free_c.push_back(eval::rollout_curve(free, h.reference));
        corr_c.push_back(eval::rollout_curve(corr, h.reference));
        rows.emplace_back("s" + std::to_string(h.index) + "/free", free_c.back());
        rows.emplace_back("s" + std::to_string(h.index) + "/assimilated", corr_c.back());
        refs.insert(refs.end(), h.reference.begin(), h.reference.end());
        if (first_corrected.empty()) first_corrected = corr;
    }
    const double peak = eval::peak_value(refs);
    rows.emplace_back("mean/free", pipeline::mean_curve(free_c, peak));
    rows.emplace_back("mean/assimilated", pipeline::mean_curve(corr_c, peak));
    std::ostringstream csv;
    eval::write_curves_csv(csv, rows);
    run.write_text("curves.csv", csv.str());
    eval::write_rollout_mosaic(run.dir() / "mosaic.pgm", held.front().reference, first_corrected);
    run.artifact("mosaic.pgm");

    const double mf = mean_over_steps(rows[rows.size() - 2].second), ma = mean_over_steps(rows.back().second);
    const double reduction = mf > 0.0 ? 1.0 - ma / mf : 0.0;
    std::ostringstream r;
    r << "scenarios " << held.size() << "\n";
    r << "steps " << n << "\n";
    r << "covariance_samples " << samples.size() << "\n";
    r << "observed_fraction " << num(plan.fraction) << "\n";
    r << "noise_std " << num(plan.noise_std[0]) << " " << num(plan.noise_std[1]) << " " << num(plan.noise_std[2]) << "\n";
    r << "mean_mse_free " << num(mf) << "\n";
    r << "mean_mse_assimilated " << num(ma) << "\n";
    r << "reduction " << num(reduction) << "\n";
    run.write_text("summary.txt", r.str());
    run.info() << "assimilate: mean rollout MSE " << num(mf) << " -> " << num(ma) << " (" << fmt("%.1f", 100.0 * reduction)
               << "% lower)\n";
}

void cmd_evaluate(Run& run) {
    Config& c = run.cfg();
    const scenario::Manifest m = load_dataset(run);
    const fs::path data = run.opt().data_dir;
    auto models = load_models(run, m, false);
    const int n = rollout_steps(c);

    eval::ZoneOptions zo;
    zo.seed = c.get_u64("kmeans_seed");
    zo.restarts = static_cast<int>(c.get_int("kmeans_restarts"));
    const eval::ZoneMap zones = eval::classify_zones(pipeline::zoning_snapshots(data, m), zo);
    eval::write_zone_pgm(run.dir() / "zones.pgm", zones);
    run.artifact("zones.pgm");

    const auto val = pipeline::load_samples(data, m, m.val.empty() ? "train" : "val");
    const auto held = pipeline::load_holdout(data, m, n, chosen_scenario(c));
    std::vector<FlowState> refs;
    for (const auto& h : held) refs.insert(refs.end(), h.reference.begin(), h.reference.end());
    const double peak = eval::peak_value(refs);

    std::vector<std::pair<std::string, std::vector<eval::ZoneRow>>> tables;
    std::vector<std::pair<std::string, std::vector<eval::CurvePoint>>> curves;
    std::ostringstream report;
    report << "validation_samples " << val.size() << "\n";
    report << "heldout_scenarios " << held.size() << "\n";
    report << "rollout_steps " << n << "\n";
    report << "zone_pixels river " << zones.count(eval::Zone::river) << " channel " << zones.count(eval::Zone::channel)
           << " dry " << zones.count(eval::Zone::dry) << "\n";

    auto summarize = [&](const std::string& label, const std::vector<eval::ZoneRow>& t,
                         const std::vector<eval::CurvePoint>& mean) {
        report << "model " << label << " one_step_mse " << num(t[3].mse_all) << " river " << num(t[0].mse_all) << " channel "
               << num(t[1].mse_all) << " dry " << num(t[2].mse_all) << " final_step_mse " << num(mean.back().mse)
               << " final_step_psnr " << eval::psnr_text(mean.back().psnr) << " mean_rollout_mse " << num(mean_over_steps(mean))
               << "\n";
        run.info() << "evaluate: " << label << " one-step MSE " << num(t[3].mse_all) << ", final-step MSE "
                   << num(mean.back().mse) << "\n";
    };

    {
        const auto t = eval::one_step_table(eval::sample_input_state, val, zones);
        std::vector<std::vector<eval::CurvePoint>> per;
        for (const auto& h : held) {
            std::vector<FlowState> still;
            for (const auto& r : h.reference) still.push_back(h.reference.front().with_time(r.time()));
            per.push_back(eval::rollout_curve(still, h.reference, peak));
        }
        const auto mean = pipeline::mean_curve(per, peak);
        tables.emplace_back("persistence", t);
        curves.emplace_back("persistence", mean);
        summarize("persistence", t, mean);
    }
    for (auto& nm : models) {
        const auto t = eval::one_step_table(pipeline::predictor(nm.model), val, zones);
        std::vector<std::vector<eval::CurvePoint>> per;
        std::vector<FlowState> first;
        for (const auto& h : held) {
            const auto pred = surrogate::rollout(nm.model, h.reference.front(), h.forcing, n);
            per.push_back(eval::rollout_curve(pred, h.reference, peak));
            if (first.empty()) first = pred;
        }
        const auto mean = pipeline::mean_curve(per, peak);
        tables.emplace_back(nm.label, t);
        curves.emplace_back(nm.label, mean);
        summarize(nm.label, t, mean);
        const std::string img = "mosaic_" + nm.label + ".pgm";
        eval::write_rollout_mosaic(run.dir() / img, held.front().reference, first);
        run.artifact(img);
    }
    std::ostringstream zt, cv;
    eval::write_zone_csv(zt, tables);
    eval::write_curves_csv(cv, curves);
    run.write_text("zones.csv", zt.str());
    run.write_text("curves.csv", cv.str());
    run.write_text("report.txt", report.str());
}

void cmd_bench(Run& run) {
    Config& c = run.cfg();
    const scenario::Manifest m = load_dataset(run);
    auto models = load_models(run, m, true);
    if (models.size() != 1) fail(ErrorCategory::usage, "bench takes one --model");
    surrogate::Model& model = models.front().model;
    const scenario::ScenarioConfig sc = pipeline::scenario_config(m);
    const double horizon = c.get_real("bench_horizon");
    if (!(horizon > 0.0)) fail(ErrorCategory::config, "bench_horizon must be positive");
    const int steps = static_cast<int>(std::ceil(horizon / model.lead_time - 1e-9));
    const auto held = pipeline::load_holdout(run.opt().data_dir, m, 0, chosen_scenario(c));
    const pipeline::HeldOut& h = held.front();
    const Terrain terrain = scenario::synth_terrain(sc.seed, sc.grid);
    const FlowState& s0 = h.reference.front();

    const eval::SpeedResult r = eval::speed_benchmark(
        [&] { swe::run(s0, terrain, h.forcing, sc.solver, horizon, horizon); },
        [&] { surrogate::rollout(model, s0, h.forcing, steps); }, static_cast<int>(c.get_int("bench_repeats")));

    std::ostringstream t;
    t << "scenario " << h.index << "\n";
    t << "horizon " << num(horizon) << "\n";
    t << "surrogate_steps " << steps << "\n";
    t << "solver_median_s " << num(r.solver_median) << "\n";
    t << "surrogate_median_s " << num(r.surrogate_median) << "\n";
    t << "ratio " << num(r.ratio) << "\n";
    t << "surrogate_spread " << num(r.surrogate_spread) << "\n";
    run.write_text("bench.txt", t.str());
    run.info() << "bench: solver " << num(r.solver_median) << " s, surrogate " << num(r.surrogate_median) << " s, speedup "
               << fmt("%.1f", r.ratio) << "x\n";
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Flood simulation, surrogate training and evaluation", "flood"};
    app.require_subcommand(1, 1);

    struct Sub {
        const char* name;
        const char* help;
        bool data;
        bool model;
    };
    const Sub subs[] = {
        {"simulate", "run the solver on one scenario or a lake at rest", false, false},
        {"gen-data", "simulate scenarios and write a training dataset", false, false},
        {"train", "train a surrogate on a dataset", true, false},
        {"rollout", "autoregressive surrogate rollout on a held-out scenario", true, true},
        {"assimilate", "rollouts corrected with sparse observations", true, true},
        {"evaluate", "zone tables, rollout curves and images", true, true},
        {"bench", "time the solver against the surrogate", true, true},
    };
    // One option set per subcommand: options bound to a shared variable would be reset by
    // the subcommands that were not invoked.
    std::vector<Options> opts(std::size(subs));
    for (std::size_t k = 0; k < std::size(subs); ++k) {
        const Sub& s = subs[k];
        Options& opt = opts[k];
        opt.command = s.name;
        CLI::App* sub = app.add_subcommand(s.name, s.help);
        sub->add_option("-c,--config", opt.config_path, "config file (key = value)")->check(CLI::ExistingFile);
        sub->add_option("-o,--out", opt.out_dir, "output directory")->required();
        sub->add_option("--seed", opt.seed, "override the master seed");
        sub->add_option("--set", opt.sets, "override a config key (key=value)");
        sub->add_option("--threads", opt.threads, "worker cap; this build runs single-threaded")->check(CLI::PositiveNumber);
        sub->add_flag("--force", opt.force, "overwrite an existing run in the output directory");
        sub->add_flag("-v,--verbose", opt.verbose, "per-epoch and per-scenario progress");
        sub->add_flag("-q,--quiet", opt.quiet, "no progress output");
        if (s.data) sub->add_option("-d,--data", opt.data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
        if (s.model) {
            sub->add_option("-m,--model", opt.models, "trained model file (repeatable for evaluate)");
            sub->add_option("--label", opt.labels, "name per --model in reports");
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        err << "error: usage: " << msg << "\n";
        return exit_usage;
    }
    const Options* chosen = nullptr;
    for (std::size_t k = 0; k < std::size(subs); ++k) {
        if (app.got_subcommand(subs[k].name)) chosen = &opts[k];
    }
    if (chosen == nullptr) {
        err << "error: usage: no subcommand\n";
        return exit_usage;
    }
    const Options& opt = *chosen;

    try {
        Run r(opt, out);
        r.load_config();
        r.open_output();
        if (opt.threads > 1 && opt.verbose > 0) out << "note: --threads " << opt.threads << " accepted; running single-threaded\n";
        if (opt.command == "simulate") cmd_simulate(r);
        else if (opt.command == "gen-data") cmd_gen_data(r);
        else if (opt.command == "train") cmd_train(r);
        else if (opt.command == "rollout") cmd_rollout(r);
        else if (opt.command == "assimilate") cmd_assimilate(r);
        else if (opt.command == "evaluate") cmd_evaluate(r);
        else if (opt.command == "bench") cmd_bench(r);
        r.write_record();
    } catch (const Error& e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        err << "error: " << category_name(e.category()) << ": " << msg << "\n";
        return exit_code(e.category());
    } catch (const std::exception& e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        err << "error: internal: " << msg << "\n";
        return exit_other;
    }
    return exit_ok;
}

}  // namespace flood::cli
