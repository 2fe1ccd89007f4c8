#include "flood/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "flood/error.hpp"

namespace fs = std::filesystem;

namespace flood::pipeline {

scenario::ScenarioConfig scenario_config(const scenario::Manifest& m) {
    return scenario::ScenarioConfig::from_config(Config::parse(m.config_text, "manifest"));
}

ForcingPlan forcing_of(const scenario::ScenarioConfig& cfg, std::int64_t index) {
    const scenario::Landscape land = scenario::make_landscape(cfg.seed, cfg.grid);
    return scenario::scenario_forcing(cfg, land, static_cast<std::uint64_t>(index));
}

namespace {

std::vector<FlowState> every_lead(const std::vector<FlowState>& run, int stride, std::size_t count) {
    std::vector<FlowState> out;
    for (std::size_t k = 0; k < run.size() && out.size() < count; k += static_cast<std::size_t>(stride)) out.push_back(run[k]);
    return out;
}

}  // namespace

std::vector<HeldOut> load_holdout(const fs::path& dir, const scenario::Manifest& m, int n_steps, std::int64_t only) {
    if (n_steps < 0) fail(ErrorCategory::invalid_argument, "rollout steps must be >= 0");
    const scenario::ScenarioConfig cfg = scenario_config(m);
    const int stride = cfg.lead_steps();
    std::vector<HeldOut> out;
    for (const auto& rec : m.scenarios) {
        if (!rec.holdout || !rec.ok) continue;
        if (only >= 0 && rec.index != only) continue;
        HeldOut h;
        h.index = rec.index;
        h.reference = every_lead(scenario::read_run(dir / rec.file), stride, static_cast<std::size_t>(n_steps) + 1);
        if (h.reference.size() != static_cast<std::size_t>(n_steps) + 1) {
            fail(ErrorCategory::invalid_argument, "held-out run " + rec.file + " is shorter than " + std::to_string(n_steps) +
                                                      " lead times");
        }
        h.forcing = forcing_of(cfg, rec.index);
        out.push_back(std::move(h));
    }
    if (out.empty()) {
        fail(ErrorCategory::invalid_argument,
             only >= 0 ? "scenario " + std::to_string(only) + " is not a usable held-out scenario" : "dataset has no held-out scenarios");
    }
    return out;
}

std::vector<scenario::TrainingSample> load_samples(const fs::path& dir, const scenario::Manifest& m, const std::string& split,
                                                   std::size_t max_samples) {
    const std::vector<std::string>* names = nullptr;
    if (split == "train") names = &m.train;
    else if (split == "val") names = &m.val;
    else fail(ErrorCategory::invalid_argument, "unknown split '" + split + "'");
    std::vector<std::size_t> pick;
    const std::size_t n = names->size();
    if (max_samples == 0 || max_samples >= n) {
        for (std::size_t k = 0; k < n; ++k) pick.push_back(k);
    } else {
        for (std::size_t k = 0; k < max_samples; ++k) pick.push_back(k * n / max_samples);
    }
    std::vector<scenario::TrainingSample> out;
    out.reserve(pick.size());
    for (std::size_t k : pick) out.push_back(scenario::read_sample(dir / (*names)[k]));
    return out;
}

std::vector<FlowState> zoning_snapshots(const fs::path& dir, const scenario::Manifest& m) {
    const scenario::ScenarioConfig cfg = scenario_config(m);
    std::vector<FlowState> out;
    for (const auto& rec : m.scenarios) {
        if (rec.holdout || !rec.ok) continue;
        const auto run = scenario::read_run(dir / rec.file);
        for (auto& s : every_lead(run, cfg.lead_steps(), run.size())) out.push_back(std::move(s));
    }
    if (out.empty()) fail(ErrorCategory::invalid_argument, "dataset has no training runs to zone");
    return out;
}

assim::ObservationPlan observation_plan(const scenario::Manifest& m, double fraction, double factor, std::uint64_t seed) {
    if (m.target_stats.std.size() != 3) fail(ErrorCategory::malformed_header, "manifest lacks target statistics");
    if (!(factor > 0.0)) fail(ErrorCategory::invalid_argument, "observation noise factor must be positive");
    assim::ObservationPlan p;
    p.fraction = fraction;
    p.seed = seed;
    for (int c = 0; c < 3; ++c) {
        const double sd = m.target_stats.std[static_cast<std::size_t>(c)];
        p.noise_std[static_cast<std::size_t>(c)] = factor * (sd > 0.0 ? sd : 1.0);
    }
    return p;
}

assim::LocalizedCovariance error_covariance(surrogate::Model& model, const std::vector<scenario::TrainingSample>& samples,
                                            double radius) {
    return assim::LocalizedCovariance(assim::one_step_errors(model, samples), radius, model.grid);
}

eval::Predictor predictor(surrogate::Model& model) {
    return [&model](const scenario::TrainingSample& s) {
        return surrogate::state_from_prediction(s.grid, surrogate::predict_raw(model, s.input), s.time + model.lead_time);
    };
}

std::vector<eval::CurvePoint> mean_curve(const std::vector<std::vector<eval::CurvePoint>>& curves, double peak) {
    if (curves.empty()) fail(ErrorCategory::invalid_argument, "no curves to average");
    std::vector<eval::CurvePoint> out = curves.front();
    for (std::size_t k = 0; k < out.size(); ++k) {
        double mse = 0.0, depth = 0.0;
        for (const auto& c : curves) {
            if (c.size() != out.size()) fail(ErrorCategory::size_mismatch, "curves of different lengths");
            mse += c[k].mse;
            depth += c[k].mse_depth;
        }
        out[k].mse = mse / static_cast<double>(curves.size());
        out[k].mse_depth = depth / static_cast<double>(curves.size());
        out[k].psnr = eval::psnr(out[k].mse, peak);
    }
    return out;
}

}  // namespace flood::pipeline
