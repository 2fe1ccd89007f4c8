#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "flood/assimilation.hpp"
#include "flood/evaluation.hpp"
#include "flood/scenario.hpp"
#include "flood/surrogate.hpp"

/// Glue between a dataset directory and the rollout, assimilation and evaluation steps.
namespace flood::pipeline {

/// Scenario config the dataset was generated with.
scenario::ScenarioConfig scenario_config(const scenario::Manifest& m);

/// Forcing of scenario `index`, without the spin-up simulation.
ForcingPlan forcing_of(const scenario::ScenarioConfig& cfg, std::int64_t index);

struct HeldOut {
    std::int64_t index = 0;
    ForcingPlan forcing;
    std::vector<FlowState> reference;  // every lead time from t = 0, n_steps + 1 states
};

/// Reference runs of the held-out scenarios, one lead time apart. `only` >= 0 keeps that
/// scenario index alone. Throws when no held-out run is usable.
std::vector<HeldOut> load_holdout(const std::filesystem::path& dir, const scenario::Manifest& m, int n_steps,
                                  std::int64_t only = -1);

/// Raw samples of the "train" or "val" split. max_samples > 0 keeps that many, evenly spaced.
std::vector<scenario::TrainingSample> load_samples(const std::filesystem::path& dir, const scenario::Manifest& m,
                                                   const std::string& split, std::size_t max_samples = 0);

/// Snapshots of the training-scenario runs, one lead time apart, for landform zoning.
std::vector<FlowState> zoning_snapshots(const std::filesystem::path& dir, const scenario::Manifest& m);

/// Observation noise std as `factor` times the std of each target channel.
assim::ObservationPlan observation_plan(const scenario::Manifest& m, double fraction, double factor, std::uint64_t seed);

/// Localized error covariance of the model's one-step predictions on `samples`.
assim::LocalizedCovariance error_covariance(surrogate::Model& model, const std::vector<scenario::TrainingSample>& samples,
                                            double radius);

/// Prediction for a sample in physical units, as used by the one-step tables.
eval::Predictor predictor(surrogate::Model& model);

/// Mean over scenarios of each step's MSE (and depth MSE); PSNR from the mean MSE with the
/// largest peak among the references.
std::vector<eval::CurvePoint> mean_curve(const std::vector<std::vector<eval::CurvePoint>>& curves, double peak);

}  // namespace flood::pipeline
