#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "flood/field.hpp"
#include "flood/scenario.hpp"

/// Error metrics, landform zoning by k-means, per-zone and per-step error tables, timing,
/// and grayscale images of rollouts.
namespace flood::eval {

/// Mean of squared differences; throws size_mismatch on different lengths or empty input.
double mse(std::span<const double> pred, std::span<const double> target);
double mse(std::span<const float> pred, std::span<const float> target);
/// Over all three channels, or depth only.
double state_mse(const FlowState& pred, const FlowState& target);
double depth_mse(const FlowState& pred, const FlowState& target);

/// 10 log10(peak^2 / mse); +infinity when mse == 0 (the "infinite" marker).
double psnr(double mse_value, double peak);
bool is_infinite_psnr(double db);
/// Text form used in reports: "inf" for the marker, otherwise %.6f.
std::string psnr_text(double db);

enum class Zone : int { river = 0, channel = 1, dry = 2 };
const char* zone_name(Zone z);

struct ZoneMap {
    GridSpec grid;
    std::vector<Zone> label;  // per cell

    std::size_t count(Zone z) const;
};

struct ZoneOptions {
    std::uint64_t seed = 5;
    int restarts = 50;
    double tolerance = 1e-6;
    int max_iterations = 300;
    double wet_depth = 1e-3;  // m; a cell counts as wet above this depth
};

/// k-means (k = 3, k-means++ seeding) on per-cell (mean depth, depth std, wet fraction)
/// over the snapshots, standardized. Clusters are named by mean depth: deepest river,
/// then channel, then dry. With fewer than 3 distinct feature vectors, cells never wet are
/// dry and wet cells split at their average mean depth into river (above) and channel.
ZoneMap classify_zones(const std::vector<FlowState>& snapshots, const ZoneOptions& opt = {});

/// Plain k-means on row vectors; returns labels and sets inertia. Exposed for tests.
std::vector<int> kmeans(const std::vector<std::vector<double>>& points, int k, const ZoneOptions& opt, double* inertia = nullptr);

struct ZoneRow {
    std::string zone;        // river, channel, dry, all
    std::size_t pixels = 0;  // cells in the zone
    double mse_all = 0.0;    // over h, qx, qy; NaN for an empty zone
    double mse_depth = 0.0;
};

/// Prediction for one sample in physical units.
using Predictor = std::function<FlowState(const scenario::TrainingSample&)>;

/// Per-zone one-step MSE averaged over the samples, rows river, channel, dry, all.
std::vector<ZoneRow> one_step_table(const Predictor& predict, const std::vector<scenario::TrainingSample>& samples, const ZoneMap& zones);

/// Target of a sample as a state (the "perfect model"); input state ("no change").
FlowState sample_target(const scenario::TrainingSample& s);
FlowState sample_input_state(const scenario::TrainingSample& s);

struct CurvePoint {
    int step = 0;
    double time = 0.0;
    double mse = 0.0;
    double mse_depth = 0.0;
    double psnr = 0.0;
};

/// Per-step errors of a rollout against reference states at the same times.
/// peak <= 0 uses the largest |value| over the reference states.
std::vector<CurvePoint> rollout_curve(const std::vector<FlowState>& predicted, const std::vector<FlowState>& reference,
                                      double peak = 0.0);

/// Largest absolute value over every channel of the states.
double peak_value(const std::vector<FlowState>& states);

/// CSV with columns label,step,time,mse,mse_depth,psnr.
void write_curves_csv(std::ostream& out, const std::vector<std::pair<std::string, std::vector<CurvePoint>>>& curves);
void write_zone_csv(std::ostream& out, const std::vector<std::pair<std::string, std::vector<ZoneRow>>>& tables);

struct SpeedResult {
    std::vector<double> solver_seconds;
    std::vector<double> surrogate_seconds;
    double solver_median = 0.0;
    double surrogate_median = 0.0;
    double ratio = 0.0;            // solver / surrogate
    double surrogate_spread = 0.0; // standard deviation / median
};

double median(std::vector<double> v);

/// Times both callables `repeats` times each (interleaved) on a steady clock.
SpeedResult speed_benchmark(const std::function<void()>& solver, const std::function<void()>& surrogate, int repeats = 5);

/// Binary 8-bit portable graymap.
void write_pgm(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& pixels);

/// One row per step with panels truth | prediction | |error| of the depth, one-cell gaps.
/// Depth panels share a scale from 0 to the largest reference depth; the error panel
/// scales to the largest error. North (high j) is up.
void write_rollout_mosaic(const std::filesystem::path& path, const std::vector<FlowState>& reference,
                          const std::vector<FlowState>& predicted);

/// Zone map as a PGM: river black, channel gray, dry white.
void write_zone_pgm(const std::filesystem::path& path, const ZoneMap& zones);

}  // namespace flood::eval
