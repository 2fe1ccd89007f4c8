#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "flood/config.hpp"
#include "flood/field.hpp"
#include "flood/swe.hpp"

namespace flood::scenario {

enum class RainPattern { constant, pulse, ramp, mixed };

RainPattern parse_rain_pattern(const std::string& s);
const char* rain_pattern_name(RainPattern p);

struct ScenarioConfig {
    std::uint64_t seed = 1;
    GridSpec grid{};
    int n_subareas = 9;
    double horizon = 12.0 * 3600.0;
    double snapshot_every = 300.0;
    double lead_time = 1800.0;
    double forcing_interval = 300.0;
    RainPattern rain_pattern = RainPattern::mixed;
    double rain_scale = 2e-5;         // m/s
    int inflow_count = 3;
    double inflow_scale = 20.0;       // m^3/s
    double boundary_level_lo = 1.0;
    double boundary_level_hi = 2.5;
    double spinup = 1800.0;
    swe::SolverParams solver{};

    /// Number of snapshots per lead window.
    int lead_steps() const;
    void validate() const;

    static ScenarioConfig from_config(const Config& c);
    /// The scenario and solver keys with this config's values.
    Config to_config() const;
};

/// Landform classes of the synthetic terrain.
enum Landform : int { river = 0, channel = 1, floodplain = 2, upland = 3 };

/// Synthetic terrain with the geometry needed to place inflows and check its construction.
struct Landscape {
    Terrain terrain;
    std::vector<int> landform;              // per cell
    double bank_level = 0.0;                // elevation of the main valley banks
    std::vector<std::size_t> valley_path;   // valley centre cell in each interior column
    std::vector<double> valley_halfwidth;   // per interior column, in cells
    std::vector<std::size_t> inflow_sites;  // valley head first, then tributary heads
};

/// Main meandering valley crossing the domain in x, a few tributary channels and rising
/// land on both sides. Friction follows the landform class. Pure function of (seed, grid).
Landscape make_landscape(std::uint64_t seed, const GridSpec& grid);
Terrain synth_terrain(std::uint64_t seed, const GridSpec& grid);

/// Sub-areas as a near-square block partition of the grid.
std::vector<int> subarea_map(const GridSpec& grid, int n_subareas);

/// Rain, inflow and boundary level for one scenario; cheap and deterministic from
/// (config.seed, index).
ForcingPlan scenario_forcing(const ScenarioConfig& config, const Landscape& land, std::uint64_t index);

struct Scenario {
    Terrain terrain;
    FlowState initial;
    ForcingPlan forcing;
};

/// Terrain from config.seed, forcing from (seed, index), and the initial state obtained by
/// filling to the boundary level and draining for config.spinup seconds with constant
/// inflow and no rain. The initial state has time 0.
Scenario sample_scenario(const ScenarioConfig& config, std::uint64_t index);

constexpr int input_channels = 5;   // h, qx, qy, inflow, rain
constexpr int target_channels = 3;  // h, qx, qy

struct TrainingSample {
    GridSpec grid;
    std::vector<float> input;   // 5 x ny x nx, channel-major
    std::vector<float> target;  // 3 x ny x nx
    std::int64_t scenario = 0;
    double time = 0.0;
};

/// Mean rain (via the sub-area map) and mean inflow (discharge / cell area at inflow cells)
/// over [t0, t1], both in m/s, on the full grid.
std::pair<Field, Field> mean_forcing_fields(const ForcingPlan& forcing, const GridSpec& grid, double t0, double t1);

/// Builds the 5-channel input from a state and the forcing over [t, t + lead_time].
std::vector<float> make_input(const FlowState& state, const ForcingPlan& forcing, double lead_time);

/// One sample per snapshot t with t + lead_time inside the run. Snapshots must be evenly
/// spaced and lead_time a multiple of the spacing.
std::vector<TrainingSample> extract_pairs(const std::vector<FlowState>& snapshots, const ForcingPlan& forcing,
                                          double lead_time, std::int64_t scenario_id = 0);

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> std;
};

struct ScenarioRecord {
    std::int64_t index = 0;
    bool ok = true;
    bool holdout = false;
    std::string file;    // reference run, relative to the dataset directory
    std::string reason;  // failure message when !ok
};

struct Manifest {
    GridSpec grid;
    std::string config_text;  // scenario config as key = value lines
    std::vector<std::string> train;  // sample files relative to the dataset directory
    std::vector<std::string> val;
    ChannelStats input_stats;   // over the training split
    ChannelStats target_stats;
    std::vector<ScenarioRecord> scenarios;

    std::string to_text() const;
    static Manifest parse(const std::string& text);
};

void write_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);

/// Simulates scenarios 0..n_scenarios-1 (pairs) and n_scenarios..+n_holdout-1 (reference
/// runs only), writes sample files, reference runs and `manifest.txt` into out_dir.
/// Failed scenarios are recorded and skipped.
/// Progress and failures go to `log` when given.
Manifest build_dataset(const ScenarioConfig& config, int n_scenarios, int n_holdout, const std::filesystem::path& out_dir,
                       std::ostream* log = nullptr);

void write_sample(const std::filesystem::path& path, const TrainingSample& s);
TrainingSample read_sample(const std::filesystem::path& path);

/// Reference run: all snapshots of a scenario in one file.
void write_run(const std::filesystem::path& path, const std::vector<FlowState>& snapshots);
std::vector<FlowState> read_run(const std::filesystem::path& path);

}  // namespace flood::scenario
