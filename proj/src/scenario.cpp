#include "flood/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>

#include "flood/rng.hpp"

namespace flood::scenario {

namespace fs = std::filesystem;

RainPattern parse_rain_pattern(const std::string& s) {
    if (s == "constant") return RainPattern::constant;
    if (s == "pulse") return RainPattern::pulse;
    if (s == "ramp") return RainPattern::ramp;
    if (s == "mixed") return RainPattern::mixed;
    fail(ErrorCategory::config, "unknown rain pattern '" + s + "'");
}

const char* rain_pattern_name(RainPattern p) {
    switch (p) {
        case RainPattern::constant: return "constant";
        case RainPattern::pulse: return "pulse";
        case RainPattern::ramp: return "ramp";
        case RainPattern::mixed: return "mixed";
    }
    return "?";
}

int ScenarioConfig::lead_steps() const { return static_cast<int>(std::lround(lead_time / snapshot_every)); }

void ScenarioConfig::validate() const {
    grid.validate();
    solver.validate();
    auto bad = [](const std::string& m) { fail(ErrorCategory::config, m); };
    if (n_subareas < 1) bad("n_subareas must be positive");
    if (!(snapshot_every > 0.0)) bad("snapshot_every must be positive");
    if (!(lead_time > 0.0)) bad("lead_time must be positive");
    if (!(horizon >= lead_time)) bad("horizon must be at least lead_time");
    if (std::abs(lead_steps() * snapshot_every - lead_time) > 1e-9 * lead_time || lead_steps() < 1) {
        bad("lead_time must be an integer multiple of snapshot_every");
    }
    const double n_snap = horizon / snapshot_every;
    if (std::abs(n_snap - std::round(n_snap)) > 1e-9 * n_snap) bad("horizon must be a multiple of snapshot_every");
    if (!(forcing_interval > 0.0)) bad("forcing_interval must be positive");
    if (!(rain_scale >= 0.0)) bad("rain_scale must be nonnegative");
    if (inflow_count < 0) bad("inflow_count must be nonnegative");
    if (!(inflow_scale >= 0.0)) bad("inflow_scale must be nonnegative");
    if (!(boundary_level_lo <= boundary_level_hi)) bad("boundary level range is empty");
    if (!(spinup >= 0.0)) bad("spinup must be nonnegative");
}

ScenarioConfig ScenarioConfig::from_config(const Config& c) {
    ScenarioConfig s;
    s.seed = c.get_u64("seed");
    s.grid = GridSpec{static_cast<int>(c.get_int("nx")), static_cast<int>(c.get_int("ny")), c.get_real("dx"), c.get_real("dy")};
    s.n_subareas = static_cast<int>(c.get_int("n_subareas"));
    s.horizon = c.get_real("horizon");
    s.snapshot_every = c.get_real("snapshot_every");
    s.lead_time = c.get_real("lead_time");
    s.forcing_interval = c.get_real("forcing_interval");
    s.rain_pattern = parse_rain_pattern(c.get_string("rain_pattern"));
    s.rain_scale = c.get_real("rain_scale");
    s.inflow_count = static_cast<int>(c.get_int("inflow_count"));
    s.inflow_scale = c.get_real("inflow_scale");
    s.boundary_level_lo = c.get_real("boundary_level_lo");
    s.boundary_level_hi = c.get_real("boundary_level_hi");
    s.spinup = c.get_real("spinup");
    s.solver.g = c.get_real("gravity");
    s.solver.cfl = c.get_real("cfl");
    s.solver.theta = c.get_real("theta");
    s.solver.h_eps = c.get_real("h_eps");
    s.solver.max_dt = c.get_real("max_dt");
    try {
        s.validate();
    } catch (const Error& e) {
        fail(ErrorCategory::config, e.what());
    }
    return s;
}

namespace {

std::string real_text(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

Config ScenarioConfig::to_config() const {
    Config c;
    c.set("seed", std::to_string(seed));
    c.set("nx", std::to_string(grid.nx));
    c.set("ny", std::to_string(grid.ny));
    c.set("dx", real_text(grid.dx));
    c.set("dy", real_text(grid.dy));
    c.set("n_subareas", std::to_string(n_subareas));
    c.set("horizon", real_text(horizon));
    c.set("snapshot_every", real_text(snapshot_every));
    c.set("lead_time", real_text(lead_time));
    c.set("forcing_interval", real_text(forcing_interval));
    c.set("rain_pattern", rain_pattern_name(rain_pattern));
    c.set("rain_scale", real_text(rain_scale));
    c.set("inflow_count", std::to_string(inflow_count));
    c.set("inflow_scale", real_text(inflow_scale));
    c.set("boundary_level_lo", real_text(boundary_level_lo));
    c.set("boundary_level_hi", real_text(boundary_level_hi));
    c.set("spinup", real_text(spinup));
    c.set("gravity", real_text(solver.g));
    c.set("cfl", real_text(solver.cfl));
    c.set("theta", real_text(solver.theta));
    c.set("h_eps", real_text(solver.h_eps));
    c.set("max_dt", real_text(solver.max_dt));
    return c;
}

// ---------------------------------------------------------------------------
// Terrain
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint64_t terrain_tag = 0x7e11a1;
constexpr std::uint64_t forcing_tag = 0xf0bc1;
constexpr std::uint64_t shuffle_tag = 0x5ff1e;

constexpr double bank_height = 3.0;   // valley banks above the lowest floor (m)
constexpr double land_rise = 8.0;     // extra height at half a domain from the valley (m)
constexpr double channel_depth = 1.5;

// Manning n per landform; the friction coefficient is n^2 (see the solver's friction law).
constexpr double manning_n[4] = {0.030, 0.035, 0.045, 0.060};

double smoothstep(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

struct Valley {
    double ly, lx, amp, freq, phase, half_width;
    double centre(double x) const { return 0.5 * ly + amp * std::sin(2.0 * std::numbers::pi * freq * x / lx + phase); }
    double floor(double x) const { return 0.6 * (1.0 - x / lx); }
};

struct Segment {
    double x0, y0, x1, y1;  // junction -> head
    /// (distance, parameter along the segment in [0, 1])
    std::pair<double, double> locate(double x, double y) const {
        const double ex = x1 - x0, ey = y1 - y0;
        const double len2 = ex * ex + ey * ey;
        const double s = len2 > 0.0 ? std::clamp(((x - x0) * ex + (y - y0) * ey) / len2, 0.0, 1.0) : 0.0;
        const double px = x0 + s * ex, py = y0 + s * ey;
        return {std::hypot(x - px, y - py), s};
    }
};

}  // namespace

Landscape make_landscape(std::uint64_t seed, const GridSpec& g) {
    g.validate();
    Rng rng(seed, {terrain_tag});
    const double lx = g.nx * g.dx, ly = g.ny * g.dy;

    Valley v{};
    v.lx = lx;
    v.ly = ly;
    v.amp = rng.uniform(0.08, 0.14) * ly;
    v.freq = rng.uniform(0.7, 1.3);
    v.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    v.half_width = std::max(1.5 * g.dy, 0.05 * ly);

    struct Wave {
        double a, kx, ky, ph;
    };
    std::vector<Wave> hills(4);
    for (auto& w : hills) {
        w.a = rng.uniform(0.2, 0.5);
        w.kx = 2.0 * std::numbers::pi * rng.uniform(1.0, 3.0) / lx;
        w.ky = 2.0 * std::numbers::pi * rng.uniform(1.0, 3.0) / ly;
        w.ph = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }

    // Centreline sampled finely for distance queries.
    const int samples = 8 * g.nx;
    std::vector<double> cx(samples + 1), cy(samples + 1);
    for (int k = 0; k <= samples; ++k) {
        cx[k] = lx * k / samples;
        cy[k] = v.centre(cx[k]);
    }
    auto valley_distance = [&](double x, double y) {
        double best = std::abs(y - v.centre(x));
        for (int k = 0; k < samples; ++k) {
            const double ex = cx[k + 1] - cx[k], ey = cy[k + 1] - cy[k];
            const double s = std::clamp(((x - cx[k]) * ex + (y - cy[k]) * ey) / (ex * ex + ey * ey), 0.0, 1.0);
            best = std::min(best, std::hypot(x - cx[k] - s * ex, y - cy[k] - s * ey));
        }
        return best;
    };
    // Smooth surface without hills: valley cross-section and rising land.
    auto smooth_surface = [&](double x, double d) {
        const double fl = v.floor(x);
        if (d <= v.half_width) return fl + (bank_height - fl) * smoothstep((d / v.half_width - 0.5) / 0.5);
        return bank_height + land_rise * std::pow((d - v.half_width) / (0.5 * ly), 1.2);
    };

    // Tributaries alternate sides and spread along the valley.
    const int n_trib = 3 + static_cast<int>(rng.index(2));
    const double first_side = rng.uniform() < 0.5 ? 1.0 : -1.0;
    std::vector<Segment> tribs;
    for (int k = 0; k < n_trib; ++k) {
        const double side = (k % 2 == 0) ? first_side : -first_side;
        const double xj = lx * (0.12 + 0.76 * (k + rng.uniform(0.25, 0.75)) / n_trib);
        const double yj = v.centre(xj);
        const double xh = std::clamp(xj + rng.uniform(-0.08, 0.08) * lx, 2.5 * g.dx, lx - 2.5 * g.dx);
        const double yh = std::clamp(yj + side * rng.uniform(0.30, 0.42) * ly, 2.5 * g.dy, ly - 2.5 * g.dy);
        tribs.push_back({xj, yj, xh, yh});
    }
    const double channel_half = 1.25 * std::max(g.dx, g.dy);

    Field z(g.cells()), eta(g.cells());
    std::vector<int> form(g.cells());
    for (int j = 0; j < g.ny; ++j) {
        for (int i = 0; i < g.nx; ++i) {
            const double x = (i + 0.5) * g.dx, y = (j + 0.5) * g.dy;
            const double d = valley_distance(x, y);
            double zz = smooth_surface(x, d);
            if (d > v.half_width) {
                double hill = 0.0;
                for (const auto& w : hills) hill += w.a * (0.5 + 0.5 * std::sin(w.kx * x + w.ky * y + w.ph));
                zz += hill * std::clamp((d - v.half_width) / (2.0 * v.half_width), 0.0, 1.0);
            }
            bool carved = false;
            for (const auto& t : tribs) {
                const auto [dc, s] = t.locate(x, y);
                if (dc >= channel_half) continue;
                const double qx = t.x0 + s * (t.x1 - t.x0), qy = t.y0 + s * (t.y1 - t.y0);
                const double bed = std::max(smooth_surface(qx, valley_distance(qx, qy)), bank_height) - channel_depth;
                const double zc = bed + channel_depth * (dc / channel_half) * (dc / channel_half);
                if (zc < zz) {
                    zz = zc;
                    carved = true;
                }
            }
            const std::size_t c = g.index(i, j);
            z[c] = zz;
            int lf;
            if (d < 0.75 * v.half_width) {
                lf = river;
            } else if (carved) {
                lf = channel;
            } else if (zz < bank_height + 1.0) {
                lf = floodplain;
            } else {
                lf = upland;
            }
            form[c] = lf;
            eta[c] = manning_n[lf] * manning_n[lf];
        }
    }

    Landscape land{Terrain(g, z, eta), form, bank_height, {}, {}, {}};
    auto to_cell = [&](double x, double y) {
        const int i = std::clamp(static_cast<int>(std::floor(x / g.dx)), 1, g.nx - 2);
        const int j = std::clamp(static_cast<int>(std::floor(y / g.dy)), 1, g.ny - 2);
        return g.index(i, j);
    };
    for (int i = 1; i < g.nx - 1; ++i) {
        const double x = (i + 0.5) * g.dx;
        land.valley_path.push_back(to_cell(x, v.centre(x)));
        land.valley_halfwidth.push_back(v.half_width / g.dy);
    }
    const int head_i = std::min(2, g.nx - 2);
    land.inflow_sites.push_back(to_cell((head_i + 0.5) * g.dx, v.centre((head_i + 0.5) * g.dx)));
    for (const auto& t : tribs) {
        // One cell back from the head, inside the carved channel.
        const double len = std::hypot(t.x1 - t.x0, t.y1 - t.y0);
        const double back = len > 0.0 ? std::min(1.0, std::max(g.dx, g.dy) / len) : 0.0;
        land.inflow_sites.push_back(to_cell(t.x1 - back * (t.x1 - t.x0), t.y1 - back * (t.y1 - t.y0)));
    }
    return land;
}

Terrain synth_terrain(std::uint64_t seed, const GridSpec& grid) { return make_landscape(seed, grid).terrain; }

std::vector<int> subarea_map(const GridSpec& g, int k) {
    if (k < 1) fail(ErrorCategory::invalid_argument, "need at least one sub-area");
    const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(k))));
    const int rows = (k + cols - 1) / cols;
    std::vector<int> map(g.cells());
    for (int j = 0; j < g.ny; ++j) {
        for (int i = 0; i < g.nx; ++i) {
            const int c = std::min(cols - 1, i * cols / g.nx);
            const int r = std::min(rows - 1, j * rows / g.ny);
            map[g.index(i, j)] = std::min(k - 1, r * cols + c);
        }
    }
    return map;
}

// ---------------------------------------------------------------------------
// Forcing
// ---------------------------------------------------------------------------

ForcingPlan scenario_forcing(const ScenarioConfig& cfg, const Landscape& land, std::uint64_t index) {
    const GridSpec& g = cfg.grid;
    Rng rng(cfg.seed, {forcing_tag, index});
    ForcingPlan f;
    f.boundary_level = rng.uniform(cfg.boundary_level_lo, cfg.boundary_level_hi);
    f.subarea_map = subarea_map(g, cfg.n_subareas);
    f.n_subareas = cfg.n_subareas;
    f.interval = cfg.forcing_interval;
    f.duration = cfg.horizon;
    const int n_int = std::max(1, static_cast<int>(std::ceil(cfg.horizon / cfg.forcing_interval - 1e-9)));

    RainPattern pattern = cfg.rain_pattern;
    double amount = 1.0;
    if (pattern == RainPattern::mixed) {
        pattern = static_cast<RainPattern>(rng.index(3));
        amount = rng.uniform(0.25, 1.0);
    }
    const double h = cfg.horizon;
    f.rain.assign(static_cast<std::size_t>(n_int), std::vector<double>(static_cast<std::size_t>(cfg.n_subareas), 0.0));
    for (int s = 0; s < cfg.n_subareas; ++s) {
        if (pattern == RainPattern::constant) {
            for (int k = 0; k < n_int; ++k) f.rain[k][s] = amount * cfg.rain_scale;
            continue;
        }
        const double peak = amount * cfg.rain_scale * rng.uniform(0.3, 1.0);
        if (pattern == RainPattern::pulse) {
            const double start = rng.uniform(0.0, 0.6) * h;
            const double stop = start + rng.uniform(0.15, 0.4) * h;
            for (int k = 0; k < n_int; ++k) {
                const double mid = (k + 0.5) * cfg.forcing_interval;
                f.rain[k][s] = (mid >= start && mid < stop) ? peak : 0.0;
            }
        } else {
            const double tp = rng.uniform(0.2, 0.8) * h;
            for (int k = 0; k < n_int; ++k) {
                const double mid = (k + 0.5) * cfg.forcing_interval;
                const double w = mid <= tp ? mid / tp : std::max(0.0, (h - mid) / (h - tp));
                f.rain[k][s] = peak * w;
            }
        }
    }

    const double inflow_amount = cfg.rain_pattern == RainPattern::mixed ? rng.uniform(0.3, 1.0) : 1.0;
    const int n_in = std::min<int>(cfg.inflow_count, static_cast<int>(land.inflow_sites.size()));
    for (int q = 0; q < n_in; ++q) {
        InflowPoint p;
        p.cell = land.inflow_sites[static_cast<std::size_t>(q)];
        const double base = inflow_amount * cfg.inflow_scale * rng.uniform(0.1, 0.3);
        const double peak = inflow_amount * cfg.inflow_scale * rng.uniform(0.4, 1.0);
        const double tp = rng.uniform(0.1, 0.9) * h;
        const double width = rng.uniform(0.15, 0.4) * h;
        for (int k = 0; k < n_int; ++k) {
            const double mid = (k + 0.5) * cfg.forcing_interval;
            p.discharge.push_back(base + peak * std::max(0.0, 1.0 - std::abs(mid - tp) / width));
        }
        f.inflows.push_back(std::move(p));
    }
    f.validate(g);
    return f;
}

Scenario sample_scenario(const ScenarioConfig& cfg, std::uint64_t index) {
    cfg.validate();
    const Landscape land = make_landscape(cfg.seed, cfg.grid);
    ForcingPlan forcing = scenario_forcing(cfg, land, index);

    FlowState state = FlowState::lake_at_rest(land.terrain, *forcing.boundary_level);
    if (cfg.spinup > 0.0) {
        ForcingPlan spin = ForcingPlan::none(cfg.grid, cfg.spinup);
        spin.boundary_level = forcing.boundary_level;
        spin.interval = cfg.spinup;
        for (const auto& p : forcing.inflows) spin.inflows.push_back({p.cell, {p.discharge.front()}});
        const auto snaps = swe::run(state, land.terrain, spin, cfg.solver, cfg.spinup, cfg.spinup);
        state = snaps.back().with_time(0.0);
    }
    return {land.terrain, std::move(state), std::move(forcing)};
}

// ---------------------------------------------------------------------------
// Pairs
// ---------------------------------------------------------------------------

std::pair<Field, Field> mean_forcing_fields(const ForcingPlan& forcing, const GridSpec& g, double t0, double t1) {
    const double span = t1 - t0;
    if (!(span > 0.0)) fail(ErrorCategory::invalid_argument, "forcing window must have positive length");
    std::vector<double> rate(static_cast<std::size_t>(forcing.n_subareas));
    for (int k = 0; k < forcing.n_subareas; ++k) rate[k] = forcing.rain_depth(k, t0, t1) / span;
    Field rain(g.cells()), inflow(g.cells(), 0.0);
    for (std::size_t c = 0; c < g.cells(); ++c) rain[c] = rate[static_cast<std::size_t>(forcing.subarea_map[c])];
    for (std::size_t q = 0; q < forcing.inflows.size(); ++q) {
        inflow[forcing.inflows[q].cell] += forcing.inflow_volume(q, t0, t1) / span / g.cell_area();
    }
    return {std::move(rain), std::move(inflow)};
}

std::vector<float> make_input(const FlowState& state, const ForcingPlan& forcing, double lead_time) {
    const GridSpec& g = state.grid();
    const std::size_t n = g.cells();
    const auto [rain, inflow] = mean_forcing_fields(forcing, g, state.time(), state.time() + lead_time);
    std::vector<float> in(input_channels * n);
    for (std::size_t c = 0; c < n; ++c) {
        in[c] = static_cast<float>(state.h()[c]);
        in[n + c] = static_cast<float>(state.qx()[c]);
        in[2 * n + c] = static_cast<float>(state.qy()[c]);
        in[3 * n + c] = static_cast<float>(inflow[c]);
        in[4 * n + c] = static_cast<float>(rain[c]);
    }
    return in;
}

std::vector<TrainingSample> extract_pairs(const std::vector<FlowState>& snaps, const ForcingPlan& forcing,
                                          double lead_time, std::int64_t scenario_id) {
    std::vector<TrainingSample> out;
    if (snaps.size() < 2) return out;
    const double spacing = snaps[1].time() - snaps[0].time();
    if (!(spacing > 0.0)) fail(ErrorCategory::invalid_argument, "snapshots must advance in time");
    for (std::size_t k = 1; k < snaps.size(); ++k) {
        if (std::abs(snaps[k].time() - snaps[k - 1].time() - spacing) > 1e-9 * spacing) {
            fail(ErrorCategory::invalid_argument, "snapshots are not evenly spaced");
        }
    }
    const long lead = std::lround(lead_time / spacing);
    if (lead < 1 || std::abs(lead * spacing - lead_time) > 1e-9 * lead_time) {
        fail(ErrorCategory::invalid_argument, "lead time is not a multiple of the snapshot spacing");
    }
    const GridSpec& g = snaps[0].grid();
    const std::size_t n = g.cells();
    for (std::size_t k = 0; k + static_cast<std::size_t>(lead) < snaps.size(); ++k) {
        const FlowState& a = snaps[k];
        const FlowState& b = snaps[k + static_cast<std::size_t>(lead)];
        TrainingSample s;
        s.grid = g;
        s.scenario = scenario_id;
        s.time = a.time();
        s.input = make_input(a, forcing, lead_time);
        s.target.resize(target_channels * n);
        for (std::size_t c = 0; c < n; ++c) {
            s.target[c] = static_cast<float>(b.h()[c]);
            s.target[n + c] = static_cast<float>(b.qx()[c]);
            s.target[2 * n + c] = static_cast<float>(b.qy()[c]);
        }
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

void write_sample(const fs::path& path, const TrainingSample& s) {
    const std::size_t ny = static_cast<std::size_t>(s.grid.ny), nx = static_cast<std::size_t>(s.grid.nx);
    const std::vector<NamedArray> arrays{
        {"input", {input_channels, ny, nx}, s.input},
        {"target", {target_channels, ny, nx}, s.target},
        {"scenario", {1}, {static_cast<float>(s.scenario)}},
        {"time", {1}, {static_cast<float>(s.time)}},
    };
    write_array_file(path, s.grid, arrays);
}

TrainingSample read_sample(const fs::path& path) {
    const ArrayFile f = read_array_file(path);
    TrainingSample s;
    s.grid = f.grid;
    const std::size_t n = f.grid.cells();
    const NamedArray& in = f.get("input");
    const NamedArray& tg = f.get("target");
    if (in.values.size() != input_channels * n || tg.values.size() != target_channels * n) {
        fail(ErrorCategory::size_mismatch, path.string() + ": sample channels do not match the grid");
    }
    s.input = in.values;
    s.target = tg.values;
    s.scenario = static_cast<std::int64_t>(f.get("scenario").values.at(0));
    s.time = f.get("time").values.at(0);
    return s;
}

void write_run(const fs::path& path, const std::vector<FlowState>& snaps) {
    if (snaps.empty()) fail(ErrorCategory::invalid_argument, "empty run");
    const GridSpec& g = snaps[0].grid();
    const std::size_t n = g.cells(), m = snaps.size();
    NamedArray h{"h", {m, static_cast<std::size_t>(g.ny), static_cast<std::size_t>(g.nx)}, {}};
    NamedArray qx{"qx", h.shape, {}}, qy{"qy", h.shape, {}}, t{"time", {m}, {}};
    for (const auto& s : snaps) {
        require_same_grid(s.grid(), g, "write_run");
        for (std::size_t c = 0; c < n; ++c) {
            h.values.push_back(static_cast<float>(s.h()[c]));
            qx.values.push_back(static_cast<float>(s.qx()[c]));
            qy.values.push_back(static_cast<float>(s.qy()[c]));
        }
        t.values.push_back(static_cast<float>(s.time()));
    }
    const std::vector<NamedArray> arrays{h, qx, qy, t};
    write_array_file(path, g, arrays);
}

std::vector<FlowState> read_run(const fs::path& path) {
    const ArrayFile f = read_array_file(path);
    const GridSpec& g = f.grid;
    const std::size_t n = g.cells();
    const auto& t = f.get("time").values;
    const auto& h = f.get("h").values;
    const auto& qx = f.get("qx").values;
    const auto& qy = f.get("qy").values;
    if (h.size() != t.size() * n || qx.size() != h.size() || qy.size() != h.size()) {
        fail(ErrorCategory::size_mismatch, path.string() + ": run arrays do not match");
    }
    std::vector<FlowState> out;
    for (std::size_t k = 0; k < t.size(); ++k) {
        const auto off = static_cast<std::ptrdiff_t>(k * n);
        const auto len = static_cast<std::ptrdiff_t>(n);
        Field hh(h.begin() + off, h.begin() + off + len);
        Field ux(qx.begin() + off, qx.begin() + off + len);
        Field uy(qy.begin() + off, qy.begin() + off + len);
        for (std::size_t c = 0; c < n; ++c) {
            if (hh[c] == 0.0) ux[c] = uy[c] = 0.0;
        }
        out.emplace_back(g, std::move(hh), std::move(ux), std::move(uy), t[k]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

namespace {

std::string join_reals(const std::vector<double>& v) {
    std::string out;
    for (double x : v) out += " " + real_text(x);
    return out;
}

std::vector<double> parse_reals(std::istringstream& in) {
    std::vector<double> v;
    std::string tok;
    while (in >> tok) {
        try {
            std::size_t used = 0;
            v.push_back(std::stod(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            fail(ErrorCategory::malformed_header, "manifest: bad number '" + tok + "'");
        }
    }
    return v;
}

}  // namespace

std::string Manifest::to_text() const {
    std::ostringstream o;
    o << "FLOODMANIFEST 1\n";
    o << "grid " << grid.nx << " " << grid.ny << " " << real_text(grid.dx) << " " << real_text(grid.dy) << "\n";
    o << "config_begin\n" << config_text << "config_end\n";
    o << "input_mean" << join_reals(input_stats.mean) << "\n";
    o << "input_std" << join_reals(input_stats.std) << "\n";
    o << "target_mean" << join_reals(target_stats.mean) << "\n";
    o << "target_std" << join_reals(target_stats.std) << "\n";
    for (const auto& s : scenarios) {
        o << "scenario " << s.index << " " << (s.ok ? "ok" : "failed") << " " << (s.holdout ? "holdout" : "pairs") << " "
          << (s.file.empty() ? "-" : s.file);
        if (!s.ok) o << " " << s.reason;
        o << "\n";
    }
    o << "train_count " << train.size() << "\n";
    o << "val_count " << val.size() << "\n";
    for (const auto& f : train) o << "train " << f << "\n";
    for (const auto& f : val) o << "val " << f << "\n";
    o << "end\n";
    return o.str();
}

Manifest Manifest::parse(const std::string& text) {
    Manifest m;
    std::istringstream in(text);
    std::string line;
    auto bad = [](const std::string& why) { fail(ErrorCategory::malformed_header, "manifest: " + why); };
    if (!std::getline(in, line) || line != "FLOODMANIFEST 1") bad("missing magic line");
    long train_count = -1, val_count = -1;
    bool ended = false;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "grid") {
            if (!(ls >> m.grid.nx >> m.grid.ny >> m.grid.dx >> m.grid.dy)) bad("bad grid line");
        } else if (key == "config_begin") {
            bool closed = false;
            while (std::getline(in, line)) {
                if (line == "config_end") {
                    closed = true;
                    break;
                }
                m.config_text += line + "\n";
            }
            if (!closed) bad("unterminated config block");
        } else if (key == "input_mean") {
            m.input_stats.mean = parse_reals(ls);
        } else if (key == "input_std") {
            m.input_stats.std = parse_reals(ls);
        } else if (key == "target_mean") {
            m.target_stats.mean = parse_reals(ls);
        } else if (key == "target_std") {
            m.target_stats.std = parse_reals(ls);
        } else if (key == "scenario") {
            ScenarioRecord r;
            std::string status, kind;
            if (!(ls >> r.index >> status >> kind >> r.file)) bad("bad scenario line");
            r.ok = status == "ok";
            r.holdout = kind == "holdout";
            if (r.file == "-") r.file.clear();
            std::getline(ls >> std::ws, r.reason);
            m.scenarios.push_back(r);
        } else if (key == "train_count") {
            ls >> train_count;
        } else if (key == "val_count") {
            ls >> val_count;
        } else if (key == "train" || key == "val") {
            std::string f;
            if (!(ls >> f)) bad("bad sample line");
            (key == "train" ? m.train : m.val).push_back(f);
        } else if (key == "end") {
            ended = true;
            break;
        } else if (!key.empty()) {
            bad("unknown entry '" + key + "'");
        }
    }
    if (!ended) bad("missing end line");
    if (train_count != static_cast<long>(m.train.size()) || val_count != static_cast<long>(m.val.size())) {
        bad("sample counts do not match the listed files");
    }
    if (m.input_stats.mean.size() != input_channels || m.input_stats.std.size() != input_channels ||
        m.target_stats.mean.size() != target_channels || m.target_stats.std.size() != target_channels) {
        bad("channel statistics have the wrong length");
    }
    return m;
}

void write_manifest(const fs::path& path, const Manifest& m) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(ErrorCategory::io, "cannot write manifest '" + path.string() + "'");
    f << m.to_text();
    if (!f) fail(ErrorCategory::io, "write failed for '" + path.string() + "'");
}

Manifest read_manifest(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorCategory::io, "cannot read manifest '" + path.string() + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return Manifest::parse(ss.str());
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

namespace {

/// Count, mean and centred sum of squares; merged pairwise.
struct Moments {
    double n = 0.0, mean = 0.0, m2 = 0.0;

    static Moments of(const float* v, std::size_t count) {
        Moments m;
        m.n = static_cast<double>(count);
        double s = 0.0;
        for (std::size_t i = 0; i < count; ++i) s += v[i];
        m.mean = s / m.n;
        for (std::size_t i = 0; i < count; ++i) {
            const double d = v[i] - m.mean;
            m.m2 += d * d;
        }
        return m;
    }

    void merge(const Moments& o) {
        if (o.n == 0.0) return;
        if (n == 0.0) {
            *this = o;
            return;
        }
        const double total = n + o.n;
        const double delta = o.mean - mean;
        mean += delta * o.n / total;
        m2 += o.m2 + delta * delta * n * o.n / total;
        n = total;
    }

    double std() const { return n > 0.0 ? std::sqrt(m2 / n) : 0.0; }
};

struct SampleMoments {
    std::vector<Moments> in, out;
};

std::string sample_name(std::int64_t scenario, std::size_t k) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "samples/s%04lld_t%05zu.ff", static_cast<long long>(scenario), k);
    return buf;
}

std::string run_name(std::int64_t scenario) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "runs/s%04lld.ff", static_cast<long long>(scenario));
    return buf;
}

}  // namespace

Manifest build_dataset(const ScenarioConfig& cfg, int n_scenarios, int n_holdout, const fs::path& out_dir,
                       std::ostream* log) {
    cfg.validate();
    if (n_scenarios < 1 || n_holdout < 0) fail(ErrorCategory::invalid_argument, "scenario counts must be positive");
    fs::create_directories(out_dir / "samples");
    fs::create_directories(out_dir / "runs");

    Manifest m;
    m.grid = cfg.grid;
    m.config_text = cfg.to_config().to_text();
    std::vector<std::string> names;
    std::map<std::string, SampleMoments> moments;
    const std::size_t n = cfg.grid.cells();

    for (int s = 0; s < n_scenarios + n_holdout; ++s) {
        ScenarioRecord rec;
        rec.index = s;
        rec.holdout = s >= n_scenarios;
        try {
            const Scenario sc = sample_scenario(cfg, static_cast<std::uint64_t>(s));
            const auto snaps = swe::run(sc.initial, sc.terrain, sc.forcing, cfg.solver, cfg.horizon, cfg.snapshot_every);
            // Samples are built from the stored (float32) snapshots.
            std::vector<FlowState> stored;
            stored.reserve(snaps.size());
            for (const auto& st : snaps) stored.push_back(quantize(st));
            rec.file = run_name(s);
            write_run(out_dir / rec.file, stored);
            if (!rec.holdout) {
                const auto pairs = extract_pairs(stored, sc.forcing, cfg.lead_time, s);
                for (std::size_t k = 0; k < pairs.size(); ++k) {
                    const std::string name = sample_name(s, k);
                    write_sample(out_dir / name, pairs[k]);
                    SampleMoments sm;
                    for (int ch = 0; ch < input_channels; ++ch) sm.in.push_back(Moments::of(&pairs[k].input[ch * n], n));
                    for (int ch = 0; ch < target_channels; ++ch) sm.out.push_back(Moments::of(&pairs[k].target[ch * n], n));
                    moments.emplace(name, std::move(sm));
                    names.push_back(name);
                }
            }
            if (log) *log << "scenario " << s << ": " << snaps.size() << " snapshots" << (rec.holdout ? " (held out)" : "") << "\n";
        } catch (const Error& e) {
            rec.ok = false;
            rec.file.clear();
            rec.reason = std::string(category_name(e.category())) + ": " + e.what();
            for (char& ch : rec.reason) {
                if (ch == '\n') ch = ' ';
            }
            if (log) *log << "scenario " << s << " failed: " << rec.reason << "\n";
        }
        m.scenarios.push_back(rec);
    }
    if (names.empty()) fail(ErrorCategory::divergence, "every training scenario failed");

    Rng rng(cfg.seed, {shuffle_tag});
    rng.shuffle(names);
    const std::size_t n_val = (names.size() + 3) / 6;
    m.train.assign(names.begin(), names.end() - static_cast<std::ptrdiff_t>(n_val));
    m.val.assign(names.end() - static_cast<std::ptrdiff_t>(n_val), names.end());

    std::vector<Moments> in(input_channels), out(target_channels);
    for (const auto& name : m.train) {
        const auto& sm = moments.at(name);
        for (int ch = 0; ch < input_channels; ++ch) in[ch].merge(sm.in[ch]);
        for (int ch = 0; ch < target_channels; ++ch) out[ch].merge(sm.out[ch]);
    }
    for (const auto& mo : in) {
        m.input_stats.mean.push_back(mo.mean);
        m.input_stats.std.push_back(mo.std());
    }
    for (const auto& mo : out) {
        m.target_stats.mean.push_back(mo.mean);
        m.target_stats.std.push_back(mo.std());
    }
    write_manifest(out_dir / "manifest.txt", m);
    return m;
}

}  // namespace flood::scenario
