#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flood/error.hpp"

namespace flood {

using Field = std::vector<double>;

/// Regular raster geometry. Cell (i, j) has i along x and j along y; storage is row-major
/// in y, so index = j * nx + i. The outermost ring of cells is the boundary layer.
struct GridSpec {
    int nx = 64;
    int ny = 64;
    double dx = 50.0;
    double dy = 50.0;

    std::size_t cells() const { return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny); }
    std::size_t index(int i, int j) const {
        return static_cast<std::size_t>(j) * static_cast<std::size_t>(nx) + static_cast<std::size_t>(i);
    }
    double cell_area() const { return dx * dy; }
    bool on_ring(int i, int j) const { return i == 0 || j == 0 || i == nx - 1 || j == ny - 1; }
    bool on_ring(std::size_t cell) const {
        return on_ring(static_cast<int>(cell % static_cast<std::size_t>(nx)),
                       static_cast<int>(cell / static_cast<std::size_t>(nx)));
    }

    /// Throws invalid_argument unless nx, ny >= 3 and dx, dy > 0.
    void validate() const;

    bool operator==(const GridSpec&) const = default;
};

void require_same_grid(const GridSpec& a, const GridSpec& b, const char* what);

/// Bed elevation z and friction coefficient per cell.
class Terrain {
public:
    Terrain(GridSpec grid, Field elevation, Field manning);

    /// Flat bed at elevation `z` with uniform friction.
    static Terrain flat(const GridSpec& grid, double z = 0.0, double manning = 0.0);

    const GridSpec& grid() const { return grid_; }
    const Field& elevation() const { return elevation_; }
    const Field& manning() const { return manning_; }

private:
    GridSpec grid_;
    Field elevation_;
    Field manning_;
};

/// Conserved variables (h, uh, vh) on the raster. Constructors reject negative depth and
/// momentum in cells with h == 0.
class FlowState {
public:
    FlowState(GridSpec grid, Field h, Field qx, Field qy, double time);

    /// Dry, motionless state.
    explicit FlowState(const GridSpec& grid, double time = 0.0);

    /// Still water with free surface `level` over `terrain` (h = max(0, level - z)).
    static FlowState lake_at_rest(const Terrain& terrain, double level, double time = 0.0);

    const GridSpec& grid() const { return grid_; }
    const Field& h() const { return h_; }
    const Field& qx() const { return qx_; }
    const Field& qy() const { return qy_; }
    double time() const { return time_; }

    FlowState with_time(double t) const;

    /// Water volume over the interior cells (the ring is boundary data, not domain).
    double interior_volume() const;

    /// Throws invalid_argument if any invariant is broken.
    static void check(const GridSpec& grid, const Field& h, const Field& qx, const Field& qy, double time);

private:
    GridSpec grid_;
    Field h_;
    Field qx_;
    Field qy_;
    double time_ = 0.0;
};

/// Point discharge into one interior cell, piecewise constant per forcing interval.
struct InflowPoint {
    std::size_t cell = 0;
    std::vector<double> discharge;  // m^3/s
};

/// Time-dependent inputs of a scenario. Series are piecewise constant over `interval`
/// seconds; beyond the last entry the last value is held.
struct ForcingPlan {
    std::vector<int> subarea_map;             // one entry per cell, values in [0, n_subareas)
    int n_subareas = 1;
    double interval = 300.0;
    std::vector<std::vector<double>> rain;    // rain[k][subarea], m/s
    std::vector<InflowPoint> inflows;
    std::optional<double> boundary_level;     // nullopt: transmissive ring
    double duration = 0.0;

    /// No rain, no inflow, transmissive boundary.
    static ForcingPlan none(const GridSpec& grid, double duration);

    double rain_rate(int subarea, double t) const;
    double discharge(std::size_t inflow, double t) const;

    /// Exact integrals of the piecewise-constant series over [t0, t1].
    double rain_depth(int subarea, double t0, double t1) const;
    double inflow_volume(std::size_t inflow, double t0, double t1) const;

    void validate(const GridSpec& grid) const;
};

/// Integral over [t0, t1] of a series holding values[k] on [k*interval, (k+1)*interval).
double piecewise_integral(std::span<const double> values, double interval, double t0, double t1);

/// Desingularized velocity q -> u: 2 h q / (h^2 + max(h, h_eps)^2); zero when h == 0.
inline double desingularized_velocity(double h, double q, double h_eps) {
    if (h <= 0.0) return 0.0;
    const double hm = h > h_eps ? h : h_eps;
    return 2.0 * h * q / (h * h + hm * hm);
}

std::pair<Field, Field> velocity(const FlowState& state, double h_eps);

// ---------------------------------------------------------------------------
// Field files
//
// ASCII header followed by a little-endian float32 payload:
//
//   FLOODFIELD 1
//   grid <nx> <ny> <dx> <dy>
//   fields <count>
//   <name> <rank> <d0> ... <d(rank-1)>      (one line per field)
//   data
//   <payload: fields concatenated in header order>
// ---------------------------------------------------------------------------

struct NamedArray {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<float> values;

    std::size_t size() const;
};

struct ArrayFile {
    GridSpec grid;
    std::vector<NamedArray> arrays;

    const NamedArray& get(const std::string& name) const;
    bool has(const std::string& name) const;
};

void write_array_file(const std::filesystem::path& path, const GridSpec& grid, std::span<const NamedArray> arrays);
ArrayFile read_array_file(const std::filesystem::path& path);

/// Grid-shaped fields (each exactly nx*ny values).
struct NamedField {
    std::string name;
    std::vector<float> values;
};

void write_field_file(const std::filesystem::path& path, std::span<const NamedField> fields, const GridSpec& grid);
std::pair<GridSpec, std::vector<NamedField>> read_field_file(const std::filesystem::path& path);

std::vector<float> to_float(const Field& f);
Field to_double(std::span<const float> f);

/// State as fields h, qx, qy plus a one-element `time` array. Values are rounded to float32.
void write_state_file(const std::filesystem::path& path, const FlowState& state);
FlowState read_state_file(const std::filesystem::path& path);

/// The state with every field rounded through float32, as it would be stored on disk.
FlowState quantize(const FlowState& state);

}  // namespace flood
