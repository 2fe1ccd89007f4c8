#pragma once

#include <array>
#include <utility>
#include <vector>

#include "flood/field.hpp"

/// Second-order central-upwind finite-volume integrator for the 2D shallow water equations
/// on a raster grid: hydrostatic reconstruction of the free surface for well-balancing,
/// minmod-limited piecewise-linear states, two-stage SSP Runge-Kutta in time, semi-implicit
/// Manning friction, rain and point inflows as mass sources, and a boundary ring held at a
/// fixed water level (or copied from the interior when no level is given).
namespace flood::swe {

struct SolverParams {
    double g = 9.81;
    double cfl = 0.45;
    double h_eps = 1e-6;
    double theta = 1.3;
    double max_dt = 60.0;

    void validate() const;
};

using Vec3 = std::array<double, 3>;

/// Cartesian fluxes E (x) and G (y) of the conserved variables (h, uh, vh).
std::pair<Vec3, Vec3> physical_flux(double h, double qx, double qy, double g, double h_eps = 1e-6);

/// Manning momentum sink g*h*S_f with S_f = u*eta*|U| / h^(4/3); zero when h <= h_eps.
std::pair<double, double> friction_source(double h, double qx, double qy, double manning, double g, double h_eps);

/// Per-cell gravity source of the well-balanced discretization: the centred bed term plus
/// the hydrostatic face corrections. For water at rest it exactly offsets the pressure part
/// of the face fluxes.
std::pair<Field, Field> bed_slope_source(const Terrain& terrain, const FlowState& state, const SolverParams& params);

/// Net rate of change of (h, qx, qy) from fluxes and bed source, before positivity
/// limiting, friction and forcing. Ring cells report zero.
std::array<Field, 3> flux_divergence(const Terrain& terrain, const FlowState& state, const SolverParams& params);

/// Largest explicit step allowed by the CFL condition, capped at max_dt.
double stable_dt(const FlowState& state, const SolverParams& params);

/// Volume bookkeeping for one step or an accumulated run (m^3).
struct VolumeBudget {
    double forcing_in = 0.0;     // rain + inflow added to interior cells
    double boundary_out = 0.0;   // net flux from the interior into the boundary ring

    VolumeBudget& operator+=(const VolumeBudget& o) {
        forcing_in += o.forcing_in;
        boundary_out += o.boundary_out;
        return *this;
    }
};

/// One explicit step. Throws cfl_violation if dt exceeds stable_dt(state).
FlowState step(const FlowState& state, const Terrain& terrain, const ForcingPlan& forcing,
               const SolverParams& params, double dt, VolumeBudget* budget = nullptr);

/// Sets the ring to h = max(0, level - z) with momentum copied from the nearest interior
/// cell (zero where the ring cell is dry).
FlowState apply_dirichlet_boundary(const FlowState& state, const Terrain& terrain, double level);

/// Copies depth and momentum from the nearest interior cell onto the ring.
FlowState apply_transmissive_boundary(const FlowState& state);

/// Cumulative budget at a snapshot time.
struct SnapshotBudget {
    double time = 0.0;
    double volume = 0.0;
    VolumeBudget total;
};

/// Integrates to absolute time t_end, returning snapshots at state0.time + k*snapshot_every
/// (steps are shortened to land on them) and at t_end. The first snapshot is state0.
std::vector<FlowState> run(const FlowState& state0, const Terrain& terrain, const ForcingPlan& forcing,
                           const SolverParams& params, double t_end, double snapshot_every,
                           std::vector<SnapshotBudget>* budget = nullptr, std::size_t* steps_taken = nullptr);

}  // namespace flood::swe
