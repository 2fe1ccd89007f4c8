#include "flood/swe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace flood::swe {

void SolverParams::validate() const {
    if (!(g > 0.0)) fail(ErrorCategory::invalid_argument, "gravity must be positive");
    if (!(cfl > 0.0 && cfl <= 1.0)) fail(ErrorCategory::invalid_argument, "cfl must lie in (0, 1]");
    if (!(h_eps > 0.0)) fail(ErrorCategory::invalid_argument, "h_eps must be positive");
    if (!(theta >= 1.0 && theta <= 2.0)) fail(ErrorCategory::invalid_argument, "theta must lie in [1, 2]");
    if (!(max_dt > 0.0)) fail(ErrorCategory::invalid_argument, "max_dt must be positive");
}

std::pair<Vec3, Vec3> physical_flux(double h, double qx, double qy, double g, double h_eps) {
    const double u = desingularized_velocity(h, qx, h_eps);
    const double v = desingularized_velocity(h, qy, h_eps);
    const double p = 0.5 * g * h * h;
    const double hu = h * u;
    const double hv = h * v;
    return {Vec3{hu, hu * u + p, hu * v}, Vec3{hv, hu * v, hv * v + p}};
}

std::pair<double, double> friction_source(double h, double qx, double qy, double manning, double g, double h_eps) {
    if (h <= h_eps) return {0.0, 0.0};
    const double u = desingularized_velocity(h, qx, h_eps);
    const double v = desingularized_velocity(h, qy, h_eps);
    const double speed = std::sqrt(u * u + v * v);
    // g h S_f with S_f = u eta |U| / h^(4/3)
    const double k = g * h * manning * speed / std::pow(h, 4.0 / 3.0);
    return {k * u, k * v};
}

namespace {

inline double minmod(double a, double b, double c) {
    if (a > 0.0 && b > 0.0 && c > 0.0) return std::min(a, std::min(b, c));
    if (a < 0.0 && b < 0.0 && c < 0.0) return std::max(a, std::max(b, c));
    return 0.0;
}

/// One-sided reconstructed values of a cell at a face.
struct FaceSide {
    double h, w, qn, qt;
};

struct FaceFlux {
    double mass, normal, tangential;
    double corr_left, corr_right;  // hydrostatic pressure corrections for each adjacent cell
};

/// Central-upwind flux between hydrostatically reconstructed states.
inline FaceFlux central_upwind(const FaceSide& L, const FaceSide& R, double g, double h_eps) {
    const double zl = L.w - L.h;
    const double zr = R.w - R.h;
    const double zs = std::max(zl, zr);
    const double hl = std::max(0.0, L.w - zs);
    const double hr = std::max(0.0, R.w - zs);

    const double ul = hl > 0.0 ? desingularized_velocity(L.h, L.qn, h_eps) : 0.0;
    const double vl = hl > 0.0 ? desingularized_velocity(L.h, L.qt, h_eps) : 0.0;
    const double ur = hr > 0.0 ? desingularized_velocity(R.h, R.qn, h_eps) : 0.0;
    const double vr = hr > 0.0 ? desingularized_velocity(R.h, R.qt, h_eps) : 0.0;

    FaceFlux f{};
    f.corr_left = 0.5 * g * (L.h * L.h - hl * hl);
    f.corr_right = 0.5 * g * (R.h * R.h - hr * hr);

    const double cl = std::sqrt(g * hl);
    const double cr = std::sqrt(g * hr);
    const double ap = std::max(std::max(ul + cl, ur + cr), 0.0);
    const double am = std::min(std::min(ul - cl, ur - cr), 0.0);
    const double span = ap - am;
    if (span <= std::numeric_limits<double>::min()) return f;

    const double ml = hl * ul;
    const double mr = hr * ur;
    const double nl = ml * ul + 0.5 * g * hl * hl;
    const double nr = mr * ur + 0.5 * g * hr * hr;
    const double tl = ml * vl;
    const double tr = mr * vr;
    const double k = ap * am / span;

    f.mass = (ap * ml - am * mr) / span + k * (hr - hl);
    f.normal = (ap * nl - am * nr) / span + k * (mr - ml);
    f.tangential = (ap * tl - am * tr) / span + k * (hr * vr - hl * vl);
    return f;
}

struct Fields3 {
    Field h, qx, qy;
};

/// Scratch space and the discrete operator. Fluxes are stored per face:
/// x-face (i, j) sits between cells (i, j) and (i+1, j), y-face (i, j) between (i, j) and (i, j+1).
class Operator {
public:
    Operator(const Terrain& terrain, const SolverParams& params)
        : grid_(terrain.grid()), z_(terrain.elevation()), p_(params) {
        const std::size_t n = grid_.cells();
        w_.assign(n, 0.0);
        for (auto* s : {&sxw_, &sxh_, &sxqx_, &sxqy_, &syw_, &syh_, &syqx_, &syqy_}) s->assign(n, 0.0);
        const std::size_t nfx = static_cast<std::size_t>(grid_.nx - 1) * static_cast<std::size_t>(grid_.ny);
        const std::size_t nfy = static_cast<std::size_t>(grid_.nx) * static_cast<std::size_t>(grid_.ny - 1);
        fx_.assign(nfx, FaceFlux{});
        fy_.assign(nfy, FaceFlux{});
        factor_.assign(n, 1.0);
    }

    std::size_t fxi(int i, int j) const { return static_cast<std::size_t>(j) * static_cast<std::size_t>(grid_.nx - 1) + static_cast<std::size_t>(i); }
    std::size_t fyi(int i, int j) const { return static_cast<std::size_t>(j) * static_cast<std::size_t>(grid_.nx) + static_cast<std::size_t>(i); }

    /// Reconstruction and face fluxes for the given state.
    void fluxes(const Fields3& s) {
        const int nx = grid_.nx, ny = grid_.ny;
        const double th = p_.theta;
        const auto& h = s.h;
        for (std::size_t c = 0; c < grid_.cells(); ++c) w_[c] = h[c] + z_[c];

        for (int j = 0; j < ny; ++j) {
            for (int i = 0; i < nx; ++i) {
                const std::size_t c = grid_.index(i, j);
                if (grid_.on_ring(i, j) || h[c] <= 0.0) {
                    sxw_[c] = sxh_[c] = sxqx_[c] = sxqy_[c] = 0.0;
                    syw_[c] = syh_[c] = syqx_[c] = syqy_[c] = 0.0;
                    continue;
                }
                const std::size_t l = c - 1, r = c + 1;
                const std::size_t d = c - static_cast<std::size_t>(nx), u = c + static_cast<std::size_t>(nx);
                auto slope = [th](const Field& a, std::size_t m, std::size_t o, std::size_t p) {
                    return minmod(th * (a[o] - a[m]), 0.5 * (a[p] - a[m]), th * (a[p] - a[o]));
                };
                sxw_[c] = slope(w_, l, c, r);
                sxh_[c] = slope(h, l, c, r);
                sxqx_[c] = slope(s.qx, l, c, r);
                sxqy_[c] = slope(s.qy, l, c, r);
                syw_[c] = slope(w_, d, c, u);
                syh_[c] = slope(h, d, c, u);
                syqx_[c] = slope(s.qx, d, c, u);
                syqy_[c] = slope(s.qy, d, c, u);
            }
        }

        const double g = p_.g, eps = p_.h_eps;
        for (int j = 1; j < ny - 1; ++j) {
            for (int i = 0; i < nx - 1; ++i) {
                const std::size_t a = grid_.index(i, j), b = a + 1;
                const FaceSide L{h[a] + 0.5 * sxh_[a], w_[a] + 0.5 * sxw_[a], s.qx[a] + 0.5 * sxqx_[a], s.qy[a] + 0.5 * sxqy_[a]};
                const FaceSide R{h[b] - 0.5 * sxh_[b], w_[b] - 0.5 * sxw_[b], s.qx[b] - 0.5 * sxqx_[b], s.qy[b] - 0.5 * sxqy_[b]};
                fx_[fxi(i, j)] = central_upwind(L, R, g, eps);
            }
        }
        for (int j = 0; j < ny - 1; ++j) {
            for (int i = 1; i < nx - 1; ++i) {
                const std::size_t a = grid_.index(i, j), b = a + static_cast<std::size_t>(nx);
                const FaceSide L{h[a] + 0.5 * syh_[a], w_[a] + 0.5 * syw_[a], s.qy[a] + 0.5 * syqy_[a], s.qx[a] + 0.5 * syqx_[a]};
                const FaceSide R{h[b] - 0.5 * syh_[b], w_[b] - 0.5 * syw_[b], s.qy[b] - 0.5 * syqy_[b], s.qx[b] - 0.5 * syqx_[b]};
                fy_[fyi(i, j)] = central_upwind(L, R, g, eps);
            }
        }
    }

    /// Scales face fluxes so no interior cell can lose more water than it holds within dt.
    void limit_outflow(const Field& h, double dt) {
        const int nx = grid_.nx, ny = grid_.ny;
        const double rx = dt / grid_.dx, ry = dt / grid_.dy;
        std::fill(factor_.begin(), factor_.end(), 1.0);
        bool any = false;
        for (int j = 1; j < ny - 1; ++j) {
            for (int i = 1; i < nx - 1; ++i) {
                const std::size_t c = grid_.index(i, j);
                const double out_x = std::max(0.0, -fx_[fxi(i - 1, j)].mass) + std::max(0.0, fx_[fxi(i, j)].mass);
                const double out_y = std::max(0.0, -fy_[fyi(i, j - 1)].mass) + std::max(0.0, fy_[fyi(i, j)].mass);
                const double out = rx * out_x + ry * out_y;
                if (out > h[c]) {
                    factor_[c] = h[c] / out;
                    any = true;
                }
            }
        }
        if (!any) return;
        auto scale = [](FaceFlux& f, double k) {
            f.mass *= k;
            f.normal *= k;
            f.tangential *= k;
        };
        for (int j = 1; j < ny - 1; ++j) {
            for (int i = 0; i < nx - 1; ++i) {
                FaceFlux& f = fx_[fxi(i, j)];
                const std::size_t donor = f.mass > 0.0 ? grid_.index(i, j) : grid_.index(i + 1, j);
                if (factor_[donor] < 1.0) scale(f, factor_[donor]);
            }
        }
        for (int j = 0; j < ny - 1; ++j) {
            for (int i = 1; i < nx - 1; ++i) {
                FaceFlux& f = fy_[fyi(i, j)];
                const std::size_t donor = f.mass > 0.0 ? grid_.index(i, j) : grid_.index(i, j + 1);
                if (factor_[donor] < 1.0) scale(f, factor_[donor]);
            }
        }
    }

    /// Centred bed terms for cell c (x and y), using the reconstruction of the last fluxes() call.
    std::pair<double, double> centred_bed_terms(const Field& h, std::size_t c) const {
        const double g = p_.g;
        const double ha = h[c] - 0.5 * sxh_[c], hb = h[c] + 0.5 * sxh_[c];
        const double za = (w_[c] - 0.5 * sxw_[c]) - ha, zb = (w_[c] + 0.5 * sxw_[c]) - hb;
        const double sx = 0.5 * g * (ha + hb) * (za - zb) / grid_.dx;
        const double hc = h[c] - 0.5 * syh_[c], hd = h[c] + 0.5 * syh_[c];
        const double zc = (w_[c] - 0.5 * syw_[c]) - hc, zd = (w_[c] + 0.5 * syw_[c]) - hd;
        const double sy = 0.5 * g * (hc + hd) * (zc - zd) / grid_.dy;
        return {sx, sy};
    }

    /// Rates of change for interior cells from the current face fluxes.
    void rates(const Field& h, Fields3& out) const {
        const int nx = grid_.nx, ny = grid_.ny;
        const double dx = grid_.dx, dy = grid_.dy;
        for (int j = 1; j < ny - 1; ++j) {
            for (int i = 1; i < nx - 1; ++i) {
                const std::size_t c = grid_.index(i, j);
                const FaceFlux& e = fx_[fxi(i, j)];      // east
                const FaceFlux& wst = fx_[fxi(i - 1, j)];  // west
                const FaceFlux& n = fy_[fyi(i, j)];      // north
                const FaceFlux& s = fy_[fyi(i, j - 1)];  // south
                const auto [sx, sy] = centred_bed_terms(h, c);
                out.h[c] = -(e.mass - wst.mass) / dx - (n.mass - s.mass) / dy;
                out.qx[c] = (-((e.normal + e.corr_left) - (wst.normal + wst.corr_right)) / dx + sx) -
                            (n.tangential - s.tangential) / dy;
                out.qy[c] = -(e.tangential - wst.tangential) / dx +
                            (-((n.normal + n.corr_left) - (s.normal + s.corr_right)) / dy + sy);
            }
        }
    }

    /// Bed source alone: centred terms plus hydrostatic corrections.
    void bed_source(const Field& h, Field& sx_out, Field& sy_out) const {
        const int nx = grid_.nx, ny = grid_.ny;
        for (int j = 1; j < ny - 1; ++j) {
            for (int i = 1; i < nx - 1; ++i) {
                const std::size_t c = grid_.index(i, j);
                const auto [sx, sy] = centred_bed_terms(h, c);
                sx_out[c] = -(fx_[fxi(i, j)].corr_left - fx_[fxi(i - 1, j)].corr_right) / grid_.dx + sx;
                sy_out[c] = -(fy_[fyi(i, j)].corr_left - fy_[fyi(i, j - 1)].corr_right) / grid_.dy + sy;
            }
        }
    }

    /// Net volume flux (m^3/s) from the interior into the ring.
    double boundary_outflow() const {
        const int nx = grid_.nx, ny = grid_.ny;
        double x_out = 0.0, y_out = 0.0;
        for (int j = 1; j < ny - 1; ++j) x_out += fx_[fxi(nx - 2, j)].mass - fx_[fxi(0, j)].mass;
        for (int i = 1; i < nx - 1; ++i) y_out += fy_[fyi(i, ny - 2)].mass - fy_[fyi(i, 0)].mass;
        return x_out * grid_.dy + y_out * grid_.dx;
    }

private:
    GridSpec grid_;
    const Field& z_;
    SolverParams p_;
    Field w_;
    Field sxw_, sxh_, sxqx_, sxqy_, syw_, syh_, syqx_, syqy_;
    std::vector<FaceFlux> fx_, fy_;
    Field factor_;
};

std::size_t nearest_interior(const GridSpec& g, int i, int j) {
    return g.index(std::clamp(i, 1, g.nx - 2), std::clamp(j, 1, g.ny - 2));
}

void impose_ring(Fields3& s, const GridSpec& g, const Field& z, const std::optional<double>& level) {
    for (int j = 0; j < g.ny; ++j) {
        for (int i = 0; i < g.nx; ++i) {
            if (!g.on_ring(i, j)) continue;
            const std::size_t c = g.index(i, j);
            const std::size_t src = nearest_interior(g, i, j);
            s.h[c] = level ? std::max(0.0, *level - z[c]) : s.h[src];
            if (s.h[c] > 0.0) {
                s.qx[c] = s.qx[src];
                s.qy[c] = s.qy[src];
            } else {
                s.qx[c] = s.qy[c] = 0.0;
            }
        }
    }
}

/// Keeps depth nonnegative and damps momentum in near-dry interior cells.
void clean_interior(Fields3& s, const GridSpec& g, double h_eps) {
    for (int j = 1; j < g.ny - 1; ++j) {
        for (int i = 1; i < g.nx - 1; ++i) {
            const std::size_t c = g.index(i, j);
            double& h = s.h[c];
            if (h <= 0.0) {
                h = 0.0;
                s.qx[c] = s.qy[c] = 0.0;
            } else if (h < h_eps) {
                s.qx[c] = h * desingularized_velocity(h, s.qx[c], h_eps);
                s.qy[c] = h * desingularized_velocity(h, s.qy[c], h_eps);
            }
        }
    }
}

double stable_dt_fields(const Fields3& s, const GridSpec& g, const SolverParams& p) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < g.cells(); ++c) {
        const double h = s.h[c];
        if (h <= 0.0) continue;
        const double u = desingularized_velocity(h, s.qx[c], p.h_eps);
        const double v = desingularized_velocity(h, s.qy[c], p.h_eps);
        const double cel = std::sqrt(p.g * h);
        const double tx = g.dx / (std::abs(u) + cel);
        const double ty = g.dy / (std::abs(v) + cel);
        best = std::min(best, std::min(tx, ty));
    }
    if (!std::isfinite(best)) return p.max_dt;
    return std::min(p.max_dt, p.cfl * best);
}

/// Advances interior cells by dt with SSP-RK2, friction and forcing; the ring is reset afterwards.
class Integrator {
public:
    Integrator(const Terrain& terrain, const ForcingPlan& forcing, const SolverParams& params)
        : terrain_(terrain), forcing_(forcing), params_(params), op_(terrain, params) {
        const std::size_t n = terrain.grid().cells();
        for (auto* f : {&stage_.h, &stage_.qx, &stage_.qy, &rate_.h, &rate_.qx, &rate_.qy}) f->assign(n, 0.0);
    }

    VolumeBudget advance(Fields3& s, double t0, double dt) {
        const GridSpec& g = terrain_.grid();
        const double area = g.cell_area();
        VolumeBudget budget;

        // Stage 1: U1 = U0 + dt L(U0)
        stage_ = s;
        op_.fluxes(s);
        op_.limit_outflow(s.h, dt);
        const double out0 = op_.boundary_outflow();
        op_.rates(s.h, rate_);
        for_interior([&](std::size_t c) {
            stage_.h[c] = s.h[c] + dt * rate_.h[c];
            stage_.qx[c] = s.qx[c] + dt * rate_.qx[c];
            stage_.qy[c] = s.qy[c] + dt * rate_.qy[c];
        });
        clean_interior(stage_, g, params_.h_eps);
        impose_ring(stage_, g, terrain_.elevation(), forcing_.boundary_level);

        // Stage 2: U = (U0 + U1 + dt L(U1)) / 2
        op_.fluxes(stage_);
        op_.limit_outflow(stage_.h, dt);
        const double out1 = op_.boundary_outflow();
        op_.rates(stage_.h, rate_);
        for_interior([&](std::size_t c) {
            const double h1 = std::max(0.0, stage_.h[c] + dt * rate_.h[c]);
            s.h[c] = 0.5 * (s.h[c] + h1);
            s.qx[c] = 0.5 * (s.qx[c] + (stage_.qx[c] + dt * rate_.qx[c]));
            s.qy[c] = 0.5 * (s.qy[c] + (stage_.qy[c] + dt * rate_.qy[c]));
        });
        clean_interior(s, g, params_.h_eps);
        budget.boundary_out = 0.5 * (out0 + out1) * dt;

        // Semi-implicit Manning friction.
        const auto& eta = terrain_.manning();
        const double gg = params_.g, eps = params_.h_eps;
        for_interior([&](std::size_t c) {
            const double h = s.h[c];
            if (h <= eps || eta[c] == 0.0) return;
            const double u = desingularized_velocity(h, s.qx[c], eps);
            const double v = desingularized_velocity(h, s.qy[c], eps);
            const double speed = std::sqrt(u * u + v * v);
            const double denom = 1.0 + dt * gg * eta[c] * speed / std::pow(h, 4.0 / 3.0);
            s.qx[c] /= denom;
            s.qy[c] /= denom;
        });

        // Rain and point inflows.
        const double t1 = t0 + dt;
        rain_depth_.resize(static_cast<std::size_t>(forcing_.n_subareas));
        for (int k = 0; k < forcing_.n_subareas; ++k) {
            rain_depth_[static_cast<std::size_t>(k)] = forcing_.rain_depth(k, t0, t1);
        }
        double rain_total = 0.0;
        for_interior([&](std::size_t c) {
            const double d = rain_depth_[static_cast<std::size_t>(forcing_.subarea_map[c])];
            s.h[c] += d;
            rain_total += d;
        });
        double inflow_total = 0.0;
        for (std::size_t k = 0; k < forcing_.inflows.size(); ++k) {
            const double vol = forcing_.inflow_volume(k, t0, t1);
            s.h[forcing_.inflows[k].cell] += vol / area;
            inflow_total += vol;
        }
        budget.forcing_in = rain_total * area + inflow_total;

        impose_ring(s, g, terrain_.elevation(), forcing_.boundary_level);
        return budget;
    }

private:
    template <class F>
    void for_interior(F&& f) const {
        const GridSpec& g = terrain_.grid();
        for (int j = 1; j < g.ny - 1; ++j) {
            for (int i = 1; i < g.nx - 1; ++i) f(g.index(i, j));
        }
    }

    const Terrain& terrain_;
    const ForcingPlan& forcing_;
    SolverParams params_;
    Operator op_;
    Fields3 stage_, rate_;
    std::vector<double> rain_depth_;
};

Fields3 fields_of(const FlowState& s) { return {s.h(), s.qx(), s.qy()}; }

void check_inputs(const FlowState& state, const Terrain& terrain, const ForcingPlan& forcing, const SolverParams& params) {
    params.validate();
    require_same_grid(state.grid(), terrain.grid(), "state vs terrain");
    forcing.validate(terrain.grid());
}

}  // namespace

std::pair<Field, Field> bed_slope_source(const Terrain& terrain, const FlowState& state, const SolverParams& params) {
    require_same_grid(state.grid(), terrain.grid(), "bed_slope_source");
    Operator op(terrain, params);
    const Fields3 s = fields_of(state);
    op.fluxes(s);
    Field sx(state.grid().cells(), 0.0), sy(state.grid().cells(), 0.0);
    op.bed_source(s.h, sx, sy);
    return {std::move(sx), std::move(sy)};
}

std::array<Field, 3> flux_divergence(const Terrain& terrain, const FlowState& state, const SolverParams& params) {
    require_same_grid(state.grid(), terrain.grid(), "flux_divergence");
    Operator op(terrain, params);
    const Fields3 s = fields_of(state);
    op.fluxes(s);
    const std::size_t n = state.grid().cells();
    Fields3 r{Field(n, 0.0), Field(n, 0.0), Field(n, 0.0)};
    op.rates(s.h, r);
    return {std::move(r.h), std::move(r.qx), std::move(r.qy)};
}

double stable_dt(const FlowState& state, const SolverParams& params) {
    params.validate();
    return stable_dt_fields(fields_of(state), state.grid(), params);
}

FlowState step(const FlowState& state, const Terrain& terrain, const ForcingPlan& forcing,
               const SolverParams& params, double dt, VolumeBudget* budget) {
    check_inputs(state, terrain, forcing, params);
    if (!(dt > 0.0)) fail(ErrorCategory::invalid_argument, "dt must be positive");
    const double limit = stable_dt(state, params);
    if (dt > limit * (1.0 + 1e-12)) {
        fail(ErrorCategory::cfl_violation, "dt " + std::to_string(dt) + " exceeds stable step " + std::to_string(limit));
    }
    Fields3 s = fields_of(state);
    Integrator integ(terrain, forcing, params);
    const VolumeBudget b = integ.advance(s, state.time(), dt);
    if (budget) *budget = b;
    return FlowState(state.grid(), std::move(s.h), std::move(s.qx), std::move(s.qy), state.time() + dt);
}

FlowState apply_dirichlet_boundary(const FlowState& state, const Terrain& terrain, double level) {
    require_same_grid(state.grid(), terrain.grid(), "apply_dirichlet_boundary");
    Fields3 s = fields_of(state);
    impose_ring(s, state.grid(), terrain.elevation(), level);
    return FlowState(state.grid(), std::move(s.h), std::move(s.qx), std::move(s.qy), state.time());
}

FlowState apply_transmissive_boundary(const FlowState& state) {
    Fields3 s = fields_of(state);
    const Field unused(state.grid().cells(), 0.0);
    impose_ring(s, state.grid(), unused, std::nullopt);
    return FlowState(state.grid(), std::move(s.h), std::move(s.qx), std::move(s.qy), state.time());
}

std::vector<FlowState> run(const FlowState& state0, const Terrain& terrain, const ForcingPlan& forcing,
                           const SolverParams& params, double t_end, double snapshot_every,
                           std::vector<SnapshotBudget>* budget, std::size_t* steps_taken) {
    check_inputs(state0, terrain, forcing, params);
    if (!(snapshot_every > 0.0)) fail(ErrorCategory::invalid_argument, "snapshot interval must be positive");
    const double t0 = state0.time();
    if (t_end < t0) fail(ErrorCategory::invalid_argument, "t_end precedes the initial state time");
    if (t_end > forcing.duration * (1.0 + 1e-12) + 1e-9) {
        fail(ErrorCategory::invalid_argument, "t_end exceeds the forcing duration");
    }

    const GridSpec& g = state0.grid();
    std::vector<FlowState> snaps{state0};
    VolumeBudget total;
    if (budget) {
        budget->clear();
        budget->push_back({t0, state0.interior_volume(), total});
    }
    std::size_t steps = 0;

    Fields3 s = fields_of(state0);
    Integrator integ(terrain, forcing, params);
    double t = t0;
    long k = 1;
    while (t < t_end) {
        const double target = std::min(t0 + static_cast<double>(k) * snapshot_every, t_end);
        double dt = stable_dt_fields(s, g, params);
        bool landing = false;
        if (t + dt >= target - 1e-9 * snapshot_every) {
            dt = target - t;
            landing = true;
        }
        total += integ.advance(s, t, dt);
        ++steps;
        t = landing ? target : t + dt;
        if (landing) {
            snaps.emplace_back(g, s.h, s.qx, s.qy, t);
            if (budget) budget->push_back({t, snaps.back().interior_volume(), total});
            ++k;
        }
    }
    if (steps_taken) *steps_taken = steps;
    return snaps;
}

}  // namespace flood::swe
