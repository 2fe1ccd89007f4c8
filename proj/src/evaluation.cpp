#include "flood/evaluation.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>

#include "flood/rng.hpp"

namespace flood::eval {

namespace {

template <class T>
double mse_impl(std::span<const T> pred, std::span<const T> target) {
    if (pred.size() != target.size()) {
        fail(ErrorCategory::size_mismatch, "prediction has " + std::to_string(pred.size()) + " values, target " +
                                               std::to_string(target.size()));
    }
    if (pred.empty()) fail(ErrorCategory::size_mismatch, "mse of empty fields");
    double sum = 0.0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        const double d = static_cast<double>(pred[k]) - static_cast<double>(target[k]);
        sum += d * d;
    }
    return sum / static_cast<double>(pred.size());
}

std::string num(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return s;
}

FlowState state_from_floats(const GridSpec& g, std::span<const float> v) {
    const std::size_t n = g.cells();
    Field h(n), qx(n), qy(n);
    for (std::size_t c = 0; c < n; ++c) {
        h[c] = std::max(0.0, static_cast<double>(v[c]));
        qx[c] = h[c] > 0.0 ? v[n + c] : 0.0;
        qy[c] = h[c] > 0.0 ? v[2 * n + c] : 0.0;
    }
    return FlowState(g, std::move(h), std::move(qx), std::move(qy), 0.0);
}

std::uint8_t gray(double v, double hi) {
    if (!(hi > 0.0)) return 0;
    return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v / hi, 0.0, 1.0)));
}

}  // namespace

double mse(std::span<const double> pred, std::span<const double> target) { return mse_impl(pred, target); }
double mse(std::span<const float> pred, std::span<const float> target) { return mse_impl(pred, target); }

double depth_mse(const FlowState& pred, const FlowState& target) {
    require_same_grid(pred.grid(), target.grid(), "compared states");
    return mse(std::span<const double>(pred.h()), std::span<const double>(target.h()));
}

double state_mse(const FlowState& pred, const FlowState& target) {
    require_same_grid(pred.grid(), target.grid(), "compared states");
    return (mse(std::span<const double>(pred.h()), std::span<const double>(target.h())) +
            mse(std::span<const double>(pred.qx()), std::span<const double>(target.qx())) +
            mse(std::span<const double>(pred.qy()), std::span<const double>(target.qy()))) /
           3.0;
}

double psnr(double mse_value, double peak) {
    if (mse_value < 0.0 || !(peak > 0.0)) fail(ErrorCategory::invalid_argument, "psnr needs mse >= 0 and peak > 0");
    if (mse_value == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse_value);
}

bool is_infinite_psnr(double db) { return std::isinf(db) && db > 0; }

std::string psnr_text(double db) {
    if (is_infinite_psnr(db)) return "inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", db);
    return buf;
}

const char* zone_name(Zone z) {
    switch (z) {
        case Zone::river: return "river";
        case Zone::channel: return "channel";
        case Zone::dry: return "dry";
    }
    return "?";
}

std::size_t ZoneMap::count(Zone z) const { return static_cast<std::size_t>(std::count(label.begin(), label.end(), z)); }

// ---------------------------------------------------------------------------
// Zones
// ---------------------------------------------------------------------------

std::vector<int> kmeans(const std::vector<std::vector<double>>& pts, int k, const ZoneOptions& opt, double* inertia_out) {
    const std::size_t n = pts.size();
    if (k < 1 || n < static_cast<std::size_t>(k)) fail(ErrorCategory::invalid_argument, "k-means needs at least k points");
    if (opt.restarts < 1) fail(ErrorCategory::invalid_argument, "k-means needs at least one restart");
    std::vector<int> best;
    double best_inertia = std::numeric_limits<double>::infinity();
    std::vector<double> d2(n);
    for (int restart = 0; restart < opt.restarts; ++restart) {
        Rng rng(opt.seed, {static_cast<std::uint64_t>(restart)});
        // k-means++ seeding.
        std::vector<std::vector<double>> centers{pts[rng.index(n)]};
        while (centers.size() < static_cast<std::size_t>(k)) {
            double total = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double m = std::numeric_limits<double>::infinity();
                for (const auto& c : centers) m = std::min(m, sq_dist(pts[i], c));
                d2[i] = m;
                total += m;
            }
            std::size_t pick = 0;
            if (total > 0.0) {
                const double u = rng.uniform() * total;
                double acc = 0.0;
                pick = n - 1;
                for (std::size_t i = 0; i < n; ++i) {
                    acc += d2[i];
                    if (u < acc && d2[i] > 0.0) {
                        pick = i;
                        break;
                    }
                }
            } else {
                pick = rng.index(n);
            }
            centers.push_back(pts[pick]);
        }
        // Lloyd iterations.
        std::vector<int> label(n, 0);
        for (int it = 0; it < opt.max_iterations; ++it) {
            for (std::size_t i = 0; i < n; ++i) {
                int arg = 0;
                double m = sq_dist(pts[i], centers[0]);
                for (int c = 1; c < k; ++c) {
                    const double d = sq_dist(pts[i], centers[static_cast<std::size_t>(c)]);
                    if (d < m) {
                        m = d;
                        arg = c;
                    }
                }
                label[i] = arg;
            }
            double shift = 0.0;
            for (int c = 0; c < k; ++c) {
                std::vector<double> sum(pts[0].size(), 0.0);
                std::size_t members = 0;
                for (std::size_t i = 0; i < n; ++i) {
                    if (label[i] != c) continue;
                    for (std::size_t f = 0; f < sum.size(); ++f) sum[f] += pts[i][f];
                    ++members;
                }
                if (members == 0) continue;  // empty cluster keeps its center
                for (double& v : sum) v /= static_cast<double>(members);
                shift = std::max(shift, std::sqrt(sq_dist(sum, centers[static_cast<std::size_t>(c)])));
                centers[static_cast<std::size_t>(c)] = std::move(sum);
            }
            if (shift <= opt.tolerance) break;
        }
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double m = std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                const double d = sq_dist(pts[i], centers[static_cast<std::size_t>(c)]);
                if (d < m) {
                    m = d;
                    label[i] = c;
                }
            }
            inertia += m;
        }
        if (inertia < best_inertia) {
            best_inertia = inertia;
            best = label;
        }
    }
    if (inertia_out) *inertia_out = best_inertia;
    return best;
}

ZoneMap classify_zones(const std::vector<FlowState>& snaps, const ZoneOptions& opt) {
    if (snaps.empty()) fail(ErrorCategory::invalid_argument, "zone classification needs at least one snapshot");
    const GridSpec g = snaps.front().grid();
    const std::size_t n = g.cells();
    for (const FlowState& s : snaps) require_same_grid(g, s.grid(), "zone snapshot");
    const double count = static_cast<double>(snaps.size());
    std::vector<std::vector<double>> raw(n, std::vector<double>(3, 0.0));
    for (std::size_t c = 0; c < n; ++c) {
        double sum = 0.0, wet = 0.0;
        for (const FlowState& s : snaps) {
            sum += s.h()[c];
            wet += s.h()[c] > opt.wet_depth ? 1.0 : 0.0;
        }
        const double mean = sum / count;
        double var = 0.0;
        for (const FlowState& s : snaps) var += (s.h()[c] - mean) * (s.h()[c] - mean);
        raw[c] = {mean, std::sqrt(var / count), wet / count};
    }
    ZoneMap zones{g, std::vector<Zone>(n, Zone::dry)};
    const std::set<std::vector<double>> distinct(raw.begin(), raw.end());
    if (distinct.size() < 3) {
        double wet_sum = 0.0;
        std::size_t wet_cells = 0;
        for (const auto& f : raw) {
            if (f[2] > 0.0) {
                wet_sum += f[0];
                ++wet_cells;
            }
        }
        const double split = wet_cells > 0 ? wet_sum / static_cast<double>(wet_cells) : 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            if (raw[c][2] == 0.0) zones.label[c] = Zone::dry;
            else zones.label[c] = raw[c][0] > split ? Zone::river : Zone::channel;
        }
        return zones;
    }
    std::vector<std::vector<double>> pts = raw;
    for (std::size_t f = 0; f < 3; ++f) {
        double mean = 0.0, var = 0.0;
        for (const auto& p : raw) mean += p[f];
        mean /= static_cast<double>(n);
        for (const auto& p : raw) var += (p[f] - mean) * (p[f] - mean);
        const double sd = std::sqrt(var / static_cast<double>(n));
        for (std::size_t c = 0; c < n; ++c) pts[c][f] = sd > 0.0 ? (raw[c][f] - mean) / sd : raw[c][f] - mean;
    }
    const std::vector<int> label = kmeans(pts, 3, opt);
    // Name clusters by their mean depth.
    std::array<double, 3> depth{0, 0, 0};
    std::array<std::size_t, 3> members{0, 0, 0};
    for (std::size_t c = 0; c < n; ++c) {
        depth[static_cast<std::size_t>(label[c])] += raw[c][0];
        ++members[static_cast<std::size_t>(label[c])];
    }
    for (std::size_t k = 0; k < 3; ++k) depth[k] = members[k] > 0 ? depth[k] / static_cast<double>(members[k]) : -1.0;
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return depth[static_cast<std::size_t>(a)] > depth[static_cast<std::size_t>(b)]; });
    std::array<Zone, 3> name{};
    for (int rank = 0; rank < 3; ++rank) name[static_cast<std::size_t>(order[static_cast<std::size_t>(rank)])] = static_cast<Zone>(rank);
    for (std::size_t c = 0; c < n; ++c) zones.label[c] = name[static_cast<std::size_t>(label[c])];
    return zones;
}

// ---------------------------------------------------------------------------
// Tables and curves
// ---------------------------------------------------------------------------

FlowState sample_target(const scenario::TrainingSample& s) {
    if (s.target.size() != 3 * s.grid.cells()) fail(ErrorCategory::size_mismatch, "sample target does not match its grid");
    return state_from_floats(s.grid, s.target).with_time(s.time);
}

FlowState sample_input_state(const scenario::TrainingSample& s) {
    if (s.input.size() != 5 * s.grid.cells()) fail(ErrorCategory::size_mismatch, "sample input does not match its grid");
    return state_from_floats(s.grid, s.input).with_time(s.time);
}

std::vector<ZoneRow> one_step_table(const Predictor& predict, const std::vector<scenario::TrainingSample>& samples, const ZoneMap& zones) {
    if (samples.empty()) fail(ErrorCategory::invalid_argument, "one-step table needs at least one sample");
    const std::size_t n = zones.grid.cells();
    if (zones.label.size() != n) fail(ErrorCategory::size_mismatch, "zone map does not match its grid");
    std::array<double, 4> sum_all{}, sum_h{};
    for (const auto& s : samples) {
        require_same_grid(zones.grid, s.grid, "evaluation sample");
        const FlowState p = predict(s);
        require_same_grid(zones.grid, p.grid(), "prediction");
        const FlowState t = sample_target(s);
        for (std::size_t c = 0; c < n; ++c) {
            const double dh = p.h()[c] - t.h()[c], du = p.qx()[c] - t.qx()[c], dv = p.qy()[c] - t.qy()[c];
            const auto z = static_cast<std::size_t>(zones.label[c]);
            sum_all[z] += dh * dh + du * du + dv * dv;
            sum_h[z] += dh * dh;
        }
    }
    for (std::size_t z = 0; z < 3; ++z) {
        sum_all[3] += sum_all[z];
        sum_h[3] += sum_h[z];
    }
    std::vector<ZoneRow> rows;
    const double m = static_cast<double>(samples.size());
    for (std::size_t z = 0; z < 4; ++z) {
        ZoneRow r;
        r.zone = z < 3 ? zone_name(static_cast<Zone>(z)) : "all";
        r.pixels = z < 3 ? zones.count(static_cast<Zone>(z)) : n;
        const double px = static_cast<double>(r.pixels);
        r.mse_all = r.pixels > 0 ? sum_all[z] / (3.0 * px * m) : std::numeric_limits<double>::quiet_NaN();
        r.mse_depth = r.pixels > 0 ? sum_h[z] / (px * m) : std::numeric_limits<double>::quiet_NaN();
        rows.push_back(r);
    }
    return rows;
}

double peak_value(const std::vector<FlowState>& states) {
    double peak = 0.0;
    for (const FlowState& s : states)
        for (const Field* f : {&s.h(), &s.qx(), &s.qy()})
            for (double v : *f) peak = std::max(peak, std::abs(v));
    return peak;
}

std::vector<CurvePoint> rollout_curve(const std::vector<FlowState>& pred, const std::vector<FlowState>& ref, double peak) {
    if (pred.size() != ref.size()) {
        fail(ErrorCategory::invalid_argument, "rollout has " + std::to_string(pred.size()) + " states, reference " +
                                                  std::to_string(ref.size()));
    }
    if (peak <= 0.0) peak = peak_value(ref);
    if (!(peak > 0.0)) peak = 1.0;
    std::vector<CurvePoint> out;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        const double t = ref[k].time();
        if (std::abs(pred[k].time() - t) > 1e-6 * std::max(1.0, std::abs(t))) {
            fail(ErrorCategory::invalid_argument, "rollout step " + std::to_string(k) + " is at t = " + std::to_string(pred[k].time()) +
                                                      ", reference at " + std::to_string(t));
        }
        CurvePoint p;
        p.step = static_cast<int>(k);
        p.time = t;
        p.mse = state_mse(pred[k], ref[k]);
        p.mse_depth = depth_mse(pred[k], ref[k]);
        p.psnr = psnr(p.mse, peak);
        out.push_back(p);
    }
    return out;
}

void write_curves_csv(std::ostream& out, const std::vector<std::pair<std::string, std::vector<CurvePoint>>>& curves) {
    out << "label,step,time,mse,mse_depth,psnr\n";
    for (const auto& [label, pts] : curves)
        for (const CurvePoint& p : pts)
            out << label << ',' << p.step << ',' << num(p.time) << ',' << num(p.mse) << ',' << num(p.mse_depth) << ','
                << psnr_text(p.psnr) << '\n';
}

void write_zone_csv(std::ostream& out, const std::vector<std::pair<std::string, std::vector<ZoneRow>>>& tables) {
    out << "label,zone,pixels,mse_all,mse_depth\n";
    for (const auto& [label, rows] : tables)
        for (const ZoneRow& r : rows) out << label << ',' << r.zone << ',' << r.pixels << ',' << num(r.mse_all) << ',' << num(r.mse_depth) << '\n';
}

// ---------------------------------------------------------------------------
// Timing
// ---------------------------------------------------------------------------

double median(std::vector<double> v) {
    if (v.empty()) fail(ErrorCategory::invalid_argument, "median of nothing");
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

SpeedResult speed_benchmark(const std::function<void()>& solver, const std::function<void()>& surrogate, int repeats) {
    if (repeats < 1) fail(ErrorCategory::invalid_argument, "benchmark needs at least one repetition");
    using clock = std::chrono::steady_clock;
    auto seconds = [](const std::function<void()>& f) {
        const auto t0 = clock::now();
        f();
        return std::chrono::duration<double>(clock::now() - t0).count();
    };
    SpeedResult r;
    for (int k = 0; k < repeats; ++k) {
        r.solver_seconds.push_back(seconds(solver));
        r.surrogate_seconds.push_back(seconds(surrogate));
    }
    r.solver_median = median(r.solver_seconds);
    r.surrogate_median = median(r.surrogate_seconds);
    r.ratio = r.surrogate_median > 0.0 ? r.solver_median / r.surrogate_median : std::numeric_limits<double>::infinity();
    const double mean = std::accumulate(r.surrogate_seconds.begin(), r.surrogate_seconds.end(), 0.0) / repeats;
    double var = 0.0;
    for (double s : r.surrogate_seconds) var += (s - mean) * (s - mean);
    r.surrogate_spread = r.surrogate_median > 0.0 ? std::sqrt(var / repeats) / r.surrogate_median : 0.0;
    return r;
}

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

void write_pgm(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& pixels) {
    if (width < 1 || height < 1 || pixels.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
        fail(ErrorCategory::size_mismatch, "image pixels do not match " + std::to_string(width) + "x" + std::to_string(height));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCategory::io, "cannot write " + path.string());
    out << "P5\n" << width << ' ' << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!out) fail(ErrorCategory::io, "failed writing " + path.string());
}

void write_rollout_mosaic(const std::filesystem::path& path, const std::vector<FlowState>& ref, const std::vector<FlowState>& pred) {
    if (ref.empty() || ref.size() != pred.size()) fail(ErrorCategory::invalid_argument, "mosaic needs equally long, non-empty rollouts");
    const GridSpec g = ref.front().grid();
    for (std::size_t k = 0; k < ref.size(); ++k) {
        require_same_grid(g, ref[k].grid(), "mosaic reference");
        require_same_grid(g, pred[k].grid(), "mosaic prediction");
    }
    double hmax = 0.0, emax = 0.0;
    for (std::size_t k = 0; k < ref.size(); ++k)
        for (std::size_t c = 0; c < g.cells(); ++c) {
            hmax = std::max(hmax, ref[k].h()[c]);
            emax = std::max(emax, std::abs(pred[k].h()[c] - ref[k].h()[c]));
        }
    const int steps = static_cast<int>(ref.size());
    const int width = 3 * g.nx + 2, height = steps * g.ny + (steps - 1);
    std::vector<std::uint8_t> px(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 255);
    for (int k = 0; k < steps; ++k) {
        for (int j = 0; j < g.ny; ++j) {
            const int row = k * (g.ny + 1) + (g.ny - 1 - j);
            for (int i = 0; i < g.nx; ++i) {
                const std::size_t c = g.index(i, j);
                const double t = ref[static_cast<std::size_t>(k)].h()[c], p = pred[static_cast<std::size_t>(k)].h()[c];
                const std::size_t base = static_cast<std::size_t>(row) * static_cast<std::size_t>(width);
                px[base + static_cast<std::size_t>(i)] = gray(t, hmax);
                px[base + static_cast<std::size_t>(g.nx + 1 + i)] = gray(p, hmax);
                px[base + static_cast<std::size_t>(2 * g.nx + 2 + i)] = gray(std::abs(p - t), emax);
            }
        }
    }
    write_pgm(path, width, height, px);
}

void write_zone_pgm(const std::filesystem::path& path, const ZoneMap& zones) {
    const GridSpec& g = zones.grid;
    std::vector<std::uint8_t> px(g.cells());
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            const Zone z = zones.label[g.index(i, j)];
            px[static_cast<std::size_t>(g.ny - 1 - j) * static_cast<std::size_t>(g.nx) + static_cast<std::size_t>(i)] =
                z == Zone::river ? 0 : (z == Zone::channel ? 128 : 255);
        }
    write_pgm(path, g.nx, g.ny, px);
}

}  // namespace flood::eval
