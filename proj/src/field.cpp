#include "flood/field.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace flood {

const char* category_name(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::usage: return "usage";
        case ErrorCategory::config: return "config";
        case ErrorCategory::io: return "io";
        case ErrorCategory::malformed_header: return "malformed_header";
        case ErrorCategory::size_mismatch: return "size_mismatch";
        case ErrorCategory::grid_mismatch: return "grid_mismatch";
        case ErrorCategory::invalid_argument: return "invalid_argument";
        case ErrorCategory::cfl_violation: return "cfl_violation";
        case ErrorCategory::divergence: return "divergence";
        case ErrorCategory::singular: return "singular";
    }
    return "unknown";
}

void GridSpec::validate() const {
    if (nx < 3 || ny < 3) {
        fail(ErrorCategory::invalid_argument,
             "grid needs at least 3x3 cells, got " + std::to_string(nx) + "x" + std::to_string(ny));
    }
    if (!(dx > 0.0) || !(dy > 0.0)) fail(ErrorCategory::invalid_argument, "grid spacing must be positive");
}

void require_same_grid(const GridSpec& a, const GridSpec& b, const char* what) {
    if (!(a == b)) fail(ErrorCategory::grid_mismatch, std::string(what) + ": grids differ");
}

// --- Terrain -----------------------------------------------------------------

Terrain::Terrain(GridSpec grid, Field elevation, Field manning)
    : grid_(grid), elevation_(std::move(elevation)), manning_(std::move(manning)) {
    grid_.validate();
    if (elevation_.size() != grid_.cells() || manning_.size() != grid_.cells()) {
        fail(ErrorCategory::size_mismatch, "terrain fields must have nx*ny entries");
    }
    for (double n : manning_) {
        if (!(n >= 0.0)) fail(ErrorCategory::invalid_argument, "friction coefficient must be nonnegative");
    }
    for (double z : elevation_) {
        if (!std::isfinite(z)) fail(ErrorCategory::invalid_argument, "elevation must be finite");
    }
}

Terrain Terrain::flat(const GridSpec& grid, double z, double manning) {
    return Terrain(grid, Field(grid.cells(), z), Field(grid.cells(), manning));
}

// --- FlowState ---------------------------------------------------------------

void FlowState::check(const GridSpec& grid, const Field& h, const Field& qx, const Field& qy, double time) {
    grid.validate();
    const std::size_t n = grid.cells();
    if (h.size() != n || qx.size() != n || qy.size() != n) {
        fail(ErrorCategory::size_mismatch, "state fields must have nx*ny entries");
    }
    if (!(time >= 0.0)) fail(ErrorCategory::invalid_argument, "state time must be nonnegative");
    for (std::size_t c = 0; c < n; ++c) {
        if (!(h[c] >= 0.0) || !std::isfinite(h[c])) {
            fail(ErrorCategory::invalid_argument, "negative or non-finite depth at cell " + std::to_string(c));
        }
        if (!std::isfinite(qx[c]) || !std::isfinite(qy[c])) {
            fail(ErrorCategory::invalid_argument, "non-finite momentum at cell " + std::to_string(c));
        }
        if (h[c] == 0.0 && (qx[c] != 0.0 || qy[c] != 0.0)) {
            fail(ErrorCategory::invalid_argument, "momentum in dry cell " + std::to_string(c));
        }
    }
}

FlowState::FlowState(GridSpec grid, Field h, Field qx, Field qy, double time)
    : grid_(grid), h_(std::move(h)), qx_(std::move(qx)), qy_(std::move(qy)), time_(time) {
    check(grid_, h_, qx_, qy_, time_);
}

FlowState::FlowState(const GridSpec& grid, double time)
    : FlowState(grid, Field(grid.cells(), 0.0), Field(grid.cells(), 0.0), Field(grid.cells(), 0.0), time) {}

FlowState FlowState::lake_at_rest(const Terrain& terrain, double level, double time) {
    const auto& z = terrain.elevation();
    Field h(z.size());
    for (std::size_t c = 0; c < z.size(); ++c) h[c] = std::max(0.0, level - z[c]);
    const std::size_t n = z.size();
    return FlowState(terrain.grid(), std::move(h), Field(n, 0.0), Field(n, 0.0), time);
}

FlowState FlowState::with_time(double t) const {
    FlowState s = *this;
    if (!(t >= 0.0)) fail(ErrorCategory::invalid_argument, "state time must be nonnegative");
    s.time_ = t;
    return s;
}

double FlowState::interior_volume() const {
    double v = 0.0;
    for (int j = 1; j < grid_.ny - 1; ++j) {
        for (int i = 1; i < grid_.nx - 1; ++i) v += h_[grid_.index(i, j)];
    }
    return v * grid_.cell_area();
}

std::pair<Field, Field> velocity(const FlowState& state, double h_eps) {
    if (!(h_eps > 0.0)) fail(ErrorCategory::invalid_argument, "h_eps must be positive");
    const std::size_t n = state.grid().cells();
    Field u(n), v(n);
    for (std::size_t c = 0; c < n; ++c) {
        u[c] = desingularized_velocity(state.h()[c], state.qx()[c], h_eps);
        v[c] = desingularized_velocity(state.h()[c], state.qy()[c], h_eps);
    }
    return {std::move(u), std::move(v)};
}

// --- ForcingPlan -------------------------------------------------------------

namespace {

// Integral over [t0, t1] of value(k) held on [k*interval, (k+1)*interval), last value held.
template <class Value>
double integrate_series(std::size_t count, Value value, double interval, double t0, double t1) {
    if (count == 0 || t1 <= t0) return 0.0;
    const std::size_t last = count - 1;
    double total = 0.0;
    double t = t0;
    while (t < t1) {
        auto k = static_cast<std::size_t>(std::max(0.0, std::floor(t / interval)));
        while (k < last && static_cast<double>(k + 1) * interval <= t) ++k;
        if (k >= last) {
            total += value(last) * (t1 - t);
            break;
        }
        const double end = std::min(static_cast<double>(k + 1) * interval, t1);
        total += value(k) * (end - t);
        t = end;
    }
    return total;
}

}  // namespace

double piecewise_integral(std::span<const double> values, double interval, double t0, double t1) {
    return integrate_series(values.size(), [&](std::size_t k) { return values[k]; }, interval, t0, t1);
}

namespace {

double series_at(std::span<const double> values, double interval, double t) {
    if (values.empty()) return 0.0;
    auto k = static_cast<std::size_t>(std::max(0.0, std::floor(t / interval)));
    return values[std::min(k, values.size() - 1)];
}

}  // namespace

ForcingPlan ForcingPlan::none(const GridSpec& grid, double duration) {
    ForcingPlan f;
    f.subarea_map.assign(grid.cells(), 0);
    f.n_subareas = 1;
    f.interval = duration > 0.0 ? duration : 1.0;
    f.rain = {std::vector<double>{0.0}};
    f.duration = duration;
    return f;
}

double ForcingPlan::rain_rate(int subarea, double t) const {
    if (rain.empty()) return 0.0;
    auto k = static_cast<std::size_t>(std::max(0.0, std::floor(t / interval)));
    return rain[std::min(k, rain.size() - 1)][static_cast<std::size_t>(subarea)];
}

double ForcingPlan::discharge(std::size_t inflow, double t) const {
    return series_at(inflows.at(inflow).discharge, interval, t);
}

double ForcingPlan::rain_depth(int subarea, double t0, double t1) const {
    const auto s = static_cast<std::size_t>(subarea);
    return integrate_series(rain.size(), [&](std::size_t k) { return rain[k][s]; }, interval, t0, t1);
}

double ForcingPlan::inflow_volume(std::size_t inflow, double t0, double t1) const {
    return piecewise_integral(inflows.at(inflow).discharge, interval, t0, t1);
}

void ForcingPlan::validate(const GridSpec& grid) const {
    if (subarea_map.size() != grid.cells()) fail(ErrorCategory::size_mismatch, "subarea map must cover every cell");
    if (n_subareas < 1) fail(ErrorCategory::invalid_argument, "need at least one sub-area");
    for (int k : subarea_map) {
        if (k < 0 || k >= n_subareas) fail(ErrorCategory::invalid_argument, "sub-area index out of range");
    }
    if (!(interval > 0.0)) fail(ErrorCategory::invalid_argument, "forcing interval must be positive");
    if (!(duration >= 0.0)) fail(ErrorCategory::invalid_argument, "forcing duration must be nonnegative");
    for (const auto& row : rain) {
        if (row.size() != static_cast<std::size_t>(n_subareas)) {
            fail(ErrorCategory::size_mismatch, "rain series entries must have one rate per sub-area");
        }
        for (double r : row) {
            if (!(r >= 0.0)) fail(ErrorCategory::invalid_argument, "rain rates must be nonnegative");
        }
    }
    for (const auto& in : inflows) {
        if (in.cell >= grid.cells() || grid.on_ring(in.cell)) {
            fail(ErrorCategory::invalid_argument, "inflow cell must be an interior cell");
        }
        for (double q : in.discharge) {
            if (!(q >= 0.0)) fail(ErrorCategory::invalid_argument, "inflow discharge must be nonnegative");
        }
    }
}

// --- Field files ---------------------------------------------------------------

namespace {

constexpr const char* kMagic = "FLOODFIELD 1";

std::string format_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void put_le32(std::string& out, float v) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    out.push_back(static_cast<char>(bits & 0xffu));
    out.push_back(static_cast<char>((bits >> 8) & 0xffu));
    out.push_back(static_cast<char>((bits >> 16) & 0xffu));
    out.push_back(static_cast<char>((bits >> 24) & 0xffu));
}

float get_le32(const unsigned char* p) {
    const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    return std::bit_cast<float>(bits);
}

bool valid_name(const std::string& s) {
    return !s.empty() && std::none_of(s.begin(), s.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

[[noreturn]] void bad_header(const std::filesystem::path& path, const std::string& why) {
    fail(ErrorCategory::malformed_header, path.string() + ": " + why);
}

}  // namespace

std::size_t NamedArray::size() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

const NamedArray& ArrayFile::get(const std::string& name) const {
    for (const auto& a : arrays) {
        if (a.name == name) return a;
    }
    fail(ErrorCategory::invalid_argument, "no array named '" + name + "'");
}

bool ArrayFile::has(const std::string& name) const {
    return std::any_of(arrays.begin(), arrays.end(), [&](const NamedArray& a) { return a.name == name; });
}

void write_array_file(const std::filesystem::path& path, const GridSpec& grid, std::span<const NamedArray> arrays) {
    grid.validate();
    std::string out;
    out += kMagic;
    out += "\ngrid " + std::to_string(grid.nx) + " " + std::to_string(grid.ny) + " " + format_real(grid.dx) + " " +
           format_real(grid.dy) + "\n";
    out += "fields " + std::to_string(arrays.size()) + "\n";
    std::size_t payload = 0;
    for (const auto& a : arrays) {
        if (!valid_name(a.name)) fail(ErrorCategory::invalid_argument, "field names must be nonempty without whitespace");
        if (a.shape.empty() || a.size() != a.values.size()) {
            fail(ErrorCategory::size_mismatch, "array '" + a.name + "' shape does not match its values");
        }
        out += a.name + " " + std::to_string(a.shape.size());
        for (auto d : a.shape) out += " " + std::to_string(d);
        out += "\n";
        payload += a.values.size();
    }
    out += "data\n";
    out.reserve(out.size() + 4 * payload);
    for (const auto& a : arrays) {
        for (float v : a.values) put_le32(out, v);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorCategory::io, "cannot open '" + path.string() + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) fail(ErrorCategory::io, "write failed for '" + path.string() + "'");
}

ArrayFile read_array_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorCategory::io, "cannot open '" + path.string() + "' for reading");
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    std::size_t pos = 0;
    auto next_line = [&]() -> std::string {
        auto nl = bytes.find('\n', pos);
        if (nl == std::string::npos) bad_header(path, "truncated header");
        std::string line = bytes.substr(pos, nl - pos);
        pos = nl + 1;
        return line;
    };

    if (bytes.compare(0, std::strlen(kMagic), kMagic) != 0 || next_line() != kMagic) bad_header(path, "bad magic");

    ArrayFile file;
    {
        std::istringstream ls(next_line());
        std::string tag;
        if (!(ls >> tag >> file.grid.nx >> file.grid.ny >> file.grid.dx >> file.grid.dy) || tag != "grid") {
            bad_header(path, "bad grid line");
        }
        if (file.grid.nx < 3 || file.grid.ny < 3 || !(file.grid.dx > 0) || !(file.grid.dy > 0)) {
            bad_header(path, "invalid grid geometry");
        }
    }
    std::size_t count = 0;
    {
        std::istringstream ls(next_line());
        std::string tag;
        if (!(ls >> tag >> count) || tag != "fields") bad_header(path, "bad fields line");
    }
    std::size_t payload = 0;
    for (std::size_t k = 0; k < count; ++k) {
        std::istringstream ls(next_line());
        NamedArray a;
        std::size_t rank = 0;
        if (!(ls >> a.name >> rank) || rank == 0) bad_header(path, "bad field line");
        a.shape.resize(rank);
        for (auto& d : a.shape) {
            if (!(ls >> d)) bad_header(path, "bad field shape for '" + a.name + "'");
        }
        payload += a.size();
        file.arrays.push_back(std::move(a));
    }
    if (next_line() != "data") bad_header(path, "missing data marker");

    const std::size_t remaining = bytes.size() - pos;
    if (remaining != 4 * payload) {
        fail(ErrorCategory::size_mismatch, path.string() + ": payload has " + std::to_string(remaining) +
                                               " bytes, header describes " + std::to_string(4 * payload));
    }
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
    for (auto& a : file.arrays) {
        a.values.resize(a.size());
        for (auto& v : a.values) {
            v = get_le32(p);
            p += 4;
        }
    }
    return file;
}

void write_field_file(const std::filesystem::path& path, std::span<const NamedField> fields, const GridSpec& grid) {
    std::vector<NamedArray> arrays;
    arrays.reserve(fields.size());
    for (const auto& f : fields) {
        if (f.values.size() != grid.cells()) {
            fail(ErrorCategory::size_mismatch, "field '" + f.name + "' does not match the grid size");
        }
        arrays.push_back({f.name, {static_cast<std::size_t>(grid.ny), static_cast<std::size_t>(grid.nx)}, f.values});
    }
    write_array_file(path, grid, arrays);
}

std::pair<GridSpec, std::vector<NamedField>> read_field_file(const std::filesystem::path& path) {
    auto file = read_array_file(path);
    std::vector<NamedField> fields;
    for (auto& a : file.arrays) {
        if (a.size() != file.grid.cells()) {
            fail(ErrorCategory::size_mismatch, path.string() + ": field '" + a.name + "' is not grid-sized");
        }
        fields.push_back({std::move(a.name), std::move(a.values)});
    }
    return {file.grid, std::move(fields)};
}

std::vector<float> to_float(const Field& f) {
    std::vector<float> out(f.size());
    std::transform(f.begin(), f.end(), out.begin(), [](double v) { return static_cast<float>(v); });
    return out;
}

Field to_double(std::span<const float> f) { return Field(f.begin(), f.end()); }

void write_state_file(const std::filesystem::path& path, const FlowState& state) {
    const auto& g = state.grid();
    const std::vector<std::size_t> shape{static_cast<std::size_t>(g.ny), static_cast<std::size_t>(g.nx)};
    const NamedArray arrays[] = {
        {"h", shape, to_float(state.h())},
        {"qx", shape, to_float(state.qx())},
        {"qy", shape, to_float(state.qy())},
        {"time", {1}, {static_cast<float>(state.time())}},
    };
    write_array_file(path, g, arrays);
}

FlowState read_state_file(const std::filesystem::path& path) {
    auto file = read_array_file(path);
    for (const char* name : {"h", "qx", "qy"}) {
        if (!file.has(name) || file.get(name).size() != file.grid.cells()) {
            fail(ErrorCategory::size_mismatch, path.string() + ": missing or mis-sized state field " + name);
        }
    }
    const double t = file.has("time") ? static_cast<double>(file.get("time").values.at(0)) : 0.0;
    return FlowState(file.grid, to_double(file.get("h").values), to_double(file.get("qx").values),
                     to_double(file.get("qy").values), t);
}

FlowState quantize(const FlowState& state) {
    auto q = [](const Field& f) {
        Field out(f.size());
        std::transform(f.begin(), f.end(), out.begin(), [](double v) { return static_cast<double>(static_cast<float>(v)); });
        return out;
    };
    Field h = q(state.h()), qx = q(state.qx()), qy = q(state.qy());
    // Rounding can flush a tiny depth to zero; keep the dry-cell invariant.
    for (std::size_t c = 0; c < h.size(); ++c) {
        if (h[c] == 0.0) qx[c] = qy[c] = 0.0;
    }
    return FlowState(state.grid(), std::move(h), std::move(qx), std::move(qy), state.time());
}

}  // namespace flood
