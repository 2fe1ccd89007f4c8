#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "flood/field.hpp"

namespace fs = std::filesystem;
using namespace flood;

namespace {

fs::path temp_path(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "flood_field_tests";
    fs::create_directories(dir);
    return dir / name;
}

ErrorCategory category_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.category();
    }
    ADD_FAILURE() << "expected an exception";
    return ErrorCategory::usage;
}

}  // namespace

TEST(GridSpec, RejectsDegenerateGrids) {
    EXPECT_THROW((GridSpec{2, 5, 1.0, 1.0}.validate()), Error);
    EXPECT_THROW((GridSpec{5, 5, 0.0, 1.0}.validate()), Error);
    EXPECT_NO_THROW((GridSpec{3, 3, 1.0, 1.0}.validate()));
}

TEST(Velocity, ExactDivisionRegime) {
    EXPECT_DOUBLE_EQ(desingularized_velocity(1.0, 2.0, 1e-6), 2.0);
}

TEST(Velocity, DryCellIsZero) { EXPECT_EQ(desingularized_velocity(0.0, 0.0, 1e-6), 0.0); }

TEST(Velocity, ThinFilmStaysBounded) {
    const double h = 1e-9, q = 1e-9, eps = 1e-6;
    const double expected = 2.0 * h * q / (h * h + eps * eps);
    EXPECT_NEAR(desingularized_velocity(h, q, eps), expected, 1e-20);
    EXPECT_NEAR(desingularized_velocity(h, q, eps), 2e-6, 1e-11);
}

TEST(Velocity, BoundedByMomentumOverEps) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> lh(-12.0, 1.0), uq(-5.0, 5.0);
    const double eps = 1e-6;
    for (int k = 0; k < 10000; ++k) {
        const double h = std::pow(10.0, lh(rng));
        const double q = uq(rng);
        EXPECT_LE(std::abs(desingularized_velocity(h, q, eps)), std::abs(q) / eps * (1 + 1e-12));
    }
}

TEST(Velocity, FieldVersionMatchesScalar) {
    GridSpec g{3, 3, 1.0, 1.0};
    Field h(9, 1.0), qx(9, 0.5), qy(9, -0.25);
    h[4] = 0.0;
    qx[4] = qy[4] = 0.0;
    const FlowState s(g, h, qx, qy, 0.0);
    const auto [u, v] = velocity(s, 1e-6);
    EXPECT_DOUBLE_EQ(u[0], 0.5);
    EXPECT_DOUBLE_EQ(v[0], -0.25);
    EXPECT_EQ(u[4], 0.0);
    EXPECT_THROW(velocity(s, 0.0), Error);
}

TEST(FlowState, ConstructorsEnforceInvariants) {
    GridSpec g{3, 3, 1.0, 1.0};
    Field h(9, 1.0), q(9, 0.0);
    h[2] = -1e-3;
    EXPECT_THROW(FlowState(g, h, q, q, 0.0), Error);
    h[2] = 0.0;
    Field qx = q;
    qx[2] = 1.0;
    EXPECT_THROW(FlowState(g, h, qx, q, 0.0), Error);
    EXPECT_THROW(FlowState(g, Field(8, 0.0), Field(9, 0.0), Field(9, 0.0), 0.0), Error);
    EXPECT_NO_THROW(FlowState(g, h, q, q, 0.0));
}

TEST(FlowState, LakeAtRestDepth) {
    GridSpec g{4, 3, 1.0, 1.0};
    Field z{0, 1, 2, 3, 0, 1, 2, 3, 0, 1, 2, 3};
    Terrain t(g, z, Field(12, 0.0));
    const FlowState s = FlowState::lake_at_rest(t, 1.5);
    EXPECT_DOUBLE_EQ(s.h()[0], 1.5);
    EXPECT_DOUBLE_EQ(s.h()[1], 0.5);
    EXPECT_EQ(s.h()[2], 0.0);
    EXPECT_EQ(s.h()[3], 0.0);
}

TEST(FlowState, InteriorVolumeIgnoresRing) {
    GridSpec g{4, 4, 2.0, 3.0};
    const FlowState s(g, Field(16, 1.0), Field(16, 0.0), Field(16, 0.0), 0.0);
    EXPECT_DOUBLE_EQ(s.interior_volume(), 4 * 6.0);
}

TEST(Forcing, PiecewiseIntegralMatchesHandSum) {
    const std::vector<double> v{1.0, 2.0, 4.0};
    EXPECT_DOUBLE_EQ(piecewise_integral(v, 10.0, 0.0, 10.0), 10.0);
    EXPECT_DOUBLE_EQ(piecewise_integral(v, 10.0, 5.0, 25.0), 5.0 + 20.0 + 20.0);
    // Held beyond the last entry.
    EXPECT_DOUBLE_EQ(piecewise_integral(v, 10.0, 30.0, 40.0), 40.0);
    EXPECT_EQ(piecewise_integral(v, 10.0, 7.0, 7.0), 0.0);
}

TEST(Forcing, RainAndInflowIntegrals) {
    GridSpec g{5, 5, 10.0, 10.0};
    ForcingPlan f = ForcingPlan::none(g, 3600.0);
    f.interval = 600.0;
    f.rain = {{1e-5}, {2e-5}};
    f.inflows.push_back({g.index(2, 2), {3.0, 1.0}});
    f.validate(g);
    EXPECT_DOUBLE_EQ(f.rain_rate(0, 100.0), 1e-5);
    EXPECT_DOUBLE_EQ(f.rain_rate(0, 700.0), 2e-5);
    EXPECT_NEAR(f.rain_depth(0, 300.0, 900.0), 300.0 * 1e-5 + 300.0 * 2e-5, 1e-18);
    EXPECT_DOUBLE_EQ(f.inflow_volume(0, 0.0, 1200.0), 600.0 * 3.0 + 600.0 * 1.0);
    EXPECT_DOUBLE_EQ(f.discharge(0, 2000.0), 1.0);
}

TEST(Forcing, ValidationRejectsBadPlans) {
    GridSpec g{5, 5, 10.0, 10.0};
    ForcingPlan f = ForcingPlan::none(g, 100.0);
    f.inflows.push_back({0, {1.0}});  // ring cell
    EXPECT_THROW(f.validate(g), Error);
    f.inflows.clear();
    f.rain = {{-1.0}};
    EXPECT_THROW(f.validate(g), Error);
    f.rain = {{1.0}};
    f.subarea_map[3] = 4;
    EXPECT_THROW(f.validate(g), Error);
}

TEST(FieldFile, ZerosRoundTrip) {
    GridSpec g{3, 3, 1.0, 1.0};
    const std::vector<NamedField> fields{{"h", std::vector<float>(9, 0.0f)}};
    const auto p = temp_path("zeros.ff");
    write_field_file(p, fields, g);
    const auto [g2, back] = read_field_file(p);
    EXPECT_EQ(g2, g);
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(back[0].name, "h");
    EXPECT_EQ(back[0].values, fields[0].values);
}

TEST(FieldFile, SingleValueExact) {
    GridSpec g{3, 3, 0.1, 0.7};
    std::vector<float> h(9, 0.0f);
    h[4] = 1.5f;
    const std::vector<NamedField> fields{{"h", h}};
    const auto p = temp_path("single.ff");
    write_field_file(p, fields, g);
    const auto [g2, back] = read_field_file(p);
    EXPECT_EQ(back[0].values[4], 1.5f);
    EXPECT_EQ(g2.dx, 0.1);
    EXPECT_EQ(g2.dy, 0.7);
}

TEST(FieldFile, BitExactIncludingSignedZeros) {
    GridSpec g{7, 5, 25.0, 12.5};
    std::mt19937 rng(123);
    std::uniform_int_distribution<std::uint32_t> bits;
    std::vector<NamedField> fields(3);
    for (int k = 0; k < 3; ++k) {
        fields[k].name = "f" + std::to_string(k);
        for (std::size_t c = 0; c < g.cells(); ++c) {
            float v;
            do {
                v = std::bit_cast<float>(bits(rng));
            } while (!std::isfinite(v));
            fields[k].values.push_back(v);
        }
    }
    fields[0].values[0] = -0.0f;
    fields[0].values[1] = 0.0f;
    fields[1].values[2] = std::numeric_limits<float>::denorm_min();
    const auto p = temp_path("bits.ff");
    write_field_file(p, fields, g);
    const auto [g2, back] = read_field_file(p);
    ASSERT_EQ(back.size(), 3u);
    for (int k = 0; k < 3; ++k) {
        for (std::size_t c = 0; c < g.cells(); ++c) {
            EXPECT_EQ(std::bit_cast<std::uint32_t>(back[k].values[c]), std::bit_cast<std::uint32_t>(fields[k].values[c]));
        }
    }
}

TEST(FieldFile, CorruptMagicIsMalformedHeader) {
    GridSpec g{3, 3, 1.0, 1.0};
    const std::vector<NamedField> fields{{"h", std::vector<float>(9, 1.0f)}};
    const auto p = temp_path("corrupt.ff");
    write_field_file(p, fields, g);
    {
        std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XX", 2);
    }
    EXPECT_EQ(category_of([&] { read_field_file(p); }), ErrorCategory::malformed_header);
}

TEST(FieldFile, TruncatedPayloadIsSizeMismatch) {
    GridSpec g{3, 3, 1.0, 1.0};
    const std::vector<NamedField> fields{{"h", std::vector<float>(9, 1.0f)}};
    const auto p = temp_path("short.ff");
    write_field_file(p, fields, g);
    fs::resize_file(p, fs::file_size(p) - 4);
    EXPECT_EQ(category_of([&] { read_field_file(p); }), ErrorCategory::size_mismatch);
}

TEST(FieldFile, MissingPathIsIoError) {
    EXPECT_EQ(category_of([] { read_field_file("/nonexistent/dir/x.ff"); }), ErrorCategory::io);
}

TEST(FieldFile, WrongSizedFieldRejectedOnWrite) {
    GridSpec g{3, 3, 1.0, 1.0};
    const std::vector<NamedField> fields{{"h", std::vector<float>(8, 1.0f)}};
    EXPECT_EQ(category_of([&] { write_field_file(temp_path("bad.ff"), fields, g); }), ErrorCategory::size_mismatch);
}

TEST(ArrayFile, ArbitraryShapesRoundTrip) {
    GridSpec g{3, 3, 1.0, 1.0};
    std::vector<NamedArray> arrays{{"w", {2, 3, 4}, std::vector<float>(24)}, {"t", {1}, {42.5f}}};
    for (std::size_t k = 0; k < 24; ++k) arrays[0].values[k] = static_cast<float>(k) * 0.5f;
    const auto p = temp_path("arrays.ff");
    write_array_file(p, g, arrays);
    const ArrayFile back = read_array_file(p);
    EXPECT_EQ(back.get("w").shape, (std::vector<std::size_t>{2, 3, 4}));
    EXPECT_EQ(back.get("w").values, arrays[0].values);
    EXPECT_EQ(back.get("t").values[0], 42.5f);
    EXPECT_FALSE(back.has("q"));
}

TEST(StateFile, RoundTripMatchesQuantizedState) {
    GridSpec g{4, 4, 10.0, 10.0};
    Field h(16), qx(16), qy(16);
    for (std::size_t c = 0; c < 16; ++c) {
        h[c] = 0.1 * static_cast<double>(c) + 1.0 / 3.0;
        qx[c] = std::sin(static_cast<double>(c));
        qy[c] = std::cos(static_cast<double>(c));
    }
    const FlowState s(g, h, qx, qy, 900.0);
    const auto p = temp_path("state.ff");
    write_state_file(p, s);
    const FlowState back = read_state_file(p);
    const FlowState q = quantize(s);
    EXPECT_EQ(back.h(), q.h());
    EXPECT_EQ(back.qx(), q.qx());
    EXPECT_EQ(back.qy(), q.qy());
    EXPECT_EQ(back.time(), 900.0);
}
