#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "flood/evaluation.hpp"
#include "flood/rng.hpp"
#include "flood/swe.hpp"

using namespace flood;
using namespace flood::eval;

namespace {

scenario::ScenarioConfig tiny_config() {
    scenario::ScenarioConfig c;
    c.seed = 3;
    c.grid = GridSpec{16, 16, 50.0, 50.0};
    c.horizon = 2400.0;
    c.snapshot_every = 240.0;
    c.lead_time = 240.0;
    c.forcing_interval = 300.0;
    c.spinup = 300.0;
    c.inflow_count = 2;
    return c;
}

// Cells 0..19 deep and always wet, 20..39 shallow and sometimes wet, the rest dry.
std::vector<FlowState> three_populations(const GridSpec& g) {
    std::vector<FlowState> snaps;
    for (int k = 0; k < 6; ++k) {
        Field h(g.cells(), 0.0);
        for (std::size_t c = 0; c < g.cells(); ++c) {
            if (c < 20) h[c] = 3.0 + 0.01 * static_cast<double>(c) + 0.2 * (k % 2);
            else if (c < 40) h[c] = (k + static_cast<int>(c)) % 3 == 0 ? 0.0 : 0.3 + 0.001 * static_cast<double>(c);
        }
        snaps.emplace_back(g, h, Field(g.cells(), 0.0), Field(g.cells(), 0.0), 60.0 * k);
    }
    return snaps;
}

scenario::TrainingSample random_sample(const GridSpec& g, Rng& rng) {
    scenario::TrainingSample s;
    s.grid = g;
    const std::size_t n = g.cells();
    s.input.resize(5 * n);
    s.target.resize(3 * n);
    for (std::size_t c = 0; c < n; ++c) {
        const bool wet_in = rng.uniform() < 0.6, wet_out = rng.uniform() < 0.6;
        s.input[c] = wet_in ? static_cast<float>(rng.uniform(0.01, 2.0)) : 0.0f;
        s.input[n + c] = wet_in ? static_cast<float>(rng.normal()) : 0.0f;
        s.input[2 * n + c] = wet_in ? static_cast<float>(rng.normal()) : 0.0f;
        s.target[c] = wet_out ? static_cast<float>(rng.uniform(0.01, 2.0)) : 0.0f;
        s.target[n + c] = wet_out ? static_cast<float>(rng.normal()) : 0.0f;
        s.target[2 * n + c] = wet_out ? static_cast<float>(rng.normal()) : 0.0f;
    }
    return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

TEST(Mse, Examples) {
    const std::vector<double> a{1.0, 2.0, 3.0};
    EXPECT_EQ(mse(a, a), 0.0);
    const std::vector<double> p{1.0, -1.0}, t{0.0, 0.0};
    EXPECT_EQ(mse(p, t), 1.0);
    EXPECT_THROW(mse(a, std::vector<double>{1.0}), Error);
    EXPECT_THROW(mse(std::vector<double>{}, std::vector<double>{}), Error);
}

TEST(Mse, MatchesScalarLoop) {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> p(100), t(100);
        for (auto& v : p) v = rng.normal();
        for (auto& v : t) v = rng.normal();
        long double sum = 0;
        for (int i = 0; i < 100; ++i) sum += (static_cast<long double>(p[i]) - t[i]) * (static_cast<long double>(p[i]) - t[i]);
        const double want = static_cast<double>(sum / 100);
        EXPECT_NEAR(mse(p, t), want, 1e-12 * want);
        EXPECT_NEAR(psnr(mse(p, t), 3.0), 10.0 * std::log10(9.0 / want), 1e-12 * 10.0);
    }
}

TEST(Psnr, Examples) {
    EXPECT_NEAR(psnr(4.0, 2.0), 0.0, 1e-15);
    EXPECT_NEAR(psnr(0.01, 1.0), 20.0, 1e-12);
    EXPECT_TRUE(is_infinite_psnr(psnr(0.0, 1.0)));
    EXPECT_EQ(psnr_text(psnr(0.0, 1.0)), "inf");
    EXPECT_EQ(psnr_text(20.0), "20.000000");
    EXPECT_THROW(psnr(1.0, 0.0), Error);
}

TEST(StateMse, AveragesChannels) {
    const GridSpec g{3, 3, 1.0, 1.0};
    const FlowState a(g, Field(9, 1.0), Field(9, 0.0), Field(9, 0.0), 0.0);
    const FlowState b(g, Field(9, 2.0), Field(9, 3.0), Field(9, 0.0), 0.0);
    EXPECT_DOUBLE_EQ(state_mse(a, b), (1.0 + 9.0 + 0.0) / 3.0);
    EXPECT_DOUBLE_EQ(depth_mse(a, b), 1.0);
}

// ---------------------------------------------------------------------------
// Zones
// ---------------------------------------------------------------------------

TEST(Kmeans, SeparatesObviousClusters) {
    std::vector<std::vector<double>> pts;
    for (int i = 0; i < 10; ++i) pts.push_back({0.0 + 0.01 * i, 0.0});
    for (int i = 0; i < 10; ++i) pts.push_back({5.0 + 0.01 * i, 5.0});
    for (int i = 0; i < 10; ++i) pts.push_back({-5.0, 5.0 + 0.01 * i});
    double inertia = 0;
    const std::vector<int> label = kmeans(pts, 3, ZoneOptions{}, &inertia);
    for (int g = 0; g < 3; ++g)
        for (int i = 1; i < 10; ++i) EXPECT_EQ(label[g * 10 + i], label[g * 10]);
    EXPECT_NE(label[0], label[10]);
    EXPECT_NE(label[0], label[20]);
    EXPECT_NE(label[10], label[20]);
    EXPECT_LT(inertia, 0.03);
}

TEST(ClassifyZones, AllDryFallsBack) {
    const GridSpec g{6, 6, 1.0, 1.0};
    const std::vector<FlowState> snaps(3, FlowState(g));
    const ZoneMap z = classify_zones(snaps);
    EXPECT_EQ(z.count(Zone::dry), 36u);
}

TEST(ClassifyZones, FallbackSplitsWetCellsByDepth) {
    const GridSpec g{4, 4, 1.0, 1.0};
    Field h(16, 0.0);
    for (std::size_t c = 0; c < 4; ++c) h[c] = 2.0;
    const std::vector<FlowState> snaps(2, FlowState(g, h, Field(16, 0.0), Field(16, 0.0), 0.0));
    const ZoneMap z = classify_zones(snaps);  // two distinct feature vectors only
    EXPECT_EQ(z.count(Zone::dry), 12u);
    EXPECT_EQ(z.count(Zone::channel), 4u);
}

TEST(ClassifyZones, RecoversSeparatedPopulations) {
    const GridSpec g{8, 8, 1.0, 1.0};
    const ZoneMap z = classify_zones(three_populations(g));
    for (std::size_t c = 0; c < 64; ++c) {
        const Zone want = c < 20 ? Zone::river : (c < 40 ? Zone::channel : Zone::dry);
        EXPECT_EQ(z.label[c], want) << c;
    }
}

TEST(ClassifyZones, NamesDoNotDependOnSeed) {
    const GridSpec g{8, 8, 1.0, 1.0};
    const auto snaps = three_populations(g);
    const ZoneMap a = classify_zones(snaps);
    for (std::uint64_t seed : {1u, 2u, 99u}) {
        ZoneOptions o;
        o.seed = seed;
        o.restarts = 3;
        EXPECT_EQ(classify_zones(snaps, o).label, a.label);
    }
    EXPECT_EQ(classify_zones(snaps).label, a.label);
    EXPECT_THROW(classify_zones({}), Error);
}

// ---------------------------------------------------------------------------
// One-step tables
// ---------------------------------------------------------------------------

TEST(OneStepTable, PerfectModelScoresZero) {
    const GridSpec g{8, 8, 1.0, 1.0};
    Rng rng(2);
    std::vector<scenario::TrainingSample> samples{random_sample(g, rng), random_sample(g, rng)};
    const ZoneMap z = classify_zones(three_populations(g));
    for (const ZoneRow& r : one_step_table(sample_target, samples, z)) {
        EXPECT_EQ(r.mse_all, 0.0) << r.zone;
        EXPECT_EQ(r.mse_depth, 0.0) << r.zone;
    }
}

TEST(OneStepTable, NoChangeModelMatchesDirectRecomputation) {
    const GridSpec g{8, 8, 1.0, 1.0};
    Rng rng(3);
    std::vector<scenario::TrainingSample> samples;
    for (int k = 0; k < 5; ++k) samples.push_back(random_sample(g, rng));
    const ZoneMap z = classify_zones(three_populations(g));
    const auto rows = one_step_table(sample_input_state, samples, z);
    ASSERT_EQ(rows.size(), 4u);
    const std::size_t n = 64;
    for (int zi = 0; zi < 3; ++zi) {
        long double all = 0, depth = 0;
        std::size_t px = 0;
        for (std::size_t c = 0; c < n; ++c) {
            if (static_cast<int>(z.label[c]) != zi) continue;
            ++px;
            for (const auto& s : samples) {
                for (std::size_t ch = 0; ch < 3; ++ch) {
                    const long double d = static_cast<long double>(s.input[ch * n + c]) - s.target[ch * n + c];
                    all += d * d;
                    if (ch == 0) depth += d * d;
                }
            }
        }
        EXPECT_EQ(rows[static_cast<std::size_t>(zi)].pixels, px);
        EXPECT_NEAR(rows[static_cast<std::size_t>(zi)].mse_all, static_cast<double>(all / (3.0L * px * samples.size())), 1e-12);
        EXPECT_NEAR(rows[static_cast<std::size_t>(zi)].mse_depth, static_cast<double>(depth / (px * samples.size())), 1e-12);
    }
    // Zone MSEs weighted by zone size recompose the global value.
    double recomposed = 0;
    for (int zi = 0; zi < 3; ++zi) recomposed += rows[static_cast<std::size_t>(zi)].mse_all * static_cast<double>(rows[static_cast<std::size_t>(zi)].pixels);
    EXPECT_EQ(rows[3].zone, "all");
    EXPECT_EQ(rows[3].pixels, n);
    EXPECT_NEAR(recomposed / static_cast<double>(n), rows[3].mse_all, 1e-12 * rows[3].mse_all);
}

TEST(OneStepTable, EmptyZoneIsNan) {
    const GridSpec g{4, 4, 1.0, 1.0};
    Rng rng(4);
    const ZoneMap z{g, std::vector<Zone>(16, Zone::dry)};
    const auto rows = one_step_table(sample_input_state, {random_sample(g, rng)}, z);
    EXPECT_TRUE(std::isnan(rows[0].mse_all));
    EXPECT_EQ(rows[0].pixels, 0u);
    EXPECT_EQ(rows[2].mse_all, rows[3].mse_all);
    EXPECT_THROW(one_step_table(sample_input_state, {}, z), Error);
}

// ---------------------------------------------------------------------------
// Rollout curves
// ---------------------------------------------------------------------------

TEST(RolloutCurve, OracleRolloutHasZeroError) {
    const scenario::ScenarioConfig cfg = tiny_config();
    const scenario::Scenario s = scenario::sample_scenario(cfg, 0);
    const auto ref = swe::run(s.initial, s.terrain, s.forcing, cfg.solver, 1200.0, 240.0);
    const auto curve = rollout_curve(ref, ref);
    ASSERT_EQ(curve.size(), ref.size());
    for (const CurvePoint& p : curve) {
        EXPECT_EQ(p.mse, 0.0);
        EXPECT_TRUE(is_infinite_psnr(p.psnr));
    }
    EXPECT_EQ(curve.back().step, 5);
    EXPECT_DOUBLE_EQ(curve.back().time, 1200.0);
}

TEST(RolloutCurve, NoChangeModelErrorGrowsEarly) {
    const scenario::ScenarioConfig cfg = tiny_config();
    const scenario::Scenario s = scenario::sample_scenario(cfg, 1);
    const auto ref = swe::run(s.initial, s.terrain, s.forcing, cfg.solver, 1200.0, 240.0);
    std::vector<FlowState> still;
    for (const FlowState& r : ref) still.push_back(ref[0].with_time(r.time()));
    const auto curve = rollout_curve(still, ref);
    ASSERT_EQ(curve.size(), 6u);
    EXPECT_EQ(curve[0].mse, 0.0);
    for (std::size_t k = 1; k < 4; ++k) EXPECT_GE(curve[k].mse, curve[k - 1].mse) << k;
    EXPECT_GT(curve[3].mse, 0.0);
}

TEST(RolloutCurve, HorizonMismatchRejected) {
    const GridSpec g{4, 4, 1.0, 1.0};
    std::vector<FlowState> a{FlowState(g, 0.0), FlowState(g, 60.0)}, b{FlowState(g, 0.0)};
    EXPECT_THROW(rollout_curve(a, b), Error);
    b.push_back(FlowState(g, 61.0));
    EXPECT_THROW(rollout_curve(a, b), Error);
}

TEST(Csv, FormatIsStable) {
    std::ostringstream out;
    write_curves_csv(out, {{"m1", {CurvePoint{0, 0.0, 0.0, 0.0, psnr(0.0, 1.0)}, CurvePoint{1, 1800.0, 0.25, 0.5, psnr(0.25, 1.0)}}}});
    EXPECT_EQ(out.str(), "label,step,time,mse,mse_depth,psnr\nm1,0,0,0,0,inf\nm1,1,1800,0.25,0.5,6.020600\n");
    std::ostringstream zt;
    write_zone_csv(zt, {{"m1", {ZoneRow{"river", 3, 0.125, std::nan("")}}}});
    EXPECT_EQ(zt.str(), "label,zone,pixels,mse_all,mse_depth\nm1,river,3,0.125,nan\n");
}

// ---------------------------------------------------------------------------
// Timing
// ---------------------------------------------------------------------------

TEST(SpeedBenchmark, MediansAndRatio) {
    int a = 0, b = 0;
    const SpeedResult r = speed_benchmark([&] { ++a; }, [&] { ++b; }, 5);
    EXPECT_EQ(a, 5);
    EXPECT_EQ(b, 5);
    ASSERT_EQ(r.solver_seconds.size(), 5u);
    EXPECT_EQ(r.solver_median, median(r.solver_seconds));
    EXPECT_DOUBLE_EQ(median({3.0, 1.0, 2.0}), 2.0);
    EXPECT_DOUBLE_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
    EXPECT_THROW(speed_benchmark([] {}, [] {}, 0), Error);
}

TEST(SpeedBenchmark, FasterFlowNeedsMoreSolverSteps) {
    // Step count is what drives solver time: a still lake against a dam break.
    const GridSpec g{32, 32, 10.0, 10.0};
    const Terrain t = Terrain::flat(g);
    const ForcingPlan f = ForcingPlan::none(g, 600.0);
    const swe::SolverParams p;
    Field h(g.cells(), 1.0);
    for (int j = 0; j < 32; ++j)
        for (int i = 0; i < 16; ++i) h[g.index(i, j)] = 4.0;
    std::size_t slow = 0, fast = 0;
    swe::run(FlowState(g, Field(g.cells(), 1.0), Field(g.cells(), 0.0), Field(g.cells(), 0.0), 0.0), t, f, p, 600.0, 600.0, nullptr, &slow);
    swe::run(FlowState(g, h, Field(g.cells(), 0.0), Field(g.cells(), 0.0), 0.0), t, f, p, 600.0, 600.0, nullptr, &fast);
    EXPECT_GT(fast, slow);
}

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

TEST(Pgm, MosaicLayout) {
    const auto dir = std::filesystem::temp_directory_path() / "flood_test_eval_pgm";
    std::filesystem::create_directories(dir);
    const GridSpec g{5, 4, 1.0, 1.0};
    Field h(20, 0.0);
    h[g.index(0, 3)] = 2.0;  // top-left in the image
    std::vector<FlowState> ref{FlowState(g, h, Field(20, 0.0), Field(20, 0.0), 0.0), FlowState(g, 60.0)};
    std::vector<FlowState> pred{ref[0], FlowState(g, Field(20, 1.0), Field(20, 0.0), Field(20, 0.0), 60.0)};
    write_rollout_mosaic(dir / "m.pgm", ref, pred);
    std::ifstream in(dir / "m.pgm", std::ios::binary);
    std::string magic;
    int w = 0, hgt = 0, maxv = 0;
    in >> magic >> w >> hgt >> maxv;
    in.get();
    EXPECT_EQ(magic, "P5");
    EXPECT_EQ(w, 3 * 5 + 2);
    EXPECT_EQ(hgt, 2 * 4 + 1);
    EXPECT_EQ(maxv, 255);
    std::vector<unsigned char> px(static_cast<std::size_t>(w * hgt));
    in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
    EXPECT_EQ(px[0], 255);         // deepest truth cell
    EXPECT_EQ(px[1], 0);           // dry
    EXPECT_EQ(px[5], 255);         // gap column
    EXPECT_EQ(px[6], 255);         // same cell in the prediction panel
    EXPECT_EQ(px[12], 0);          // no error at step 0
    EXPECT_EQ(px[static_cast<std::size_t>(5 * w + 12)], 255);  // step 1, largest error
    EXPECT_THROW(write_pgm(dir / "bad.pgm", 2, 2, {1, 2, 3}), Error);
    std::filesystem::remove_all(dir);
}
