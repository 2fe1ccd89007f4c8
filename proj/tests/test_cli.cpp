#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = 0;
    std::string out, err;
};

Result run(std::vector<std::string> args) {
    std::vector<const char*> argv{"flood"};
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = flood::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string config(const std::string& name) { return (fs::path(FLOOD_SOURCE_DIR) / "configs" / name).string(); }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() / ("flood_test_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }
    std::string path(const std::string& rel) const { return (dir_ / rel).string(); }

    fs::path dir_;
};

}  // namespace

TEST_F(Cli, LakeAtRestSimulation) {
    const Result r = run({"simulate", "-q", "-c", config("lake_at_rest.cfg"), "-o", path("lake")});
    ASSERT_EQ(r.code, 0) << r.err;
    const std::string summary = slurp(path("lake/summary.txt"));
    std::istringstream in(summary);
    std::string key, text;
    double q = -1, dh = -1;
    while (in >> key >> text) {
        if (key == "max_abs_q") q = std::stod(text);
        if (key == "max_abs_dh") dh = std::stod(text);
        if (key == "steps") {
            EXPECT_EQ(text, "1000");
        }
    }
    EXPECT_GE(q, 0.0);
    EXPECT_LT(q, 1e-10);
    EXPECT_LT(dh, 1e-10);
    const std::string record = slurp(path("lake/run_record.txt"));
    EXPECT_NE(record.find("command simulate"), std::string::npos);
    EXPECT_NE(record.find("summary.txt "), std::string::npos);
    EXPECT_NE(record.find("sim_mode = lake_at_rest"), std::string::npos);
}

TEST_F(Cli, UnknownSubcommandWritesNothing) {
    const Result r = run({"frobnicate", "-o", path("x")});
    EXPECT_EQ(r.code, flood::cli::exit_usage);
    EXPECT_EQ(r.err.rfind("error: usage: ", 0), 0u) << r.err;
    EXPECT_FALSE(fs::exists(dir_));
}

TEST_F(Cli, MissingRequiredFlagIsUsageError) {
    EXPECT_EQ(run({"train", "-o", path("x")}).code, flood::cli::exit_usage);
    EXPECT_EQ(run({"simulate", "-c", config("lake_at_rest.cfg")}).code, flood::cli::exit_usage);
    EXPECT_FALSE(fs::exists(dir_));
}

TEST_F(Cli, ConfigErrorsHaveTheirOwnCode) {
    const Result r = run({"simulate", "-c", config("lake_at_rest.cfg"), "-o", path("x"), "--set", "no_such_key=1"});
    EXPECT_EQ(r.code, flood::cli::exit_config);
    EXPECT_EQ(r.err.rfind("error: config: ", 0), 0u) << r.err;
    EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
    EXPECT_FALSE(fs::exists(dir_));
    EXPECT_EQ(run({"simulate", "-c", config("lake_at_rest.cfg"), "-o", path("x"), "--set", "nx=abc"}).code,
              flood::cli::exit_config);
}

TEST_F(Cli, RefusesToOverwriteWithoutForce) {
    const std::vector<std::string> args{"simulate", "-q", "-c", config("lake_at_rest.cfg"), "-o", path("lake"), "--set", "sim_steps=3"};
    ASSERT_EQ(run(args).code, 0);
    const Result again = run(args);
    EXPECT_EQ(again.code, flood::cli::exit_io);
    EXPECT_NE(again.err.find("--force"), std::string::npos);
    auto forced = args;
    forced.push_back("--force");
    EXPECT_EQ(run(forced).code, 0);
}

TEST_F(Cli, SeedOverrideIsRecorded) {
    ASSERT_EQ(run({"simulate", "-q", "-c", config("lake_at_rest.cfg"), "-o", path("a"), "--set", "sim_steps=2", "--seed", "99"}).code, 0);
    EXPECT_NE(slurp(path("a/run_record.txt")).find("seed 99\n"), std::string::npos);
}

TEST_F(Cli, ExitCodesAreDistinct) {
    using namespace flood;
    std::vector<int> codes;
    for (ErrorCategory c : {ErrorCategory::usage, ErrorCategory::config, ErrorCategory::io, ErrorCategory::cfl_violation,
                            ErrorCategory::divergence, ErrorCategory::singular, ErrorCategory::grid_mismatch,
                            ErrorCategory::invalid_argument}) {
        codes.push_back(cli::exit_code(c));
    }
    std::sort(codes.begin(), codes.end());
    EXPECT_EQ(std::unique(codes.begin(), codes.end()), codes.end());
    EXPECT_EQ(std::count(codes.begin(), codes.end(), 0), 0);
}

TEST_F(Cli, TinyPipelineEndToEnd) {
    const std::string cfg = config("tiny.cfg"), data = path("data"), model = path("train/model.bin");
    ASSERT_EQ(run({"gen-data", "-q", "-c", cfg, "-o", data}).code, 0);
    EXPECT_TRUE(fs::exists(path("data/manifest.txt")));
    const Result again = run({"gen-data", "-q", "-c", cfg, "-o", data});
    EXPECT_EQ(again.code, flood::cli::exit_io);

    ASSERT_EQ(run({"train", "-q", "-c", cfg, "-d", data, "-o", path("train")}).code, 0);
    EXPECT_TRUE(fs::exists(model));
    EXPECT_TRUE(fs::exists(path("train/history.csv")));
    ASSERT_EQ(run({"rollout", "-q", "-c", cfg, "-d", data, "-m", model, "-o", path("rollout")}).code, 0);
    EXPECT_TRUE(fs::exists(path("rollout/mosaic.pgm")));
    ASSERT_EQ(run({"evaluate", "-q", "-c", cfg, "-d", data, "-m", model, "-o", path("evaluate")}).code, 0);
    const std::string zones = slurp(path("evaluate/zones.csv"));
    EXPECT_EQ(zones.rfind("label,zone,pixels,mse_all,mse_depth\n", 0), 0u);
    EXPECT_NE(zones.find("surrogate,all,256,"), std::string::npos);
    EXPECT_NE(slurp(path("evaluate/curves.csv")).find("surrogate,3,"), std::string::npos);

    // Scenario 0 generated training pairs and has no held-out reference.
    const Result bad = run({"rollout", "-q", "-c", cfg, "-d", data, "-m", model, "-o", path("bad"), "--set", "rollout_scenario=0"});
    EXPECT_EQ(bad.code, flood::cli::exit_argument) << bad.err;

    ASSERT_EQ(run({"bench", "-q", "-c", cfg, "-d", data, "-m", model, "-o", path("bench")}).code, 0);
    EXPECT_NE(slurp(path("bench/bench.txt")).find("ratio "), std::string::npos);
}
