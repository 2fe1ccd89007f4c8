#include <gtest/gtest.h>

#include <set>

#include "flood/config.hpp"
#include "flood/error.hpp"
#include "flood/hash.hpp"
#include "flood/rng.hpp"

using namespace flood;

namespace {

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

TEST(Config, ParsesValuesCommentsAndDefaults) {
    const Config c = Config::parse("# comment\n\nnx = 32\n  dx=12.5  \nrain_pattern = pulse\n");
    c.check_known();
    EXPECT_EQ(c.get_int("nx"), 32);
    EXPECT_EQ(c.get_real("dx"), 12.5);
    EXPECT_EQ(c.get_string("rain_pattern"), "pulse");
    EXPECT_EQ(c.get_int("ny"), 64);
    EXPECT_EQ(c.get_real("cfl"), 0.45);
}

TEST(Config, UnknownKeyIsConfigError) {
    const Config c = Config::parse("nxx = 3\n");
    EXPECT_EQ(category_of([&] { c.check_known(); }), ErrorCategory::config);
}

TEST(Config, DuplicateKeyAndMissingEquals) {
    EXPECT_EQ(category_of([] { Config::parse("nx = 3\nnx = 4\n"); }), ErrorCategory::config);
    EXPECT_EQ(category_of([] { Config::parse("nx 3\n"); }), ErrorCategory::config);
}

TEST(Config, TypeErrors) {
    const Config c = Config::parse("nx = 3.5\ndx = abc\nseed = -1\n");
    EXPECT_EQ(category_of([&] { c.get_int("nx"); }), ErrorCategory::config);
    EXPECT_EQ(category_of([&] { c.get_real("dx"); }), ErrorCategory::config);
    EXPECT_EQ(category_of([&] { c.get_u64("seed"); }), ErrorCategory::config);
}

TEST(Config, SchemaKeysAreUniqueAndDefaultsParse) {
    std::set<std::string> seen;
    Config c;
    for (const auto& s : config_schema()) {
        EXPECT_TRUE(seen.insert(s.key).second) << s.key;
        if (s.type == "int") {
            EXPECT_NO_THROW(c.get_int(s.key)) << s.key;
        } else if (s.type == "real") {
            EXPECT_NO_THROW(c.get_real(s.key)) << s.key;
        }
    }
}

TEST(Config, TextRoundTrip) {
    Config c;
    c.set("nx", "16");
    c.set("seed", "9");
    const Config back = Config::parse(c.to_text());
    EXPECT_EQ(back.values(), c.values());
}

TEST(Hash, KnownVectors) {
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Rng, StreamsAreDeterministicAndDistinct) {
    Rng a(5, {1, 2}), b(5, {1, 2}), c(5, {1, 3});
    bool differs = false;
    for (int k = 0; k < 100; ++k) {
        const auto x = a.bits();
        EXPECT_EQ(x, b.bits());
        differs = differs || x != c.bits();
    }
    EXPECT_TRUE(differs);
}

TEST(Rng, UniformAndNormalMoments) {
    Rng r(42);
    double su = 0.0, sn = 0.0, sn2 = 0.0;
    const int n = 200000;
    for (int k = 0; k < n; ++k) {
        const double u = r.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        su += u;
        const double z = r.normal();
        sn += z;
        sn2 += z * z;
    }
    EXPECT_NEAR(su / n, 0.5, 0.005);
    EXPECT_NEAR(sn / n, 0.0, 0.01);
    EXPECT_NEAR(sn2 / n, 1.0, 0.02);
}
