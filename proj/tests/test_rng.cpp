#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "support/oracles.hpp"
#include "tdcdm/rng.hpp"

using namespace tdcdm;

// Known-answer vectors published with the Random123 distribution (kat_vectors).
TEST(Philox, KnownAnswerZero) {
    const Counter out = philox4x32_10({0, 0, 0, 0}, {0, 0});
    EXPECT_EQ(out, (Counter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
}

TEST(Philox, KnownAnswerAllOnes) {
    const Counter out = philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
    EXPECT_EQ(out, (Counter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
}

TEST(Philox, KnownAnswerPi) {
    const Counter out = philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
    EXPECT_EQ(out, (Counter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(Stream, SameAddressSameSequence) {
    Stream a(derive_key(42, stream_tag::kFit), 1, 2, 3), b(derive_key(42, stream_tag::kFit), 1, 2, 3);
    for (int i = 0; i < 1000; ++i) ASSERT_EQ(a(), b());
}

TEST(Stream, DistinctAddressesDiffer) {
    const std::uint64_t key = derive_key(42, stream_tag::kFit);
    std::set<std::uint32_t> firsts;
    for (std::uint32_t unit = 0; unit < 4; ++unit) {
        for (std::uint32_t sweep = 0; sweep < 4; ++sweep) {
            for (std::uint32_t block = 0; block < 4; ++block) {
                Stream s(key, unit, sweep, block);
                firsts.insert(s());
            }
        }
    }
    EXPECT_EQ(firsts.size(), 64u);
    EXPECT_NE(derive_key(42, stream_tag::kFit), derive_key(42, stream_tag::kSimulate));
    EXPECT_NE(derive_key(42, stream_tag::kFit), derive_key(43, stream_tag::kFit));
}

TEST(Stream, UniformIsOpenUnitWithCorrectMoments) {
    Stream s(derive_key(1, 0), 0, 0, 0);
    const int n = 200000;
    double sum = 0, ss = 0;
    for (int i = 0; i < n; ++i) {
        const double u = s.uniform();
        ASSERT_GT(u, 0.0);
        ASSERT_LT(u, 1.0);
        sum += u;
        ss += u * u;
    }
    const double mean = sum / n, var = ss / n - mean * mean;
    EXPECT_NEAR(mean, 0.5, 3 * std::sqrt(1.0 / 12 / n));
    EXPECT_NEAR(var, 1.0 / 12, 0.002);
}

TEST(Stream, NormalPassesKs) {
    Stream s(derive_key(2, 0), 0, 0, 0);
    std::vector<double> x(50000);
    for (auto& v : x) v = s.normal();
    EXPECT_GT(oracle::ks_one_sample(x, oracle::normal_cdf).p, 0.01);
}

TEST(Stream, BetaMean) {
    Stream s(derive_key(3, 0), 0, 0, 0);
    const int n = 100000;
    double sum = 0;
    for (int i = 0; i < n; ++i) sum += s.beta(2.0, 5.0);
    const double sd = std::sqrt(2.0 * 5.0 / (49.0 * 8.0));
    EXPECT_NEAR(sum / n, 2.0 / 7.0, 3 * sd / std::sqrt(n));
}

TEST(Stream, BelowIsUniform) {
    Stream s(derive_key(4, 0), 0, 0, 0);
    std::vector<int> counts(7, 0);
    const int n = 70000;
    for (int i = 0; i < n; ++i) {
        const auto v = s.below(7);
        ASSERT_LT(v, 7u);
        ++counts[v];
    }
    for (int c : counts) EXPECT_NEAR(c, n / 7.0, 4 * std::sqrt(n / 7.0));
}

TEST(SampleLogWeights, NeverPicksNegInfinity) {
    Stream s(derive_key(5, 0), 0, 0, 0);
    const std::vector<double> w = {-INFINITY, 0.0, -INFINITY, std::log(3.0)};
    std::vector<int> counts(4, 0);
    for (int i = 0; i < 40000; ++i) ++counts[sample_log_weights(w, s)];
    EXPECT_EQ(counts[0], 0);
    EXPECT_EQ(counts[2], 0);
    EXPECT_NEAR(counts[3] / 40000.0, 0.75, 0.01);
}

TEST(SampleLogWeights, HandlesHugeMagnitudes) {
    Stream s(derive_key(6, 0), 0, 0, 0);
    const std::vector<double> w = {-1e6, -1e6 + std::log(4.0)};
    int second = 0;
    for (int i = 0; i < 20000; ++i) second += sample_log_weights(w, s) == 1;
    EXPECT_NEAR(second / 20000.0, 0.8, 0.015);
}

TEST(SampleLogWeights, AllZeroWeightsThrow) {
    Stream s(derive_key(7, 0), 0, 0, 0);
    const std::vector<double> w = {-INFINITY, -INFINITY};
    EXPECT_THROW(sample_log_weights(w, s), DomainError);
}
