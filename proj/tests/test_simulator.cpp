#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>
#include <vector>

#include "support/oracles.hpp"
#include "tdcdm/simulator.hpp"

using namespace tdcdm;

namespace {

std::vector<double> unit_sd_points(std::size_t m, std::uint64_t seed) {
    std::mt19937_64 eng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> p(m);
    for (auto& x : p) x = nd(eng);
    return standardize_tau(p);
}

}  // namespace

TEST(Kde, SilvermanBandwidth) {
    const auto pts = unit_sd_points(100, 1);
    EXPECT_NEAR(kde_bandwidth(pts), 0.42199360078670706, 1e-12);
    EXPECT_NEAR(kde_bandwidth(pts), 1.06 * std::pow(100.0, -0.2), 1e-12);
    // Homogeneous of degree one in scale and shift invariant.
    std::vector<double> moved = pts;
    for (auto& x : moved) x = 3.0 * x - 7.0;
    EXPECT_NEAR(kde_bandwidth(moved), 3.0 * kde_bandwidth(pts), 1e-12);
    EXPECT_THROW(kde_bandwidth(std::vector<double>{1.0}), DegenerateError);
    EXPECT_THROW(KdeSampler::from_points({0.5}), DegenerateError);
    EXPECT_THROW(KdeSampler::from_points({0.5, 0.5, 0.5}), DegenerateError);
}

TEST(Kde, TinyBandwidthReproducesPoints) {
    KdeSampler k{{-1.0, 0.25, 2.0}, 1e-12};
    Stream rng(derive_key(71, 0), 0, 0, 0);
    for (double x : k.sample(1000, rng)) {
        const double gap = std::min({std::abs(x + 1.0), std::abs(x - 0.25), std::abs(x - 2.0)});
        ASSERT_LT(gap, 1e-9);
    }
}

TEST(Kde, MixtureMoments) {
    const KdeSampler k = reference_kde();
    Stream rng(derive_key(72, 0), 0, 0, 0);
    const auto draws = k.sample(100000, rng);
    const MeanSd pool = sample_mean_sd(k.points);
    const MeanSd got = sample_mean_sd(draws);
    const double m = static_cast<double>(k.points.size());
    const double var = pool.sd * pool.sd * (m - 1) / m + k.bandwidth * k.bandwidth;
    EXPECT_NEAR(got.mean, pool.mean, 4 * std::sqrt(var / 100000));
    EXPECT_NEAR(got.sd * got.sd, var, 0.02 * var);
}

TEST(Kde, MatchesIndependentMixtureSampler) {
    const KdeSampler k = reference_kde();
    Stream rng(derive_key(73, 0), 0, 0, 0);
    const auto draws = k.sample(20000, rng);
    std::mt19937_64 eng(99);
    std::uniform_int_distribution<std::size_t> pick(0, k.points.size() - 1);
    std::normal_distribution<double> nd(0.0, k.bandwidth);
    std::vector<double> ref(20000);
    for (auto& x : ref) x = k.points[pick(eng)] + nd(eng);
    EXPECT_GT(oracle::ks_two_sample(draws, ref).p, 0.01);
}

TEST(TrueQ, TableProperties) {
    const auto q30 = true_q(30);
    ASSERT_EQ(q30.size(), 2u);
    for (std::size_t t = 0; t < 2; ++t) {
        EXPECT_EQ(q30[t].time_index(), t + 1);
        for (std::size_t j = 0; j < 30; ++j) {
            EXPECT_EQ(q30[t].at(j, 0), kTrueQ30[j][t][0] - '0');
            EXPECT_EQ(q30[t].at(j, 1), kTrueQ30[j][t][1] - '0');
        }
    }
    for (std::size_t J : kItemGrid) {
        const auto q = true_q(J);
        for (std::size_t t = 0; t < 2; ++t) {
            EXPECT_TRUE(check_identifiable(q[t]).identifiable) << "J=" << J << " t=" << t;
            for (std::size_t j = 0; j < J; ++j) EXPECT_EQ(q[t].row(j), q30[t].row(j));
        }
    }
    // Time 1 of the first ten items: 10 10 01 01 10 11 01 01 10 01.
    const std::vector<Pattern> t1 = {0b10, 0b10, 0b01, 0b01, 0b10, 0b11, 0b01, 0b01, 0b10, 0b01};
    const auto q10 = true_q(10);
    EXPECT_EQ(std::vector<Pattern>(q10[0].rows().begin(), q10[0].rows().end()), t1);
    EXPECT_THROW(true_q(0), ConfigError);
    EXPECT_THROW(true_q(31), ConfigError);
    EXPECT_THROW(true_q(3), ConfigError);
}

TEST(Condition, GridAndTruths) {
    EXPECT_THROW(make_condition(900, 10, 1, 1), ConfigError);
    EXPECT_THROW(make_condition(800, 12, 1, 1), ConfigError);
    EXPECT_NO_THROW(make_condition(900, 12, 1, 1, true));
    const auto c = make_condition(1600, 20, 3, 5);
    EXPECT_EQ(c.label(), "N1600_J20");
    for (const auto& ip : c.items) {
        for (std::size_t j = 0; j < 20; ++j) {
            EXPECT_GE(ip.g[j], 0.1);
            EXPECT_LE(ip.g[j], 0.3);
            EXPECT_GE(ip.s[j], 0.1);
            EXPECT_LE(ip.s[j], 0.3);
        }
    }
    EXPECT_EQ(c.coeffs.gamma10[0], -3.0);
    EXPECT_EQ(c.coeffs.beta0, std::vector<double>(2, 0.0));
    EXPECT_EQ(c.coeffs.beta_z, (std::vector<double>{0.5, -0.5, -0.5, 0.5}));
    EXPECT_EQ(c.coeffs.gamma01, (std::vector<double>{0.0, -0.5, 0.5, 0.0, 0.5, -0.5}));
    const auto again = make_condition(1600, 20, 3, 5);
    EXPECT_EQ(again.items[1].g, c.items[1].g);
    EXPECT_NE(make_condition(1600, 20, 3, 6).items[1].g, c.items[1].g);
}

TEST(GenTau, ShapeStandardisationAndRankLink) {
    auto c = make_condition(800, 30, 1, 2);
    Stream rng(derive_key(74, 0), 0, 0, 0);
    const auto tau = gen_tau(c, reference_kde(), rng);
    ASSERT_EQ(tau.size(), 2u);
    for (std::size_t t = 0; t < 2; ++t) {
        ASSERT_EQ(tau[t].size(), 30u);
        const MeanSd ms = sample_mean_sd(tau[t]);
        EXPECT_NEAR(ms.mean, 0.0, 1e-12);
        EXPECT_NEAR(ms.sd, 1.0, 1e-12);
        double min_single = INFINITY, max_double = -INFINITY;
        for (std::size_t j = 0; j < 30; ++j) {
            if (std::popcount(c.q[t].row(j)) == 1) min_single = std::min(min_single, tau[t][j]);
            else max_double = std::max(max_double, tau[t][j]);
        }
        EXPECT_GT(min_single, max_double);
    }
    c.tau_link = TauLink::Independent;
    Stream rng2(derive_key(74, 0), 0, 0, 0);
    const auto ind = gen_tau(c, reference_kde(), rng2);
    EXPECT_NE(ind[0], tau[0]);
}

TEST(GenTrajectories, ZeroCoefficientsGiveFairCoins) {
    auto c = make_condition(2400, 10, 1, 3);
    c.coeffs = StructuralParams(2, 2);
    Stream zr(derive_key(75, 0), 0, 0, 0), ar(derive_key(75, 1), 0, 0, 0);
    const Dataset d = gen_covariates(c, zr);
    const auto alpha = gen_trajectories(c, d, ar);
    const double n = 2400.0;
    for (std::size_t t = 0; t < 2; ++t) {
        for (std::size_t k = 0; k < 2; ++k) {
            double on = 0;
            for (std::size_t i = 0; i < 2400; ++i) on += alpha.at(i, k, t);
            EXPECT_NEAR(on / n, 0.5, 3.5 * std::sqrt(0.25 / n)) << "t=" << t << " k=" << k;
        }
    }
}

TEST(GenTrajectories, StrongRetention) {
    auto c = make_condition(2400, 10, 1, 4);
    c.coeffs.gamma10[0] = c.coeffs.gamma10[3] = -10.0;
    Stream zr(derive_key(76, 0), 0, 0, 0), ar(derive_key(76, 1), 0, 0, 0);
    const Dataset d = gen_covariates(c, zr);
    const auto alpha = gen_trajectories(c, d, ar);
    double kept = 0, total = 0;
    for (std::size_t i = 0; i < 2400; ++i) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (alpha.at(i, k, 0) == 1) {
                total += 1;
                kept += alpha.at(i, k, 1);
            }
        }
    }
    ASSERT_GT(total, 500);
    EXPECT_GT(kept / total, 0.999);
}

TEST(GenCovariates, Standardised) {
    const auto c = make_condition(800, 10, 1, 5);
    Stream zr(derive_key(77, 0), 0, 0, 0);
    const Dataset d = gen_covariates(c, zr);
    for (std::size_t z = 0; z < 2; ++z) {
        std::vector<double> col(800);
        for (std::size_t i = 0; i < 800; ++i) col[i] = d.z(i, z);
        const MeanSd ms = sample_mean_sd(col);
        EXPECT_NEAR(ms.mean, 0.0, 1e-12);
        EXPECT_NEAR(ms.sd, 1.0, 1e-12);
    }
}

TEST(GenResponses, NoiselessAndGuessRates) {
    auto c = make_condition(20000, 30, 1, 6, true);
    Stream zr(derive_key(78, 0), 0, 0, 0), ar(derive_key(78, 1), 0, 0, 0), yr(derive_key(78, 2), 0, 0, 0);
    Dataset d = gen_covariates(c, zr);
    const auto alpha = gen_trajectories(c, d, ar);

    auto noiseless = c;
    for (auto& ip : noiseless.items) {
        std::fill(ip.g.begin(), ip.g.end(), 0.0);
        std::fill(ip.s.begin(), ip.s.end(), 0.0);
    }
    Dataset exact = d;
    gen_responses(noiseless, alpha, exact, yr);
    for (std::size_t t = 0; t < 2; ++t) {
        for (std::size_t i = 0; i < 2000; ++i) {
            for (std::size_t j = 0; j < 30; ++j) {
                ASSERT_EQ(exact.y(i, j, t), covers(alpha.profile(i, t), c.q[t].row(j)) ? 1 : 0);
            }
        }
    }

    gen_responses(c, alpha, d, yr);
    for (std::size_t t = 0; t < 2; ++t) {
        for (std::size_t j = 0; j < 30; j += 7) {
            double n0 = 0, y0 = 0, n1 = 0, y1 = 0;
            for (std::size_t i = 0; i < 20000; ++i) {
                if (covers(alpha.profile(i, t), c.q[t].row(j))) {
                    n1 += 1;
                    y1 += d.y(i, j, t);
                } else {
                    n0 += 1;
                    y0 += d.y(i, j, t);
                }
            }
            const double g = c.items[t].g[j], s = c.items[t].s[j];
            EXPECT_NEAR(y0 / n0, g, 4 * std::sqrt(g * (1 - g) / n0));
            EXPECT_NEAR(y1 / n1, 1 - s, 4 * std::sqrt(s * (1 - s) / n1));
        }
    }
}

TEST(SimulateReplication, DeterministicPerReplication) {
    const auto c = make_condition(800, 10, 3, 7);
    const auto a = simulate_replication(c, reference_kde(), 1);
    const auto b = simulate_replication(c, reference_kde(), 1);
    const auto other = simulate_replication(c, reference_kde(), 2);
    EXPECT_EQ(a.tau, b.tau);
    EXPECT_EQ(a.alpha, b.alpha);
    bool same_y = true, differs = false;
    for (std::size_t t = 0; t < 2; ++t) {
        for (std::size_t i = 0; i < 800; ++i) {
            for (std::size_t j = 0; j < 10; ++j) {
                same_y = same_y && a.data.y(i, j, t) == b.data.y(i, j, t);
                differs = differs || a.data.y(i, j, t) != other.data.y(i, j, t);
            }
        }
    }
    EXPECT_TRUE(same_y);
    EXPECT_TRUE(differs);
    EXPECT_NE(a.tau, other.tau);
}

TEST(SimulateReplication, ShapeErrors) {
    auto c = make_condition(800, 10, 1, 8);
    Stream rng(derive_key(79, 0), 0, 0, 0);
    Dataset wrong(799, 2, 2, 2);
    EXPECT_THROW(gen_trajectories(c, wrong, rng), DimensionError);
    c.items[0].g.pop_back();
    EXPECT_THROW(c.validate(), ConfigError);
}
