#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "support/oracles.hpp"
#include "tdcdm/model.hpp"
#include "tdcdm/rng.hpp"
#include "tdcdm/simulator.hpp"

using namespace tdcdm;

namespace {

std::vector<int> v(std::initializer_list<int> x) { return x; }

}  // namespace

TEST(IdealResponse, Examples) {
    EXPECT_EQ(ideal_response(v({1, 1}), v({1, 0})), 1);
    EXPECT_EQ(ideal_response(v({0, 1}), v({1, 1})), 0);
    EXPECT_EQ(ideal_response(v({1, 0}), v({0, 0})), 1);
    EXPECT_THROW(ideal_response(v({1, 0}), v({1})), DimensionError);
}

TEST(IdealResponse, MonotoneInMastery) {
    for (Pattern q = 0; q < 8; ++q) {
        for (Pattern a = 0; a < 8; ++a) {
            for (std::size_t k = 0; k < 3; ++k) {
                const Pattern more = a | attribute_bit(k, 3);
                const auto qa = bits_from_pattern(q, 3);
                if (ideal_response(bits_from_pattern(a, 3), qa) == 1) {
                    EXPECT_EQ(ideal_response(bits_from_pattern(more, 3), qa), 1);
                }
                EXPECT_EQ(ideal_response(bits_from_pattern(a, 3), qa), covers(a, q) ? 1 : 0);
            }
        }
    }
}

TEST(ResponseProb, Examples) {
    EXPECT_DOUBLE_EQ(response_prob(1, 0.3, 0.2), 0.8);
    EXPECT_DOUBLE_EQ(response_prob(0, 0.3, 0.2), 0.3);
    EXPECT_DOUBLE_EQ(response_prob(0, 0.208, 0.2), 0.208);
    EXPECT_THROW(response_prob(1, 0.0, 0.2), DomainError);
    EXPECT_THROW(response_prob(1, 0.3, 1.0), DomainError);
}

TEST(ResponseProb, GapIsOneMinusSlipMinusGuess) {
    Stream rng(derive_key(11, 0), 0, 0, 0);
    for (int i = 0; i < 1000; ++i) {
        const double g = rng.uniform(), s = rng.uniform();
        EXPECT_NEAR(response_prob(1, g, s) - response_prob(0, g, s), 1.0 - s - g, 1e-15);
    }
}

TEST(Sigmoid, StableAtExtremes) {
    EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
    EXPECT_GT(sigmoid(-1000.0), 0.0);
    EXPECT_LT(sigmoid(1000.0), 1.0);
    EXPECT_NEAR(log_sigmoid(-50.0), -35.0, 1e-9);  // clamped at 35
    EXPECT_NEAR(log_sigmoid(3.0), std::log(oracle::sigmoid(3.0)), 1e-15);
    EXPECT_NEAR(log1m_sigmoid(3.0), -std::log1p(std::exp(3.0)), 1e-15);
    for (double x = -30; x <= 30; x += 0.25) EXPECT_NEAR(sigmoid(x), oracle::sigmoid(x), 1e-15);
}

TEST(InitialMastery, Examples) {
    const std::vector<double> none;
    EXPECT_DOUBLE_EQ(initial_mastery_prob(0.0, std::vector<double>{0.0}, std::vector<double>{1.3}), 0.5);
    EXPECT_NEAR(initial_mastery_prob(logit(0.8), std::vector<double>{0.7}, std::vector<double>{0.0}), 0.8, 1e-15);
    EXPECT_NEAR(initial_mastery_prob(1.0, std::vector<double>{0.5}, std::vector<double>{2.0}), 0.8807970779778823, 1e-15);
    EXPECT_THROW(initial_mastery_prob(NAN, none, none), DomainError);
    EXPECT_THROW(initial_mastery_prob(0.0, std::vector<double>{1.0}, none), DimensionError);
}

TEST(TransitionProb, Examples) {
    const std::vector<double> z = {0.0};
    EXPECT_DOUBLE_EQ(transition_prob(Transition::Gain, std::vector<double>{0.0, 0.0}, z), 0.5);
    EXPECT_NEAR(transition_prob(Transition::Loss, std::vector<double>{-4.0, 0.3}, z), 0.01798620996209156, 1e-15);
    const std::vector<double> gamma = {0.4, -1.2}, z2 = {0.9};
    EXPECT_EQ(transition_prob(Transition::Gain, gamma, z2), transition_prob(Transition::Loss, gamma, z2));
    EXPECT_THROW(transition_prob(Transition::Gain, std::vector<double>{0.0}, z), DimensionError);
    EXPECT_THROW(transition_prob(Transition::Gain, std::vector<double>{INFINITY, 0.0}, z), DomainError);
}

TEST(LogLikelihood, SingleObservation) {
    Dataset d(1, 1, 1, 0);
    d.set_y(0, 0, 0, 1);
    const std::vector<QMatrix> q = {QMatrix::from_rows({{1}})};
    const std::vector<ItemParams> p = {{{0.3}, {0.2}, 1}};
    AttributeState a(1, 1, 1);
    a.set(0, 0, 0, 1);
    EXPECT_NEAR(log_likelihood(d, q, p, a), std::log(0.8), 1e-15);
}

TEST(LogLikelihood, MatchesBruteForceOnRandomSmallInstances) {
    Stream rng(derive_key(12, 0), 0, 0, 0);
    for (int rep = 0; rep < 500; ++rep) {
        const std::size_t N = 1 + rng.below(3), J = 1 + rng.below(3), T = 1 + rng.below(2), K = 1 + rng.below(2);
        Dataset d(N, J, T, 0);
        oracle::Binary3 y(T, std::vector<std::vector<int>>(N, std::vector<int>(J)));
        oracle::Binary3 qb(T, std::vector<std::vector<int>>(J, std::vector<int>(K)));
        oracle::Binary3 ab(T, std::vector<std::vector<int>>(N, std::vector<int>(K)));
        std::vector<std::vector<double>> g(T, std::vector<double>(J)), s = g;
        std::vector<QMatrix> q;
        std::vector<ItemParams> ip;
        AttributeState alpha(N, K, T);
        for (std::size_t t = 0; t < T; ++t) {
            QMatrix qt(J, K, t + 1);
            ItemParams pt;
            for (std::size_t j = 0; j < J; ++j) {
                for (std::size_t k = 0; k < K; ++k) {
                    qb[t][j][k] = static_cast<int>(rng.below(2));
                    qt.set(j, k, qb[t][j][k]);
                }
                g[t][j] = rng.uniform(0.01, 0.5);
                s[t][j] = rng.uniform(0.01, 0.5);
                pt.g.push_back(g[t][j]);
                pt.s.push_back(s[t][j]);
            }
            for (std::size_t i = 0; i < N; ++i) {
                for (std::size_t k = 0; k < K; ++k) {
                    ab[t][i][k] = static_cast<int>(rng.below(2));
                    alpha.set(i, k, t, ab[t][i][k]);
                }
                for (std::size_t j = 0; j < J; ++j) {
                    y[t][i][j] = static_cast<int>(rng.below(2));
                    d.set_y(i, j, t, y[t][i][j]);
                }
            }
            q.push_back(qt);
            ip.push_back(pt);
        }
        const double expect = std::log(oracle::brute_force_likelihood(y, qb, ab, g, s));
        ASSERT_NEAR(log_likelihood(d, q, ip, alpha), expect, 1e-10) << "instance " << rep;
    }
}

TEST(LogLikelihood, InvariantToLearnerPermutation) {
    Stream rng(derive_key(13, 0), 0, 0, 0);
    const std::size_t N = 6, J = 4, K = 2;
    Dataset d(N, J, 1, 0), dp(N, J, 1, 0);
    AttributeState a(N, K, 1), ap(N, K, 1);
    const std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
    for (std::size_t i = 0; i < N; ++i) {
        a.set_profile(i, 0, rng.below(4));
        for (std::size_t j = 0; j < J; ++j) d.set_y(i, j, 0, static_cast<int>(rng.below(2)));
    }
    for (std::size_t i = 0; i < N; ++i) {
        ap.set_profile(perm[i], 0, a.profile(i, 0));
        for (std::size_t j = 0; j < J; ++j) dp.set_y(perm[i], j, 0, d.y(i, j, 0));
    }
    const std::vector<QMatrix> q = {QMatrix::from_rows({{1, 0}, {0, 1}, {1, 1}, {1, 0}})};
    const std::vector<ItemParams> p = {{{0.1, 0.2, 0.3, 0.15}, {0.2, 0.1, 0.25, 0.05}, 1}};
    EXPECT_NEAR(log_likelihood(d, q, p, a), log_likelihood(dp, q, p, ap), 1e-12);
}

TEST(LogLikelihood, DimensionErrors) {
    Dataset d(2, 2, 1, 0);
    const std::vector<QMatrix> q = {QMatrix::from_rows({{1}, {1}})};
    const std::vector<ItemParams> p = {{{0.1, 0.2}, {0.1, 0.2}, 1}};
    EXPECT_THROW(log_likelihood(d, q, p, AttributeState(3, 1, 1)), DimensionError);
    const std::vector<QMatrix> q3 = {QMatrix::from_rows({{1}, {1}, {1}})};
    EXPECT_THROW(log_likelihood(d, q3, p, AttributeState(2, 1, 1)), DimensionError);
}

TEST(CandidateRows, Enumeration) {
    EXPECT_EQ(enumerate_candidate_rows(2), (std::vector<Pattern>{0b01, 0b10, 0b11}));
    const auto k2 = enumerate_candidate_rows(2);
    EXPECT_EQ(bits_from_pattern(k2[0], 2), v({0, 1}));
    EXPECT_EQ(bits_from_pattern(k2[1], 2), v({1, 0}));
    EXPECT_EQ(bits_from_pattern(k2[2], 2), v({1, 1}));
    EXPECT_EQ(enumerate_candidate_rows(1), (std::vector<Pattern>{1}));
    EXPECT_EQ(enumerate_candidate_rows(3).size(), 7u);
    EXPECT_THROW(enumerate_candidate_rows(0), CapacityError);
    EXPECT_THROW(enumerate_candidate_rows(11), CapacityError);
}

TEST(Identifiability, Examples) {
    const auto q30 = true_q(30);
    EXPECT_TRUE(check_identifiable(q30[0]).identifiable);
    EXPECT_TRUE(check_identifiable(q30[1]).identifiable);

    auto with_zero = QMatrix::from_rows({{1, 0}, {0, 1}, {1, 0}, {0, 1}, {1, 1}, {0, 0}});
    auto rep = check_identifiable(with_zero);
    EXPECT_FALSE(rep.identifiable);
    EXPECT_NE(std::find(rep.violations.begin(), rep.violations.end(), Violation::ZeroRow), rep.violations.end());

    rep = check_identifiable(QMatrix::from_rows({{1, 0}, {0, 1}, {1, 1}, {1, 1}}));
    EXPECT_FALSE(rep.identifiable);
    EXPECT_NE(std::find(rep.violations.begin(), rep.violations.end(), Violation::MissingIdentityPair),
              rep.violations.end());
}

TEST(Identifiability, AgreesWithExhaustiveCheckerOnEveryK2MatrixUpToJ8) {
    std::size_t checked = 0, positives = 0;
    for (std::size_t J = 1; J <= 8; ++J) {
        const std::size_t total = std::size_t{1} << (2 * J);
        for (std::size_t code = 0; code < total; ++code) {
            std::vector<std::vector<int>> rows(J, std::vector<int>(2));
            for (std::size_t j = 0; j < J; ++j) {
                const std::size_t p = (code >> (2 * j)) & 3u;
                rows[j] = {static_cast<int>(p >> 1), static_cast<int>(p & 1)};
            }
            const bool lib = check_identifiable(QMatrix::from_rows(rows)).identifiable;
            ASSERT_EQ(lib, oracle::exhaustive_identifiable(rows)) << "J=" << J << " code=" << code;
            ++checked;
            positives += lib;
        }
    }
    EXPECT_GT(positives, 0u);
    EXPECT_EQ(checked, 87380u);
}

TEST(Identifiability, K3DuplicateResidualColumns) {
    // Two identity blocks plus residual rows that do not separate attributes 2 and 3.
    auto q = QMatrix::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1},
                                 {1, 1, 1}, {0, 1, 1}, {1, 0, 0}});
    auto rep = check_identifiable(q);
    EXPECT_FALSE(rep.identifiable);
    ASSERT_EQ(rep.violations.size(), 1u);
    EXPECT_EQ(rep.violations[0], Violation::DuplicateResidualColumns);
    q.set(7, 2, 0);
    EXPECT_TRUE(check_identifiable(q).identifiable);
}

TEST(PureItemRule, Cases) {
    EXPECT_TRUE(satisfies_pure_item_rule(QMatrix::from_rows({{1, 0}, {0, 1}, {1, 1}, {0, 1}})));
    EXPECT_TRUE(satisfies_pure_item_rule(QMatrix::from_rows({{1, 0}, {0, 1}, {1, 1}})));
    EXPECT_FALSE(satisfies_pure_item_rule(QMatrix::from_rows({{1, 0}, {1, 1}, {1, 1}})));
    EXPECT_FALSE(satisfies_pure_item_rule(QMatrix::from_rows({{1, 0}, {0, 1}, {1, 0}})));
    EXPECT_FALSE(satisfies_pure_item_rule(QMatrix::from_rows({{1, 0}, {0, 1}, {0, 0}, {1, 1}})));
    const auto q = QMatrix::from_rows({{1, 0}, {0, 1}, {1, 1}, {0, 1}});
    EXPECT_TRUE(admissible(q, ConstraintPolicy::PureItem));
    EXPECT_FALSE(admissible(q, ConstraintPolicy::Strict));
}

TEST(QMatrix, BitConventionAndErrors) {
    const auto q = QMatrix::from_rows({{0, 1}, {1, 0}, {1, 1}});
    EXPECT_EQ(q.row(0), 1u);
    EXPECT_EQ(q.row(1), 2u);
    EXPECT_EQ(q.row(2), 3u);
    EXPECT_EQ(q.column_sum(0), 2u);
    EXPECT_THROW(QMatrix::from_rows({{1, 0}, {1}}), DimensionError);
    EXPECT_THROW(QMatrix::from_rows({{2, 0}}), DomainError);
    EXPECT_THROW(QMatrix::from_patterns({4}, 2), DomainError);
    EXPECT_THROW(QMatrix(0, 2), DimensionError);
    const std::vector<std::size_t> swap = {1, 0};
    EXPECT_EQ(permute_pattern(0b10, swap), 0b01u);
    EXPECT_EQ(permute_pattern(0b11, swap), 0b11u);
}

TEST(Dataset, StandardizeCovariates) {
    Dataset d(4, 1, 1, 2);
    const double raw[4] = {1.0, 2.0, 3.0, 6.0};
    for (std::size_t i = 0; i < 4; ++i) {
        d.set_z(i, 0, raw[i]);
        d.set_z(i, 1, i % 2);
    }
    EXPECT_EQ(d.standardize_covariates(), (std::vector<std::size_t>{0}));
    double mean = 0, ss = 0;
    for (std::size_t i = 0; i < 4; ++i) mean += d.z(i, 0) / 4;
    for (std::size_t i = 0; i < 4; ++i) ss += (d.z(i, 0) - mean) * (d.z(i, 0) - mean) / 3;
    EXPECT_NEAR(mean, 0.0, 1e-15);
    EXPECT_NEAR(ss, 1.0, 1e-14);
    EXPECT_EQ(d.z(1, 1), 1.0);  // dummy left alone
    EXPECT_THROW(d.set_y(0, 0, 0, 2), DataError);
}
