#pragma once

// Synthetic two-wave studies: true Q-matrices, KDE-sampled text signals,
// covariates, latent trajectories and DINA responses.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tdcdm/error.hpp"
#include "tdcdm/model.hpp"
#include "tdcdm/reference_pool.hpp"
#include "tdcdm/rng.hpp"
#include "tdcdm/text_signal.hpp"

namespace tdcdm {

// ---------------------------------------------------------------------------
// Kernel density sampler

inline double kde_bandwidth(std::span<const double> points) {
    if (points.size() < 2) throw DegenerateError("bandwidth needs at least two points");
    const MeanSd ms = sample_mean_sd(points);
    if (!(ms.sd > 0.0)) throw DegenerateError("bandwidth undefined for a constant pool");
    return 1.06 * ms.sd * std::pow(static_cast<double>(points.size()), -0.2);
}

struct KdeSampler {
    std::vector<double> points;
    double bandwidth = 0.0;

    static KdeSampler from_points(std::vector<double> pts) {
        KdeSampler k;
        k.bandwidth = kde_bandwidth(pts);
        k.points = std::move(pts);
        return k;
    }

    void validate() const {
        if (points.size() < 2) throw DegenerateError("KDE needs at least two points");
        if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) throw DomainError("KDE bandwidth must be positive");
    }

    // Exact draw from the Gaussian-kernel mixture.
    double sample(Stream& rng) const {
        const double centre = points[rng.below(static_cast<std::uint32_t>(points.size()))];
        return centre + bandwidth * rng.normal();
    }

    std::vector<double> sample(std::size_t n, Stream& rng) const {
        validate();
        std::vector<double> out(n);
        for (auto& v : out) v = sample(rng);
        return out;
    }
};

inline KdeSampler reference_kde() {
    return KdeSampler::from_points(std::vector<double>(kReferenceTauPool.begin(), kReferenceTauPool.end()));
}

// ---------------------------------------------------------------------------
// True Q-matrices

// 30-item forms at two time points, K = 2, row patterns as bit strings.
inline constexpr std::array<std::array<const char*, 2>, 30> kTrueQ30 = {{
    {"10", "10"}, {"10", "01"}, {"01", "10"}, {"01", "01"}, {"10", "11"}, {"11", "10"}, {"01", "10"}, {"01", "11"},
    {"10", "11"}, {"01", "11"}, {"10", "11"}, {"10", "01"}, {"10", "11"}, {"01", "11"}, {"11", "11"}, {"10", "11"},
    {"11", "11"}, {"11", "01"}, {"11", "11"}, {"01", "01"}, {"01", "11"}, {"10", "10"}, {"01", "01"}, {"01", "11"},
    {"01", "11"}, {"10", "11"}, {"01", "11"}, {"10", "01"}, {"11", "10"}, {"11", "11"},
}};

inline constexpr std::array<std::size_t, 3> kItemGrid = {10, 20, 30};
inline constexpr std::array<std::size_t, 3> kLearnerGrid = {800, 1600, 2400};

// First-J-row forms of the 30-item Q; J outside the grid is allowed when it
// still yields identifiable matrices.
inline std::vector<QMatrix> true_q(std::size_t n_items) {
    if (n_items < 1 || n_items > kTrueQ30.size()) {
        throw ConfigError("J must lie in 1..30 for the bundled Q-matrices (grid: 10, 20, 30)");
    }
    std::vector<QMatrix> out;
    for (std::size_t t = 0; t < 2; ++t) {
        std::vector<std::vector<int>> rows;
        for (std::size_t j = 0; j < n_items; ++j) {
            const char* s = kTrueQ30[j][t];
            rows.push_back({s[0] - '0', s[1] - '0'});
        }
        QMatrix q = QMatrix::from_rows(rows, t + 1);
        const auto rep = check_identifiable(q);
        if (!rep.identifiable) {
            throw ConfigError("the first " + std::to_string(n_items) + " rows of the bundled Q at time " +
                              std::to_string(t + 1) + " are not identifiable");
        }
        out.push_back(std::move(q));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Conditions

enum class TauLink {
    Rank,         // KDE draws assigned so that denser rows get lower tau
    Independent,  // KDE draws assigned to items in draw order
};

struct SimCondition {
    std::size_t n_learners = 800;
    std::size_t n_items = 10;
    std::size_t n_times = 2;
    std::size_t n_attributes = 2;
    std::size_t n_covariates = 2;
    std::size_t replications = 5;
    std::uint64_t seed = 1;
    TauLink tau_link = TauLink::Rank;
    std::vector<QMatrix> q;
    std::vector<ItemParams> items;
    StructuralParams coeffs;

    std::string label() const { return "N" + std::to_string(n_learners) + "_J" + std::to_string(n_items); }

    void validate() const {
        if (n_learners < 1 || n_items < 1 || n_times < 1 || n_attributes < 1) throw ConfigError("empty condition");
        if (replications < 1) throw ConfigError("replications must be >= 1");
        if (q.size() != n_times || items.size() != n_times) throw ConfigError("condition truth needs one entry per time");
        for (std::size_t t = 0; t < n_times; ++t) {
            if (q[t].items() != n_items || q[t].attributes() != n_attributes) throw ConfigError("true Q has wrong shape");
            if (items[t].items() != n_items) throw ConfigError("true item parameters have wrong length");
            items[t].validate();
        }
        if (coeffs.n_attributes != n_attributes || coeffs.n_covariates != n_covariates) {
            throw ConfigError("true coefficients have wrong shape");
        }
    }
};

// Builds a condition with the default truths: g, s ~ U(0.1, 0.3) frozen per
// condition, beta0 = 0, beta_z entries +-0.5, gain intercept 0 with slopes
// +-0.5, loss intercept -3 with zero slopes. allow_custom lifts the grid check.
inline SimCondition make_condition(std::size_t n_learners, std::size_t n_items, std::size_t replications,
                                   std::uint64_t seed, bool allow_custom = false) {
    const bool on_grid = std::find(kItemGrid.begin(), kItemGrid.end(), n_items) != kItemGrid.end() &&
                         std::find(kLearnerGrid.begin(), kLearnerGrid.end(), n_learners) != kLearnerGrid.end();
    if (!on_grid && !allow_custom) {
        throw ConfigError("condition N=" + std::to_string(n_learners) + ", J=" + std::to_string(n_items) +
                          " is off the grid (N in {800,1600,2400}, J in {10,20,30}); pass --custom to override");
    }
    SimCondition c;
    c.n_learners = n_learners;
    c.n_items = n_items;
    c.replications = replications;
    c.seed = seed;
    c.q = true_q(n_items);

    const std::uint64_t key = derive_key(seed, stream_tag::kTruth);
    Stream rng(key, static_cast<std::uint32_t>(n_items), static_cast<std::uint32_t>(n_learners), 0);
    for (std::size_t t = 0; t < c.n_times; ++t) {
        ItemParams ip;
        ip.time_index = t + 1;
        for (std::size_t j = 0; j < n_items; ++j) {
            ip.g.push_back(rng.uniform(0.1, 0.3));
            ip.s.push_back(rng.uniform(0.1, 0.3));
        }
        c.items.push_back(std::move(ip));
    }

    c.coeffs = StructuralParams(c.n_attributes, c.n_covariates);
    const std::size_t C = c.n_covariates;
    for (std::size_t k = 0; k < c.n_attributes; ++k) {
        for (std::size_t z = 0; z < C; ++z) {
            const double sign = ((k + z) % 2 == 0) ? 1.0 : -1.0;
            c.coeffs.beta_z[k * C + z] = 0.5 * sign;
            c.coeffs.gamma01[k * (C + 1) + 1 + z] = -0.5 * sign;
        }
        c.coeffs.gamma10[k * (C + 1)] = -3.0;
    }
    return c;
}

// ---------------------------------------------------------------------------
// Generators

// Replication r draws from its own stream; the four generators use disjoint blocks.
inline Stream replication_stream(const SimCondition& c, std::size_t replication, std::uint32_t block) {
    return Stream(derive_key(c.seed, stream_tag::kSimulate), static_cast<std::uint32_t>(replication), 0, block);
}

// Standardised tau per time point.
inline std::vector<std::vector<double>> gen_tau(const SimCondition& c, const KdeSampler& pool, Stream& rng) {
    pool.validate();
    std::vector<std::vector<double>> out;
    for (std::size_t t = 0; t < c.n_times; ++t) {
        std::vector<double> draws = pool.sample(c.n_items, rng);
        std::vector<double> tau(c.n_items);
        if (c.tau_link == TauLink::Independent) {
            tau = draws;
        } else {
            // Items with fewer required attributes receive larger tau; ties in
            // row density are ordered at random.
            std::vector<std::uint32_t> key(c.n_items);
            for (auto& k : key) k = rng();
            std::vector<std::size_t> order(c.n_items);
            std::iota(order.begin(), order.end(), 0);
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                const int pa = std::popcount(c.q[t].row(a)), pb = std::popcount(c.q[t].row(b));
                if (pa != pb) return pa < pb;
                if (key[a] != key[b]) return key[a] < key[b];
                return a < b;
            });
            std::sort(draws.begin(), draws.end(), std::greater<>());
            for (std::size_t r = 0; r < order.size(); ++r) tau[order[r]] = draws[r];
        }
        out.push_back(standardize_tau(tau));
    }
    return out;
}

// Standard-normal covariates, standardised before use.
inline Dataset gen_covariates(const SimCondition& c, Stream& rng) {
    Dataset d(c.n_learners, c.n_items, c.n_times, c.n_covariates);
    for (std::size_t i = 0; i < c.n_learners; ++i) {
        for (std::size_t z = 0; z < c.n_covariates; ++z) d.set_z(i, z, rng.normal());
    }
    if (c.n_learners >= 2) d.standardize_covariates();
    return d;
}

inline AttributeState gen_trajectories(const SimCondition& c, const Dataset& covariates, Stream& rng) {
    if (covariates.learners() != c.n_learners || covariates.covariates() != c.n_covariates) {
        throw DimensionError("covariates do not match the condition");
    }
    const std::size_t K = c.n_attributes;
    AttributeState alpha(c.n_learners, K, c.n_times);
    for (std::size_t i = 0; i < c.n_learners; ++i) {
        const auto z = covariates.z(i);
        for (std::size_t k = 0; k < K; ++k) {
            const double p0 = initial_mastery_prob(c.coeffs.beta0[k], c.coeffs.beta_z_row(k), z);
            int state = rng.uniform() < p0 ? 1 : 0;
            alpha.set(i, k, 0, state);
            for (std::size_t t = 1; t < c.n_times; ++t) {
                if (state == 0) {
                    state = rng.uniform() < transition_prob(Transition::Gain, c.coeffs.gamma01_row(k), z) ? 1 : 0;
                } else {
                    state = rng.uniform() < transition_prob(Transition::Loss, c.coeffs.gamma10_row(k), z) ? 0 : 1;
                }
                alpha.set(i, k, t, state);
            }
        }
    }
    return alpha;
}

// Fills the responses of `data` in place from the true Q and item parameters.
// g or s equal to zero give the noiseless DINA.
inline void gen_responses(const SimCondition& c, const AttributeState& alpha, Dataset& data, Stream& rng) {
    if (alpha.learners() != c.n_learners || alpha.times() != c.n_times || alpha.attributes() != c.n_attributes) {
        throw DimensionError("alpha does not match the condition");
    }
    if (data.learners() != c.n_learners || data.items() != c.n_items || data.times() != c.n_times) {
        throw DimensionError("dataset does not match the condition");
    }
    for (std::size_t t = 0; t < c.n_times; ++t) {
        for (std::size_t i = 0; i < c.n_learners; ++i) {
            const Pattern a = alpha.profile(i, t);
            for (std::size_t j = 0; j < c.n_items; ++j) {
                const bool eta = covers(a, c.q[t].row(j));
                const double p = eta ? 1.0 - c.items[t].s[j] : c.items[t].g[j];
                data.set_y(i, j, t, rng.uniform() < p ? 1 : 0);
            }
        }
    }
}

struct SimReplication {
    std::size_t replication = 0;
    Dataset data;
    AttributeState alpha;
    std::vector<std::vector<double>> tau;
};

inline SimReplication simulate_replication(const SimCondition& c, const KdeSampler& pool, std::size_t replication) {
    c.validate();
    SimReplication r;
    r.replication = replication;
    Stream tau_rng = replication_stream(c, replication, 0);
    Stream z_rng = replication_stream(c, replication, 1);
    Stream alpha_rng = replication_stream(c, replication, 2);
    Stream y_rng = replication_stream(c, replication, 3);
    r.tau = gen_tau(c, pool, tau_rng);
    r.data = gen_covariates(c, z_rng);
    r.alpha = gen_trajectories(c, r.data, alpha_rng);
    gen_responses(c, r.alpha, r.data, y_rng);
    return r;
}

}  // namespace tdcdm
