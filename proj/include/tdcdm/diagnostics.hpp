#pragma once

// Rank-normalised split-R-hat and bulk effective sample size
// (Vehtari, Gelman, Simpson, Carpenter and Buerkner, 2021).

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include <boost/math/special_functions/erf.hpp>

#include "tdcdm/error.hpp"

namespace tdcdm::diag {

using Chains = std::vector<std::vector<double>>;

inline void require_shape(const Chains& chains) {
    if (chains.size() < 2) throw DiagnosticsError("diagnostics need at least two chains");
    const std::size_t n = chains.front().size();
    if (n < 4) throw DiagnosticsError("diagnostics need at least four draws per chain");
    for (const auto& c : chains) {
        if (c.size() != n) throw DiagnosticsError("chains must have equal length");
        for (double x : c) {
            if (!std::isfinite(x)) throw DiagnosticsError("non-finite draw");
        }
    }
}

// Halves each chain; an odd middle draw is dropped.
inline Chains split_chains(const Chains& chains) {
    Chains out;
    for (const auto& c : chains) {
        const std::size_t half = c.size() / 2;
        out.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
        out.emplace_back(c.end() - static_cast<std::ptrdiff_t>(half), c.end());
    }
    return out;
}

inline double inv_normal_cdf(double p) { return -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * p); }

// Average ranks over the pooled draws, mapped through the normal quantile of
// (r - 3/8) / (S + 1/4).
inline Chains rank_normalize(const Chains& chains) {
    std::vector<std::pair<double, std::size_t>> pooled;
    for (const auto& c : chains) {
        for (double x : c) pooled.emplace_back(x, pooled.size());
    }
    const std::size_t total = pooled.size();
    std::sort(pooled.begin(), pooled.end());
    std::vector<double> rank(total);
    for (std::size_t a = 0; a < total;) {
        std::size_t b = a;
        while (b + 1 < total && pooled[b + 1].first == pooled[a].first) ++b;
        const double avg = 0.5 * static_cast<double>(a + b) + 1.0;
        for (std::size_t r = a; r <= b; ++r) rank[pooled[r].second] = avg;
        a = b + 1;
    }
    Chains out;
    std::size_t pos = 0;
    for (const auto& c : chains) {
        std::vector<double> z(c.size());
        for (auto& v : z) v = inv_normal_cdf((rank[pos++] - 0.375) / (static_cast<double>(total) + 0.25));
        out.push_back(std::move(z));
    }
    return out;
}

inline double mean_of(const std::vector<double>& x) {
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

inline double var_of(const std::vector<double>& x) {
    const double m = mean_of(x);
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return ss / static_cast<double>(x.size() - 1);
}

inline double basic_rhat(const Chains& chains) {
    const double n = static_cast<double>(chains.front().size());
    std::vector<double> means, vars;
    for (const auto& c : chains) {
        means.push_back(mean_of(c));
        vars.push_back(var_of(c));
    }
    const double between = n * var_of(means);
    const double within = mean_of(vars);
    if (!(within > 0.0)) {
        if (between > 0.0) return std::numeric_limits<double>::infinity();
        throw DiagnosticsError("zero variance across all draws");
    }
    return std::sqrt((between / within + n - 1.0) / n);
}

inline bool all_equal(const Chains& chains) {
    const double first = chains.front().front();
    for (const auto& c : chains) {
        for (double x : c) {
            if (x != first) return false;
        }
    }
    return true;
}

// max(bulk, folded) rank-normalised split-R-hat.
inline double rhat(const Chains& chains) {
    require_shape(chains);
    if (all_equal(chains)) throw DiagnosticsError("zero variance across all draws");
    const Chains split = split_chains(chains);
    const double bulk = basic_rhat(rank_normalize(split));

    std::vector<double> pooled;
    for (const auto& c : chains) pooled.insert(pooled.end(), c.begin(), c.end());
    std::nth_element(pooled.begin(), pooled.begin() + static_cast<std::ptrdiff_t>(pooled.size() / 2), pooled.end());
    double median = pooled[pooled.size() / 2];
    if (pooled.size() % 2 == 0) {
        const double lower = *std::max_element(pooled.begin(), pooled.begin() + static_cast<std::ptrdiff_t>(pooled.size() / 2));
        median = 0.5 * (median + lower);
    }
    Chains folded = split;
    for (auto& c : folded) {
        for (auto& x : c) x = std::abs(x - median);
    }
    double tail = bulk;
    if (!all_equal(folded)) tail = basic_rhat(rank_normalize(folded));
    return std::max(bulk, tail);
}

// ESS with Geyer's initial monotone sequence estimator.
inline double basic_ess(const Chains& chains) {
    const std::size_t m = chains.size();
    const std::size_t n = chains.front().size();
    std::vector<double> means(m), chain_var(m);
    for (std::size_t c = 0; c < m; ++c) {
        means[c] = mean_of(chains[c]);
        chain_var[c] = var_of(chains[c]);
    }
    const double mean_var = mean_of(chain_var);
    double var_plus = mean_var * static_cast<double>(n - 1) / static_cast<double>(n);
    if (m > 1) var_plus += var_of(means);
    if (!(var_plus > 0.0)) throw DiagnosticsError("zero variance across all draws");

    // Biased autocovariance at lag t, averaged over chains.
    auto mean_acov = [&](std::size_t t) {
        double total = 0.0;
        for (std::size_t c = 0; c < m; ++c) {
            double s = 0.0;
            for (std::size_t i = 0; i + t < n; ++i) s += (chains[c][i] - means[c]) * (chains[c][i + t] - means[c]);
            total += s / static_cast<double>(n);
        }
        return total / static_cast<double>(m);
    };
    auto rho = [&](std::size_t t) { return 1.0 - (mean_var - mean_acov(t)) / var_plus; };

    std::vector<double> rho_hat(n, 0.0);
    std::size_t t = 0;
    double even = 1.0;
    double odd = rho(1);
    rho_hat[0] = even;
    rho_hat[1] = odd;
    while (t + 5 < n && std::isfinite(even + odd) && even + odd > 0.0) {
        t += 2;
        even = rho(t);
        odd = rho(t + 1);
        if (even + odd >= 0.0) {
            rho_hat[t] = even;
            rho_hat[t + 1] = odd;
        }
    }
    const std::size_t max_t = t;
    if (even > 0.0) rho_hat[max_t] = even;

    for (t = 0; t + 4 <= max_t;) {
        t += 2;
        if (rho_hat[t] + rho_hat[t + 1] > rho_hat[t - 2] + rho_hat[t - 1]) {
            rho_hat[t] = 0.5 * (rho_hat[t - 2] + rho_hat[t - 1]);
            rho_hat[t + 1] = rho_hat[t];
        }
    }
    const double draws = static_cast<double>(m * n);
    double tau = -1.0 + rho_hat[max_t];
    for (std::size_t i = 0; i < max_t; ++i) tau += 2.0 * rho_hat[i];
    tau = std::max(tau, 1.0 / std::log10(draws));
    return draws / tau;
}

inline double ess_bulk(const Chains& chains) {
    require_shape(chains);
    if (all_equal(chains)) throw DiagnosticsError("zero variance: ESS undefined for constant draws");
    return basic_ess(rank_normalize(split_chains(chains)));
}

}  // namespace tdcdm::diag
