#pragma once

// Recovery metrics for fitted models and replication-level bootstrap SEs.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tdcdm/draws.hpp"
#include "tdcdm/error.hpp"
#include "tdcdm/model.hpp"
#include "tdcdm/rng.hpp"

namespace tdcdm {

// A rate that may be undefined; `reason` says why when it is.
struct OptionalRate {
    std::optional<double> value;
    std::string reason;
};

struct QRecovery {
    double acc = 0.0;
    OptionalRate fpr;
    OptionalRate fnr;
    std::size_t n_true0 = 0;
    std::size_t n_true1 = 0;
};

inline QRecovery q_recovery(const QMatrix& est, const QMatrix& truth) {
    if (est.items() != truth.items() || est.attributes() != truth.attributes()) {
        throw DimensionError("estimated and true Q differ in shape");
    }
    std::size_t match = 0, fp = 0, fn = 0;
    QRecovery r;
    for (std::size_t j = 0; j < est.items(); ++j) {
        for (std::size_t k = 0; k < est.attributes(); ++k) {
            const int e = est.at(j, k), t = truth.at(j, k);
            match += e == t;
            if (t == 0) {
                ++r.n_true0;
                fp += e == 1;
            } else {
                ++r.n_true1;
                fn += e == 0;
            }
        }
    }
    const double total = static_cast<double>(r.n_true0 + r.n_true1);
    r.acc = static_cast<double>(match) / total;
    if (r.n_true0 > 0) {
        r.fpr.value = static_cast<double>(fp) / static_cast<double>(r.n_true0);
    } else {
        r.fpr.reason = "true Q has no zero entries";
    }
    if (r.n_true1 > 0) {
        r.fnr.value = static_cast<double>(fn) / static_cast<double>(r.n_true1);
    } else {
        r.fnr.reason = "true Q has no one entries";
    }
    return r;
}

// Posterior inclusion probabilities, pip[t][j*K + k].
inline std::vector<std::vector<double>> pip_matrix(const Draws& draws) {
    const auto freq = q_row_frequencies(draws);
    const std::size_t K = draws.dims.n_attributes;
    std::vector<std::vector<double>> out(draws.dims.n_times, std::vector<double>(draws.dims.n_items * K, 0.0));
    for (std::size_t t = 0; t < freq.size(); ++t) {
        for (std::size_t j = 0; j < freq[t].size(); ++j) {
            for (Pattern p = 0; p < freq[t][j].size(); ++p) {
                for (std::size_t k = 0; k < K; ++k) {
                    if (has_attribute(p, k, K)) out[t][j * K + k] += freq[t][j][p];
                }
            }
        }
    }
    return out;
}

struct PipSummary {
    OptionalRate pip_true_mean;
    OptionalRate pip_false_mean;
};

// Mean PIP over true-1 entries and over true-0 entries; pip is row-major J x K.
inline PipSummary pip_summary(std::span<const double> pip, const QMatrix& truth) {
    const std::size_t K = truth.attributes();
    if (pip.size() != truth.items() * K) throw DimensionError("PIP matrix must be J x K");
    double s1 = 0, s0 = 0;
    std::size_t n1 = 0, n0 = 0;
    for (std::size_t j = 0; j < truth.items(); ++j) {
        for (std::size_t k = 0; k < K; ++k) {
            if (truth.at(j, k)) {
                s1 += pip[j * K + k];
                ++n1;
            } else {
                s0 += pip[j * K + k];
                ++n0;
            }
        }
    }
    PipSummary out;
    if (n1) out.pip_true_mean.value = s1 / static_cast<double>(n1);
    else out.pip_true_mean.reason = "true Q has no one entries";
    if (n0) out.pip_false_mean.value = s0 / static_cast<double>(n0);
    else out.pip_false_mean.reason = "true Q has no zero entries";
    return out;
}

inline void require_same_shape(const AttributeState& a, const AttributeState& b) {
    if (a.learners() != b.learners() || a.attributes() != b.attributes() || a.times() != b.times()) {
        throw DimensionError("attribute arrays differ in shape");
    }
}

// PAR_t: share of learners whose whole profile matches at time t.
inline std::vector<double> par(const AttributeState& est, const AttributeState& truth) {
    require_same_shape(est, truth);
    std::vector<double> out(est.times(), 0.0);
    for (std::size_t t = 0; t < est.times(); ++t) {
        std::size_t hit = 0;
        for (std::size_t i = 0; i < est.learners(); ++i) hit += est.profile(i, t) == truth.profile(i, t);
        out[t] = static_cast<double>(hit) / static_cast<double>(est.learners());
    }
    return out;
}

// AAR[t][k]: share of learners matching on attribute k at time t.
inline std::vector<std::vector<double>> aar(const AttributeState& est, const AttributeState& truth) {
    require_same_shape(est, truth);
    std::vector<std::vector<double>> out(est.times(), std::vector<double>(est.attributes(), 0.0));
    for (std::size_t t = 0; t < est.times(); ++t) {
        for (std::size_t k = 0; k < est.attributes(); ++k) {
            std::size_t hit = 0;
            for (std::size_t i = 0; i < est.learners(); ++i) hit += est.at(i, k, t) == truth.at(i, k, t);
            out[t][k] = static_cast<double>(hit) / static_cast<double>(est.learners());
        }
    }
    return out;
}

struct ErrorPair {
    double rmse = 0.0;
    double mae = 0.0;
};

inline ErrorPair param_error(std::span<const double> est, std::span<const double> truth) {
    if (est.size() != truth.size()) throw DimensionError("estimate and truth lengths differ");
    if (est.empty()) throw DimensionError("no parameters to score");
    double ss = 0, sa = 0;
    for (std::size_t i = 0; i < est.size(); ++i) {
        const double e = est[i] - truth[i];
        ss += e * e;
        sa += std::abs(e);
    }
    const double n = static_cast<double>(est.size());
    return {std::sqrt(ss / n), sa / n};
}

// Sample sd of B bootstrap means, resampling replications with replacement.
inline double bootstrap_se(std::span<const double> values, std::size_t n_boot = 1000, std::uint64_t seed = 1) {
    if (values.size() < 2) throw DegenerateError("bootstrap SE needs at least two replications");
    if (n_boot < 2) throw ConfigError("bootstrap needs at least two resamples");
    Stream rng(derive_key(seed, stream_tag::kBootstrap), 0, 0, 0);
    const auto n = static_cast<std::uint32_t>(values.size());
    std::vector<double> means(n_boot);
    for (auto& m : means) {
        double s = 0;
        for (std::uint32_t r = 0; r < n; ++r) s += values[rng.below(n)];
        m = s / static_cast<double>(n);
    }
    double mean = 0;
    for (double m : means) mean += m;
    mean /= static_cast<double>(n_boot);
    double ss = 0;
    for (double m : means) ss += (m - mean) * (m - mean);
    return std::sqrt(ss / static_cast<double>(n_boot - 1));
}

// ---------------------------------------------------------------------------
// Scoring a fit against a known truth

struct Truth {
    std::vector<QMatrix> q;
    std::vector<ItemParams> items;
    StructuralParams coeffs;
    AttributeState alpha;
};

struct PosteriorMeans {
    std::vector<double> g, s;  // [t][j]
    StructuralParams coeffs;
    double theta = 0.0;
    double lambda = 0.0;
};

inline PosteriorMeans posterior_means(const Draws& draws) {
    const DrawDims& d = draws.dims;
    PosteriorMeans m;
    m.g.assign(d.n_times * d.n_items, 0.0);
    m.s.assign(d.n_times * d.n_items, 0.0);
    m.coeffs = StructuralParams(d.n_attributes, d.n_covariates);
    const double total = static_cast<double>(draws.total_draws());
    if (total == 0) throw DataError("no retained draws");
    auto accumulate = [&](std::vector<double>& out, const std::vector<double>& src) {
        const std::size_t w = out.size();
        for (std::size_t i = 0; i < src.size(); ++i) out[i % w] += src[i] / total;
    };
    for (const auto& ch : draws.chains) {
        accumulate(m.g, ch.g);
        accumulate(m.s, ch.s);
        accumulate(m.coeffs.beta0, ch.beta0);
        if (!m.coeffs.beta_z.empty()) accumulate(m.coeffs.beta_z, ch.beta_z);
        accumulate(m.coeffs.gamma01, ch.gamma01);
        accumulate(m.coeffs.gamma10, ch.gamma10);
        for (double v : ch.theta) m.theta += v / total;
        for (double v : ch.lambda) m.lambda += v / total;
    }
    return m;
}

struct MetricsReport {
    std::vector<std::size_t> permutation;  // estimated attribute k -> true attribute permutation[k]
    std::vector<QRecovery> q;              // per time
    std::vector<PipSummary> pip;           // per time
    PipSummary pip_overall;                // mean over the per-time summaries
    std::vector<double> par;               // per time
    std::vector<std::vector<double>> aar;  // [t][k]
    ErrorPair g, s, beta0, beta_z, gamma01, gamma10;
    double theta_mean = 0.0;
    double lambda_mean = 0.0;
};

inline double mean_of_defined(std::span<const PipSummary> v, bool true_side) {
    double s = 0;
    std::size_t n = 0;
    for (const auto& p : v) {
        const auto& r = true_side ? p.pip_true_mean : p.pip_false_mean;
        if (r.value) {
            s += *r.value;
            ++n;
        }
    }
    return n ? s / static_cast<double>(n) : std::nan("");
}

// Aligns attribute labels to the truth, then scores Q, alpha and parameters.
inline MetricsReport score_fit(const Draws& fitted, const Truth& truth) {
    const DrawDims& d = fitted.dims;
    if (truth.q.size() != d.n_times || truth.items.size() != d.n_times) throw DimensionError("truth needs one entry per time");
    Draws draws = fitted;
    const auto est_alpha0 = alpha_mode(draws);
    const auto perm = best_permutation(map_q(draws), truth.q, &est_alpha0, &truth.alpha);
    if (!is_identity(perm)) {
        for (auto& ch : draws.chains) relabel_chain(ch, d, perm);
    }

    MetricsReport r;
    r.permutation = perm;
    const auto est_q = map_q(draws);
    const auto est_alpha = alpha_mode(draws);
    const auto pip = pip_matrix(draws);
    for (std::size_t t = 0; t < d.n_times; ++t) {
        r.q.push_back(q_recovery(est_q[t], truth.q[t]));
        r.pip.push_back(pip_summary(pip[t], truth.q[t]));
    }
    const double pt = mean_of_defined(r.pip, true), pf = mean_of_defined(r.pip, false);
    if (std::isfinite(pt)) r.pip_overall.pip_true_mean.value = pt;
    if (std::isfinite(pf)) r.pip_overall.pip_false_mean.value = pf;
    r.par = par(est_alpha, truth.alpha);
    r.aar = aar(est_alpha, truth.alpha);

    const PosteriorMeans m = posterior_means(draws);
    std::vector<double> tg, ts;
    for (const auto& ip : truth.items) {
        tg.insert(tg.end(), ip.g.begin(), ip.g.end());
        ts.insert(ts.end(), ip.s.begin(), ip.s.end());
    }
    r.g = param_error(m.g, tg);
    r.s = param_error(m.s, ts);
    r.beta0 = param_error(m.coeffs.beta0, truth.coeffs.beta0);
    if (!truth.coeffs.beta_z.empty()) r.beta_z = param_error(m.coeffs.beta_z, truth.coeffs.beta_z);
    if (d.n_times > 1) {
        r.gamma01 = param_error(m.coeffs.gamma01, truth.coeffs.gamma01);
        r.gamma10 = param_error(m.coeffs.gamma10, truth.coeffs.gamma10);
    }
    r.theta_mean = m.theta;
    r.lambda_mean = m.lambda;
    return r;
}

// Flat (name, value) view of a report. Undefined rates are omitted.
inline std::vector<std::pair<std::string, double>> flatten(const MetricsReport& r) {
    std::vector<std::pair<std::string, double>> out;
    for (std::size_t t = 0; t < r.q.size(); ++t) {
        const std::string sfx = "_t" + std::to_string(t + 1);
        out.emplace_back("acc" + sfx, r.q[t].acc);
        if (r.q[t].fpr.value) out.emplace_back("fpr" + sfx, *r.q[t].fpr.value);
        if (r.q[t].fnr.value) out.emplace_back("fnr" + sfx, *r.q[t].fnr.value);
        if (r.pip[t].pip_true_mean.value) out.emplace_back("pip_true" + sfx, *r.pip[t].pip_true_mean.value);
        if (r.pip[t].pip_false_mean.value) out.emplace_back("pip_false" + sfx, *r.pip[t].pip_false_mean.value);
    }
    if (r.pip_overall.pip_true_mean.value) out.emplace_back("pip_true", *r.pip_overall.pip_true_mean.value);
    if (r.pip_overall.pip_false_mean.value) out.emplace_back("pip_false", *r.pip_overall.pip_false_mean.value);
    for (std::size_t t = 0; t < r.par.size(); ++t) out.emplace_back("par_t" + std::to_string(t + 1), r.par[t]);
    for (std::size_t t = 0; t < r.aar.size(); ++t) {
        for (std::size_t k = 0; k < r.aar[t].size(); ++k) {
            out.emplace_back("aar_k" + std::to_string(k + 1) + "_t" + std::to_string(t + 1), r.aar[t][k]);
        }
    }
    const std::pair<const char*, const ErrorPair*> fam[] = {{"g", &r.g},         {"s", &r.s},
                                                             {"beta0", &r.beta0}, {"betaZ", &r.beta_z},
                                                             {"gamma01", &r.gamma01}, {"gamma10", &r.gamma10}};
    for (const auto& [name, e] : fam) {
        out.emplace_back(std::string("rmse_") + name, e->rmse);
        out.emplace_back(std::string("mae_") + name, e->mae);
    }
    out.emplace_back("theta_mean", r.theta_mean);
    out.emplace_back("lambda_mean", r.lambda_mean);
    return out;
}

}  // namespace tdcdm
