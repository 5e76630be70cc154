#pragma once

// Simulation study driver: simulate, fit baseline and text-prior models,
// score, aggregate.

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tdcdm/metrics.hpp"
#include "tdcdm/sampler.hpp"
#include "tdcdm/simulator.hpp"

namespace tdcdm {

inline constexpr const char* kModelBaseline = "baseline";
inline constexpr const char* kModelText = "text";

struct FitRecord {
    std::string condition;
    std::size_t replication = 0;
    std::string model;
    std::uint64_t fit_seed = 0;
    MetricsReport metrics;
    std::optional<double> max_rhat;
    std::optional<double> min_ess;
};

struct AggregateRow {
    std::string condition;
    std::string model;
    std::string metric;
    double mean = 0.0;
    std::optional<double> se;  // needs at least two replications
    std::size_t n = 0;
};

struct StudyConfig {
    std::vector<SimCondition> conditions;
    PriorConfig text_prior = PriorConfig::from_preset("sim-default");
    SamplerConfig sampler;
    KdeSampler pool = reference_kde();
    std::size_t n_boot = 1000;
    bool fit_baseline = true;
    bool fit_text = true;
};

struct StudyResult {
    std::vector<FitRecord> fits;
    std::vector<AggregateRow> aggregate;
};

inline std::uint64_t replication_fit_seed(std::uint64_t condition_seed, std::size_t replication) {
    return mix64(condition_seed ^ mix64(0x5EEDull + replication));
}

inline Truth truth_of(const SimCondition& c, const SimReplication& rep) {
    return {c.q, c.items, c.coeffs, rep.alpha};
}

inline McmcResult fit_model(const SimReplication& rep, const SimCondition& c, const PriorConfig& prior,
                            SamplerConfig cfg, std::uint64_t seed) {
    cfg.seed = seed;
    std::vector<QPriorSignal> signal;
    if (prior.text_prior) {
        for (const auto& tau : rep.tau) signal.push_back(QPriorSignal::broadcast(tau, c.n_attributes));
    }
    return run_mcmc(rep.data, std::move(signal), c.n_attributes, prior, cfg);
}

inline std::vector<AggregateRow> aggregate(const std::vector<FitRecord>& fits, std::size_t n_boot, std::uint64_t seed) {
    // (condition, model) -> metric -> values, in first-seen order.
    std::vector<std::pair<std::string, std::string>> keys;
    std::map<std::pair<std::string, std::string>, std::vector<std::pair<std::string, std::vector<double>>>> values;
    for (const auto& f : fits) {
        const auto key = std::make_pair(f.condition, f.model);
        if (!values.count(key)) keys.push_back(key);
        auto& bucket = values[key];
        for (const auto& [name, v] : flatten(f.metrics)) {
            auto it = std::find_if(bucket.begin(), bucket.end(), [&](const auto& e) { return e.first == name; });
            if (it == bucket.end()) {
                bucket.emplace_back(name, std::vector<double>{});
                it = bucket.end() - 1;
            }
            it->second.push_back(v);
        }
        if (f.max_rhat) {
            auto it = std::find_if(bucket.begin(), bucket.end(), [](const auto& e) { return e.first == "max_rhat"; });
            if (it == bucket.end()) {
                bucket.emplace_back("max_rhat", std::vector<double>{});
                it = bucket.end() - 1;
            }
            it->second.push_back(*f.max_rhat);
        }
    }
    std::vector<AggregateRow> out;
    for (const auto& key : keys) {
        for (const auto& [metric, v] : values[key]) {
            AggregateRow row{key.first, key.second, metric, 0.0, std::nullopt, v.size()};
            for (double x : v) row.mean += x / static_cast<double>(v.size());
            if (v.size() >= 2) row.se = bootstrap_se(v, n_boot, seed);
            out.push_back(std::move(row));
        }
    }
    return out;
}

// Writes nothing; `on_fit` lets callers persist each record as it completes.
inline StudyResult run_study(const StudyConfig& cfg,
                             const std::function<void(const SimCondition&, const SimReplication&, const FitRecord&,
                                                      const McmcResult&)>& on_fit = {}) {
    StudyResult result;
    const PriorConfig baseline = cfg.text_prior.baseline();
    for (const auto& c : cfg.conditions) {
        for (std::size_t r = 0; r < c.replications; ++r) {
            try {
                const SimReplication rep = simulate_replication(c, cfg.pool, r);
                const Truth truth = truth_of(c, rep);
                const std::uint64_t seed = replication_fit_seed(c.seed, r);
                std::vector<std::pair<const char*, const PriorConfig*>> models;
                if (cfg.fit_baseline) models.emplace_back(kModelBaseline, &baseline);
                if (cfg.fit_text) models.emplace_back(kModelText, &cfg.text_prior);
                for (const auto& [name, prior] : models) {
                    const McmcResult fit = fit_model(rep, c, *prior, cfg.sampler, seed);
                    FitRecord rec{c.label(), r, name, seed, score_fit(fit.draws, truth), fit.diagnostics.max_rhat,
                                  fit.diagnostics.min_ess};
                    if (on_fit) on_fit(c, rep, rec, fit);
                    result.fits.push_back(std::move(rec));
                }
            } catch (const Error&) {
                rethrow_with_context("condition " + c.label() + ", replication " + std::to_string(r + 1) + ": ");
            }
        }
    }
    const std::uint64_t boot_seed = cfg.conditions.empty() ? 1 : cfg.conditions.front().seed;
    result.aggregate = aggregate(result.fits, cfg.n_boot, boot_seed);
    return result;
}

}  // namespace tdcdm
