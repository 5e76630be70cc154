#pragma once

// Item-level semantic discriminability from precomputed text embeddings.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tdcdm/error.hpp"

namespace tdcdm {

struct ItemEmbeddings {
    std::string item_id;
    std::size_t time_index = 1;
    std::vector<double> stem;
    std::vector<double> correct;
    std::vector<std::vector<double>> distractors;

    void validate() const;
};

struct TextSignal {
    std::string item_id;
    std::size_t time_index = 1;
    double s_plus = 0.0;
    double s_minus = 0.0;
    double tau_raw = 0.0;
    double tau_std = 0.0;
};

inline double norm2(std::span<const double> v) {
    double ss = 0.0;
    for (double x : v) ss += x * x;
    return std::sqrt(ss);
}

inline double cosine_similarity(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) throw DimensionError("cosine similarity needs equal dimensions");
    const double nu = norm2(u);
    const double nv = norm2(v);
    if (!(nu > 0.0) || !(nv > 0.0)) throw DomainError("cosine similarity of a zero-norm vector");
    const double dot = std::inner_product(u.begin(), u.end(), v.begin(), 0.0);
    return std::clamp(dot / (nu * nv), -1.0, 1.0);
}

inline void ItemEmbeddings::validate() const {
    const std::string where = "item " + item_id + ": ";
    if (stem.size() < 2) throw DimensionError(where + "embedding dimension must be at least 2");
    if (correct.size() != stem.size()) throw DimensionError(where + "correct embedding dimension differs from stem");
    if (distractors.empty()) throw DimensionError(where + "at least one distractor embedding is required");
    for (const auto& d : distractors) {
        if (d.size() != stem.size()) throw DimensionError(where + "distractor embedding dimension differs from stem");
    }
}

// S+ = sim(stem, correct), S- = mean_m sim(stem, distractor_m), tau = S+ - S-.
// tau_std is left at 0; see standardize_tau.
inline TextSignal compute_tau(const ItemEmbeddings& item) {
    item.validate();
    TextSignal out;
    out.item_id = item.item_id;
    out.time_index = item.time_index;
    out.s_plus = cosine_similarity(item.stem, item.correct);
    // Running mean: exact when every distractor matches the correct option.
    double mean = 0.0, n = 0.0;
    for (const auto& d : item.distractors) mean += (cosine_similarity(item.stem, d) - mean) / ++n;
    out.s_minus = mean;
    out.tau_raw = out.s_plus - out.s_minus;
    return out;
}

// Sample mean and standard deviation with the (n-1) denominator.
struct MeanSd {
    double mean = 0.0;
    double sd = 0.0;
};

inline MeanSd sample_mean_sd(std::span<const double> x) {
    if (x.size() < 2) throw DegenerateError("need at least two values for a sample standard deviation");
    const double n = static_cast<double>(x.size());
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / (n - 1.0))};
}

inline std::vector<double> standardize_tau(std::span<const double> pool) {
    const MeanSd ms = sample_mean_sd(pool);
    // Relative threshold: a pool whose spread is pure rounding noise counts as constant.
    double scale = 0.0;
    for (double v : pool) scale = std::max(scale, std::abs(v));
    if (!(ms.sd > 1e-14 * std::max(scale, 1e-300))) throw DegenerateError("tau pool has zero variance");
    std::vector<double> out(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) out[i] = (pool[i] - ms.mean) / ms.sd;
    return out;
}

// Standardises tau_raw in place, either within each time point or over the
// union of all items.
enum class TauPool { PerTime, Union };

inline void standardize_signals(std::vector<TextSignal>& signals, TauPool pool) {
    if (pool == TauPool::Union) {
        std::vector<double> raw;
        for (const auto& s : signals) raw.push_back(s.tau_raw);
        const auto z = standardize_tau(raw);
        for (std::size_t i = 0; i < signals.size(); ++i) signals[i].tau_std = z[i];
        return;
    }
    std::vector<std::size_t> times;
    for (const auto& s : signals) times.push_back(s.time_index);
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());
    for (std::size_t t : times) {
        std::vector<double> raw;
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < signals.size(); ++i) {
            if (signals[i].time_index == t) {
                raw.push_back(signals[i].tau_raw);
                idx.push_back(i);
            }
        }
        const auto z = standardize_tau(raw);
        for (std::size_t r = 0; r < idx.size(); ++r) signals[idx[r]].tau_std = z[r];
    }
}

// U_jk = sim(stem_j, description_k).
inline double attribute_similarity(std::span<const double> stem, std::span<const double> attribute_desc) {
    return cosine_similarity(stem, attribute_desc);
}

// Row-major J x K matrix of attribute similarities.
inline std::vector<double> attribute_similarity_matrix(const std::vector<ItemEmbeddings>& items,
                                                       const std::vector<std::vector<double>>& descriptions) {
    std::vector<double> u;
    u.reserve(items.size() * descriptions.size());
    for (const auto& it : items) {
        for (const auto& d : descriptions) u.push_back(attribute_similarity(it.stem, d));
    }
    return u;
}

// tau*_jk = a U_jk + b tau_j over a row-major J x K matrix U.
inline std::vector<double> combined_signal(std::span<const double> u, std::size_t n_attributes,
                                           std::span<const double> tau, double a, double b) {
    if (!std::isfinite(a) || !std::isfinite(b)) throw DomainError("weights must be finite");
    if (n_attributes == 0 || u.size() != tau.size() * n_attributes) {
        throw DimensionError("U must be J x K with J = length of tau");
    }
    std::vector<double> out(u.size());
    for (std::size_t j = 0; j < tau.size(); ++j) {
        for (std::size_t k = 0; k < n_attributes; ++k) {
            out[j * n_attributes + k] = a * u[j * n_attributes + k] + b * tau[j];
        }
    }
    return out;
}

}  // namespace tdcdm
