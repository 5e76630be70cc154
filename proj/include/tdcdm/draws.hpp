#pragma once

// Retained MCMC samples and attribute relabelling.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "tdcdm/error.hpp"
#include "tdcdm/model.hpp"

namespace tdcdm {

struct DrawDims {
    std::size_t n_learners = 0;
    std::size_t n_items = 0;
    std::size_t n_attributes = 0;
    std::size_t n_times = 0;
    std::size_t n_covariates = 0;
};

// Draws of one chain; every vector is indexed draw-major.
struct ChainDraws {
    std::vector<Pattern> q;        // [d][t][j]
    std::vector<double> g, s;      // [d][t][j]
    std::vector<double> beta0;     // [d][k]
    std::vector<double> beta_z;    // [d][k][c]
    std::vector<double> gamma01;   // [d][k][c+1]
    std::vector<double> gamma10;   // [d][k][c+1]
    std::vector<double> theta;     // [d]
    std::vector<double> lambda;    // [d]
    std::vector<std::uint32_t> alpha_count;  // [t][i][k] number of kept draws with alpha = 1
    std::vector<Pattern> alpha;    // [d][t][i], only when alpha draws are stored
    std::size_t n_draws = 0;
    std::vector<std::size_t> relabel;  // permutation applied after sampling (identity if none)
};

struct Draws {
    DrawDims dims;
    std::vector<ChainDraws> chains;

    std::size_t n_chains() const { return chains.size(); }
    std::size_t draws_per_chain() const { return chains.empty() ? 0 : chains.front().n_draws; }
    std::size_t total_draws() const {
        std::size_t n = 0;
        for (const auto& c : chains) n += c.n_draws;
        return n;
    }
    bool has_alpha_draws() const { return !chains.empty() && !chains.front().alpha.empty(); }

    Pattern q(std::size_t chain, std::size_t d, std::size_t t, std::size_t j) const {
        return chains[chain].q[(d * dims.n_times + t) * dims.n_items + j];
    }
};

// Row-wise frequencies of each pattern; freq[t][j][p] for pattern p in 0..2^K-1.
inline std::vector<std::vector<std::vector<double>>> q_row_frequencies(const Draws& draws,
                                                                        std::span<const std::size_t> chain_subset = {}) {
    const auto& d = draws.dims;
    const std::size_t n_patterns = std::size_t{1} << d.n_attributes;
    std::vector<std::vector<std::vector<double>>> freq(
        d.n_times, std::vector<std::vector<double>>(d.n_items, std::vector<double>(n_patterns, 0.0)));
    std::vector<std::size_t> use(chain_subset.begin(), chain_subset.end());
    if (use.empty()) {
        use.resize(draws.n_chains());
        std::iota(use.begin(), use.end(), 0);
    }
    double total = 0.0;
    for (std::size_t c : use) {
        for (std::size_t k = 0; k < draws.chains[c].n_draws; ++k) {
            for (std::size_t t = 0; t < d.n_times; ++t) {
                for (std::size_t j = 0; j < d.n_items; ++j) freq[t][j][draws.q(c, k, t, j)] += 1.0;
            }
        }
        total += static_cast<double>(draws.chains[c].n_draws);
    }
    if (total == 0.0) throw DataError("no retained draws");
    for (auto& ft : freq) {
        for (auto& fj : ft) {
            for (auto& v : fj) v /= total;
        }
    }
    return freq;
}

// Highest-frequency pattern; ties go to the pattern requiring fewer
// attributes, then to the lower binary index.
inline Pattern modal_pattern(std::span<const double> freq) {
    Pattern best = 0;
    bool found = false;
    for (Pattern p = 0; p < freq.size(); ++p) {
        if (freq[p] <= 0.0) continue;
        if (!found || freq[p] > freq[best] ||
            (freq[p] == freq[best] && std::popcount(p) < std::popcount(best))) {
            best = p;
            found = true;
        }
    }
    return best;
}

// Row-wise MAP point estimate of Q at each time.
inline std::vector<QMatrix> map_q(const Draws& draws, std::span<const std::size_t> chain_subset = {}) {
    const auto freq = q_row_frequencies(draws, chain_subset);
    std::vector<QMatrix> out;
    for (std::size_t t = 0; t < draws.dims.n_times; ++t) {
        std::vector<Pattern> rows;
        for (std::size_t j = 0; j < draws.dims.n_items; ++j) rows.push_back(modal_pattern(freq[t][j]));
        out.push_back(QMatrix::from_patterns(std::move(rows), draws.dims.n_attributes, t + 1));
    }
    return out;
}

// Per-entry posterior-mode alpha (share of draws with alpha = 1 above 0.5;
// ties go to 0).
inline AttributeState alpha_mode(const Draws& draws, std::span<const std::size_t> chain_subset = {}) {
    const auto& d = draws.dims;
    AttributeState out(d.n_learners, d.n_attributes, d.n_times);
    std::vector<std::size_t> use(chain_subset.begin(), chain_subset.end());
    if (use.empty()) {
        use.resize(draws.n_chains());
        std::iota(use.begin(), use.end(), 0);
    }
    double total = 0.0;
    for (std::size_t c : use) total += static_cast<double>(draws.chains[c].n_draws);
    for (std::size_t t = 0; t < d.n_times; ++t) {
        for (std::size_t i = 0; i < d.n_learners; ++i) {
            for (std::size_t k = 0; k < d.n_attributes; ++k) {
                double ones = 0.0;
                for (std::size_t c : use) ones += draws.chains[c].alpha_count[(t * d.n_learners + i) * d.n_attributes + k];
                out.set(i, k, t, ones / total > 0.5 ? 1 : 0);
            }
        }
    }
    return out;
}

inline std::vector<std::vector<std::size_t>> all_permutations(std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    std::vector<std::vector<std::size_t>> out;
    do {
        out.push_back(p);
    } while (std::next_permutation(p.begin(), p.end()));
    return out;
}

inline constexpr std::size_t kMaxAlignAttributes = 6;

inline std::size_t q_agreement(std::span<const QMatrix> a, std::span<const QMatrix> b, std::span<const std::size_t> perm) {
    std::size_t agree = 0;
    for (std::size_t t = 0; t < a.size(); ++t) {
        const std::size_t K = a[t].attributes();
        for (std::size_t j = 0; j < a[t].items(); ++j) {
            const Pattern mapped = permute_pattern(a[t].row(j), perm);
            agree += K - static_cast<std::size_t>(std::popcount(mapped ^ b[t].row(j)));
        }
    }
    return agree;
}

inline std::size_t alpha_agreement(const AttributeState& a, const AttributeState& b, std::span<const std::size_t> perm) {
    std::size_t agree = 0;
    const std::size_t K = a.attributes();
    for (std::size_t t = 0; t < a.times(); ++t) {
        for (std::size_t i = 0; i < a.learners(); ++i) {
            const Pattern mapped = permute_pattern(a.profile(i, t), perm);
            agree += K - static_cast<std::size_t>(std::popcount(mapped ^ b.profile(i, t)));
        }
    }
    return agree;
}

// Permutation perm (estimated attribute k -> reference attribute perm[k])
// maximising Q entry agreement summed over time points. Ties are resolved by
// alpha agreement when both profiles are given, then by the first permutation
// in lexicographic order.
inline std::vector<std::size_t> best_permutation(std::span<const QMatrix> est_q, std::span<const QMatrix> ref_q,
                                                 const AttributeState* est_alpha = nullptr,
                                                 const AttributeState* ref_alpha = nullptr) {
    if (est_q.size() != ref_q.size() || est_q.empty()) throw DimensionError("Q lists must have equal nonzero length");
    const std::size_t K = est_q.front().attributes();
    for (std::size_t t = 0; t < est_q.size(); ++t) {
        if (est_q[t].attributes() != K || ref_q[t].attributes() != K) throw DimensionError("attribute counts differ");
        if (est_q[t].items() != ref_q[t].items()) throw DimensionError("item counts differ");
    }
    if (K > kMaxAlignAttributes) throw CapacityError("attribute alignment supports K <= 6");
    const bool use_alpha = est_alpha && ref_alpha;
    std::vector<std::size_t> best;
    std::size_t best_q = 0, best_a = 0;
    for (const auto& perm : all_permutations(K)) {
        const std::size_t aq = q_agreement(est_q, ref_q, perm);
        const std::size_t aa = use_alpha ? alpha_agreement(*est_alpha, *ref_alpha, perm) : 0;
        if (best.empty() || aq > best_q || (aq == best_q && aa > best_a)) {
            best = perm;
            best_q = aq;
            best_a = aa;
        }
    }
    return best;
}

inline bool is_identity(std::span<const std::size_t> perm) {
    for (std::size_t k = 0; k < perm.size(); ++k) {
        if (perm[k] != k) return false;
    }
    return true;
}

inline QMatrix permute_q(const QMatrix& q, std::span<const std::size_t> perm) {
    std::vector<Pattern> rows;
    for (Pattern p : q.rows()) rows.push_back(permute_pattern(p, perm));
    return QMatrix::from_patterns(std::move(rows), q.attributes(), q.time_index());
}

inline AttributeState permute_alpha(const AttributeState& a, std::span<const std::size_t> perm) {
    AttributeState out(a.learners(), a.attributes(), a.times());
    for (std::size_t t = 0; t < a.times(); ++t) {
        for (std::size_t i = 0; i < a.learners(); ++i) out.set_profile(i, t, permute_pattern(a.profile(i, t), perm));
    }
    return out;
}

// Moves row k of a row-major (K x width) block to row perm[k].
inline void permute_rows(std::span<double> block, std::size_t width, std::span<const std::size_t> perm) {
    std::vector<double> copy(block.begin(), block.end());
    for (std::size_t k = 0; k < perm.size(); ++k) {
        std::copy_n(copy.begin() + static_cast<std::ptrdiff_t>(k * width), width,
                    block.begin() + static_cast<std::ptrdiff_t>(perm[k] * width));
    }
}

inline StructuralParams permute_coeffs(const StructuralParams& p, std::span<const std::size_t> perm) {
    StructuralParams out = p;
    permute_rows(out.beta0, 1, perm);
    permute_rows(out.beta_z, p.n_covariates, perm);
    permute_rows(out.gamma01, p.n_covariates + 1, perm);
    permute_rows(out.gamma10, p.n_covariates + 1, perm);
    return out;
}

// Relabels every attribute-indexed quantity of one chain.
inline void relabel_chain(ChainDraws& ch, const DrawDims& d, std::span<const std::size_t> perm) {
    for (auto& p : ch.q) p = permute_pattern(p, perm);
    for (auto& p : ch.alpha) p = permute_pattern(p, perm);
    const std::size_t K = d.n_attributes;
    for (std::size_t r = 0; r < ch.n_draws; ++r) {
        permute_rows(std::span<double>(ch.beta0).subspan(r * K, K), 1, perm);
        if (d.n_covariates > 0) permute_rows(std::span<double>(ch.beta_z).subspan(r * K * d.n_covariates, K * d.n_covariates), d.n_covariates, perm);
        const std::size_t w = d.n_covariates + 1;
        permute_rows(std::span<double>(ch.gamma01).subspan(r * K * w, K * w), w, perm);
        permute_rows(std::span<double>(ch.gamma10).subspan(r * K * w, K * w), w, perm);
    }
    std::vector<std::uint32_t> counts = ch.alpha_count;
    for (std::size_t base = 0; base < counts.size(); base += K) {
        for (std::size_t k = 0; k < K; ++k) ch.alpha_count[base + perm[k]] = counts[base + k];
    }
    std::vector<std::size_t> composed(K);
    for (std::size_t k = 0; k < K; ++k) composed[k] = perm[ch.relabel.empty() ? k : ch.relabel[k]];
    ch.relabel = composed;
}

}  // namespace tdcdm
