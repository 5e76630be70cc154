#pragma once

// DINA measurement model, first-order Markov structural model and Q-matrix
// identifiability.
//
// Attribute vectors (Q rows and mastery profiles) are stored as bit patterns.
// Attribute k of K occupies bit (K-1-k), so reading the vector left to right
// gives the binary number: for K = 2, (0,1) = 1, (1,0) = 2, (1,1) = 3.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tdcdm/error.hpp"

namespace tdcdm {

using Pattern = std::uint32_t;

inline constexpr std::size_t kMaxEnumeratedAttributes = 10;

constexpr Pattern attribute_bit(std::size_t k, std::size_t n_attributes) {
    return Pattern{1} << (n_attributes - 1 - k);
}

constexpr bool has_attribute(Pattern p, std::size_t k, std::size_t n_attributes) {
    return (p & attribute_bit(k, n_attributes)) != 0;
}

inline Pattern pattern_from_bits(std::span<const int> bits) {
    Pattern p = 0;
    for (std::size_t k = 0; k < bits.size(); ++k) {
        if (bits[k] != 0 && bits[k] != 1) throw DomainError("attribute entries must be 0 or 1");
        if (bits[k]) p |= attribute_bit(k, bits.size());
    }
    return p;
}

inline std::vector<int> bits_from_pattern(Pattern p, std::size_t n_attributes) {
    std::vector<int> out(n_attributes);
    for (std::size_t k = 0; k < n_attributes; ++k) out[k] = has_attribute(p, k, n_attributes) ? 1 : 0;
    return out;
}

// Applies an attribute relabelling: new attribute perm[k] takes the value of
// old attribute k.
inline Pattern permute_pattern(Pattern p, std::span<const std::size_t> perm) {
    const std::size_t n = perm.size();
    Pattern out = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (has_attribute(p, k, n)) out |= attribute_bit(perm[k], n);
    }
    return out;
}

// The DINA ideal response on bit patterns: every required attribute mastered.
constexpr bool covers(Pattern profile, Pattern requirement) {
    return (profile & requirement) == requirement;
}

class QMatrix {
public:
    QMatrix() = default;
    QMatrix(std::size_t n_items, std::size_t n_attributes, std::size_t time_index = 1)
        : k_(n_attributes), time_index_(time_index), rows_(n_items, 0) {
        if (n_items < 1 || n_attributes < 1) throw DimensionError("Q-matrix needs J >= 1 and K >= 1");
        if (n_attributes > 31) throw CapacityError("at most 31 attributes are supported");
    }

    static QMatrix from_rows(const std::vector<std::vector<int>>& rows, std::size_t time_index = 1) {
        if (rows.empty()) throw DimensionError("Q-matrix needs J >= 1");
        QMatrix q(rows.size(), rows.front().size(), time_index);
        for (std::size_t j = 0; j < rows.size(); ++j) {
            if (rows[j].size() != q.k_) throw DimensionError("ragged Q-matrix rows");
            q.rows_[j] = pattern_from_bits(rows[j]);
        }
        return q;
    }

    static QMatrix from_patterns(std::vector<Pattern> rows, std::size_t n_attributes,
                                 std::size_t time_index = 1) {
        QMatrix q(rows.size(), n_attributes, time_index);
        const Pattern full = (Pattern{1} << n_attributes) - 1;
        for (Pattern p : rows) {
            if ((p & ~full) != 0) throw DomainError("pattern outside the attribute range");
        }
        q.rows_ = std::move(rows);
        return q;
    }

    std::size_t items() const { return rows_.size(); }
    std::size_t attributes() const { return k_; }
    std::size_t time_index() const { return time_index_; }
    void set_time_index(std::size_t t) { time_index_ = t; }

    int at(std::size_t j, std::size_t k) const { return has_attribute(rows_.at(j), k, k_) ? 1 : 0; }
    void set(std::size_t j, std::size_t k, int v) {
        if (v != 0 && v != 1) throw DomainError("Q entries must be 0 or 1");
        const Pattern bit = attribute_bit(k, k_);
        rows_.at(j) = v ? (rows_.at(j) | bit) : (rows_.at(j) & ~bit);
    }

    Pattern row(std::size_t j) const { return rows_[j]; }
    void set_row(std::size_t j, Pattern p) { rows_.at(j) = p; }
    std::vector<int> row_bits(std::size_t j) const { return bits_from_pattern(rows_.at(j), k_); }
    std::span<const Pattern> rows() const { return rows_; }

    std::size_t column_sum(std::size_t k) const {
        return static_cast<std::size_t>(
            std::count_if(rows_.begin(), rows_.end(), [&](Pattern p) { return has_attribute(p, k, k_); }));
    }

    QMatrix first_rows(std::size_t n) const {
        if (n < 1 || n > rows_.size()) throw DimensionError("row subset out of range");
        return from_patterns({rows_.begin(), rows_.begin() + static_cast<std::ptrdiff_t>(n)}, k_, time_index_);
    }

    bool operator==(const QMatrix& o) const { return k_ == o.k_ && rows_ == o.rows_; }

private:
    std::size_t k_ = 0;
    std::size_t time_index_ = 1;
    std::vector<Pattern> rows_;
};

// Mastery profiles alpha_{ikt}, one pattern per (learner, time).
class AttributeState {
public:
    AttributeState() = default;
    AttributeState(std::size_t n_learners, std::size_t n_attributes, std::size_t n_times)
        : n_(n_learners), k_(n_attributes), t_(n_times), profiles_(n_learners * n_times, 0) {}

    std::size_t learners() const { return n_; }
    std::size_t attributes() const { return k_; }
    std::size_t times() const { return t_; }

    // t is zero-based throughout the in-memory API.
    Pattern profile(std::size_t i, std::size_t t) const { return profiles_[t * n_ + i]; }
    void set_profile(std::size_t i, std::size_t t, Pattern p) { profiles_[t * n_ + i] = p; }
    int at(std::size_t i, std::size_t k, std::size_t t) const { return has_attribute(profile(i, t), k, k_) ? 1 : 0; }
    void set(std::size_t i, std::size_t k, std::size_t t, int v) {
        const Pattern bit = attribute_bit(k, k_);
        Pattern& p = profiles_[t * n_ + i];
        p = v ? (p | bit) : (p & ~bit);
    }
    std::span<const Pattern> profiles() const { return profiles_; }

    bool operator==(const AttributeState& o) const = default;

private:
    std::size_t n_ = 0, k_ = 0, t_ = 0;
    std::vector<Pattern> profiles_;
};

struct ItemParams {
    std::vector<double> g;
    std::vector<double> s;
    std::size_t time_index = 1;

    std::size_t items() const { return g.size(); }
    void validate() const {
        if (g.size() != s.size()) throw DimensionError("g and s lengths differ");
        for (std::size_t j = 0; j < g.size(); ++j) {
            if (!(g[j] > 0.0 && g[j] < 1.0) || !(s[j] > 0.0 && s[j] < 1.0)) {
                throw DomainError("item parameters must lie in (0,1)");
            }
        }
    }
};

// Logistic coefficients of the structural model. Row-major K x C (beta_z) and
// K x (C+1) with intercept first (gamma01 gain, gamma10 loss).
struct StructuralParams {
    std::size_t n_attributes = 0;
    std::size_t n_covariates = 0;
    std::vector<double> beta0;
    std::vector<double> beta_z;
    std::vector<double> gamma01;
    std::vector<double> gamma10;

    StructuralParams() = default;
    StructuralParams(std::size_t k, std::size_t c)
        : n_attributes(k), n_covariates(c), beta0(k, 0.0), beta_z(k * c, 0.0),
          gamma01(k * (c + 1), 0.0), gamma10(k * (c + 1), 0.0) {}

    std::span<const double> beta_z_row(std::size_t k) const { return {beta_z.data() + k * n_covariates, n_covariates}; }
    std::span<double> beta_z_row(std::size_t k) { return {beta_z.data() + k * n_covariates, n_covariates}; }
    std::span<const double> gamma01_row(std::size_t k) const {
        return {gamma01.data() + k * (n_covariates + 1), n_covariates + 1};
    }
    std::span<double> gamma01_row(std::size_t k) { return {gamma01.data() + k * (n_covariates + 1), n_covariates + 1}; }
    std::span<const double> gamma10_row(std::size_t k) const {
        return {gamma10.data() + k * (n_covariates + 1), n_covariates + 1};
    }
    std::span<double> gamma10_row(std::size_t k) { return {gamma10.data() + k * (n_covariates + 1), n_covariates + 1}; }

    bool operator==(const StructuralParams& o) const = default;
};

// Responses Y (N x J x T) and static covariates Z (N x C).
class Dataset {
public:
    Dataset() = default;
    Dataset(std::size_t n_learners, std::size_t n_items, std::size_t n_times, std::size_t n_covariates)
        : n_(n_learners), j_(n_items), t_(n_times), c_(n_covariates), y_(n_learners * n_items * n_times, 0),
          z_(n_learners * n_covariates, 0.0), item_ids_(n_times, std::vector<std::string>(n_items)) {
        for (std::size_t t = 0; t < n_times; ++t) {
            for (std::size_t j = 0; j < n_items; ++j) item_ids_[t][j] = "t" + std::to_string(t + 1) + "_i" + std::to_string(j + 1);
        }
        student_ids_.resize(n_learners);
        for (std::size_t i = 0; i < n_learners; ++i) student_ids_[i] = std::to_string(i + 1);
    }

    std::size_t learners() const { return n_; }
    std::size_t items() const { return j_; }
    std::size_t times() const { return t_; }
    std::size_t covariates() const { return c_; }

    int y(std::size_t i, std::size_t j, std::size_t t) const { return y_[(t * n_ + i) * j_ + j]; }
    void set_y(std::size_t i, std::size_t j, std::size_t t, int v) {
        if (v != 0 && v != 1) throw DataError("responses must be 0 or 1");
        y_[(t * n_ + i) * j_ + j] = static_cast<std::uint8_t>(v);
    }
    // Responses of learner i at time t across all items.
    std::span<const std::uint8_t> responses(std::size_t i, std::size_t t) const {
        return {y_.data() + (t * n_ + i) * j_, j_};
    }

    std::span<const double> z(std::size_t i) const { return {z_.data() + i * c_, c_}; }
    double z(std::size_t i, std::size_t c) const { return z_[i * c_ + c]; }
    void set_z(std::size_t i, std::size_t c, double v) { z_[i * c_ + c] = v; }

    const std::vector<std::vector<std::string>>& item_ids() const { return item_ids_; }
    std::vector<std::vector<std::string>>& item_ids() { return item_ids_; }
    const std::vector<std::string>& student_ids() const { return student_ids_; }
    std::vector<std::string>& student_ids() { return student_ids_; }

    // Standardises every column that is not a 0/1 dummy to sample mean 0 and
    // unit variance (n-1 denominator). Returns the indices of standardised columns.
    std::vector<std::size_t> standardize_covariates() {
        std::vector<std::size_t> done;
        for (std::size_t c = 0; c < c_; ++c) {
            bool dummy = true;
            double mean = 0.0;
            for (std::size_t i = 0; i < n_; ++i) {
                const double v = z(i, c);
                if (v != 0.0 && v != 1.0) dummy = false;
                mean += v;
            }
            if (dummy || n_ < 2) continue;
            mean /= static_cast<double>(n_);
            double ss = 0.0;
            for (std::size_t i = 0; i < n_; ++i) ss += (z(i, c) - mean) * (z(i, c) - mean);
            const double sd = std::sqrt(ss / static_cast<double>(n_ - 1));
            if (!(sd > 0.0)) throw DataError("covariate column " + std::to_string(c + 1) + " is constant");
            for (std::size_t i = 0; i < n_; ++i) set_z(i, c, (z(i, c) - mean) / sd);
            done.push_back(c);
        }
        return done;
    }

private:
    std::size_t n_ = 0, j_ = 0, t_ = 0, c_ = 0;
    std::vector<std::uint8_t> y_;
    std::vector<double> z_;
    std::vector<std::vector<std::string>> item_ids_;
    std::vector<std::string> student_ids_;
};

// ---------------------------------------------------------------------------
// Scalar model functions

inline constexpr double kLogitClamp = 35.0;

inline double sigmoid(double x) {
    x = std::clamp(x, -kLogitClamp, kLogitClamp);
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

// log sigmoid(x) and log(1 - sigmoid(x)) without cancellation.
inline double log_sigmoid(double x) {
    x = std::clamp(x, -kLogitClamp, kLogitClamp);
    return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}
inline double log1m_sigmoid(double x) { return log_sigmoid(-x); }

inline int ideal_response(std::span<const int> alpha_row, std::span<const int> q_row) {
    if (alpha_row.size() != q_row.size()) throw DimensionError("alpha and q rows must have equal length");
    for (std::size_t k = 0; k < q_row.size(); ++k) {
        if (alpha_row[k] < q_row[k]) return 0;
    }
    return 1;
}

inline double response_prob(int eta, double g, double s) {
    if (!(g > 0.0 && g < 1.0) || !(s > 0.0 && s < 1.0)) throw DomainError("g and s must lie in (0,1)");
    return eta ? 1.0 - s : g;
}

inline void require_finite(std::span<const double> v, const char* what) {
    for (double x : v) {
        if (!std::isfinite(x)) throw DomainError(std::string("non-finite ") + what);
    }
}

inline double linear_predictor(double intercept, std::span<const double> slopes, std::span<const double> z) {
    if (slopes.size() != z.size()) throw DimensionError("coefficient and covariate lengths differ");
    double eta = intercept;
    for (std::size_t c = 0; c < z.size(); ++c) eta += slopes[c] * z[c];
    return eta;
}

inline double initial_mastery_prob(double beta0_k, std::span<const double> beta_z_k, std::span<const double> z) {
    if (!std::isfinite(beta0_k)) throw DomainError("non-finite intercept");
    require_finite(beta_z_k, "coefficient");
    require_finite(z, "covariate");
    return sigmoid(linear_predictor(beta0_k, beta_z_k, z));
}

enum class Transition { Gain, Loss };

// gain: P(alpha_t = 1 | alpha_{t-1} = 0); loss: P(alpha_t = 0 | alpha_{t-1} = 1).
// Both share the logistic form with (intercept, slopes...) coefficients.
inline double transition_prob(Transition /*direction*/, std::span<const double> gamma_k, std::span<const double> z) {
    if (gamma_k.size() != z.size() + 1) throw DimensionError("transition coefficients need C+1 entries");
    require_finite(gamma_k, "coefficient");
    require_finite(z, "covariate");
    return sigmoid(linear_predictor(gamma_k[0], gamma_k.subspan(1), z));
}

// log P(Y | Q, g, s, alpha) summed over learners, items and times.
inline double log_likelihood(const Dataset& data, std::span<const QMatrix> q, std::span<const ItemParams> params,
                             const AttributeState& alpha) {
    const std::size_t T = data.times();
    if (q.size() != T || params.size() != T) throw DimensionError("need one Q-matrix and item set per time");
    if (alpha.learners() != data.learners() || alpha.times() != T) throw DimensionError("alpha shape mismatch");
    double total = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
        if (q[t].items() != data.items() || params[t].items() != data.items()) {
            throw DimensionError("item count mismatch at time " + std::to_string(t + 1));
        }
        if (q[t].attributes() != alpha.attributes()) throw DimensionError("attribute count mismatch");
        params[t].validate();
        for (std::size_t i = 0; i < data.learners(); ++i) {
            const Pattern a = alpha.profile(i, t);
            const auto y = data.responses(i, t);
            for (std::size_t j = 0; j < data.items(); ++j) {
                const double p = response_prob(covers(a, q[t].row(j)) ? 1 : 0, params[t].g[j], params[t].s[j]);
                total += y[j] ? std::log(p) : std::log1p(-p);
            }
        }
    }
    return total;
}

// ---------------------------------------------------------------------------
// Q-matrix support

// All nonzero K-patterns in ascending binary order.
inline std::vector<Pattern> enumerate_candidate_rows(std::size_t n_attributes) {
    if (n_attributes < 1 || n_attributes > kMaxEnumeratedAttributes) {
        throw CapacityError("candidate enumeration supports 1 <= K <= " + std::to_string(kMaxEnumeratedAttributes));
    }
    std::vector<Pattern> out((std::size_t{1} << n_attributes) - 1);
    for (std::size_t p = 0; p < out.size(); ++p) out[p] = static_cast<Pattern>(p + 1);
    return out;
}

enum class Violation { ZeroRow, MissingIdentityPair, ColumnSumBelowThree, DuplicateResidualColumns };

inline const char* describe(Violation v) {
    switch (v) {
        case Violation::ZeroRow: return "Q contains an all-zero row";
        case Violation::MissingIdentityPair: return "Q does not contain two disjoint identity submatrices";
        case Violation::ColumnSumBelowThree: return "some attribute is required by fewer than three items";
        case Violation::DuplicateResidualColumns:
            return "columns are not pairwise distinct after removing two identity submatrices";
    }
    return "unknown";
}

struct IdentifiabilityReport {
    bool identifiable = true;
    std::vector<Violation> violations;
};

// Strict identifiability: no zero rows, two identity submatrices I_K, every
// column sum >= 3, and distinct columns in the rows left after removing the
// two identity blocks. Identity rows are unit patterns, so the residual rows
// are the same multiset whichever unit rows are removed.
inline IdentifiabilityReport check_identifiable(const QMatrix& q) {
    IdentifiabilityReport rep;
    const std::size_t K = q.attributes();
    auto fail = [&](Violation v) {
        rep.identifiable = false;
        rep.violations.push_back(v);
    };

    if (std::any_of(q.rows().begin(), q.rows().end(), [](Pattern p) { return p == 0; })) fail(Violation::ZeroRow);

    std::vector<std::size_t> unit_count(K, 0);
    for (Pattern p : q.rows()) {
        if (std::has_single_bit(p)) ++unit_count[K - 1 - static_cast<std::size_t>(std::countr_zero(p))];
    }
    const bool two_identities = std::all_of(unit_count.begin(), unit_count.end(), [](std::size_t c) { return c >= 2; });
    if (!two_identities) fail(Violation::MissingIdentityPair);

    for (std::size_t k = 0; k < K; ++k) {
        if (q.column_sum(k) < 3) {
            fail(Violation::ColumnSumBelowThree);
            break;
        }
    }

    if (two_identities) {
        std::vector<std::size_t> to_skip(K, 2);
        std::vector<Pattern> residual;
        for (Pattern p : q.rows()) {
            if (std::has_single_bit(p)) {
                auto& left = to_skip[K - 1 - static_cast<std::size_t>(std::countr_zero(p))];
                if (left > 0) {
                    --left;
                    continue;
                }
            }
            residual.push_back(p);
        }
        bool distinct = true;
        for (std::size_t a = 0; a < K && distinct; ++a) {
            for (std::size_t b = a + 1; b < K && distinct; ++b) {
                const bool differs = std::any_of(residual.begin(), residual.end(), [&](Pattern p) {
                    return has_attribute(p, a, K) != has_attribute(p, b, K);
                });
                if (!differs) distinct = false;
            }
        }
        if (!distinct) fail(Violation::DuplicateResidualColumns);
    }
    return rep;
}

// Which constraint set bounds the Q support during sampling.
//   Strict    - check_identifiable.
//   PureItem  - the lighter row-wise rule: no zero rows, at least one pure
//               item per attribute, every attribute required by at least
//               two items.
enum class ConstraintPolicy { Strict, PureItem };

inline bool satisfies_pure_item_rule(const QMatrix& q) {
    const std::size_t K = q.attributes();
    std::vector<std::size_t> pure(K, 0), col(K, 0);
    for (Pattern p : q.rows()) {
        if (p == 0) return false;
        if (std::has_single_bit(p)) ++pure[K - 1 - static_cast<std::size_t>(std::countr_zero(p))];
        for (std::size_t k = 0; k < K; ++k) col[k] += has_attribute(p, k, K) ? 1 : 0;
    }
    for (std::size_t k = 0; k < K; ++k) {
        if (pure[k] < 1 || col[k] < 2) return false;
    }
    return true;
}

inline bool admissible(const QMatrix& q, ConstraintPolicy policy) {
    return policy == ConstraintPolicy::Strict ? check_identifiable(q).identifiable : satisfies_pure_item_rule(q);
}

}  // namespace tdcdm
