#pragma once

// Prior densities: the text-informed Bernoulli prior on Q, hyperpriors on
// theta and lambda, Beta priors on (g, s) and Gaussian priors on the
// structural coefficients.

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "tdcdm/error.hpp"
#include "tdcdm/model.hpp"

namespace tdcdm {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct BetaShape {
    double a = 1.0;
    double b = 1.0;
};

enum class Gamma10Prior {
    Shifted,   // N(gamma10_intercept_mean, sd^2) on the loss intercept, N(0, sd^2) on its slopes
    Standard,  // N(0, sd^2) on every loss coefficient
};

struct PriorConfig {
    std::string preset = "sim-default";
    BetaShape theta_hyper{6.0, 4.0};
    double sigma_lambda = 0.5;
    BetaShape gs_prior{1.0, 1.0};
    double gs_init_lo = 0.0;
    double gs_init_hi = 0.3;
    double coeff_sd = 1.0;
    Gamma10Prior gamma10_prior = Gamma10Prior::Shifted;
    double gamma10_intercept_mean = -3.0;
    // false holds lambda fixed at pinned_lambda.
    bool lambda_enabled = true;
    double pinned_lambda = 0.0;
    // false selects the plain Bernoulli(theta) Q prior with no text input at all.
    bool text_prior = true;

    void validate() const {
        if (!(theta_hyper.a > 0 && theta_hyper.b > 0)) throw ConfigError("theta hyperprior shapes must be positive");
        if (!(sigma_lambda > 0)) throw ConfigError("sigma_lambda must be positive");
        if (!(gs_prior.a > 0 && gs_prior.b > 0)) throw ConfigError("g/s prior shapes must be positive");
        if (!std::isfinite(pinned_lambda)) throw ConfigError("pinned lambda must be finite");
        if (!(coeff_sd > 0)) throw ConfigError("coefficient prior sd must be positive");
        if (!(gs_init_lo >= 0 && gs_init_hi > gs_init_lo && gs_init_hi < 1)) {
            throw ConfigError("g/s initialisation range must lie inside [0,1)");
        }
    }

    double gamma10_mean(std::size_t coeff) const {
        return (coeff == 0 && gamma10_prior == Gamma10Prior::Shifted) ? gamma10_intercept_mean : 0.0;
    }

    // "sim-default": theta ~ Beta(6,4), lambda ~ N(0, 0.5^2).
    // "empirical-default": theta ~ Beta(24,6), lambda ~ N(0, 0.5^2).
    static PriorConfig from_preset(std::string_view name) {
        PriorConfig c;
        if (name == "sim-default") {
            c.preset = "sim-default";
            c.theta_hyper = {6.0, 4.0};
        } else if (name == "empirical-default") {
            c.preset = "empirical-default";
            c.theta_hyper = {24.0, 6.0};
        } else {
            throw ConfigError("unknown prior preset '" + std::string(name) +
                              "' (expected sim-default or empirical-default)");
        }
        c.sigma_lambda = 0.5;
        return c;
    }

    PriorConfig baseline() const {
        PriorConfig c = *this;
        c.text_prior = false;
        c.lambda_enabled = false;
        c.pinned_lambda = 0.0;
        return c;
    }
};

// Per-time matrix of signals entering the Q prior: tau_j broadcast across
// attributes, or the item-attribute signal tau*_jk.
class QPriorSignal {
public:
    QPriorSignal() = default;
    QPriorSignal(std::size_t n_items, std::size_t n_attributes)
        : j_(n_items), k_(n_attributes), v_(n_items * n_attributes, 0.0) {}

    static QPriorSignal broadcast(std::span<const double> tau, std::size_t n_attributes) {
        QPriorSignal s(tau.size(), n_attributes);
        for (std::size_t j = 0; j < tau.size(); ++j) {
            for (std::size_t k = 0; k < n_attributes; ++k) s.v_[j * n_attributes + k] = tau[j];
        }
        return s;
    }

    static QPriorSignal from_matrix(std::vector<double> values, std::size_t n_items, std::size_t n_attributes) {
        if (values.size() != n_items * n_attributes) throw DimensionError("signal matrix must be J x K");
        QPriorSignal s(n_items, n_attributes);
        s.v_ = std::move(values);
        return s;
    }

    std::size_t items() const { return j_; }
    std::size_t attributes() const { return k_; }
    double at(std::size_t j, std::size_t k) const { return v_[j * k_ + k]; }
    std::span<const double> values() const { return v_; }

private:
    std::size_t j_ = 0, k_ = 0;
    std::vector<double> v_;
};

inline void require_probability(double theta) {
    if (!(theta > 0.0 && theta < 1.0)) throw DomainError("theta must lie in (0,1)");
}

// pi_jk = sigmoid(logit(theta) - lambda * tau). A zero shift returns theta
// itself so that lambda = 0 reproduces the plain Bernoulli(theta) prior exactly.
inline double q_inclusion_prob(double theta, double lambda, double tau_std) {
    require_probability(theta);
    if (!std::isfinite(lambda) || !std::isfinite(tau_std)) throw DomainError("lambda and tau must be finite");
    const double shift = lambda * tau_std;
    if (shift == 0.0) return theta;
    return sigmoid(logit(theta) - shift);
}

inline double bernoulli_log_mass(int q, double p) { return q ? std::log(p) : std::log1p(-p); }

// Prior log-mass of one Q row under the text-informed prior.
inline double log_prior_q_row(Pattern row, std::size_t j, std::size_t n_attributes, double theta, double lambda,
                              const QPriorSignal& signal) {
    double total = 0.0;
    for (std::size_t k = 0; k < n_attributes; ++k) {
        total += bernoulli_log_mass(has_attribute(row, k, n_attributes) ? 1 : 0,
                                    q_inclusion_prob(theta, lambda, signal.at(j, k)));
    }
    return total;
}

inline double log_prior_q(const QMatrix& q, double theta, double lambda, const QPriorSignal& signal) {
    if (signal.items() != q.items() || signal.attributes() != q.attributes()) {
        throw DimensionError("signal shape does not match Q");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < q.items(); ++j) total += log_prior_q_row(q.row(j), j, q.attributes(), theta, lambda, signal);
    return total;
}

// Overload taking an item-level tau vector broadcast across attributes.
inline double log_prior_q(const QMatrix& q, double theta, double lambda, std::span<const double> tau_std) {
    if (tau_std.size() != q.items()) throw DimensionError("tau length must equal J");
    return log_prior_q(q, theta, lambda, QPriorSignal::broadcast(tau_std, q.attributes()));
}

// The Bernoulli(theta) prior of the baseline model; no text input.
inline double log_prior_q_row_bernoulli(Pattern row, std::size_t n_attributes, double theta) {
    require_probability(theta);
    double total = 0.0;
    for (std::size_t k = 0; k < n_attributes; ++k) {
        total += bernoulli_log_mass(has_attribute(row, k, n_attributes) ? 1 : 0, theta);
    }
    return total;
}

inline double log_prior_q_bernoulli(const QMatrix& q, double theta) {
    double total = 0.0;
    for (std::size_t j = 0; j < q.items(); ++j) total += log_prior_q_row_bernoulli(q.row(j), q.attributes(), theta);
    return total;
}

inline double log_beta_pdf(double x, double a, double b) {
    if (!(x > 0.0 && x < 1.0)) return kNegInf;
    return boost::math::lgamma(a + b) - boost::math::lgamma(a) - boost::math::lgamma(b) + (a - 1.0) * std::log(x) +
           (b - 1.0) * std::log1p(-x);
}

inline double log_normal_pdf(double x, double mean, double sd) {
    if (!std::isfinite(x)) return kNegInf;
    const double z = (x - mean) / sd;
    return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
}

inline double log_prior_theta(double theta, const PriorConfig& cfg) {
    return log_beta_pdf(theta, cfg.theta_hyper.a, cfg.theta_hyper.b);
}

inline double log_prior_lambda(double lambda, const PriorConfig& cfg) {
    return log_normal_pdf(lambda, 0.0, cfg.sigma_lambda);
}

inline double log_prior_coeffs(const StructuralParams& p, const PriorConfig& cfg) {
    double total = 0.0;
    const double sd = cfg.coeff_sd;
    for (double b : p.beta0) total += log_normal_pdf(b, 0.0, sd);
    for (double b : p.beta_z) total += log_normal_pdf(b, 0.0, sd);
    for (double g : p.gamma01) total += log_normal_pdf(g, 0.0, sd);
    const std::size_t width = p.n_covariates + 1;
    for (std::size_t i = 0; i < p.gamma10.size(); ++i) {
        total += log_normal_pdf(p.gamma10[i], cfg.gamma10_mean(i % width), sd);
    }
    return total;
}

inline double log_prior_item_params(const ItemParams& p, const PriorConfig& cfg) {
    double total = 0.0;
    const bool flat = cfg.gs_prior.a == 1.0 && cfg.gs_prior.b == 1.0;
    for (std::size_t j = 0; j < p.items(); ++j) {
        for (double x : {p.g[j], p.s[j]}) {
            if (flat) {
                if (!(x > 0.0 && x < 1.0)) return kNegInf;
            } else {
                total += log_beta_pdf(x, cfg.gs_prior.a, cfg.gs_prior.b);
            }
        }
    }
    return total;
}

}  // namespace tdcdm
