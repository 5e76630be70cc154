#pragma once

// Metropolis-within-Gibbs sampler for the dynamic DINA model with a
// text-informed Q prior.
//
// One sweep updates, in this order:
//   block 0  alpha_{ikt}        single-site Gibbs
//   block 1  Q rows             row-wise Gibbs over all nonzero patterns,
//                               restricted to the admissible Q space
//   block 2  (g_jt, s_jt)       conjugate Beta draws
//   block 3  beta_k             random-walk Metropolis, one block per attribute
//   block 4  gamma01_k, gamma10_k  random-walk Metropolis
//   block 5  (logit theta, lambda) joint random-walk Metropolis
//   block 6  label swap at each time point, run right after the Q rows
// Each block of each sweep of each chain reads its own random stream
// (see rng.hpp). Proposal scales adapt during burn-in only.

#include <algorithm>
#include <cmath>
#include <exception>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "tdcdm/diagnostics.hpp"
#include "tdcdm/draws.hpp"
#include "tdcdm/error.hpp"
#include "tdcdm/model.hpp"
#include "tdcdm/priors.hpp"
#include "tdcdm/rng.hpp"

namespace tdcdm {

struct SamplerConfig {
    std::size_t n_chains = 3;
    std::size_t n_burnin = 3000;
    std::size_t n_keep = 3000;
    std::size_t thin = 1;
    double rw_step_coeffs = 0.2;
    double rw_step_hyper = 0.3;
    std::size_t adapt_window = 50;
    double target_accept = 0.35;
    std::uint64_t seed = 1;
    ConstraintPolicy constraint = ConstraintPolicy::Strict;
    // Holds (g, s) at these values instead of sampling them.
    std::optional<std::vector<ItemParams>> fixed_item_params;
    bool store_alpha_draws = false;
    // Relabel chains 1.. onto chain 0 after sampling.
    bool align_chains = true;
    bool parallel_chains = true;
    // Metropolis move exchanging two attribute labels at one time point.
    bool label_swap = true;
    // During the first half of burn-in, every adapt_window sweeps, permute the
    // labels at each t >= 2 to best match the profiles at t - 1.
    bool align_time_labels = true;
    // Each chain runs n_starts pilots of pilot_sweeps burn-in sweeps from
    // independent initial states and continues from the one with the highest
    // log posterior. Pilots are capped at half the burn-in.
    std::size_t n_starts = 4;
    std::size_t pilot_sweeps = 100;

    void validate() const {
        if (n_chains < 1) throw ConfigError("n_chains must be >= 1");
        if (n_burnin < 1 || n_keep < 1) throw ConfigError("n_burnin and n_keep must be >= 1");
        if (thin < 1) throw ConfigError("thin must be >= 1");
        if (!(rw_step_coeffs > 0) || !(rw_step_hyper > 0)) throw ConfigError("proposal steps must be positive");
        if (adapt_window < 1) throw ConfigError("adapt_window must be >= 1");
        if (n_starts < 1) throw ConfigError("n_starts must be >= 1");
        if (!(target_accept > 0 && target_accept < 1)) throw ConfigError("target acceptance must be in (0,1)");
    }
};

enum SweepBlock : std::uint32_t {
    kBlockAlpha = 0,
    kBlockQ = 1,
    kBlockItems = 2,
    kBlockBeta = 3,
    kBlockGamma = 4,
    kBlockHyper = 5,
    kBlockLabelSwap = 6,
};

struct ChainState {
    std::vector<QMatrix> q;
    std::vector<ItemParams> items;
    StructuralParams coeffs;
    AttributeState alpha;
    double theta = 0.5;
    double lambda = 0.0;
    std::uint64_t rng_seed = 0;
    std::size_t iteration = 0;
};

// Everything the full conditionals need besides the chain state.
class Posterior {
public:
    Posterior(const Dataset& data, PriorConfig prior, std::vector<QPriorSignal> signal, std::size_t n_attributes,
              ConstraintPolicy policy)
        : data_(&data), prior_(std::move(prior)), signal_(std::move(signal)), k_(n_attributes), policy_(policy),
          candidates_(enumerate_candidate_rows(n_attributes)) {
        prior_.validate();
        if (prior_.text_prior) {
            if (signal_.empty()) {
                for (std::size_t t = 0; t < data.times(); ++t) signal_.emplace_back(data.items(), k_);
            }
            if (signal_.size() != data.times()) throw DimensionError("need one text signal per time point");
            for (const auto& s : signal_) {
                if (s.items() != data.items() || s.attributes() != k_) throw DimensionError("text signal must be J x K");
            }
        } else {
            signal_.clear();
        }
    }

    const Dataset& data() const { return *data_; }
    const PriorConfig& prior() const { return prior_; }
    std::size_t attributes() const { return k_; }
    ConstraintPolicy policy() const { return policy_; }
    std::span<const Pattern> candidates() const { return candidates_; }
    std::span<const QPriorSignal> signal() const { return signal_; }

    double row_log_prior(Pattern row, std::size_t j, std::size_t t, double theta, double lambda) const {
        if (!prior_.text_prior) return log_prior_q_row_bernoulli(row, k_, theta);
        return log_prior_q_row(row, j, k_, theta, lambda, signal_[t]);
    }

    double q_log_prior(const QMatrix& q, std::size_t t, double theta, double lambda) const {
        if (!prior_.text_prior) return log_prior_q_bernoulli(q, theta);
        return log_prior_q(q, theta, lambda, signal_[t]);
    }

private:
    const Dataset* data_;
    PriorConfig prior_;
    std::vector<QPriorSignal> signal_;
    std::size_t k_;
    ConstraintPolicy policy_;
    std::vector<Pattern> candidates_;
};

// ---------------------------------------------------------------------------
// Q rows

// Log-likelihood of item j at time t for every candidate requirement pattern,
// from counts of correct/incorrect answers per mastery profile.
inline std::vector<double> item_log_likelihoods(std::size_t j, std::size_t t, const ChainState& state,
                                                const Posterior& post, std::span<const Pattern> patterns) {
    const Dataset& data = post.data();
    const std::size_t n_profiles = std::size_t{1} << post.attributes();
    std::vector<double> correct(n_profiles, 0.0), wrong(n_profiles, 0.0);
    for (std::size_t i = 0; i < data.learners(); ++i) {
        const Pattern a = state.alpha.profile(i, t);
        (data.y(i, j, t) ? correct : wrong)[a] += 1.0;
    }
    const double g = state.items[t].g[j];
    const double s = state.items[t].s[j];
    const double log_hit = std::log1p(-s), log_slip = std::log(s);
    const double log_guess = std::log(g), log_miss = std::log1p(-g);
    std::vector<double> out;
    out.reserve(patterns.size());
    for (Pattern p : patterns) {
        double ll = 0.0;
        for (Pattern a = 0; a < n_profiles; ++a) {
            if (correct[a] == 0.0 && wrong[a] == 0.0) continue;
            if (covers(a, p)) {
                ll += correct[a] * log_hit + wrong[a] * log_slip;
            } else {
                ll += correct[a] * log_guess + wrong[a] * log_miss;
            }
        }
        out.push_back(ll);
    }
    return out;
}

// Unnormalised log full-conditional of row j at time t over candidates();
// -inf marks patterns that make Q inadmissible given the other rows.
inline std::vector<double> q_row_log_weights(std::size_t j, std::size_t t, const ChainState& state,
                                             const Posterior& post) {
    const auto cand = post.candidates();
    std::vector<double> w = item_log_likelihoods(j, t, state, post, cand);
    QMatrix q = state.q[t];
    for (std::size_t c = 0; c < cand.size(); ++c) {
        q.set_row(j, cand[c]);
        if (!admissible(q, post.policy())) {
            w[c] = kNegInf;
            continue;
        }
        w[c] += post.row_log_prior(cand[c], j, t, state.theta, state.lambda);
    }
    return w;
}

// Joint redraw of rows j1 and j2 used when no single pattern for row j1
// keeps Q admissible.
inline bool redraw_row_pair(std::size_t j1, std::size_t j2, std::size_t t, ChainState& state, const Posterior& post,
                            Stream& rng) {
    const auto cand = post.candidates();
    const auto ll1 = item_log_likelihoods(j1, t, state, post, cand);
    const auto ll2 = item_log_likelihoods(j2, t, state, post, cand);
    std::vector<double> w(cand.size() * cand.size(), kNegInf);
    QMatrix q = state.q[t];
    bool any = false;
    for (std::size_t a = 0; a < cand.size(); ++a) {
        for (std::size_t b = 0; b < cand.size(); ++b) {
            q.set_row(j1, cand[a]);
            q.set_row(j2, cand[b]);
            if (!admissible(q, post.policy())) continue;
            w[a * cand.size() + b] = ll1[a] + ll2[b] + post.row_log_prior(cand[a], j1, t, state.theta, state.lambda) +
                                     post.row_log_prior(cand[b], j2, t, state.theta, state.lambda);
            any = true;
        }
    }
    if (!any) return false;
    const std::size_t pick = sample_log_weights(w, rng);
    state.q[t].set_row(j1, cand[pick / cand.size()]);
    state.q[t].set_row(j2, cand[pick % cand.size()]);
    return true;
}

inline Pattern update_q_row(std::size_t j, std::size_t t, ChainState& state, const Posterior& post, Stream& rng) {
    const auto w = q_row_log_weights(j, t, state, post);
    if (std::any_of(w.begin(), w.end(), [](double x) { return std::isfinite(x); })) {
        const Pattern p = post.candidates()[sample_log_weights(w, rng)];
        state.q[t].set_row(j, p);
        return p;
    }
    const std::size_t n_items = state.q[t].items();
    if (n_items >= 2) {
        const std::size_t partner = j + 1 < n_items ? j + 1 : j - 1;
        if (redraw_row_pair(j, partner, t, state, post, rng)) return state.q[t].row(j);
    }
    throw ConstraintDeadlock("no admissible pattern for item " + std::to_string(j + 1) + " at time " +
                             std::to_string(t + 1));
}

// ---------------------------------------------------------------------------
// Attributes

inline double initial_linear(const StructuralParams& p, std::size_t k, std::span<const double> z) {
    return linear_predictor(p.beta0[k], p.beta_z_row(k), z);
}

inline double gain_linear(const StructuralParams& p, std::size_t k, std::span<const double> z) {
    const auto g = p.gamma01_row(k);
    return linear_predictor(g[0], g.subspan(1), z);
}

inline double loss_linear(const StructuralParams& p, std::size_t k, std::span<const double> z) {
    const auto g = p.gamma10_row(k);
    return linear_predictor(g[0], g.subspan(1), z);
}

// log P(alpha_t = to | alpha_{t-1} = from) for one attribute.
inline double log_transition(int from, int to, double gain_eta, double loss_eta) {
    if (from == 0) return to ? log_sigmoid(gain_eta) : log1m_sigmoid(gain_eta);
    return to ? log1m_sigmoid(loss_eta) : log_sigmoid(loss_eta);
}

// Log-odds of alpha_ikt = 1 versus 0 given everything else.
inline double alpha_log_odds(std::size_t i, std::size_t k, std::size_t t, const ChainState& state,
                             const Posterior& post) {
    const Dataset& data = post.data();
    const std::size_t K = post.attributes();
    const Pattern bit = attribute_bit(k, K);
    const Pattern on = state.alpha.profile(i, t) | bit;
    const Pattern off = on & ~bit;
    const QMatrix& q = state.q[t];
    const ItemParams& ip = state.items[t];
    const auto y = data.responses(i, t);

    double lo = 0.0;
    for (std::size_t j = 0; j < data.items(); ++j) {
        const Pattern req = q.row(j);
        if (!(req & bit)) continue;
        const bool eta_on = covers(on, req);
        const bool eta_off = covers(off, req);
        if (eta_on == eta_off) continue;
        // eta_on is 1 and eta_off is 0 here.
        lo += y[j] ? std::log1p(-ip.s[j]) - std::log(ip.g[j]) : std::log(ip.s[j]) - std::log1p(-ip.g[j]);
    }

    const auto z = data.z(i);
    const StructuralParams& p = state.coeffs;
    if (t == 0) {
        const double e = initial_linear(p, k, z);
        lo += log_sigmoid(e) - log1m_sigmoid(e);
    } else {
        const int prev = state.alpha.at(i, k, t - 1);
        const double ge = gain_linear(p, k, z), le = loss_linear(p, k, z);
        lo += log_transition(prev, 1, ge, le) - log_transition(prev, 0, ge, le);
    }
    if (t + 1 < data.times()) {
        const int next = state.alpha.at(i, k, t + 1);
        const double ge = gain_linear(p, k, z), le = loss_linear(p, k, z);
        lo += log_transition(1, next, ge, le) - log_transition(0, next, ge, le);
    }
    return lo;
}

inline int update_alpha(std::size_t i, std::size_t k, std::size_t t, ChainState& state, const Posterior& post,
                        Stream& rng) {
    const int v = rng.uniform() < sigmoid(alpha_log_odds(i, k, t, state, post)) ? 1 : 0;
    state.alpha.set(i, k, t, v);
    return v;
}

// ---------------------------------------------------------------------------
// Item parameters

struct ItemCounts {
    double eta0_correct = 0, eta0_wrong = 0, eta1_correct = 0, eta1_wrong = 0;
};

inline ItemCounts item_counts(std::size_t j, std::size_t t, const ChainState& state, const Dataset& data) {
    ItemCounts c;
    const Pattern req = state.q[t].row(j);
    for (std::size_t i = 0; i < data.learners(); ++i) {
        const bool eta = covers(state.alpha.profile(i, t), req);
        const bool y = data.y(i, j, t) != 0;
        if (eta) {
            (y ? c.eta1_correct : c.eta1_wrong) += 1.0;
        } else {
            (y ? c.eta0_correct : c.eta0_wrong) += 1.0;
        }
    }
    return c;
}

inline double clamp_open_unit(double x) { return std::clamp(x, 1e-12, 1.0 - 1e-12); }

// g ~ Beta(a + #(eta=0,Y=1), b + #(eta=0,Y=0)), s ~ Beta(a + #(eta=1,Y=0), b + #(eta=1,Y=1)).
inline void update_item_params(std::size_t j, std::size_t t, ChainState& state, const Posterior& post, Stream& rng) {
    const ItemCounts c = item_counts(j, t, state, post.data());
    const BetaShape pr = post.prior().gs_prior;
    state.items[t].g[j] = clamp_open_unit(rng.beta(pr.a + c.eta0_correct, pr.b + c.eta0_wrong));
    state.items[t].s[j] = clamp_open_unit(rng.beta(pr.a + c.eta1_wrong, pr.b + c.eta1_correct));
}

// ---------------------------------------------------------------------------
// Structural coefficients

// Random-walk Metropolis block with Robbins-Monro step adaptation.
struct MetropolisBlock {
    std::string name;
    double log_step = 0.0;
    std::size_t attempts = 0;
    std::size_t accepted = 0;
    std::size_t kept_attempts = 0;
    std::size_t kept_accepted = 0;
    bool adaptive = true;

    double step() const { return std::exp(log_step); }

    void record(bool accept, bool adapting, const SamplerConfig& cfg) {
        ++attempts;
        if (accept) ++accepted;
        if (adapting) {
            if (!adaptive) return;
            const double gain = 1.0 / std::pow(1.0 + static_cast<double>(attempts) / static_cast<double>(cfg.adapt_window), 0.6);
            log_step += gain * ((accept ? 1.0 : 0.0) - cfg.target_accept);
            log_step = std::clamp(log_step, -12.0, 5.0);
        } else {
            ++kept_attempts;
            if (accept) ++kept_accepted;
        }
    }

    double acceptance_rate() const {
        return kept_attempts ? static_cast<double>(kept_accepted) / static_cast<double>(kept_attempts) : 0.0;
    }
};

// Metropolis acceptance for a symmetric proposal: accept iff log u < log target ratio.
inline bool metropolis_accept(double log_ratio, Stream& rng) {
    if (std::isnan(log_ratio)) return false;
    if (log_ratio >= 0.0) {
        rng.uniform();  // keep stream consumption independent of the outcome
        return true;
    }
    return std::log(rng.uniform()) < log_ratio;
}

// Log target of the initial-mastery regression for attribute k.
inline double beta_log_target(std::size_t k, double b0, std::span<const double> bz, const ChainState& state,
                              const Posterior& post) {
    const Dataset& data = post.data();
    const PriorConfig& pr = post.prior();
    double lp = log_normal_pdf(b0, 0.0, pr.coeff_sd);
    for (double b : bz) lp += log_normal_pdf(b, 0.0, pr.coeff_sd);
    for (std::size_t i = 0; i < data.learners(); ++i) {
        const double e = linear_predictor(b0, bz, data.z(i));
        lp += state.alpha.at(i, k, 0) ? log_sigmoid(e) : log1m_sigmoid(e);
    }
    return lp;
}

// Log target of the gain (or loss) regression for attribute k: the prior
// times the Bernoulli likelihood of every transition opportunity.
inline double gamma_log_target(std::size_t k, Transition dir, std::span<const double> coef, const ChainState& state,
                               const Posterior& post) {
    const Dataset& data = post.data();
    const PriorConfig& pr = post.prior();
    double lp = 0.0;
    for (std::size_t c = 0; c < coef.size(); ++c) {
        const double mean = dir == Transition::Loss ? pr.gamma10_mean(c) : 0.0;
        lp += log_normal_pdf(coef[c], mean, pr.coeff_sd);
    }
    const int from = dir == Transition::Gain ? 0 : 1;
    for (std::size_t t = 1; t < data.times(); ++t) {
        for (std::size_t i = 0; i < data.learners(); ++i) {
            if (state.alpha.at(i, k, t - 1) != from) continue;
            const double e = linear_predictor(coef[0], coef.subspan(1), data.z(i));
            const bool event = (state.alpha.at(i, k, t) != from);
            lp += event ? log_sigmoid(e) : log1m_sigmoid(e);
        }
    }
    return lp;
}

inline bool update_beta(std::size_t k, ChainState& state, const Posterior& post, Stream& rng, double step) {
    StructuralParams& p = state.coeffs;
    const double cur = beta_log_target(k, p.beta0[k], p.beta_z_row(k), state, post);
    const double b0 = p.beta0[k] + step * rng.normal();
    std::vector<double> bz(p.beta_z_row(k).begin(), p.beta_z_row(k).end());
    for (auto& b : bz) b += step * rng.normal();
    const double prop = beta_log_target(k, b0, bz, state, post);
    if (!metropolis_accept(prop - cur, rng)) return false;
    p.beta0[k] = b0;
    std::copy(bz.begin(), bz.end(), p.beta_z_row(k).begin());
    return true;
}

inline bool update_gamma(std::size_t k, Transition dir, ChainState& state, const Posterior& post, Stream& rng,
                         double step) {
    auto row = dir == Transition::Gain ? state.coeffs.gamma01_row(k) : state.coeffs.gamma10_row(k);
    const double cur = gamma_log_target(k, dir, row, state, post);
    std::vector<double> prop(row.begin(), row.end());
    for (auto& c : prop) c += step * rng.normal();
    const double lp = gamma_log_target(k, dir, prop, state, post);
    if (!metropolis_accept(lp - cur, rng)) return false;
    std::copy(prop.begin(), prop.end(), row.begin());
    return true;
}

// ---------------------------------------------------------------------------
// theta and lambda

inline double hyper_log_target(double logit_theta, double lambda, const ChainState& state, const Posterior& post) {
    const double theta = sigmoid(logit_theta);
    if (!(theta > 0.0 && theta < 1.0)) return kNegInf;
    const PriorConfig& pr = post.prior();
    // Beta density on theta plus the log-Jacobian of the logit transform.
    double lp = log_prior_theta(theta, pr) + std::log(theta) + std::log1p(-theta);
    if (pr.lambda_enabled) lp += log_prior_lambda(lambda, pr);
    for (std::size_t t = 0; t < state.q.size(); ++t) lp += post.q_log_prior(state.q[t], t, theta, lambda);
    return lp;
}

inline bool update_theta_lambda(ChainState& state, const Posterior& post, Stream& rng, double step) {
    const double lt = logit(state.theta);
    const double cur = hyper_log_target(lt, state.lambda, state, post);
    const double lt_new = lt + step * rng.normal();
    const double lambda_new = post.prior().lambda_enabled ? state.lambda + step * rng.normal() : state.lambda;
    const double prop = hyper_log_target(lt_new, lambda_new, state, post);
    if (!metropolis_accept(prop - cur, rng)) return false;
    state.theta = sigmoid(lt_new);
    state.lambda = lambda_new;
    return true;
}

// ---------------------------------------------------------------------------
// Label swap

// Structural log-density terms that involve the attributes at time t.
inline double structural_terms_at(std::size_t t, const AttributeState& alpha, const StructuralParams& p,
                                  const Dataset& data) {
    const std::size_t K = alpha.attributes(), T = alpha.times();
    double lp = 0.0;
    for (std::size_t i = 0; i < alpha.learners(); ++i) {
        const auto z = data.z(i);
        for (std::size_t k = 0; k < K; ++k) {
            if (t == 0) {
                const double e = initial_linear(p, k, z);
                lp += alpha.at(i, k, 0) ? log_sigmoid(e) : log1m_sigmoid(e);
            }
            if (t > 0 || t + 1 < T) {
                const double ge = gain_linear(p, k, z), le = loss_linear(p, k, z);
                if (t > 0) lp += log_transition(alpha.at(i, k, t - 1), alpha.at(i, k, t), ge, le);
                if (t + 1 < T) lp += log_transition(alpha.at(i, k, t), alpha.at(i, k, t + 1), ge, le);
            }
        }
    }
    return lp;
}

// Unnormalised log posterior of a chain state.
inline double log_joint(const ChainState& state, const Posterior& post, bool item_params_sampled) {
    const Dataset& data = post.data();
    const PriorConfig& pr = post.prior();
    const std::size_t K = state.alpha.attributes(), T = state.alpha.times();
    double lp = log_likelihood(data, state.q, state.items, state.alpha);
    for (std::size_t i = 0; i < state.alpha.learners(); ++i) {
        const auto z = data.z(i);
        for (std::size_t k = 0; k < K; ++k) {
            const double e = initial_linear(state.coeffs, k, z);
            lp += state.alpha.at(i, k, 0) ? log_sigmoid(e) : log1m_sigmoid(e);
            if (T < 2) continue;
            const double ge = gain_linear(state.coeffs, k, z), le = loss_linear(state.coeffs, k, z);
            for (std::size_t t = 1; t < T; ++t) {
                lp += log_transition(state.alpha.at(i, k, t - 1), state.alpha.at(i, k, t), ge, le);
            }
        }
    }
    for (std::size_t t = 0; t < T; ++t) lp += post.q_log_prior(state.q[t], t, state.theta, state.lambda);
    lp += log_prior_coeffs(state.coeffs, pr) + log_prior_theta(state.theta, pr);
    if (pr.text_prior && pr.lambda_enabled) lp += log_prior_lambda(state.lambda, pr);
    if (item_params_sampled) {
        for (const auto& ip : state.items) lp += log_prior_item_params(ip, pr);
    }
    return lp;
}

// Proposes exchanging attributes a and b in Q_t and in every profile at time
// t. The response likelihood and the admissible set are invariant under the
// exchange, so only the structural and Q-prior terms enter the ratio. Without
// this move a chain can settle with the labels at one time point permuted
// relative to the others.
inline bool update_label_swap(std::size_t t, ChainState& state, const Posterior& post, Stream& rng) {
    const std::size_t K = post.attributes();
    if (K < 2) return false;
    const std::size_t a = rng.below(static_cast<std::uint32_t>(K));
    std::size_t b = rng.below(static_cast<std::uint32_t>(K - 1));
    if (b >= a) ++b;
    std::vector<std::size_t> perm(K);
    std::iota(perm.begin(), perm.end(), 0);
    std::swap(perm[a], perm[b]);

    AttributeState prop = state.alpha;
    for (std::size_t i = 0; i < prop.learners(); ++i) prop.set_profile(i, t, permute_pattern(prop.profile(i, t), perm));
    QMatrix q_prop = permute_q(state.q[t], perm);
    const Dataset& data = post.data();
    const double log_ratio = structural_terms_at(t, prop, state.coeffs, data) -
                             structural_terms_at(t, state.alpha, state.coeffs, data) +
                             post.q_log_prior(q_prop, t, state.theta, state.lambda) -
                             post.q_log_prior(state.q[t], t, state.theta, state.lambda);
    if (!metropolis_accept(log_ratio, rng)) return false;
    state.alpha = std::move(prop);
    state.q[t] = std::move(q_prop);
    return true;
}

// Burn-in only: relabels (Q_t, alpha_t) for t >= 2 so that alpha_t agrees
// with alpha_{t-1} as often as possible. Exhaustive for small K, greedy
// otherwise. Returns the number of time points relabelled.
inline std::size_t align_time_labels(ChainState& state) {
    const std::size_t K = state.alpha.attributes(), T = state.alpha.times(), N = state.alpha.learners();
    if (K < 2 || T < 2) return 0;
    std::size_t changed = 0;
    for (std::size_t t = 1; t < T; ++t) {
        // agree[a][b]: learners whose attribute a at t equals attribute b at t - 1.
        std::vector<std::vector<std::size_t>> agree(K, std::vector<std::size_t>(K, 0));
        for (std::size_t i = 0; i < N; ++i) {
            const Pattern now = state.alpha.profile(i, t), before = state.alpha.profile(i, t - 1);
            for (std::size_t a = 0; a < K; ++a) {
                for (std::size_t b = 0; b < K; ++b) agree[a][b] += has_attribute(now, a, K) == has_attribute(before, b, K);
            }
        }
        auto score = [&](const std::vector<std::size_t>& perm) {
            std::size_t s = 0;
            for (std::size_t a = 0; a < K; ++a) s += agree[a][perm[a]];
            return s;
        };
        std::vector<std::size_t> best(K);
        std::iota(best.begin(), best.end(), 0);
        if (K <= kMaxAlignAttributes) {
            // Strict improvement keeps the identity on ties.
            std::size_t best_score = score(best);
            for (const auto& perm : all_permutations(K)) {
                if (const std::size_t s = score(perm); s > best_score) {
                    best = perm;
                    best_score = s;
                }
            }
        } else {
            std::vector<bool> used_a(K, false), used_b(K, false);
            for (std::size_t step = 0; step < K; ++step) {
                std::size_t ba = K, bb = K, top = 0;
                for (std::size_t a = 0; a < K; ++a) {
                    for (std::size_t b = 0; b < K; ++b) {
                        if (used_a[a] || used_b[b]) continue;
                        if (ba == K || agree[a][b] > top || (agree[a][b] == top && a == b)) {
                            ba = a;
                            bb = b;
                            top = agree[a][b];
                        }
                    }
                }
                best[ba] = bb;
                used_a[ba] = used_b[bb] = true;
            }
        }
        if (is_identity(best)) continue;
        for (std::size_t i = 0; i < N; ++i) state.alpha.set_profile(i, t, permute_pattern(state.alpha.profile(i, t), best));
        state.q[t] = permute_q(state.q[t], best);
        ++changed;
    }
    return changed;
}

// ---------------------------------------------------------------------------
// Chains

struct ChainReport {
    std::vector<MetropolisBlock> blocks;
};

struct ScalarDiagnostic {
    std::string name;
    std::optional<double> rhat;
    std::optional<double> ess;
    std::string note;  // set when a statistic is undefined (e.g. constant draws)
};

struct Diagnostics {
    std::vector<ScalarDiagnostic> scalars;
    std::vector<std::pair<std::string, double>> acceptance;  // block name (chain-averaged) -> kept-draw rate
    std::optional<double> max_rhat;
    std::optional<double> min_ess;
};

struct McmcResult {
    Draws draws;
    Diagnostics diagnostics;
    std::vector<ChainReport> chain_reports;
};

// Random admissible Q: rejection over uniform rows, then a constructed
// fallback (three stacked identities, shuffled) when rejection stalls.
inline QMatrix random_admissible_q(std::size_t n_items, std::size_t n_attributes, std::size_t time_index,
                                   ConstraintPolicy policy, Stream& rng) {
    const auto cand = enumerate_candidate_rows(n_attributes);
    QMatrix q(n_items, n_attributes, time_index);
    for (int attempt = 0; attempt < 20000; ++attempt) {
        for (std::size_t j = 0; j < n_items; ++j) q.set_row(j, cand[rng.below(static_cast<std::uint32_t>(cand.size()))]);
        if (admissible(q, policy)) return q;
    }
    const std::size_t copies = policy == ConstraintPolicy::Strict ? 3 : 2;
    if (n_items < copies * n_attributes) {
        throw ConfigError("no admissible Q-matrix with J=" + std::to_string(n_items) + " and K=" +
                          std::to_string(n_attributes));
    }
    std::vector<Pattern> rows;
    for (std::size_t c = 0; c < copies; ++c) {
        for (std::size_t k = 0; k < n_attributes; ++k) rows.push_back(attribute_bit(k, n_attributes));
    }
    while (rows.size() < n_items) rows.push_back(cand[rng.below(static_cast<std::uint32_t>(cand.size()))]);
    for (std::size_t j = rows.size(); j > 1; --j) std::swap(rows[j - 1], rows[rng.below(static_cast<std::uint32_t>(j))]);
    q = QMatrix::from_patterns(rows, n_attributes, time_index);
    if (!admissible(q, policy)) throw ConfigError("failed to construct an admissible Q-matrix");
    return q;
}

// Stream key of pilot `start`; start 0 uses the plain fit key.
inline std::uint64_t start_key(std::uint64_t seed, std::size_t start) {
    const std::uint64_t key = derive_key(seed, stream_tag::kFit);
    return start == 0 ? key : derive_key(key, start);
}

inline ChainState initial_state(std::size_t chain, const Posterior& post, const SamplerConfig& cfg,
                                std::uint64_t key) {
    const Dataset& data = post.data();
    const PriorConfig& pr = post.prior();
    const std::size_t K = post.attributes();
    const std::size_t T = data.times(), J = data.items();
    const auto unit = static_cast<std::uint32_t>(chain);

    ChainState st;
    st.rng_seed = cfg.seed;

    Stream q_rng(key, unit, 0, kBlockQ);
    for (std::size_t t = 0; t < T; ++t) st.q.push_back(random_admissible_q(J, K, t + 1, post.policy(), q_rng));

    Stream item_rng(key, unit, 0, kBlockItems);
    if (cfg.fixed_item_params) {
        st.items = *cfg.fixed_item_params;
        if (st.items.size() != T) throw DimensionError("fixed item parameters need one set per time");
        for (const auto& ip : st.items) {
            if (ip.items() != J) throw DimensionError("fixed item parameters need J entries");
            ip.validate();
        }
    } else {
        for (std::size_t t = 0; t < T; ++t) {
            ItemParams ip;
            ip.time_index = t + 1;
            for (std::size_t j = 0; j < J; ++j) {
                ip.g.push_back(clamp_open_unit(item_rng.uniform(pr.gs_init_lo, pr.gs_init_hi)));
                ip.s.push_back(clamp_open_unit(item_rng.uniform(pr.gs_init_lo, pr.gs_init_hi)));
            }
            st.items.push_back(std::move(ip));
        }
    }

    // Attribute k mastered at t when at least half of the items requiring it
    // under the initial Q were answered correctly.
    st.alpha = AttributeState(data.learners(), K, T);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t i = 0; i < data.learners(); ++i) {
            const auto y = data.responses(i, t);
            for (std::size_t k = 0; k < K; ++k) {
                double right = 0, total = 0;
                for (std::size_t j = 0; j < J; ++j) {
                    if (!has_attribute(st.q[t].row(j), k, K)) continue;
                    total += 1;
                    right += y[j];
                }
                st.alpha.set(i, k, t, total > 0 && right >= 0.5 * total ? 1 : 0);
            }
        }
    }

    Stream coef_rng(key, unit, 0, kBlockBeta);
    st.coeffs = StructuralParams(K, data.covariates());
    for (auto& b : st.coeffs.beta0) b = coef_rng.normal(0.0, pr.coeff_sd);
    for (auto& b : st.coeffs.beta_z) b = coef_rng.normal(0.0, pr.coeff_sd);
    for (auto& g : st.coeffs.gamma01) g = coef_rng.normal(0.0, pr.coeff_sd);
    const std::size_t w = data.covariates() + 1;
    for (std::size_t i = 0; i < st.coeffs.gamma10.size(); ++i) {
        st.coeffs.gamma10[i] = coef_rng.normal(pr.gamma10_mean(i % w), pr.coeff_sd);
    }

    st.theta = pr.theta_hyper.a / (pr.theta_hyper.a + pr.theta_hyper.b);
    st.lambda = pr.text_prior && !pr.lambda_enabled ? pr.pinned_lambda : 0.0;
    return st;
}

class Chain {
public:
    Chain(std::size_t index, const Posterior& post, const SamplerConfig& cfg, std::size_t start = 0)
        : index_(index),
          post_(&post),
          cfg_(&cfg),
          key_(start_key(cfg.seed, start)),
          state_(initial_state(index, post, cfg, key_)) {
        const std::size_t K = post.attributes();
        const double coeff_step = std::log(cfg.rw_step_coeffs);
        for (std::size_t k = 0; k < K; ++k) blocks_.push_back({"beta[" + std::to_string(k + 1) + "]", coeff_step});
        if (post.data().times() > 1) {
            for (std::size_t k = 0; k < K; ++k) blocks_.push_back({"gamma01[" + std::to_string(k + 1) + "]", coeff_step});
            for (std::size_t k = 0; k < K; ++k) blocks_.push_back({"gamma10[" + std::to_string(k + 1) + "]", coeff_step});
        }
        blocks_.push_back({"theta_lambda", std::log(cfg.rw_step_hyper)});
        for (std::size_t t = 0; t < post.data().times(); ++t) {
            blocks_.push_back({"label_swap[" + std::to_string(t + 1) + "]"});
            blocks_.back().adaptive = false;
        }
    }

    const ChainState& state() const { return state_; }
    ChainState& state() { return state_; }
    const std::vector<MetropolisBlock>& blocks() const { return blocks_; }
    std::size_t swap_block(std::size_t t) const { return blocks_.size() - post_->data().times() + t; }

    void step(std::size_t it) {
        try {
            sweep(static_cast<std::uint32_t>(it), it <= cfg_->n_burnin);
        } catch (const ConstraintDeadlock& e) {
            throw ConstraintDeadlock("chain " + std::to_string(index_ + 1) + ", iteration " + std::to_string(it) +
                                     ": " + e.what());
        }
        if (cfg_->align_time_labels && 2 * it <= cfg_->n_burnin && it % cfg_->adapt_window == 0) {
            align_time_labels(state_);
        }
    }

    void sweep(std::uint32_t sweep_index, bool adapting) {
        const Dataset& data = post_->data();
        const std::size_t K = post_->attributes();
        const std::size_t T = data.times(), J = data.items(), N = data.learners();
        const std::uint64_t key = key_;
        const auto unit = static_cast<std::uint32_t>(index_);

        Stream alpha_rng(key, unit, sweep_index, kBlockAlpha);
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t i = 0; i < N; ++i) {
                for (std::size_t k = 0; k < K; ++k) update_alpha(i, k, t, state_, *post_, alpha_rng);
            }
        }

        Stream q_rng(key, unit, sweep_index, kBlockQ);
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t j = 0; j < J; ++j) update_q_row(j, t, state_, *post_, q_rng);
        }

        if (cfg_->label_swap) {
            Stream swap_rng(key, unit, sweep_index, kBlockLabelSwap);
            for (std::size_t t = 0; t < T; ++t) {
                blocks_[swap_block(t)].record(update_label_swap(t, state_, *post_, swap_rng), adapting, *cfg_);
            }
        }

        if (!cfg_->fixed_item_params) {
            Stream item_rng(key, unit, sweep_index, kBlockItems);
            for (std::size_t t = 0; t < T; ++t) {
                for (std::size_t j = 0; j < J; ++j) update_item_params(j, t, state_, *post_, item_rng);
            }
        }

        std::size_t b = 0;
        Stream beta_rng(key, unit, sweep_index, kBlockBeta);
        for (std::size_t k = 0; k < K; ++k, ++b) {
            blocks_[b].record(update_beta(k, state_, *post_, beta_rng, blocks_[b].step()), adapting, *cfg_);
        }
        if (T > 1) {
            Stream gamma_rng(key, unit, sweep_index, kBlockGamma);
            for (Transition dir : {Transition::Gain, Transition::Loss}) {
                for (std::size_t k = 0; k < K; ++k, ++b) {
                    blocks_[b].record(update_gamma(k, dir, state_, *post_, gamma_rng, blocks_[b].step()), adapting,
                                      *cfg_);
                }
            }
        }
        Stream hyper_rng(key, unit, sweep_index, kBlockHyper);
        blocks_[b].record(update_theta_lambda(state_, *post_, hyper_rng, blocks_[b].step()), adapting, *cfg_);
        state_.iteration = sweep_index;
    }

    void record(ChainDraws& out) const {
        const ChainState& s = state_;
        for (const auto& q : s.q) out.q.insert(out.q.end(), q.rows().begin(), q.rows().end());
        for (const auto& ip : s.items) {
            out.g.insert(out.g.end(), ip.g.begin(), ip.g.end());
            out.s.insert(out.s.end(), ip.s.begin(), ip.s.end());
        }
        out.beta0.insert(out.beta0.end(), s.coeffs.beta0.begin(), s.coeffs.beta0.end());
        out.beta_z.insert(out.beta_z.end(), s.coeffs.beta_z.begin(), s.coeffs.beta_z.end());
        out.gamma01.insert(out.gamma01.end(), s.coeffs.gamma01.begin(), s.coeffs.gamma01.end());
        out.gamma10.insert(out.gamma10.end(), s.coeffs.gamma10.begin(), s.coeffs.gamma10.end());
        out.theta.push_back(s.theta);
        out.lambda.push_back(s.lambda);
        const std::size_t N = s.alpha.learners(), K = s.alpha.attributes();
        if (out.alpha_count.empty()) out.alpha_count.assign(s.alpha.times() * N * K, 0);
        for (std::size_t t = 0; t < s.alpha.times(); ++t) {
            for (std::size_t i = 0; i < N; ++i) {
                const Pattern a = s.alpha.profile(i, t);
                for (std::size_t k = 0; k < K; ++k) out.alpha_count[(t * N + i) * K + k] += has_attribute(a, k, K) ? 1u : 0u;
            }
        }
        if (cfg_->store_alpha_draws) out.alpha.insert(out.alpha.end(), s.alpha.profiles().begin(), s.alpha.profiles().end());
        ++out.n_draws;
    }

    std::size_t pilot_length() const {
        return cfg_->n_starts > 1 ? std::min(cfg_->pilot_sweeps, cfg_->n_burnin / 2) : 0;
    }

    ChainDraws run() {
        ChainDraws out;
        out.relabel.resize(post_->attributes());
        std::iota(out.relabel.begin(), out.relabel.end(), 0);
        const std::size_t pilot = pilot_length();
        if (pilot > 0) {
            for (std::size_t it = 1; it <= pilot; ++it) step(it);
            double best = log_joint(state_, *post_, !cfg_->fixed_item_params);
            for (std::size_t start = 1; start < cfg_->n_starts; ++start) {
                Chain other(index_, *post_, *cfg_, start);
                for (std::size_t it = 1; it <= pilot; ++it) other.step(it);
                if (const double lp = log_joint(other.state_, *post_, !cfg_->fixed_item_params); lp > best) {
                    best = lp;
                    state_ = std::move(other.state_);
                    blocks_ = std::move(other.blocks_);
                }
            }
            // Later sweeps draw from this chain's own streams whichever pilot won.
        }
        const std::size_t total = cfg_->n_burnin + cfg_->n_keep * cfg_->thin;
        for (std::size_t it = pilot + 1; it <= total; ++it) {
            step(it);
            if (it > cfg_->n_burnin && (it - cfg_->n_burnin) % cfg_->thin == 0) record(out);
        }
        return out;
    }

private:
    std::size_t index_;
    const Posterior* post_;
    const SamplerConfig* cfg_;
    std::uint64_t key_;
    ChainState state_;
    std::vector<MetropolisBlock> blocks_;
};

// ---------------------------------------------------------------------------
// Monitored scalars and diagnostics

struct ScalarSeries {
    std::string name;
    diag::Chains chains;
};

inline std::vector<ScalarSeries> monitored_scalars(const Draws& draws, bool include_lambda) {
    const DrawDims& d = draws.dims;
    std::vector<ScalarSeries> out;
    auto add = [&](std::string name, auto&& getter) {
        ScalarSeries s{std::move(name), {}};
        for (std::size_t c = 0; c < draws.n_chains(); ++c) {
            std::vector<double> v(draws.chains[c].n_draws);
            for (std::size_t r = 0; r < v.size(); ++r) v[r] = getter(draws.chains[c], r);
            s.chains.push_back(std::move(v));
        }
        out.push_back(std::move(s));
    };
    const std::size_t TJ = d.n_times * d.n_items;
    for (std::size_t t = 0; t < d.n_times; ++t) {
        for (std::size_t j = 0; j < d.n_items; ++j) {
            const std::size_t off = t * d.n_items + j;
            const std::string tag = "[" + std::to_string(t + 1) + "," + std::to_string(j + 1) + "]";
            add("g" + tag, [=](const ChainDraws& ch, std::size_t r) { return ch.g[r * TJ + off]; });
            add("s" + tag, [=](const ChainDraws& ch, std::size_t r) { return ch.s[r * TJ + off]; });
        }
    }
    const std::size_t K = d.n_attributes, C = d.n_covariates, W = C + 1;
    for (std::size_t k = 0; k < K; ++k) {
        add("beta0[" + std::to_string(k + 1) + "]", [=](const ChainDraws& ch, std::size_t r) { return ch.beta0[r * K + k]; });
        for (std::size_t c = 0; c < C; ++c) {
            add("betaZ[" + std::to_string(k + 1) + "," + std::to_string(c + 1) + "]",
                [=](const ChainDraws& ch, std::size_t r) { return ch.beta_z[(r * K + k) * C + c]; });
        }
    }
    if (d.n_times > 1) {
        for (std::size_t k = 0; k < K; ++k) {
            for (std::size_t c = 0; c < W; ++c) {
                add("gamma01[" + std::to_string(k + 1) + "," + std::to_string(c) + "]",
                    [=](const ChainDraws& ch, std::size_t r) { return ch.gamma01[(r * K + k) * W + c]; });
            }
        }
        for (std::size_t k = 0; k < K; ++k) {
            for (std::size_t c = 0; c < W; ++c) {
                add("gamma10[" + std::to_string(k + 1) + "," + std::to_string(c) + "]",
                    [=](const ChainDraws& ch, std::size_t r) { return ch.gamma10[(r * K + k) * W + c]; });
            }
        }
    }
    add("theta", [](const ChainDraws& ch, std::size_t r) { return ch.theta[r]; });
    if (include_lambda) add("lambda", [](const ChainDraws& ch, std::size_t r) { return ch.lambda[r]; });
    return out;
}

inline Diagnostics compute_diagnostics(const Draws& draws, const std::vector<ChainReport>& reports,
                                       bool include_lambda, bool include_item_params = true) {
    Diagnostics out;
    if (draws.n_chains() >= 2 && draws.draws_per_chain() >= 4) {
        for (auto& series : monitored_scalars(draws, include_lambda)) {
            if (!include_item_params && (series.name.starts_with("g[") || series.name.starts_with("s["))) {
                continue;
            }
            ScalarDiagnostic sd{series.name, std::nullopt, std::nullopt, ""};
            try {
                sd.rhat = diag::rhat(series.chains);
                sd.ess = diag::ess_bulk(series.chains);
                out.max_rhat = std::max(out.max_rhat.value_or(0.0), *sd.rhat);
                out.min_ess = std::min(out.min_ess.value_or(std::numeric_limits<double>::infinity()), *sd.ess);
            } catch (const DiagnosticsError& e) {
                sd.note = e.what();
            }
            out.scalars.push_back(std::move(sd));
        }
    }
    if (!reports.empty()) {
        for (std::size_t b = 0; b < reports.front().blocks.size(); ++b) {
            double rate = 0.0;
            for (const auto& r : reports) rate += r.blocks[b].acceptance_rate();
            out.acceptance.emplace_back(reports.front().blocks[b].name, rate / static_cast<double>(reports.size()));
        }
    }
    return out;
}

// Relabels chains 1.. so that their attribute labels match chain 0.
inline void align_chains_to_first(Draws& draws) {
    if (draws.n_chains() < 2) return;
    const std::vector<std::size_t> first{0};
    const auto ref_q = map_q(draws, first);
    const auto ref_alpha = alpha_mode(draws, first);
    for (std::size_t c = 1; c < draws.n_chains(); ++c) {
        const std::vector<std::size_t> one{c};
        const auto est_q = map_q(draws, one);
        const auto est_alpha = alpha_mode(draws, one);
        const auto perm = best_permutation(est_q, ref_q, &est_alpha, &ref_alpha);
        if (!is_identity(perm)) relabel_chain(draws.chains[c], draws.dims, perm);
    }
}

inline McmcResult run_mcmc(const Dataset& data, std::vector<QPriorSignal> signal, std::size_t n_attributes,
                           const PriorConfig& prior, const SamplerConfig& cfg) {
    cfg.validate();
    if (data.learners() < 1 || data.items() < 1 || data.times() < 1) throw DataError("empty dataset");
    const Posterior post(data, prior, std::move(signal), n_attributes, cfg.constraint);

    std::vector<std::unique_ptr<Chain>> chains;
    for (std::size_t c = 0; c < cfg.n_chains; ++c) chains.push_back(std::make_unique<Chain>(c, post, cfg));

    McmcResult result;
    result.draws.dims = {data.learners(), data.items(), n_attributes, data.times(), data.covariates()};
    result.draws.chains.resize(cfg.n_chains);
    std::vector<std::exception_ptr> errors(cfg.n_chains);
    auto work = [&](std::size_t c) {
        try {
            result.draws.chains[c] = chains[c]->run();
        } catch (...) {
            errors[c] = std::current_exception();
        }
    };
    if (cfg.parallel_chains && cfg.n_chains > 1 && std::thread::hardware_concurrency() > 1) {
        std::vector<std::thread> pool;
        for (std::size_t c = 0; c < cfg.n_chains; ++c) pool.emplace_back(work, c);
        for (auto& th : pool) th.join();
    } else {
        for (std::size_t c = 0; c < cfg.n_chains; ++c) work(c);
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    for (const auto& ch : chains) result.chain_reports.push_back({ch->blocks()});

    if (cfg.align_chains) align_chains_to_first(result.draws);
    result.diagnostics = compute_diagnostics(result.draws, result.chain_reports,
                                             prior.text_prior && prior.lambda_enabled, !cfg.fixed_item_params);
    return result;
}

}  // namespace tdcdm
