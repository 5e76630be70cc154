#pragma once

// Counter-based random streams.
//
// Engine: Philox4x32-10 (Salmon et al., SC'11). A stream is addressed by a
// 64-bit key and a three-word counter prefix (unit, sweep, block); the fourth
// counter word advances inside the stream. Two streams with different
// addresses never share a counter block, so chains, sweeps and update blocks
// draw from disjoint sequences and any of them can be regenerated in
// isolation. Stream layout used by the sampler:
//
//   key   = derive_key(seed, tag)
//   c3    = unit   (chain index, replication index, ...)
//   c2    = sweep  (0 = initialisation, 1.. = MCMC sweeps)
//   c1    = block  (update block within a sweep, see sampler.hpp)
//   c0    = running counter within the stream
//
// Continuous and discrete variates use Boost.Random distribution code run on
// top of this engine, so results do not depend on the standard library
// implementation.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include <boost/random/beta_distribution.hpp>
#include <boost/random/gamma_distribution.hpp>
#include <boost/random/normal_distribution.hpp>

#include "tdcdm/error.hpp"

namespace tdcdm {

using Counter = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

inline Counter philox4x32_10(Counter ctr, Key key) {
    constexpr std::uint32_t kMul0 = 0xD2511F53u;
    constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
        const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
        const auto lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
        const auto lo1 = static_cast<std::uint32_t>(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += kWeyl0;
        key[1] += kWeyl1;
    }
    return ctr;
}

// SplitMix64 finaliser; used only to derive keys from (seed, tag) pairs.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_key(std::uint64_t seed, std::uint64_t tag) {
    return mix64(mix64(seed) ^ mix64(tag + 0x632BE59BD9B4E019ull));
}

// Well-known tags for derive_key.
namespace stream_tag {
inline constexpr std::uint64_t kFit = 1;
inline constexpr std::uint64_t kSimulate = 2;
inline constexpr std::uint64_t kBootstrap = 3;
inline constexpr std::uint64_t kTruth = 4;
}  // namespace stream_tag

class Stream {
public:
    using result_type = std::uint32_t;

    Stream(std::uint64_t key, std::uint32_t unit, std::uint32_t sweep, std::uint32_t block)
        : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)},
          ctr_{0, block, sweep, unit} {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        if (pos_ == 4) {
            if (blocks_ == (std::uint64_t{1} << 32)) throw CapacityError("random stream exhausted");
            buf_ = philox4x32_10(ctr_, key_);
            ++ctr_[0];
            ++blocks_;
            pos_ = 0;
        }
        return buf_[pos_++];
    }

    // Uniform on the open interval (0, 1) with 53 bits of resolution.
    double uniform() {
        const std::uint64_t hi = (*this)() >> 5;  // 27 bits
        const std::uint64_t lo = (*this)() >> 6;  // 26 bits
        const std::uint64_t bits = (hi << 26) | lo;
        return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal(double mean = 0.0, double sd = 1.0) {
        boost::random::normal_distribution<double> dist(mean, sd);
        return dist(*this);
    }

    double beta(double a, double b) {
        boost::random::beta_distribution<double> dist(a, b);
        return dist(*this);
    }

    double gamma(double shape, double scale = 1.0) {
        boost::random::gamma_distribution<double> dist(shape, scale);
        return dist(*this);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Uniform integer in [0, n) by rejection on 32-bit words.
    std::uint32_t below(std::uint32_t n) {
        const std::uint32_t limit = max() - (max() % n + 1) % n;
        std::uint32_t x = (*this)();
        while (x > limit) x = (*this)();
        return x % n;
    }

private:
    Key key_;
    Counter ctr_;
    Counter buf_{};
    int pos_ = 4;
    std::uint64_t blocks_ = 0;
};

// Draws an index from unnormalised log-weights. Entries equal to -inf have
// zero probability. Throws DomainError if every weight is -inf.
inline std::size_t sample_log_weights(std::span<const double> log_w, Stream& rng) {
    double top = -std::numeric_limits<double>::infinity();
    for (double w : log_w) top = std::max(top, w);
    if (!std::isfinite(top)) throw DomainError("all candidate weights are zero");
    std::vector<double> cum(log_w.size());
    double total = 0.0;
    for (std::size_t i = 0; i < log_w.size(); ++i) {
        total += std::isfinite(log_w[i]) ? std::exp(log_w[i] - top) : 0.0;
        cum[i] = total;
    }
    const double u = rng.uniform() * total;
    for (std::size_t i = 0; i < cum.size(); ++i) {
        if (u < cum[i]) return i;
    }
    // u rounds up to total only in the last ulp; return the last live entry.
    for (std::size_t i = log_w.size(); i-- > 0;) {
        if (std::isfinite(log_w[i])) return i;
    }
    return log_w.size() - 1;
}

}  // namespace tdcdm
