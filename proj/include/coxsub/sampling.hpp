#pragma once

// Subsampling plans and with-replacement draws.

#include "coxsub/errors.hpp"
#include "coxsub/rng.hpp"
#include "coxsub/survival_data.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace coxsub {

enum class Method { Uniform, CenOpt, FullOpt };

inline std::string_view to_string(Method m) {
    switch (m) {
        case Method::Uniform: return "uniform";
        case Method::CenOpt: return "cenopt";
        case Method::FullOpt: return "fullopt";
    }
    return "?";
}

inline Method parse_method(std::string_view s) {
    if (s == "uniform") return Method::Uniform;
    if (s == "cenopt") return Method::CenOpt;
    if (s == "fullopt") return Method::FullOpt;
    throw Error("unknown subsampling method '" + std::string(s) + "'");
}

/**
 * Per-record sampling probabilities (original record order).
 *
 * When `stratified` is set, draws are split between the failure and
 * censored strata in proportion to the event rate and each stratum is
 * sampled from its conditional distribution pi_i / stratum mass.
 */
struct SubsamplingPlan {
    Method method = Method::Uniform;
    Eigen::VectorXd probs;
    bool stratified = false;
    double event_rate = 0.0;  // delta-bar
    std::vector<Index> s0;    // censored records
    std::vector<Index> s1;    // failures
    std::vector<std::string> warnings;

    Index size() const noexcept { return probs.size(); }
};

struct Subsample {
    std::vector<Index> indices;       // original record indices, with repetition
    std::vector<double> probs_at_draw;
    Index r = 0;
    Index source_n = 0;
    std::uint64_t seed = 0;
};

/**
 * Walker/Vose alias table over the strictly positive entries of a weight
 * vector. O(n) setup, O(1) per draw; zero-weight entries are never drawn.
 */
class AliasTable {
public:
    AliasTable() = default;

    /// `items[j]` is the value returned when slot j is chosen.
    AliasTable(std::span<const double> weights, std::span<const Index> items) {
        long double total = 0.0L;
        for (std::size_t j = 0; j < weights.size(); ++j) {
            if (weights[j] > 0.0) {
                total += weights[j];
                items_.push_back(items[j]);
                scaled_.push_back(weights[j]);
            }
        }
        const std::size_t m = items_.size();
        if (m == 0) throw Error("alias table: no positive weight");
        alias_.assign(m, 0);
        std::vector<std::size_t> small, large;
        for (std::size_t j = 0; j < m; ++j) {
            scaled_[j] = static_cast<double>(static_cast<long double>(scaled_[j]) * m / total);
            (scaled_[j] < 1.0 ? small : large).push_back(j);
        }
        while (!small.empty() && !large.empty()) {
            const std::size_t s = small.back();
            small.pop_back();
            const std::size_t l = large.back();
            alias_[s] = l;
            scaled_[l] = (scaled_[l] + scaled_[s]) - 1.0;
            if (scaled_[l] < 1.0) {
                large.pop_back();
                small.push_back(l);
            }
        }
        for (auto j : large) scaled_[j] = 1.0;
        for (auto j : small) scaled_[j] = 1.0;  // numerical leftovers
    }

    Index draw(Rng& rng) const {
        const auto j = static_cast<std::size_t>(rng.below(items_.size()));
        return rng.uniform() < scaled_[j] ? items_[j] : items_[alias_[j]];
    }

    std::size_t size() const noexcept { return items_.size(); }

private:
    std::vector<Index> items_;
    std::vector<double> scaled_;
    std::vector<std::size_t> alias_;
};

/// Number of failure-stratum draws: round(r * delta-bar), halves rounded up.
inline Index stratum_event_draws(Index r, double event_rate) {
    return static_cast<Index>(std::floor(static_cast<double>(r) * event_rate + 0.5));
}

/**
 * Draws r indices with replacement from the plan. Stratified plans draw
 * round(r * delta-bar) failures and the remainder from the censored
 * stratum, failures first.
 */
inline Subsample draw_subsample(const SubsamplingPlan& plan, Index r, Rng& rng) {
    if (r < 1) throw Error("subsample size must be at least 1");
    if (plan.probs.size() == 0) throw Error("empty subsampling plan");
    Subsample out;
    out.r = r;
    out.source_n = plan.probs.size();
    out.seed = rng.seed();
    out.indices.reserve(static_cast<std::size_t>(r));
    out.probs_at_draw.reserve(static_cast<std::size_t>(r));

    auto take = [&](const AliasTable& table, Index count) {
        for (Index k = 0; k < count; ++k) {
            const Index i = table.draw(rng);
            out.indices.push_back(i);
            out.probs_at_draw.push_back(plan.probs(i));
        }
    };
    auto stratum_table = [&](const std::vector<Index>& members) {
        std::vector<double> w(members.size());
        for (std::size_t j = 0; j < members.size(); ++j) w[j] = plan.probs(members[j]);
        return AliasTable(w, members);
    };

    if (plan.stratified) {
        Index n1 = stratum_event_draws(r, plan.event_rate);
        if (plan.s0.empty()) n1 = r;
        if (plan.s1.empty()) n1 = 0;
        const Index n0 = r - n1;
        if (n1 > 0) take(stratum_table(plan.s1), n1);
        if (n0 > 0) take(stratum_table(plan.s0), n0);
    } else {
        std::vector<Index> all(static_cast<std::size_t>(plan.probs.size()));
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<Index>(i);
        take(AliasTable(std::span<const double>(plan.probs.data(), all.size()), all), r);
    }
    return out;
}

}  // namespace coxsub
