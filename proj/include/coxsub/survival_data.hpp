#pragma once

// Right-censored survival data: records, cohorts and the time-sorted
// representation consumed by every estimator.

#include "coxsub/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace coxsub {

using Index = Eigen::Index;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// One observation: covariates Z, observed time X = min(T, C) and the
/// event indicator (1 = failure observed, 0 = censored).
struct SurvivalRecord {
    Eigen::VectorXd covariates;
    double time = 0.0;
    int status = 0;
};

/**
 * Column-oriented collection of records sharing one covariate dimension.
 *
 * Row i of `z` holds the covariates of record i. Construct through
 * `Cohort::make` or `Cohort::from_records` to get validation.
 */
struct Cohort {
    RowMatrix z;
    Eigen::VectorXd time;
    std::vector<std::uint8_t> status;
    std::vector<std::string> names;  // covariate names, size p (may be synthesized)

    Index size() const noexcept { return time.size(); }
    Index dim() const noexcept { return z.cols(); }

    SurvivalRecord record(Index i) const {
        return {z.row(i).transpose(), time(i), static_cast<int>(status[static_cast<std::size_t>(i)])};
    }

    /// Throws DataError unless the cohort is nonempty, dimensions agree,
    /// times are finite and nonnegative, covariates are finite and status
    /// values are 0/1.
    void validate() const {
        const Index n = time.size();
        if (n == 0) throw DataError("cohort is empty");
        if (z.rows() != n || static_cast<Index>(status.size()) != n)
            throw DataError("cohort columns have mismatched lengths");
        if (z.cols() == 0) throw DataError("cohort has no covariates");
        if (!names.empty() && static_cast<Index>(names.size()) != z.cols())
            throw DataError("covariate name count does not match dimension");
        for (Index i = 0; i < n; ++i) {
            const double t = time(i);
            if (!std::isfinite(t) || t < 0.0)
                throw DataError("record " + std::to_string(i) + ": time must be finite and >= 0");
            if (status[static_cast<std::size_t>(i)] > 1)
                throw DataError("record " + std::to_string(i) + ": status must be 0 or 1");
            if (!z.row(i).allFinite())
                throw DataError("record " + std::to_string(i) + ": non-finite covariate");
        }
    }

    static Cohort make(RowMatrix z, Eigen::VectorXd time, std::vector<std::uint8_t> status,
                       std::vector<std::string> names = {}) {
        Cohort c{std::move(z), std::move(time), std::move(status), std::move(names)};
        if (c.names.empty()) {
            for (Index j = 0; j < c.z.cols(); ++j) c.names.push_back("z" + std::to_string(j + 1));
        }
        c.validate();
        return c;
    }

    static Cohort from_records(std::span<const SurvivalRecord> records) {
        if (records.empty()) throw DataError("cohort is empty");
        const Index p = records.front().covariates.size();
        const auto n = static_cast<Index>(records.size());
        RowMatrix z(n, p);
        Eigen::VectorXd time(n);
        std::vector<std::uint8_t> status(records.size());
        for (Index i = 0; i < n; ++i) {
            const auto& r = records[static_cast<std::size_t>(i)];
            if (r.covariates.size() != p)
                throw DataError("record " + std::to_string(i) + ": covariate dimension mismatch");
            if (r.status != 0 && r.status != 1)
                throw DataError("record " + std::to_string(i) + ": status must be 0 or 1");
            z.row(i) = r.covariates.transpose();
            time(i) = r.time;
            status[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(r.status);
        }
        return make(std::move(z), std::move(time), std::move(status));
    }
};

/**
 * A time-sorted sample with optional per-record weights, grouped by
 * distinct event time. This is the common input of the partial-likelihood
 * engine for both the full cohort (unit weights, scale 1/N) and a drawn
 * subsample (weights 1/pi*, scale 1/(N r)).
 *
 * Records are ordered by ascending time; at equal times events precede
 * censorings, so the risk set of event time t_k is the suffix starting at
 * `risk_begin[k]` and the events at t_k occupy [risk_begin[k], event_end[k]).
 */
struct RiskTable {
    RowMatrix z;                       // n x p, sorted
    Eigen::VectorXd time;              // sorted ascending
    std::vector<std::uint8_t> status;  // sorted
    Eigen::VectorXd weight;            // empty means unit weights
    double scale = 1.0;                // prefactor of every S^(k) sum
    double inner_scale = 1.0;          // N * scale; makes N * S^(0) the risk sum inside the log-likelihood

    std::vector<double> event_times;
    std::vector<Index> risk_begin;
    std::vector<Index> event_end;
    Eigen::VectorXd event_weight;      // total weight of the events tied at t_k

    Index size() const noexcept { return time.size(); }
    Index dim() const noexcept { return z.cols(); }
    Index num_event_times() const noexcept { return static_cast<Index>(event_times.size()); }
    bool weighted() const noexcept { return weight.size() != 0; }
    double w(Index i) const noexcept { return weighted() ? weight(i) : 1.0; }

    /// Index of the last event time <= t, or -1 if t precedes all events.
    Index last_event_at_or_before(double t) const {
        auto it = std::upper_bound(event_times.begin(), event_times.end(), t);
        return static_cast<Index>(it - event_times.begin()) - 1;
    }
};

namespace detail {

/// Sort permutation: ascending time, events before censorings at ties,
/// then by input position. The key is total, so the result is unique.
inline std::vector<Index> time_order(const Eigen::VectorXd& time, std::span<const std::uint8_t> status) {
    std::vector<Index> order(static_cast<std::size_t>(time.size()));
    std::iota(order.begin(), order.end(), Index{0});
    std::sort(order.begin(), order.end(), [&](Index a, Index b) {
        if (time(a) != time(b)) return time(a) < time(b);
        const auto sa = status[static_cast<std::size_t>(a)];
        const auto sb = status[static_cast<std::size_t>(b)];
        if (sa != sb) return sa > sb;
        return a < b;
    });
    return order;
}

/// Fills the event-time grid of a table whose rows are already sorted.
inline void index_event_times(RiskTable& t) {
    t.event_times.clear();
    t.risk_begin.clear();
    t.event_end.clear();
    std::vector<double> ew;
    const Index n = t.size();
    Index i = 0;
    while (i < n) {
        if (t.status[static_cast<std::size_t>(i)] == 0) {
            ++i;
            continue;
        }
        const double tk = t.time(i);
        const Index begin = i;
        double wsum = 0.0;
        while (i < n && t.time(i) == tk && t.status[static_cast<std::size_t>(i)] == 1) {
            wsum += t.w(i);
            ++i;
        }
        t.event_times.push_back(tk);
        t.risk_begin.push_back(begin);
        t.event_end.push_back(i);
        ew.push_back(wsum);
    }
    t.event_weight = Eigen::Map<Eigen::VectorXd>(ew.data(), static_cast<Index>(ew.size()));
}

}  // namespace detail

/**
 * Builds a sorted risk table from gathered rows.
 *
 * @param weights  empty for unit weights, otherwise one positive weight per row.
 */
inline RiskTable make_risk_table(const RowMatrix& z, const Eigen::VectorXd& time,
                                 std::span<const std::uint8_t> status, const Eigen::VectorXd& weights,
                                 double scale, double inner_scale,
                                 std::vector<Index>* order_out = nullptr) {
    const auto order = detail::time_order(time, status);
    RiskTable t;
    const Index n = time.size();
    t.z.resize(n, z.cols());
    t.time.resize(n);
    t.status.resize(static_cast<std::size_t>(n));
    if (weights.size() != 0) t.weight.resize(n);
    for (Index k = 0; k < n; ++k) {
        const Index i = order[static_cast<std::size_t>(k)];
        t.z.row(k) = z.row(i);
        t.time(k) = time(i);
        t.status[static_cast<std::size_t>(k)] = status[static_cast<std::size_t>(i)];
        if (weights.size() != 0) t.weight(k) = weights(i);
    }
    t.scale = scale;
    t.inner_scale = inner_scale;
    detail::index_event_times(t);
    if (order_out) *order_out = order;
    return t;
}

/**
 * Immutable time-sorted view of a cohort. Safe to share read-only
 * across threads.
 */
class SortedCohort {
public:
    explicit SortedCohort(Cohort cohort) : base_(std::move(cohort)) {
        base_.validate();
        const auto n = base_.size();
        table_ = make_risk_table(base_.z, base_.time, base_.status, Eigen::VectorXd{},
                                 1.0 / static_cast<double>(n), 1.0, &order_);
        rank_.resize(order_.size());
        for (std::size_t k = 0; k < order_.size(); ++k) rank_[static_cast<std::size_t>(order_[k])] = static_cast<Index>(k);
        for (Index i = 0; i < n; ++i) {
            (base_.status[static_cast<std::size_t>(i)] ? s1_ : s0_).push_back(i);
        }
        censoring_rate_ = static_cast<double>(s0_.size()) / static_cast<double>(n);
    }

    const Cohort& base() const noexcept { return base_; }
    const RiskTable& table() const noexcept { return table_; }

    Index size() const noexcept { return base_.size(); }
    Index dim() const noexcept { return base_.dim(); }

    /// order()[k] is the original index of the k-th record in time order.
    const std::vector<Index>& order() const noexcept { return order_; }
    /// rank()[i] is the sorted position of original record i.
    const std::vector<Index>& rank() const noexcept { return rank_; }

    const std::vector<double>& event_times() const noexcept { return table_.event_times; }
    /// Number of events tied at the k-th distinct event time.
    Index event_count(Index k) const noexcept {
        return table_.event_end[static_cast<std::size_t>(k)] - table_.risk_begin[static_cast<std::size_t>(k)];
    }
    /// Number of records at risk (X_j >= t_k) at the k-th event time.
    Index at_risk(Index k) const noexcept { return size() - table_.risk_begin[static_cast<std::size_t>(k)]; }

    double censoring_rate() const noexcept { return censoring_rate_; }
    double event_rate() const noexcept { return 1.0 - censoring_rate_; }
    Index num_events() const noexcept { return static_cast<Index>(s1_.size()); }

    /// Original indices of censored (status 0) and failed (status 1) records.
    const std::vector<Index>& s0_index() const noexcept { return s0_; }
    const std::vector<Index>& s1_index() const noexcept { return s1_; }

private:
    Cohort base_;
    RiskTable table_;
    std::vector<Index> order_;
    std::vector<Index> rank_;
    std::vector<Index> s0_;
    std::vector<Index> s1_;
    double censoring_rate_ = 0.0;
};

inline SortedCohort sort_cohort(Cohort cohort) { return SortedCohort(std::move(cohort)); }

struct CensoringSplit {
    std::vector<Index> s0;  // censored
    std::vector<Index> s1;  // failures
};

inline CensoringSplit censoring_split(const Cohort& cohort) {
    CensoringSplit out;
    for (Index i = 0; i < cohort.size(); ++i) {
        (cohort.status[static_cast<std::size_t>(i)] ? out.s1 : out.s0).push_back(i);
    }
    return out;
}

}  // namespace coxsub
