#pragma once

#include "oracle.hpp"

#include "coxsub/coxsub.hpp"

#include <vector>

namespace testing_util {

inline coxsub::Cohort to_cohort(const oracle::Sample& d) {
    coxsub::RowMatrix z = d.z;
    std::vector<std::uint8_t> status(d.status.begin(), d.status.end());
    return coxsub::Cohort::make(std::move(z), d.time, std::move(status));
}

/// Oracle view of a drawn subsample: gathered rows, weights 1/pi, scale 1/(N r).
inline oracle::Sample gather(const oracle::Sample& full, const coxsub::Subsample& sub) {
    const int r = static_cast<int>(sub.indices.size());
    oracle::Sample d;
    d.z.resize(r, full.z.cols());
    d.time.resize(r);
    d.status.resize(r);
    d.w.resize(r);
    for (int k = 0; k < r; ++k) {
        const auto i = sub.indices[k];
        d.z.row(k) = full.z.row(i);
        d.time(k) = full.time(i);
        d.status[k] = full.status[i];
        d.w(k) = 1.0 / sub.probs_at_draw[k];
    }
    d.scale = 1.0 / (static_cast<double>(full.n()) * r);
    return d;
}

/// Every record once with pi = 1/N.
inline coxsub::Subsample identity_subsample(coxsub::Index n) {
    coxsub::Subsample s;
    s.r = n;
    s.source_n = n;
    for (coxsub::Index i = 0; i < n; ++i) {
        s.indices.push_back(i);
        s.probs_at_draw.push_back(1.0 / static_cast<double>(n));
    }
    return s;
}

/// |a - b| <= tol * max(1, |b|), entrywise.
template <class A, class B>
bool close(const A& a, const B& b, double tol) {
    if (a.size() != b.size()) return false;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const double x = a.data()[i], y = b.data()[i];
        if (!(std::abs(x - y) <= tol * std::max(1.0, std::abs(y)))) return false;
    }
    return true;
}

inline double max_rel_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    double m = 0;
    for (Eigen::Index i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]) / std::max(1.0, std::abs(b.data()[i])));
    return m;
}

}  // namespace testing_util
