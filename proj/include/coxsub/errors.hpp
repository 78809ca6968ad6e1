#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>
#include <utility>

namespace coxsub {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input data (CSV rows, invalid records, dimension mismatch).
class DataError : public Error {
public:
    using Error::Error;
};

/// Numerical failure during estimation: singular Hessian, zero events,
/// non-finite values, or exhausted iterations.
class FitError : public Error {
public:
    using Error::Error;
};

/// Newton iteration ran out of iterations or line-search halvings.
class ConvergenceError : public FitError {
public:
    ConvergenceError(const std::string& what, Eigen::VectorXd last_beta, int iterations)
        : FitError(what), last_beta_(std::move(last_beta)), iterations_(iterations) {}

    const Eigen::VectorXd& last_beta() const noexcept { return last_beta_; }
    int iterations() const noexcept { return iterations_; }

private:
    Eigen::VectorXd last_beta_;
    int iterations_;
};

}  // namespace coxsub
