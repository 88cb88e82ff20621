#pragma once

#include <stdexcept>
#include <string>

namespace viscos {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionMismatch : Error {
    using Error::Error;
};

struct NoConvergence : Error {
    double final_residual;
    long iterations;
    NoConvergence(const std::string& what, double residual, long iters)
        : Error(what + " (residual=" + std::to_string(residual) +
                ", iterations=" + std::to_string(iters) + ")"),
          final_residual(residual),
          iterations(iters) {}
};

struct SingularMatrix : Error {
    using Error::Error;
};

struct SingularSubJacobian : Error {
    using Error::Error;
};

struct ZeroReflector : Error {
    using Error::Error;
};

struct SeriesDiverging : Error {
    using Error::Error;
};

struct NonFinite : Error {
    using Error::Error;
};

struct InvalidIndices : Error {
    using Error::Error;
};

struct InvalidParams : Error {
    using Error::Error;
};

struct GridTooCoarse : Error {
    using Error::Error;
};

struct AcceptanceTooLow : Error {
    using Error::Error;
};

struct DegenerateWeights : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

}  // namespace viscos
