#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace hsq {

// Dense matrices are column-major; a set of N vectors of dimension D is a
// D x N matrix whose columns are the vectors. This matches the on-disk
// record order (one record per column) byte for byte.
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

using TagIndex = std::uint32_t;
using ImageId = std::uint32_t;
using CodeWord = std::uint16_t;

// Input/contract violations. The CLI maps these to exit code 1.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf, divergence, singular systems. The CLI maps these to exit code 2.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace hsq
