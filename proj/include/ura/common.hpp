#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ura {

using cd = std::complex<double>;
using Bits = std::vector<std::uint8_t>;

using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RVector = Eigen::VectorXd;

/// Invalid scenario parameters or inconsistent dimensions.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Iterative algorithm produced non-finite values or failed to contract.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An optimization problem has no feasible point.
class InfeasibleError : public std::runtime_error {
public:
    InfeasibleError(const std::string& what, int binding_group)
        : std::runtime_error(what), binding_group_(binding_group) {}
    int binding_group() const noexcept { return binding_group_; }

private:
    int binding_group_;
};

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double linear_to_db(double x) { return 10.0 * std::log10(x); }

}  // namespace ura
