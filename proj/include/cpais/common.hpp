// Shared aliases and small numeric helpers used across the library.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cpais {

inline constexpr const char* kVersion = "0.1.0";

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// log(sum_i exp(v_i)) without overflow; -inf for an empty or all -inf input.
inline double log_sum_exp(std::span<const double> values) {
    double vmax = -kInf;
    for (double v : values) vmax = std::max(vmax, v);
    if (!std::isfinite(vmax)) return -kInf;
    double acc = 0.0;
    for (double v : values) acc += std::exp(v - vmax);
    return vmax + std::log(acc);
}

inline double log_sum_exp(const std::vector<double>& values) {
    return log_sum_exp(std::span<const double>(values));
}

// Standard normal upper tail P(Z >= z).
inline double normal_tail(double z) {
    return 0.5 * std::erfc(z / std::sqrt(2.0));
}

inline bool is_symmetric(const Matrix& m, double rel_tol = 1e-12) {
    if (m.rows() != m.cols()) return false;
    double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    return (m - m.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

// Cholesky-based positive definiteness probe.
inline bool is_positive_definite(const Matrix& m) {
    if (m.rows() != m.cols() || !is_symmetric(m, 1e-9)) return false;
    Eigen::LLT<Matrix> llt(m);
    return llt.info() == Eigen::Success;
}

inline void require(bool cond, const std::string& what) {
    if (!cond) throw std::invalid_argument(what);
}

}  // namespace cpais
