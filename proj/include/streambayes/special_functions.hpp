#pragma once

#include <span>

namespace streambayes {

inline constexpr double kLog2Pi = 1.8378770664093454836;

/// Digamma function psi(x) for x > 0.
double digamma(double x);

/// log(sum(exp(v))) without overflow; -inf for an empty or all -inf input.
double log_sum_exp(std::span<const double> v);

}  // namespace streambayes
