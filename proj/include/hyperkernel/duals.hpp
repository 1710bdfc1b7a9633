#pragma once

#include <cstdint>

namespace hyperkernel {

/// 2x2 covariance block of a centered bivariate Gaussian (u, v).
struct CovPair {
  double s11 = 0.0;  // Var u
  double s12 = 0.0;  // Cov(u, v)
  double s22 = 0.0;  // Var v

  friend bool operator==(const CovPair&, const CovPair&) = default;
};

/// Throws InvalidCov unless s11, s22 >= 0 and s12^2 <= s11*s22 up to rounding.
void validate(const CovPair& lam);

/// 2 E[relu(u) relu(v)] for (u, v) ~ N(0, lam), via the arc-cosine closed form.
/// Returns 0 when s11*s22 == 0.
double dual_relu(const CovPair& lam);

/// 2 E[1{u>0} 1{v>0}] = (pi - theta)/pi. Returns 0 when s11*s22 == 0.
double dual_relu_dot(const CovPair& lam);

struct McDual {
  double mean = 0.0;
  double std_error = 0.0;
  double mean_dot = 0.0;
  double std_error_dot = 0.0;
};

/// Monte Carlo estimate of both duals with standard errors. Deterministic in seed.
McDual mc_dual(const CovPair& lam, std::uint64_t n_samples, std::uint64_t seed);

}  // namespace hyperkernel
