#include "hyperkernel/duals.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "hyperkernel/errors.hpp"
#include "hyperkernel/linalg.hpp"

namespace hyperkernel {

void validate(const CovPair& lam) {
  const double prod = lam.s11 * lam.s22;
  const bool ok = std::isfinite(lam.s11) && std::isfinite(lam.s12) && std::isfinite(lam.s22) &&
                  lam.s11 >= 0.0 && lam.s22 >= 0.0 &&
                  lam.s12 * lam.s12 <= prod + 1e-12 * std::max(1.0, prod);
  if (!ok) {
    std::ostringstream os;
    os << "invalid covariance (" << lam.s11 << ", " << lam.s12 << ", " << lam.s22 << ")";
    throw InvalidCov(os.str());
  }
}

namespace {

// Angle between u and v; c is clamped since recursions can overshoot |c| = 1.
double angle(const CovPair& lam, double norm) {
  const double c = std::clamp(lam.s12 / norm, -1.0, 1.0);
  return std::acos(c);
}

}  // namespace

double dual_relu(const CovPair& lam) {
  validate(lam);
  const double prod = lam.s11 * lam.s22;
  if (prod == 0.0) return 0.0;
  const double norm = std::sqrt(prod);
  const double theta = angle(lam, norm);
  return norm * (std::sin(theta) + (std::numbers::pi - theta) * std::cos(theta)) /
         std::numbers::pi;
}

double dual_relu_dot(const CovPair& lam) {
  validate(lam);
  const double prod = lam.s11 * lam.s22;
  if (prod == 0.0) return 0.0;
  const double theta = angle(lam, std::sqrt(prod));
  return (std::numbers::pi - theta) / std::numbers::pi;
}

McDual mc_dual(const CovPair& lam, std::uint64_t n_samples, std::uint64_t seed) {
  validate(lam);
  if (n_samples < 2) throw Error("mc_dual: need at least two samples");
  // u = a*e1, v = b*e1 + c*e2
  const double a = std::sqrt(lam.s11);
  const double b = lam.s11 > 0 ? lam.s12 / a : 0.0;
  const double c = std::sqrt(std::max(0.0, lam.s22 - b * b));

  Rng rng(seed, 0x6d63);
  double sum = 0, sum_sq = 0, sum_dot = 0, sum_dot_sq = 0;
  for (std::uint64_t i = 0; i < n_samples; ++i) {
    const double e1 = rng.normal();
    const double e2 = rng.normal();
    const double u = a * e1;
    const double v = b * e1 + c * e2;
    const double val = 2.0 * std::max(u, 0.0) * std::max(v, 0.0);
    const double dot = (u > 0 && v > 0) ? 2.0 : 0.0;
    sum += val;
    sum_sq += val * val;
    sum_dot += dot;
    sum_dot_sq += dot * dot;
  }
  const double n = static_cast<double>(n_samples);
  McDual out;
  out.mean = sum / n;
  out.mean_dot = sum_dot / n;
  const double var = std::max(0.0, (sum_sq - n * out.mean * out.mean) / (n - 1));
  const double var_dot = std::max(0.0, (sum_dot_sq - n * out.mean_dot * out.mean_dot) / (n - 1));
  out.std_error = std::sqrt(var / n);
  out.std_error_dot = std::sqrt(var_dot / n);
  return out;
}

}  // namespace hyperkernel
