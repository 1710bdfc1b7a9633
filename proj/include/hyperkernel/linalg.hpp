#pragma once

#include <cstdint>
#include <random>
#include <span>

#include <Eigen/Dense>

#include "hyperkernel/errors.hpp"

namespace hyperkernel {

/// Dense row-major matrix of doubles. Weight matrices W^l and V^l live here.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Symmetric matrix (Gram matrices). Storage is full; symmetry is an invariant
/// maintained by the builders in this library, not enforced by the type.
using SymMatrix = Eigen::MatrixXd;

/// Identifies the generator family so recorded seeds stay meaningful across
/// releases. Bump the suffix if the stream derivation ever changes.
inline constexpr const char* kRngName = "mt19937_64+splitmix64-substreams/v1";

/// Deterministic random stream keyed by (seed, stream id).
///
/// Every consumer derives its own substream from the root seed, so results do
/// not depend on the order in which parallel workers draw numbers.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream = 0);

  double normal() { return normal_(engine_); }
  double uniform(double lo, double hi);
  std::uint64_t uniform_index(std::uint64_t n);  // in [0, n)

  std::mt19937_64& engine() { return engine_; }

  /// Child stream, reproducible from (seed, stream, child).
  Rng split(std::uint64_t child) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// SplitMix64 finalizer; used to derive substream keys.
std::uint64_t mix64(std::uint64_t x);

/// rows x cols matrix of i.i.d. N(0, 1) entries. Pure function of its arguments.
Matrix gaussian_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                       std::uint64_t stream = 0);

/// Fills `out` with i.i.d. N(0, 1) draws from `rng`.
void fill_gaussian(Rng& rng, std::span<double> out);

Vector gaussian_vector(std::size_t n, Rng& rng);

/// Solves (K + eps*I) x = y through Cholesky.
///
/// If the factorization fails, jitter starting at 1e-12*trace/n is added and
/// escalated tenfold up to 1e-6*trace/n before giving up with SingularSystem.
Vector ridge_solve(const SymMatrix& K, const Vector& y, double eps);

/// Same as ridge_solve, for several right-hand sides sharing one factorization.
Eigen::MatrixXd ridge_solve_many(const SymMatrix& K, const Eigen::MatrixXd& Y, double eps);

/// Smallest eigenvalue of a symmetric matrix (used by PSD checks).
double min_eigenvalue(const SymMatrix& K);

}  // namespace hyperkernel
