#include "hyperkernel/linalg.hpp"

#include <cmath>
#include <string>

namespace hyperkernel {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace {

std::seed_seq make_seed_seq(std::uint64_t seed, std::uint64_t stream) {
  const std::uint64_t a = mix64(seed);
  const std::uint64_t b = mix64(a ^ mix64(stream + 0x632be59bd9b4e019ULL));
  return std::seed_seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                       static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {
  auto seq = make_seed_seq(seed, stream);
  engine_.seed(seq);
}

double Rng::uniform(double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  return dist(engine_);
}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  std::uniform_int_distribution<std::uint64_t> dist(0, n - 1);
  return dist(engine_);
}

Rng Rng::split(std::uint64_t child) const {
  return Rng(mix64(seed_ ^ mix64(stream_)), mix64(child) ^ 0x5851f42d4c957f2dULL);
}

void fill_gaussian(Rng& rng, std::span<double> out) {
  for (double& v : out) v = rng.normal();
}

Vector gaussian_vector(std::size_t n, Rng& rng) {
  Vector v(static_cast<Eigen::Index>(n));
  fill_gaussian(rng, {v.data(), n});
  return v;
}

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                       std::uint64_t stream) {
  Rng rng(seed, stream);
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  fill_gaussian(rng, {m.data(), rows * cols});
  return m;
}

namespace {

Eigen::LLT<Eigen::MatrixXd> factor_with_jitter(const SymMatrix& K, double eps) {
  const Eigen::Index n = K.rows();
  Eigen::MatrixXd A = K;
  A.diagonal().array() += eps;
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() == Eigen::Success) return llt;

  const double scale = std::abs(K.trace()) / static_cast<double>(n);
  for (double rel = 1e-12; rel <= 1e-6 * (1 + 1e-9); rel *= 10.0) {
    Eigen::MatrixXd B = A;
    B.diagonal().array() += rel * scale;
    llt.compute(B);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw SingularSystem("Cholesky failed after jitter escalation to 1e-6*trace/n (n=" +
                       std::to_string(n) + ")");
}

}  // namespace

Vector ridge_solve(const SymMatrix& K, const Vector& y, double eps) {
  if (K.rows() != K.cols() || K.rows() != y.size())
    throw DimensionMismatch("ridge_solve: K is " + std::to_string(K.rows()) + "x" +
                            std::to_string(K.cols()) + ", y has " + std::to_string(y.size()));
  if (eps < 0) throw Error("ridge_solve: eps must be nonnegative");
  return factor_with_jitter(K, eps).solve(y);
}

Eigen::MatrixXd ridge_solve_many(const SymMatrix& K, const Eigen::MatrixXd& Y, double eps) {
  if (K.rows() != K.cols() || K.rows() != Y.rows())
    throw DimensionMismatch("ridge_solve: row count mismatch");
  if (eps < 0) throw Error("ridge_solve: eps must be nonnegative");
  return factor_with_jitter(K, eps).solve(Y);
}

double min_eigenvalue(const SymMatrix& K) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace hyperkernel
