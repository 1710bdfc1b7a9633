#include "hyperkernel/kernels.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace hyperkernel {

void HyperKernelConfig::validate() const {
  if (L < 1 || H < 1 || n0 < 1 || m0 < 1)
    throw Error("HyperKernelConfig: L, H, n0, m0 must all be >= 1");
}

namespace {

void require_same_dim(const Vector& a, const Vector& b, const char* what) {
  if (a.size() != b.size() || a.size() == 0)
    throw DimensionMismatch(std::string(what) + ": dimensions " + std::to_string(a.size()) +
                            " and " + std::to_string(b.size()));
}

CovPair input_block(const Vector& a, const Vector& b) {
  const double dim = static_cast<double>(a.size());
  return {a.squaredNorm() / dim, a.dot(b) / dim, b.squaredNorm() / dim};
}

// One ReLU layer applied to all three entries of the block.
CovPair relu_layer(const CovPair& c) {
  return {dual_relu({c.s11, c.s11, c.s11}), dual_relu(c), dual_relu({c.s22, c.s22, c.s22})};
}

CovPair relu_dot_layer(const CovPair& c) {
  return {dual_relu_dot({c.s11, c.s11, c.s11}), dual_relu_dot(c),
          dual_relu_dot({c.s22, c.s22, c.s22})};
}

CovPair hadamard(const CovPair& a, const CovPair& b) {
  return {a.s11 * b.s11, a.s12 * b.s12, a.s22 * b.s22};
}

}  // namespace

KernelTrajectory mlp_nngp(const Vector& x, const Vector& x_prime, int L) {
  require_same_dim(x, x_prime, "mlp_nngp");
  if (L < 1) throw Error("mlp_nngp: depth must be >= 1");
  KernelTrajectory t;
  t.cov.reserve(L + 1);
  t.dot.reserve(L + 1);
  t.cov.push_back(input_block(x, x_prime));
  t.dot.push_back({1.0, 1.0, 1.0});
  for (int l = 1; l <= L; ++l) {
    // y^l has covariance cov[l-1]; its derivative dual belongs to layer l.
    t.dot.push_back(relu_dot_layer(t.cov[l - 1]));
    t.cov.push_back(relu_layer(t.cov[l - 1]));
  }
  return t;
}

double mlp_ntk(const KernelTrajectory& meta) {
  const int L = static_cast<int>(meta.depth());
  // Theta^1 = S^0, Theta^{l+1} = S^l + Theta^l * Sdot^l
  double theta = meta.cov[0].s12;
  for (int l = 1; l < L; ++l) theta = meta.cov[l].s12 + theta * meta.dot[l].s12;
  return theta;
}

double mlp_ntk(const Vector& x, const Vector& x_prime, int L) {
  return mlp_ntk(mlp_nngp(x, x_prime, L));
}

KernelTrajectory primary_nngp(const CovPair& sigma0, const CovPair& meta_out, int H) {
  if (H < 1) throw Error("primary_nngp: depth must be >= 1");
  KernelTrajectory t;
  t.cov.reserve(H + 1);
  t.dot.reserve(H + 1);
  t.cov.push_back(sigma0);
  t.dot.push_back({1.0, 1.0, 1.0});
  CovPair sigma = sigma0;
  for (int l = 1; l <= H; ++l) {
    const CovPair lambda = hadamard(sigma, meta_out);
    t.cov.push_back(lambda);
    t.dot.push_back(relu_dot_layer(lambda));
    sigma = relu_layer(lambda);
  }
  return t;
}

KernelTrajectory hyper_nngp(const HyperInput& u, const HyperInput& u_prime,
                            const HyperKernelConfig& cfg) {
  cfg.validate();
  if (u.x.size() != cfg.n0 || u_prime.x.size() != cfg.n0 || u.z.size() != cfg.m0 ||
      u_prime.z.size() != cfg.m0)
    throw DimensionMismatch("hyper_nngp: input dims do not match config");
  const KernelTrajectory meta = mlp_nngp(u.x, u_prime.x, cfg.L);
  return primary_nngp(input_block(u.z, u_prime.z), meta.cov.back(), cfg.H);
}

double hyper_nngp_value(const HyperInput& u, const HyperInput& u_prime,
                        const HyperKernelConfig& cfg) {
  return hyper_nngp(u, u_prime, cfg).cov.back().s12;
}

double primary_ntk(const KernelTrajectory& primary, double meta_out_cross) {
  const int H = static_cast<int>(primary.depth());
  // Sigma^l = relu_layer(Lambda^l) for l >= 1, Sigma^0 is the input block.
  // Backprop through V^{l+1} picks up one factor S^L(x, x') per layer, since
  // the generated weights for x and x' have cross-covariance S^L(x, x').
  double theta = primary.cov[0].s12;  // l = 1 term so far
  for (int l = 1; l < H; ++l) {
    const double sigma_l = dual_relu(primary.cov[l]);
    theta = sigma_l + theta * primary.dot[l].s12 * meta_out_cross;
  }
  return theta;
}

HyperNtk hyper_ntk(const HyperInput& u, const HyperInput& u_prime, const HyperKernelConfig& cfg) {
  cfg.validate();
  if (u.x.size() != cfg.n0 || u_prime.x.size() != cfg.n0 || u.z.size() != cfg.m0 ||
      u_prime.z.size() != cfg.m0)
    throw DimensionMismatch("hyper_ntk: input dims do not match config");
  const KernelTrajectory meta = mlp_nngp(u.x, u_prime.x, cfg.L);
  const KernelTrajectory primary = primary_nngp(input_block(u.z, u_prime.z), meta.cov.back(), cfg.H);
  HyperNtk out;
  out.theta_f = mlp_ntk(meta);
  out.theta_g = primary_ntk(primary, meta.cov.back().s12);
  out.theta_h = out.theta_f * out.theta_g;
  return out;
}

FourierMap::FourierMap(int input_dim, int k, std::uint64_t seed) {
  if (k < 1 || input_dim < 1) throw Error("FourierMap: k and input_dim must be >= 1");
  W_ = gaussian_matrix(static_cast<std::size_t>(k), static_cast<std::size_t>(input_dim), seed,
                       0x4666);
  Rng rng(seed, 0x4662);
  b_.resize(k);
  for (int i = 0; i < k; ++i) b_[i] = rng.uniform(-std::numbers::pi, std::numbers::pi);
}

Vector FourierMap::operator()(const Vector& z) const {
  if (z.size() != W_.cols())
    throw DimensionMismatch("FourierMap: expected input of dim " + std::to_string(W_.cols()));
  return (W_ * z + b_).array().cos().matrix();
}

Vector fourier_features(const Vector& z, int k, std::uint64_t seed) {
  return FourierMap(static_cast<int>(z.size()), k, seed)(z);
}

double fourier_limit_kernel(const Vector& z, const Vector& z_prime) {
  require_same_dim(z, z_prime, "fourier_limit_kernel");
  return std::exp(-(z - z_prime).squaredNorm() / 2.0) / 2.0;
}

}  // namespace hyperkernel
