#pragma once

#include <cstdint>
#include <vector>

#include "hyperkernel/duals.hpp"
#include "hyperkernel/linalg.hpp"

namespace hyperkernel {

/// Per-layer kernel record for one input pair.
///
/// `cov[l]` is the covariance block at layer l (l = 0 is the input layer).
/// `dot[l]` is the derivative dual of the pre-activations at layer l, i.e.
/// dual_relu_dot(cov[l-1]) for the meta net and dual_relu_dot(Lambda^l) for the
/// primary net; `dot[0]` is unused and set to 1.
struct KernelTrajectory {
  std::vector<CovPair> cov;
  std::vector<CovPair> dot;

  std::size_t depth() const { return cov.empty() ? 0 : cov.size() - 1; }
};

/// Depths and input dims of a hypernetwork: meta net of depth L on x in R^n0,
/// primary net of depth H on z in R^m0.
struct HyperKernelConfig {
  int L = 1;
  int H = 1;
  int n0 = 1;
  int m0 = 1;

  void validate() const;
};

/// Hypernetwork input u = (x, z). `group` optionally tags the x-part (e.g. an
/// image id) so Gram builders can reuse meta-side work; -1 means untagged.
struct HyperInput {
  Vector x;
  Vector z;
  std::int64_t group = -1;
};

/// Meta-net NNGP: S^0 = x.x'/n0, S^{l+1} = dual_relu(S^l). cov has L+1 entries.
KernelTrajectory mlp_nngp(const Vector& x, const Vector& x_prime, int L);

/// Limiting NTK of the meta net, read off an mlp_nngp trajectory.
double mlp_ntk(const KernelTrajectory& meta);
double mlp_ntk(const Vector& x, const Vector& x_prime, int L);

/// Primary-net recursion given the input block Sigma^0 and the meta output
/// block S^L. Returns cov = [Sigma^0, Lambda^1, ..., Lambda^H] and the derivative
/// duals dot[l] = dual_relu_dot(Lambda^l).
KernelTrajectory primary_nngp(const CovPair& sigma0, const CovPair& meta_out, int H);

/// Full hypernetwork NNGP trajectory up to Lambda^H (see primary_nngp).
KernelTrajectory hyper_nngp(const HyperInput& u, const HyperInput& u_prime,
                            const HyperKernelConfig& cfg);

/// Output NNGP kernel of the hypernetwork, Lambda^H(u, u').
double hyper_nngp_value(const HyperInput& u, const HyperInput& u_prime,
                        const HyperKernelConfig& cfg);

struct HyperNtk {
  double theta_h = 0.0;
  double theta_f = 0.0;
  double theta_g = 0.0;
};

/// Conditional primary kernel Theta^g from a primary trajectory and S^L(x, x').
double primary_ntk(const KernelTrajectory& primary, double meta_out_cross);

/// Hyperkernel Theta^h = Theta^f * Theta^g.
HyperNtk hyper_ntk(const HyperInput& u, const HyperInput& u_prime, const HyperKernelConfig& cfg);

/// Random Fourier features p(z)_i = cos(W_i . z + b_i), W ~ N(0,1), b ~ U[-pi, pi].
class FourierMap {
 public:
  FourierMap(int input_dim, int k, std::uint64_t seed);

  Vector operator()(const Vector& z) const;
  int k() const { return static_cast<int>(W_.rows()); }
  int input_dim() const { return static_cast<int>(W_.cols()); }

 private:
  Matrix W_;
  Vector b_;
};

Vector fourier_features(const Vector& z, int k, std::uint64_t seed);

/// Limit of p(z).p(z')/k as k grows: exp(-|z - z'|^2 / 2) / 2.
double fourier_limit_kernel(const Vector& z, const Vector& z_prime);

}  // namespace hyperkernel
