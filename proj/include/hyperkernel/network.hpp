#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hyperkernel/kernels.hpp"
#include "hyperkernel/linalg.hpp"

namespace hyperkernel {

/// Weights of an NTK-parameterized ReLU MLP:
///   y^l = W^l q^{l-1} / sqrt(n_{l-1}),  q^l = sqrt(2) relu(y^l),  q^0 = x,
/// with output f(x) = y^L. layers[l-1] holds W^l (n_l x n_{l-1}).
struct MlpWeights {
  std::vector<Matrix> layers;

  int depth() const { return static_cast<int>(layers.size()); }
  int input_dim() const { return static_cast<int>(layers.front().cols()); }
  int output_dim() const { return static_cast<int>(layers.back().rows()); }
  /// n_0, ..., n_L
  std::vector<int> widths() const;
  std::size_t param_count() const;
};

/// i.i.d. N(0,1) weights for the given widths n_0..n_L (at least two entries).
MlpWeights init_mlp(std::span<const int> widths, std::uint64_t seed, std::uint64_t stream = 0);

/// Forward record of an MLP. Vectors are indexed by layer number; slot 0 of
/// `y` and `active`, and slot L of `q`, are empty.
struct MlpTrace {
  std::vector<Vector> y;       // pre-activations y^1..y^L
  std::vector<Vector> q;       // q^0 = x, ..., q^{L-1}
  std::vector<Vector> active;  // Z^1..Z^{L-1} as 0/1 vectors

  const Vector& output() const { return y.back(); }
  int depth() const { return static_cast<int>(y.size()) - 1; }
};

MlpTrace forward_mlp(const MlpWeights& w, const Vector& x);

/// Backward pass for the cotangent c on the output: returns delta[l] = d(c.f)/dy^l
/// for l = 1..L (slot 0 empty). The gradient w.r.t. W^l is
/// delta[l] q^{l-1}^T / sqrt(n_{l-1}).
std::vector<Vector> backward_mlp(const MlpWeights& w, const MlpTrace& trace, const Vector& c);

/// Per-layer gradient matrices of output f^d w.r.t. W^1..W^L.
std::vector<Matrix> jacobian_mlp(const MlpWeights& w, const MlpTrace& trace, int d);
std::vector<Matrix> jacobian_mlp(const MlpWeights& w, const Vector& x, int d);

/// Hypernetwork: meta MLP f(x; w) whose outputs are reshaped, layer-major then
/// row-major, into the primary weights V^1..V^H with V^l of shape m_l x m_{l-1}.
/// The primary net g(z; v) is g^l = V^l a^{l-1} / sqrt(m_{l-1}), a^l = sqrt(2) relu(g^l),
/// a^0 = z, with scalar output h = g^H.
struct HypernetWeights {
  MlpWeights meta;
  std::vector<int> primary_widths;  // m_0..m_H, m_H == 1

  int primary_depth() const { return static_cast<int>(primary_widths.size()) - 1; }
  HyperKernelConfig config() const;
};

/// Sum over l of m_l * m_{l-1}; the meta output dimension.
std::size_t primary_param_count(std::span<const int> primary_widths);

/// Every hidden meta layer gets width `meta_width`, every hidden primary layer
/// gets `primary_width`.
HypernetWeights init_hypernet(const HyperKernelConfig& cfg, int meta_width, int primary_width,
                              std::uint64_t seed);
HypernetWeights init_hypernet(std::span<const int> meta_hidden, std::span<const int> primary_widths,
                              int n0, std::uint64_t seed);

std::vector<Matrix> unpack_primary(const Vector& v, std::span<const int> primary_widths);

struct PrimaryTrace {
  std::vector<Vector> g;       // g^1..g^H
  std::vector<Vector> a;       // a^0 = z, ..., a^{H-1}
  std::vector<Vector> active;  // sign patterns of g^1..g^{H-1}

  double output() const { return g.back()(0); }
};

PrimaryTrace forward_primary(std::span<const Matrix> V, const Vector& z);

/// dh/dv for the primary net, flattened in the same layout as the meta output.
Vector primary_grad(std::span<const Matrix> V, const PrimaryTrace& trace);

struct HypernetTrace {
  MlpTrace meta;
  std::vector<Matrix> V;
  PrimaryTrace primary;

  double output() const { return primary.output(); }
};

HypernetTrace forward_hypernet(const HypernetWeights& hw, const HyperInput& u);

/// Everything needed to form gradient inner products without materializing
/// the gradient: dh/dv, the meta backward deltas, and the meta forward trace.
struct HypernetGrad {
  HypernetTrace trace;
  Vector dh_dv;
  std::vector<Vector> delta;  // meta deltas for cotangent dh_dv
};

HypernetGrad hypernet_grad_parts(const HypernetWeights& hw, const HyperInput& u);

/// Flat gradient of h(u) w.r.t. the meta weights, layer-major then row-major.
Vector grad_hypernet(const HypernetWeights& hw, const HyperInput& u);

/// Sum over layers of (delta_a . delta_b)(q_a . q_b)/n_{l-1}, i.e. the inner
/// product of two meta gradients given in factored form.
double factored_inner(std::span<const Vector> delta_a, std::span<const Vector> q_a,
                      std::span<const Vector> delta_b, std::span<const Vector> q_b);

struct EmpiricalKernels {
  double k_h = 0.0;
  double k_g = 0.0;
  double k_f_diag_mean = 0.0;
  double k_f_offdiag_rms = 0.0;
};

/// Empirical hyperkernel K^h, conditional kernel K^g, and summary statistics
/// of the n_L x n_L matrix K^f estimated on `kf_probes` sampled output indices.
EmpiricalKernels empirical_kernels(const HypernetWeights& hw, const HyperInput& u,
                                   const HyperInput& u_prime, int kf_probes = 16,
                                   std::uint64_t probe_seed = 0);

/// Hypernetwork training sample.
struct Sample {
  HyperInput u;
  double y = 0.0;
};

struct SgdConfig {
  double mu = 0.01;
  int epochs = 1;
  int batch = 1;
  int p = 2;  // loss |h - y|^p, p in {1, 2}
  std::uint64_t seed = 0;
};

template <typename Weights>
struct TrainResult {
  Weights weights;
  std::vector<double> epoch_loss;  // mean loss over the dataset after each epoch
  std::vector<double> step_loss;   // mean batch loss before each step
};

/// Plain SGD: each step samples `batch` indices uniformly with replacement and
/// moves along the mean loss gradient. Throws NonFiniteLoss on divergence.
TrainResult<HypernetWeights> sgd_train(HypernetWeights hw, std::span<const Sample> data,
                                       const SgdConfig& cfg);

/// Same procedure for a scalar-output MLP; samples use u.x and y only.
TrainResult<MlpWeights> sgd_train(MlpWeights w, std::span<const Sample> data,
                                  const SgdConfig& cfg);

double loss_value(double prediction, double label, int p);
double mean_loss(const HypernetWeights& hw, std::span<const Sample> data, int p);
double mean_loss(const MlpWeights& w, std::span<const Sample> data, int p);

}  // namespace hyperkernel
