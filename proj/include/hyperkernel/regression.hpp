#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hyperkernel/kernels.hpp"
#include "hyperkernel/linalg.hpp"

namespace hyperkernel {

inline constexpr double kDefaultRidge = 0.001;

using KernelFn = std::function<double(const HyperInput&, const HyperInput&)>;

/// Gram matrix with labels and ridge parameter.
struct GramSystem {
  SymMatrix K;
  Vector Y;
  double eps = kDefaultRidge;

  void check() const;
  /// (K + eps I)^{-1} Y
  Vector solve() const;
};

/// Symmetric Gram matrix; only the upper triangle is evaluated.
SymMatrix gram_matrix(std::span<const HyperInput> inputs, const KernelFn& kernel, int threads = 1);

/// rows = test inputs, cols = train inputs.
Eigen::MatrixXd cross_gram(std::span<const HyperInput> test, std::span<const HyperInput> train,
                           const KernelFn& kernel, int threads = 1);

/// k_vec(u) . (K + eps I)^{-1} Y for each test input.
Vector fit_predict(std::span<const HyperInput> train, const Vector& Y,
                   std::span<const HyperInput> test, const KernelFn& kernel,
                   double eps = kDefaultRidge, int threads = 1);

struct TrainingSubset {
  std::vector<HyperInput> inputs;
  Vector labels;
};

/// Average of fit_predict over the subsets.
Vector ensemble_predict(std::span<const TrainingSubset> subsets, std::span<const HyperInput> test,
                        const KernelFn& kernel, double eps = kDefaultRidge, int threads = 1);

// ---- hypernetwork kernels with shared meta-side work ----------------------

enum class HyperKernelKind { nngp, ntk };

HyperKernelKind parse_kernel_kind(const std::string& s);
std::string to_string(HyperKernelKind kind);

/// Pairwise hypernetwork kernel evaluated from scratch (reference path).
KernelFn hyper_kernel_fn(const HyperKernelConfig& cfg, HyperKernelKind kind);

/// Builds hypernetwork Gram blocks, computing the meta recursion once per pair
/// of x-groups (HyperInput::group) and reusing it for every z-pair. Inputs with
/// group -1 get a private group each. Matches the reference path exactly.
class FactorizedHyperGram {
 public:
  FactorizedHyperGram(const HyperKernelConfig& cfg, HyperKernelKind kind, int threads = 1);

  SymMatrix gram(std::span<const HyperInput> inputs) const;
  Eigen::MatrixXd cross(std::span<const HyperInput> test, std::span<const HyperInput> train) const;

 private:
  HyperKernelConfig cfg_;
  HyperKernelKind kind_;
  int threads_;
};

Vector fit_predict_hyper(std::span<const HyperInput> train, const Vector& Y,
                         std::span<const HyperInput> test, const FactorizedHyperGram& builder,
                         double eps = kDefaultRidge);

Vector ensemble_predict_hyper(std::span<const TrainingSubset> subsets,
                              std::span<const HyperInput> test, const FactorizedHyperGram& builder,
                              double eps = kDefaultRidge);

double mean_squared_error(const Vector& pred, const Vector& truth);

}  // namespace hyperkernel
