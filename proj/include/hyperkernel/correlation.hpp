#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hyperkernel/linalg.hpp"
#include "hyperkernel/network.hpp"

namespace hyperkernel {

/// Selects one correlation term: the k-th mixed derivative of output
/// `target_output` at x0 w.r.t. W^{layers[0]}, ..., W^{layers[k-1]}, contracted
/// with the gradients of output outputs[t] at example xs[examples[t]]
/// w.r.t. W^{layers[t]}. Layers are 1-based, examples and outputs 0-based.
struct MultiIndex {
  std::vector<int> layers;
  std::vector<int> examples;
  std::vector<int> outputs;
  int target_output = 0;

  int order() const { return static_cast<int>(layers.size()); }
};

/// Throws InvalidIndex unless the three sequences have equal nonzero length
/// and every entry is in range. Repeated or unsorted layers are allowed here;
/// corr_term sorts them and returns 0 for repeats.
void validate_index(const MultiIndex& idx, int depth, std::size_t n_examples, int n_outputs);

/// Backward products and factor maps of one forward trace, applied lazily.
///
///   P^{u->v} = prod_{l=u}^{v-1} sqrt(2/n_l) W^{l+1} Z^l     (maps y^u to y^v)
///   C^{a->b} = sqrt(2) Z^{b-1} P^{a->b-1}                    (maps y^a to q^{b-1})
class PathFactors {
 public:
  PathFactors(const MlpWeights& w, const MlpTrace& trace) : w_(&w), trace_(&trace) {}

  Vector apply_p(int u, int v, const Vector& vec) const;
  Vector apply_c(int a, int b, const Vector& vec) const;
  Matrix p_matrix(int u, int v) const;
  Matrix c_matrix(int a, int b) const;
  const Vector& q(int l) const { return trace_->q[l]; }

 private:
  const MlpWeights* w_;
  const MlpTrace* trace_;
};

/// One gradient factor of a correlation term: the gradient w.r.t. W^layer is
/// delta q^T / sqrt(n_{layer-1}).
struct GradientLeg {
  int layer = 1;
  Vector q;      // q^{layer-1} at the gradient's input
  Vector delta;  // backward cotangent at y^layer
};

/// Correlation term with gradients given in factored form. `target_delta`
/// holds the backward deltas of the differentiated output at x0 (any cotangent).
double corr_term_legs(const MlpWeights& w, const MlpTrace& trace0,
                      std::span<const Vector> target_delta, std::vector<GradientLeg> legs);

/// Correlation term T for the index `idx`, from path factors only.
double corr_term(const MlpWeights& w, const Vector& x0, std::span<const Vector> xs,
                 const MultiIndex& idx);

/// Dense mixed derivative of f^{target_output}(x0) w.r.t. the selected layers.
/// `values` is laid out with the first layer's (row-major) parameter index
/// slowest.
struct DerivativeTensor {
  std::vector<int> layers;
  std::vector<std::size_t> dims;  // parameter count per selected layer
  std::vector<double> values;
};

inline constexpr std::size_t kOracleParamCap = 200;
inline constexpr std::size_t kOracleEntryCap = std::size_t{1} << 22;
inline constexpr double kKinkThreshold = 1e-6;

/// Brute-force derivative for tiny nets. With the activation pattern at x0
/// frozen, the output is affine in each single weight and multilinear across
/// distinct layers, so unit-step mixed differences are exact. Repeated layers
/// give the zero tensor.
DerivativeTensor higher_derivative_oracle(const MlpWeights& w, const Vector& x0,
                                          std::span<const int> layers, int target_output = 0);

/// Contracts the tensor with per-layer gradient matrices (one per selected
/// layer, same shapes as the corresponding W).
double contract_derivative(const DerivativeTensor& t, std::span<const Matrix> grads);

/// K^(r)(u_i, u_j) = <d^r h(u_i), (grad h(u_j))^r> for a hypernet with scalar
/// primary widths, assembled from correlation terms of the meta net.
/// `fast` folds the sum over output tuples into one cotangent per leg.
double hyper_order_term(const HypernetWeights& hw, const HyperInput& u_i, const HyperInput& u_j,
                        int r, bool fast = true);

/// Per-output factors of h(u) for scalar primary widths: h^d = dh/df^d.
std::vector<double> primary_output_sensitivities(const HypernetWeights& hw, const HyperInput& u);

// ---- scaling probes -------------------------------------------------------

struct ScalingRow {
  int width = 0;
  std::uint64_t seed = 0;
  double value = 0.0;
};

struct ScalingAggregate {
  int width = 0;
  double mean_abs = 0.0;
  double sd = 0.0;  // of |value|
  double median_abs = 0.0;
  int n = 0;
};

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

/// Least squares line through (log x, log y) with a 95% Student-t interval on
/// the slope. Needs at least three points with positive coordinates.
SlopeFit fit_loglog(std::span<const double> x, std::span<const double> y);

std::vector<ScalingAggregate> aggregate_rows(std::span<const ScalingRow> rows);

struct ScalingResult {
  std::vector<ScalingRow> rows;
  std::vector<ScalingAggregate> aggregates;
  SlopeFit fit_mean;    // on mean |value|
  SlopeFit fit_median;  // on median |value|
};

struct TProbeConfig {
  int r = 1;
  std::vector<int> widths{64, 128, 256, 512};
  int seeds = 200;
  int L = 3;
  int n0 = 4;
  bool fixed_input = false;  // all gradient examples equal
  std::uint64_t seed = 0;
  int threads = 1;
};

/// |T^r| for a fresh net per (width, seed). The inputs and the MultiIndex
/// depend only on the seed, so every width sees the same index set.
ScalingResult scaling_probe_T(const TProbeConfig& cfg);

struct KProbeConfig {
  int r = 2;
  int H = 1;
  std::vector<int> widths{64, 128, 256, 512};
  int seeds = 200;
  int L = 3;
  int n0 = 4;
  std::uint64_t seed = 0;
  int threads = 1;
};

/// |K^(r)| versus meta width with scalar primary widths.
ScalingResult scaling_probe_K(const KProbeConfig& cfg);

std::string scaling_rows_csv(std::span<const ScalingRow> rows);
std::string scaling_aggregate_csv(std::span<const ScalingAggregate> agg);
std::string slope_summary_csv(const SlopeFit& fit);

}  // namespace hyperkernel
