#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hyperkernel/datasets.hpp"
#include "hyperkernel/kernels.hpp"
#include "hyperkernel/network.hpp"
#include "hyperkernel/regression.hpp"

namespace hyperkernel {

// ---- last-layer sampling --------------------------------------------------

/// Draws the products of a Gaussian last layer W (rows x n, i.i.d. N(0,1)) with
/// a fixed input q without storing W.
///
/// With qhat = q/|q| and omega = W qhat ~ N(0, I), the forward output is
/// W q / sqrt(n) = omega |q| / sqrt(n). The part W (I - qhat qhat^T) is
/// independent of omega, so for a cotangent block B chosen after seeing the
/// output, W^T B = qhat (omega^T B) + (I - qhat qhat^T) Xi R with Xi an n x T
/// standard normal matrix and R^T R = B^T B.
class MarginalLastLayer {
 public:
  using PerpSampler = std::function<Eigen::MatrixXd(const Eigen::MatrixXd& B)>;

  MarginalLastLayer(const Vector& q, Eigen::Index rows, Rng& rng);
  /// Same, with omega supplied (used to replay a materialized W).
  MarginalLastLayer(const Vector& q, Vector omega);

  /// W q / sqrt(n)
  Vector output() const;

  /// One joint draw of W^T B. `perp`, if given, must return
  /// (I - qhat qhat^T) W^T B; by default it is sampled.
  Eigen::MatrixXd transpose_times(const Eigen::MatrixXd& B, Rng& rng,
                                  const PerpSampler& perp = nullptr) const;

  const Vector& qhat() const { return qhat_; }
  const Vector& omega() const { return omega_; }

 private:
  Vector qhat_;
  double qnorm_ = 0.0;
  Vector omega_;
};

// ---- convergence of the empirical hyperkernel ------------------------------

struct ConvergeConfig {
  int L = 4;
  int H = 4;
  std::vector<int> widths_f{32, 128, 512};
  std::vector<int> widths_g{32, 128, 512};
  int seeds = 200;
  std::vector<double> thetas;  // empty: 9 evenly spaced angles in [-pi/2, pi/2]
  Vector x;                    // empty: (1, -1)
  std::uint64_t seed = 0;
  int threads = 1;

  std::vector<double> theta_grid() const;
  Vector input_x() const;
};

struct ConvergeRow {
  int width_f = 0;
  int width_g = 0;
  double theta = 0.0;
  double mean_k = 0.0;
  double var_k = 0.0;
  int n_seeds = 0;
};

/// Empirical k_h(u, u') over seeds for x = x', z = (1, 0), z' = (cos t, sin t).
std::vector<ConvergeRow> converge_experiment(const ConvergeConfig& cfg);

/// Analytic hyperkernel at each theta of the grid.
std::vector<double> converge_limit(const ConvergeConfig& cfg);

std::string converge_csv(const std::vector<ConvergeRow>& rows);

/// Empirical k_h for each z' against z_ref, all sharing the same x, for one
/// hypernet drawn from `seed`. Uses the marginal last-layer sampler, so the
/// meta output layer is never stored.
std::vector<double> sampled_kernel_row(int L, int width_f, std::span<const int> primary_widths,
                                       const Vector& x, const Vector& z_ref,
                                       std::span<const Vector> z_others, std::uint64_t seed);

// ---- kernel drift after one SGD step ---------------------------------------

struct DriftConfig {
  int L = 3;
  int H = 2;
  std::vector<int> widths{32, 64, 128, 256};  // used for both nets
  int seeds = 20;
  double mu = 0.1;
  int n_train = 16;
  int n0 = 4;
  int m0 = 2;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct DriftRow {
  int width = 0;
  std::uint64_t seed = 0;
  double k_before = 0.0;
  double k_after = 0.0;
  double rel_change = 0.0;
};

std::vector<DriftRow> kernel_drift_experiment(const DriftConfig& cfg);
std::string drift_csv(const std::vector<DriftRow>& rows);
/// width,median_rel_change,n
std::string drift_summary_csv(const std::vector<DriftRow>& rows);
std::vector<std::pair<int, double>> drift_medians(const std::vector<DriftRow>& rows);

// ---- large learning rate ----------------------------------------------------

struct LargeLrConfig {
  std::vector<int> widths{100, 1000, 10000};
  int seeds = 5;
  std::optional<double> mu;  // unset: sqrt(width)
  int n0 = 16;
  int n_train = 200;
  int n_test = 200;
  int epochs = 20;
  int batch = 10;
  int p = 1;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct LargeLrRow {
  int width = 0;
  std::uint64_t seed = 0;
  double mu = 0.0;
  bool finite = true;
  double train_loss = 0.0;  // NaN when not finite
  double test_loss = 0.0;
  std::string note;
};

/// Two-layer ReLU MLP trained by SGD at mu(n) per width on a fixed teacher
/// task. Divergence is recorded in the row rather than thrown.
std::vector<LargeLrRow> large_lr_experiment(const LargeLrConfig& cfg);
std::string large_lr_csv(const std::vector<LargeLrRow>& rows);
std::vector<std::pair<int, double>> large_lr_median_test(const std::vector<LargeLrRow>& rows);

// ---- image regression -------------------------------------------------------

struct RegressionConfig {
  std::string idx_path;  // empty: synthetic images
  int image_size = 28;   // synthetic only
  int subsets = 10;
  int train_images = 50;  // per subset
  int test_images = 10;
  TaskConfig task{20, TaskMode::representation, 64, 10.0, 0};
  HyperKernelConfig arch{3, 2, 0, 0};  // n0 and m0 are filled from the task
  std::vector<HyperKernelKind> kernels{HyperKernelKind::nngp, HyperKernelKind::ntk};
  double eps = kDefaultRidge;
  bool hypernet_baseline = true;
  int hn_meta_width = 128;
  int hn_primary_width = 32;
  int hn_epochs = 5;
  int hn_batch = 20;
  double hn_lr = 0.01;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct RegressionRow {
  std::string method;
  double mse = 0.0;
};

struct RegressionData {
  ImageSet images;
  std::vector<TrainingSubset> subsets;
  std::vector<PixelSample> train_samples;  // union of subsets
  PixelTask test;
};

RegressionData prepare_regression(const RegressionConfig& cfg);

/// Kernel regression (subset ensemble) per kernel, the mean predictor and,
/// optionally, an SGD-trained hypernetwork on the same samples.
std::vector<RegressionRow> regression_experiment(const RegressionConfig& cfg);
std::string regression_csv(const std::vector<RegressionRow>& rows);

/// SGD hypernetwork baseline alone; returns test MSE.
double hypernet_baseline_mse(const RegressionConfig& cfg, const RegressionData& data);

}  // namespace hyperkernel
