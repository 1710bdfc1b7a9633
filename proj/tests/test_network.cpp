#include <gtest/gtest.h>

#include <cmath>

#include "hyperkernel/network.hpp"
#include "oracles.hpp"

namespace hyperkernel {
namespace {

Vector random_input(int n, Rng& rng) { return gaussian_vector(n, rng); }

// Resample x until no pre-activation sits within the kink threshold.
Vector off_kink_input(const MlpWeights& w, Rng& rng) {
  for (;;) {
    Vector x = random_input(w.input_dim(), rng);
    if (oracle::min_abs_preact(w.layers, x) > 1e-3) return x;
  }
}

HyperInput off_kink_hyper_input(const HypernetWeights& hw, Rng& rng) {
  for (;;) {
    HyperInput u{random_input(hw.meta.input_dim(), rng), random_input(hw.primary_widths[0], rng)};
    if (oracle::min_abs_preact_hyper(hw, u) > 1e-3) return u;
  }
}

TEST(InitMlp, DeterministicAndShaped) {
  const std::vector<int> widths{3, 5, 7, 2};
  const MlpWeights a = init_mlp(widths, 4), b = init_mlp(widths, 4);
  ASSERT_EQ(a.depth(), 3);
  for (int l = 0; l < 3; ++l) {
    EXPECT_EQ(a.layers[l].rows(), widths[l + 1]);
    EXPECT_EQ(a.layers[l].cols(), widths[l]);
    EXPECT_TRUE((a.layers[l].array() == b.layers[l].array()).all());
  }
  EXPECT_EQ(a.widths(), widths);
  EXPECT_EQ(a.param_count(), 15u + 35u + 14u);
}

TEST(InitMlp, EntryVariance) {
  const std::vector<int> widths{100, 100, 100};
  const MlpWeights w = init_mlp(widths, 7);
  for (const auto& W : w.layers) {
    const double var = W.array().square().mean() - std::pow(W.mean(), 2);
    EXPECT_NEAR(var, 1.0, 0.05);
  }
}

TEST(InitHypernet, MetaOutputMatchesPrimaryParameters) {
  const HypernetWeights hw = init_hypernet(HyperKernelConfig{3, 3, 4, 2}, 16, 5, 1);
  EXPECT_EQ(hw.primary_widths, (std::vector<int>{2, 5, 5, 1}));
  EXPECT_EQ(hw.meta.output_dim(), 2 * 5 + 5 * 5 + 5 * 1);
  EXPECT_EQ(hw.meta.depth(), 3);
  const HypernetWeights again = init_hypernet(HyperKernelConfig{3, 3, 4, 2}, 16, 5, 1);
  for (int l = 0; l < 3; ++l)
    EXPECT_TRUE((hw.meta.layers[l].array() == again.meta.layers[l].array()).all());
  const std::vector<int> bad{2, 3};
  EXPECT_THROW(init_hypernet(std::vector<int>{4}, bad, 2, 0), UnsupportedShape);
}

TEST(ForwardMlp, ZeroInput) {
  const MlpWeights w = init_mlp(std::vector<int>{3, 6, 6, 2}, 1);
  const MlpTrace t = forward_mlp(w, Vector::Zero(3));
  EXPECT_EQ(t.output().cwiseAbs().maxCoeff(), 0.0);
  for (const auto& q : t.q)
    if (q.size() > 0) EXPECT_EQ(q.cwiseAbs().maxCoeff(), 0.0);
}

TEST(ForwardMlp, LinearNetwork) {
  const MlpWeights w = init_mlp(std::vector<int>{4, 3}, 2);
  Rng rng(1, 1);
  const Vector x = random_input(4, rng);
  const Vector expect = w.layers[0] * x / 2.0;
  EXPECT_TRUE((forward_mlp(w, x).output().array() == expect.array()).all());
}

TEST(ForwardMlp, TraceInvariantsAndNaiveAgreement) {
  const MlpWeights w = init_mlp(std::vector<int>{3, 8, 8, 2}, 3);
  Rng rng(2, 2);
  const Vector x = random_input(3, rng);
  const MlpTrace t = forward_mlp(w, x);
  EXPECT_TRUE((t.q[0].array() == x.array()).all());
  for (int l = 1; l < w.depth(); ++l) {
    for (Eigen::Index i = 0; i < t.y[l].size(); ++i) {
      EXPECT_EQ(t.q[l](i), std::sqrt(2.0) * std::max(0.0, t.y[l](i)));
      EXPECT_EQ(t.active[l](i), t.y[l](i) > 0 ? 1.0 : 0.0);
    }
  }
  EXPECT_LT(oracle::max_rel_error(t.output(), oracle::naive_mlp(w.layers, x)), 1e-13);
}

TEST(ForwardMlp, PositiveHomogeneity) {
  const MlpWeights w = init_mlp(std::vector<int>{3, 10, 10, 2}, 4);
  Rng rng(3, 3);
  const Vector x = random_input(3, rng);
  for (double c : {0.5, 2.0, 7.0}) {
    const Vector a = forward_mlp(w, c * x).output(), b = c * forward_mlp(w, x).output();
    EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, b.cwiseAbs().maxCoeff()));
  }
}

TEST(ForwardMlp, DimensionMismatch) {
  const MlpWeights w = init_mlp(std::vector<int>{3, 4, 1}, 4);
  EXPECT_THROW(forward_mlp(w, Vector::Zero(2)), DimensionMismatch);
}

TEST(JacobianMlp, LastLayerIsPreviousActivation) {
  const MlpWeights w = init_mlp(std::vector<int>{3, 6, 4}, 5);
  Rng rng(4, 4);
  const Vector x = random_input(3, rng);
  const MlpTrace t = forward_mlp(w, x);
  const auto J = jacobian_mlp(w, t, 2);
  for (Eigen::Index r = 0; r < 4; ++r) {
    const Vector row = J.back().row(r).transpose();
    if (r == 2)
      EXPECT_LT((row - t.q[1] / std::sqrt(6.0)).norm(), 1e-15);
    else
      EXPECT_EQ(row.norm(), 0.0);
  }
}

TEST(JacobianMlp, SingleLayer) {
  const MlpWeights w = init_mlp(std::vector<int>{5, 1}, 6);
  Rng rng(5, 5);
  const Vector x = random_input(5, rng);
  const auto J = jacobian_mlp(w, x, 0);
  EXPECT_LT((J[0].row(0).transpose() - x / std::sqrt(5.0)).norm(), 1e-15);
}

TEST(JacobianMlp, MatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const MlpWeights w = init_mlp(std::vector<int>{3, 8, 8, 2}, 100 + s);
    Rng rng(s, 6);
    const Vector x = off_kink_input(w, rng);
    for (int d = 0; d < 2; ++d) {
      const auto J = jacobian_mlp(w, x, d);
      const auto F = oracle::fd_mlp_jacobian(w, x, d);
      double num = 0, den = 0;
      for (std::size_t l = 0; l < J.size(); ++l) {
        num = std::max(num, (J[l] - F[l]).cwiseAbs().maxCoeff());
        den = std::max(den, J[l].cwiseAbs().maxCoeff());
      }
      EXPECT_LT(num / den, 1e-5) << "seed " << s << " output " << d;
    }
  }
}

TEST(BackwardMlp, LinearInCotangent) {
  const MlpWeights w = init_mlp(std::vector<int>{3, 6, 3}, 7);
  Rng rng(7, 7);
  const MlpTrace t = forward_mlp(w, random_input(3, rng));
  const Vector c1 = random_input(3, rng), c2 = random_input(3, rng);
  const auto a = backward_mlp(w, t, c1), b = backward_mlp(w, t, c2), s = backward_mlp(w, t, c1 + 2 * c2);
  for (int l = 1; l <= w.depth(); ++l) EXPECT_LT((s[l] - a[l] - 2 * b[l]).norm(), 1e-12);
}

TEST(ForwardHypernet, SingleLayerPrimary) {
  const HypernetWeights hw = init_hypernet(HyperKernelConfig{2, 1, 3, 4}, 8, 1, 9);
  Rng rng(8, 8);
  const HyperInput u{random_input(3, rng), random_input(4, rng)};
  const Vector v = forward_mlp(hw.meta, u.x).output();
  EXPECT_NEAR(forward_hypernet(hw, u).output(), v.dot(u.z) / 2.0, 1e-14);
}

TEST(ForwardHypernet, FusedEqualsTwoStep) {
  const HypernetWeights hw = init_hypernet(HyperKernelConfig{3, 3, 3, 2}, 8, 4, 10);
  Rng rng(9, 9);
  const HyperInput u{random_input(3, rng), random_input(2, rng)};
  const Vector v = forward_mlp(hw.meta, u.x).output();
  const double two_step = forward_primary(unpack_primary(v, hw.primary_widths), u.z).output();
  EXPECT_EQ(forward_hypernet(hw, u).output(), two_step);
  EXPECT_NEAR(two_step, oracle::naive_hyper(hw.meta.layers, hw.primary_widths, u), 1e-13);
}

TEST(ForwardHypernet, HomogeneousInZ) {
  const HypernetWeights hw = init_hypernet(HyperKernelConfig{2, 3, 3, 2}, 8, 4, 11);
  Rng rng(10, 10);
  const HyperInput u{random_input(3, rng), random_input(2, rng)};
  const double base = forward_hypernet(hw, u).output();
  for (double c : {0.25, 3.0}) {
    const HyperInput uc{u.x, c * u.z};
    EXPECT_NEAR(forward_hypernet(hw, uc).output(), c * base, 1e-12 * std::max(1.0, std::abs(base)));
  }
}

TEST(UnpackPrimary, LayerMajorRowMajor) {
  const std::vector<int> m{2, 3, 1};
  Vector v(9);
  for (int i = 0; i < 9; ++i) v(i) = i;
  const auto V = unpack_primary(v, m);
  EXPECT_EQ(V[0](0, 1), 1.0);
  EXPECT_EQ(V[0](1, 0), 2.0);
  EXPECT_EQ(V[1](0, 2), 8.0);
  EXPECT_THROW(unpack_primary(Vector::Zero(8), m), DimensionMismatch);
}

TEST(GradHypernet, MatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const HypernetWeights hw = init_hypernet(HyperKernelConfig{3, 2, 3, 2}, 8, 4, 200 + s);
    Rng rng(s, 11);
    const HyperInput u = off_kink_hyper_input(hw, rng);
    const Vector g = grad_hypernet(hw, u);
    EXPECT_LT(oracle::max_rel_error(g, oracle::fd_hyper_gradient(hw, u)), 1e-5) << "seed " << s;
  }
}

TEST(GradHypernet, SingleLayerPrimaryIsZWeightedMetaJacobian) {
  const HypernetWeights hw = init_hypernet(HyperKernelConfig{2, 1, 3, 4}, 6, 1, 12);
  Rng rng(12, 12);
  const HyperInput u{random_input(3, rng), random_input(4, rng)};
  const Vector g = grad_hypernet(hw, u);
  Vector expect = Vector::Zero(g.size());
  for (int d = 0; d < 4; ++d) {
    const auto J = jacobian_mlp(hw.meta, u.x, d);
    Eigen::Index off = 0;
    for (const auto& Jl : J) {
      for (Eigen::Index i = 0; i < Jl.rows(); ++i)
        for (Eigen::Index j = 0; j < Jl.cols(); ++j) expect(off++) += u.z(d) / 2.0 * Jl(i, j);
    }
  }
  EXPECT_LT(oracle::max_rel_error(g, expect), 1e-13);
}

TEST(EmpiricalKernels, SelfInnerProduct) {
  const HypernetWeights hw = init_hypernet(HyperKernelConfig{3, 3, 3, 2}, 16, 8, 13);
  Rng rng(13, 13);
  const HyperInput u{random_input(3, rng), random_input(2, rng)};
  const EmpiricalKernels k = empirical_kernels(hw, u, u);
  EXPECT_NEAR(grad_hypernet(hw, u).squaredNorm(), k.k_h, 1e-12 * k.k_h);
  EXPECT_GE(k.k_h, 0.0);
  EXPECT_GE(k.k_g, 0.0);
}

TEST(EmpiricalKernels, Symmetric) {
  const HypernetWeights hw = init_hypernet(HyperKernelConfig{3, 3, 3, 2}, 16, 8, 14);
  Rng rng(14, 14);
  const HyperInput u{random_input(3, rng), random_input(2, rng)};
  const HyperInput v{random_input(3, rng), random_input(2, rng)};
  const auto a = empirical_kernels(hw, u, v), b = empirical_kernels(hw, v, u);
  EXPECT_NEAR(a.k_h, b.k_h, 1e-12 * std::abs(a.k_h));
  EXPECT_NEAR(a.k_g, b.k_g, 1e-12 * std::abs(a.k_g));
}

// k_h against dh/dv^T J_f(x) J_f(x')^T dh/dv with J_f materialized densely.
TEST(EmpiricalKernels, DenseChainOracle) {
  const HypernetWeights hw = init_hypernet(HyperKernelConfig{3, 2, 3, 2}, 6, 3, 15);
  Rng rng(15, 15);
  const HyperInput u{random_input(3, rng), random_input(2, rng)};
  const HyperInput v{random_input(3, rng), random_input(2, rng)};
  const int P = hw.meta.output_dim();
  const Eigen::Index np = static_cast<Eigen::Index>(hw.meta.param_count());
  auto dense_jacobian = [&](const Vector& x) {
    Eigen::MatrixXd J(P, np);
    for (int d = 0; d < P; ++d) {
      Eigen::Index off = 0;
      for (const auto& Jl : jacobian_mlp(hw.meta, x, d))
        for (Eigen::Index i = 0; i < Jl.rows(); ++i)
          for (Eigen::Index j = 0; j < Jl.cols(); ++j) J(d, off++) = Jl(i, j);
    }
    return J;
  };
  const Eigen::MatrixXd Kf = dense_jacobian(u.x) * dense_jacobian(v.x).transpose();
  const Vector gu = hypernet_grad_parts(hw, u).dh_dv, gv = hypernet_grad_parts(hw, v).dh_dv;
  const double slow = gu.dot(Kf * gv);
  EXPECT_NEAR(empirical_kernels(hw, u, v).k_h, slow, 1e-10 * std::max(1.0, std::abs(slow)));
}

TEST(EmpiricalKernels, MetaKernelNearlyDiagonalAtWidth2048) {
  const std::vector<int> hidden{2048}, primary{2, 4, 1};
  const HypernetWeights hw = init_hypernet(hidden, primary, 3, 16);
  Rng rng(16, 16);
  const HyperInput u{random_input(3, rng), random_input(2, rng)};
  // self-pair: the diagonal is Theta^f(x, x), bounded away from zero
  const EmpiricalKernels k = empirical_kernels(hw, u, u, 0);
  EXPECT_LT(k.k_f_offdiag_rms / std::abs(k.k_f_diag_mean), 0.1);
}

TEST(EmpiricalKernels, GramIsPsd) {
  const HypernetWeights hw = init_hypernet(HyperKernelConfig{3, 3, 3, 2}, 16, 8, 17);
  Rng rng(17, 17);
  std::vector<HyperInput> us;
  for (int i = 0; i < 15; ++i) us.push_back({random_input(3, rng), random_input(2, rng)});
  SymMatrix K(15, 15);
  for (int i = 0; i < 15; ++i)
    for (int j = 0; j < 15; ++j) K(i, j) = empirical_kernels(hw, us[i], us[j]).k_h;
  K = (K + K.transpose()) / 2;
  EXPECT_GE(min_eigenvalue(K), -1e-8 * K.trace() / 15);
}

std::vector<Sample> toy_data(int n, std::uint64_t seed) {
  Rng rng(seed, 1);
  std::vector<Sample> data;
  for (int i = 0; i < n; ++i) {
    Sample s{{random_input(3, rng), random_input(2, rng)}, 0.0};
    s.y = std::sin(s.u.x.sum()) * s.u.z(0);
    data.push_back(s);
  }
  return data;
}

TEST(SgdTrain, ZeroLearningRateLeavesWeights) {
  const HypernetWeights hw = init_hypernet(HyperKernelConfig{3, 2, 3, 2}, 16, 8, 18);
  const auto data = toy_data(10, 1);
  const auto res = sgd_train(hw, data, SgdConfig{0.0, 3, 4, 2, 5});
  for (int l = 0; l < hw.meta.depth(); ++l)
    EXPECT_TRUE((res.weights.meta.layers[l].array() == hw.meta.layers[l].array()).all());
  EXPECT_EQ(res.epoch_loss.size(), 3u);
}

TEST(SgdTrain, OverfitsSingleSample) {
  const HypernetWeights hw = init_hypernet(HyperKernelConfig{3, 2, 3, 2}, 64, 64, 19);
  const auto data = toy_data(1, 2);
  // step size from the empirical kernel: the residual contracts by (1 - 2 mu k)
  const double k = empirical_kernels(hw, data[0].u, data[0].u, 0).k_h;
  const auto res = sgd_train(hw, data, SgdConfig{0.25 / k, 500, 1, 2, 0});
  EXPECT_LT(res.epoch_loss.back(), 1e-3);
}

TEST(SgdTrain, SmoothedLossDecreases) {
  const HypernetWeights hw = init_hypernet(HyperKernelConfig{3, 2, 3, 2}, 64, 16, 20);
  const auto data = toy_data(50, 3);
  // one step per epoch, so epoch_loss is the full loss after every step
  const auto res = sgd_train(hw, data, SgdConfig{0.02, 100, 50, 2, 1});
  std::vector<double> ma;
  for (std::size_t i = 10; i <= res.epoch_loss.size(); ++i) {
    double s = 0;
    for (std::size_t j = i - 10; j < i; ++j) s += res.epoch_loss[j];
    ma.push_back(s / 10);
  }
  for (std::size_t i = 1; i < ma.size(); ++i) EXPECT_LE(ma[i], ma[i - 1]) << "window " << i;
}

TEST(SgdTrain, DivergenceIsReported) {
  const HypernetWeights hw = init_hypernet(HyperKernelConfig{3, 2, 3, 2}, 16, 8, 21);
  const auto data = toy_data(10, 4);
  EXPECT_THROW(sgd_train(hw, data, SgdConfig{1e6, 50, 2, 2, 0}), NonFiniteLoss);
}

TEST(SgdTrain, RejectsBadExponent) {
  const HypernetWeights hw = init_hypernet(HyperKernelConfig{2, 2, 3, 2}, 4, 4, 22);
  const auto data = toy_data(2, 5);
  EXPECT_THROW(sgd_train(hw, data, SgdConfig{0.1, 1, 1, 3, 0}), Error);
}

TEST(SgdTrain, MlpVariantMatchesLossDefinition) {
  const MlpWeights w = init_mlp(std::vector<int>{3, 8, 1}, 23);
  const auto data = toy_data(5, 6);
  double manual = 0;
  for (const auto& s : data) manual += std::abs(forward_mlp(w, s.u.x).output()(0) - s.y);
  EXPECT_NEAR(mean_loss(w, data, 1), manual / 5, 1e-14);
  const auto res = sgd_train(w, data, SgdConfig{0.0, 1, 1, 1, 0});
  EXPECT_TRUE((res.weights.layers[0].array() == w.layers[0].array()).all());
}

}  // namespace
}  // namespace hyperkernel
