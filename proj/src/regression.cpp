#include "hyperkernel/regression.hpp"

#include <map>

#include "hyperkernel/parallel.hpp"

namespace hyperkernel {

void GramSystem::check() const {
  if (K.rows() != K.cols() || K.rows() != Y.size())
    throw DimensionMismatch("GramSystem: K is " + std::to_string(K.rows()) + "x" +
                            std::to_string(K.cols()) + " but Y has " + std::to_string(Y.size()));
  if (eps < 0) throw Error("GramSystem: eps must be nonnegative");
}

Vector GramSystem::solve() const {
  check();
  return ridge_solve(K, Y, eps);
}

SymMatrix gram_matrix(std::span<const HyperInput> inputs, const KernelFn& kernel, int threads) {
  const auto n = static_cast<Eigen::Index>(inputs.size());
  SymMatrix K(n, n);
  parallel_for(inputs.size(), threads, [&](std::size_t i) {
    for (std::size_t j = i; j < inputs.size(); ++j) {
      const double k = kernel(inputs[i], inputs[j]);
      K(i, j) = k;
      K(j, i) = k;
    }
  });
  return K;
}

Eigen::MatrixXd cross_gram(std::span<const HyperInput> test, std::span<const HyperInput> train,
                           const KernelFn& kernel, int threads) {
  Eigen::MatrixXd Kx(test.size(), train.size());
  parallel_for(test.size(), threads, [&](std::size_t i) {
    for (std::size_t j = 0; j < train.size(); ++j) Kx(i, j) = kernel(test[i], train[j]);
  });
  return Kx;
}

namespace {

void check_train(std::span<const HyperInput> train, const Vector& Y) {
  if (train.empty()) throw Error("fit_predict: empty training set");
  if (static_cast<Eigen::Index>(train.size()) != Y.size())
    throw DimensionMismatch("fit_predict: " + std::to_string(train.size()) + " inputs but " +
                            std::to_string(Y.size()) + " labels");
}

}  // namespace

Vector fit_predict(std::span<const HyperInput> train, const Vector& Y,
                   std::span<const HyperInput> test, const KernelFn& kernel, double eps,
                   int threads) {
  check_train(train, Y);
  const GramSystem sys{gram_matrix(train, kernel, threads), Y, eps};
  return cross_gram(test, train, kernel, threads) * sys.solve();
}

Vector ensemble_predict(std::span<const TrainingSubset> subsets, std::span<const HyperInput> test,
                        const KernelFn& kernel, double eps, int threads) {
  if (subsets.empty()) throw Error("ensemble_predict: no subsets");
  Vector total = Vector::Zero(static_cast<Eigen::Index>(test.size()));
  for (const auto& s : subsets) total += fit_predict(s.inputs, s.labels, test, kernel, eps, threads);
  return total / static_cast<double>(subsets.size());
}

HyperKernelKind parse_kernel_kind(const std::string& s) {
  if (s == "nngp") return HyperKernelKind::nngp;
  if (s == "ntk") return HyperKernelKind::ntk;
  throw ConfigError("unknown kernel '" + s + "' (expected nngp or ntk)");
}

std::string to_string(HyperKernelKind kind) { return kind == HyperKernelKind::nngp ? "nngp" : "ntk"; }

KernelFn hyper_kernel_fn(const HyperKernelConfig& cfg, HyperKernelKind kind) {
  cfg.validate();
  if (kind == HyperKernelKind::nngp)
    return [cfg](const HyperInput& a, const HyperInput& b) { return hyper_nngp_value(a, b, cfg); };
  return [cfg](const HyperInput& a, const HyperInput& b) { return hyper_ntk(a, b, cfg).theta_h; };
}

// ---- factorized path ------------------------------------------------------

namespace {

struct MetaPair {
  CovPair out;     // S^L block
  double theta_f;  // meta NTK
};

// Dense group id per input; representatives are appended to `reps`.
struct Groups {
  std::vector<int> of_input;
};

Groups group_inputs(std::span<const HyperInput> inputs, std::map<std::int64_t, int>& ids,
                    std::vector<const Vector*>& reps) {
  Groups g;
  g.of_input.reserve(inputs.size());
  for (const auto& u : inputs) {
    int id;
    if (u.group < 0) {
      id = static_cast<int>(reps.size());
      reps.push_back(&u.x);
    } else {
      auto [it, fresh] = ids.try_emplace(u.group, static_cast<int>(reps.size()));
      if (fresh) reps.push_back(&u.x);
      id = it->second;
    }
    g.of_input.push_back(id);
  }
  return g;
}

MetaPair meta_pair(const Vector& x, const Vector& x_prime, int L) {
  const KernelTrajectory t = mlp_nngp(x, x_prime, L);
  return {t.cov.back(), mlp_ntk(t)};
}

CovPair input_block(const Vector& a, const Vector& b) {
  const double dim = static_cast<double>(a.size());
  return {a.squaredNorm() / dim, a.dot(b) / dim, b.squaredNorm() / dim};
}

double pair_value(const HyperInput& a, const HyperInput& b, const MetaPair& meta,
                  const HyperKernelConfig& cfg, HyperKernelKind kind) {
  if (a.z.size() != cfg.m0 || b.z.size() != cfg.m0)
    throw DimensionMismatch("hyper gram: z dim does not match config");
  const KernelTrajectory primary = primary_nngp(input_block(a.z, b.z), meta.out, cfg.H);
  if (kind == HyperKernelKind::nngp) return primary.cov.back().s12;
  return meta.theta_f * primary_ntk(primary, meta.out.s12);
}

void check_x(std::span<const HyperInput> inputs, const HyperKernelConfig& cfg) {
  for (const auto& u : inputs)
    if (u.x.size() != cfg.n0) throw DimensionMismatch("hyper gram: x dim does not match config");
}

}  // namespace

FactorizedHyperGram::FactorizedHyperGram(const HyperKernelConfig& cfg, HyperKernelKind kind,
                                         int threads)
    : cfg_(cfg), kind_(kind), threads_(threads) {
  cfg_.validate();
}

SymMatrix FactorizedHyperGram::gram(std::span<const HyperInput> inputs) const {
  check_x(inputs, cfg_);
  std::map<std::int64_t, int> ids;
  std::vector<const Vector*> reps;
  const Groups g = group_inputs(inputs, ids, reps);
  const std::size_t G = reps.size();

  std::vector<MetaPair> meta(G * G);
  parallel_for(G, threads_, [&](std::size_t a) {
    for (std::size_t b = a; b < G; ++b) {
      meta[a * G + b] = meta_pair(*reps[a], *reps[b], cfg_.L);
      const MetaPair& m = meta[a * G + b];
      meta[b * G + a] = {{m.out.s22, m.out.s12, m.out.s11}, m.theta_f};
    }
  });

  const auto n = static_cast<Eigen::Index>(inputs.size());
  SymMatrix K(n, n);
  parallel_for(inputs.size(), threads_, [&](std::size_t i) {
    for (std::size_t j = i; j < inputs.size(); ++j) {
      const MetaPair& m = meta[g.of_input[i] * G + g.of_input[j]];
      const double k = pair_value(inputs[i], inputs[j], m, cfg_, kind_);
      K(i, j) = k;
      K(j, i) = k;
    }
  });
  return K;
}

Eigen::MatrixXd FactorizedHyperGram::cross(std::span<const HyperInput> test,
                                           std::span<const HyperInput> train) const {
  check_x(test, cfg_);
  check_x(train, cfg_);
  std::map<std::int64_t, int> test_ids, train_ids;
  std::vector<const Vector*> test_reps, train_reps;
  const Groups gt = group_inputs(test, test_ids, test_reps);
  const Groups gr = group_inputs(train, train_ids, train_reps);
  const std::size_t A = test_reps.size(), B = train_reps.size();

  std::vector<MetaPair> meta(A * B);
  parallel_for(A, threads_, [&](std::size_t a) {
    for (std::size_t b = 0; b < B; ++b) meta[a * B + b] = meta_pair(*test_reps[a], *train_reps[b], cfg_.L);
  });

  Eigen::MatrixXd Kx(test.size(), train.size());
  parallel_for(test.size(), threads_, [&](std::size_t i) {
    for (std::size_t j = 0; j < train.size(); ++j)
      Kx(i, j) = pair_value(test[i], train[j], meta[gt.of_input[i] * B + gr.of_input[j]], cfg_, kind_);
  });
  return Kx;
}

Vector fit_predict_hyper(std::span<const HyperInput> train, const Vector& Y,
                         std::span<const HyperInput> test, const FactorizedHyperGram& builder,
                         double eps) {
  check_train(train, Y);
  const GramSystem sys{builder.gram(train), Y, eps};
  return builder.cross(test, train) * sys.solve();
}

Vector ensemble_predict_hyper(std::span<const TrainingSubset> subsets,
                              std::span<const HyperInput> test, const FactorizedHyperGram& builder,
                              double eps) {
  if (subsets.empty()) throw Error("ensemble_predict: no subsets");
  Vector total = Vector::Zero(static_cast<Eigen::Index>(test.size()));
  for (const auto& s : subsets) total += fit_predict_hyper(s.inputs, s.labels, test, builder, eps);
  return total / static_cast<double>(subsets.size());
}

double mean_squared_error(const Vector& pred, const Vector& truth) {
  if (pred.size() != truth.size() || pred.size() == 0)
    throw DimensionMismatch("mean_squared_error: size mismatch");
  return (pred - truth).squaredNorm() / static_cast<double>(pred.size());
}

}  // namespace hyperkernel
