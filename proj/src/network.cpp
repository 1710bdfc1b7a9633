#include "hyperkernel/network.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace hyperkernel {

namespace {

constexpr double kSqrt2 = std::numbers::sqrt2;

Vector relu_scaled(const Vector& y) { return kSqrt2 * y.cwiseMax(0.0); }

Vector indicator(const Vector& y) { return (y.array() > 0.0).cast<double>().matrix(); }

double inv_sqrt(Eigen::Index n) { return 1.0 / std::sqrt(static_cast<double>(n)); }

}  // namespace

std::vector<int> MlpWeights::widths() const {
  std::vector<int> out;
  out.reserve(layers.size() + 1);
  out.push_back(input_dim());
  for (const auto& W : layers) out.push_back(static_cast<int>(W.rows()));
  return out;
}

std::size_t MlpWeights::param_count() const {
  std::size_t n = 0;
  for (const auto& W : layers) n += static_cast<std::size_t>(W.size());
  return n;
}

MlpWeights init_mlp(std::span<const int> widths, std::uint64_t seed, std::uint64_t stream) {
  if (widths.size() < 2) throw Error("init_mlp: need at least input and output widths");
  if (std::any_of(widths.begin(), widths.end(), [](int n) { return n < 1; }))
    throw Error("init_mlp: widths must be >= 1");
  MlpWeights w;
  w.layers.reserve(widths.size() - 1);
  for (std::size_t l = 1; l < widths.size(); ++l) {
    w.layers.push_back(gaussian_matrix(static_cast<std::size_t>(widths[l]),
                                       static_cast<std::size_t>(widths[l - 1]), seed,
                                       mix64(stream) + l));
  }
  return w;
}

MlpTrace forward_mlp(const MlpWeights& w, const Vector& x) {
  const int L = w.depth();
  if (x.size() != w.input_dim())
    throw DimensionMismatch("forward_mlp: input has dim " + std::to_string(x.size()) +
                            ", expected " + std::to_string(w.input_dim()));
  MlpTrace t;
  t.y.resize(L + 1);
  t.q.resize(L + 1);
  t.active.resize(L + 1);
  t.q[0] = x;
  for (int l = 1; l <= L; ++l) {
    const Matrix& W = w.layers[l - 1];
    t.y[l] = W * t.q[l - 1] * inv_sqrt(W.cols());
    if (l < L) {
      t.active[l] = indicator(t.y[l]);
      t.q[l] = relu_scaled(t.y[l]);
    }
  }
  return t;
}

std::vector<Vector> backward_mlp(const MlpWeights& w, const MlpTrace& trace, const Vector& c) {
  const int L = w.depth();
  if (c.size() != w.output_dim())
    throw DimensionMismatch("backward_mlp: cotangent has dim " + std::to_string(c.size()));
  std::vector<Vector> delta(L + 1);
  delta[L] = c;
  for (int l = L - 1; l >= 1; --l) {
    const Matrix& W = w.layers[l];  // W^{l+1}
    delta[l] = (kSqrt2 * inv_sqrt(W.cols())) *
               trace.active[l].cwiseProduct(W.transpose() * delta[l + 1]);
  }
  return delta;
}

namespace {

// backward_mlp for c = e_d without the dense product through W^L.
std::vector<Vector> backward_onehot(const MlpWeights& w, const MlpTrace& trace, int d) {
  const int L = w.depth();
  if (d < 0 || d >= w.output_dim())
    throw DimensionMismatch("output index " + std::to_string(d) + " out of range");
  std::vector<Vector> delta(L + 1);
  delta[L] = Vector::Zero(w.output_dim());
  delta[L](d) = 1.0;
  if (L == 1) return delta;
  const Matrix& WL = w.layers[L - 1];
  delta[L - 1] =
      (kSqrt2 * inv_sqrt(WL.cols())) * trace.active[L - 1].cwiseProduct(WL.row(d).transpose());
  for (int l = L - 2; l >= 1; --l) {
    const Matrix& W = w.layers[l];
    delta[l] = (kSqrt2 * inv_sqrt(W.cols())) *
               trace.active[l].cwiseProduct(W.transpose() * delta[l + 1]);
  }
  return delta;
}

}  // namespace

std::vector<Matrix> jacobian_mlp(const MlpWeights& w, const MlpTrace& trace, int d) {
  const auto delta = backward_onehot(w, trace, d);
  std::vector<Matrix> grads;
  grads.reserve(w.layers.size());
  for (int l = 1; l <= w.depth(); ++l) {
    const Vector& q = trace.q[l - 1];
    grads.push_back(delta[l] * q.transpose() * inv_sqrt(q.size()));
  }
  return grads;
}

std::vector<Matrix> jacobian_mlp(const MlpWeights& w, const Vector& x, int d) {
  return jacobian_mlp(w, forward_mlp(w, x), d);
}

HyperKernelConfig HypernetWeights::config() const {
  return {meta.depth(), primary_depth(), meta.input_dim(), primary_widths.front()};
}

std::size_t primary_param_count(std::span<const int> primary_widths) {
  std::size_t n = 0;
  for (std::size_t l = 1; l < primary_widths.size(); ++l)
    n += static_cast<std::size_t>(primary_widths[l]) * static_cast<std::size_t>(primary_widths[l - 1]);
  return n;
}

HypernetWeights init_hypernet(std::span<const int> meta_hidden, std::span<const int> primary_widths,
                              int n0, std::uint64_t seed) {
  if (primary_widths.size() < 2 || primary_widths.back() != 1)
    throw UnsupportedShape("init_hypernet: primary widths must end in a scalar output");
  std::vector<int> meta_widths;
  meta_widths.push_back(n0);
  meta_widths.insert(meta_widths.end(), meta_hidden.begin(), meta_hidden.end());
  meta_widths.push_back(static_cast<int>(primary_param_count(primary_widths)));
  HypernetWeights hw;
  hw.meta = init_mlp(meta_widths, seed, 0x6d657461);
  hw.primary_widths.assign(primary_widths.begin(), primary_widths.end());
  return hw;
}

HypernetWeights init_hypernet(const HyperKernelConfig& cfg, int meta_width, int primary_width,
                              std::uint64_t seed) {
  cfg.validate();
  if (meta_width < 1 || primary_width < 1) throw Error("init_hypernet: widths must be >= 1");
  std::vector<int> meta_hidden(cfg.L - 1, meta_width);
  std::vector<int> primary(cfg.H + 1, primary_width);
  primary.front() = cfg.m0;
  primary.back() = 1;
  return init_hypernet(meta_hidden, primary, cfg.n0, seed);
}

std::vector<Matrix> unpack_primary(const Vector& v, std::span<const int> primary_widths) {
  const std::size_t expected = primary_param_count(primary_widths);
  if (static_cast<std::size_t>(v.size()) != expected)
    throw DimensionMismatch("unpack_primary: got " + std::to_string(v.size()) +
                            " values, expected " + std::to_string(expected));
  std::vector<Matrix> V;
  V.reserve(primary_widths.size() - 1);
  Eigen::Index offset = 0;
  for (std::size_t l = 1; l < primary_widths.size(); ++l) {
    const Eigen::Index rows = primary_widths[l], cols = primary_widths[l - 1];
    V.push_back(Eigen::Map<const Matrix>(v.data() + offset, rows, cols));
    offset += rows * cols;
  }
  return V;
}

PrimaryTrace forward_primary(std::span<const Matrix> V, const Vector& z) {
  const int H = static_cast<int>(V.size());
  if (z.size() != V.front().cols())
    throw DimensionMismatch("forward_primary: z has dim " + std::to_string(z.size()) +
                            ", expected " + std::to_string(V.front().cols()));
  PrimaryTrace t;
  t.g.resize(H + 1);
  t.a.resize(H + 1);
  t.active.resize(H + 1);
  t.a[0] = z;
  for (int l = 1; l <= H; ++l) {
    const Matrix& Vl = V[l - 1];
    t.g[l] = Vl * t.a[l - 1] * inv_sqrt(Vl.cols());
    if (l < H) {
      t.active[l] = indicator(t.g[l]);
      t.a[l] = relu_scaled(t.g[l]);
    }
  }
  return t;
}

Vector primary_grad(std::span<const Matrix> V, const PrimaryTrace& trace) {
  const int H = static_cast<int>(V.size());
  Eigen::Index total = 0;
  std::vector<Eigen::Index> offsets(H + 1, 0);
  for (int l = 1; l <= H; ++l) {
    offsets[l] = total;
    total += V[l - 1].size();
  }
  Vector grad(total);
  Vector beta = Vector::Ones(1);
  for (int l = H; l >= 1; --l) {
    const Vector& a = trace.a[l - 1];
    Eigen::Map<Matrix> block(grad.data() + offsets[l], V[l - 1].rows(), V[l - 1].cols());
    block.noalias() = beta * a.transpose() * inv_sqrt(a.size());
    if (l > 1) {
      beta = (kSqrt2 * inv_sqrt(V[l - 1].cols())) *
             trace.active[l - 1].cwiseProduct(V[l - 1].transpose() * beta);
    }
  }
  return grad;
}

HypernetTrace forward_hypernet(const HypernetWeights& hw, const HyperInput& u) {
  HypernetTrace t;
  t.meta = forward_mlp(hw.meta, u.x);
  t.V = unpack_primary(t.meta.output(), hw.primary_widths);
  t.primary = forward_primary(t.V, u.z);
  return t;
}

HypernetGrad hypernet_grad_parts(const HypernetWeights& hw, const HyperInput& u) {
  HypernetGrad out;
  out.trace = forward_hypernet(hw, u);
  out.dh_dv = primary_grad(out.trace.V, out.trace.primary);
  out.delta = backward_mlp(hw.meta, out.trace.meta, out.dh_dv);
  return out;
}

Vector grad_hypernet(const HypernetWeights& hw, const HyperInput& u) {
  const HypernetGrad parts = hypernet_grad_parts(hw, u);
  Vector flat(static_cast<Eigen::Index>(hw.meta.param_count()));
  Eigen::Index offset = 0;
  for (int l = 1; l <= hw.meta.depth(); ++l) {
    const Vector& q = parts.trace.meta.q[l - 1];
    Eigen::Map<Matrix> block(flat.data() + offset, parts.delta[l].size(), q.size());
    block.noalias() = parts.delta[l] * q.transpose() * inv_sqrt(q.size());
    offset += block.size();
  }
  return flat;
}

double factored_inner(std::span<const Vector> delta_a, std::span<const Vector> q_a,
                      std::span<const Vector> delta_b, std::span<const Vector> q_b) {
  double total = 0.0;
  for (std::size_t l = 1; l < delta_a.size(); ++l) {
    const Vector& qa = q_a[l - 1];
    total += delta_a[l].dot(delta_b[l]) * qa.dot(q_b[l - 1]) / static_cast<double>(qa.size());
  }
  return total;
}

EmpiricalKernels empirical_kernels(const HypernetWeights& hw, const HyperInput& u,
                                   const HyperInput& u_prime, int kf_probes,
                                   std::uint64_t probe_seed) {
  const HypernetGrad a = hypernet_grad_parts(hw, u);
  const HypernetGrad b = hypernet_grad_parts(hw, u_prime);
  EmpiricalKernels out;
  out.k_h = factored_inner(a.delta, a.trace.meta.q, b.delta, b.trace.meta.q);
  out.k_g = a.dh_dv.dot(b.dh_dv);

  const int n_out = hw.meta.output_dim();
  std::vector<int> probes(n_out);
  std::iota(probes.begin(), probes.end(), 0);
  if (kf_probes > 0 && kf_probes < n_out) {
    Rng rng(probe_seed, 0x6b66);
    std::vector<int> picked;
    std::sample(probes.begin(), probes.end(), std::back_inserter(picked), kf_probes,
                rng.engine());
    probes = std::move(picked);
  }
  std::vector<std::vector<Vector>> da, db;
  for (int d : probes) {
    da.push_back(backward_onehot(hw.meta, a.trace.meta, d));
    db.push_back(backward_onehot(hw.meta, b.trace.meta, d));
  }
  double diag = 0.0, off_sq = 0.0;
  std::size_t n_off = 0;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    for (std::size_t j = 0; j < probes.size(); ++j) {
      const double k = factored_inner(da[i], a.trace.meta.q, db[j], b.trace.meta.q);
      if (i == j) {
        diag += k;
      } else {
        off_sq += k * k;
        ++n_off;
      }
    }
  }
  out.k_f_diag_mean = diag / static_cast<double>(probes.size());
  out.k_f_offdiag_rms = n_off ? std::sqrt(off_sq / static_cast<double>(n_off)) : 0.0;
  return out;
}

double loss_value(double prediction, double label, int p) {
  const double r = std::abs(prediction - label);
  return p == 1 ? r : r * r;
}

namespace {

double loss_slope(double prediction, double label, int p) {
  const double r = prediction - label;
  if (p == 1) return r > 0 ? 1.0 : (r < 0 ? -1.0 : 0.0);
  return 2.0 * r;
}

struct Pass {
  double prediction;
  const MlpTrace* trace;
  std::vector<Vector> delta;
};

// Shared SGD loop. `pass` runs forward + backward for one sample and returns
// the prediction with the meta deltas for d(prediction)/dw.
template <typename Weights, typename MetaOf, typename PassFn>
TrainResult<Weights> sgd_loop(Weights weights, std::span<const Sample> data, const SgdConfig& cfg,
                              MetaOf meta_of, PassFn pass,
                              double (*full_loss)(const Weights&, std::span<const Sample>, int)) {
  if (cfg.p != 1 && cfg.p != 2) throw Error("sgd_train: p must be 1 or 2");
  if (cfg.mu < 0) throw Error("sgd_train: learning rate must be nonnegative");
  if (data.empty()) throw Error("sgd_train: empty dataset");
  if (cfg.batch < 1 || cfg.epochs < 0) throw Error("sgd_train: batch >= 1 and epochs >= 0");

  TrainResult<Weights> result{std::move(weights), {}, {}};
  Rng rng(cfg.seed, 0x736764);
  const std::size_t steps_per_epoch = (data.size() + cfg.batch - 1) / cfg.batch;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      MlpWeights& meta = meta_of(result.weights);
      std::vector<Matrix> grads;
      grads.reserve(meta.layers.size());
      for (const auto& W : meta.layers) grads.push_back(Matrix::Zero(W.rows(), W.cols()));
      double batch_loss = 0.0;
      for (int b = 0; b < cfg.batch; ++b) {
        const Sample& s = data[rng.uniform_index(data.size())];
        auto [prediction, trace, delta] = pass(result.weights, s);
        batch_loss += loss_value(prediction, s.y, cfg.p);
        const double scale = loss_slope(prediction, s.y, cfg.p) / cfg.batch;
        for (int l = 1; l <= meta.depth(); ++l) {
          const Vector& q = trace->q[l - 1];
          grads[l - 1].noalias() += (scale * inv_sqrt(q.size())) * delta[l] * q.transpose();
        }
      }
      batch_loss /= cfg.batch;
      result.step_loss.push_back(batch_loss);
      if (!std::isfinite(batch_loss))
        throw NonFiniteLoss("non-finite training loss at epoch " + std::to_string(epoch) +
                            ", step " + std::to_string(step));
      if (cfg.mu != 0.0) {
        for (std::size_t l = 0; l < grads.size(); ++l) meta.layers[l] -= cfg.mu * grads[l];
      }
    }
    const double epoch_loss = full_loss(result.weights, data, cfg.p);
    result.epoch_loss.push_back(epoch_loss);
    if (!std::isfinite(epoch_loss))
      throw NonFiniteLoss("non-finite training loss after epoch " + std::to_string(epoch));
  }
  return result;
}

}  // namespace

double mean_loss(const HypernetWeights& hw, std::span<const Sample> data, int p) {
  double total = 0.0;
  for (const auto& s : data) total += loss_value(forward_hypernet(hw, s.u).output(), s.y, p);
  return total / static_cast<double>(data.size());
}

double mean_loss(const MlpWeights& w, std::span<const Sample> data, int p) {
  if (w.output_dim() != 1) throw UnsupportedShape("mean_loss: MLP must have scalar output");
  double total = 0.0;
  for (const auto& s : data) total += loss_value(forward_mlp(w, s.u.x).output()(0), s.y, p);
  return total / static_cast<double>(data.size());
}

TrainResult<HypernetWeights> sgd_train(HypernetWeights hw, std::span<const Sample> data,
                                       const SgdConfig& cfg) {
  HypernetGrad parts;
  auto pass = [&parts](const HypernetWeights& w, const Sample& s) {
    parts = hypernet_grad_parts(w, s.u);
    return Pass{parts.trace.output(), &parts.trace.meta, std::move(parts.delta)};
  };
  auto meta_of = [](HypernetWeights& w) -> MlpWeights& { return w.meta; };
  double (*full)(const HypernetWeights&, std::span<const Sample>, int) = &mean_loss;
  return sgd_loop(std::move(hw), data, cfg, meta_of, pass, full);
}

TrainResult<MlpWeights> sgd_train(MlpWeights w, std::span<const Sample> data, const SgdConfig& cfg) {
  if (w.output_dim() != 1) throw UnsupportedShape("sgd_train: MLP must have scalar output");
  MlpTrace trace;
  const Vector one = Vector::Ones(1);
  auto pass = [&trace, &one](const MlpWeights& weights, const Sample& s) {
    trace = forward_mlp(weights, s.u.x);
    return Pass{trace.output()(0), &trace, backward_mlp(weights, trace, one)};
  };
  auto meta_of = [](MlpWeights& weights) -> MlpWeights& { return weights; };
  double (*full)(const MlpWeights&, std::span<const Sample>, int) = &mean_loss;
  return sgd_loop(std::move(w), data, cfg, meta_of, pass, full);
}

}  // namespace hyperkernel
