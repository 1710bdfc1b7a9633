#include "hyperkernel/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include "hyperkernel/parallel.hpp"

namespace hyperkernel {

namespace {

constexpr double kSqrt2 = std::numbers::sqrt2;

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::uint64_t job_seed(std::uint64_t root, std::uint64_t s) { return mix64(mix64(root) + s); }

}  // namespace

// ---- MarginalLastLayer ------------------------------------------------------

MarginalLastLayer::MarginalLastLayer(const Vector& q, Eigen::Index rows, Rng& rng)
    : MarginalLastLayer(q, gaussian_vector(static_cast<std::size_t>(rows), rng)) {}

MarginalLastLayer::MarginalLastLayer(const Vector& q, Vector omega)
    : qnorm_(q.norm()), omega_(std::move(omega)) {
  qhat_ = qnorm_ > 0 ? Vector(q / qnorm_) : Vector::Zero(q.size());
}

Vector MarginalLastLayer::output() const {
  return omega_ * (qnorm_ / std::sqrt(static_cast<double>(qhat_.size())));
}

Eigen::MatrixXd MarginalLastLayer::transpose_times(const Eigen::MatrixXd& B, Rng& rng,
                                                   const PerpSampler& perp) const {
  if (B.rows() != omega_.size())
    throw DimensionMismatch("MarginalLastLayer: cotangent block has wrong row count");
  Eigen::MatrixXd out = qhat_ * (omega_.transpose() * B);
  if (perp) {
    out += perp(B);
    return out;
  }
  const Eigen::Index T = B.cols();
  const Eigen::MatrixXd gram = B.transpose() * B;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  // R = D^{1/2} Q^T so that R^T R = B^T B.
  const Eigen::MatrixXd R =
      eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
  Eigen::MatrixXd xi(qhat_.size(), T);
  for (Eigen::Index c = 0; c < T; ++c)
    for (Eigen::Index r = 0; r < xi.rows(); ++r) xi(r, c) = rng.normal();
  Eigen::MatrixXd g = xi * R;
  g -= qhat_ * (qhat_.transpose() * g);
  out += g;
  return out;
}

// ---- converge -----------------------------------------------------------------

std::vector<double> ConvergeConfig::theta_grid() const {
  if (!thetas.empty()) return thetas;
  std::vector<double> grid(9);
  for (int i = 0; i < 9; ++i) grid[i] = -std::numbers::pi / 2 + i * std::numbers::pi / 8;
  return grid;
}

Vector ConvergeConfig::input_x() const {
  if (x.size() > 0) return x;
  Vector v(2);
  v << 1.0, -1.0;
  return v;
}

std::vector<double> sampled_kernel_row(int L, int width_f, std::span<const int> primary_widths,
                                       const Vector& x, const Vector& z_ref,
                                       std::span<const Vector> z_others, std::uint64_t seed) {
  if (L < 1 || width_f < 1) throw Error("sampled_kernel_row: bad meta shape");
  const auto n_out = static_cast<Eigen::Index>(primary_param_count(primary_widths));

  // Lower meta layers are materialized; the output layer is marginalized.
  std::vector<Matrix> W;
  std::vector<Vector> q{x}, active{Vector()};
  for (int l = 1; l < L; ++l) {
    const Eigen::Index fan_in = q.back().size();
    W.push_back(gaussian_matrix(width_f, static_cast<std::size_t>(fan_in), seed, l));
    const Vector y = W.back() * q.back() / std::sqrt(static_cast<double>(fan_in));
    active.push_back((y.array() > 0.0).cast<double>().matrix());
    q.push_back(kSqrt2 * y.cwiseMax(0.0));
  }
  Rng rng(seed, 0x6c617374);
  const MarginalLastLayer last(q.back(), n_out, rng);
  const std::vector<Matrix> V = unpack_primary(last.output(), primary_widths);

  const Eigen::Index T = static_cast<Eigen::Index>(z_others.size()) + 1;
  Eigen::MatrixXd B(n_out, T);
  for (Eigen::Index t = 0; t < T; ++t) {
    const Vector& z = t == 0 ? z_ref : z_others[t - 1];
    B.col(t) = primary_grad(V, forward_primary(V, z));
  }
  const Eigen::MatrixXd G = last.transpose_times(B, rng);

  std::vector<double> sq(L);
  for (int l = 0; l < L; ++l) sq[l] = q[l].squaredNorm() / static_cast<double>(q[l].size());

  // deltas[t][l] for l = 1..L-1
  std::vector<std::vector<Vector>> deltas(T, std::vector<Vector>(L));
  for (Eigen::Index t = 0; t < T; ++t) {
    if (L == 1) break;
    const double s = kSqrt2 / std::sqrt(static_cast<double>(q[L - 1].size()));
    deltas[t][L - 1] = s * active[L - 1].cwiseProduct(G.col(t));
    for (int l = L - 2; l >= 1; --l) {
      const Matrix& Wn = W[l];  // W^{l+1}
      deltas[t][l] = (kSqrt2 / std::sqrt(static_cast<double>(Wn.cols()))) *
                     active[l].cwiseProduct(Wn.transpose() * deltas[t][l + 1]);
    }
  }
  std::vector<double> out;
  out.reserve(z_others.size());
  for (Eigen::Index t = 1; t < T; ++t) {
    double k = B.col(0).dot(B.col(t)) * sq[L - 1];
    for (int l = 1; l < L; ++l) k += deltas[0][l].dot(deltas[t][l]) * sq[l - 1];
    out.push_back(k);
  }
  return out;
}

std::vector<ConvergeRow> converge_experiment(const ConvergeConfig& cfg) {
  if (cfg.widths_f.empty() || cfg.widths_g.empty() || cfg.seeds < 2)
    throw Error("converge: need nonempty width grids and at least two seeds");
  if (cfg.L < 1 || cfg.H < 1) throw Error("converge: depths must be >= 1");
  const std::vector<double> thetas = cfg.theta_grid();
  const Vector x = cfg.input_x();
  Vector z_ref(2);
  z_ref << 1.0, 0.0;
  std::vector<Vector> zs;
  for (double t : thetas) {
    Vector z(2);
    z << std::cos(t), std::sin(t);
    zs.push_back(z);
  }

  struct Cell {
    int wf, wg;
  };
  std::vector<Cell> cells;
  for (int wf : cfg.widths_f)
    for (int wg : cfg.widths_g) cells.push_back({wf, wg});

  const std::size_t S = static_cast<std::size_t>(cfg.seeds);
  std::vector<std::vector<double>> values(cells.size() * S);
  parallel_for(values.size(), cfg.threads, [&](std::size_t job) {
    const Cell& c = cells[job / S];
    std::vector<int> pw(cfg.H + 1, c.wg);
    pw.front() = 2;
    pw.back() = 1;
    values[job] = sampled_kernel_row(cfg.L, c.wf, pw, x, z_ref, zs, job_seed(cfg.seed, job % S));
  });

  std::vector<ConvergeRow> rows;
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    for (std::size_t ti = 0; ti < thetas.size(); ++ti) {
      double mean = 0.0;
      for (std::size_t s = 0; s < S; ++s) mean += values[ci * S + s][ti];
      mean /= static_cast<double>(S);
      double var = 0.0;
      for (std::size_t s = 0; s < S; ++s) {
        const double d = values[ci * S + s][ti] - mean;
        var += d * d;
      }
      var /= static_cast<double>(S - 1);
      rows.push_back({cells[ci].wf, cells[ci].wg, thetas[ti], mean, var, cfg.seeds});
    }
  }
  return rows;
}

std::vector<double> converge_limit(const ConvergeConfig& cfg) {
  const Vector x = cfg.input_x();
  const HyperKernelConfig hk{cfg.L, cfg.H, static_cast<int>(x.size()), 2};
  Vector z_ref(2);
  z_ref << 1.0, 0.0;
  std::vector<double> out;
  for (double t : cfg.theta_grid()) {
    Vector z(2);
    z << std::cos(t), std::sin(t);
    out.push_back(hyper_ntk({x, z_ref}, {x, z}, hk).theta_h);
  }
  return out;
}

std::string converge_csv(const std::vector<ConvergeRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "width_f,width_g,theta,mean_k,var_k,n_seeds\n";
  for (const auto& r : rows)
    os << r.width_f << ',' << r.width_g << ',' << r.theta << ',' << r.mean_k << ',' << r.var_k << ','
       << r.n_seeds << '\n';
  return os.str();
}

// ---- drift ------------------------------------------------------------------

namespace {

double empirical_kh(const HypernetWeights& hw, const HyperInput& a, const HyperInput& b) {
  const HypernetGrad ga = hypernet_grad_parts(hw, a);
  const HypernetGrad gb = hypernet_grad_parts(hw, b);
  return factored_inner(ga.delta, ga.trace.meta.q, gb.delta, gb.trace.meta.q);
}

// Positive inputs keep the held-out kernel value away from zero.
HyperInput positive_input(int n0, int m0, Rng& rng) {
  HyperInput u;
  u.x.resize(n0);
  u.z.resize(m0);
  for (int i = 0; i < n0; ++i) u.x[i] = std::abs(rng.normal());
  for (int i = 0; i < m0; ++i) u.z[i] = rng.uniform(0.5, 1.5);
  return u;
}

}  // namespace

std::vector<DriftRow> kernel_drift_experiment(const DriftConfig& cfg) {
  if (cfg.widths.empty() || cfg.seeds < 1 || cfg.n_train < 1)
    throw Error("drift: need widths, seeds and a nonempty dataset");
  if (cfg.mu < 0) throw Error("drift: learning rate must be nonnegative");
  const HyperKernelConfig hk{cfg.L, cfg.H, cfg.n0, cfg.m0};
  hk.validate();
  const std::size_t W = cfg.widths.size();
  std::vector<DriftRow> rows(W * cfg.seeds);
  parallel_for(rows.size(), cfg.threads, [&](std::size_t job) {
    const std::uint64_t s = job / W;
    const int width = cfg.widths[job % W];
    const std::uint64_t seed = job_seed(cfg.seed, s);

    Rng data_rng(seed, 0x64617461);
    std::vector<Sample> data;
    for (int i = 0; i < cfg.n_train; ++i) {
      HyperInput u = positive_input(cfg.n0, cfg.m0, data_rng);
      const double y = std::sin(u.x.sum()) * u.z[0];
      data.push_back({std::move(u), y});
    }
    const HyperInput ua = positive_input(cfg.n0, cfg.m0, data_rng);
    const HyperInput ub = positive_input(cfg.n0, cfg.m0, data_rng);

    const HypernetWeights hw = init_hypernet(hk, width, width, seed);
    DriftRow row;
    row.width = width;
    row.seed = s;
    row.k_before = empirical_kh(hw, ua, ub);
    SgdConfig sgd;
    sgd.mu = cfg.mu;
    sgd.epochs = 1;
    sgd.batch = cfg.n_train;
    sgd.p = 2;
    sgd.seed = seed;
    const auto trained = sgd_train(hw, data, sgd);
    row.k_after = empirical_kh(trained.weights, ua, ub);
    row.rel_change = std::abs(row.k_after - row.k_before) / std::abs(row.k_before);
    rows[job] = row;
  });
  return rows;
}

std::string drift_csv(const std::vector<DriftRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "width,seed,k_before,k_after,rel_change\n";
  for (const auto& r : rows)
    os << r.width << ',' << r.seed << ',' << r.k_before << ',' << r.k_after << ',' << r.rel_change
       << '\n';
  return os.str();
}

std::vector<std::pair<int, double>> drift_medians(const std::vector<DriftRow>& rows) {
  std::map<int, std::vector<double>> by_width;
  for (const auto& r : rows) by_width[r.width].push_back(r.rel_change);
  std::vector<std::pair<int, double>> out;
  for (auto& [w, v] : by_width) out.emplace_back(w, median(v));
  return out;
}

std::string drift_summary_csv(const std::vector<DriftRow>& rows) {
  std::map<int, int> counts;
  for (const auto& r : rows) ++counts[r.width];
  std::ostringstream os;
  os.precision(17);
  os << "width,median_rel_change,n\n";
  for (const auto& [w, m] : drift_medians(rows)) os << w << ',' << m << ',' << counts[w] << '\n';
  return os.str();
}

// ---- large learning rate ------------------------------------------------------

std::vector<LargeLrRow> large_lr_experiment(const LargeLrConfig& cfg) {
  if (cfg.widths.empty() || cfg.seeds < 1) throw Error("large-lr: need widths and seeds");
  if (cfg.n_train < 1 || cfg.n_test < 1) throw Error("large-lr: empty dataset");
  const std::size_t W = cfg.widths.size();
  std::vector<LargeLrRow> rows(W * cfg.seeds);
  parallel_for(rows.size(), cfg.threads, [&](std::size_t job) {
    const std::uint64_t s = job / W;
    const int width = cfg.widths[job % W];
    const std::uint64_t seed = job_seed(cfg.seed, s);

    // Teacher: a fixed width-64 ReLU net of the same family.
    const std::vector<int> teacher_widths{cfg.n0, 64, 1};
    const MlpWeights teacher = init_mlp(teacher_widths, seed, 0x7465616368);
    Rng data_rng(seed, 0x6c6c72);
    auto make = [&](int n) {
      std::vector<Sample> out;
      for (int i = 0; i < n; ++i) {
        Sample smp;
        smp.u.x = gaussian_vector(cfg.n0, data_rng);
        smp.y = forward_mlp(teacher, smp.u.x).output()(0);
        out.push_back(std::move(smp));
      }
      return out;
    };
    const std::vector<Sample> train = make(cfg.n_train);
    const std::vector<Sample> test = make(cfg.n_test);

    LargeLrRow row;
    row.width = width;
    row.seed = s;
    row.mu = cfg.mu.value_or(std::sqrt(static_cast<double>(width)));
    const std::vector<int> widths{cfg.n0, width, 1};
    SgdConfig sgd;
    sgd.mu = row.mu;
    sgd.epochs = cfg.epochs;
    sgd.batch = cfg.batch;
    sgd.p = cfg.p;
    sgd.seed = seed;
    try {
      const auto result = sgd_train(init_mlp(widths, seed, 0x73747564), train, sgd);
      row.train_loss = result.epoch_loss.empty() ? mean_loss(result.weights, train, cfg.p)
                                                 : result.epoch_loss.back();
      row.test_loss = mean_loss(result.weights, test, cfg.p);
      row.finite = std::isfinite(row.train_loss) && std::isfinite(row.test_loss);
      if (!row.finite) row.note = "non-finite loss";
    } catch (const NonFiniteLoss& e) {
      row.finite = false;
      row.train_loss = row.test_loss = std::numeric_limits<double>::quiet_NaN();
      row.note = e.what();
    }
    rows[job] = row;
  });
  return rows;
}

std::string large_lr_csv(const std::vector<LargeLrRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "width,seed,mu,finite,train_loss,test_loss\n";
  for (const auto& r : rows)
    os << r.width << ',' << r.seed << ',' << r.mu << ',' << (r.finite ? 1 : 0) << ','
       << r.train_loss << ',' << r.test_loss << '\n';
  return os.str();
}

std::vector<std::pair<int, double>> large_lr_median_test(const std::vector<LargeLrRow>& rows) {
  std::map<int, std::vector<double>> by_width;
  for (const auto& r : rows) by_width[r.width].push_back(r.test_loss);
  std::vector<std::pair<int, double>> out;
  for (auto& [w, v] : by_width) {
    const bool any_nan = std::any_of(v.begin(), v.end(), [](double d) { return std::isnan(d); });
    out.emplace_back(w, any_nan ? std::numeric_limits<double>::quiet_NaN() : median(v));
  }
  return out;
}

// ---- regression ---------------------------------------------------------------

RegressionData prepare_regression(const RegressionConfig& cfg) {
  if (cfg.subsets < 1 || cfg.train_images < 1 || cfg.test_images < 1)
    throw Error("regress: subsets, train_images and test_images must be >= 1");
  const int pool = cfg.subsets * cfg.train_images + cfg.test_images;
  RegressionData data;
  data.images = cfg.idx_path.empty() ? synthetic_images(pool, cfg.image_size, cfg.seed)
                                     : load_idx(cfg.idx_path);
  if (data.images.count < pool)
    throw Error("regress: need " + std::to_string(pool) + " images, found " +
                std::to_string(data.images.count));

  TaskConfig task = cfg.task;
  task.seed = cfg.task.seed ^ cfg.seed;
  std::vector<int> train_ids(cfg.subsets * cfg.train_images);
  std::iota(train_ids.begin(), train_ids.end(), 0);
  const PixelTask train = build_task(data.images, train_ids, task);
  data.train_samples = train.samples;
  data.subsets.resize(cfg.subsets);
  const std::size_t per_subset = static_cast<std::size_t>(cfg.train_images) * task.pixels_per_image;
  for (int s = 0; s < cfg.subsets; ++s) {
    auto& sub = data.subsets[s];
    sub.labels.resize(static_cast<Eigen::Index>(per_subset));
    for (std::size_t i = 0; i < per_subset; ++i) {
      const PixelSample& p = train.samples[s * per_subset + i];
      sub.inputs.push_back(p.u);
      sub.labels[static_cast<Eigen::Index>(i)] = p.y;
    }
  }
  std::vector<int> test_ids(cfg.test_images);
  std::iota(test_ids.begin(), test_ids.end(), pool - cfg.test_images);
  data.test = build_eval_task(data.images, test_ids, task);
  return data;
}

double hypernet_baseline_mse(const RegressionConfig& cfg, const RegressionData& data) {
  HyperKernelConfig arch = cfg.arch;
  arch.n0 = data.images.rows * data.images.cols;
  arch.m0 = data.test.z_dim;
  const HypernetWeights hw = init_hypernet(arch, cfg.hn_meta_width, cfg.hn_primary_width,
                                           job_seed(cfg.seed, 0x686e));
  std::vector<Sample> train;
  train.reserve(data.train_samples.size());
  for (const auto& p : data.train_samples) train.push_back({p.u, p.y});
  SgdConfig sgd;
  sgd.mu = cfg.hn_lr;
  sgd.epochs = cfg.hn_epochs;
  sgd.batch = cfg.hn_batch;
  sgd.p = 2;
  sgd.seed = cfg.seed;
  const auto result = sgd_train(hw, train, sgd);
  std::vector<Sample> test;
  for (const auto& p : data.test.samples) test.push_back({p.u, p.y});
  return mean_loss(result.weights, test, 2);
}

std::vector<RegressionRow> regression_experiment(const RegressionConfig& cfg) {
  const RegressionData data = prepare_regression(cfg);
  HyperKernelConfig arch = cfg.arch;
  arch.n0 = data.images.rows * data.images.cols;
  arch.m0 = data.test.z_dim;

  std::vector<HyperInput> test_inputs;
  Vector truth(static_cast<Eigen::Index>(data.test.samples.size()));
  for (std::size_t i = 0; i < data.test.samples.size(); ++i) {
    test_inputs.push_back(data.test.samples[i].u);
    truth[static_cast<Eigen::Index>(i)] = data.test.samples[i].y;
  }

  std::vector<RegressionRow> rows;
  for (HyperKernelKind kind : cfg.kernels) {
    const FactorizedHyperGram builder(arch, kind, cfg.threads);
    const Vector pred = ensemble_predict_hyper(data.subsets, test_inputs, builder, cfg.eps);
    rows.push_back({to_string(kind), mean_squared_error(pred, truth)});
  }
  double mean = 0.0;
  for (const auto& p : data.train_samples) mean += p.y;
  mean /= static_cast<double>(data.train_samples.size());
  rows.push_back({"mean", mean_squared_error(Vector::Constant(truth.size(), mean), truth)});
  if (cfg.hypernet_baseline) rows.push_back({"hypernet", hypernet_baseline_mse(cfg, data)});
  return rows;
}

std::string regression_csv(const std::vector<RegressionRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "method,mse\n";
  for (const auto& r : rows) os << r.method << ',' << r.mse << '\n';
  return os.str();
}

}  // namespace hyperkernel
