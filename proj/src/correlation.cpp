#include "hyperkernel/correlation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "hyperkernel/parallel.hpp"

namespace hyperkernel {

namespace {

constexpr double kSqrt2 = std::numbers::sqrt2;

double inv_n(Eigen::Index n) { return 1.0 / static_cast<double>(n); }

}  // namespace

void validate_index(const MultiIndex& idx, int depth, std::size_t n_examples, int n_outputs) {
  const std::size_t k = idx.layers.size();
  if (k == 0 || idx.examples.size() != k || idx.outputs.size() != k)
    throw InvalidIndex("MultiIndex: layers, examples and outputs must have equal nonzero length");
  for (std::size_t t = 0; t < k; ++t) {
    if (idx.layers[t] < 1 || idx.layers[t] > depth)
      throw InvalidIndex("MultiIndex: layer " + std::to_string(idx.layers[t]) + " out of range");
    if (idx.examples[t] < 0 || static_cast<std::size_t>(idx.examples[t]) >= n_examples)
      throw InvalidIndex("MultiIndex: example " + std::to_string(idx.examples[t]) +
                         " out of range");
    if (idx.outputs[t] < 0 || idx.outputs[t] >= n_outputs)
      throw InvalidIndex("MultiIndex: output " + std::to_string(idx.outputs[t]) + " out of range");
  }
  if (idx.target_output < 0 || idx.target_output >= n_outputs)
    throw InvalidIndex("MultiIndex: target output out of range");
}

Vector PathFactors::apply_p(int u, int v, const Vector& vec) const {
  if (u < 1 || v < u || v > w_->depth()) throw InvalidIndex("PathFactors: bad P range");
  Vector out = vec;
  for (int l = u; l < v; ++l) {
    const Matrix& W = w_->layers[l];  // W^{l+1}
    out = (kSqrt2 / std::sqrt(static_cast<double>(W.cols()))) *
          (W * trace_->active[l].cwiseProduct(out));
  }
  return out;
}

Vector PathFactors::apply_c(int a, int b, const Vector& vec) const {
  if (b <= a || b > w_->depth()) throw InvalidIndex("PathFactors: bad C range");
  return kSqrt2 * trace_->active[b - 1].cwiseProduct(apply_p(a, b - 1, vec));
}

Matrix PathFactors::p_matrix(int u, int v) const {
  const Eigen::Index n = w_->layers[u - 1].rows();
  Matrix out(w_->layers[v - 1].rows(), n);
  for (Eigen::Index c = 0; c < n; ++c) out.col(c) = apply_p(u, v, Vector::Unit(n, c));
  return out;
}

Matrix PathFactors::c_matrix(int a, int b) const {
  const Eigen::Index n = w_->layers[a - 1].rows();
  Matrix out(w_->layers[b - 2].rows(), n);
  for (Eigen::Index c = 0; c < n; ++c) out.col(c) = apply_c(a, b, Vector::Unit(n, c));
  return out;
}

double corr_term_legs(const MlpWeights& w, const MlpTrace& trace0,
                      std::span<const Vector> target_delta, std::vector<GradientLeg> legs) {
  if (legs.empty()) throw InvalidIndex("corr_term: empty index");
  // Mixed partials commute, so jointly sorting the legs by layer is free.
  std::stable_sort(legs.begin(), legs.end(),
                   [](const GradientLeg& a, const GradientLeg& b) { return a.layer < b.layer; });
  for (std::size_t t = 1; t < legs.size(); ++t)
    if (legs[t].layer == legs[t - 1].layer) return 0.0;

  const PathFactors path(w, trace0);
  const GradientLeg& first = legs.front();
  double value = path.q(first.layer - 1).dot(first.q) * inv_n(first.q.size());
  for (std::size_t t = 0; t + 1 < legs.size(); ++t) {
    const GradientLeg& next = legs[t + 1];
    const Vector c = path.apply_c(legs[t].layer, next.layer, legs[t].delta);
    value *= next.q.dot(c) * inv_n(next.q.size());
  }
  const GradientLeg& last = legs.back();
  return value * target_delta[last.layer].dot(last.delta);
}

namespace {

std::vector<Vector> onehot_deltas(const MlpWeights& w, const MlpTrace& trace, int d) {
  Vector c = Vector::Zero(w.output_dim());
  c(d) = 1.0;
  return backward_mlp(w, trace, c);
}

}  // namespace

double corr_term(const MlpWeights& w, const Vector& x0, std::span<const Vector> xs,
                 const MultiIndex& idx) {
  validate_index(idx, w.depth(), xs.size(), w.output_dim());
  const MlpTrace trace0 = forward_mlp(w, x0);
  const auto target = onehot_deltas(w, trace0, idx.target_output);

  std::map<int, MlpTrace> traces;
  std::map<std::pair<int, int>, std::vector<Vector>> deltas;
  std::vector<GradientLeg> legs;
  for (int t = 0; t < idx.order(); ++t) {
    const int e = idx.examples[t], d = idx.outputs[t], l = idx.layers[t];
    auto it = traces.find(e);
    if (it == traces.end()) it = traces.emplace(e, forward_mlp(w, xs[e])).first;
    auto dt = deltas.find({e, d});
    if (dt == deltas.end()) dt = deltas.emplace(std::pair{e, d}, onehot_deltas(w, it->second, d)).first;
    legs.push_back({l, it->second.q[l - 1], dt->second[l]});
  }
  return corr_term_legs(w, trace0, target, std::move(legs));
}

// ---- dense oracle ---------------------------------------------------------

namespace {

// Output `d` of the net with the activation pattern of `trace` held fixed.
double frozen_output(const MlpWeights& w, const MlpTrace& trace, const Vector& x, int d) {
  Vector q = x;
  const int L = w.depth();
  for (int l = 1; l < L; ++l) {
    const Matrix& W = w.layers[l - 1];
    q = (kSqrt2 / std::sqrt(static_cast<double>(W.cols()))) *
        trace.active[l].cwiseProduct(W * q);
  }
  const Matrix& WL = w.layers[L - 1];
  return WL.row(d).dot(q) / std::sqrt(static_cast<double>(WL.cols()));
}

}  // namespace

DerivativeTensor higher_derivative_oracle(const MlpWeights& w, const Vector& x0,
                                          std::span<const int> layers, int target_output) {
  const int k = static_cast<int>(layers.size());
  if (k == 0) throw InvalidIndex("higher_derivative_oracle: no layers");
  DerivativeTensor out;
  out.layers.assign(layers.begin(), layers.end());
  std::size_t params = 0, entries = 1;
  for (int l : layers) {
    if (l < 1 || l > w.depth()) throw InvalidIndex("higher_derivative_oracle: layer out of range");
    const auto n = static_cast<std::size_t>(w.layers[l - 1].size());
    out.dims.push_back(n);
    params += n;
    entries *= n;
  }
  if (params > kOracleParamCap || entries > kOracleEntryCap)
    throw TooLarge("higher_derivative_oracle: " + std::to_string(params) +
                   " selected parameters exceeds the cap");
  if (target_output < 0 || target_output >= w.output_dim())
    throw InvalidIndex("higher_derivative_oracle: output out of range");

  const MlpTrace trace = forward_mlp(w, x0);
  for (int l = 1; l < w.depth(); ++l)
    if ((trace.y[l].array().abs() < kKinkThreshold).any())
      throw KinkProximity("higher_derivative_oracle: pre-activation within 1e-6 of a kink");

  out.values.assign(entries, 0.0);
  std::vector<int> sorted(layers.begin(), layers.end());
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) return out;

  MlpWeights probe = w;
  std::vector<std::size_t> pos(k, 0);
  for (std::size_t e = 0; e < entries; ++e) {
    std::size_t rem = e;
    for (int t = k - 1; t >= 0; --t) {
      pos[t] = rem % out.dims[t];
      rem /= out.dims[t];
    }
    // Inclusion-exclusion over unit bumps of the k selected weights.
    double acc = 0.0;
    for (unsigned mask = 0; mask < (1u << k); ++mask) {
      for (int t = 0; t < k; ++t)
        if (mask & (1u << t)) probe.layers[layers[t] - 1].data()[pos[t]] += 1.0;
      const double sign = ((k - std::popcount(mask)) % 2 == 0) ? 1.0 : -1.0;
      acc += sign * frozen_output(probe, trace, x0, target_output);
      for (int t = 0; t < k; ++t)
        if (mask & (1u << t))
          probe.layers[layers[t] - 1].data()[pos[t]] = w.layers[layers[t] - 1].data()[pos[t]];
    }
    out.values[e] = acc;
  }
  return out;
}

double contract_derivative(const DerivativeTensor& t, std::span<const Matrix> grads) {
  const std::size_t k = t.dims.size();
  if (grads.size() != k) throw DimensionMismatch("contract_derivative: need one gradient per layer");
  for (std::size_t i = 0; i < k; ++i)
    if (static_cast<std::size_t>(grads[i].size()) != t.dims[i])
      throw DimensionMismatch("contract_derivative: gradient shape mismatch");
  double total = 0.0;
  std::vector<std::size_t> pos(k, 0);
  for (std::size_t e = 0; e < t.values.size(); ++e) {
    if (t.values[e] == 0.0) continue;
    std::size_t rem = e;
    double prod = t.values[e];
    for (std::size_t i = k; i-- > 0;) {
      prod *= grads[i].data()[rem % t.dims[i]];
      rem /= t.dims[i];
    }
    total += prod;
  }
  return total;
}

// ---- hypernetwork order terms ---------------------------------------------

namespace {

void require_scalar_primary(const HypernetWeights& hw, int r) {
  if (std::any_of(hw.primary_widths.begin(), hw.primary_widths.end(), [](int m) { return m != 1; }))
    throw UnsupportedShape("hyper_order_term: every primary width must be 1");
  if (r < 1 || r > 4) throw UnsupportedShape("hyper_order_term: order must be in 1..4");
  if (hw.primary_depth() > 3) throw UnsupportedShape("hyper_order_term: primary depth must be <= 3");
}

double relu_slope(double g) { return g > 0.0 ? kSqrt2 : 0.0; }

// All compositions of r into `parts` nonnegative parts.
void compositions(int r, int parts, std::vector<int>& cur, std::vector<std::vector<int>>& out) {
  if (static_cast<int>(cur.size()) == parts - 1) {
    cur.push_back(r);
    out.push_back(cur);
    cur.pop_back();
    return;
  }
  for (int a = 0; a <= r; ++a) {
    cur.push_back(a);
    compositions(r - a, parts, cur, out);
    cur.pop_back();
  }
}

// Strictly increasing subsets of {1..L} of size k.
void layer_subsets(int L, int k, int start, std::vector<int>& cur, std::vector<std::vector<int>>& out) {
  if (static_cast<int>(cur.size()) == k) {
    out.push_back(cur);
    return;
  }
  for (int l = start; l <= L; ++l) {
    cur.push_back(l);
    layer_subsets(L, k, l + 1, cur, out);
    cur.pop_back();
  }
}

double factorial(int n) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

}  // namespace

std::vector<double> primary_output_sensitivities(const HypernetWeights& hw, const HyperInput& u) {
  const HypernetTrace t = forward_hypernet(hw, u);
  const int H = hw.primary_depth();
  const Vector& f = t.meta.output();
  std::vector<double> h(H);
  for (int d = 1; d <= H; ++d) {
    double v = t.primary.a[d - 1](0);
    for (int s = 1; s <= H - d; ++s) v *= f(H - s) * relu_slope(t.primary.g[H - s](0));
    h[d - 1] = v;
  }
  return h;
}

double hyper_order_term(const HypernetWeights& hw, const HyperInput& u_i, const HyperInput& u_j,
                        int r, bool fast) {
  require_scalar_primary(hw, r);
  const MlpWeights& meta = hw.meta;
  const int H = hw.primary_depth();
  const int L = meta.depth();

  const HypernetTrace ti = forward_hypernet(hw, u_i);
  const MlpTrace tj = forward_mlp(meta, u_j.x);
  const std::vector<double> hj = primary_output_sensitivities(hw, u_j);
  const Vector& fi = ti.meta.output();

  double prefactor = u_i.z(0);
  for (int d = 1; d < H; ++d) prefactor *= relu_slope(ti.primary.g[d](0));
  if (prefactor == 0.0) return 0.0;

  // Cotangent of grad h_j on the meta output, and per-output deltas for the slow path.
  const Vector cot = Eigen::Map<const Vector>(hj.data(), H);
  const auto delta_h = backward_mlp(meta, tj, cot);
  std::vector<std::vector<Vector>> delta_out(H);
  if (!fast)
    for (int e = 0; e < H; ++e) delta_out[e] = onehot_deltas(meta, tj, e);
  std::vector<std::vector<Vector>> target(H);
  for (int d = 0; d < H; ++d) target[d] = onehot_deltas(meta, ti.meta, d);

  // M[d][a] = <d^a f^d(x_i), (grad h_j)^a>
  std::vector<std::vector<double>> M(H, std::vector<double>(r + 1, 0.0));
  for (int d = 0; d < H; ++d) {
    M[d][0] = fi(d);
    for (int a = 1; a <= std::min(r, L); ++a) {
      std::vector<std::vector<int>> subsets;
      std::vector<int> cur;
      layer_subsets(L, a, 1, cur, subsets);
      double sum = 0.0;
      for (const auto& layers : subsets) {
        if (fast) {
          std::vector<GradientLeg> legs;
          for (int l : layers) legs.push_back({l, tj.q[l - 1], delta_h[l]});
          sum += corr_term_legs(meta, ti.meta, target[d], std::move(legs));
        } else {
          // Explicit sum over output tuples weighted by prod h^{e_k}.
          std::size_t combos = 1;
          for (int k = 0; k < a; ++k) combos *= H;
          for (std::size_t c = 0; c < combos; ++c) {
            std::size_t rem = c;
            double weight = 1.0;
            std::vector<GradientLeg> legs;
            for (int l : layers) {
              const int e = static_cast<int>(rem % H);
              rem /= H;
              weight *= hj[e];
              legs.push_back({l, tj.q[l - 1], delta_out[e][l]});
            }
            if (weight != 0.0) sum += weight * corr_term_legs(meta, ti.meta, target[d], std::move(legs));
          }
        }
      }
      // Each subset appears a! times among ordered layer tuples.
      M[d][a] = factorial(a) * sum;
    }
  }

  std::vector<std::vector<int>> alphas;
  std::vector<int> cur;
  compositions(r, H, cur, alphas);
  double total = 0.0;
  for (const auto& alpha : alphas) {
    double term = factorial(r);
    for (int d = 0; d < H; ++d) term *= M[d][alpha[d]] / factorial(alpha[d]);
    total += term;
  }
  return prefactor * total;
}

// ---- scaling fits ---------------------------------------------------------

SlopeFit fit_loglog(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionMismatch("fit_loglog: size mismatch");
  const std::size_t n = x.size();
  if (n < 3) throw Error("fit_loglog: need at least three points");
  std::vector<double> lx(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw Error("fit_loglog: coordinates must be positive");
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
  }
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / n;
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (sxx == 0.0) throw Error("fit_loglog: x values must not all be equal");
  SlopeFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double sse = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = ly[i] - fit.intercept - fit.slope * lx[i];
    sse += r * r;
  }
  fit.r2 = syy > 0 ? 1.0 - sse / syy : 1.0;
  const double se = std::sqrt(sse / static_cast<double>(n - 2) / sxx);
  const boost::math::students_t dist(static_cast<double>(n - 2));
  const double tq = boost::math::quantile(boost::math::complement(dist, 0.025));
  fit.ci_low = fit.slope - tq * se;
  fit.ci_high = fit.slope + tq * se;
  return fit;
}

std::vector<ScalingAggregate> aggregate_rows(std::span<const ScalingRow> rows) {
  std::map<int, std::vector<double>> by_width;
  for (const auto& row : rows) by_width[row.width].push_back(std::abs(row.value));
  std::vector<ScalingAggregate> out;
  for (auto& [width, vals] : by_width) {
    ScalingAggregate a;
    a.width = width;
    a.n = static_cast<int>(vals.size());
    a.mean_abs = std::accumulate(vals.begin(), vals.end(), 0.0) / a.n;
    double ss = 0;
    for (double v : vals) ss += (v - a.mean_abs) * (v - a.mean_abs);
    a.sd = a.n > 1 ? std::sqrt(ss / (a.n - 1)) : 0.0;
    std::sort(vals.begin(), vals.end());
    a.median_abs = a.n % 2 ? vals[a.n / 2] : 0.5 * (vals[a.n / 2 - 1] + vals[a.n / 2]);
    out.push_back(a);
  }
  return out;
}

namespace {

SlopeFit fit_column(const std::vector<ScalingAggregate>& agg, bool median) {
  std::vector<double> xs, ys;
  for (const auto& a : agg) {
    xs.push_back(a.width);
    ys.push_back(median ? a.median_abs : a.mean_abs);
  }
  try {
    return fit_loglog(xs, ys);
  } catch (const Error&) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return {nan, nan, nan, nan, nan};
  }
}

ScalingResult finish(std::vector<ScalingRow> rows) {
  ScalingResult res;
  res.rows = std::move(rows);
  res.aggregates = aggregate_rows(res.rows);
  res.fit_mean = fit_column(res.aggregates, false);
  res.fit_median = fit_column(res.aggregates, true);
  return res;
}

void check_grid(const std::vector<int>& widths, int seeds) {
  if (widths.size() < 3) throw Error("scaling probe: need at least three widths");
  if (seeds < 1) throw Error("scaling probe: need at least one seed");
  if (std::any_of(widths.begin(), widths.end(), [](int w) { return w < 1; }))
    throw Error("scaling probe: widths must be >= 1");
}

}  // namespace

ScalingResult scaling_probe_T(const TProbeConfig& cfg) {
  check_grid(cfg.widths, cfg.seeds);
  if (cfg.r < 1 || cfg.r > cfg.L) throw Error("scaling_probe_T: need 1 <= r <= L");
  const std::size_t W = cfg.widths.size();
  std::vector<ScalingRow> rows(W * cfg.seeds);
  parallel_for(rows.size(), cfg.threads, [&](std::size_t job) {
    const int s = static_cast<int>(job / W);
    const int width = cfg.widths[job % W];
    const std::uint64_t seed = mix64(cfg.seed) + static_cast<std::uint64_t>(s);

    Rng rng(seed, 0x7450);
    std::vector<Vector> xs;
    for (int i = 0; i <= cfg.r; ++i) xs.push_back(gaussian_vector(cfg.n0, rng));
    std::vector<int> all(cfg.L);
    std::iota(all.begin(), all.end(), 1);
    MultiIndex idx;
    std::sample(all.begin(), all.end(), std::back_inserter(idx.layers), cfg.r, rng.engine());
    for (int t = 0; t < cfg.r; ++t) {
      idx.examples.push_back(cfg.fixed_input ? 1 : t + 1);
      idx.outputs.push_back(0);
    }

    std::vector<int> widths(cfg.L + 1, width);
    widths.front() = cfg.n0;
    widths.back() = 1;
    const MlpWeights w = init_mlp(widths, seed, 0x7457);
    rows[job] = {width, static_cast<std::uint64_t>(s), corr_term(w, xs[0], xs, idx)};
  });
  return finish(std::move(rows));
}

ScalingResult scaling_probe_K(const KProbeConfig& cfg) {
  check_grid(cfg.widths, cfg.seeds);
  if (cfg.H < 1 || cfg.H > 3 || cfg.r < 1 || cfg.r > 4)
    throw UnsupportedShape("scaling_probe_K: need H in 1..3 and r in 1..4");
  const std::size_t W = cfg.widths.size();
  std::vector<ScalingRow> rows(W * cfg.seeds);
  parallel_for(rows.size(), cfg.threads, [&](std::size_t job) {
    const int s = static_cast<int>(job / W);
    const int width = cfg.widths[job % W];
    const std::uint64_t seed = mix64(cfg.seed ^ 0x4b) + static_cast<std::uint64_t>(s);

    Rng rng(seed, 0x4b50);
    HyperInput ui{gaussian_vector(cfg.n0, rng), gaussian_vector(1, rng)};
    HyperInput uj{gaussian_vector(cfg.n0, rng), gaussian_vector(1, rng)};
    std::vector<int> hidden(cfg.L - 1, width);
    std::vector<int> primary(cfg.H + 1, 1);
    const HypernetWeights hw = init_hypernet(hidden, primary, cfg.n0, seed);
    rows[job] = {width, static_cast<std::uint64_t>(s), hyper_order_term(hw, ui, uj, cfg.r)};
  });
  return finish(std::move(rows));
}

std::string scaling_rows_csv(std::span<const ScalingRow> rows) {
  std::ostringstream os;
  os.precision(17);
  os << "width,seed,term_value\n";
  for (const auto& r : rows) os << r.width << ',' << r.seed << ',' << r.value << '\n';
  return os.str();
}

std::string scaling_aggregate_csv(std::span<const ScalingAggregate> agg) {
  std::ostringstream os;
  os.precision(17);
  os << "width,mean_abs,sd,n\n";
  for (const auto& a : agg) os << a.width << ',' << a.mean_abs << ',' << a.sd << ',' << a.n << '\n';
  return os.str();
}

std::string slope_summary_csv(const SlopeFit& fit) {
  std::ostringstream os;
  os.precision(17);
  os << "slope,intercept,r2,ci_low,ci_high\n"
     << fit.slope << ',' << fit.intercept << ',' << fit.r2 << ',' << fit.ci_low << ','
     << fit.ci_high << '\n';
  return os.str();
}

}  // namespace hyperkernel
