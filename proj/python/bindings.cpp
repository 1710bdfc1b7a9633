#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "hyperkernel/correlation.hpp"
#include "hyperkernel/datasets.hpp"
#include "hyperkernel/duals.hpp"
#include "hyperkernel/errors.hpp"
#include "hyperkernel/kernels.hpp"
#include "hyperkernel/network.hpp"
#include "hyperkernel/regression.hpp"

namespace py = pybind11;
using namespace hyperkernel;

namespace {

// Rows of X and Z pair up into hypernetwork inputs.
std::vector<HyperInput> to_inputs(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z) {
  if (X.rows() != Z.rows()) throw py::value_error("X and Z need the same number of rows");
  std::vector<HyperInput> out(static_cast<std::size_t>(X.rows()));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    out[i].x = X.row(i).transpose();
    out[i].z = Z.row(i).transpose();
  }
  return out;
}

HyperKernelConfig config_for(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z, int L, int H) {
  return {L, H, static_cast<int>(X.cols()), static_cast<int>(Z.cols())};
}

py::array_t<std::uint8_t> images_to_array(const ImageSet& s) {
  py::array_t<std::uint8_t> a({s.count, s.rows, s.cols});
  std::memcpy(a.mutable_data(), s.pixels.data(), s.pixels.size());
  return a;
}

}  // namespace

PYBIND11_MODULE(_hyperkernel, m) {
  m.doc() = "Infinite-width hypernetwork kernels";
  m.attr("__version__") = HYPERKERNEL_VERSION;
  m.attr("rng_name") = kRngName;

  py::register_exception<Error>(m, "HyperkernelError", PyExc_ValueError);

  m.def("dual_relu", [](double s11, double s12, double s22) { return dual_relu({s11, s12, s22}); },
        py::arg("s11"), py::arg("s12"), py::arg("s22"));
  m.def("dual_relu_dot",
        [](double s11, double s12, double s22) { return dual_relu_dot({s11, s12, s22}); },
        py::arg("s11"), py::arg("s12"), py::arg("s22"));
  m.def(
      "mc_dual",
      [](double s11, double s12, double s22, std::uint64_t n, std::uint64_t seed) {
        const McDual r = mc_dual({s11, s12, s22}, n, seed);
        return py::dict(py::arg("mean") = r.mean, py::arg("std_error") = r.std_error,
                        py::arg("mean_dot") = r.mean_dot, py::arg("std_error_dot") = r.std_error_dot);
      },
      py::arg("s11"), py::arg("s12"), py::arg("s22"), py::arg("n_samples") = 1'000'000,
      py::arg("seed") = 0);

  m.def(
      "mlp_nngp",
      [](const Vector& x, const Vector& xp, int L) { return mlp_nngp(x, xp, L).cov.back().s12; },
      py::arg("x"), py::arg("x_prime"), py::arg("L"));
  m.def(
      "mlp_ntk", [](const Vector& x, const Vector& xp, int L) { return mlp_ntk(x, xp, L); },
      py::arg("x"), py::arg("x_prime"), py::arg("L"));

  m.def(
      "hyper_nngp",
      [](const Vector& x, const Vector& z, const Vector& xp, const Vector& zp, int L, int H) {
        const HyperKernelConfig cfg{L, H, static_cast<int>(x.size()), static_cast<int>(z.size())};
        return hyper_nngp_value({x, z}, {xp, zp}, cfg);
      },
      py::arg("x"), py::arg("z"), py::arg("x_prime"), py::arg("z_prime"), py::arg("L"), py::arg("H"));
  m.def(
      "hyper_ntk",
      [](const Vector& x, const Vector& z, const Vector& xp, const Vector& zp, int L, int H) {
        const HyperKernelConfig cfg{L, H, static_cast<int>(x.size()), static_cast<int>(z.size())};
        const HyperNtk k = hyper_ntk({x, z}, {xp, zp}, cfg);
        return py::dict(py::arg("theta_f") = k.theta_f, py::arg("theta_g") = k.theta_g,
                        py::arg("theta_h") = k.theta_h);
      },
      py::arg("x"), py::arg("z"), py::arg("x_prime"), py::arg("z_prime"), py::arg("L"), py::arg("H"));

  m.def(
      "hyper_gram",
      [](const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z, int L, int H, const std::string& kind,
         int threads) {
        const auto in = to_inputs(X, Z);
        const FactorizedHyperGram g(config_for(X, Z, L, H), parse_kernel_kind(kind), threads);
        py::gil_scoped_release release;
        return Eigen::MatrixXd(g.gram(in));
      },
      py::arg("X"), py::arg("Z"), py::arg("L"), py::arg("H"), py::arg("kind") = "ntk",
      py::arg("threads") = 1);
  m.def(
      "fit_predict",
      [](const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z, const Vector& y,
         const Eigen::MatrixXd& X_test, const Eigen::MatrixXd& Z_test, int L, int H,
         const std::string& kind, double eps, int threads) {
        const auto train = to_inputs(X, Z);
        const auto test = to_inputs(X_test, Z_test);
        const FactorizedHyperGram g(config_for(X, Z, L, H), parse_kernel_kind(kind), threads);
        py::gil_scoped_release release;
        return fit_predict_hyper(train, y, test, g, eps);
      },
      py::arg("X"), py::arg("Z"), py::arg("y"), py::arg("X_test"), py::arg("Z_test"), py::arg("L"),
      py::arg("H"), py::arg("kind") = "ntk", py::arg("eps") = kDefaultRidge, py::arg("threads") = 1);

  m.def("fourier_features", &fourier_features, py::arg("z"), py::arg("k"), py::arg("seed") = 0);
  m.def("fourier_limit_kernel", &fourier_limit_kernel, py::arg("z"), py::arg("z_prime"));

  py::class_<HypernetWeights>(m, "Hypernet")
      .def(py::init([](int L, int H, int n0, int m0, int meta_width, int primary_width,
                       std::uint64_t seed) {
             return init_hypernet(HyperKernelConfig{L, H, n0, m0}, meta_width, primary_width, seed);
           }),
           py::arg("L"), py::arg("H"), py::arg("n0"), py::arg("m0"), py::arg("meta_width"),
           py::arg("primary_width"), py::arg("seed") = 0)
      .def_property_readonly("primary_widths", [](const HypernetWeights& hw) { return hw.primary_widths; })
      .def_property_readonly("meta_widths", [](const HypernetWeights& hw) { return hw.meta.widths(); })
      .def("__call__",
           [](const HypernetWeights& hw, const Vector& x, const Vector& z) {
             return forward_hypernet(hw, {x, z}).output();
           },
           py::arg("x"), py::arg("z"))
      .def("grad",
           [](const HypernetWeights& hw, const Vector& x, const Vector& z) {
             return grad_hypernet(hw, {x, z});
           },
           py::arg("x"), py::arg("z"))
      .def("kernels",
           [](const HypernetWeights& hw, const Vector& x, const Vector& z, const Vector& xp,
              const Vector& zp) {
             const EmpiricalKernels k = empirical_kernels(hw, {x, z}, {xp, zp});
             return py::dict(py::arg("k_h") = k.k_h, py::arg("k_g") = k.k_g,
                             py::arg("k_f_diag_mean") = k.k_f_diag_mean,
                             py::arg("k_f_offdiag_rms") = k.k_f_offdiag_rms);
           },
           py::arg("x"), py::arg("z"), py::arg("x_prime"), py::arg("z_prime"));

  m.def(
      "synthetic_images",
      [](int count, int size, std::uint64_t seed) {
        return images_to_array(synthetic_images(count, size, seed));
      },
      py::arg("count"), py::arg("size") = 28, py::arg("seed") = 0);
  m.def(
      "load_idx", [](const std::string& path) { return images_to_array(load_idx(path)); },
      py::arg("path"));

  m.def(
      "fit_loglog",
      [](const std::vector<double>& x, const std::vector<double>& y) {
        const SlopeFit f = fit_loglog(x, y);
        return py::dict(py::arg("slope") = f.slope, py::arg("intercept") = f.intercept,
                        py::arg("r2") = f.r2, py::arg("ci_low") = f.ci_low,
                        py::arg("ci_high") = f.ci_high);
      },
      py::arg("x"), py::arg("y"));
}
