#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>

#include "cli.hpp"
#include "hyperkernel/correlation.hpp"
#include "hyperkernel/datasets.hpp"
#include "hyperkernel/duals.hpp"
#include "hyperkernel/experiments.hpp"
#include "hyperkernel/kernels.hpp"
#include "hyperkernel/parallel.hpp"
#include "hyperkernel/regression.hpp"

namespace hyperkernel::cli {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string out = ".";
  std::uint64_t seed = 0;
  int threads = 1;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--out", c.out, "Output directory")->capture_default_str();
  app->add_option("--seed", c.seed, "Root seed")->capture_default_str();
  app->add_option("--threads", c.threads, "Worker threads (results do not depend on it)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app->add_option("--config", "key=value file; command-line flags win");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

std::string option_value(const CLI::Option* opt) {
  if (opt->count() == 0) return opt->get_default_str();
  std::string joined;
  for (const auto& r : opt->results()) joined += (joined.empty() ? "" : ";") + r;
  return joined;
}

std::string csv_field(std::string s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

void write_manifest(const fs::path& dir, const CLI::App* sub) {
  std::ostringstream os;
  os << "key,value\n";
  os << "subcommand," << sub->get_name() << '\n';
  os << "library_version," << HYPERKERNEL_VERSION << '\n';
  os << "rng," << kRngName << '\n';
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "help-all" || name == "config" || name == "out") continue;
    os << csv_field(name) << ',' << csv_field(option_value(opt)) << '\n';
  }
  write_text(dir / "manifest.csv", os.str());
}

// ---- config file handling -----------------------------------------------------

bool has_flag(const std::vector<std::string>& args, const std::string& key) {
  const std::string flag = "--" + key;
  for (const auto& a : args)
    if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
  return false;
}

/// Replaces `--config FILE` by the file's key=value pairs for keys not given
/// on the command line.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw ConfigError("--config needs a file name");
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      out.push_back(args[i]);
    }
  }
  if (path.empty()) return out;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_config(in);
  } catch (const CLI::Error& e) {
    throw ConfigError(std::string("config file: ") + e.what());
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    if (!item.parents.empty())
      throw ConfigError("config file: sections are not supported (key '" + item.fullname() + "')");
    if (has_flag(out, item.name)) continue;
    std::string value;
    for (const auto& v : item.inputs) value += (value.empty() ? "" : ",") + v;
    out.push_back("--" + item.name + "=" + value);
  }
  return out;
}

// ---- subcommand bodies ----------------------------------------------------------

struct DualsOpts {
  int pairs = 50;
  std::uint64_t samples = 1000000;
};

bool run_duals(const DualsOpts& o, const Common& c, std::ostream& out) {
  struct Row {
    CovPair lam;
    double closed, closed_dot;
    McDual mc;
    bool pass;
  };
  std::vector<Row> rows(o.pairs);
  Rng rng(c.seed, 0x6475616c);
  for (auto& r : rows) {
    const double s11 = rng.uniform(0.1, 4.0), s22 = rng.uniform(0.1, 4.0);
    r.lam = {s11, rng.uniform(-1.0, 1.0) * std::sqrt(s11 * s22), s22};
  }
  parallel_for(rows.size(), c.threads, [&](std::size_t i) {
    Row& r = rows[i];
    r.closed = dual_relu(r.lam);
    r.closed_dot = dual_relu_dot(r.lam);
    r.mc = mc_dual(r.lam, o.samples, mix64(c.seed) + i);
    r.pass = std::abs(r.closed - r.mc.mean) <= 3 * r.mc.std_error &&
             std::abs(r.closed_dot - r.mc.mean_dot) <= 3 * r.mc.std_error_dot;
  });
  std::ostringstream os;
  os.precision(17);
  os << "s11,s12,s22,dual,mc_mean,mc_stderr,dual_dot,mc_mean_dot,mc_stderr_dot,pass\n";
  int passed = 0;
  for (const auto& r : rows) {
    os << r.lam.s11 << ',' << r.lam.s12 << ',' << r.lam.s22 << ',' << r.closed << ',' << r.mc.mean
       << ',' << r.mc.std_error << ',' << r.closed_dot << ',' << r.mc.mean_dot << ','
       << r.mc.std_error_dot << ',' << (r.pass ? 1 : 0) << '\n';
    passed += r.pass;
  }
  write_text(fs::path(c.out) / "duals_check.csv", os.str());
  out << "duals-check: " << passed << "/" << rows.size() << " pairs within 3 standard errors\n";
  return passed == static_cast<int>(rows.size());
}

struct KernelOpts {
  std::string input;
  int L = 2;
  int H = 2;
};

Vector parse_numbers(const std::string& field) {
  std::istringstream is(field);
  std::vector<double> v;
  double d;
  while (is >> d) v.push_back(d);
  if (!is.eof()) throw Error("kernel input: bad number in '" + field + "'");
  return Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

void run_kernel(const KernelOpts& o, const Common& c, std::ostream& out) {
  std::ifstream in(o.input);
  if (!in) throw Error("cannot read " + o.input);
  std::string line;
  if (!std::getline(in, line) || line != "x,z,x_prime,z_prime")
    throw Error("kernel input: expected header x,z,x_prime,z_prime");
  std::ostringstream os;
  os.precision(17);
  os << "row,theta_f,theta_g,theta_h,nngp\n";
  int row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 4) throw Error("kernel input: row " + std::to_string(row) + " needs 4 fields");
    const HyperInput u{parse_numbers(f[0]), parse_numbers(f[1])};
    const HyperInput v{parse_numbers(f[2]), parse_numbers(f[3])};
    const HyperKernelConfig cfg{o.L, o.H, static_cast<int>(u.x.size()), static_cast<int>(u.z.size())};
    const HyperNtk k = hyper_ntk(u, v, cfg);
    os << row++ << ',' << k.theta_f << ',' << k.theta_g << ',' << k.theta_h << ','
       << hyper_nngp_value(u, v, cfg) << '\n';
  }
  write_text(fs::path(c.out) / "kernel.csv", os.str());
  out << "kernel: " << row << " rows\n";
}

struct ConvergeOpts {
  ConvergeConfig cfg;
  std::vector<double> x;
};

void run_converge(ConvergeOpts& o, const Common& c, std::ostream& out) {
  o.cfg.seed = c.seed;
  o.cfg.threads = c.threads;
  if (!o.x.empty()) o.cfg.x = Eigen::Map<Vector>(o.x.data(), static_cast<Eigen::Index>(o.x.size()));
  const auto rows = converge_experiment(o.cfg);
  write_text(fs::path(c.out) / "converge.csv", converge_csv(rows));
  const auto limit = converge_limit(o.cfg);
  const auto thetas = o.cfg.theta_grid();
  std::ostringstream os;
  os.precision(17);
  os << "theta,theta_h\n";
  for (std::size_t i = 0; i < thetas.size(); ++i) os << thetas[i] << ',' << limit[i] << '\n';
  write_text(fs::path(c.out) / "converge_limit.csv", os.str());
  out << "converge: " << rows.size() << " cells written\n";
}

void run_drift(DriftConfig cfg, const Common& c, std::ostream& out) {
  cfg.seed = c.seed;
  cfg.threads = c.threads;
  const auto rows = kernel_drift_experiment(cfg);
  write_text(fs::path(c.out) / "drift.csv", drift_csv(rows));
  write_text(fs::path(c.out) / "drift_summary.csv", drift_summary_csv(rows));
  for (const auto& [w, m] : drift_medians(rows)) out << "width " << w << ": median drift " << m << '\n';
}

void write_scaling(const std::string& prefix, const ScalingResult& res, const Common& c,
                   std::ostream& out) {
  const fs::path dir(c.out);
  write_text(dir / (prefix + "_rows.csv"), scaling_rows_csv(res.rows));
  write_text(dir / (prefix + "_aggregate.csv"), scaling_aggregate_csv(res.aggregates));
  write_text(dir / (prefix + "_slope.csv"), slope_summary_csv(res.fit_mean));
  write_text(dir / (prefix + "_slope_median.csv"), slope_summary_csv(res.fit_median));
  out << prefix << ": slope(mean|.|) = " << res.fit_mean.slope << " [" << res.fit_mean.ci_low
      << ", " << res.fit_mean.ci_high << "], slope(median|.|) = " << res.fit_median.slope << '\n';
}

struct RegressOpts {
  RegressionConfig cfg;
  std::string mode = "representation";
  std::vector<std::string> kernels{"nngp", "ntk"};
  std::string export_task;
};

void finish_regress_config(RegressOpts& o, const Common& c) {
  o.cfg.task.mode = parse_task_mode(o.mode);
  o.cfg.kernels.clear();
  for (const auto& k : o.kernels) o.cfg.kernels.push_back(parse_kernel_kind(k));
  o.cfg.seed = c.seed;
  o.cfg.threads = c.threads;
}

void add_data_options(CLI::App* app, RegressOpts& o) {
  auto& cfg = o.cfg;
  app->add_option("--images", cfg.idx_path, "IDX3 image file (default: synthetic images)");
  app->add_option("--image-size", cfg.image_size, "Synthetic image side length")->capture_default_str();
  app->add_option("--subsets", cfg.subsets, "Number of training subsets")->capture_default_str();
  app->add_option("--train-images", cfg.train_images, "Images per subset (N)")->capture_default_str();
  app->add_option("--test-images", cfg.test_images, "Held-out images")->capture_default_str();
  app->add_option("--pixels-per-image", cfg.task.pixels_per_image, "Sampled pixels per training image")
      ->capture_default_str();
  app->add_option("--mode", o.mode, "representation or inpainting")->capture_default_str();
  app->add_option("--fourier-k", cfg.task.fourier_k, "Fourier features for z (0: raw coordinates)")
      ->capture_default_str();
  app->add_option("--coord-scale", cfg.task.coord_scale, "Scale applied to [0,1] coordinates")
      ->capture_default_str();
  app->add_option("--L", cfg.arch.L, "Meta depth")->capture_default_str();
  app->add_option("--H", cfg.arch.H, "Primary depth")->capture_default_str();
}

}  // namespace

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Infinite-width kernels for ReLU networks and hypernetworks"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  Common common;

  auto* duals = app.add_subcommand("duals-check", "Closed-form ReLU duals against Monte Carlo");
  DualsOpts dopt;
  duals->add_option("--pairs", dopt.pairs, "Random covariance blocks")->capture_default_str();
  duals->add_option("--samples", dopt.samples, "Monte Carlo samples per block")->capture_default_str();
  add_common(duals, common);

  auto* kernel = app.add_subcommand("kernel", "Evaluate theta_f, theta_g, theta_h and the NNGP kernel");
  KernelOpts kopt;
  kernel->add_option("--input", kopt.input, "CSV with header x,z,x_prime,z_prime; space-separated vectors")
      ->required();
  kernel->add_option("--L", kopt.L, "Meta depth")->capture_default_str();
  kernel->add_option("--H", kopt.H, "Primary depth")->capture_default_str();
  add_common(kernel, common);

  auto* converge = app.add_subcommand("converge", "Empirical hyperkernel mean and variance over seeds");
  ConvergeOpts copt;
  converge->add_option("--L", copt.cfg.L, "Meta depth")->capture_default_str();
  converge->add_option("--H", copt.cfg.H, "Primary depth")->capture_default_str();
  converge->add_option("--widths-f", copt.cfg.widths_f, "Meta widths")->delimiter(',')->capture_default_str();
  converge->add_option("--widths-g", copt.cfg.widths_g, "Primary widths")->delimiter(',')->capture_default_str();
  converge->add_option("--seeds", copt.cfg.seeds, "Seeds per cell")->capture_default_str();
  converge->add_option("--thetas", copt.cfg.thetas, "Angles for z' (default: 9 in [-pi/2, pi/2])")
      ->delimiter(',');
  converge->add_option("--x", copt.x, "Fixed meta input (default 1,-1)")->delimiter(',');
  add_common(converge, common);

  auto* drift = app.add_subcommand("drift", "Relative kernel change after one SGD step");
  DriftConfig dcfg;
  drift->add_option("--L", dcfg.L, "Meta depth")->capture_default_str();
  drift->add_option("--H", dcfg.H, "Primary depth")->capture_default_str();
  drift->add_option("--widths", dcfg.widths, "Widths (both nets)")->delimiter(',')->capture_default_str();
  drift->add_option("--seeds", dcfg.seeds, "Seeds per width")->capture_default_str();
  drift->add_option("--mu", dcfg.mu, "Learning rate")->capture_default_str();
  drift->add_option("--n-train", dcfg.n_train, "Training samples (one full batch)")->capture_default_str();
  add_common(drift, common);

  auto* corr = app.add_subcommand("corr-scaling", "Width scaling of correlation terms T^r");
  TProbeConfig tcfg;
  corr->add_option("--r", tcfg.r, "Order")->capture_default_str();
  corr->add_option("--widths", tcfg.widths, "Widths")->delimiter(',')->capture_default_str();
  corr->add_option("--seeds", tcfg.seeds, "Seeds per width")->capture_default_str();
  corr->add_option("--L", tcfg.L, "Depth")->capture_default_str();
  corr->add_option("--n0", tcfg.n0, "Input dimension")->capture_default_str();
  corr->add_option("--fixed-input", tcfg.fixed_input, "Use one example for every gradient")
      ->capture_default_str();
  add_common(corr, common);

  auto* order = app.add_subcommand("order-scaling", "Width scaling of hypernetwork order terms K^(r)");
  KProbeConfig kcfg;
  order->add_option("--r", kcfg.r, "Order (1..4)")->capture_default_str();
  order->add_option("--H", kcfg.H, "Primary depth (1..3)")->capture_default_str();
  order->add_option("--widths", kcfg.widths, "Meta widths")->delimiter(',')->capture_default_str();
  order->add_option("--seeds", kcfg.seeds, "Seeds per width")->capture_default_str();
  order->add_option("--L", kcfg.L, "Meta depth")->capture_default_str();
  order->add_option("--n0", kcfg.n0, "Meta input dimension")->capture_default_str();
  add_common(order, common);

  auto* regress = app.add_subcommand("regress", "Kernel regression on image representation or inpainting");
  RegressOpts ropt;
  add_data_options(regress, ropt);
  regress->add_option("--kernel", ropt.kernels, "nngp and/or ntk")->delimiter(',')->capture_default_str();
  regress->add_option("--eps", ropt.cfg.eps, "Ridge parameter")->capture_default_str();
  regress->add_option("--export-task", ropt.export_task, "Also write the training task CSV here");
  add_common(regress, common);

  auto* baseline = app.add_subcommand("train-baseline", "SGD-trained hypernetwork on the regression task");
  RegressOpts bopt;
  add_data_options(baseline, bopt);
  baseline->add_option("--meta-width", bopt.cfg.hn_meta_width, "Meta hidden width")->capture_default_str();
  baseline->add_option("--primary-width", bopt.cfg.hn_primary_width, "Primary hidden width")
      ->capture_default_str();
  baseline->add_option("--epochs", bopt.cfg.hn_epochs, "Epochs")->capture_default_str();
  baseline->add_option("--batch", bopt.cfg.hn_batch, "Batch size")->capture_default_str();
  baseline->add_option("--lr", bopt.cfg.hn_lr, "Learning rate")->capture_default_str();
  add_common(baseline, common);

  auto* large = app.add_subcommand("large-lr", "Two-layer MLP trained with learning rate sqrt(width)");
  LargeLrConfig lcfg;
  double lr_override = -1.0;
  large->add_option("--widths", lcfg.widths, "Widths")->delimiter(',')->capture_default_str();
  large->add_option("--seeds", lcfg.seeds, "Seeds per width")->capture_default_str();
  large->add_option("--mu", lr_override, "Fixed learning rate (default: sqrt(width))");
  large->add_option("--epochs", lcfg.epochs, "Epochs")->capture_default_str();
  large->add_option("--batch", lcfg.batch, "Batch size")->capture_default_str();
  large->add_option("--p", lcfg.p, "Loss exponent (1 or 2)")->capture_default_str();
  large->add_option("--n-train", lcfg.n_train, "Training samples")->capture_default_str();
  large->add_option("--n-test", lcfg.n_test, "Test samples")->capture_default_str();
  large->add_option("--n0", lcfg.n0, "Input dimension")->capture_default_str();
  add_common(large, common);

  std::vector<std::string> args;
  try {
    args = expand_config(raw_args);
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    fs::create_directories(common.out);
    write_manifest(common.out, sub);
    bool ok = true;
    if (sub == duals) {
      ok = run_duals(dopt, common, out);
    } else if (sub == kernel) {
      run_kernel(kopt, common, out);
    } else if (sub == converge) {
      run_converge(copt, common, out);
    } else if (sub == drift) {
      run_drift(dcfg, common, out);
    } else if (sub == corr) {
      tcfg.seed = common.seed;
      tcfg.threads = common.threads;
      write_scaling("corr", scaling_probe_T(tcfg), common, out);
    } else if (sub == order) {
      kcfg.seed = common.seed;
      kcfg.threads = common.threads;
      write_scaling("order", scaling_probe_K(kcfg), common, out);
    } else if (sub == regress) {
      finish_regress_config(ropt, common);
      ropt.cfg.hypernet_baseline = false;
      if (!ropt.export_task.empty()) {
        const RegressionData data = prepare_regression(ropt.cfg);
        PixelTask t;
        t.mode = ropt.cfg.task.mode;
        t.samples = data.train_samples;
        write_text(ropt.export_task, task_to_csv(t));
      }
      const auto rows = regression_experiment(ropt.cfg);
      write_text(fs::path(common.out) / "regress.csv", regression_csv(rows));
      for (const auto& r : rows) out << r.method << ": mse " << r.mse << '\n';
    } else if (sub == baseline) {
      finish_regress_config(bopt, common);
      const RegressionData data = prepare_regression(bopt.cfg);
      const double mse = hypernet_baseline_mse(bopt.cfg, data);
      write_text(fs::path(common.out) / "baseline.csv", regression_csv({{"hypernet", mse}}));
      out << "hypernet: mse " << mse << '\n';
    } else if (sub == large) {
      if (lr_override >= 0) lcfg.mu = lr_override;
      lcfg.seed = common.seed;
      lcfg.threads = common.threads;
      const auto rows = large_lr_experiment(lcfg);
      write_text(fs::path(common.out) / "large_lr.csv", large_lr_csv(rows));
      for (const auto& [w, m] : large_lr_median_test(rows))
        out << "width " << w << ": median test loss " << m << '\n';
    }
    return ok ? kExitOk : kExitRuntime;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace hyperkernel::cli
