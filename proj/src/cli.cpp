#include "psld/harness/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "psld/errors.hpp"
#include "psld/guidance.hpp"
#include "psld/harness/config.hpp"
#include "psld/harness/data.hpp"
#include "psld/harness/io.hpp"
#include "psld/harness/metrics.hpp"
#include "psld/harness/train.hpp"
#include "psld/kernel.hpp"
#include "psld/recipe.hpp"
#include "psld/sampler.hpp"
#include "psld/score.hpp"

namespace psld::harness {

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag) {
  // splitmix64 of the pair
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

enum Tag : std::uint64_t { kData = 1, kReference, kModelInit, kTrain, kSampler, kMetrics };

struct Common {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
};

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = c.config_path.empty() ? default_config() : load_config(c.config_path);
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.raw["seed"] = std::to_string(*c.seed);
  }
  cfg.refresh_hash();
  return cfg;
}

RunMeta meta(const ExperimentConfig& cfg) { return {cfg.seed, cfg.hash, build_version()}; }

std::vector<std::string> state_columns(std::size_t d) {
  std::vector<std::string> cols{"chain_id"};
  for (std::size_t j = 1; j <= d; ++j) cols.push_back("x" + std::to_string(j));
  for (std::size_t j = 1; j <= d; ++j) cols.push_back("m" + std::to_string(j));
  return cols;
}

// rows of chain_id, x, m and optional trailing text cells
void write_states(CsvWriter& w, const sampler::SampleRun& run, const std::string& extra = {}) {
  const std::size_t width = 2 * run.d;
  for (std::size_t i = 0; i < run.n; ++i) {
    std::vector<std::string> cells{std::to_string(i)};
    for (std::size_t j = 0; j < width; ++j) cells.push_back(format_number(run.z[i * width + j]));
    if (!extra.empty()) cells.push_back(extra);
    w.row_text(cells);
  }
}

Dataset dataset_for(const ExperimentConfig& cfg) {
  std::mt19937_64 rng(derive_seed(cfg.seed, kData));
  Dataset ds = make_dataset(cfg.dataset, cfg.n, rng);
  if (ds.d != cfg.dim)
    throw ConfigError("dataset '" + cfg.dataset + "' has dimension " + std::to_string(ds.d) +
                      " but dim = " + std::to_string(cfg.dim));
  return ds;
}

std::vector<double> reference_draw(const ExperimentConfig& cfg, const Dataset& ds, std::size_t n) {
  std::mt19937_64 rng(derive_seed(cfg.seed, kReference));
  std::vector<double> x;
  ds.draw(n, rng, x);
  return x;
}

score::ScoreFn score_for(const ExperimentConfig& cfg, const Dataset& ds,
                         const std::string& checkpoint) {
  if (checkpoint.empty()) return score::analytic_score(ds.gmm(cfg.params), cfg.params);
  score::Mlp model = score::Mlp::load_file(checkpoint);
  if (model.shape().n_in != 2 * cfg.dim || model.shape().n_out != 2 * cfg.dim)
    throw ConfigError("checkpoint '" + checkpoint + "' does not match dim = " +
                      std::to_string(cfg.dim));
  return score::learned_score(model, cfg.params);
}

void plot(const std::string& path, const sampler::SampleRun& run, const std::vector<double>& data,
          const std::string& title) {
  if (path.empty()) return;
  if (run.d != 2) throw ConfigError("--plot needs two-dimensional data");
  write_scatter_svg(path,
                    {{"samples", run.data_block(), "#d62728"}, {"data", data, "#1f77b4"}},
                    title);
}

void add_common(CLI::App* sub, Common& c, const std::string& default_out) {
  sub->add_option("--config", c.config_path, "config file (key = value lines)")
      ->check(CLI::ExistingFile);
  c.out = default_out;
  sub->add_option("--out", c.out, "output CSV path")->capture_default_str();
  sub->add_option("--seed", c.seed, "master seed, overrides the config");
}

// ---------------------------------------------------------------- train

struct TrainOpts {
  Common c;
  std::string model = "model.ckpt";
  std::string raw_model;
  std::optional<std::size_t> iterations;
};

int run_train(const TrainOpts& o, std::ostream& out) {
  ExperimentConfig cfg = load(o.c);
  if (o.iterations) {
    cfg.train.iterations = *o.iterations;
    cfg.raw["train.iterations"] = std::to_string(*o.iterations);
    cfg.refresh_hash();
  }
  cfg.train.seed = derive_seed(cfg.seed, kTrain);
  const Dataset ds = dataset_for(cfg);
  score::Mlp init =
      score::make_score_model(cfg.dim, cfg.model.hidden, cfg.model.layers, cfg.model.n_freq);
  init.init(derive_seed(cfg.seed, kModelInit));

  std::ofstream csv(o.c.out);
  if (!csv) throw ConfigError("cannot write '" + o.c.out + "'");
  const RunMeta m = meta(cfg);
  csv << "# seed=" << m.seed << " config_hash=" << m.config_hash << " version=" << m.version
      << '\n';
  const TrainResult r = train_loop(init, ds.x, cfg.dim, cfg.params, cfg.train, &csv);
  r.ema.save_file(o.model);
  if (!o.raw_model.empty()) r.model.save_file(o.raw_model);
  const std::size_t k = r.losses.size();
  if (k) {
    const std::size_t w = std::min<std::size_t>(100, k);
    out << "trained " << k << " iterations, mean loss of the last " << w << ": "
        << mean_loss(r, k - w, k) << "\n";
  }
  out << "wrote " << o.c.out << " and " << o.model << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- sample

struct SampleOpts {
  Common c;
  std::string sampler, striding, plot, metrics, checkpoint;
  std::optional<int> nfe;
  std::optional<double> rtol;
  std::optional<std::size_t> batch, n;
};

void apply_sampler_flags(ExperimentConfig& cfg, const SampleOpts& o) {
  if (!o.sampler.empty())
    cfg.sampler.kind = o.sampler == "em"     ? sampler::Kind::em
                       : o.sampler == "sscs" ? sampler::Kind::sscs
                                             : sampler::Kind::ode;
  if (!o.striding.empty())
    cfg.sampler.striding =
        o.striding == "us" ? sampler::Striding::uniform : sampler::Striding::quadratic;
  if (o.nfe) cfg.sampler.nfe = *o.nfe;
  if (o.rtol) cfg.sampler.ode_rtol = *o.rtol;
  if (o.batch) cfg.sampler.block = *o.batch;
  if (o.n) cfg.n = *o.n;
  // overrides count towards the recorded config hash
  if (!o.sampler.empty()) cfg.raw["sampler.kind"] = o.sampler;
  if (!o.striding.empty()) cfg.raw["sampler.striding"] = o.striding == "us" ? "uniform" : "quadratic";
  if (o.nfe) cfg.raw["sampler.nfe"] = std::to_string(*o.nfe);
  if (o.rtol) cfg.raw["sampler.rtol"] = format_number(*o.rtol);
  if (o.batch) cfg.raw["sampler.batch"] = std::to_string(*o.batch);
  if (o.n) cfg.raw["data.n"] = std::to_string(*o.n);
  if (!o.checkpoint.empty()) cfg.raw["checkpoint"] = o.checkpoint;
  cfg.refresh_hash();
  cfg.sampler.validate();
}

int run_sample(const SampleOpts& o, std::ostream& out) {
  ExperimentConfig cfg = load(o.c);
  apply_sampler_flags(cfg, o);
  const Dataset ds = dataset_for(cfg);
  const auto score = score_for(cfg, ds, o.checkpoint);
  const sampler::SampleRun run = sampler::sample(cfg.params, score, cfg.sampler, cfg.n, cfg.dim,
                                                 derive_seed(cfg.seed, kSampler));
  {
    CsvWriter w(o.c.out, state_columns(cfg.dim), meta(cfg));
    write_states(w, run);
  }
  const std::vector<double> ref = reference_draw(cfg, ds, cfg.n);
  plot(o.plot, run, ref, "samples vs data");
  std::mt19937_64 rng(derive_seed(cfg.seed, kMetrics));
  MetricReport rep = compare(run.data_block(), ref, cfg.dim, rng);
  rep.nfe = run.nfe_used;
  if (!o.metrics.empty()) {
    CsvWriter w(o.metrics, {"mean_err", "cov_err", "energy_dist", "sliced_w2", "nfe"}, meta(cfg));
    w.row({rep.mean_err, rep.cov_err, rep.energy_dist, rep.sliced_w2, rep.nfe});
  }
  out << "sampled " << run.n << " chains, nfe " << run.nfe_used << ", energy distance "
      << rep.energy_dist << ", sliced W2 " << rep.sliced_w2 << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- kernel-check

int run_kernel_check(const Common& c, std::ostream& out) {
  const ExperimentConfig cfg = load(c);
  const PsldParams& p = cfg.params;
  CsvWriter w(c.out,
              {"t", "sxx_closed", "sxx_ode", "sxm_closed", "sxm_ode", "smm_closed", "smm_ode",
               "max_abs_err"},
              meta(cfg));
  const std::vector<double> x0{1.0}, m0{0.0};
  Eigen::Matrix2d c0 = Eigen::Matrix2d::Zero();
  c0(1, 1) = p.mass() * p.gamma0;
  double worst = 0.0;
  for (int i = 1; i <= 50; ++i) {
    const double t = i / 50.0;
    const kernel::KernelMoments a = kernel::kernel_moments_hsm(p, x0, t);
    const kernel::KernelMoments b = kernel::kernel_moments_ode_oracle(p, x0, m0, c0, t);
    const double err = std::max({std::abs(a.sxx - b.sxx), std::abs(a.sxm - b.sxm),
                                 std::abs(a.smm - b.smm), std::abs(a.mu_x[0] - b.mu_x[0]),
                                 std::abs(a.mu_m[0] - b.mu_m[0])});
    worst = std::max(worst, err);
    w.row({t, a.sxx, b.sxx, a.sxm, b.sxm, a.smm, b.smm, err});
  }
  out << "max abs error " << worst << " over 50 times\n";
  return kExitOk;
}

// ---------------------------------------------------------------- stationarity

int run_stationarity(const Common& c, double h, std::ostream& out) {
  const ExperimentConfig cfg = load(c);
  const recipe::Grid grid{h, 6.0};
  const recipe::RecipeSpec psld = recipe::instantiate_psld(cfg.params, 1);
  Eigen::MatrixXd q = psld.q_mat();
  q(0, 1) = q(1, 0);  // symmetric part: no longer skew
  const std::vector<std::pair<std::string, recipe::RecipeSpec>> specs{
      {"psld", psld},
      {"cld", recipe::instantiate_cld(1.0, cfg.params.mass_inv, BetaSchedule::constant(4.0), 1)},
      {"vp", recipe::instantiate_vp(BetaSchedule::linear(0.1, 20.0), 1)},
      {"corrupted", recipe::RecipeSpec::dense(1, 1, psld.d_mat(), q, cfg.params.mass_inv,
                                              cfg.params.beta)},
  };
  CsvWriter w(c.out, {"recipe", "h", "residual", "valid_recipe"}, meta(cfg));
  for (const auto& [name, spec] : specs) {
    const double r = recipe::stationarity_residual(spec, grid);
    const bool valid = recipe::validate_recipe(spec).ok();
    w.row_text({name, format_number(h), format_number(r), valid ? "1" : "0"});
    out << name << ": residual " << r << (valid ? "" : " (not a valid recipe)") << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------- gamma-sweep

int run_gamma_sweep(const SampleOpts& o, std::ostream& out) {
  ExperimentConfig cfg = load(o.c);
  apply_sampler_flags(cfg, o);
  const Dataset ds = dataset_for(cfg);
  const std::vector<double> ref = reference_draw(cfg, ds, cfg.n);
  CsvWriter w(o.c.out,
              {"gamma", "nu", "nfe", "energy_dist_em_qs", "sliced_w2_em_qs", "energy_dist_em_us",
               "sliced_w2_em_us"},
              meta(cfg));
  for (double g : {0.0, 0.005, 0.01, 0.02, 0.25}) {
    const PsldParams p = PsldParams::critical(g, cfg.params.mass_inv, cfg.params.beta,
                                              cfg.params.gamma0);
    const auto score = score::analytic_score(ds.gmm(p), p);
    std::vector<double> row{g, p.nu, static_cast<double>(cfg.sampler.nfe)};
    for (auto st : {sampler::Striding::quadratic, sampler::Striding::uniform}) {
      sampler::SamplerConfig sc = cfg.sampler;
      sc.kind = sampler::Kind::em;
      sc.striding = st;
      const auto run = sampler::em_sample(p, score, sc, cfg.n, cfg.dim,
                                          derive_seed(cfg.seed, kSampler));
      std::mt19937_64 rng(derive_seed(cfg.seed, kMetrics));
      const MetricReport rep = compare(run.data_block(), ref, cfg.dim, rng);
      row.push_back(rep.energy_dist);
      row.push_back(rep.sliced_w2);
    }
    w.row(row);
    out << "gamma " << g << ": ED qs " << row[3] << ", us " << row[5] << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------- guide

struct GuideOpts {
  SampleOpts s;
  std::optional<int> label;
  std::optional<double> weight;
  std::string mask, observed;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

int run_guide(const GuideOpts& o, std::ostream& out) {
  ExperimentConfig cfg = load(o.s.c);
  apply_sampler_flags(cfg, o.s);
  if (o.label) cfg.guide.target_label = *o.label;
  if (o.weight) cfg.guide.weight = *o.weight;
  if (!o.mask.empty()) {
    cfg.guide.mode = guidance::Mode::imputation;
    cfg.guide.mask.clear();
    for (const auto& b : split_list(o.mask)) {
      if (b != "0" && b != "1") throw ConfigError("--mask entries must be 0 or 1");
      cfg.guide.mask.push_back(b == "1");
    }
  }
  if (!o.observed.empty()) {
    cfg.observed.clear();
    for (const auto& v : split_list(o.observed)) {
      try {
        std::size_t used = 0;
        cfg.observed.push_back(std::stod(v, &used));
        if (used != v.size()) throw std::invalid_argument(v);
      } catch (const std::logic_error&) {
        throw ConfigError("--observed: '" + v + "' is not a number");
      }
    }
  }
  if (o.label) cfg.raw["guide.label"] = std::to_string(*o.label);
  if (o.weight) cfg.raw["guide.weight"] = format_number(*o.weight);
  if (!o.mask.empty()) cfg.raw["guide.mask"] = o.mask;
  if (!o.observed.empty()) cfg.raw["guide.observed"] = o.observed;
  cfg.refresh_hash();
  cfg.validate();
  const Dataset ds = dataset_for(cfg);
  const auto base = score_for(cfg, ds, o.s.checkpoint);
  const std::uint64_t seed = derive_seed(cfg.seed, kSampler);

  if (cfg.guide.mode == guidance::Mode::imputation) {
    if (cfg.observed.size() != cfg.dim)
      throw ConfigError("imputation needs --observed with " + std::to_string(cfg.dim) +
                        " values");
    const auto run = guidance::impute_sample(cfg.params, base, cfg.observed, cfg.guide.mask,
                                             cfg.sampler, cfg.n, seed);
    std::string tag;
    for (bool b : cfg.guide.mask) tag += tag.empty() ? (b ? "1" : "0") : (b ? ";1" : ";0");
    auto cols = state_columns(cfg.dim);
    cols.push_back("observed");
    CsvWriter w(o.s.c.out, cols, meta(cfg));
    write_states(w, run, tag);
    plot(o.s.plot, run, reference_draw(cfg, ds, cfg.n), "imputed samples");
    out << "imputed " << run.n << " chains, nfe " << run.nfe_used << "\n";
    return kExitOk;
  }
  const auto guided = guidance::guided_score(
      base, guidance::gmm_class_grad_fn(ds.gmm(cfg.params), cfg.params), cfg.guide.weight,
      cfg.guide.target_label, cfg.dim);
  const auto run = sampler::sample(cfg.params, guided, cfg.sampler, cfg.n, cfg.dim, seed);
  auto cols = state_columns(cfg.dim);
  cols.push_back("label");
  CsvWriter w(o.s.c.out, cols, meta(cfg));
  write_states(w, run, std::to_string(cfg.guide.target_label));
  plot(o.s.plot, run, reference_draw(cfg, ds, cfg.n), "guided samples");
  out << "guided " << run.n << " chains toward label " << cfg.guide.target_label << "\n";
  return kExitOk;
}

void add_sampler_flags(CLI::App* sub, SampleOpts& o) {
  sub->add_option("--sampler", o.sampler, "em, sscs or ode")
      ->check(CLI::IsMember({"em", "sscs", "ode"}));
  sub->add_option("--nfe", o.nfe, "number of steps N")->check(CLI::PositiveNumber);
  sub->add_option("--striding", o.striding, "us (uniform) or qs (quadratic)")
      ->check(CLI::IsMember({"us", "qs"}));
  sub->add_option("--rtol", o.rtol, "ode relative tolerance")->check(CLI::PositiveNumber);
  sub->add_option("--batch", o.batch, "chains per generator block")->check(CLI::PositiveNumber);
  sub->add_option("--n", o.n, "number of chains")->check(CLI::PositiveNumber);
  sub->add_option("--checkpoint", o.checkpoint, "learned model; analytic score when absent")
      ->check(CLI::ExistingFile);
  sub->add_option("--plot", o.plot, "SVG scatter of samples over data (d = 2)");
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"phase space Langevin diffusion toolkit", "psld"};
  app.require_subcommand(1);

  TrainOpts train;
  auto* t = app.add_subcommand("train", "fit an epsilon model on the configured dataset");
  add_common(t, train.c, "train_log.csv");
  t->add_option("--model", train.model, "EMA weights checkpoint")->capture_default_str();
  t->add_option("--raw-model", train.raw_model, "non-averaged weights checkpoint");
  t->add_option("--iterations", train.iterations, "overrides train.iterations");

  SampleOpts sample;
  auto* s = app.add_subcommand("sample", "draw samples with em, sscs or the ode");
  add_common(s, sample.c, "samples.csv");
  add_sampler_flags(s, sample);
  s->add_option("--metrics", sample.metrics, "CSV with the metric report against fresh data");

  Common kc;
  auto* k = app.add_subcommand("kernel-check", "closed-form kernel vs the moment ODE");
  add_common(k, kc, "kernel_check.csv");

  Common sc;
  double h = 0.02;
  auto* st = app.add_subcommand("stationarity", "Fokker-Planck residual of several recipes");
  add_common(st, sc, "stationarity.csv");
  st->add_option("--grid-h", h, "grid spacing")->capture_default_str();

  SampleOpts sweep;
  auto* g = app.add_subcommand("gamma-sweep", "EM-QS and EM-US quality over several Gamma");
  add_common(g, sweep.c, "gamma_sweep.csv");
  add_sampler_flags(g, sweep);

  GuideOpts guide;
  auto* gd = app.add_subcommand("guide", "class guidance or coordinate imputation");
  add_common(gd, guide.s.c, "guided.csv");
  add_sampler_flags(gd, guide.s);
  gd->add_option("--label", guide.label, "target class");
  gd->add_option("--weight", guide.weight, "guidance scale")->check(CLI::NonNegativeNumber);
  gd->add_option("--mask", guide.mask, "observed coordinates, e.g. 1,0 (imputation)");
  gd->add_option("--observed", guide.observed, "observed values, e.g. 1,0");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*t) return run_train(train, out);
    if (*s) return run_sample(sample, out);
    if (*k) return run_kernel_check(kc, out);
    if (*st) return run_stationarity(sc, h, out);
    if (*g) return run_gamma_sweep(sweep, out);
    if (*gd) return run_guide(guide, out);
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::domain_error& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitOther;
  }
  return kExitOther;
}

}  // namespace psld::harness
