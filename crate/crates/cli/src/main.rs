//! Command-line front end: field simulation, mask and distance utilities,
//! estimator pipelines, closed-form theory lookups, and the seeded
//! experiment runners.
//!
//! Exit codes: 0 on success, 1 on invalid input or configuration, 2 on a
//! numeric failure at runtime. Data goes to the configured output location
//! (or standard output when none is given); diagnostics go to standard
//! error. Every sampling subcommand requires `--seed`, so a command line
//! reproduces its output byte for byte.

mod config;
mod selftest;

use clap::{Args, Parser, Subcommand};
use exrange::estimators::{
    cdf_direct, cdf_erosion, chi_curve, default_radii, slope_at_zero, SlopeMethod,
    BOOTSTRAP_RESAMPLES,
};
use exrange::experiments::{
    conditioned_fields, conditioned_range_samples, run_counterexample, run_fig3, run_fig4,
    run_fig6, run_rv_stability, slope_theory, ResultRow, SLOPE_FIT_WINDOW_PIXELS,
};
use exrange::geometry::{
    distance_transform, excursion_mask, mask_to_string, read_mask_file, write_mask_file,
    ExcursionMask,
};
use exrange::randfield::{
    build_covariance, cholesky_factor, conditional_factor, grid_to_string, quantile_threshold,
    read_grid_file, sample_field, sample_field_once, write_grid_file, FieldModel, GridField,
    GridSpec, RngSeed,
};
use exrange::{Error, Result};
use rayon::prelude::*;
use std::io::Write;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "exrange",
    version,
    about = "Excursion-set geometry and the extremal range of random fields",
    after_help = "Exit codes: 0 success, 1 invalid input, 2 numeric failure."
)]
struct Cli {
    /// Worker threads for replicate-parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one unconditioned field and emit it in grid text format.
    Simulate(SimulateArgs),
    /// Threshold a grid file into a 0/1 excursion mask.
    Mask(MaskArgs),
    /// Exact Euclidean distance transform of a mask file (grid output).
    Edt(EdtArgs),
    /// Estimate the CDF of the extremal range at one threshold.
    Cdf(CdfArgs),
    /// Estimate the slope of the range CDF at radius zero.
    Slope(SlopeArgs),
    /// Estimate the tail-dependence curve and its boundary derivative.
    Chi(ChiArgs),
    /// Print one closed-form reference value.
    Theory(TheoryArgs),
    /// Slope-versus-threshold sweep at absolute levels (table + manifest).
    Fig3(RunArgs),
    /// Slope-versus-quantile sweep; regularly varying fields plateau.
    Fig4(RunArgs),
    /// Boundary-derivative sweep of the tail-dependence curve.
    Fig6(RunArgs),
    /// Hole-pattern counterexample: range bound sqrt(2)/u, medians -> 0.
    Counterexample(CounterexampleArgs),
    /// Deep-threshold stability of the conditioned range CDF.
    RvStability(RunArgs),
    /// Fast invariant suite (oracle, identities, determinism); scratch
    /// files go to the system temp directory.
    Selftest,
}

#[derive(Args)]
struct SimulateArgs {
    /// Model: bare name (gaussian, student, chisq, mixture, polkadot) or a
    /// full tag like gaussian(nu=2.5,ell=0.1).
    #[arg(long, default_value = "gaussian")]
    model: String,
    /// Grid side in pixels (odd, so a pixel sits at the origin).
    #[arg(long, default_value_t = 61)]
    n: usize,
    /// Pixel spacing in domain units.
    #[arg(long, default_value_t = 0.03)]
    spacing: f64,
    /// Root seed; all randomness derives from it.
    #[arg(long)]
    seed: u64,
    /// Replicate index within the seed's stream space.
    #[arg(long, default_value_t = 0)]
    rep: u64,
    /// Output file (standard output when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MaskArgs {
    /// Input grid file.
    #[arg(long = "in")]
    input: PathBuf,
    /// Threshold level u.
    #[arg(long, allow_hyphen_values = true)]
    u: f64,
    /// Output file (standard output when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EdtArgs {
    /// Input mask file.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output file (standard output when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ThresholdArg {
    /// Absolute threshold level.
    #[arg(long, group = "level", allow_hyphen_values = true)]
    u: Option<f64>,
    /// Marginal quantile level in (0, 1), mapped through the model.
    #[arg(long, group = "level")]
    p: Option<f64>,
}

impl ThresholdArg {
    /// (column name, level as given, absolute threshold)
    fn resolve(&self, model: &FieldModel) -> Result<(&'static str, f64, f64)> {
        match (self.u, self.p) {
            (Some(u), None) => Ok(("u", u, u)),
            (None, Some(p)) => Ok(("p", p, quantile_threshold(model, p)?)),
            _ => Err(Error::invalid("exactly one of --u and --p is required")),
        }
    }
}

#[derive(Args)]
struct CdfArgs {
    #[arg(long, default_value = "gaussian")]
    model: String,
    #[command(flatten)]
    threshold: ThresholdArg,
    #[arg(long, default_value_t = 61)]
    n: usize,
    #[arg(long, default_value_t = 0.03)]
    spacing: f64,
    /// Replicates: conditioned samples (direct) or fields (erosion).
    #[arg(long, default_value_t = 500)]
    reps: usize,
    /// Evaluation radii: this many multiples of the spacing.
    #[arg(long, default_value_t = 15)]
    radii_count: usize,
    /// Estimator: conditioned samples (direct) or eroded volumes of
    /// unconditioned masks (erosion).
    #[arg(long, default_value = "direct")]
    method: String,
    /// Root seed.
    #[arg(long)]
    seed: u64,
    /// Output directory for cdf.csv (standard output when omitted).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SlopeArgs {
    #[arg(long, default_value = "gaussian")]
    model: String,
    #[command(flatten)]
    threshold: ThresholdArg,
    #[arg(long, default_value_t = 61)]
    n: usize,
    #[arg(long, default_value_t = 0.03)]
    spacing: f64,
    /// Conditioned replicates.
    #[arg(long, default_value_t = 500)]
    reps: usize,
    #[arg(long, default_value_t = 15)]
    radii_count: usize,
    /// Fit at zero: polynomial (default) or spline.
    #[arg(long, default_value = "polynomial")]
    method: String,
    #[arg(long)]
    seed: u64,
    /// Output directory for slope.csv (standard output when omitted).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ChiArgs {
    #[arg(long, default_value = "gaussian")]
    model: String,
    #[command(flatten)]
    threshold: ThresholdArg,
    #[arg(long, default_value_t = 61)]
    n: usize,
    #[arg(long, default_value_t = 0.03)]
    spacing: f64,
    /// Conditioned fields.
    #[arg(long, default_value_t = 500)]
    fields: usize,
    #[arg(long, default_value_t = 15)]
    radii_count: usize,
    #[arg(long)]
    seed: u64,
    /// Output directory for chi.csv (standard output when omitted).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("quantity").required(true).multiple(false))]
struct TheoryArgs {
    /// Slope at zero of the conditioned range CDF for the Gaussian field.
    #[arg(long, group = "quantity")]
    gaussian_slope: bool,
    /// The same slope for the Pareto scale mixture (tail index --alpha).
    #[arg(long, group = "quantity")]
    mixture_slope: bool,
    /// Deep-threshold limit of slope/u for the Gaussian field.
    #[arg(long, group = "quantity")]
    limit_constant: bool,
    /// Threshold level (required by the slope quantities).
    #[arg(long, allow_hyphen_values = true)]
    u: Option<f64>,
    /// Pareto tail index of the scale mixture.
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    /// Matern smoothness of the correlation.
    #[arg(long, default_value_t = 2.5)]
    nu: f64,
    /// Matern correlation length.
    #[arg(long, default_value_t = 0.1)]
    ell: f64,
    /// Ambient dimension.
    #[arg(long, default_value_t = 2)]
    d: u32,
}

#[derive(Args)]
struct RunArgs {
    /// Root seed; required so every run is reproducible by construction.
    #[arg(long)]
    seed: u64,
    /// key = value configuration file; missing keys take the subcommand's
    /// documented defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config file).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replicates per cell (overrides the config file).
    #[arg(long)]
    nreps: Option<usize>,
    /// Print the effective configuration in canonical form and exit
    /// without running anything.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Args)]
struct CounterexampleArgs {
    /// Conditioned samples per threshold level.
    #[arg(long, default_value_t = 200)]
    reps: usize,
    /// Threshold levels u > 0, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
    levels: Vec<f64>,
    #[arg(long)]
    seed: u64,
    /// Output directory for counterexample.csv.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here too; they are not failures
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(threads) = cli.threads {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
        if let Err(e) = pool {
            eprintln!("error: cannot size the worker pool: {e}");
            return 1;
        }
    }
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numeric(_) => 2,
        _ => 1,
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Simulate(a) => cmd_simulate(a)?,
        Command::Mask(a) => cmd_mask(a)?,
        Command::Edt(a) => cmd_edt(a)?,
        Command::Cdf(a) => cmd_cdf(a)?,
        Command::Slope(a) => cmd_slope(a)?,
        Command::Chi(a) => cmd_chi(a)?,
        Command::Theory(a) => cmd_theory(a)?,
        Command::Fig3(a) => cmd_run(a, config::fig3_defaults(), "fig3", run_fig3)?,
        Command::Fig4(a) => cmd_run(a, config::fig4_defaults(), "fig4", run_fig4)?,
        Command::Fig6(a) => cmd_run(a, config::fig6_defaults(), "fig6", run_fig6)?,
        Command::Counterexample(a) => cmd_counterexample(a)?,
        Command::RvStability(a) => cmd_rv_stability(a)?,
        Command::Selftest => return Ok(if selftest::run_all() { 0 } else { 1 }),
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// output plumbing
// ---------------------------------------------------------------------------

fn num(x: f64) -> String {
    format!("{x:.12e}")
}

/// File in the output directory, or standard output when none is configured.
fn open_sink(out_dir: &Option<PathBuf>, name: &str) -> Result<Box<dyn Write>> {
    match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Ok(Box::new(std::fs::File::create(dir.join(name))?))
        }
        None => Ok(Box::new(std::io::stdout().lock())),
    }
}

fn emit_grid(out: &Option<PathBuf>, field: &GridField) -> Result<()> {
    match out {
        Some(path) => write_grid_file(path, field),
        None => {
            print!("{}", grid_to_string(field));
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// file utilities
// ---------------------------------------------------------------------------

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let model = config::parse_model(&a.model)?;
    let spec = GridSpec::new(a.n, a.spacing)?;
    let field = sample_field_once(&model, &spec, &RngSeed::new(a.seed), a.rep)?;
    emit_grid(&a.out, &field)
}

fn cmd_mask(a: MaskArgs) -> Result<()> {
    let field = read_grid_file(&a.input)?;
    let mask = excursion_mask(&field, a.u);
    match &a.out {
        Some(path) => write_mask_file(path, &mask, &field.model, field.seed),
        None => {
            print!("{}", mask_to_string(&mask, &field.model, field.seed));
            Ok(())
        }
    }
}

fn cmd_edt(a: EdtArgs) -> Result<()> {
    let (mask, model, seed) = read_mask_file(&a.input)?;
    let dt = distance_transform(&mask);
    let field = GridField {
        spec: mask.spec,
        values: dt.values().to_vec(),
        model,
        seed,
    };
    emit_grid(&a.out, &field)
}

// ---------------------------------------------------------------------------
// estimator pipelines
// ---------------------------------------------------------------------------

fn unconditioned_masks(
    model: &FieldModel,
    spec: &GridSpec,
    u: f64,
    seed: &RngSeed,
    reps: usize,
) -> Result<Vec<ExcursionMask>> {
    let factor = match model.matern() {
        Some(matern) => Some(cholesky_factor(&build_covariance(spec, matern)?)?),
        None => None,
    };
    (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let field = match &factor {
                Some(factor) => sample_field(model, spec, factor, seed, rep)?,
                None => sample_field_once(model, spec, seed, rep)?,
            };
            Ok(excursion_mask(&field, u))
        })
        .collect()
}

fn cmd_cdf(a: CdfArgs) -> Result<()> {
    let model = config::parse_model(&a.model)?;
    let spec = GridSpec::new(a.n, a.spacing)?;
    let (_, _, u) = a.threshold.resolve(&model)?;
    let radii = default_radii(a.spacing, a.radii_count);
    let seed = RngSeed::new(a.seed);
    let cdf = match a.method.as_str() {
        "direct" => {
            let matern = model.matern().ok_or_else(|| {
                Error::invalid("conditioned sampling needs a model with a Gaussian base")
            })?;
            let cond = conditional_factor(&spec, matern)?;
            let samples = conditioned_range_samples(&model, &spec, u, &cond, &seed, a.reps)?;
            cdf_direct(&samples, &radii)?
        }
        "erosion" => {
            let masks = unconditioned_masks(&model, &spec, u, &seed, a.reps)?;
            cdf_erosion(&masks, &radii)?
        }
        other => {
            return Err(Error::invalid(format!(
                "method must be 'direct' or 'erosion', got '{other}'"
            )))
        }
    };
    let bands = cdf.bootstrap_bands(BOOTSTRAP_RESAMPLES, seed.derived_root(0xB007));
    let mut sink = open_sink(&a.out_dir, "cdf.csv")?;
    writeln!(sink, "r,prob,ci_low,ci_high")?;
    for (i, &r) in cdf.radii.iter().enumerate() {
        writeln!(
            sink,
            "{},{},{},{}",
            num(r),
            num(cdf.probs[i]),
            num(bands[i].0),
            num(bands[i].1)
        )?;
    }
    Ok(())
}

fn parse_slope_method(s: &str) -> Result<SlopeMethod> {
    match s {
        "polynomial" => Ok(SlopeMethod::Polynomial),
        "spline" => Ok(SlopeMethod::Spline),
        other => Err(Error::invalid(format!(
            "method must be 'polynomial' or 'spline', got '{other}'"
        ))),
    }
}

fn cmd_slope(a: SlopeArgs) -> Result<()> {
    let model = config::parse_model(&a.model)?;
    let spec = GridSpec::new(a.n, a.spacing)?;
    let (column, level, u) = a.threshold.resolve(&model)?;
    let matern = model
        .matern()
        .ok_or_else(|| Error::invalid("conditioned sampling needs a model with a Gaussian base"))?;
    let seed = RngSeed::new(a.seed);
    let cond = conditional_factor(&spec, matern)?;
    let samples = conditioned_range_samples(&model, &spec, u, &cond, &seed, a.reps)?;
    let cdf = cdf_direct(&samples, &default_radii(a.spacing, a.radii_count))?;
    let est = slope_at_zero(
        &cdf,
        SLOPE_FIT_WINDOW_PIXELS * a.spacing,
        parse_slope_method(&a.method)?,
        seed.derived_root(0xB007),
    )?;
    let (theory, _) = slope_theory(&model, &spec, u, &RngSeed::new(seed.derived_root(0x0bac1e)))?;
    let mut sink = open_sink(&a.out_dir, "slope.csv")?;
    writeln!(sink, "{column},estimate,ci_low,ci_high,theory")?;
    writeln!(
        sink,
        "{},{},{},{},{}",
        num(level),
        num(est.value),
        num(est.ci_low),
        num(est.ci_high),
        num(theory)
    )?;
    Ok(())
}

fn cmd_chi(a: ChiArgs) -> Result<()> {
    let model = config::parse_model(&a.model)?;
    let spec = GridSpec::new(a.n, a.spacing)?;
    let (_, _, u) = a.threshold.resolve(&model)?;
    let matern = model
        .matern()
        .ok_or_else(|| Error::invalid("conditioned sampling needs a model with a Gaussian base"))?;
    let seed = RngSeed::new(a.seed);
    let cond = conditional_factor(&spec, matern)?;
    let fields = conditioned_fields(&model, &spec, u, &cond, &seed, a.fields)?;
    let radii = default_radii(a.spacing, a.radii_count);
    let chi = chi_curve(&fields, u, &radii, seed.derived_root(0xB007))?;
    let (phi_bands, f_bands) = chi.bootstrap_bands(BOOTSTRAP_RESAMPLES, seed.derived_root(0xC1));
    let mut sink = open_sink(&a.out_dir, "chi.csv")?;
    writeln!(sink, "r,phi,f,phi_ci_low,phi_ci_high,f_ci_low,f_ci_high")?;
    for (i, &r) in chi.radii.iter().enumerate() {
        writeln!(
            sink,
            "{},{},{},{},{},{},{}",
            num(r),
            num(chi.phi[i]),
            num(chi.f[i]),
            num(phi_bands[i].0),
            num(phi_bands[i].1),
            num(f_bands[i].0),
            num(f_bands[i].1)
        )?;
    }
    eprintln!(
        "f_prime_at_0 = {:.6} [{:.6}, {:.6}] from {} fields",
        chi.f_prime_at_0.value,
        chi.f_prime_at_0.ci_low,
        chi.f_prime_at_0.ci_high,
        chi.f_prime_at_0.n_replicates
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// theory lookups
// ---------------------------------------------------------------------------

fn cmd_theory(a: TheoryArgs) -> Result<()> {
    let matern = exrange::numerics::MaternParams::new(a.nu, a.ell)?;
    let lambda = exrange::numerics::second_spectral_moment(&matern)?;
    let need_u = || {
        a.u.ok_or_else(|| Error::invalid("this quantity needs a threshold level --u"))
    };
    let value = if a.gaussian_slope {
        exrange::theory::gaussian_slope(need_u()?, lambda, a.d)?
    } else if a.mixture_slope {
        if a.d != 2 {
            return Err(Error::invalid(
                "the mixture slope is only available in the plane",
            ));
        }
        exrange::theory::mixture_slope(need_u()?, lambda, a.alpha)?
    } else {
        exrange::theory::gaussian_limit_constant(lambda, a.d)?
    };
    println!("{value:.3}");
    Ok(())
}

// ---------------------------------------------------------------------------
// experiment runners
// ---------------------------------------------------------------------------

fn load_run_config(a: &RunArgs, defaults: config::RunConfig) -> Result<config::RunConfig> {
    let mut cfg = match &a.config {
        Some(path) => config::load(path, &defaults)?,
        None => defaults,
    };
    if let Some(out) = &a.out {
        cfg.out = out.clone();
    }
    if let Some(nreps) = a.nreps {
        cfg.nreps = nreps;
    }
    Ok(cfg)
}

fn cmd_run(
    a: RunArgs,
    defaults: config::RunConfig,
    name: &str,
    run: impl Fn(&exrange::experiments::ExperimentConfig) -> Result<Vec<ResultRow>>,
) -> Result<()> {
    let cfg = load_run_config(&a, defaults)?;
    if a.dump_config {
        print!("{}", config::dump(&cfg));
        return Ok(());
    }
    let experiment = cfg.to_experiment(a.seed)?;
    let rows = run(&experiment)?;
    eprintln!(
        "{name}: {} rows -> {}",
        rows.len(),
        experiment.outputs.join(format!("{name}.csv")).display()
    );
    Ok(())
}

fn cmd_counterexample(a: CounterexampleArgs) -> Result<()> {
    let rows = run_counterexample(a.reps, &a.levels, &RngSeed::new(a.seed), &a.out)?;
    for r in &rows {
        eprintln!(
            "u = {}: median range {:.4}, max {:.4}, bound {:.4} ({} samples)",
            r.u, r.median, r.max_sample, r.bound, r.n_samples
        );
    }
    eprintln!(
        "counterexample: {} rows -> {}",
        rows.len(),
        a.out.join("counterexample.csv").display()
    );
    Ok(())
}

fn cmd_rv_stability(a: RunArgs) -> Result<()> {
    let cfg = load_run_config(&a, config::stability_defaults())?;
    if a.dump_config {
        print!("{}", config::dump(&cfg));
        return Ok(());
    }
    let report = run_rv_stability(&cfg.to_experiment(a.seed)?)?;
    for p in &report.pairs {
        println!(
            "levels {} vs {}: max gap {:.4}, band {:.4} -> {}",
            p.level_a,
            p.level_b,
            p.max_gap,
            p.band_at_max,
            if p.within { "within" } else { "exceeds" }
        );
    }
    println!("stability: {}", if report.pass { "PASS" } else { "FAIL" });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_split_validation_from_numeric_failures() {
        assert_eq!(exit_code(&Error::invalid("x")), 1);
        assert_eq!(exit_code(&Error::parse("x")), 1);
        assert_eq!(exit_code(&Error::numeric("x")), 2);
        assert_eq!(
            exit_code(&Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "x"
            ))),
            1
        );
    }

    #[test]
    fn cli_arguments_are_well_formed() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn threshold_arg_needs_exactly_one_level() {
        let model = config::parse_model("gaussian").unwrap();
        let both = ThresholdArg {
            u: Some(1.0),
            p: Some(0.5),
        };
        assert!(both.resolve(&model).is_err());
        let neither = ThresholdArg { u: None, p: None };
        assert!(neither.resolve(&model).is_err());
        let (col, level, u) = ThresholdArg {
            u: None,
            p: Some(0.5),
        }
        .resolve(&model)
        .unwrap();
        assert_eq!(col, "p");
        assert_eq!(level, 0.5);
        assert!(u.abs() < 1e-12, "median of the standard normal is 0");
    }
}
