//! Desk-scale experiment runner: slope-versus-threshold sweeps, quantile
//! stabilization sweeps, tail-dependence curves, the hole-pattern
//! counterexample, and the regular-variation stability check.
//!
//! Every experiment is a pure function of its configuration: replicates run
//! on per-replicate seeded streams, cells derive their own sub-seeds, and
//! aggregation happens in replicate order, so re-running a config
//! reproduces every table byte for byte regardless of thread count. Each
//! result row carries the matching theory or oracle value; no estimate is
//! reported bare.

use crate::estimators::{
    cdf_direct, chi_curve, extremal_range_sample, slope_at_zero, EmpiricalCdf, SlopeMethod,
};
use crate::numerics::{mixture_marginal_quantile, second_spectral_moment};
use crate::randfield::{
    conditional_factor, quantile_threshold, sample_conditional_exceedance, streams, FieldModel,
    GridSpec, PolkaDotParams, RngSeed, REJECTION_CAP,
};
use crate::theory::{gaussian_slope, mc_lkc_oracle, mixture_slope};
use crate::{Error, Result};
use rayon::prelude::*;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Fit window for every slope estimate, in units of the pixel spacing.
pub const SLOPE_FIT_WINDOW_PIXELS: f64 = 5.0;

/// Replicates used by the Monte Carlo oracle when a model has no printable
/// closed-form theory curve.
pub const ORACLE_REPLICATES: usize = 1000;

/// Threshold levels of one experiment: absolute values of u, or marginal
/// quantile levels p mapped through the model's quantile function.
#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdSpec {
    Absolute(Vec<f64>),
    Quantile(Vec<f64>),
}

impl ThresholdSpec {
    pub fn levels(&self) -> &[f64] {
        match self {
            ThresholdSpec::Absolute(v) | ThresholdSpec::Quantile(v) => v,
        }
    }

    pub fn is_quantile(&self) -> bool {
        matches!(self, ThresholdSpec::Quantile(_))
    }

    pub fn mode_name(&self) -> &'static str {
        match self {
            ThresholdSpec::Absolute(_) => "absolute",
            ThresholdSpec::Quantile(_) => "quantile",
        }
    }
}

/// Full description of one experiment run.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: FieldModel,
    pub grid: GridSpec,
    pub thresholds: ThresholdSpec,
    pub n_replicates: usize,
    pub seed: RngSeed,
    /// CDF evaluation radii, strictly increasing, in domain units.
    pub radii: Vec<f64>,
    pub outputs: PathBuf,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let levels = self.thresholds.levels();
        if levels.is_empty() {
            return Err(Error::invalid("at least one threshold level is required"));
        }
        if levels.iter().any(|l| !l.is_finite()) {
            return Err(Error::invalid("threshold levels must be finite"));
        }
        if self.thresholds.is_quantile() && levels.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::invalid(
                "quantile levels must lie strictly in (0, 1)",
            ));
        }
        if self.n_replicates < 50 {
            return Err(Error::invalid(format!(
                "experiments need at least 50 replicates, got {}",
                self.n_replicates
            )));
        }
        if self.radii.is_empty() {
            return Err(Error::invalid("at least one evaluation radius is required"));
        }
        for w in self.radii.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::invalid(
                    "evaluation radii must be strictly increasing",
                ));
            }
        }
        if !(self.radii[0] > 0.0) {
            return Err(Error::invalid("evaluation radii must be positive"));
        }
        let r_max = self.radii[self.radii.len() - 1];
        if r_max > self.grid.inradius() {
            return Err(Error::invalid(format!(
                "largest radius {r_max} exceeds the window inradius {}",
                self.grid.inradius()
            )));
        }
        Ok(())
    }
}

/// One line of a result table: an estimate with its interval next to the
/// matching theory (or Monte Carlo oracle) value.
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub model: String,
    /// Threshold u (absolute mode) or quantile level p (quantile mode).
    pub threshold: f64,
    /// Plot abscissa: u for threshold sweeps, -log(1-p) for quantile sweeps.
    pub abscissa: f64,
    pub kind: String,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub theory: f64,
    /// Standard error of the theory value when it comes from the Monte
    /// Carlo oracle; None for closed forms.
    pub theory_se: Option<f64>,
    pub n_replicates: usize,
    pub seed: u64,
}

impl ResultRow {
    fn checked(self) -> Result<Self> {
        if !(self.ci_low <= self.value && self.value <= self.ci_high) {
            return Err(Error::numeric(format!(
                "confidence bounds [{}, {}] fail to bracket the estimate {}",
                self.ci_low, self.ci_high, self.value
            )));
        }
        Ok(self)
    }
}

// ---------------------------------------------------------------------------
// seeding and shared plumbing
// ---------------------------------------------------------------------------

const FIG3_ID: u64 = 3;
const FIG4_ID: u64 = 4;
const FIG6_ID: u64 = 6;
const COUNTEREXAMPLE_ID: u64 = 7;
const STABILITY_ID: u64 = 9;

/// Independent sub-seed for one cell of one experiment, so cells never share
/// replicate streams no matter how the caller orders them.
fn cell_seed(seed: &RngSeed, experiment: u64, cell: usize) -> RngSeed {
    RngSeed::new(seed.derived_root((experiment << 32) | cell as u64))
}

fn bootstrap_root(cell: &RngSeed) -> u64 {
    cell.derived_root(0xB007)
}

/// Theory slope for a model at an absolute threshold: closed form where one
/// exists, Monte Carlo oracle (with a delta-method standard error on the
/// ratio) for Student and chi-squared.
pub fn slope_theory(
    model: &FieldModel,
    grid: &GridSpec,
    u: f64,
    seed: &RngSeed,
) -> Result<(f64, Option<f64>)> {
    match model {
        FieldModel::Gaussian { matern } => {
            let lambda = second_spectral_moment(matern)?;
            Ok((gaussian_slope(u, lambda, 2)?, None))
        }
        FieldModel::ScaleMixture { alpha, matern } => {
            let lambda = second_spectral_moment(matern)?;
            Ok((mixture_slope(u, lambda, *alpha)?, None))
        }
        FieldModel::Student { .. } | FieldModel::ChiSq { .. } => {
            let oracle = mc_lkc_oracle(model, grid, u, ORACLE_REPLICATES, seed)?;
            let se1 = oracle.se_c_dm1.unwrap_or(0.0);
            let se2 = oracle.se_c_d.unwrap_or(0.0);
            let se_ratio = (2.0 / oracle.c_d)
                * (se1 * se1 + (oracle.c_dm1 / oracle.c_d).powi(2) * se2 * se2).sqrt();
            Ok((oracle.ratio, Some(se_ratio)))
        }
        FieldModel::PolkaDot => Err(Error::invalid(
            "the hole-pattern field has no slope theory curve; use the counterexample runner",
        )),
    }
}

/// Conditioned fields for one cell, in replicate order (replicates run in
/// parallel; the indexed collect keeps the ordering deterministic).
pub fn conditioned_fields(
    model: &FieldModel,
    grid: &GridSpec,
    u: f64,
    cond: &crate::randfield::ConditionalGaussian,
    seed: &RngSeed,
    n: usize,
) -> Result<Vec<crate::randfield::GridField>> {
    (0..n as u64)
        .into_par_iter()
        .map(|rep| sample_conditional_exceedance(model, grid, u, cond, seed, rep))
        .collect()
}

/// Conditioned extremal-range samples for one cell, in replicate order.
pub fn conditioned_range_samples(
    model: &FieldModel,
    grid: &GridSpec,
    u: f64,
    cond: &crate::randfield::ConditionalGaussian,
    seed: &RngSeed,
    n: usize,
) -> Result<Vec<f64>> {
    (0..n as u64)
        .into_par_iter()
        .map(|rep| {
            let field = sample_conditional_exceedance(model, grid, u, cond, seed, rep)?;
            extremal_range_sample(&field, u)
        })
        .collect()
}

fn absolute_threshold(model: &FieldModel, thresholds: &ThresholdSpec, level: f64) -> Result<f64> {
    if thresholds.is_quantile() {
        quantile_threshold(model, level)
    } else {
        Ok(level)
    }
}

// ---------------------------------------------------------------------------
// CSV and manifest output
// ---------------------------------------------------------------------------

fn fmt_float(x: f64) -> String {
    format!("{x:.12e}")
}

fn create_output_file(dir: &Path, name: &str) -> Result<std::fs::File> {
    std::fs::create_dir_all(dir)?;
    Ok(std::fs::File::create(dir.join(name))?)
}

/// Result-table CSV, one row per (threshold, kind) cell.
pub fn write_rows_csv(dir: &Path, name: &str, rows: &[ResultRow]) -> Result<()> {
    let mut f = create_output_file(dir, name)?;
    writeln!(
        f,
        "model,threshold,abscissa,kind,value,ci_low,ci_high,theory,theory_se,n_replicates,seed"
    )?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.model,
            fmt_float(r.threshold),
            fmt_float(r.abscissa),
            r.kind,
            fmt_float(r.value),
            fmt_float(r.ci_low),
            fmt_float(r.ci_high),
            fmt_float(r.theory),
            r.theory_se.map(fmt_float).unwrap_or_default(),
            r.n_replicates,
            r.seed
        )?;
    }
    Ok(())
}

/// Run manifest: configuration, seed, code version, wall time. The wall-time
/// line makes this the one output file excluded from byte-identity checks.
fn write_manifest(config: &ExperimentConfig, name: &str, wall: std::time::Duration) -> Result<()> {
    let mut f = create_output_file(&config.outputs, &format!("{name}_manifest.txt"))?;
    writeln!(f, "experiment = {name}")?;
    writeln!(f, "model = {}", config.model.tag())?;
    writeln!(
        f,
        "grid = {}x{}",
        config.grid.n_side(),
        config.grid.n_side()
    )?;
    writeln!(f, "spacing = {}", fmt_float(config.grid.spacing()))?;
    writeln!(f, "threshold_mode = {}", config.thresholds.mode_name())?;
    writeln!(
        f,
        "thresholds = {}",
        config
            .thresholds
            .levels()
            .iter()
            .map(|l| l.to_string())
            .collect::<Vec<_>>()
            .join(",")
    )?;
    writeln!(f, "n_replicates = {}", config.n_replicates)?;
    writeln!(
        f,
        "radii = {}",
        config
            .radii
            .iter()
            .map(|r| fmt_float(*r))
            .collect::<Vec<_>>()
            .join(",")
    )?;
    writeln!(f, "seed = {}", config.seed.root)?;
    writeln!(f, "version = {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(f, "wall_time_s = {:.3}", wall.as_secs_f64())?;
    Ok(())
}

// ---------------------------------------------------------------------------
// figure analogues
// ---------------------------------------------------------------------------

/// Slope of the range CDF versus absolute threshold: conditioned replicates
/// at each u, direct CDF, slope at zero, theory column.
pub fn run_fig3(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let t0 = std::time::Instant::now();
    config.validate()?;
    if config.thresholds.is_quantile() {
        return Err(Error::invalid(
            "the threshold sweep needs absolute thresholds; use the quantile sweep otherwise",
        ));
    }
    let rows = slope_rows(config, FIG3_ID, |u| Ok((u, u)))?;
    write_rows_csv(&config.outputs, "fig3.csv", &rows)?;
    write_manifest(config, "fig3", t0.elapsed())?;
    Ok(rows)
}

/// Slope of the range CDF versus marginal quantile level, abscissa
/// -log(1-p): the Gaussian slope keeps climbing while the regularly varying
/// mixture reaches its plateau.
pub fn run_fig4(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let t0 = std::time::Instant::now();
    config.validate()?;
    if !config.thresholds.is_quantile() {
        return Err(Error::invalid(
            "the quantile sweep needs quantile-mode thresholds",
        ));
    }
    let model = config.model.clone();
    let rows = slope_rows(config, FIG4_ID, move |p| {
        Ok((quantile_threshold(&model, p)?, -(1.0 - p).ln()))
    })?;
    write_rows_csv(&config.outputs, "fig4.csv", &rows)?;
    write_manifest(config, "fig4", t0.elapsed())?;
    Ok(rows)
}

/// Shared slope pipeline: level -> (absolute u, abscissa) -> conditioned
/// replicates -> direct CDF -> slope at zero -> row.
fn slope_rows(
    config: &ExperimentConfig,
    experiment: u64,
    to_threshold: impl Fn(f64) -> Result<(f64, f64)>,
) -> Result<Vec<ResultRow>> {
    let matern = config.model.matern().ok_or_else(|| {
        Error::invalid("slope sweeps need a model with a correlated Gaussian base")
    })?;
    let cond = conditional_factor(&config.grid, matern)?;
    let r_max = SLOPE_FIT_WINDOW_PIXELS * config.grid.spacing();
    let mut rows = Vec::new();
    for (cell, &level) in config.thresholds.levels().iter().enumerate() {
        let (u, abscissa) = to_threshold(level)?;
        let seed = cell_seed(&config.seed, experiment, cell);
        let samples = conditioned_range_samples(
            &config.model,
            &config.grid,
            u,
            &cond,
            &seed,
            config.n_replicates,
        )?;
        let cdf = cdf_direct(&samples, &config.radii)?;
        let est = slope_at_zero(&cdf, r_max, SlopeMethod::Polynomial, bootstrap_root(&seed))?;
        let (theory, theory_se) = slope_theory(
            &config.model,
            &config.grid,
            u,
            &RngSeed::new(seed.derived_root(0x0bac1e)),
        )?;
        rows.push(
            ResultRow {
                model: config.model.tag(),
                threshold: level,
                abscissa,
                kind: "slope_at_zero".to_string(),
                value: est.value,
                ci_low: est.ci_low,
                ci_high: est.ci_high,
                theory,
                theory_se,
                n_replicates: config.n_replicates,
                seed: config.seed.root,
            }
            .checked()?,
        );
    }
    Ok(rows)
}

/// Tail-dependence boundary derivative versus quantile level: conditioned
/// fields at each p, disc-fraction curve, f'(0) against -slope/pi.
pub fn run_fig6(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let t0 = std::time::Instant::now();
    config.validate()?;
    if !config.thresholds.is_quantile() {
        return Err(Error::invalid(
            "the tail-dependence sweep needs quantile-mode thresholds",
        ));
    }
    let matern = config.model.matern().ok_or_else(|| {
        Error::invalid("the tail-dependence sweep needs a model with a correlated Gaussian base")
    })?;
    let cond = conditional_factor(&config.grid, matern)?;
    let mut rows = Vec::new();
    for (cell, &p) in config.thresholds.levels().iter().enumerate() {
        let u = quantile_threshold(&config.model, p)?;
        let seed = cell_seed(&config.seed, FIG6_ID, cell);
        let fields = conditioned_fields(
            &config.model,
            &config.grid,
            u,
            &cond,
            &seed,
            config.n_replicates,
        )?;
        let chi = chi_curve(&fields, u, &config.radii, bootstrap_root(&seed))?;
        let (slope, slope_se) = slope_theory(
            &config.model,
            &config.grid,
            u,
            &RngSeed::new(seed.derived_root(0x0bac1e)),
        )?;
        let theory = -slope / std::f64::consts::PI;
        rows.push(
            ResultRow {
                model: config.model.tag(),
                threshold: p,
                abscissa: -(1.0 - p).ln(),
                kind: "f_prime_at_0".to_string(),
                value: chi.f_prime_at_0.value,
                ci_low: chi.f_prime_at_0.ci_low,
                ci_high: chi.f_prime_at_0.ci_high,
                theory,
                theory_se: slope_se.map(|se| se / std::f64::consts::PI),
                n_replicates: config.n_replicates,
                seed: config.seed.root,
            }
            .checked()?,
        );
    }
    write_rows_csv(&config.outputs, "fig6.csv", &rows)?;
    write_manifest(config, "fig6", t0.elapsed())?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// hole-pattern counterexample
// ---------------------------------------------------------------------------

/// Summary of the conditioned extremal range of the hole-pattern field at
/// one threshold: the theorem bound sqrt(2)/u plays the theory column.
#[derive(Debug, Clone)]
pub struct CounterexampleRow {
    pub u: f64,
    pub n_samples: usize,
    pub median: f64,
    pub max_sample: f64,
    pub bound: f64,
}

/// Conditioned extremal range of the hole-pattern field, evaluated in
/// closed form from the hole-pattern parameters (no rasterization): the
/// level E given E > u is u + Exp(1), draws whose hole lattice covers the
/// origin are rejected, and the distance from the origin to the nearest
/// hole edge is analytic. Every sample must respect the deterministic bound
/// sqrt(2)/u; a violation is a hard failure, not a statistical one.
pub fn run_counterexample(
    n_replicates: usize,
    levels: &[f64],
    seed: &RngSeed,
    outputs: &Path,
) -> Result<Vec<CounterexampleRow>> {
    if n_replicates == 0 {
        return Err(Error::invalid(
            "the counterexample needs at least one replicate",
        ));
    }
    if levels.is_empty() {
        return Err(Error::invalid("at least one threshold level is required"));
    }
    if levels.iter().any(|&u| !(u > 0.0) || !u.is_finite()) {
        return Err(Error::invalid(
            "counterexample thresholds must be positive and finite",
        ));
    }
    let mut rows = Vec::new();
    for (cell, &u) in levels.iter().enumerate() {
        let cseed = cell_seed(seed, COUNTEREXAMPLE_ID, cell);
        let mut samples: Vec<f64> = (0..n_replicates as u64)
            .into_par_iter()
            .map(|rep| -> Result<f64> {
                let mut rng = cseed.stream(rep, streams::COND_ORIGIN);
                for _ in 0..REJECTION_CAP {
                    let mut params = PolkaDotParams::sample(&mut rng);
                    params.e += u;
                    let d = params.origin_hole_distance();
                    if d > 0.0 {
                        return Ok(d);
                    }
                }
                Err(Error::numeric(
                    "origin rejection cap hit while conditioning the hole pattern",
                ))
            })
            .collect::<Result<_>>()?;
        let bound = std::f64::consts::SQRT_2 / u;
        let max_sample = samples.iter().cloned().fold(0.0f64, f64::max);
        if max_sample >= bound {
            return Err(Error::numeric(format!(
                "extremal range {max_sample} at u = {u} breaks the deterministic bound {bound}; \
                 this indicates a bug, not bad luck"
            )));
        }
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if n_replicates % 2 == 1 {
            samples[n_replicates / 2]
        } else {
            0.5 * (samples[n_replicates / 2 - 1] + samples[n_replicates / 2])
        };
        rows.push(CounterexampleRow {
            u,
            n_samples: n_replicates,
            median,
            max_sample,
            bound,
        });
    }
    let mut f = create_output_file(outputs, "counterexample.csv")?;
    writeln!(f, "u,n_samples,median,max_sample,bound")?;
    for r in &rows {
        writeln!(
            f,
            "{},{},{},{},{}",
            fmt_float(r.u),
            r.n_samples,
            fmt_float(r.median),
            fmt_float(r.max_sample),
            fmt_float(r.bound)
        )?;
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// regular-variation stability
// ---------------------------------------------------------------------------

/// Pairwise comparison of conditioned range CDFs at two threshold levels:
/// the worst per-radius gap against the combined bootstrap half-widths at
/// that radius.
#[derive(Debug, Clone)]
pub struct StabilityPair {
    pub level_a: f64,
    pub level_b: f64,
    /// Gap and band at the radius where gap - band is largest.
    pub max_gap: f64,
    pub band_at_max: f64,
    pub within: bool,
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub model: String,
    pub levels: Vec<f64>,
    pub pairs: Vec<StabilityPair>,
    /// True when every pairwise gap stays inside the combined bands at every
    /// radius: the CDFs are statistically indistinguishable.
    pub pass: bool,
}

/// Deep-threshold stability of the conditioned range law: for regularly
/// varying fields the conditioned CDFs at different deep levels coincide,
/// for the Gaussian they keep contracting. Quantile-mode levels are mapped
/// through the model's marginal quantile; scale-mixture levels must sit at
/// or above the 0.95 quantile where the stabilization claim applies.
pub fn run_rv_stability(config: &ExperimentConfig) -> Result<StabilityReport> {
    let t0 = std::time::Instant::now();
    config.validate()?;
    let levels = config.thresholds.levels();
    if levels.len() < 3 {
        return Err(Error::invalid(format!(
            "the stability check needs at least 3 threshold levels, got {}",
            levels.len()
        )));
    }
    let matern = config.model.matern().ok_or_else(|| {
        Error::invalid("the stability check needs a model with a correlated Gaussian base")
    })?;
    let thresholds: Vec<f64> = levels
        .iter()
        .map(|&l| absolute_threshold(&config.model, &config.thresholds, l))
        .collect::<Result<_>>()?;
    if let FieldModel::ScaleMixture { alpha, .. } = &config.model {
        let floor = mixture_marginal_quantile(0.95, *alpha)?;
        // tiny slack so "the 0.95 quantile itself" passes its own floor
        if thresholds.iter().any(|&u| u < floor - 1e-9) {
            return Err(Error::invalid(format!(
                "stability levels must sit at or above the 0.95 marginal quantile {floor}"
            )));
        }
    }
    let cond = conditional_factor(&config.grid, matern)?;
    let mut cdfs: Vec<EmpiricalCdf> = Vec::new();
    let mut bands: Vec<Vec<(f64, f64)>> = Vec::new();
    for (cell, &u) in thresholds.iter().enumerate() {
        let seed = cell_seed(&config.seed, STABILITY_ID, cell);
        let samples = conditioned_range_samples(
            &config.model,
            &config.grid,
            u,
            &cond,
            &seed,
            config.n_replicates,
        )?;
        let cdf = cdf_direct(&samples, &config.radii)?;
        bands.push(cdf.bootstrap_bands(
            crate::estimators::BOOTSTRAP_RESAMPLES,
            bootstrap_root(&seed),
        ));
        cdfs.push(cdf);
    }
    let mut pairs = Vec::new();
    for i in 0..cdfs.len() {
        for j in i + 1..cdfs.len() {
            let mut worst_excess = f64::NEG_INFINITY;
            let mut at = (0.0, 0.0);
            for r in 0..config.radii.len() {
                let gap = (cdfs[i].probs[r] - cdfs[j].probs[r]).abs();
                let band =
                    0.5 * (bands[i][r].1 - bands[i][r].0) + 0.5 * (bands[j][r].1 - bands[j][r].0);
                // radii where both curves sit flat at the same value across
                // every resample (saturated tails) carry no discrepancy
                // evidence; reporting them would mask the real worst gap
                if gap == 0.0 && band == 0.0 {
                    continue;
                }
                if gap - band > worst_excess {
                    worst_excess = gap - band;
                    at = (gap, band);
                }
            }
            // a pair can be entirely saturated only on degenerate windows;
            // equal constants are trivially within any band
            let worst_excess = if worst_excess == f64::NEG_INFINITY {
                0.0
            } else {
                worst_excess
            };
            pairs.push(StabilityPair {
                level_a: levels[i],
                level_b: levels[j],
                max_gap: at.0,
                band_at_max: at.1,
                within: worst_excess <= 0.0,
            });
        }
    }
    let pass = pairs.iter().all(|p| p.within);
    let report = StabilityReport {
        model: config.model.tag(),
        levels: levels.to_vec(),
        pairs,
        pass,
    };
    let mut f = create_output_file(&config.outputs, "rv_stability.csv")?;
    writeln!(f, "model,level_a,level_b,max_gap,band_at_max,within")?;
    for p in &report.pairs {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            report.model,
            fmt_float(p.level_a),
            fmt_float(p.level_b),
            fmt_float(p.max_gap),
            fmt_float(p.band_at_max),
            p.within
        )?;
    }
    write_manifest(config, "rv_stability", t0.elapsed())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::default_radii;
    use crate::numerics::MaternParams;

    fn matern25() -> MaternParams {
        MaternParams::new(2.5, 0.1).unwrap()
    }

    fn tiny_config(model: FieldModel, thresholds: ThresholdSpec, dir: &str) -> ExperimentConfig {
        let grid = GridSpec::new(21, 0.05).unwrap();
        ExperimentConfig {
            model,
            grid,
            thresholds,
            n_replicates: 80,
            seed: RngSeed::new(4711),
            radii: default_radii(0.05, 8),
            outputs: std::env::temp_dir().join(dir),
        }
    }

    #[test]
    fn config_validation_catches_bad_inputs() {
        let gauss = FieldModel::Gaussian { matern: matern25() };
        let ok = tiny_config(gauss.clone(), ThresholdSpec::Absolute(vec![0.5]), "exp-ok");
        assert!(ok.validate().is_ok());
        let mut c = ok.clone();
        c.thresholds = ThresholdSpec::Absolute(vec![]);
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.n_replicates = 49;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.thresholds = ThresholdSpec::Quantile(vec![0.5, 1.0]);
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.radii = vec![0.1, 0.1];
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.radii = vec![10.0];
        assert!(c.validate().is_err(), "radius beyond the inradius");
        // mode mismatches
        let quant = tiny_config(gauss.clone(), ThresholdSpec::Quantile(vec![0.9]), "exp-q");
        assert!(run_fig3(&quant).is_err());
        let abs = tiny_config(gauss, ThresholdSpec::Absolute(vec![0.5]), "exp-a");
        assert!(run_fig4(&abs).is_err());
        assert!(run_fig6(&abs).is_err());
    }

    #[test]
    fn fig3_produces_bracketed_rows_and_identical_reruns() {
        let config = tiny_config(
            FieldModel::Gaussian { matern: matern25() },
            ThresholdSpec::Absolute(vec![0.5]),
            "exp-fig3",
        );
        let rows = run_fig3(&config).unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!(r.kind, "slope_at_zero");
        assert!(r.ci_low <= r.value && r.value <= r.ci_high);
        assert!(r.theory > 0.0 && r.theory_se.is_none());
        assert_eq!(r.abscissa, r.threshold);
        // estimate lands in the right neighborhood even at this tiny scale
        assert!((r.value - r.theory).abs() / r.theory < 0.5);
        let csv = std::fs::read(config.outputs.join("fig3.csv")).unwrap();
        let again = run_fig3(&config).unwrap();
        assert_eq!(rows.len(), again.len());
        assert_eq!(rows[0].value.to_bits(), again[0].value.to_bits());
        assert_eq!(csv, std::fs::read(config.outputs.join("fig3.csv")).unwrap());
        assert!(config.outputs.join("fig3_manifest.txt").exists());
    }

    #[test]
    fn fig4_gaussian_slope_grows_along_quantiles() {
        let config = tiny_config(
            FieldModel::Gaussian { matern: matern25() },
            ThresholdSpec::Quantile(vec![0.7, 0.95]),
            "exp-fig4",
        );
        let rows = run_fig4(&config).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[1].value > rows[0].value, "slope should grow with p");
        assert!(rows[1].theory > rows[0].theory);
        // abscissa is -log(1-p)
        assert!((rows[0].abscissa - -(1.0f64 - 0.7).ln()).abs() < 1e-12);
    }

    #[test]
    fn fig6_rows_are_negative_and_rescale_fig4_theory() {
        let mut config = tiny_config(
            FieldModel::Gaussian { matern: matern25() },
            ThresholdSpec::Quantile(vec![0.9]),
            "exp-fig6",
        );
        config.n_replicates = 60;
        let rows = run_fig6(&config).unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!(r.kind, "f_prime_at_0");
        assert!(r.value < 0.0, "f must decrease at zero");
        assert!(r.theory < 0.0);
        // exact rescaling identity against the quantile-sweep theory column
        let u = quantile_threshold(&config.model, 0.9).unwrap();
        let (slope, _) = slope_theory(&config.model, &config.grid, u, &config.seed).unwrap();
        assert_eq!(r.theory, -slope / std::f64::consts::PI);
    }

    #[test]
    fn counterexample_respects_bound_and_contracts() {
        let out = std::env::temp_dir().join("exp-cex");
        let seed = RngSeed::new(31337);
        let rows = run_counterexample(200, &[2.0, 8.0], &seed, &out).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert!(r.max_sample < r.bound);
            assert!(r.median > 0.0);
        }
        assert!(
            rows[1].median < rows[0].median,
            "deeper thresholds must shrink the range: {} vs {}",
            rows[1].median,
            rows[0].median
        );
        assert!(out.join("counterexample.csv").exists());
        assert!(run_counterexample(0, &[2.0], &seed, &out).is_err());
        assert!(run_counterexample(10, &[], &seed, &out).is_err());
        assert!(run_counterexample(10, &[-1.0], &seed, &out).is_err());
    }

    #[test]
    fn stability_report_passes_for_the_scale_mixture() {
        let mut config = tiny_config(
            FieldModel::ScaleMixture {
                alpha: 2.0,
                matern: matern25(),
            },
            ThresholdSpec::Quantile(vec![0.95, 0.99, 0.995]),
            "exp-rv",
        );
        config.n_replicates = 120;
        let report = run_rv_stability(&config).unwrap();
        assert_eq!(report.pairs.len(), 3);
        assert!(
            report.pass,
            "mixture CDFs should be indistinguishable: {:?}",
            report.pairs
        );
        assert!(config.outputs.join("rv_stability.csv").exists());
        // too few levels
        let mut short = config.clone();
        short.thresholds = ThresholdSpec::Quantile(vec![0.95, 0.99]);
        assert!(run_rv_stability(&short).is_err());
        // levels below the stabilization floor
        let mut low = config.clone();
        low.thresholds = ThresholdSpec::Quantile(vec![0.5, 0.95, 0.99]);
        assert!(run_rv_stability(&low).is_err());
    }
}
