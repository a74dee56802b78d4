//! Random field simulation on square pixel grids.
//!
//! Fields live on an odd n x n grid centered on the origin pixel. The
//! Gaussian base field has unit variance and Matern correlation; derived
//! fields (Student, chi-square, Pareto scale mixture) are pixel-wise
//! functions of independent copies of that base field. Sampling goes through
//! a dense covariance Cholesky factor, so grids are capped at
//! [`MAX_COVARIANCE_POINTS`] points.
//!
//! Conditioning on an exceedance at the origin is done exactly: first the
//! origin values of the underlying components (and any scale variable) are
//! drawn from their law given the derived value exceeding the threshold,
//! then each component is extended over the grid by conditional simulation
//! given its origin value. No whole-field rejection ever happens.
//!
//! Reproducibility contract: every sampler takes a [`RngSeed`] plus a
//! replicate index and derives one ChaCha stream per (replicate, component),
//! so a (root, replicate, component) triple yields bit-identical draws
//! regardless of which other replicates run, in which order, or on how many
//! threads.

use crate::numerics::{
    chisq_cdf_k3, chisq_quantile_k3, matern_correlation, mixture_marginal_quantile,
    std_normal_quantile, std_normal_sf, student_quantile_k3, MaternParams,
};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};
use std::io::{Read, Write};
use std::path::Path;

/// Hard cap on grid points for dense covariance work (a 16384-point matrix
/// is 2 GiB of f64; anything larger needs a different sampling strategy).
pub const MAX_COVARIANCE_POINTS: usize = 16384;

/// Proposal budget for the origin-value rejection samplers.
pub const REJECTION_CAP: usize = 1_000_000;

// ---------------------------------------------------------------------------
// grid
// ---------------------------------------------------------------------------

/// Square pixel grid: odd side length so a center pixel sits exactly on the
/// origin, and a positive pixel spacing in domain units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    n_side: usize,
    spacing: f64,
}

impl GridSpec {
    pub fn new(n_side: usize, spacing: f64) -> Result<Self> {
        if n_side % 2 == 0 {
            return Err(Error::invalid(format!(
                "sampling grids need an origin pixel, so the side must be odd; got {n_side}"
            )));
        }
        Self::new_allow_even(n_side, spacing)
    }

    /// Grid without a distinguished origin pixel, for mask-level morphology
    /// only. Origin-centered operations (conditional sampling, disc
    /// fractions, range extraction) are meaningless on even grids; on them
    /// `center` falls on the pixel just up-left of the true center.
    pub fn new_allow_even(n_side: usize, spacing: f64) -> Result<Self> {
        if n_side == 0 {
            return Err(Error::invalid("grid side must be positive"));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::invalid(format!(
                "grid spacing must be positive, got {spacing}"
            )));
        }
        Ok(Self { n_side, spacing })
    }

    pub fn n_side(&self) -> usize {
        self.n_side
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn n_points(&self) -> usize {
        self.n_side * self.n_side
    }

    /// Row and column of the origin pixel.
    pub fn center(&self) -> usize {
        (self.n_side - 1) / 2
    }

    /// Flattened index of the origin pixel (row-major).
    pub fn center_index(&self) -> usize {
        self.center() * self.n_side + self.center()
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.n_side && col < self.n_side);
        row * self.n_side + col
    }

    /// Physical coordinates of a pixel center relative to the origin pixel.
    pub fn coord(&self, k: usize) -> (f64, f64) {
        let m = self.center() as f64;
        let row = (k / self.n_side) as f64;
        let col = (k % self.n_side) as f64;
        ((col - m) * self.spacing, (row - m) * self.spacing)
    }

    /// Physical distance between two pixel centers.
    pub fn pixel_distance(&self, i: usize, j: usize) -> f64 {
        let (xi, yi) = self.coord(i);
        let (xj, yj) = self.coord(j);
        ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt()
    }

    /// Side length of the observation window in domain units.
    pub fn extent(&self) -> f64 {
        (self.n_side - 1) as f64 * self.spacing
    }

    /// Distance from the origin pixel to the nearest window edge.
    pub fn inradius(&self) -> f64 {
        self.center() as f64 * self.spacing
    }
}

// ---------------------------------------------------------------------------
// models
// ---------------------------------------------------------------------------

/// Field model on the grid. All derived models share one Matern correlation
/// for their Gaussian components.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldModel {
    /// Standard Gaussian field.
    Gaussian { matern: MaternParams },
    /// T = G_{k+1} / sqrt((G_1^2+..+G_k^2)/k), marginally Student t with k
    /// degrees of freedom. Only k = 3 is supported.
    Student { k: u32, matern: MaternParams },
    /// K = G_1^2+..+G_k^2, marginally chi-square with k degrees of freedom.
    /// Only k = 3 is supported.
    ChiSq { k: u32, matern: MaternParams },
    /// W = Lambda * G with Lambda ~ Pareto(alpha) on [1, inf), one draw per
    /// field, independent of G.
    ScaleMixture { alpha: f64, matern: MaternParams },
    /// Rotating-lattice hole field: value E off the holes, <= 0 on them,
    /// where E ~ Exp(1) also scales the hole lattice. Not stationary in any
    /// Gaussian sense; used as a boundedness counterexample.
    PolkaDot,
}

impl FieldModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            FieldModel::Gaussian { .. } | FieldModel::PolkaDot => Ok(()),
            FieldModel::Student { k, .. } | FieldModel::ChiSq { k, .. } => {
                if *k != 3 {
                    Err(Error::invalid(format!(
                        "only k = 3 is supported for Student/ChiSq fields, got {k}"
                    )))
                } else {
                    Ok(())
                }
            }
            FieldModel::ScaleMixture { alpha, .. } => {
                if !(*alpha > 0.0) || !alpha.is_finite() {
                    Err(Error::invalid(format!(
                        "scale mixture tail index must be positive, got {alpha}"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Matern parameters of the Gaussian components, if any.
    pub fn matern(&self) -> Option<&MaternParams> {
        match self {
            FieldModel::Gaussian { matern }
            | FieldModel::Student { matern, .. }
            | FieldModel::ChiSq { matern, .. }
            | FieldModel::ScaleMixture { matern, .. } => Some(matern),
            FieldModel::PolkaDot => None,
        }
    }

    /// Number of independent Gaussian component fields the model consumes.
    pub fn n_components(&self) -> usize {
        match self {
            FieldModel::Gaussian { .. } | FieldModel::ScaleMixture { .. } => 1,
            FieldModel::Student { k, .. } => *k as usize + 1,
            FieldModel::ChiSq { k, .. } => *k as usize,
            FieldModel::PolkaDot => 0,
        }
    }

    /// Compact tag used in file headers and CSV columns, parseable by
    /// [`FieldModel::parse_tag`].
    pub fn tag(&self) -> String {
        match self {
            FieldModel::Gaussian { matern } => {
                format!("gaussian(nu={},ell={})", matern.nu, matern.ell)
            }
            FieldModel::Student { k, matern } => {
                format!("student(k={},nu={},ell={})", k, matern.nu, matern.ell)
            }
            FieldModel::ChiSq { k, matern } => {
                format!("chisq(k={},nu={},ell={})", k, matern.nu, matern.ell)
            }
            FieldModel::ScaleMixture { alpha, matern } => {
                format!(
                    "mixture(alpha={},nu={},ell={})",
                    alpha, matern.nu, matern.ell
                )
            }
            FieldModel::PolkaDot => "polkadot".to_string(),
        }
    }

    pub fn parse_tag(tag: &str) -> Result<FieldModel> {
        let tag = tag.trim();
        if tag == "polkadot" {
            return Ok(FieldModel::PolkaDot);
        }
        let (name, rest) = tag
            .split_once('(')
            .ok_or_else(|| Error::parse(format!("malformed model tag: {tag}")))?;
        let rest = rest
            .strip_suffix(')')
            .ok_or_else(|| Error::parse(format!("malformed model tag: {tag}")))?;
        let mut kv = std::collections::BTreeMap::new();
        for part in rest.split(',') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::parse(format!("malformed model parameter: {part}")))?;
            let val: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::parse(format!("bad number in model tag: {v}")))?;
            kv.insert(k.trim().to_string(), val);
        }
        let get = |key: &str| -> Result<f64> {
            kv.get(key)
                .copied()
                .ok_or_else(|| Error::parse(format!("model tag {tag} is missing {key}=")))
        };
        let matern = || -> Result<MaternParams> { MaternParams::new(get("nu")?, get("ell")?) };
        let model = match name {
            "gaussian" => FieldModel::Gaussian { matern: matern()? },
            "student" => FieldModel::Student {
                k: get("k")? as u32,
                matern: matern()?,
            },
            "chisq" => FieldModel::ChiSq {
                k: get("k")? as u32,
                matern: matern()?,
            },
            "mixture" => FieldModel::ScaleMixture {
                alpha: get("alpha")?,
                matern: matern()?,
            },
            other => return Err(Error::parse(format!("unknown model: {other}"))),
        };
        model.validate()?;
        Ok(model)
    }
}

/// Marginal quantile of the model at the origin, used to convert probability
/// levels into absolute thresholds. The polka dot field has no continuous
/// marginal, so it only accepts absolute thresholds.
pub fn quantile_threshold(model: &FieldModel, p: f64) -> Result<f64> {
    model.validate()?;
    match model {
        FieldModel::Gaussian { .. } => std_normal_quantile(p),
        FieldModel::Student { .. } => student_quantile_k3(p),
        FieldModel::ChiSq { .. } => chisq_quantile_k3(p),
        FieldModel::ScaleMixture { alpha, .. } => mixture_marginal_quantile(p, *alpha),
        FieldModel::PolkaDot => Err(Error::invalid(
            "the polka dot field has no marginal quantile; pass absolute thresholds",
        )),
    }
}

// ---------------------------------------------------------------------------
// seeding
// ---------------------------------------------------------------------------

/// Component labels for stream derivation. Conditioned and unconditioned
/// sampling use disjoint component ranges so the two phases of an experiment
/// never share randomness.
pub mod streams {
    /// Conditioned sampling: Gaussian component i uses COND_GAUSS + i.
    pub const COND_GAUSS: u8 = 0;
    /// Conditioned sampling: origin values and tilted scale draws.
    pub const COND_ORIGIN: u8 = 16;
    /// Unconditioned sampling: Gaussian component i uses UNCOND_GAUSS + i.
    pub const UNCOND_GAUSS: u8 = 32;
    /// Unconditioned sampling: auxiliary draws (Pareto scale, hole lattice).
    pub const UNCOND_AUX: u8 = 48;
}

/// Root seed plus deterministic stream derivation.
///
/// Streams are ChaCha12 with the key derived from the root and the 64-bit
/// stream id `replicate << 8 | component`, so draws depend only on the
/// (root, replicate, component) triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngSeed {
    pub root: u64,
}

impl RngSeed {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn stream(&self, replicate: u64, component: u8) -> ChaCha12Rng {
        assert!(
            replicate < (1u64 << 56),
            "replicate index exceeds the stream id space"
        );
        let mut rng = ChaCha12Rng::seed_from_u64(self.root);
        rng.set_stream((replicate << 8) | component as u64);
        rng
    }

    /// Independent root for derived purposes (bootstrap resampling), decoupled
    /// from the simulation streams.
    pub fn derived_root(&self, label: u64) -> u64 {
        // splitmix64 step keeps derived roots well separated
        let mut z = self.root ^ label.wrapping_mul(0x9E3779B97F4A7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }
}

// ---------------------------------------------------------------------------
// covariance and factorization
// ---------------------------------------------------------------------------

/// Dense Matern covariance over all pixel pairs of the grid.
pub fn build_covariance(spec: &GridSpec, params: &MaternParams) -> Result<DMatrix<f64>> {
    let n = spec.n_points();
    if n > MAX_COVARIANCE_POINTS {
        return Err(Error::invalid(format!(
            "grid has {n} points, above the dense-covariance cap of {MAX_COVARIANCE_POINTS}; \
             use a side of at most {} pixels",
            (MAX_COVARIANCE_POINTS as f64).sqrt() as usize
        )));
    }
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        c[(i, i)] = 1.0;
        for j in 0..i {
            let v = matern_correlation(spec.pixel_distance(i, j), params)?;
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    Ok(c)
}

/// Lower-triangular Cholesky factor plus the diagonal jitter that was needed
/// to make the factorization succeed (0.0 in the clean case).
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    pub l: DMatrix<f64>,
    pub jitter: f64,
}

/// Factor a symmetric positive semi-definite matrix, escalating through the
/// jitter ladder 0, 1e-12, 1e-10, 1e-8 on the diagonal until the
/// factorization succeeds. Matrices that still fail at 1e-8 are reported as
/// numeric failures rather than silently regularized further.
pub fn cholesky_factor(matrix: &DMatrix<f64>) -> Result<CholeskyFactor> {
    if matrix.nrows() != matrix.ncols() {
        return Err(Error::invalid(format!(
            "cholesky needs a square matrix, got {}x{}",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    for &jitter in &[0.0, 1e-12, 1e-10, 1e-8] {
        let mut m = matrix.clone();
        if jitter > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
        }
        if let Some(ch) = m.cholesky() {
            return Ok(CholeskyFactor {
                l: ch.unpack(),
                jitter,
            });
        }
    }
    Err(Error::numeric(
        "cholesky factorization failed even with 1e-8 diagonal jitter",
    ))
}

/// One standardized Gaussian field drawn through the factor: values = L z
/// with z iid standard normal, in row-major pixel order.
pub fn sample_gaussian<R: Rng>(factor: &CholeskyFactor, rng: &mut R) -> Vec<f64> {
    let n = factor.l.nrows();
    let z = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
    (&factor.l * z).as_slice().to_vec()
}

// ---------------------------------------------------------------------------
// grid fields
// ---------------------------------------------------------------------------

/// A realized field on a grid, with the model and seed that produced it.
#[derive(Debug, Clone)]
pub struct GridField {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    pub model: FieldModel,
    pub seed: u64,
}

impl GridField {
    pub fn origin_value(&self) -> f64 {
        self.values[self.spec.center_index()]
    }
}

/// Pixel-wise map from Gaussian component values (and an optional scale) to
/// the derived field.
///
/// Student fields divide by sqrt((G_1^2+..+G_k^2)/k); a zero denominator is
/// reported as a numeric failure so the caller can redraw (it has
/// probability zero in exact arithmetic).
pub fn derive_field(
    model: &FieldModel,
    components: &[Vec<f64>],
    scale: Option<f64>,
) -> Result<Vec<f64>> {
    model.validate()?;
    let want = model.n_components();
    if components.len() != want {
        return Err(Error::invalid(format!(
            "model {} needs {want} component fields, got {}",
            model.tag(),
            components.len()
        )));
    }
    match model {
        FieldModel::Gaussian { .. } => Ok(components[0].clone()),
        FieldModel::Student { k, .. } => {
            let kf = *k as f64;
            let n = components[0].len();
            let mut out = vec![0.0; n];
            for i in 0..n {
                let q: f64 = components[..*k as usize].iter().map(|c| c[i] * c[i]).sum();
                if q == 0.0 {
                    return Err(Error::numeric(
                        "student denominator hit zero; redraw the components",
                    ));
                }
                out[i] = components[*k as usize][i] / (q / kf).sqrt();
            }
            Ok(out)
        }
        FieldModel::ChiSq { k, .. } => {
            let n = components[0].len();
            let mut out = vec![0.0; n];
            for i in 0..n {
                out[i] = components[..*k as usize].iter().map(|c| c[i] * c[i]).sum();
            }
            Ok(out)
        }
        FieldModel::ScaleMixture { .. } => {
            let lambda = scale.ok_or_else(|| {
                Error::invalid("scale mixture derivation needs the Pareto scale value")
            })?;
            Ok(components[0].iter().map(|&g| lambda * g).collect())
        }
        FieldModel::PolkaDot => Err(Error::invalid(
            "the polka dot field is not derived from Gaussian components",
        )),
    }
}

/// Unconditioned field draw. Streams: Gaussian component i reads
/// (replicate, UNCOND_GAUSS+i), auxiliary scale reads (replicate, UNCOND_AUX).
pub fn sample_field(
    model: &FieldModel,
    spec: &GridSpec,
    factor: &CholeskyFactor,
    seed: &RngSeed,
    replicate: u64,
) -> Result<GridField> {
    model.validate()?;
    if let FieldModel::PolkaDot = model {
        let mut rng = seed.stream(replicate, streams::UNCOND_AUX);
        let params = PolkaDotParams::sample(&mut rng);
        return Ok(GridField {
            spec: *spec,
            values: polkadot_values(spec, &params),
            model: model.clone(),
            seed: seed.root,
        });
    }
    let scale = match model {
        FieldModel::ScaleMixture { alpha, .. } => {
            let mut rng = seed.stream(replicate, streams::UNCOND_AUX);
            Some(pareto_scale(*alpha, &mut rng))
        }
        _ => None,
    };
    loop {
        let components: Vec<Vec<f64>> = (0..model.n_components())
            .map(|i| {
                let mut rng = seed.stream(replicate, streams::UNCOND_GAUSS + i as u8);
                sample_gaussian(factor, &mut rng)
            })
            .collect();
        match derive_field(model, &components, scale) {
            Ok(values) => {
                return Ok(GridField {
                    spec: *spec,
                    values,
                    model: model.clone(),
                    seed: seed.root,
                })
            }
            // zero denominator has probability zero; a redraw from fresh
            // streams is unreachable in practice but keeps the contract total
            Err(Error::Numeric(_)) => continue,
            Err(e) => return Err(e),
        }
    }
}

/// One-off unconditioned draw that builds (and discards) the covariance
/// factor internally. The hole-pattern field needs no factor at all; for
/// repeated draws on one grid, build the factor once and call
/// [`sample_field`] instead.
pub fn sample_field_once(
    model: &FieldModel,
    spec: &GridSpec,
    seed: &RngSeed,
    replicate: u64,
) -> Result<GridField> {
    model.validate()?;
    let factor = match model.matern() {
        Some(matern) => cholesky_factor(&build_covariance(spec, matern)?)?,
        None => CholeskyFactor {
            l: DMatrix::zeros(0, 0),
            jitter: 0.0,
        },
    };
    sample_field(model, spec, &factor, seed, replicate)
}

fn pareto_scale<R: Rng>(alpha: f64, rng: &mut R) -> f64 {
    // V uniform on (0,1]; Lambda = V^(-1/alpha) has P(Lambda > x) = x^-alpha
    let v: f64 = 1.0 - rng.gen::<f64>();
    v.powf(-1.0 / alpha)
}

// ---------------------------------------------------------------------------
// polka dot field
// ---------------------------------------------------------------------------

/// Latent variables of the polka dot field: the Exp(1) level/scale E, a
/// rotation angle, and a uniform lattice shift.
#[derive(Debug, Clone, Copy)]
pub struct PolkaDotParams {
    pub e: f64,
    pub theta: f64,
    pub shift: (f64, f64),
}

impl PolkaDotParams {
    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        let e = -(1.0 - rng.gen::<f64>()).ln();
        let theta = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
        let shift = (rng.gen::<f64>(), rng.gen::<f64>());
        Self { e, theta, shift }
    }

    /// Number of lattice holes covering the point s (0 almost everywhere).
    /// The hole test in scaled coordinates z = E R_theta(s) - shift checks
    /// only the four cell corners around z: the hole radius 3^-E is below 1,
    /// so no other lattice point can be within it.
    pub fn holes_at(&self, s: (f64, f64)) -> u32 {
        let (cos, sin) = (self.theta.cos(), self.theta.sin());
        let rx = self.e * (s.0 * cos - s.1 * sin) - self.shift.0;
        let ry = self.e * (s.0 * sin + s.1 * cos) - self.shift.1;
        let r2 = 3.0f64.powf(-2.0 * self.e);
        let mut count = 0;
        for qx in [rx.floor(), rx.floor() + 1.0] {
            for qy in [ry.floor(), ry.floor() + 1.0] {
                let d2 = (rx - qx).powi(2) + (ry - qy).powi(2);
                if d2 < r2 {
                    count += 1;
                }
            }
        }
        count
    }

    /// Exact distance from the origin to the nearest hole edge, computable
    /// without any grid: holes sit on a lattice of spacing 1/E with radius
    /// 3^-E/E, and the rotation drops out of the distance.
    pub fn origin_hole_distance(&self) -> f64 {
        let (ux, uy) = self.shift;
        let mut best = f64::INFINITY;
        for qx in [-1.0, 0.0] {
            for qy in [-1.0, 0.0] {
                let d = ((qx + ux).powi(2) + (qy + uy).powi(2)).sqrt();
                best = best.min(d);
            }
        }
        (best - 3.0f64.powf(-self.e)) / self.e
    }
}

/// Render the polka dot field on a grid: E off the holes, E(1 - holes) on
/// them.
pub fn polkadot_values(spec: &GridSpec, params: &PolkaDotParams) -> Vec<f64> {
    (0..spec.n_points())
        .map(|k| {
            let s = spec.coord(k);
            params.e * (1.0 - params.holes_at(s) as f64)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// conditional simulation
// ---------------------------------------------------------------------------

/// Machinery for extending a Gaussian component over the grid given its
/// origin value: conditional mean weights (the origin column of the
/// correlation matrix) and the Cholesky factor of the conditional covariance
/// with the origin pixel removed, so the origin value is reproduced exactly.
#[derive(Debug, Clone)]
pub struct ConditionalGaussian {
    spec: GridSpec,
    origin: usize,
    weights: Vec<f64>,
    reduced_factor: Option<CholeskyFactor>,
}

impl ConditionalGaussian {
    pub fn jitter(&self) -> f64 {
        self.reduced_factor.as_ref().map_or(0.0, |f| f.jitter)
    }
}

/// Build the conditional-simulation factor for a grid and correlation.
/// The conditional covariance (minor of C with the origin row/column
/// removed, minus the outer product of the origin correlations) goes through
/// the same jitter ladder as the unconditional factorization.
pub fn conditional_factor(spec: &GridSpec, params: &MaternParams) -> Result<ConditionalGaussian> {
    let n = spec.n_points();
    let origin = spec.center_index();
    let c = build_covariance(spec, params)?;
    let weights: Vec<f64> = (0..n).map(|i| c[(i, origin)]).collect();
    if n == 1 {
        return Ok(ConditionalGaussian {
            spec: *spec,
            origin,
            weights,
            reduced_factor: None,
        });
    }
    let keep: Vec<usize> = (0..n).filter(|&i| i != origin).collect();
    let mut reduced = DMatrix::zeros(n - 1, n - 1);
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate().take(a + 1) {
            let v = c[(i, j)] - weights[i] * weights[j];
            reduced[(a, b)] = v;
            reduced[(b, a)] = v;
        }
    }
    let factor = cholesky_factor(&reduced)?;
    Ok(ConditionalGaussian {
        spec: *spec,
        origin,
        weights,
        reduced_factor: Some(factor),
    })
}

impl ConditionalGaussian {
    /// One Gaussian component conditioned on its origin value: mean
    /// weights * x0 plus a fluctuation with the origin pinned exactly at x0.
    pub fn extend<R: Rng>(&self, x0: f64, rng: &mut R) -> Vec<f64> {
        let n = self.spec.n_points();
        let mut values = vec![0.0; n];
        values[self.origin] = x0;
        if let Some(factor) = &self.reduced_factor {
            let fluct = sample_gaussian(factor, rng);
            let mut r = 0;
            for i in 0..n {
                if i == self.origin {
                    continue;
                }
                values[i] = self.weights[i] * x0 + fluct[r];
                r += 1;
            }
        }
        values
    }
}

/// Standard normal truncated to (u, inf), by quantile inversion on the
/// survival scale (accurate arbitrarily deep in the tail).
pub fn truncated_std_normal<R: Rng>(u: f64, rng: &mut R) -> f64 {
    loop {
        let v: f64 = rng.gen();
        let q = (1.0 - v) * std_normal_sf(u);
        // q is strictly inside (0, sf(u)); the quantile call cannot fail
        let x = -std_normal_quantile(q).expect("q in (0,1) by construction");
        if x > u {
            return x;
        }
        // x == u can only happen by floating point rounding; redraw
    }
}

/// Pareto(alpha) scale conditioned on the mixture exceeding u at the origin:
/// density proportional to sf(u/lambda) alpha lambda^(-alpha-1) on [1, inf).
/// Sampled by inverse CDF on a uniform grid in t = lambda^-alpha (where the
/// unconditioned law is uniform), which keeps the grid finite and the
/// interpolation error tiny.
fn tilted_pareto_scale<R: Rng>(u: f64, alpha: f64, rng: &mut R) -> f64 {
    const GRID: usize = 4096;
    // sf(u t^(1/alpha)) extends continuously to sf(0) = 1/2 at t = 0
    let h = |t: f64| -> f64 { std_normal_sf(u * t.max(0.0).powf(1.0 / alpha)) };
    // trapezoid cumulative over [0, 1]
    let mut cum = vec![0.0f64; GRID + 1];
    let step = 1.0 / GRID as f64;
    let mut prev = h(0.0);
    for i in 1..=GRID {
        let t = i as f64 * step;
        let cur = h(t);
        cum[i] = cum[i - 1] + 0.5 * (prev + cur) * step;
        prev = cur;
    }
    let total = cum[GRID];
    let v: f64 = rng.gen::<f64>() * total;
    // binary search for the bracketing grid cell
    let mut lo = 0usize;
    let mut hi = GRID;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if cum[mid] <= v {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let frac = if cum[hi] > cum[lo] {
        (v - cum[lo]) / (cum[hi] - cum[lo])
    } else {
        0.5
    };
    let t = (lo as f64 + frac) * step;
    t.max(1e-12).powf(-1.0 / alpha)
}

/// Exact-in-distribution draw of a field conditioned on exceeding u at the
/// origin.
///
/// The origin values of the underlying components (and the scale variable,
/// for the mixture) are drawn from their exceedance-conditioned law; each
/// Gaussian component is then extended over the grid given its origin value.
/// Rejection only ever happens on origin values in at most four dimensions,
/// never on whole fields, and is capped at [`REJECTION_CAP`] proposals.
///
/// Streams: Gaussian component i reads (replicate, COND_GAUSS+i), origin and
/// scale draws read (replicate, COND_ORIGIN).
pub fn sample_conditional_exceedance(
    model: &FieldModel,
    spec: &GridSpec,
    u: f64,
    cond: &ConditionalGaussian,
    seed: &RngSeed,
    replicate: u64,
) -> Result<GridField> {
    model.validate()?;
    if cond.spec != *spec {
        return Err(Error::invalid(
            "conditional factor was built for a different grid",
        ));
    }
    let mut origin_rng = seed.stream(replicate, streams::COND_ORIGIN);
    let values = match model {
        FieldModel::Gaussian { .. } => {
            let x0 = truncated_std_normal(u, &mut origin_rng);
            let mut rng = seed.stream(replicate, streams::COND_GAUSS);
            cond.extend(x0, &mut rng)
        }
        FieldModel::Student { k, .. } => {
            // T(0) = g_{k+1} sqrt(k) / sqrt(q) with q = g_1^2+..+g_k^2.
            // Draw q from chi-square(k) tilted by the acceptance probability
            // sf(u sqrt(q/k)) via rejection, then the numerator exactly from
            // the truncated normal, then a uniform direction.
            let kf = *k as f64;
            let bound = if u >= 0.0 { 0.5 } else { 1.0 };
            let mut accepted = None;
            for trial in 0..REJECTION_CAP {
                let _ = trial;
                let p: f64 = origin_rng.gen();
                let q = chisq_quantile_k3(p.clamp(1e-16, 1.0 - 1e-16))?;
                let accept_p = std_normal_sf(u * (q / kf).sqrt()) / bound;
                if origin_rng.gen::<f64>() < accept_p {
                    accepted = Some(q);
                    break;
                }
            }
            let q = accepted.ok_or_else(|| {
                Error::numeric(format!(
                    "origin rejection cap hit while conditioning a student field at u={u}; \
                     the threshold is too deep"
                ))
            })?;
            let g_num = truncated_std_normal(u * (q / kf).sqrt(), &mut origin_rng);
            let dir: [f64; 3] = UnitSphere.sample(&mut origin_rng);
            let sq = q.sqrt();
            let origin_vals = [dir[0] * sq, dir[1] * sq, dir[2] * sq, g_num];
            extend_components(model, cond, seed, replicate, &origin_vals, None)?
        }
        FieldModel::ChiSq { k, .. } => {
            // K(0) ~ chi-square(k) truncated to (u, inf), exactly by inverse
            // CDF; the component origin vector is uniform on the sphere of
            // radius sqrt(K(0)).
            let _ = k;
            let p0 = chisq_cdf_k3(u);
            let v: f64 = origin_rng.gen();
            let q = chisq_quantile_k3((p0 + v * (1.0 - p0)).clamp(1e-16, 1.0 - 1e-16))?;
            let dir: [f64; 3] = UnitSphere.sample(&mut origin_rng);
            let sq = q.sqrt();
            let origin_vals = [dir[0] * sq, dir[1] * sq, dir[2] * sq];
            extend_components(model, cond, seed, replicate, &origin_vals, None)?
        }
        FieldModel::ScaleMixture { alpha, .. } => {
            let lambda = tilted_pareto_scale(u, *alpha, &mut origin_rng);
            let g0 = truncated_std_normal(u / lambda, &mut origin_rng);
            let origin_vals = [g0];
            extend_components(model, cond, seed, replicate, &origin_vals, Some(lambda))?
        }
        FieldModel::PolkaDot => {
            // E | E > u is u + Exp(1); reject the rare draws whose hole
            // lattice covers the origin.
            let mut accepted = None;
            for _ in 0..REJECTION_CAP {
                let mut params = PolkaDotParams::sample(&mut origin_rng);
                params.e += u;
                if params.holes_at((0.0, 0.0)) == 0 {
                    accepted = Some(params);
                    break;
                }
            }
            let params = accepted.ok_or_else(|| {
                Error::numeric("origin rejection cap hit while conditioning the polka dot field")
            })?;
            polkadot_values(spec, &params)
        }
    };
    let field = GridField {
        spec: *spec,
        values,
        model: model.clone(),
        seed: seed.root,
    };
    if !(field.origin_value() > u) {
        return Err(Error::numeric(format!(
            "conditioned field failed to exceed at the origin: {} <= {u}",
            field.origin_value()
        )));
    }
    Ok(field)
}

/// Extend each Gaussian component from its origin value and apply the
/// pixel-wise derivation. Retries on the probability-zero event of a zero
/// Student denominator somewhere on the grid.
fn extend_components(
    model: &FieldModel,
    cond: &ConditionalGaussian,
    seed: &RngSeed,
    replicate: u64,
    origin_vals: &[f64],
    scale: Option<f64>,
) -> Result<Vec<f64>> {
    let mut rngs: Vec<ChaCha12Rng> = (0..origin_vals.len())
        .map(|i| seed.stream(replicate, streams::COND_GAUSS + i as u8))
        .collect();
    loop {
        let components: Vec<Vec<f64>> = origin_vals
            .iter()
            .zip(rngs.iter_mut())
            .map(|(&x0, rng)| cond.extend(x0, rng))
            .collect();
        match derive_field(model, &components, scale) {
            Ok(values) => return Ok(values),
            Err(Error::Numeric(_)) => continue,
            Err(e) => return Err(e),
        }
    }
}

// ---------------------------------------------------------------------------
// grid file format
// ---------------------------------------------------------------------------

/// Serialize a field to the plain-text grid format: four `key=value` header
/// lines (nside, spacing, model, seed) and then one grid row of values per
/// line. Values carry 17 significant digits, which round-trips f64 exactly.
pub fn grid_to_string(field: &GridField) -> String {
    let spec = field.spec;
    let mut out = String::new();
    out.push_str(&format!("nside={}\n", spec.n_side()));
    out.push_str(&format!("spacing={:.16e}\n", spec.spacing()));
    out.push_str(&format!("model={}\n", field.model.tag()));
    out.push_str(&format!("seed={}\n", field.seed));
    for row in 0..spec.n_side() {
        let line: Vec<String> = (0..spec.n_side())
            .map(|col| format!("{:.16e}", field.values[spec.index(row, col)]))
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn grid_from_str(text: &str) -> Result<GridField> {
    let mut lines = text.lines().enumerate();
    let mut header = std::collections::BTreeMap::new();
    let mut body: Vec<f64> = Vec::new();
    let mut n_side = None;
    for (lineno, line) in &mut lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some((key, value)) = line.split_once('=') {
            if body.is_empty() && matches!(key, "nside" | "spacing" | "model" | "seed") {
                header.insert(key.to_string(), value.to_string());
                if key == "nside" {
                    let n: usize = value.parse().map_err(|_| {
                        Error::parse(format!("line {}: bad nside: {value}", lineno + 1))
                    })?;
                    n_side = Some(n);
                }
                continue;
            }
        }
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::parse(format!("line {}: bad value: {tok}", lineno + 1)))?;
            body.push(v);
        }
    }
    let n_side =
        n_side.ok_or_else(|| Error::parse("grid file is missing the nside= header line"))?;
    let spacing: f64 = header
        .get("spacing")
        .ok_or_else(|| Error::parse("grid file is missing the spacing= header line"))?
        .parse()
        .map_err(|_| Error::parse("bad spacing value"))?;
    let model = FieldModel::parse_tag(
        header
            .get("model")
            .ok_or_else(|| Error::parse("grid file is missing the model= header line"))?,
    )?;
    let seed: u64 = header
        .get("seed")
        .ok_or_else(|| Error::parse("grid file is missing the seed= header line"))?
        .trim()
        .parse()
        .map_err(|_| Error::parse("bad seed value"))?;
    let spec = GridSpec::new(n_side, spacing)?;
    if body.len() != spec.n_points() {
        return Err(Error::parse(format!(
            "grid file has {} values, expected {}",
            body.len(),
            spec.n_points()
        )));
    }
    Ok(GridField {
        spec,
        values: body,
        model,
        seed,
    })
}

pub fn write_grid_file(path: &Path, field: &GridField) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(grid_to_string(field).as_bytes())?;
    Ok(())
}

pub fn read_grid_file(path: &Path) -> Result<GridField> {
    let mut text = String::new();
    std::io::BufReader::new(std::fs::File::open(path)?).read_to_string(&mut text)?;
    grid_from_str(&text)
}
