//! Closed-form reference curves for the extremal range of smooth stationary
//! fields.
//!
//! For a Gaussian field with second spectral moment lambda, the slope of the
//! range CDF at zero is a ratio of curvature densities of the excursion set,
//! 2 C*_{d-1}(u) / C*_d(u), with an explicit formula in u. High thresholds
//! make the naive formula overflow, so the Gaussian hazard switches to a
//! continued-fraction Mills-ratio evaluation. Models without printable
//! closed forms (Student, chi-squared) get their reference densities from a
//! seeded Monte Carlo oracle instead; the Pareto scale mixture reduces to a
//! one-dimensional mixture integral over the Gaussian densities.

use crate::estimators::{estimate_c_d, estimate_c_dm1, LkcDensities};
use crate::geometry::excursion_mask;
use crate::numerics::{integrate_adaptive, ln_gamma, std_normal_pdf, std_normal_sf};
use crate::randfield::{
    build_covariance, cholesky_factor, sample_field, FieldModel, GridSpec, RngSeed,
};
use crate::{Error, Result};
use rayon::prelude::*;

/// Tagged theory curve, one value per abscissa (threshold or quantile
/// level).
#[derive(Debug, Clone)]
pub struct TheoryCurve {
    pub abscissae: Vec<f64>,
    pub values: Vec<f64>,
    pub kind: TheoryKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TheoryKind {
    Slope,
    LkcRatio,
    FPrime,
    LimitConstant,
}

impl std::fmt::Display for TheoryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TheoryKind::Slope => "slope",
            TheoryKind::LkcRatio => "lkc_ratio",
            TheoryKind::FPrime => "f_prime",
            TheoryKind::LimitConstant => "limit_constant",
        })
    }
}

impl TheoryCurve {
    pub fn new(abscissae: Vec<f64>, values: Vec<f64>, kind: TheoryKind) -> Result<Self> {
        if abscissae.len() != values.len() {
            return Err(Error::invalid("theory curve needs one value per abscissa"));
        }
        if values
            .iter()
            .chain(abscissae.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("theory curve values must be finite"));
        }
        Ok(Self {
            abscissae,
            values,
            kind,
        })
    }
}

// ---------------------------------------------------------------------------
// Gaussian formulas
// ---------------------------------------------------------------------------

/// Gamma((d+1)/2) / Gamma(d/2).
fn gamma_dim_ratio(d: u32) -> f64 {
    let df = d as f64;
    (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp()
}

fn validate_dim(d: u32) -> Result<()> {
    if d == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    Ok(())
}

fn validate_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!(
            "second spectral moment must be positive and finite, got {lambda}"
        )));
    }
    Ok(())
}

/// The isoperimetric-type constant 2 sqrt(pi) Gamma((d+1)/2) / Gamma(d/2).
pub fn beta_d(d: u32) -> Result<f64> {
    validate_dim(d)?;
    Ok(2.0 * std::f64::consts::PI.sqrt() * gamma_dim_ratio(d))
}

/// Gaussian hazard phi(u) / (1 - Phi(u)).
///
/// The direct ratio is accurate until the survival function underflows; from
/// u = 5 the reciprocal Mills ratio is evaluated instead through its
/// continued fraction 1/m(u) = u + 1/(u + 2/(u + 3/(...))) by backward
/// recurrence, which stays accurate out past u = 8 where the naive form has
/// already lost all precision.
fn normal_hazard(u: f64) -> f64 {
    if u <= 5.0 {
        return std_normal_pdf(u) / std_normal_sf(u);
    }
    let mut tail = 0.0;
    for k in (1..=120u32).rev() {
        tail = k as f64 / (u + tail);
    }
    u + tail
}

/// Slope of the Gaussian extremal-range CDF at zero:
/// sqrt(lambda/pi) e^(-u^2/2) / (1 - Phi(u)) * Gamma((d+1)/2)/Gamma(d/2),
/// evaluated as sqrt(2 lambda) * hazard(u) * Gamma((d+1)/2)/Gamma(d/2).
pub fn gaussian_slope(u: f64, lambda: f64, d: u32) -> Result<f64> {
    validate_dim(d)?;
    validate_lambda(lambda)?;
    if !u.is_finite() {
        return Err(Error::invalid(format!("threshold must be finite, got {u}")));
    }
    Ok((2.0 * lambda).sqrt() * normal_hazard(u) * gamma_dim_ratio(d))
}

/// Limit of gaussian_slope(u)/u as u grows:
/// sqrt(2 lambda) Gamma((d+1)/2) / Gamma(d/2).
pub fn gaussian_limit_constant(lambda: f64, d: u32) -> Result<f64> {
    validate_dim(d)?;
    validate_lambda(lambda)?;
    Ok((2.0 * lambda).sqrt() * gamma_dim_ratio(d))
}

/// Closed-form curvature densities of a Gaussian excursion set at threshold
/// u: the volume density is the marginal survival probability, and the half
/// surface-area density follows from the slope ratio.
pub fn lkc_densities_gaussian(u: f64, lambda: f64, d: u32) -> Result<LkcDensities> {
    let ratio = gaussian_slope(u, lambda, d)?;
    let c_d = std_normal_sf(u);
    Ok(LkcDensities {
        c_dm1: c_d * ratio / 2.0,
        c_d,
        ratio,
        se_c_dm1: None,
        se_c_d: None,
    })
}

// ---------------------------------------------------------------------------
// Pareto scale mixture (d = 2)
// ---------------------------------------------------------------------------

/// Slope of the range CDF at zero for the Pareto scale mixture W = Lambda*G
/// in two dimensions.
///
/// Conditionally on Lambda = l, the excursion {W > u} is the Gaussian
/// excursion {G > u/l}, so each curvature density of W is the Pareto mixture
/// of the Gaussian one:
///
///   C*_j^W(u) = int_1^inf C*_j^G(u/l) alpha l^(-alpha-1) dl,
///
/// and the slope is 2 C*_1^W / C*_2^W. The substitution l = s^(-1/alpha)
/// maps the integrals onto the unit interval with a smooth bounded
/// integrand for every alpha > 0.
pub fn mixture_slope(u: f64, lambda: f64, alpha: f64) -> Result<f64> {
    validate_lambda(lambda)?;
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!(
            "mixture tail index must be positive, got {alpha}"
        )));
    }
    if !u.is_finite() {
        return Err(Error::invalid(format!("threshold must be finite, got {u}")));
    }
    let mix = |g: &dyn Fn(f64) -> f64| -> Result<f64> {
        let f = |s: f64| g(u * s.max(0.0).powf(1.0 / alpha));
        let coarse = integrate_adaptive(f, 0.0, 1.0, 1e-9)?;
        integrate_adaptive(f, 0.0, 1.0, (1e-11 * coarse.abs()).max(1e-15))
    };
    // C*_1 of a Gaussian excursion at threshold v in d = 2:
    // sf(v) * gaussian_slope(v)/2 = (sqrt(lambda)/4) e^(-v^2/2)
    let half_area = |v: f64| 0.25 * lambda.sqrt() * (-0.5 * v * v).exp();
    let num = mix(&half_area)?;
    let den = mix(&|v: f64| std_normal_sf(v))?;
    if !(den > 0.0) || !num.is_finite() {
        return Err(Error::numeric(format!(
            "mixture density quadrature degenerated at u = {u}"
        )));
    }
    Ok(2.0 * num / den)
}

// ---------------------------------------------------------------------------
// Monte Carlo oracle for models without printable closed forms
// ---------------------------------------------------------------------------

/// Reference curvature densities by high-replicate Monte Carlo: volume and
/// lag-1 crossing estimators on unconditioned fields, with standard errors
/// from the replicate spread. Serves as the theory curve for the Student and
/// chi-squared models.
///
/// Deterministic for a fixed seed; replicates run in parallel on their own
/// seeded streams.
pub fn mc_lkc_oracle(
    model: &FieldModel,
    spec: &GridSpec,
    u: f64,
    n_reps: usize,
    seed: &RngSeed,
) -> Result<LkcDensities> {
    model.validate()?;
    if n_reps < 100 {
        return Err(Error::invalid(format!(
            "the Monte Carlo oracle needs at least 100 replicates, got {n_reps}"
        )));
    }
    let matern = model.matern().ok_or_else(|| {
        Error::invalid("the Monte Carlo oracle needs a model with a correlated Gaussian base")
    })?;
    let cov = build_covariance(spec, matern)?;
    let factor = cholesky_factor(&cov)?;
    let per: Vec<(f64, f64)> = (0..n_reps as u64)
        .into_par_iter()
        .map(|rep| -> Result<(f64, f64)> {
            let field = sample_field(model, spec, &factor, seed, rep)?;
            let mask = excursion_mask(&field, u);
            let masks = std::slice::from_ref(&mask);
            Ok((estimate_c_dm1(masks, 1)?, estimate_c_d(masks)?))
        })
        .collect::<Result<_>>()?;
    let n = n_reps as f64;
    let mean = |sel: &dyn Fn(&(f64, f64)) -> f64| per.iter().map(sel).sum::<f64>() / n;
    let c_dm1 = mean(&|p| p.0);
    let c_d = mean(&|p| p.1);
    let se = |sel: &dyn Fn(&(f64, f64)) -> f64, m: f64| {
        (per.iter().map(|p| (sel(p) - m).powi(2)).sum::<f64>() / (n * (n - 1.0))).sqrt()
    };
    if c_d == 0.0 {
        return Err(Error::numeric(format!(
            "no exceedances at u = {u}; raise the replicate count or lower the threshold"
        )));
    }
    Ok(LkcDensities {
        c_dm1,
        c_d,
        ratio: 2.0 * c_dm1 / c_d,
        se_c_dm1: Some(se(&|p| p.0, c_dm1)),
        se_c_d: Some(se(&|p| p.1, c_d)),
    })
}

// ---------------------------------------------------------------------------
// practical approximation and scaling rates
// ---------------------------------------------------------------------------

/// First-order approximation of the rescaled range CDF, P(u R <= r) for
/// large u: the limit constant times r, clamped to a probability.
pub fn practical_cdf_approx(r: f64, u: f64, lambda: f64, d: u32) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::invalid(format!(
            "radius must be nonnegative, got {r}"
        )));
    }
    if !u.is_finite() {
        return Err(Error::invalid(format!("threshold must be finite, got {u}")));
    }
    Ok((gaussian_limit_constant(lambda, d)? * r).min(1.0))
}

/// Rate g(p) at which the extremal range contracts along quantile levels:
/// sqrt(-log(1-p)) for Gaussian fields, constant for the regularly varying
/// scale mixture, unknown (None) for the other models.
pub fn scaling_rate(model: &FieldModel, p: f64) -> Result<Option<f64>> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!(
            "quantile level must lie in (0, 1), got {p}"
        )));
    }
    Ok(match model {
        FieldModel::Gaussian { .. } => Some((-(1.0 - p).ln()).sqrt()),
        FieldModel::ScaleMixture { .. } => Some(1.0),
        _ => None,
    })
}
