//! Fast invariant suite behind the `selftest` subcommand: the distance
//! transform against a brute-force oracle, closed-form identities, file
//! round trips, and bit-level determinism of sampling and experiment
//! tables. One line per check; scratch files go to the system temp
//! directory. Budgeted to finish in seconds.

use exrange::estimators::default_radii;
use exrange::experiments::{run_fig3, ExperimentConfig, ThresholdSpec};
use exrange::geometry::{
    distance_transform, excursion_mask, mask_from_str, mask_to_string, ExcursionMask,
};
use exrange::numerics::{
    chisq_cdf_k3, chisq_quantile_k3, mixture_marginal_cdf, mixture_marginal_quantile,
    second_spectral_moment, std_normal_cdf, std_normal_quantile, student_cdf_k3,
    student_quantile_k3, MaternParams,
};
use exrange::randfield::{
    conditional_factor, grid_from_str, grid_to_string, sample_conditional_exceedance,
    sample_field_once, FieldModel, GridSpec, RngSeed,
};
use exrange::theory::{beta_d, gaussian_limit_constant, gaussian_slope, mixture_slope};

type Check = (&'static str, fn() -> Result<(), String>);

/// Run every check, print one `ok`/`FAIL` line per check, return overall
/// success.
pub fn run_all() -> bool {
    let checks: &[Check] = &[
        ("edt_matches_brute_force", edt_matches_brute_force),
        ("formula_identities", formula_identities),
        ("quantile_round_trips", quantile_round_trips),
        ("file_round_trips", file_round_trips),
        ("sampling_determinism", sampling_determinism),
        ("experiment_table_determinism", experiment_table_determinism),
    ];
    let mut all_ok = true;
    for (name, run) in checks {
        match run() {
            Ok(()) => println!("ok {name}"),
            Err(msg) => {
                all_ok = false;
                println!("FAIL {name}: {msg}");
            }
        }
    }
    all_ok
}

fn matern25() -> MaternParams {
    MaternParams::new(2.5, 0.1).expect("valid matern parameters")
}

/// O(n^4) reference: per true pixel, the nearest false pixel or virtual
/// false one pixel beyond each window edge.
fn brute_squared(mask: &ExcursionMask) -> Vec<i64> {
    let n = mask.spec.n_side() as i64;
    let mut out = Vec::with_capacity((n * n) as usize);
    for r in 0..n {
        for c in 0..n {
            if !mask.get(r as usize, c as usize) {
                out.push(0);
                continue;
            }
            let mut best = [r + 1, n - r, c + 1, n - c]
                .into_iter()
                .map(|d| d * d)
                .min()
                .unwrap();
            for rr in 0..n {
                for cc in 0..n {
                    if !mask.get(rr as usize, cc as usize) {
                        best = best.min((r - rr).pow(2) + (c - cc).pow(2));
                    }
                }
            }
            out.push(best);
        }
    }
    out
}

fn check_edt(mask: &ExcursionMask, what: &str) -> Result<(), String> {
    let dt = distance_transform(mask);
    let oracle = brute_squared(mask);
    let n = mask.spec.n_side();
    for r in 0..n {
        for c in 0..n {
            let got = dt.get(r, c);
            let want = (oracle[r * n + c] as f64).sqrt() * mask.spec.spacing();
            if (got - want).abs() > 1e-9 {
                return Err(format!(
                    "{what}: pixel ({r},{c}) distance {got}, oracle {want}"
                ));
            }
        }
    }
    Ok(())
}

fn edt_matches_brute_force() -> Result<(), String> {
    let spec = GridSpec::new(17, 1.0).map_err(|e| e.to_string())?;
    let model = FieldModel::Gaussian { matern: matern25() };
    let seed = RngSeed::new(1716);
    for rep in 0..4 {
        let field = sample_field_once(&model, &spec, &seed, rep).map_err(|e| e.to_string())?;
        for u in [-0.5, 0.0, 0.5] {
            check_edt(
                &excursion_mask(&field, u),
                &format!("gaussian rep {rep} u {u}"),
            )?;
        }
    }
    let n = spec.n_side();
    let structured: &[(&str, Box<dyn Fn(usize, usize) -> bool>)] = &[
        ("all true", Box::new(|_, _| true)),
        ("all false", Box::new(|_, _| false)),
        (
            "single false center",
            Box::new(move |r, c| !(r == n / 2 && c == n / 2)),
        ),
        ("checkerboard", Box::new(|r, c| (r + c) % 2 == 0)),
    ];
    for (what, pattern) in structured {
        let bits = (0..n * n).map(|k| pattern(k / n, k % n)).collect();
        let mask = ExcursionMask::from_bits(spec, 0.0, bits).map_err(|e| e.to_string())?;
        check_edt(&mask, what)?;
    }
    Ok(())
}

fn formula_identities() -> Result<(), String> {
    let expect = |what: &str, got: f64, want: f64, tol: f64| -> Result<(), String> {
        if (got - want).abs() > tol * want.abs().max(1.0) {
            return Err(format!("{what}: got {got}, want {want}"));
        }
        Ok(())
    };
    let lambda = second_spectral_moment(&matern25()).map_err(|e| e.to_string())?;
    expect(
        "lambda for nu=2.5, ell=0.1",
        lambda,
        2.5 / (0.01 * 1.5),
        1e-12,
    )?;
    expect("beta_1", beta_d(1).map_err(|e| e.to_string())?, 2.0, 1e-12)?;
    expect(
        "beta_2",
        beta_d(2).map_err(|e| e.to_string())?,
        std::f64::consts::PI,
        1e-12,
    )?;
    let slope0 = gaussian_slope(0.0, lambda, 2).map_err(|e| e.to_string())?;
    expect(
        "gaussian slope at u = 0 is sqrt(lambda)",
        slope0,
        lambda.sqrt(),
        1e-12,
    )?;
    let limit = gaussian_limit_constant(lambda, 2).map_err(|e| e.to_string())?;
    expect(
        "limit constant is sqrt(pi lambda / 2) in the plane",
        limit,
        (std::f64::consts::PI * lambda / 2.0).sqrt(),
        1e-12,
    )?;
    let below = gaussian_slope(5.0 - 1e-9, lambda, 2).map_err(|e| e.to_string())?;
    let above = gaussian_slope(5.0 + 1e-9, lambda, 2).map_err(|e| e.to_string())?;
    expect("hazard evaluation switch is continuous", below, above, 1e-8)?;
    let mix0 = mixture_slope(0.0, lambda, 2.0).map_err(|e| e.to_string())?;
    expect(
        "mixture slope at u = 0 is sqrt(lambda)",
        mix0,
        lambda.sqrt(),
        1e-8,
    )?;
    Ok(())
}

fn quantile_round_trips() -> Result<(), String> {
    let ps = [0.001, 0.01, 0.05, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99, 0.999];
    let pairs: &[(&str, Box<dyn Fn(f64) -> Result<f64, String>>)] = &[
        (
            "normal",
            Box::new(|p| {
                Ok(std_normal_cdf(
                    std_normal_quantile(p).map_err(|e| e.to_string())?,
                ))
            }),
        ),
        (
            "student k=3",
            Box::new(|p| {
                Ok(student_cdf_k3(
                    student_quantile_k3(p).map_err(|e| e.to_string())?,
                ))
            }),
        ),
        (
            "chi-square k=3",
            Box::new(|p| {
                Ok(chisq_cdf_k3(
                    chisq_quantile_k3(p).map_err(|e| e.to_string())?,
                ))
            }),
        ),
        (
            "mixture alpha=2",
            Box::new(|p| {
                mixture_marginal_cdf(
                    mixture_marginal_quantile(p, 2.0).map_err(|e| e.to_string())?,
                    2.0,
                )
                .map_err(|e| e.to_string())
            }),
        ),
    ];
    for (what, round_trip) in pairs {
        for &p in &ps {
            let back = round_trip(p)?;
            if (back - p).abs() > 1e-8 {
                return Err(format!("{what}: cdf(quantile({p})) = {back}"));
            }
        }
    }
    Ok(())
}

fn file_round_trips() -> Result<(), String> {
    let spec = GridSpec::new(9, 0.5).map_err(|e| e.to_string())?;
    let model = FieldModel::Gaussian { matern: matern25() };
    let field = sample_field_once(&model, &spec, &RngSeed::new(5), 0).map_err(|e| e.to_string())?;
    let parsed = grid_from_str(&grid_to_string(&field)).map_err(|e| e.to_string())?;
    if parsed.values != field.values || parsed.spec != field.spec || parsed.seed != field.seed {
        return Err("grid text round trip changed the field".to_string());
    }
    let mask = excursion_mask(&field, 0.3);
    let (back, back_model, back_seed) =
        mask_from_str(&mask_to_string(&mask, &field.model, field.seed))
            .map_err(|e| e.to_string())?;
    let n = spec.n_side();
    let same_bits = (0..n * n).all(|k| back.get(k / n, k % n) == mask.get(k / n, k % n));
    if !same_bits
        || back.threshold != mask.threshold
        || back_model != field.model
        || back_seed != field.seed
    {
        return Err("mask text round trip changed the mask".to_string());
    }
    Ok(())
}

fn sampling_determinism() -> Result<(), String> {
    let spec = GridSpec::new(9, 0.5).map_err(|e| e.to_string())?;
    let model = FieldModel::Gaussian { matern: matern25() };
    let seed = RngSeed::new(55);
    let a = sample_field_once(&model, &spec, &seed, 2).map_err(|e| e.to_string())?;
    let b = sample_field_once(&model, &spec, &seed, 2).map_err(|e| e.to_string())?;
    if a.values != b.values {
        return Err("unconditioned draws with one seed differ".to_string());
    }
    let cond = conditional_factor(&spec, &matern25()).map_err(|e| e.to_string())?;
    let a = sample_conditional_exceedance(&model, &spec, 1.0, &cond, &seed, 2)
        .map_err(|e| e.to_string())?;
    let b = sample_conditional_exceedance(&model, &spec, 1.0, &cond, &seed, 2)
        .map_err(|e| e.to_string())?;
    if a.values != b.values {
        return Err("conditioned draws with one seed differ".to_string());
    }
    Ok(())
}

fn experiment_table_determinism() -> Result<(), String> {
    let run = |dir: &str| -> Result<Vec<u8>, String> {
        let outputs = std::env::temp_dir().join(dir);
        let config = ExperimentConfig {
            model: FieldModel::Gaussian { matern: matern25() },
            grid: GridSpec::new(21, 0.05).map_err(|e| e.to_string())?,
            thresholds: ThresholdSpec::Absolute(vec![0.5]),
            n_replicates: 50,
            seed: RngSeed::new(9),
            radii: default_radii(0.05, 6),
            outputs: outputs.clone(),
        };
        run_fig3(&config).map_err(|e| e.to_string())?;
        std::fs::read(outputs.join("fig3.csv")).map_err(|e| e.to_string())
    };
    if run("exrange-selftest-a")? != run("exrange-selftest-b")? {
        return Err("one seed produced two different result tables".to_string());
    }
    Ok(())
}
