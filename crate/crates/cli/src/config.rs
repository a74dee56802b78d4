//! Key-value experiment configuration: one `key = value` per line, `#`
//! starts a comment, unknown keys are errors that name the offending line.
//! An empty file means "all defaults". Dumping a configuration produces a
//! canonical text that loads back to the same configuration, so manifests
//! stay diff-friendly.

use exrange::experiments::{ExperimentConfig, ThresholdSpec};
use exrange::numerics::MaternParams;
use exrange::randfield::{FieldModel, GridSpec, RngSeed};
use exrange::{Error, Result};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Absolute,
    Quantile,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Absolute => "absolute",
            Mode::Quantile => "quantile",
        }
    }

    fn parse(s: &str) -> Option<Mode> {
        match s {
            "absolute" => Some(Mode::Absolute),
            "quantile" => Some(Mode::Quantile),
            _ => None,
        }
    }
}

/// Everything an experiment run needs except the seed, which only ever
/// arrives through the `--seed` flag.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: FieldModel,
    pub n: usize,
    pub spacing: f64,
    pub mode: Mode,
    pub thresholds: Vec<f64>,
    pub nreps: usize,
    pub radii_count: usize,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn to_experiment(&self, seed: u64) -> Result<ExperimentConfig> {
        let grid = GridSpec::new(self.n, self.spacing)?;
        let thresholds = match self.mode {
            Mode::Absolute => ThresholdSpec::Absolute(self.thresholds.clone()),
            Mode::Quantile => ThresholdSpec::Quantile(self.thresholds.clone()),
        };
        Ok(ExperimentConfig {
            model: self.model.clone(),
            grid,
            thresholds,
            n_replicates: self.nreps,
            seed: RngSeed::new(seed),
            radii: exrange::estimators::default_radii(self.spacing, self.radii_count),
            outputs: self.out.clone(),
        })
    }
}

fn desk_matern() -> MaternParams {
    MaternParams::new(2.5, 0.1).expect("desk-scale matern parameters are valid")
}

fn desk_base(model: FieldModel, mode: Mode, thresholds: Vec<f64>, nreps: usize) -> RunConfig {
    RunConfig {
        model,
        n: 61,
        spacing: 0.03,
        mode,
        thresholds,
        nreps,
        radii_count: 15,
        out: PathBuf::from("out"),
    }
}

/// Threshold sweep defaults: Gaussian field at u = 0, 1, 2.
pub fn fig3_defaults() -> RunConfig {
    desk_base(
        FieldModel::Gaussian {
            matern: desk_matern(),
        },
        Mode::Absolute,
        vec![0.0, 1.0, 2.0],
        1000,
    )
}

/// Quantile sweep defaults: Pareto scale mixture across deep quantiles.
pub fn fig4_defaults() -> RunConfig {
    desk_base(
        FieldModel::ScaleMixture {
            alpha: 2.0,
            matern: desk_matern(),
        },
        Mode::Quantile,
        vec![0.9, 0.95, 0.99, 0.995],
        1000,
    )
}

/// Tail-dependence sweep defaults: Gaussian field at the 0.9 quantile.
pub fn fig6_defaults() -> RunConfig {
    desk_base(
        FieldModel::Gaussian {
            matern: desk_matern(),
        },
        Mode::Quantile,
        vec![0.9],
        500,
    )
}

/// Stability check defaults: scale mixture at the deep quantile triple.
pub fn stability_defaults() -> RunConfig {
    desk_base(
        FieldModel::ScaleMixture {
            alpha: 2.0,
            matern: desk_matern(),
        },
        Mode::Quantile,
        vec![0.95, 0.99, 0.995],
        500,
    )
}

/// Model argument: a bare name with desk-scale defaults (gaussian, student,
/// chisq, mixture, polkadot) or a full tag such as `gaussian(nu=2.5,ell=0.1)`.
pub fn parse_model(s: &str) -> Result<FieldModel> {
    let matern = desk_matern();
    Ok(match s.trim() {
        "gaussian" => FieldModel::Gaussian { matern },
        "student" => FieldModel::Student { k: 3, matern },
        "chisq" => FieldModel::ChiSq { k: 3, matern },
        "mixture" => FieldModel::ScaleMixture { alpha: 2.0, matern },
        other => FieldModel::parse_tag(other)?,
    })
}

/// Parse configuration text over a defaults instance; every error names the
/// 1-based line it came from.
pub fn load_str(text: &str, defaults: &RunConfig) -> Result<RunConfig> {
    let mut cfg = defaults.clone();
    let mut seen = std::collections::BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = match raw.find('#') {
            Some(cut) => &raw[..cut],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::parse(format!("line {lineno}: expected key = value, got {line:?}"))
        })?;
        let (key, value) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            return Err(Error::parse(format!(
                "line {lineno}: duplicate key '{key}'"
            )));
        }
        let bad = |what: &str| Error::parse(format!("line {lineno}: {what}, got '{value}'"));
        match key {
            "model" => {
                cfg.model =
                    parse_model(value).map_err(|e| Error::parse(format!("line {lineno}: {e}")))?;
            }
            "n" => {
                cfg.n = value
                    .parse()
                    .map_err(|_| bad("n must be a nonnegative integer"))?
            }
            "spacing" => {
                cfg.spacing = value.parse().map_err(|_| bad("spacing must be a number"))?
            }
            "mode" => {
                cfg.mode = Mode::parse(value)
                    .ok_or_else(|| bad("mode must be 'absolute' or 'quantile'"))?
            }
            "thresholds" => {
                cfg.thresholds = value
                    .split(',')
                    .map(|t| t.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("thresholds must be comma-separated numbers"))?;
            }
            "nreps" => {
                cfg.nreps = value
                    .parse()
                    .map_err(|_| bad("nreps must be a nonnegative integer"))?
            }
            "radii_count" => {
                cfg.radii_count = value
                    .parse()
                    .map_err(|_| bad("radii_count must be a nonnegative integer"))?
            }
            "out" => cfg.out = PathBuf::from(value),
            other => {
                return Err(Error::parse(format!(
                    "line {lineno}: unknown key '{other}'"
                )));
            }
        }
    }
    Ok(cfg)
}

pub fn load(path: &std::path::Path, defaults: &RunConfig) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    load_str(&text, defaults)
}

/// Canonical text form: every key once, fixed order, shortest exact number
/// formatting. `load_str(dump(c)) == c` for any valid configuration.
pub fn dump(cfg: &RunConfig) -> String {
    let thresholds: Vec<String> = cfg.thresholds.iter().map(f64::to_string).collect();
    format!(
        "model = {}\nn = {}\nspacing = {}\nmode = {}\nthresholds = {}\nnreps = {}\nradii_count = {}\nout = {}\n",
        cfg.model.tag(),
        cfg.n,
        cfg.spacing,
        cfg.mode.as_str(),
        thresholds.join(","),
        cfg.nreps,
        cfg.radii_count,
        cfg.out.display(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_file_gives_all_defaults() {
        let d = fig3_defaults();
        assert_eq!(load_str("", &d).unwrap(), d);
        assert_eq!(load_str("\n  \n# only a comment\n", &d).unwrap(), d);
    }

    #[test]
    fn canonical_dump_of_the_threshold_sweep_defaults() {
        assert_eq!(
            dump(&fig3_defaults()),
            "model = gaussian(nu=2.5,ell=0.1)\n\
             n = 61\n\
             spacing = 0.03\n\
             mode = absolute\n\
             thresholds = 0,1,2\n\
             nreps = 1000\n\
             radii_count = 15\n\
             out = out\n"
        );
    }

    #[test]
    fn comments_whitespace_and_overrides_parse() {
        let text = "# run at a reduced scale\n\
                    n = 21   # small grid\n\
                    nreps = 200\n\
                    thresholds = 0.5, 1.5\n\
                    model = mixture(alpha=3,nu=1.5,ell=0.2)\n";
        let cfg = load_str(text, &fig3_defaults()).unwrap();
        assert_eq!(cfg.n, 21);
        assert_eq!(cfg.nreps, 200);
        assert_eq!(cfg.thresholds, vec![0.5, 1.5]);
        assert!(matches!(cfg.model, FieldModel::ScaleMixture { alpha, .. } if alpha == 3.0));
        assert_eq!(cfg.spacing, 0.03, "untouched keys keep their defaults");
    }

    #[test]
    fn errors_name_the_offending_line() {
        let d = fig3_defaults();
        let err = load_str("n = 21\nwidgets = 4\n", &d)
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2") && err.contains("widgets"), "{err}");
        let err = load_str("\n\nnreps = -5\n", &d).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("nreps"), "{err}");
        let err = load_str("just some words\n", &d).unwrap_err().to_string();
        assert!(
            err.contains("line 1") && err.contains("key = value"),
            "{err}"
        );
        let err = load_str("n = 21\nn = 23\n", &d).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("duplicate"), "{err}");
        let err = load_str("mode = sideways\n", &d).unwrap_err().to_string();
        assert!(err.contains("line 1") && err.contains("mode"), "{err}");
    }

    #[test]
    fn bare_model_names_take_desk_defaults() {
        assert!(matches!(
            parse_model("gaussian").unwrap(),
            FieldModel::Gaussian { matern } if matern.nu == 2.5 && matern.ell == 0.1
        ));
        assert!(matches!(
            parse_model("polkadot").unwrap(),
            FieldModel::PolkaDot
        ));
        assert!(parse_model("lattice").is_err());
    }

    fn model_strategy() -> impl Strategy<Value = FieldModel> {
        let nu = prop::sample::select(vec![1.5, 2.5, 3.5]);
        let ell = 0.01f64..2.0;
        let matern = (nu, ell).prop_map(|(nu, ell)| MaternParams::new(nu, ell).unwrap());
        prop_oneof![
            matern
                .clone()
                .prop_map(|matern| FieldModel::Gaussian { matern }),
            matern
                .clone()
                .prop_map(|matern| FieldModel::Student { k: 3, matern }),
            matern
                .clone()
                .prop_map(|matern| FieldModel::ChiSq { k: 3, matern }),
            (0.2f64..16.0, matern)
                .prop_map(|(alpha, matern)| FieldModel::ScaleMixture { alpha, matern }),
            Just(FieldModel::PolkaDot),
        ]
    }

    fn config_strategy() -> impl Strategy<Value = RunConfig> {
        (
            model_strategy(),
            3usize..199,
            0.001f64..1.0,
            prop::bool::ANY,
            prop::collection::vec(-5.0f64..5.0, 1..5),
            0usize..5000,
            1usize..40,
            prop::sample::select(vec!["out", "results/run1", "tmp-x"]),
        )
            .prop_map(
                |(model, n, spacing, quantile, thresholds, nreps, radii_count, out)| RunConfig {
                    model,
                    n,
                    spacing,
                    mode: if quantile {
                        Mode::Quantile
                    } else {
                        Mode::Absolute
                    },
                    thresholds,
                    nreps,
                    radii_count,
                    out: PathBuf::from(out),
                },
            )
    }

    proptest! {
        // dump is lossless and a fixed point: load inverts it exactly and
        // re-dumping the loaded value reproduces the same text
        #[test]
        fn dump_then_load_round_trips(cfg in config_strategy()) {
            let text = dump(&cfg);
            let loaded = load_str(&text, &fig3_defaults()).unwrap();
            prop_assert_eq!(&loaded, &cfg);
            prop_assert_eq!(dump(&loaded), text);
        }
    }
}
