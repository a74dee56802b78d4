//! End-to-end checks of the installed binary: exit codes, output
//! discipline (results on stdout, diagnostics on stderr, no stray files),
//! pinned reference values, and byte identity across thread counts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Fresh per-test scratch directory under the system temp dir.
fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("exrange-cli-{}-{tag}", std::process::id()));
    if dir.exists() {
        fs::remove_dir_all(&dir).unwrap();
    }
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exrange"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("the binary should spawn")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("stdout is utf-8")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("stderr is utf-8")
}

fn entries(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn help_lists_subcommands_and_exits_zero() {
    let dir = scratch("help");
    let out = run_in(&dir, &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    for name in [
        "simulate", "mask", "edt", "cdf", "slope", "chi", "theory", "fig3", "selftest",
    ] {
        assert!(text.contains(name), "--help should list {name}");
    }
    assert!(text.contains("Exit codes"));

    let out = run_in(&dir, &["--version"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).starts_with("exrange"));
}

#[test]
fn argument_errors_exit_one_and_write_nothing() {
    let dir = scratch("argerr");
    let cases: &[&[&str]] = &[
        &["simulate", "--seed", "1", "--bogus"],
        &["simulate"],                                       // missing required seed
        &["slope", "--seed", "1"],                           // neither --u nor --p
        &["slope", "--seed", "1", "--u", "1", "--p", "0.9"], // both levels
        &["theory", "--gaussian-slope"],                     // slope needs --u
        &["mask", "--in", "no-such-file.txt", "--u", "0"],
        &[
            "simulate",
            "--seed",
            "1",
            "--model",
            "student(k=7,nu=2.5,ell=0.1)",
        ],
    ];
    for args in cases {
        let out = run_in(&dir, args);
        assert_eq!(out.status.code(), Some(1), "{args:?} should exit 1");
        assert!(
            !stderr(&out).is_empty(),
            "{args:?} should explain on stderr"
        );
    }
    assert!(entries(&dir).is_empty(), "failed runs must not leave files");
}

#[test]
fn theory_prints_pinned_reference_values() {
    let dir = scratch("theory");
    let out = run_in(&dir, &["theory", "--gaussian-slope", "--u", "0"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out), "12.910\n");

    let out = run_in(&dir, &["theory", "--limit-constant"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out), "16.180\n");

    let out = run_in(
        &dir,
        &["theory", "--mixture-slope", "--u", "3.2", "--alpha", "2"],
    );
    assert_eq!(out.status.code(), Some(0));
    let v: f64 = stdout(&out).trim().parse().unwrap();
    assert!(
        v > 25.0 && v < 26.0,
        "mixture slope near its plateau, got {v}"
    );
}

#[test]
fn simulate_is_deterministic_and_keeps_stdout_clean() {
    let dir = scratch("simdet");
    let args = ["simulate", "--seed", "7", "--n", "9", "--spacing", "0.05"];
    let a = run_in(&dir, &args);
    let b = run_in(&dir, &args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout, "same seed, same bytes");
    let text = stdout(&a);
    assert!(text.starts_with("nside=9\n"));
    assert!(text.contains("seed=7"));
    assert!(
        entries(&dir).is_empty(),
        "stdout mode must not create files"
    );
}

#[test]
fn mask_then_edt_consumes_simulated_grids() {
    let dir = scratch("pipeline");
    let sim = run_in(
        &dir,
        &[
            "simulate",
            "--seed",
            "3",
            "--n",
            "9",
            "--spacing",
            "0.1",
            "--out",
            "g.txt",
        ],
    );
    assert_eq!(sim.status.code(), Some(0), "{}", stderr(&sim));
    let mask = run_in(
        &dir,
        &["mask", "--in", "g.txt", "--u", "0.0", "--out", "m.txt"],
    );
    assert_eq!(mask.status.code(), Some(0), "{}", stderr(&mask));
    let edt = run_in(&dir, &["edt", "--in", "m.txt", "--out", "d.txt"]);
    assert_eq!(edt.status.code(), Some(0), "{}", stderr(&edt));

    let mask_text = fs::read_to_string(dir.join("m.txt")).unwrap();
    assert!(mask_text.contains("threshold="));
    let dist_text = fs::read_to_string(dir.join("d.txt")).unwrap();
    assert!(dist_text.starts_with("nside=9\n"));
    assert_eq!(entries(&dir), ["d.txt", "g.txt", "m.txt"]);
}

#[test]
fn cdf_emits_the_documented_header_for_both_methods() {
    let dir = scratch("cdf");
    for method in ["direct", "erosion"] {
        let out = run_in(
            &dir,
            &[
                "cdf",
                "--u",
                "1",
                "--n",
                "21",
                "--spacing",
                "0.05",
                "--reps",
                "30",
                "--radii-count",
                "5",
                "--method",
                method,
                "--seed",
                "3",
            ],
        );
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        let text = stdout(&out);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("r,prob,ci_low,ci_high"));
        assert_eq!(lines.count(), 5, "one row per radius");
    }
    assert!(entries(&dir).is_empty());
}

#[test]
fn config_errors_name_the_offending_line() {
    let dir = scratch("cfgerr");
    fs::write(dir.join("bad.txt"), "nreps = 50\nwibble = 3\n").unwrap();
    let out = run_in(&dir, &["fig3", "--seed", "1", "--config", "bad.txt"]);
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr(&out);
    assert!(msg.contains("line 2"), "should point at line 2: {msg}");
    assert!(msg.contains("wibble"), "should name the key: {msg}");
}

#[test]
fn dump_config_round_trips_through_a_file() {
    let dir = scratch("dump");
    let first = run_in(&dir, &["fig4", "--seed", "5", "--dump-config"]);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    let text = stdout(&first);
    assert!(text.contains("mode = quantile"));
    fs::write(dir.join("cfg.txt"), &text).unwrap();
    let second = run_in(
        &dir,
        &[
            "fig4",
            "--seed",
            "5",
            "--config",
            "cfg.txt",
            "--dump-config",
        ],
    );
    assert_eq!(second.status.code(), Some(0));
    assert_eq!(stdout(&second), text, "canonical dump is a fixed point");
    assert_eq!(
        entries(&dir),
        ["cfg.txt"],
        "dump mode must not run the sweep"
    );
}

#[test]
fn fig3_tables_are_byte_identical_across_thread_counts() {
    let dir = scratch("threads");
    fs::write(
        dir.join("cfg.txt"),
        "n = 21\nspacing = 0.05\nthresholds = 0.5\nnreps = 50\nradii_count = 6\n",
    )
    .unwrap();
    let one = run_in(
        &dir,
        &[
            "--threads",
            "1",
            "fig3",
            "--seed",
            "9",
            "--config",
            "cfg.txt",
            "--out",
            "a",
        ],
    );
    assert_eq!(one.status.code(), Some(0), "{}", stderr(&one));
    let three = run_in(
        &dir,
        &[
            "--threads",
            "3",
            "fig3",
            "--seed",
            "9",
            "--config",
            "cfg.txt",
            "--out",
            "b",
        ],
    );
    assert_eq!(three.status.code(), Some(0), "{}", stderr(&three));

    let a = fs::read(dir.join("a/fig3.csv")).unwrap();
    let b = fs::read(dir.join("b/fig3.csv")).unwrap();
    assert_eq!(a, b, "thread count must not leak into results");
    assert!(dir.join("a/fig3_manifest.txt").exists());
    assert_eq!(
        entries(&dir),
        ["a", "b", "cfg.txt"],
        "no writes outside --out"
    );
}

#[test]
fn counterexample_rows_respect_the_deterministic_bound() {
    let dir = scratch("counter");
    let out = run_in(
        &dir,
        &[
            "counterexample",
            "--reps",
            "25",
            "--levels",
            "4",
            "--seed",
            "2",
            "--out",
            "c",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = fs::read_to_string(dir.join("c/counterexample.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("u,n_samples,median,max_sample,bound"));
    let row: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .map(|f| f.parse().unwrap())
        .collect();
    let (median, max_sample, bound) = (row[2], row[3], row[4]);
    assert!(max_sample < bound, "samples stay strictly under sqrt(2)/u");
    assert!(median <= max_sample);
}
