use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};

use dsse_crb::experiment::output::{
    read_table, RunManifest, COVERAGE_FILE, CRB_COLUMNS, CRB_FILE, CRB_SCHEMA, MANIFEST_FILE,
    RMSE_FILE,
};

const OUTPUTS: [&str; 4] = [CRB_FILE, COVERAGE_FILE, RMSE_FILE, MANIFEST_FILE];

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dsse-crb"));
    c.env_remove("DSSE_CRB_OUT").env_remove("RUST_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn sweep(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["sweep", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn manifest(dir: &Path) -> RunManifest {
    RunManifest::from_json(&std::fs::read_to_string(dir.join(MANIFEST_FILE)).unwrap()).unwrap()
}

#[test]
fn help_matches_snapshots() {
    let top = run(&["--help"]);
    assert!(top.status.success());
    assert_eq!(stdout(&top), include_str!("snapshots/help.txt"));
    let sweep = run(&["sweep", "--help"]);
    assert_eq!(stdout(&sweep), include_str!("snapshots/sweep_help.txt"));
}

#[test]
fn sweep_help_lists_every_flag() {
    let help = stdout(&run(&["sweep", "--help"]));
    for flag in [
        "--config",
        "--network",
        "--plan",
        "--variants",
        "--scenarios",
        "--coverage-scenarios",
        "--seed",
        "--sensor-seed",
        "--pf-tol",
        "--pf-max-iter",
        "--wls-tol",
        "--wls-max-iter",
        "--damping",
        "--out",
    ] {
        assert!(help.contains(flag), "missing {flag}");
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = [
        "--variants",
        "gaussian-only",
        "--scenarios",
        "3",
        "--coverage-scenarios",
        "4",
        "--seed",
        "5",
    ];
    assert!(sweep(&a, &args).status.success());
    assert!(sweep(&b, &args).status.success());
    for f in OUTPUTS {
        let (x, y) = (
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
        );
        assert!(x == y, "{f} differs between runs");
    }
}

#[test]
fn gaussian_only_ratios_are_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = sweep(
        dir.path(),
        &[
            "--variants",
            "gaussian-only",
            "--scenarios",
            "4",
            "--coverage-scenarios",
            "4",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join(CRB_FILE)).unwrap();
    let table = read_table(&text, CRB_SCHEMA, &CRB_COLUMNS).unwrap();
    let rho = table.floats("rho").unwrap();
    assert_eq!(rho.len(), 3 * 4 * 28);
    assert!(rho.iter().all(|r| (r - 1.0).abs() <= 1e-10));
}

#[test]
fn table1_sweep_covers_all_variants() {
    let dir = tempfile::tempdir().unwrap();
    let o = sweep(
        dir.path(),
        &[
            "--variants",
            "table1",
            "--scenarios",
            "2",
            "--coverage-scenarios",
            "2",
            "--seed",
            "42",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join(CRB_FILE)).unwrap();
    let table = read_table(&text, CRB_SCHEMA, &CRB_COLUMNS).unwrap();
    let col = table.column("variant_id").unwrap();
    let ids: BTreeSet<&str> = table.rows.iter().map(|r| r[col].as_str()).collect();
    assert_eq!(ids.len(), 22);
    let m = manifest(dir.path());
    assert_eq!(m.variants.len(), 22);
    assert_eq!(m.outputs.len(), 3);
    assert_eq!(m.network.unwrap().n_buses, 15);
    assert_eq!(m.plan.unwrap().n_measurements, 37);
    let cells = m.cells.unwrap();
    assert_eq!((cells.total, cells.converged), (44, 44));
}

#[test]
fn failed_cells_give_nonzero_exit_and_still_write() {
    let dir = tempfile::tempdir().unwrap();
    let o = sweep(
        dir.path(),
        &[
            "--variants",
            "gaussian-only",
            "--scenarios",
            "2",
            "--coverage-scenarios",
            "2",
            "--wls-max-iter",
            "1",
        ],
    );
    assert_eq!(o.status.code(), Some(3));
    for f in OUTPUTS {
        assert!(dir.path().join(f).exists(), "{f} not written");
    }
    let cells = manifest(dir.path()).cells.unwrap();
    assert_eq!(cells.total, 6);
    assert_eq!(cells.failed.len(), 6 - cells.converged);
    assert!(!cells.failed.is_empty());
}

#[test]
fn missing_inputs_still_write_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = sweep(dir.path(), &["--network", "/nonexistent/net.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/net.json"));
    let m = manifest(dir.path());
    assert!(m.error.unwrap().contains("/nonexistent/net.json"));
    assert!(m.network.is_none());
    assert!(!dir.path().join(CRB_FILE).exists());

    let bad_config = dir.path().join("bad.json");
    std::fs::write(&bad_config, r#"{"not_a_field": 1}"#).unwrap();
    let o = sweep(
        dir.path(),
        &["--config", bad_config.to_str().unwrap(), "--seed", "9"],
    );
    assert_eq!(o.status.code(), Some(1));
    let m = manifest(dir.path());
    assert_eq!(m.master_seed, 9);
    assert!(m.error.unwrap().contains("bad.json"));
}

#[test]
fn config_file_flags_and_env_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"variants": "gaussian-only", "n_scenarios_crb": 2, "n_scenarios_coverage": 3, "master_seed": 11}"#,
    )
    .unwrap();
    let env_out = dir.path().join("from_env");
    let o = bin()
        .args([
            "sweep",
            "--config",
            cfg.to_str().unwrap(),
            "--scenarios",
            "1",
        ])
        .env("DSSE_CRB_OUT", &env_out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&env_out);
    assert_eq!(m.n_scenarios_crb, 1);
    assert_eq!(m.n_scenarios_coverage, 3);
    assert_eq!(m.master_seed, 11);
    assert_eq!(m.variants.len(), 3);

    let flag_out = dir.path().join("from_flag");
    let o = bin()
        .args([
            "sweep",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            flag_out.to_str().unwrap(),
        ])
        .env("DSSE_CRB_OUT", &env_out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(manifest(&flag_out).n_scenarios_crb, 2);
}

fn fisher_line(out: &str, key: &str) -> f64 {
    let line = out
        .lines()
        .find(|l| l.starts_with(key))
        .unwrap_or_else(|| panic!("no {key} in {out}"));
    line[key.len()..]
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn fisher_reports_known_values() {
    for (args, expected) in [
        (vec!["--family", "laplace", "--sigma", "1"], 2.0),
        (vec!["--family", "gaussian", "--sigma", "0.5"], 4.0),
        (
            vec!["--family", "student-t", "--nu", "4", "--sigma", "1"],
            10.0 / 7.0,
        ),
    ] {
        let mut full = vec!["fisher"];
        full.extend(args);
        let o = run(&full);
        assert!(o.status.success());
        let text = stdout(&o);
        for key in ["F closed", "F quadrature"] {
            let f = fisher_line(&text, key);
            assert!(
                ((f - expected) / expected).abs() < 1e-8,
                "{key} = {f}, want {expected}"
            );
        }
    }
}

#[test]
fn fisher_handles_skew_and_rejects_bad_parameters() {
    let o = run(&[
        "fisher",
        "--family",
        "skew-normal",
        "--alpha",
        "5",
        "--sigma",
        "0.2",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("F closed     n/a"));
    assert!(fisher_line(&text, "F sigma^2") > 1.0);
    assert_eq!(
        run(&[
            "fisher",
            "--family",
            "student-t",
            "--nu",
            "2",
            "--sigma",
            "1"
        ])
        .status
        .code(),
        Some(1)
    );
    assert_eq!(
        run(&["fisher", "--family", "cauchy", "--sigma", "1"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn plan_and_powerflow_subcommands() {
    let plan = run(&["plan"]);
    assert!(plan.status.success());
    let entries: Vec<serde_json::Value> = serde_json::from_str(&stdout(&plan)).unwrap();
    assert_eq!(entries.len(), 37);

    let pf = run(&["powerflow", "--lambda", "1.0"]);
    assert!(pf.status.success());
    let text = stdout(&pf);
    assert!(text.starts_with("iterations "));
    assert_eq!(text.lines().count(), 2 + 15);
}
