use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_carnot-gmt")).args(args).output().expect("binary runs")
}

fn envelope(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is a JSON envelope")
}

fn path(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn group_check_passes_and_fills_the_envelope() {
    let out = cli(&["group", "check", "--seed", "1", "--triples", "2000", "--haar-samples", "100000"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let env = envelope(&out);
    assert_eq!(env["command"], "group check");
    assert_eq!(env["seed"], 1);
    assert_eq!(env["passed"], true);
    assert_eq!(env["config"]["group"]["label"], "heisenberg:1");
    assert_eq!(env["config"]["params"]["triples"], 2000);
    assert_eq!(env["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(env["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(cli(&["group", "check"]).status.code(), Some(2), "missing --seed");
    assert_eq!(cli(&["group", "check", "--seed", "1", "--group", "sphere:2"]).status.code(), Some(2));
    assert_eq!(cli(&["group", "check", "--seed", "1", "--workers", "0"]).status.code(), Some(2));
    assert_eq!(cli(&["measure", "dim", "--seed", "1", "--levels", "5..2"]).status.code(), Some(2));
    assert_eq!(cli(&["tile", "render", "--seed", "1"]).status.code(), Some(2), "render needs --out");
    assert_eq!(cli(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn non_antisymmetric_spec_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.json");
    // B(e_0, e_1) = B(e_1, e_0) = e_2.
    std::fs::write(&spec, r#"{"layer_dims": [2, 1], "structure_constants": [[0, 0, 1, 1.0], [0, 1, 0, 1.0]]}"#).unwrap();
    let out = cli(&["group", "check", "--seed", "1", "--group", &path(&spec)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("antisymmetric"));
}

#[test]
fn spec_files_round_trip_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let spec = carnot_gmt::GroupSpec::heisenberg(1).unwrap();
    let file = dir.path().join("h1.json");
    std::fs::write(&file, serde_json::to_string(&spec.to_document()).unwrap()).unwrap();
    let out = cli(&["group", "check", "--seed", "1", "--group", &path(&file), "--triples", "500", "--haar-samples", "50000"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(envelope(&out)["report"]["homogeneous_dim"], 4);
}

#[test]
fn duplicated_digits_fail_certification_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let digits = dir.path().join("digits.json");
    let mut rows: Vec<[f64; 3]> = Vec::new();
    for i in 0..8 {
        rows.push([0.5 * (i & 1) as f64, 0.5 * ((i >> 1) & 1) as f64, 0.5 * ((i >> 2) & 1) as f64]);
    }
    rows[5] = rows[2];
    std::fs::write(&digits, serde_json::to_string(&rows).unwrap()).unwrap();
    let out = cli(&[
        "tile", "certify", "--group", "euclidean:3", "--seed", "1", "--samples", "200000", "--k-balls", "0", "--digits",
        &path(&digits),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let env = envelope(&out);
    assert_eq!(env["passed"], false);
    assert!(env["report"]["digit_validation"].as_str().unwrap().contains("coincide"));
    assert!(env["report"]["max_overlap"].as_f64().unwrap() > 0.05);
}

#[test]
fn cube_render_writes_every_level_two_tile() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["tile", "render", "--group", "euclidean:3", "--seed", "1", "--level", "2", "--out", &path(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    let env = envelope(&out);
    assert_eq!(env["report"]["tiles"], 64);
    let csv = std::fs::read_to_string(dir.path().join("tiles-level2.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 64 * 4);
    let report = std::fs::read(dir.path().join("tile-render.json")).unwrap();
    assert_eq!(report, out.stdout);
}

#[test]
fn high_order_cutoff_derivatives_warn() {
    let out = cli(&["hp", "cutoff", "--seed", "1", "--depth", "5", "--alpha-max", "3", "--eps-levels", "2..3", "--quad", "1000"]);
    assert_ne!(out.status.code(), Some(2));
    let warnings = envelope(&out)["warnings"].clone();
    assert!(warnings.as_array().unwrap().iter().any(|w| w.as_str().unwrap().contains("order")), "{warnings}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning:"));
}

#[test]
fn reruns_are_byte_identical_and_seeds_change_the_hash() {
    let args = |seed: &'static str, workers: &'static str| {
        vec!["hp", "verify", "--levels", "2..3", "--samples", "1000", "--seed", seed, "--workers", workers]
    };
    let a = cli(&args("5", "2"));
    let b = cli(&args("5", "2"));
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let c = cli(&args("6", "2"));
    assert_ne!(envelope(&a)["config_hash"], envelope(&c)["config_hash"]);
}

#[test]
fn expectations_decide_the_exit_code() {
    let base = ["measure", "dim", "--set", "horizontal", "--seed", "1", "--levels", "2..4", "--points", "4096"];
    let ok = cli(&[&base[..], &["--expect", "1"]].concat());
    assert_eq!(ok.status.code(), Some(0));
    let wrong = cli(&[&base[..], &["--expect", "2"]].concat());
    assert_eq!(wrong.status.code(), Some(1));
    assert_eq!(envelope(&wrong)["passed"], false);
}

#[test]
fn single_atom_potential_is_not_square_integrable() {
    let out = cli(&["potential", "lp", "--seed", "1", "--source", "atom", "--p", "2.5", "--expect", "diverges"]);
    assert_eq!(out.status.code(), Some(0));
    let out = cli(&["potential", "lp", "--seed", "1", "--source", "atom", "--p", "1.5", "--expect", "converges"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn evaluation_reads_exported_cantor_atoms() {
    let dir = tempfile::tempdir().unwrap();
    let d = path(dir.path());
    assert_eq!(cli(&["measure", "cantor", "--seed", "1", "--depth", "4", "--out", &d]).status.code(), Some(0));
    let points = path(&dir.path().join("cantor-s2-depth4.csv"));
    let out = cli(&["potential", "eval", "--seed", "1", "--depth", "6", "--points", &points, "--out", &d]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(envelope(&out)["report"]["points"], 256);
    let values = std::fs::read_to_string(dir.path().join("potential-values.csv")).unwrap();
    assert_eq!(values.lines().next(), Some("x1,x2,x3,value"));
    assert_eq!(values.lines().count(), 257);
}
