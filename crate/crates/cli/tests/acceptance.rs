//! End-to-end acceptance run against the built binary.
//!
//! Runs without the libtest harness so that each criterion prints exactly one
//! `PASS`/`FAIL` line, in order and with undisturbed wall times. Exits
//! nonzero when any criterion fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use carnot_gmt::invariants::random_rational_spec;
use carnot_gmt::tiling::{default_digits, DEFAULT_VERTICAL_STEP};
use carnot_gmt::GroupSpec;
use serde_json::Value;

struct Run {
    code: i32,
    stdout: Vec<u8>,
    env: Value,
    elapsed: Duration,
}

impl Run {
    fn passed(&self) -> bool {
        self.code == 0 && self.env["passed"] == true
    }

    fn f(&self, pointer: &str) -> f64 {
        self.env.pointer(pointer).and_then(Value::as_f64).unwrap_or(f64::NAN)
    }

    fn secs(&self) -> f64 {
        self.elapsed.as_secs_f64()
    }

    /// Value of a named entry in the group-check suite.
    fn check(&self, name: &str) -> f64 {
        self.env["report"]["checks"]
            .as_array()
            .and_then(|cs| cs.iter().find(|c| c["name"] == name))
            .and_then(|c| c["value"].as_f64())
            .unwrap_or(f64::NAN)
    }
}

fn cli(args: &[&str]) -> Run {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_carnot-gmt")).args(args).output().expect("binary runs");
    let elapsed = start.elapsed();
    Run {
        code: out.status.code().unwrap_or(-1),
        env: serde_json::from_slice(&out.stdout).unwrap_or(Value::Null),
        stdout: out.stdout,
        elapsed,
    }
}

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: String) -> Verdict {
    Verdict { ok, detail }
}

fn random_spec_file(dir: &Path) -> String {
    let spec = random_rational_spec(3, 2, 7).expect("random spec");
    let path = dir.join("random-3-2.json");
    std::fs::write(&path, serde_json::to_string_pretty(&spec.to_document()).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

/// The default digits with digit 5 overwritten by digit 2.
fn corrupted_digits_file(dir: &Path, group: &str) -> String {
    let spec = GroupSpec::named(group).unwrap();
    let mut digits = default_digits(&spec, DEFAULT_VERTICAL_STEP);
    digits[5] = digits[2].clone();
    let rows: Vec<&[f64]> = digits.iter().map(|d| d.coords()).collect();
    let path = dir.join(format!("corrupt-{}.json", group.replace(':', "-")));
    std::fs::write(&path, serde_json::to_string(&rows).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn group_axioms(dir: &Path) -> Verdict {
    let random = random_spec_file(dir);
    let mut ok = true;
    let mut parts = Vec::new();
    for (label, group) in [("heisenberg:1", "heisenberg:1"), ("random(3,2)", random.as_str())] {
        let r = cli(&["group", "check", "--group", group, "--seed", "1", "--triples", "10000"]);
        let assoc = r.check("associativity");
        let exact = ["identity", "inverse"].map(|c| r.check(c)).into_iter().fold(0.0, f64::max);
        ok &= r.passed() && assoc <= 1e-9 && exact <= 1e-9 && r.secs() < 5.0;
        parts.push(format!("{label}: assoc {assoc:.1e}, id/inv {exact:.1e}, {:.2} s", r.secs()));
    }
    verdict(ok, parts.join("; "))
}

fn homogeneity(dir: &Path) -> Verdict {
    let random = random_spec_file(dir);
    let mut ok = true;
    let mut parts = Vec::new();
    for (label, group, q) in [("heisenberg:1", "heisenberg:1", 4.0), ("random(3,2)", random.as_str(), 7.0)] {
        let r = cli(&["group", "check", "--group", group, "--seed", "2", "--triples", "10000"]);
        let exact = ["gauge_homogeneity", "dilation_homomorphism"].map(|c| r.check(c)).into_iter().fold(0.0, f64::max);
        let haar = r.f("/report/haar_exponent");
        ok &= r.passed() && exact <= 1e-12 && ((haar - q) / q).abs() <= 0.02;
        parts.push(format!("{label}: gauge/dil {exact:.1e}, Haar exponent {haar:.3} vs {q}"));
    }
    let k = cli(&["potential", "kernel-check", "--seed", "2", "--depth", "8", "--pairs", "10000"]);
    let hom = k.f("/report/smoothness/homogeneity_error");
    ok &= k.code == 0 && hom <= 1e-12;
    parts.push(format!("kernel dilation {hom:.1e}"));
    verdict(ok, parts.join("; "))
}

fn tiling_certificate(dir: &Path) -> Verdict {
    let h = cli(&["tile", "certify", "--group", "heisenberg:1", "--seed", "3", "--samples", "1000000"]);
    let e = cli(&["tile", "certify", "--group", "euclidean:3", "--seed", "3", "--samples", "1000000"]);
    let bad_h = cli(&["tile", "certify", "--group", "heisenberg:1", "--seed", "3", "--digits", &corrupted_digits_file(dir, "heisenberg:1")]);
    let bad_e = cli(&["tile", "certify", "--group", "euclidean:3", "--seed", "3", "--digits", &corrupted_digits_file(dir, "euclidean:3")]);
    let (ho, eo) = (h.f("/report/max_overlap"), e.f("/report/max_overlap"));
    let slowest = [&h, &e, &bad_h, &bad_e].iter().map(|r| r.secs()).fold(0.0, f64::max);
    let ok = h.passed() && ho < 0.01 && e.passed() && eo <= 1e-4 && bad_h.code == 1 && bad_e.code == 1 && slowest < 60.0;
    verdict(
        ok,
        format!(
            "heisenberg max overlap {ho:.4}; cube {eo:.1e}; corrupted digits exit {} / {} (overlap {:.3} / {:.3}); slowest {slowest:.1} s",
            bad_h.code,
            bad_e.code,
            bad_h.f("/report/max_overlap"),
            bad_e.f("/report/max_overlap"),
        ),
    )
}

fn bounded_overlap() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for group in ["heisenberg:1", "euclidean:3"] {
        let r = cli(&["tile", "radii", "--group", group, "--seed", "4", "--k-levels", "2..5"]);
        let ks: Vec<i64> = r.env["report"]["K"].as_array().map(|v| v.iter().filter_map(|k| k["k"].as_i64()).collect()).unwrap_or_default();
        let range = ks.iter().max().zip(ks.iter().min()).map(|(a, b)| a - b);
        ok &= r.passed() && ks.len() == 4 && range.is_some_and(|d| d <= 1);
        parts.push(format!("{group}: K by level {ks:?} ({:.0} s)", r.secs()));
    }
    verdict(ok, parts.join("; "))
}

fn dimension_estimates() -> Verdict {
    let cases: [(&str, &[&str], f64, f64); 4] = [
        ("tile", &["--set", "tile"], 4.0, 0.15),
        ("vertical", &["--set", "vertical"], 2.0, 0.15),
        ("horizontal", &["--set", "horizontal"], 1.0, 0.1),
        ("cantor 2.5", &["--set", "cantor", "--s", "2.5", "--depth", "8"], 2.5, 0.2),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (label, extra, expect, tol) in cases {
        let (e, t) = (expect.to_string(), tol.to_string());
        let mut args = vec!["measure", "dim", "--seed", "5", "--levels", "2..6", "--expect", &e, "--tol", &t];
        args.extend_from_slice(extra);
        let r = cli(&args);
        let s = r.f("/report/fit/s_hat");
        ok &= r.passed() && (s - expect).abs() <= tol && r.secs() < 60.0;
        parts.push(format!("{label} {s:.3} ({:.0} s)", r.secs()));
    }
    verdict(ok, parts.join("; "))
}

fn partition_of_unity() -> Verdict {
    let r = cli(&["hp", "verify", "--seed", "6", "--levels", "2..5", "--max-order", "2", "--samples", "10000"]);
    let sum = r.f("/report/sum_error");
    let theta = r.f("/report/theta_identity_error");
    let spread = r.env["report"]["stability"]
        .as_array()
        .map(|rows| rows.iter().filter(|s| s["alpha"] != "id").filter_map(|s| s["spread"].as_f64()).fold(0.0, f64::max))
        .unwrap_or(f64::NAN);
    let ok = r.passed() && sum < 1e-8 && theta <= 1e-12 && spread <= 3.0;
    verdict(ok, format!("sum error {sum:.1e}, telescoping {theta:.1e}, worst C_alpha spread {spread:.2}"))
}

fn cutoff_bounds() -> Verdict {
    let r = cli(&["hp", "cutoff", "--seed", "7", "--s", "2", "--ell", "2", "--p", "1", "--alpha-max", "2", "--eps-levels", "2..6"]);
    let bands = r.env["report"]["bands"].as_array().cloned().unwrap_or_default();
    let worst = bands.iter().filter_map(|b| b["band"].as_f64()).fold(0.0, f64::max);
    let ok = r.passed() && bands.len() == 7 && worst <= 5.0;
    verdict(ok, format!("{} derivatives, worst band {worst:.3}", bands.len()))
}

fn bmo_counterexample() -> Verdict {
    let bounded = cli(&["potential", "bmo", "--seed", "8", "--s", "2", "--depth", "14", "--expect", "bounded"]);
    let growing = cli(&["potential", "bmo", "--seed", "8", "--s", "1.5", "--depth", "14", "--expect", "growing"]);
    let spread = bounded.f("/report/median_oscillation/spread");
    let decades = growing.env["report"]["median_oscillation"]["decades"].as_array().map_or(0, Vec::len);
    let monotone = growing.env["report"]["median_oscillation"]["monotone_growth"] == true;
    let ok = bounded.passed() && spread <= 4.0 && growing.passed() && monotone && decades >= 3
        && bounded.secs().max(growing.secs()) < 120.0;
    verdict(
        ok,
        format!(
            "exponent 2 spread {spread:.2} ({:.0} s); exponent 1.5 spread {:.1} over {decades} decades ({:.0} s)",
            bounded.secs(),
            growing.f("/report/median_oscillation/spread"),
            growing.secs()
        ),
    )
}

fn holder_counterexample() -> Verdict {
    let bounded = cli(&["potential", "holder", "--seed", "9", "--delta", "0.5", "--s", "2.5", "--depth", "14", "--expect", "bounded"]);
    let growing = cli(&["potential", "holder", "--seed", "9", "--delta", "0.5", "--s", "2", "--depth", "14", "--expect", "growing"]);
    let spread = bounded.f("/report/ratios/spread");
    let ok = bounded.passed() && spread <= 4.0 && growing.passed() && bounded.secs().max(growing.secs()) < 120.0;
    verdict(
        ok,
        format!(
            "exponent 2.5 spread {spread:.2} ({:.0} s); exponent 2 spread {:.1} ({:.0} s)",
            bounded.secs(),
            growing.f("/report/ratios/spread"),
            growing.secs()
        ),
    )
}

fn kernel_estimates() -> Verdict {
    let r = cli(&["potential", "kernel-check", "--seed", "10", "--depth", "8", "--c", "1.5"]);
    let bound = r.f("/report/smoothness/bound_constant");
    let inv = r.f("/report/smoothness/dilation_invariance_error");
    let spread = r.f("/report/smoothness/bucket_spread");
    let slope = r.f("/report/far_field/slope");
    let expected = r.f("/report/far_field/expected");
    let ok = r.passed()
        && (bound - 1.5).abs() <= 1e-12 * 1.5
        && inv <= 1e-10
        && spread <= 3.0
        && (slope - expected).abs() <= 0.05;
    verdict(ok, format!("bound constant {bound} (c = 1.5), invariance {inv:.1e}, bucket spread {spread:.2}, far slope {slope:.3} vs {expected}"))
}

fn determinism(dir: &Path) -> Verdict {
    let commands: [&[&str]; 6] = [
        &["group", "check", "--haar-samples", "100000"],
        &["tile", "certify", "--samples", "100000", "--k-balls", "50"],
        &["measure", "cantor", "--depth", "5"],
        &["hp", "verify", "--levels", "2..3", "--samples", "2000"],
        &["potential", "bmo", "--depth", "10", "--balls", "100"],
        &["potential", "holder", "--depth", "10", "--pairs", "300"],
    ];
    let mut failures = Vec::new();
    let mut compared = 0;
    for cmd in commands {
        for workers in ["1", "2"] {
            let runs: Vec<(Run, Vec<(String, Vec<u8>)>)> = (0..2)
                .map(|i| {
                    let out = dir.join(format!("det-{}-{workers}-{i}", cmd[..2].join("-")));
                    let out_s = out.to_string_lossy().into_owned();
                    let mut args = cmd.to_vec();
                    args.extend_from_slice(&["--seed", "11", "--workers", workers, "--out", &out_s]);
                    let run = cli(&args);
                    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out)
                        .map(|d| {
                            d.flatten()
                                .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
                                .collect()
                        })
                        .unwrap_or_default();
                    files.sort();
                    (run, files)
                })
                .collect();
            compared += 1;
            let same = runs[0].0.stdout == runs[1].0.stdout && runs[0].1 == runs[1].1 && !runs[0].1.is_empty();
            if runs[0].0.code != 0 || !same {
                failures.push(format!("{} --workers {workers}", cmd[..2].join(" ")));
            }
        }
    }
    let detail = if failures.is_empty() {
        format!("{compared} command/worker pairs byte-identical across reruns, stdout and --out files")
    } else {
        format!("differing or failing: {}", failures.join(", "))
    };
    verdict(failures.is_empty(), detail)
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temp dir");
    let criteria: [(&str, Box<dyn Fn() -> Verdict>); 11] = [
        ("group axioms", Box::new(|| group_axioms(dir.path()))),
        ("homogeneity and Haar scaling", Box::new(|| homogeneity(dir.path()))),
        ("tiling certificate", Box::new(|| tiling_certificate(dir.path()))),
        ("bounded overlap", Box::new(bounded_overlap)),
        ("dimension estimates", Box::new(dimension_estimates)),
        ("partition of unity", Box::new(partition_of_unity)),
        ("cutoff L^p bounds", Box::new(cutoff_bounds)),
        ("BMO counterexample", Box::new(bmo_counterexample)),
        ("Hölder counterexample", Box::new(holder_counterexample)),
        ("kernel estimates", Box::new(kernel_estimates)),
        ("determinism", Box::new(|| determinism(dir.path()))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = check();
        let tag = if v.ok { "PASS" } else { "FAIL" };
        failed += usize::from(!v.ok);
        println!("{tag} {:>2} {name} [{:.1} s]: {}", i + 1, start.elapsed().as_secs_f64(), v.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
