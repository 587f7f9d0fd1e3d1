use std::path::PathBuf;
use std::process::{Command, Output};

use paracube::rng::SplitMix64;
use paracube::ExecConfig;
use paracube_cli::commands::{bench_invoke, BenchInvokeArgs};
use paracube_cli::timing::{read_csv, write_csv, TimingRow, CSV_HEADER, FOOTER};
use proptest::prelude::*;

fn paracube(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_paracube"))
        .args(args)
        .env_remove("PARACUBE_WORKERS")
        .output()
        .unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name)
}

#[test]
fn pagani_f5_matches_reference() {
    let out = paracube(&[
        "integrate",
        "pagani",
        "f5",
        "--dim",
        "5",
        "--rel-tol",
        "1e-3",
        "--format",
        "json",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let exact = ((1.0 - (-5.0f64).exp()) / 5.0).powi(5);
    assert!((exact - 3.0936e-4).abs() < 1e-8);
    let est = v["estimate"].as_f64().unwrap();
    assert!((est - exact).abs() <= v["errorest"].as_f64().unwrap());
    assert_eq!(v["converged"], true);
}

#[test]
fn mcubes_output_is_reproducible() {
    let args = [
        "integrate",
        "mcubes",
        "sum",
        "-d",
        "5",
        "-n",
        "100000",
        "--iterations",
        "3",
        "--seed",
        "7",
    ];
    let first = paracube(&args);
    assert_eq!(first.status.code(), Some(0));
    assert_eq!(paracube(&args).stdout, first.stdout);
    let mut more = args.to_vec();
    more.extend(["--workers", "3"]);
    assert_eq!(paracube(&more).stdout, first.stdout);
    let other = paracube(&[
        "integrate",
        "mcubes",
        "sum",
        "-d",
        "5",
        "-n",
        "100000",
        "--iterations",
        "3",
        "--seed",
        "8",
    ]);
    assert_ne!(other.stdout, first.stdout);
}

#[test]
fn unknown_integrand_is_a_usage_error() {
    let out = paracube(&["integrate", "pagani", "f9", "--dim", "3"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("f9") && err.contains("possible values"), "{err}");
    assert_eq!(
        paracube(&["integrate", "pagani", "f1", "--dim", "13"]).status.code(),
        Some(2)
    );
    assert_eq!(
        paracube(&["bench-invoke", "sum", "-d", "3", "--points", "0"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn non_convergence_exits_with_one() {
    let out = paracube(&["integrate", "pagani", "f2", "-d", "5", "--max-iterations", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("converged     false"));
}

#[test]
fn report_goes_to_out_file() {
    let path = scratch("integrate.csv");
    let out = paracube(&[
        "integrate",
        "pagani",
        "sum",
        "-d",
        "3",
        "--format",
        "csv",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("integrator,integrand,dim,estimate,errorest,reference,abs_error,converged"));
}

#[test]
fn worker_flag_overrides_environment() {
    let run = |env: Option<&str>, flag: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_paracube"));
        cmd.args([
            "bench-invoke",
            "sum",
            "-d",
            "2",
            "--points",
            "100",
            "--repetitions",
            "1",
            "--format",
            "json",
        ]);
        cmd.env_remove("PARACUBE_WORKERS");
        if let Some(e) = env {
            cmd.env("PARACUBE_WORKERS", e);
        }
        if let Some(f) = flag {
            cmd.args(["--workers", f]);
        }
        let out = cmd.output().unwrap();
        assert_eq!(out.status.code(), Some(0));
        json(&out)["workers"].as_u64().unwrap()
    };
    assert_eq!(run(Some("3"), None), 3);
    assert_eq!(run(Some("3"), Some("2")), 2);
}

#[test]
fn bench_invoke_accumulates_the_serial_sum() {
    let args = BenchInvokeArgs {
        integrand: "sum".into(),
        dim: 5,
        points: 1_000_000,
        repetitions: 10,
    };
    let r = bench_invoke(&args, ExecConfig::with_workers(2), 42).unwrap();
    assert_eq!(r.samples_ms.len(), 10);
    assert!(r.samples_ms.iter().all(|&s| s > 0.0));
    assert!(r.mean_ms > 0.0 && r.std_ms >= 0.0);

    let mut rng = SplitMix64::new(42);
    let direct: f64 = (0..5_000_000).map(|_| rng.next_f64()).sum();
    assert!((r.accumulator - direct).abs() <= 1e-9 * direct);
}

#[test]
fn compare_emits_sorted_rows_with_exact_header() {
    let path = scratch("scenarios.toml");
    std::fs::write(
        &path,
        r#"
        [[scenario]]
        id = "zeta"
        integrator = "mcubes"
        integrand = "f5"
        dim = 4
        n = 20000
        repetitions = 3

        [[scenario]]
        id = "alpha"
        integrator = "pagani"
        integrand = "f4"
        dim = 3
        g = 4
        repetitions = 3
        "#,
    )
    .unwrap();
    let out = paracube(&[
        "compare",
        "--scenarios",
        path.to_str().unwrap(),
        "--a",
        "workers=1",
        "--b",
        "workers=2,unordered",
        "--format",
        "csv",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some(CSV_HEADER));
    assert!(text.trim_end().ends_with(FOOTER));
    let rows = read_csv(text.as_bytes()).unwrap();
    let ids: Vec<&str> = rows.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["alpha", "zeta"]);
    for r in &rows {
        assert!(r.mean_a_ms > 0.0 && r.mean_b_ms > 0.0);
        assert_eq!(r.ratio, r.mean_b_ms / r.mean_a_ms);
    }
}

#[test]
fn builtin_set_has_one_row_per_family() {
    let out = paracube(&[
        "compare",
        "--builtin-8d",
        "--g",
        "1",
        "--repetitions",
        "2",
        "--format",
        "json",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let ids: Vec<&str> = v["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["id"].as_str().unwrap())
        .collect();
    assert_eq!(ids, ["f1-8d", "f2-8d", "f3-8d", "f4-8d", "f5-8d", "f6-8d"]);
    assert_eq!(v["note"], FOOTER);
}

#[test]
fn failing_scenario_is_named() {
    let path = scratch("too_big.toml");
    std::fs::write(
        &path,
        "[[scenario]]\nid = \"huge\"\nintegrator = \"pagani\"\nintegrand = \"f1\"\ndim = 12\ng = 9\nrepetitions = 1\n",
    )
    .unwrap();
    let out = paracube(&["compare", "--scenarios", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("huge"));
}

fn row() -> impl Strategy<Value = TimingRow> {
    (
        "[a-z][a-z0-9_-]{0,12}",
        1e-6f64..1e6,
        1e-6f64..1e6,
        0.0f64..1e3,
        0.0f64..1e3,
    )
        .prop_map(|(id, a, b, sa, sb)| {
            TimingRow::from_samples(id, &[a - sa.min(a / 2.0), a + sa.min(a / 2.0)], &[b, b + sb])
        })
}

proptest! {
    #[test]
    fn csv_round_trips(rows in prop::collection::vec(row(), 0..8)) {
        let mut rows = rows;
        rows.sort_by(|a, b| a.id.cmp(&b.id));
        rows.dedup_by(|a, b| a.id == b.id);
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        prop_assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
    }
}
