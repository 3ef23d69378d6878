//! End-to-end tests of the `multinet` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn multinet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multinet"))
        .current_dir(dir)
        .env_remove("MULTINET_OUT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

const HIER: &str = "prefix:1,3";

fn make_store(dir: &Path) {
    let out = multinet(
        dir,
        &[
            "synth",
            "--countries",
            "30",
            "--activities",
            "20,20,20",
            "--planted",
            "20",
            "--lag",
            "3",
            "--noise",
            "0.05",
            "--seed",
            "20260810",
            "--out",
            "store",
        ],
    );
    assert_ok(&out);
}

#[test]
fn subcommands_chain_into_a_validated_graph() {
    let dir = tempfile::tempdir().unwrap();
    make_store(dir.path());
    assert!(dir.path().join("store/planted_pairs.csv").is_file());

    let out = multinet(
        dir.path(),
        &[
            "binarize",
            "--layer",
            "science",
            "--year",
            "2002",
            "--pool",
            "3",
            "--pooling",
            "stack",
            "--level",
            "1",
            "--store",
            "store",
            "--hierarchy",
            HIER,
            "--out",
            "science.bin.csv",
        ],
    );
    assert_ok(&out);
    let text = fs::read_to_string(dir.path().join("science.bin.csv")).unwrap();
    assert!(text.starts_with("country,code,year,value\n"));

    let out = multinet(
        dir.path(),
        &[
            "assist",
            "--from",
            "science:2002:1",
            "--to",
            "technology:2005:1",
            "--pool",
            "3",
            "--pooling",
            "stack",
            "--store",
            "store",
            "--hierarchy",
            HIER,
            "--out",
            "assist.csv",
        ],
    );
    assert_ok(&out);
    let text = fs::read_to_string(dir.path().join("assist.csv")).unwrap();
    assert!(text.starts_with("source_code,target_code,value\n"));
    assert_eq!(text.lines().count(), 1 + 20 * 20);

    let out = multinet(
        dir.path(),
        &[
            "validate",
            "--from",
            "science:2002:1",
            "--to",
            "technology:2005:1",
            "--pool",
            "3",
            "--pooling",
            "stack",
            "--ensemble",
            "500",
            "--threshold",
            "0.99",
            "--seed",
            "42",
            "--store",
            "store",
            "--hierarchy",
            HIER,
            "--out",
            "edges.csv",
        ],
    );
    assert_ok(&out);
    let text = fs::read_to_string(dir.path().join("edges.csv")).unwrap();
    assert!(text.starts_with("source_layer,source_code,target_layer,target_code,B,p,significant\n"));
    let significant = text.lines().filter(|l| l.ends_with(",true")).count();
    assert!(
        significant >= 16,
        "expected most planted links, got {significant}"
    );

    for (format, needle) in [
        ("graphml", "<graphml"),
        ("dot", "digraph validated"),
        ("csv", "source_layer,"),
    ] {
        let out_name = format!("graph.{format}");
        let out = multinet(
            dir.path(),
            &[
                "export",
                "--input",
                "edges.csv",
                "--format",
                format,
                "--out",
                &out_name,
            ],
        );
        assert_ok(&out);
        let text = fs::read_to_string(dir.path().join(&out_name)).unwrap();
        assert!(text.contains(needle));
    }
}

#[test]
fn signal_curve_writes_expected_columns() {
    let dir = tempfile::tempdir().unwrap();
    make_store(dir.path());
    let out = multinet(
        dir.path(),
        &[
            "signal",
            "--from",
            "science:1",
            "--to",
            "technology:1",
            "--lags",
            "2..4",
            "--pool",
            "3",
            "--pooling",
            "stack",
            "--threshold",
            "0.99",
            "--ensemble",
            "200",
            "--seed",
            "7",
            "--store",
            "store",
            "--hierarchy",
            HIER,
            "--out",
            "curve.csv",
        ],
    );
    assert_ok(&out);
    let text = fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "dy,phi_mean,phi_sigma,n_pairs,n_links_mean"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    let phi_of = |lag: &str| -> f64 {
        rows.iter()
            .find(|r| r[0] == lag)
            .map(|r| r[1].parse().unwrap())
            .unwrap()
    };
    assert!(phi_of("3") > phi_of("2"));
    assert!(phi_of("3") > phi_of("4"));
}

#[test]
fn ingest_builds_a_readable_store() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("raw.csv"),
        "country,code,year,value\nusa,a,2000,3\nita,a,2000,1\nusa,b,2001,2\n",
    )
    .unwrap();
    let out = multinet(
        dir.path(),
        &[
            "ingest", "--layer", "trade", "--input", "raw.csv", "--out", "store",
        ],
    );
    assert_ok(&out);
    assert!(dir.path().join("store/trade/2000.csv").is_file());
    assert!(dir.path().join("store/trade/2001.csv").is_file());
    // the store files are themselves valid ingest inputs (round trip)
    let text = fs::read_to_string(dir.path().join("store/trade/2000.csv")).unwrap();
    assert_eq!(
        text,
        "country,code,year,value\nita,a,2000,1\nusa,a,2000,3\n"
    );
}

#[test]
fn errors_are_machine_readable_json_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    make_store(dir.path());

    // unknown export format
    fs::write(
        dir.path().join("edges.csv"),
        "source_layer,source_code,target_layer,target_code,B,p,significant\n",
    )
    .unwrap();
    let out = multinet(
        dir.path(),
        &[
            "export",
            "--input",
            "edges.csv",
            "--format",
            "gexf",
            "--out",
            "x",
        ],
    );
    assert!(!out.status.success());
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(err["kind"], "unknown_format");
    assert!(err["error"].as_str().unwrap().contains("csv|graphml|dot"));

    // unresolvable threshold: 0.999 needs at least 999 samples
    let out = multinet(
        dir.path(),
        &[
            "validate",
            "--from",
            "science:2002:1",
            "--to",
            "technology:2005:1",
            "--pool",
            "3",
            "--pooling",
            "stack",
            "--ensemble",
            "100",
            "--threshold",
            "0.999",
            "--seed",
            "1",
            "--store",
            "store",
            "--hierarchy",
            HIER,
            "--out",
            "e.csv",
        ],
    );
    assert!(!out.status.success());
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(err["kind"], "ensemble_too_small");
    assert!(err["error"].as_str().unwrap().contains("999"));

    // missing store years
    let out = multinet(
        dir.path(),
        &[
            "assist",
            "--from",
            "science:2050:1",
            "--to",
            "technology:2051:1",
            "--store",
            "store",
            "--hierarchy",
            HIER,
            "--out",
            "a.csv",
        ],
    );
    assert!(!out.status.success());
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(err["kind"], "missing_windows");
    assert!(err["error"].as_str().unwrap().contains("science/2050"));
}

#[test]
fn output_dir_env_var_anchors_relative_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("elsewhere");
    make_store(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_multinet"))
        .current_dir(dir.path())
        .env("MULTINET_OUT_DIR", &out_dir)
        .args([
            "binarize",
            "--layer",
            "science",
            "--year",
            "2003",
            "--level",
            "1",
            "--store",
            "store",
            "--hierarchy",
            HIER,
            "--out",
            "bin.csv",
        ])
        .output()
        .unwrap();
    assert_ok(&out);
    assert!(out_dir.join("bin.csv").is_file());
    assert!(!dir.path().join("bin.csv").exists());
}

#[test]
fn run_reruns_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("pipeline.toml"),
        r#"
seed = 99
output_dir = "out"
store = "store"

[[layers]]
name = "science"
hierarchy = { prefix_lengths = [1, 3] }

[[layers]]
name = "technology"
hierarchy = { prefix_lengths = [1, 3] }

[[tasks]]
kind = "synth"
countries = 20
activities = "10,10,10"
planted = 10
lag = 2
noise = 0.05
years = "2000..2005"

[[tasks]]
kind = "validate"
from = "science:2000:1"
to = "technology:2002:1"
pool = 2
pooling = "stack"
ensemble = 200
threshold = 0.95
out = "edges.csv"
"#,
    )
    .unwrap();
    let out = multinet(dir.path(), &["run", "--config", "pipeline.toml"]);
    assert_ok(&out);
    let first = fs::read(dir.path().join("out/manifest.json")).unwrap();
    let out = multinet(dir.path(), &["run", "--config", "pipeline.toml"]);
    assert_ok(&out);
    let second = fs::read(dir.path().join("out/manifest.json")).unwrap();
    assert_eq!(first, second);
    let manifest: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(manifest["seed"], 99);
    assert!(manifest["config"].as_str().unwrap().contains("[[tasks]]"));
}
