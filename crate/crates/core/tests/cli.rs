//! End-to-end runs of the `flowloss` binary: outputs, headers, exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use flowloss::estimator::LEARNING_CURVE_HEADER;
use flowloss::pipeline::{self, GRID_HEADER, METRICS_HEADER, PER_QUERY_HEADER, SWEEP_HEADER};

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name).to_string_lossy().into_owned()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowloss")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

/// A small labelled workload with one trained model of each loss.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn p(&self, s: &str) -> String {
        self.root.join(s).to_string_lossy().into_owned()
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let f = Fixture { root: dir.path().to_path_buf(), _dir: dir };
        ok(&["gen-db", "--spec", &data("demo_schema.json"), "--out", &f.p("db")]);
        ok(&[
            "gen-workload",
            "--db",
            &f.p("db"),
            "--template",
            &data("templates/cast.toml"),
            "--template",
            &data("templates/companies.toml"),
            "--n",
            "12",
            "--out",
            &f.p("workload"),
        ]);
        ok(&["label", "--db", &f.p("db"), "--workload", &f.p("workload"), "--out", &f.p("labels")]);
        for loss in ["qerror", "flowloss"] {
            ok(&[
                "train", "--db", &f.p("db"), "--workload", &f.p("workload"), "--labels", &f.p("labels"), "--loss", loss,
                "--epochs", "2", "--hidden", "8", "--out", &f.p(&format!("model-{loss}")),
            ]);
            ok(&[
                "eval", "--db", &f.p("db"), "--workload", &f.p("workload"), "--labels", &f.p("labels"), "--model",
                &f.p(&format!("model-{loss}")), "--out", &f.p(&format!("eval-{loss}")),
            ]);
        }
        ok(&["sweep", "--instance", &data("sensitivity_instance.json"), "--out", &f.p("sweep")]);
        ok(&[
            "sweep", "--instance", &data("sensitivity_instance.json"), "--node", "b,c", "--node-b", "a,b", "--factors",
            "0.5,1,2", "--out", &f.p("grid"),
        ]);
        f
    })
}

fn read_csv(path: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn csv_headers_are_pinned() {
    let f = fixture();
    let cases: [(&str, &[&str]); 5] = [
        ("model-flowloss/learning_curve.csv", &LEARNING_CURVE_HEADER),
        ("eval-flowloss/metrics.csv", &METRICS_HEADER),
        ("eval-flowloss/per_query.csv", &PER_QUERY_HEADER),
        ("sweep/sweep.csv", &SWEEP_HEADER),
        ("grid/sweep.csv", &GRID_HEADER),
    ];
    for (file, expected) in cases {
        let (header, rows) = read_csv(&f.p(file));
        assert_eq!(header, expected, "{file}");
        assert!(!rows.is_empty(), "{file} has no rows");
        assert!(rows.iter().all(|r| r.len() == expected.len()), "{file}");
    }
    assert_eq!(
        LEARNING_CURVE_HEADER,
        [
            "epoch",
            "split",
            "train_loss",
            "qerror_p50",
            "qerror_p90",
            "qerror_p99",
            "flow_loss_mean",
            "p_cost_mean",
            "subopt_mean"
        ]
    );
    assert_eq!(
        METRICS_HEADER,
        [
            "estimator",
            "queries",
            "subplans",
            "qerror_p50",
            "qerror_p90",
            "qerror_p99",
            "p_cost_mean",
            "p_cost_p90",
            "p_cost_p99",
            "subopt_mean",
            "subopt_p90",
            "subopt_p99",
            "flow_loss_mean"
        ]
    );
    assert_eq!(PER_QUERY_HEADER, ["estimator", "query_id", "p_cost", "optimal_cost", "subopt", "flow_loss_ratio"]);
    assert_eq!(SWEEP_HEADER, ["node", "factor", "q_error", "flow_loss", "p_cost"]);
    assert_eq!(GRID_HEADER, ["node_a", "node_b", "factor_a", "factor_b", "q_error", "flow_loss", "p_cost"]);
}

#[test]
fn metrics_doc_covers_every_column() {
    let doc = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/metrics.md")).unwrap();
    let effort_keys = ["mode", "queries", "subplans", "timeouts", "effort"];
    for col in LEARNING_CURVE_HEADER
        .iter()
        .chain(&METRICS_HEADER)
        .chain(&PER_QUERY_HEADER)
        .chain(&SWEEP_HEADER)
        .chain(&GRID_HEADER)
        .chain(&effort_keys)
    {
        assert!(doc.contains(&format!("`{col}`")), "docs/metrics.md does not document `{col}`");
    }
}

#[test]
fn true_row_scores_perfectly() {
    let f = fixture();
    let (header, rows) = read_csv(&f.p("eval-qerror/metrics.csv"));
    let names: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["model_qerror", "true", "heuristic"]);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let truth = &rows[1];
    for c in ["qerror_p50", "qerror_p90", "qerror_p99", "subopt_mean", "subopt_p90", "subopt_p99"] {
        assert_eq!(truth[col(c)].parse::<f64>().unwrap(), 1.0, "{c}");
    }
    let (_, per_query) = read_csv(&f.p("eval-qerror/per_query.csv"));
    let queries: usize = truth[col("queries")].parse().unwrap();
    assert_eq!(per_query.len(), 3 * queries);
    for r in per_query.iter().filter(|r| r[0] == "true") {
        assert_eq!(r[2], r[3], "true p_cost equals optimal cost");
        assert_eq!(r[4].parse::<f64>().unwrap(), 1.0);
    }
}

#[test]
fn learning_curve_has_every_epoch_and_split() {
    let f = fixture();
    let (_, rows) = read_csv(&f.p("model-qerror/learning_curve.csv"));
    let keys: Vec<(String, String)> = rows.iter().map(|r| (r[0].clone(), r[1].clone())).collect();
    for epoch in ["1", "2"] {
        for split in ["train", "val", "test"] {
            assert!(keys.contains(&(epoch.into(), split.into())), "missing {epoch}/{split}");
        }
    }
}

#[test]
fn manifests_hash_every_output() {
    let f = fixture();
    for dir in ["db", "workload", "labels", "model-flowloss", "eval-flowloss", "sweep"] {
        let m = pipeline::RunManifest::load(&f.root.join(dir)).unwrap();
        assert!(!m.outputs.is_empty(), "{dir}");
        for o in &m.outputs {
            let path = f.root.join(dir).join(&o.path);
            assert_eq!(pipeline::sha256_file(&path).unwrap(), o.sha256, "{}", path.display());
        }
    }
    let effort: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(f.root.join("labels/effort.json")).unwrap()).unwrap();
    for key in ["mode", "queries", "subplans", "timeouts", "effort"] {
        assert!(effort.get(key).is_some(), "effort.json lacks {key}");
    }
}

#[test]
fn query_sweep_reads_labels() {
    let f = fixture();
    let w = flowloss::workload::Workload::load(&f.root.join("workload/workload.json")).unwrap();
    let q = &w.queries[0];
    let alias = q.join_graph.aliases()[0].name.clone();
    let out = f.p("query-sweep");
    ok(&[
        "sweep", "--workload", &f.p("workload"), "--labels", &f.p("labels"), "--query", &q.id, "--node", &alias, "--out", &out,
    ]);
    let (_, rows) = read_csv(&format!("{out}/sweep.csv"));
    assert_eq!(rows.len(), 7);
    let identity = rows.iter().find(|r| r[1] == "1").unwrap();
    assert_eq!(identity[2], "1");
}

fn exit_code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();

    // missing input file
    assert_eq!(exit_code(&["gen-db", "--spec", &p("missing.json"), "--out", &p("x")]), 1);

    // malformed config
    fs::write(p("bad.json"), "{ not json").unwrap();
    assert_eq!(exit_code(&["gen-db", "--spec", &p("bad.json"), "--out", &p("x")]), 2);
    assert_eq!(exit_code(&["sweep", "--instance", &data("sensitivity_instance.json"), "--node", "a,c", "--out", &p("x")]), 2);
    assert_eq!(exit_code(&["sweep", "--instance", &data("sensitivity_instance.json"), "--lambda", "-1", "--out", &p("x")]), 2);

    // row budget
    let big = fs::read_to_string(data("demo_schema.json")).unwrap().replacen("\"rows\": 3000", "\"rows\": 5000000", 1);
    assert_ne!(big, fs::read_to_string(data("demo_schema.json")).unwrap());
    fs::write(p("big.json"), big).unwrap();
    assert_eq!(exit_code(&["gen-db", "--spec", &p("big.json"), "--out", &p("x")]), 4);

    // divergence
    let f = fixture();
    let out = run(&[
        "train", "--db", &f.p("db"), "--workload", &f.p("workload"), "--labels", &f.p("labels"), "--loss", "qerror",
        "--epochs", "3", "--lr", "1e300", "--init-scale", "1e150", "--out", &p("diverged"),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
}

#[test]
fn output_dir_is_printed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let o = run(&["sweep", "--instance", &data("sensitivity_instance.json"), "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), out.to_str().unwrap());
}
