use std::process::{Command, Output};

use otthom::graph::EmbeddedGraph;

fn otthom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_otthom")).args(args).env_remove("OTTHOM_SEED").output().unwrap()
}

fn without_stamp(s: &str) -> String {
    s.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n")
}

#[test]
fn gen_graph_writes_lattice() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.json");
    let spec = r#"{"kind":"latticeNN","n":2,"lower":[0,0],"upper":[4,4]}"#;
    let o = otthom(&["gen-graph", "--spec", spec, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(EmbeddedGraph::load(&out).unwrap().num_vertices(), 25);
}

#[test]
fn gen_graph_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let spec = r#"{"kind":"randomConductance","n":2,"lower":[0,0],"upper":[6,6],"lambda":1,"Lambda":4}"#;
    let paths: Vec<_> = (0..2).map(|i| dir.path().join(format!("g{i}.json"))).collect();
    for p in &paths {
        assert!(otthom(&["gen-graph", "--spec", spec, "--seed", "7", "--out", p.to_str().unwrap()]).status.success());
    }
    assert_eq!(std::fs::read(&paths[0]).unwrap(), std::fs::read(&paths[1]).unwrap());
    let other = dir.path().join("g2.json");
    let o = Command::new(env!("CARGO_BIN_EXE_otthom"))
        .args(["gen-graph", "--spec", spec, "--out", other.to_str().unwrap()])
        .env("OTTHOM_SEED", "7")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(std::fs::read(&paths[0]).unwrap(), std::fs::read(&other).unwrap());
}

#[test]
fn invalid_voronoi_shift_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.json");
    let spec = r#"{"kind":"perturbedVoronoi","lower":[0,0],"upper":[4,4],"shiftBound":0.6}"#;
    let o = otthom(&["gen-graph", "--spec", spec, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"name":"zn-exact","epsList":"oops"}"#).unwrap();
    assert_eq!(otthom(&["experiment", "zn-exact", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(otthom(&["experiment", "no-such-experiment"]).status.code(), Some(2));
    assert_eq!(otthom(&["no-such-command"]).status.code(), Some(2));
    std::fs::write(&cfg, r#"{"name":"convexity"}"#).unwrap();
    assert_eq!(otthom(&["experiment", "zn-exact", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn zn_exact_passes_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<_> = (0..2).map(|i| dir.path().join(format!("zn{i}.csv"))).collect();
    for p in &paths {
        let o = otthom(&["--threads", "2", "experiment", "zn-exact", "--output", p.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read_to_string(&paths[0]).unwrap();
    let b = std::fs::read_to_string(&paths[1]).unwrap();
    assert!(a.starts_with("# otthom experiment zn-exact"));
    assert_eq!(without_stamp(&a), without_stamp(&b));
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(a.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    let idx = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert_eq!(r[idx("config_hash")].len(), 64);
        assert_eq!(&r[idx("seed")], "0");
        assert!(r[idx("rel_err")].parse::<f64>().unwrap() <= 1e-3);
    }
}

#[test]
fn scaling_law_reports_to_stdout() {
    let o = otthom(&["experiment", "scaling-law"]);
    assert_eq!(o.status.code(), Some(0));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.lines().nth(1).unwrap().starts_with("config_hash,seed,tol,clique_size,length,F,G,G_over_F"));
    assert!(String::from_utf8(o.stderr).unwrap().contains("PASS"));
}

#[test]
fn failing_assertion_exits_1() {
    // reversed sizes ask for the spread to grow with the box
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"name":"ergodic-variance","sizes":[8,4]}"#).unwrap();
    let o = otthom(&["experiment", "ergodic-variance", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8(o.stderr).unwrap().contains("FAIL"));
}

#[test]
fn cell_and_geodesic_commands() {
    let fam = r#"{"kind":"latticeNN","n":2,"lower":[0,0],"upper":[1,1]}"#;
    let o = otthom(&["cell", "--family", fam, "--v", "1,1", "--eps", "0.25"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["value"].as_f64().unwrap() - 2.0).abs() < 1e-6);

    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.json");
    let spec = r#"{"kind":"latticeNN","n":1,"lower":[0],"upper":[4]}"#;
    assert!(otthom(&["gen-graph", "--spec", spec, "--out", g.to_str().unwrap()]).status.success());
    let (m0, m1) = (dir.path().join("m0.json"), dir.path().join("m1.json"));
    std::fs::write(&m0, "[0.5,0.5,0,0,0]").unwrap();
    std::fs::write(&m1, "[0,0,0,0.5,0.5]").unwrap();
    let curve = dir.path().join("curve.json");
    let o = otthom(&[
        "geodesic", "--graph", g.to_str().unwrap(), "--m0", m0.to_str().unwrap(), "--m1", m1.to_str().unwrap(),
        "--steps", "4", "--out", curve.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(rep["report"]["action"].as_f64().unwrap() > 0.0);
    assert!(curve.exists());
}

#[test]
fn validate_reports_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.json");
    let spec = r#"{"kind":"latticeNN","n":2,"lower":[0,0],"upper":[4,4]}"#;
    assert!(otthom(&["gen-graph", "--spec", spec, "--out", g.to_str().unwrap()]).status.success());
    let o = otthom(&["validate", "--graph", g.to_str().unwrap(), "--box", "0.5,0.5,3.5,3.5"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
}
