use std::path::Path;
use std::process::{Command, Output};

fn dgdlocal(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dgdlocal"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn dgdlocal")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn write_cfg(dir: &Path, extra: &str) -> String {
    let path = dir.join("small.cfg");
    std::fs::write(
        &path,
        format!("n = 4\nm = 6\nr = 1\nJ = 3\ntopology = ring\nlazy = true\nseed = 2\nmax_iters = 2000\noutput_dir = out\n{extra}"),
    )
    .unwrap();
    path.display().to_string()
}

#[test]
fn equiv_reports_tiny_deviation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "");
    let out = dgdlocal(&["equiv", &cfg, "--iters", "50"], dir.path());
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["iters"], 50);
    assert!(v["max_rel_deviation"].as_f64().unwrap() <= 1e-12);
}

#[test]
fn run_writes_outputs_and_signals_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "trace_stride = 10\n");
    let out = dgdlocal(&["run", &cfg], dir.path());
    // 2000 iterations at the safe stepsize do not reach the gradient tolerance
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["status"], "MaxIters");
    let csv = std::fs::read_to_string(dir.path().join("out/trace.csv")).unwrap();
    assert!(csv.starts_with("iter,f_central,g_value,grad_norm,consensus_err,opt_gap,z_norm,in_ball\n"));
    assert_eq!(csv.lines().count(), 1 + 201);

    let out = dgdlocal(&["run", &cfg, "--out", "elsewhere"], dir.path());
    assert!(dir.path().join("elsewhere/summary.json").exists());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gen_and_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "");
    let out = dgdlocal(&["gen", &cfg], dir.path());
    assert!(out.status.success());
    for f in ["y.txt", "y_1.txt", "y_3.txt", "partition.txt", "graph.txt", "mixing.txt"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
    let v = json(&dgdlocal(&["bounds", &cfg], dir.path()));
    assert_eq!(v["l2"].as_array().unwrap().len(), 3);
    assert!(v["omega"].as_f64().unwrap() < 0.5);
    assert!(v["mu"].as_f64().unwrap() > 0.0);
}

#[test]
fn mc_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "");
    let out = dgdlocal(&["mc", &cfg, "--trials", "3"], dir.path());
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/mc.json")).unwrap()).unwrap();
    assert_eq!(v["trials"], 3);
    assert_eq!(v["results"].as_array().unwrap().len(), 3);
}

#[test]
fn classify_origin_is_saddle() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("u.txt"), "2 1\n0\n0\n").unwrap();
    std::fs::write(dir.path().join("v.txt"), "2 1\n0\n0\n").unwrap();
    std::fs::write(dir.path().join("y.txt"), "2 2\n3 0\n0 1\n").unwrap();
    let out = dgdlocal(&["classify", "--u", "u.txt", "--v", "v.txt", "--y", "y.txt"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["kind"], "StrictSaddle");
    assert!(v["min_quadform"].as_f64().unwrap() < 0.0);

    std::fs::write(dir.path().join("u.txt"), "2 1\n1.7320508075688772\n0\n").unwrap();
    std::fs::write(dir.path().join("v.txt"), "2 1\n1.7320508075688772\n0\n").unwrap();
    assert_eq!(json(&dgdlocal(&["classify", "--u", "u.txt", "--v", "v.txt", "--y", "y.txt"], dir.path()))["kind"], "GlobalMin");
}

#[test]
fn errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dgdlocal(&["run", "missing.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    // no lazy fix: the three-node ring has omega >= 1/2
    std::fs::write(dir.path().join("eager.cfg"), "n = 4\nm = 6\nr = 1\nJ = 3\n").unwrap();
    let out = dgdlocal(&["run", "eager.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lazy_fix"));
}
