use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qpkam"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn scratch(name: &str) -> PathBuf {
    let p = std::env::temp_dir().join(format!("qpkam-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&p);
    p
}

fn run(args: &[&str], cfg: &Path, out: &Path) -> i32 {
    let o = bin().args(args).arg("--config").arg(cfg).arg("--out").arg(out).output().unwrap();
    o.status.code().unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let p = dir.join("cfg.toml");
    std::fs::write(&p, body).unwrap();
    p
}

fn csv_body(p: &Path) -> (String, Vec<Vec<String>>) {
    let s = std::fs::read_to_string(p).unwrap();
    let mut lines = s.lines();
    let hash = lines.next().unwrap().strip_prefix("# manifest_sha256=").unwrap().to_string();
    let _header = lines.next().unwrap();
    (hash, lines.map(|l| l.split(',').map(String::from).collect()).collect())
}

#[test]
fn verify_on_the_airy_config_passes() {
    let out = scratch("verify");
    assert_eq!(run(&["verify"], &config("airy_verify.toml"), &out), 0);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("verify_report.json")).unwrap()).unwrap();
    assert_eq!(report["result"]["passed"], true);
}

#[test]
fn kam_config_yields_a_decreasing_series() {
    let out = scratch("kam");
    assert_eq!(run(&["kam"], &config("kam_eps1e-4.toml"), &out), 0);
    let (hash, rows) = csv_body(&out.join("kam_decay.csv"));
    assert!(rows.len() >= 3);
    let norms: Vec<f64> = rows.iter().map(|r| r[4].parse().unwrap()).collect();
    assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("kam_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["manifest_sha256"], hash.as_str());
    let family: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("kam_family.json")).unwrap()).unwrap();
    assert_eq!(family["manifest_sha256"], hash.as_str());
    assert_eq!(family["result"]["surviving"][0], true);
}

#[test]
fn reruns_are_byte_identical() {
    for (cmd, cfg, files) in [
        ("kam", "kam_eps1e-4.toml", vec!["kam_decay.csv", "kam_family.json", "kam_manifest.json"]),
        ("measure", "measure_sweep.toml", vec!["measure_sweep.csv", "measure_hits.json"]),
        ("nashmoser", "nm_semilinear.toml", vec!["nm_residuals.csv", "nm_tori.json"]),
    ] {
        let a = scratch(&format!("det-a-{cmd}"));
        let b = scratch(&format!("det-b-{cmd}"));
        assert_eq!(run(&[cmd, "--threads", "1"], &config(cfg), &a), 0);
        assert_eq!(run(&[cmd, "--threads", "2"], &config(cfg), &b), 0);
        for f in files {
            assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{cmd}: {f}");
        }
    }
}

#[test]
fn the_seed_enters_the_manifest_hash() {
    let a = scratch("seed-a");
    let b = scratch("seed-b");
    assert_eq!(run(&["measure"], &config("measure_sweep.toml"), &a), 0);
    assert_eq!(run(&["measure", "--seed", "12"], &config("measure_sweep.toml"), &b), 0);
    let (ha, _) = csv_body(&a.join("measure_sweep.csv"));
    let (hb, _) = csv_body(&b.join("measure_sweep.csv"));
    assert_ne!(ha, hb);
}

#[test]
fn reduce_writes_every_stage() {
    let out = scratch("reduce");
    assert_eq!(run(&["reduce"], &config("reduce_toy.toml"), &out), 0);
    let (_, rows) = csv_body(&out.join("reduce_stages.csv"));
    let stages: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(stages, ["0", "1", "2", "3", "4"]);
    let a3_osc: f64 = rows[4][3].parse().unwrap();
    assert!(a3_osc < 1e-10);
}

#[test]
fn config_errors_exit_with_2() {
    let dir = scratch("cfg");
    let good = std::fs::read_to_string(config("reduce_toy.toml")).unwrap();
    let unknown = write_config(&dir.join("u"), &good.replace("eps = 1e-3", "eps = 1e-3\nepsilon = 2.0"));
    assert_eq!(run(&["reduce"], &unknown, &dir.join("o1")), 2);
    let grammar = write_config(&dir.join("g"), &good.replace("z1^2", "exp(z1)"));
    assert_eq!(run(&["reduce"], &grammar, &dir.join("o2")), 2);
    assert_eq!(run(&["reduce"], &dir.join("missing.toml"), &dir.join("o3")), 2);
    let o = bin().args(["frobnicate", "--config"]).arg(config("reduce_toy.toml")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn computational_aborts_exit_with_3() {
    let dir = scratch("abort");
    let good = std::fs::read_to_string(config("reduce_toy.toml")).unwrap();
    let big = write_config(&dir, &good.replace("eps = 1e-3", "eps = 2.0"));
    let o = bin().arg("reduce").arg("--config").arg(&big).arg("--out").arg(dir.join("o")).output().unwrap();
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("reduction-pipeline"), "{err}");
}

#[test]
fn failed_invariants_exit_with_4() {
    let dir = scratch("strict");
    let good = std::fs::read_to_string(config("reduce_toy.toml")).unwrap();
    let strict = write_config(&dir, &format!("{good}\n[tolerances]\nreduction = 1e-30\n"));
    assert_eq!(run(&["verify"], &strict, &dir.join("o")), 4);
}
