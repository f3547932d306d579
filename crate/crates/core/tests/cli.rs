mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::Stub;
use vlnmem::eval::{aggregate, from_csv, GroupBy, IsrMode};
use vlnmem::runner::EpisodeResult;
use vlnmem::sum::{sha256_hex, MemoryBank, MemoryMeta, Reconstruction};

const SMALL_CAMERA: &str = r#"{"runner": {"camera": {"width": 24, "height": 14}}}"#;

struct Workspace {
    _tmp: tempfile::TempDir,
    out: PathBuf,
    config: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        Self::with_config(SMALL_CAMERA)
    }

    fn with_config(config: &str) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("out");
        let path = tmp.path().join("config.json");
        fs::write(&path, config).unwrap();
        Self { _tmp: tmp, out, config: path }
    }

    fn cmd(&self, args: &[&str]) -> Command {
        let mut c = Command::new(env!("CARGO_BIN_EXE_vlnmem"));
        c.arg("--config").arg(&self.config).arg("--out").arg(&self.out).args(args);
        c.env_remove("VLNMEM_POLICY_ENDPOINT").env_remove("VLNMEM_RECON_ENDPOINT").env_remove("RUST_LOG");
        c
    }

    fn run(&self, args: &[&str]) -> Output {
        self.cmd(args).output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let o = self.run(args);
        assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    }

    fn results(&self, run: &str) -> Vec<EpisodeResult> {
        let dir = self.out.join("runs").join(run).join("results");
        let mut paths: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        paths.sort();
        paths.iter().map(|p| serde_json::from_slice(&fs::read(p).unwrap()).unwrap()).collect()
    }
}

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn gen_counts_and_determinism() {
    let a = Workspace::new();
    let b = Workspace::new();
    for w in [&a, &b] {
        w.ok(&["gen", "--seed", "1", "--classes", "farm,forest", "--per-class", "10"]);
    }
    let worlds = files_in(&a.out.join("worlds"));
    assert_eq!(worlds.iter().map(|f| f.0.as_str()).collect::<Vec<_>>(), ["farm-s1.json", "forest-s1.json"]);
    let episodes = files_in(&a.out.join("episodes"));
    let lines: usize = episodes.iter().map(|f| f.1.iter().filter(|&&c| c == b'\n').count()).sum();
    assert_eq!(lines, 20);
    assert_eq!(worlds, files_in(&b.out.join("worlds")));
    assert_eq!(episodes, files_in(&b.out.join("episodes")));
}

#[test]
fn usage_errors_exit_1() {
    let w = Workspace::new();
    let o = w.run(&["gen", "--classes", "farm,moon"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("moon"));
    assert_eq!(w.run(&["teleport"]).status.code(), Some(1));
    assert_eq!(w.run(&["--help"]).status.code(), Some(0));

    let bad = Workspace::with_config(r#"{"sead": 3}"#);
    assert_eq!(bad.run(&["gen"]).status.code(), Some(1));

    w.ok(&["gen", "--classes", "farm", "--per-class", "1"]);
    let o = w.run(&["run", "--policy", "remote"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("VLNMEM_POLICY_ENDPOINT"));
    assert_eq!(w.run(&["build-memory", "--backend", "external"]).status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_2() {
    let w = Workspace::new();
    assert_eq!(w.run(&["run"]).status.code(), Some(2), "missing episode files");
    w.ok(&["gen", "--classes", "farm", "--per-class", "1"]);
    let o = w.run(&["inspect-memory", "--key", "farm-s0-nope"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown memory key"));
}

#[test]
fn oracle_run_succeeds_everywhere_and_eval_reports() {
    let w = Workspace::new();
    w.ok(&["gen", "--seed", "4", "--classes", "farm,mountain,village", "--per-class", "4"]);
    w.ok(&["run", "--policy", "scripted-oracle", "--memory", "none", "--parallel", "2"]);
    let results = w.results("scripted-oracle-none");
    assert_eq!(results.len(), 12);
    assert!(results.iter().all(|r| r.success), "oracle must succeed on every episode");
    let traces = files_in(&w.out.join("runs/scripted-oracle-none/traces"));
    assert_eq!(traces.len(), 12);
    for (r, (_, t)) in results.iter().zip(&traces) {
        assert_eq!(t.iter().filter(|&&c| c == b'\n').count(), r.steps.len());
    }
    let echoed: serde_json::Value =
        serde_json::from_slice(&fs::read(w.out.join("runs/scripted-oracle-none/config.json")).unwrap()).unwrap();
    assert_eq!(echoed["runner"]["camera"]["width"], 24);
    assert_eq!(echoed["policy"], "scripted-oracle");

    let md = w.ok(&["eval", "--run", "scripted-oracle-none", "--group", "scene"]);
    assert!(md.contains("| Scene | Complexity | Memory | n | SR↑ | NE↓ | ISR |"));
    let csv = fs::read_to_string(w.out.join("reports/scripted-oracle-none-scene.csv")).unwrap();
    let rows = from_csv(&csv).unwrap();
    assert!(rows.len() <= 7);
    assert_eq!(rows.last().unwrap().scene, "all");
    assert_eq!(rows.last().unwrap().sr, 1.0);
    // parse-back reproduces the in-memory values exactly
    let agg = aggregate(&results, 3.0, GroupBy::Scene, IsrMode::Pair).unwrap();
    assert_eq!(rows, agg.reports);

    w.ok(&["eval", "--run", "scripted-oracle-none", "--group", "complexity"]);
    let rows = from_csv(&fs::read_to_string(w.out.join("reports/scripted-oracle-none-complexity.csv")).unwrap()).unwrap();
    for r in &rows {
        assert!(["2", "3", ">=4", "all"].contains(&r.complexity.as_str()), "{}", r.complexity);
    }
    assert_eq!(rows.last().map(|r| r.n), Some(12));
}

#[test]
fn random_runs_repeat_exactly() {
    let w = Workspace::new();
    w.ok(&["gen", "--classes", "greenhouse,garden", "--per-class", "3"]);
    w.ok(&["run", "--policy", "random", "--seed", "7", "--name", "r1", "--parallel", "4"]);
    w.ok(&["run", "--policy", "random", "--seed", "7", "--name", "r2"]);
    w.ok(&["run", "--policy", "random", "--seed", "8", "--name", "r3"]);
    let r1 = files_in(&w.out.join("runs/r1/results"));
    assert_eq!(r1, files_in(&w.out.join("runs/r2/results")));
    assert_ne!(r1, files_in(&w.out.join("runs/r3/results")));
    assert_eq!(files_in(&w.out.join("runs/r1/traces")), files_in(&w.out.join("runs/r2/traces")));

    // the echoed config alone reproduces the run
    let echoed = w.out.join("runs/r1/config.json");
    let o = Command::new(env!("CARGO_BIN_EXE_vlnmem"))
        .arg("--config")
        .arg(&echoed)
        .arg("--out")
        .arg(&w.out)
        .args(["run", "--name", "r4"])
        .env_remove("VLNMEM_POLICY_ENDPOINT")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(r1, files_in(&w.out.join("runs/r4/results")));
}

#[test]
fn memory_build_inspect_and_miss() {
    let w = Workspace::new();
    w.ok(&["gen", "--classes", "farm,forest", "--per-class", "3"]);

    // empty bank: runs proceed memoryless
    w.ok(&["run", "--policy", "scripted-oracle", "--memory", "oblique", "--name", "miss"]);
    assert!(w.results("miss").iter().all(|r| !r.memory_hit && r.success));

    w.ok(&["build-memory", "--parallel", "3"]);
    let bank = MemoryBank::new(w.out.join("memory"));
    let keys = bank.keys().unwrap();
    assert_eq!(keys.len(), 6);
    let metas: Vec<MemoryMeta> = keys.iter().map(|k| bank.read_meta(k).unwrap().unwrap()).collect();
    w.ok(&["build-memory"]);
    for (k, m) in keys.iter().zip(&metas) {
        let again = bank.read_meta(k).unwrap().unwrap();
        assert_eq!(again.reconstruction_digest, m.reconstruction_digest);
        assert_eq!(again.frontal_sha256, m.frontal_sha256);
    }

    w.ok(&["run", "--policy", "scripted-oracle", "--memory", "hybrid", "--name", "hit"]);
    assert!(w.results("hit").iter().all(|r| r.memory_hit));

    let dest = w.out.join("exported");
    let stdout = w.ok(&["inspect-memory", "--key", &keys[0], "--selection", "hybrid", "--dest", dest.to_str().unwrap()]);
    assert_eq!(stdout.lines().count(), 3);
    let record = bank.record_dir(&keys[0]);
    for name in ["frontal.png", "oblique.png"] {
        assert_eq!(fs::read(dest.join(name)).unwrap(), fs::read(record.join(name)).unwrap());
    }
    let exported: MemoryMeta = serde_json::from_slice(&fs::read(dest.join("meta.json")).unwrap()).unwrap();
    assert_eq!(exported, bank.read_meta(&keys[0]).unwrap().unwrap());

    let only = w.out.join("only-oblique");
    w.ok(&["inspect-memory", "--key", &keys[1], "--selection", "oblique", "--dest", only.to_str().unwrap()]);
    let names: Vec<String> = files_in(&only).into_iter().map(|f| f.0).collect();
    assert_eq!(names, ["meta.json", "oblique.png"]);
}

#[test]
fn external_backend_records_carry_stub_digest() {
    let mut cloud = vlnmem::geometry::PointCloud::new();
    cloud.push([2.0, 0.5, 0.3], [250, 250, 0]);
    let glb = Reconstruction { cloud, ..Default::default() }.to_glb();
    let digest = sha256_hex(&glb);
    let stub = Stub::serve(move |_, _| (200, glb.clone()));

    let w = Workspace::new();
    w.ok(&["gen", "--classes", "village", "--per-class", "2"]);
    let mut cmd = w.cmd(&["build-memory", "--backend", "external"]);
    let o = cmd.env("VLNMEM_RECON_ENDPOINT", &stub.url).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stub.hits(), 2);

    let bank = MemoryBank::new(w.out.join("memory"));
    let keys = bank.keys().unwrap();
    assert_eq!(keys.len(), 2);
    for k in keys {
        let meta = bank.read_meta(&k).unwrap().unwrap();
        assert_eq!(meta.point_count, 1);
        assert_eq!(meta.cloud_centroid, Some([2.0, 0.5, 0.30000001192092896]));
        assert_eq!(meta.reconstruction_digest, digest);
    }
}

#[test]
fn policy_failures_and_keep_going() {
    let stub = Stub::serve(|_, _| (500, Vec::new()));
    let w = Workspace::new();
    w.ok(&["gen", "--classes", "farm", "--per-class", "2"]);
    let o = w.run(&["run", "--policy", "remote", "--endpoint", &stub.url, "--name", "broken"]);
    assert_eq!(o.status.code(), Some(2));
    let results = w.results("broken");
    assert_eq!(results.len(), 2);
    assert!(results.iter().all(|r| r.failure.is_some() && r.steps.is_empty() && !r.success));

    let o = w.run(&["run", "--policy", "remote", "--endpoint", &stub.url, "--name", "broken", "--keep-going"]);
    assert_eq!(o.status.code(), Some(0));

    // the env var supplies the endpoint when the flag is absent
    let ok_stub = common::recorded_policy_stub();
    let o = w.cmd(&["run", "--policy", "remote", "--name", "env"]).env("VLNMEM_POLICY_ENDPOINT", &ok_stub.url).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(ok_stub.hits() > 0);
}
