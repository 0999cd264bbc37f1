use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sstdma(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sstdma"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../experiments").join(name)
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

const SMALL: &str = r#"
[[experiment]]
name = "tiny"
seeds = 3
[experiment.sim]
topology = { kind = "grid", width = 2, height = 2 }
xi = 20
tau = 16
max_frames = 200
initial = "random_offsets"
stop_when_stable = 32
"#;

#[test]
fn run_writes_one_row_per_seed_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("spec.toml"), SMALL).unwrap();
    let out = sstdma(&["run", "spec.toml", "-o", "out.csv"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("out.csv")).unwrap();
    assert!(text.starts_with("experiment,row,seed,n,topology,tau,xi,convergence_frame,"));
    let rows = rows(&text);
    assert_eq!(rows.len(), 4);
    assert!(rows[..3].iter().all(|r| r[1] == "run" && !r[7].is_empty()));
    assert_eq!(rows[3][1], "summary");
    assert_eq!(rows[3][10..12], ["3".to_string(), "3".to_string()]);
}

#[test]
fn output_is_byte_stable_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("spec.toml"), SMALL).unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let status = Command::new(env!("CARGO_BIN_EXE_sstdma"))
            .args(["run", "spec.toml", "-o", "out.csv", "--trace-dir", "traces"])
            .env("SSTDMA_THREADS", threads)
            .current_dir(dir.path())
            .status()
            .unwrap();
        assert!(status.success());
        let mut names: Vec<_> = fs::read_dir(dir.path().join("traces"))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        names.sort();
        let traces: Vec<Vec<u8>> = names.iter().map(|p| fs::read(p).unwrap()).collect();
        outputs.push((fs::read(dir.path().join("out.csv")).unwrap(), traces));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0].1.len(), 3);
}

#[test]
fn example_specs_meet_their_expectations() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["grid_convergence.toml", "blocker.toml", "fault_recovery.toml"] {
        let spec = example(name);
        let out = sstdma(&["run", spec.to_str().unwrap()], dir.path());
        assert_eq!(out.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        let csv = dir.path().join(name.replace(".toml", ".csv"));
        assert!(csv.exists(), "{name} wrote no csv");
    }
    let blocker = fs::read_to_string(dir.path().join("blocker.csv")).unwrap();
    assert!(rows(&blocker).iter().filter(|r| r[1] == "run").all(|r| r[7].is_empty()));
}

#[test]
fn unmet_expectation_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let spec = fs::read_to_string(example("blocker.toml"))
        .unwrap()
        .replace("expected_nonconvergence = true", "expected_nonconvergence = false");
    fs::write(dir.path().join("spec.toml"), spec).unwrap();
    let out = sstdma(&["run", "spec.toml", "-o", "out.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(dir.path().join("out.csv").exists());
}

#[test]
fn invalid_specs_exit_two_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let bad = [
        ("syntax", "[[experiment]\n".to_string()),
        ("unknown key", SMALL.replace("seeds = 3", "seeds = 3\nsed = 4")),
        ("zero tau", SMALL.replace("tau = 16", "tau = 0")),
        ("omission p", format!("{SMALL}[experiment.sim.omission]\nkind = \"random\"\np = 1.5\n")),
        ("jitter", SMALL.replace("max_frames = 200", "max_frames = 200\njitter = 5")),
        ("modulus", SMALL.replace("max_frames = 200", "max_frames = 200\nmodulus = 640")),
        ("bad node", format!("{SMALL}faults = [{{ frame = 1, scope = {{ kind = \"one\", node = 9 }} }}]\n")),
    ];
    for (what, text) in bad {
        fs::write(dir.path().join("spec.toml"), text).unwrap();
        let out = sstdma(&["run", "spec.toml", "-o", "out.csv"], dir.path());
        assert_eq!(out.status.code(), Some(2), "{what}");
        assert!(!out.stderr.is_empty(), "{what}");
        assert!(!dir.path().join("out.csv").exists(), "{what}");
    }
    let out = sstdma(&["run", "missing.toml", "-o", "out.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    fs::write(dir.path().join("spec.toml"), SMALL).unwrap();
    let out = sstdma(&["run", "spec.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2), "no output path");
}

#[test]
fn sweep_rejects_bad_sizes() {
    let dir = tempfile::tempdir().unwrap();
    for sizes in [vec!["--sizes", ""], vec![], vec!["--sizes", "3"], vec!["--sizes", "0x3"]] {
        let mut args = vec!["sweep", "--family", "grid", "-o", "s.csv"];
        args.extend(&sizes);
        let out = sstdma(&args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{sizes:?}");
        assert!(!dir.path().join("s.csv").exists());
    }
}

#[test]
fn grid_sweep_reports_finite_means() {
    let dir = tempfile::tempdir().unwrap();
    let out = sstdma(
        &["sweep", "--family", "grid", "--sizes", "2x2,3x3", "--seeds", "4", "-o", "s.csv"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("s.csv")).unwrap();
    let summaries: Vec<_> = rows(&text).into_iter().filter(|r| r[1] == "summary").collect();
    assert_eq!(summaries.len(), 2);
    for r in summaries {
        let mean: f64 = r[12].parse().unwrap();
        assert!(mean.is_finite() && mean >= 0.0);
        assert_eq!(r[10], "4");
    }
}

#[test]
fn unit_disk_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = sstdma(
        &["sweep", "--family", "unit-disk", "--sizes", "8,16", "--seeds", "3", "-o", "u.csv"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("u.csv")).unwrap();
    let summaries: Vec<_> = rows(&text).into_iter().filter(|r| r[1] == "summary").collect();
    assert_eq!(summaries.iter().map(|r| r[3].as_str()).collect::<Vec<_>>(), ["8", "16"]);
    assert!(summaries.iter().all(|r| r[5] == "64"));
}

#[test]
fn check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = sstdma(&["check"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS ")).count(), 5, "{stdout}");
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(sstdma(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(sstdma(&[], dir.path()).status.code(), Some(2));
}
