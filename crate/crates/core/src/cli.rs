//! Command-line experiment runner: `run`, `sweep` and `check`.
//!
//! Exit codes: 0 when every run met its expectation and every check
//! passed, 1 when one did not, 2 when the input could not be parsed or
//! validated. Nothing is written on exit code 2.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    collision_count, convergence_frame, convergence_frame_from, interval_coverage, is_legal, is_safe, RunMetrics,
};
use crate::clock::{slot_of, strictly_newer, SlotParams};
use crate::engine::{FaultScope, FaultSpec, InitialCondition, SimConfig, SimError, Simulation, TopologySpec};
use crate::frame_info::{EntryKind, FrameInfoEntry, FrameInfoSet, NodeId, Occurrence};
use crate::medium::{Interference, TwoHopInterference};

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "SSTDMA_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "sstdma", version, about = "Self-stabilizing TDMA simulator and experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every experiment in a TOML spec and write one CSV row per run.
    Run {
        spec: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Also write each run's trace as NDJSON into this directory.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
    },
    /// Convergence time against network size for a topology family.
    Sweep {
        #[arg(long, value_enum)]
        family: Family,
        /// Comma-separated sizes: `WxH` for grids, node counts for unit disks.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        sizes: Vec<String>,
        #[arg(long, default_value_t = 16)]
        seeds: u64,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 2000)]
        max_frames: u64,
        #[arg(long, default_value_t = 20)]
        xi: u64,
        /// Frame length; defaults to 16 for grids and 64 for unit disks.
        #[arg(long)]
        tau: Option<u64>,
    },
    /// Run the built-in property suite.
    Check,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    Grid,
    UnitDisk,
}

/// Seeds as a count (`0..n`) or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    Count(u64),
    List(Vec<u64>),
}

impl Seeds {
    pub fn to_vec(&self) -> Vec<u64> {
        match self {
            Seeds::Count(n) => (0..*n).collect(),
            Seeds::List(v) => v.clone(),
        }
    }
}

/// One experiment: a simulation config run once per seed. The config's
/// own `seed` is replaced by each seed in turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    #[serde(default)]
    pub name: Option<String>,
    pub seeds: Seeds,
    /// The runs are expected never to converge.
    #[serde(default)]
    pub expected_nonconvergence: bool,
    pub sim: SimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(rename = "experiment")]
    pub experiments: Vec<Experiment>,
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self, String> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| e.to_string())?;
        if spec.experiments.is_empty() {
            return Err("spec has no [[experiment]] entries".into());
        }
        for (k, e) in spec.experiments.iter().enumerate() {
            if e.seeds.to_vec().is_empty() {
                return Err(format!("experiment {}: seeds must not be empty", e.label(k)));
            }
            e.sim.prepare().map_err(|err| format!("experiment {}: {err}", e.label(k)))?;
        }
        Ok(spec)
    }
}

impl Experiment {
    fn label(&self, index: usize) -> String {
        self.name.clone().unwrap_or_else(|| format!("{index}:{}", self.sim.topology.label()))
    }
}

/// A CSV row: either one run or the summary of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsvRow {
    pub experiment: String,
    pub row: &'static str,
    pub seed: Option<u64>,
    pub n: usize,
    pub topology: String,
    pub tau: u64,
    pub xi: u64,
    pub convergence_frame: Option<u64>,
    pub collisions_total: Option<u64>,
    pub collisions_post_convergence: Option<u64>,
    pub runs: Option<usize>,
    pub converged: Option<usize>,
    pub mean_frames: Option<String>,
    pub min_frames: Option<u64>,
    pub max_frames: Option<u64>,
}

impl CsvRow {
    fn run(experiment: &str, m: &RunMetrics) -> Self {
        Self {
            experiment: experiment.to_string(),
            row: "run",
            seed: Some(m.seed),
            n: m.n,
            topology: m.topology.clone(),
            tau: m.tau,
            xi: m.xi,
            convergence_frame: m.convergence_frame,
            collisions_total: Some(m.collisions_total),
            collisions_post_convergence: Some(m.collisions_post_convergence),
            runs: None,
            converged: None,
            mean_frames: None,
            min_frames: None,
            max_frames: None,
        }
    }

    fn summary(experiment: &str, runs: &[RunMetrics]) -> Self {
        let frames: Vec<u64> = runs.iter().filter_map(|m| m.convergence_frame).collect();
        let first = &runs[0];
        Self {
            experiment: experiment.to_string(),
            row: "summary",
            seed: None,
            n: first.n,
            topology: first.topology.clone(),
            tau: first.tau,
            xi: first.xi,
            convergence_frame: None,
            collisions_total: None,
            collisions_post_convergence: None,
            runs: Some(runs.len()),
            converged: Some(frames.len()),
            mean_frames: (!frames.is_empty())
                .then(|| format!("{:.2}", frames.iter().sum::<u64>() as f64 / frames.len() as f64)),
            min_frames: frames.iter().min().copied(),
            max_frames: frames.iter().max().copied(),
        }
    }
}

fn thread_pool() -> rayon::ThreadPool {
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
}

struct Job<'a> {
    experiment: usize,
    config: SimConfig,
    label: &'a str,
}

fn run_jobs(jobs: &[Job], trace_dir: Option<&Path>) -> Result<Vec<RunMetrics>, SimError> {
    thread_pool().install(|| {
        jobs.par_iter()
            .map(|job| {
                let sim = Simulation::new(&job.config)?;
                let g = sim.topology().clone();
                let trace = sim.run()?;
                if let Some(dir) = trace_dir {
                    let path = dir.join(format!("exp{}-seed{}.ndjson", job.experiment, job.config.seed));
                    let io_err = |e: std::io::Error| SimError::Io { path: path.clone(), msg: e.to_string() };
                    let file = fs::File::create(&path).map_err(io_err)?;
                    trace.write_ndjson(std::io::BufWriter::new(file)).map_err(io_err)?;
                }
                Ok(RunMetrics::from_trace(&trace, &g, job.config.seed, job.label))
            })
            .collect()
    })
}

fn write_csv(path: &Path, rows: &[CsvRow]) -> Result<(), String> {
    let mut w = csv::Writer::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    for r in rows {
        w.serialize(r).map_err(|e| e.to_string())?;
    }
    w.flush().map_err(|e| e.to_string())
}

/// Runs every experiment and writes the CSV. Returns the exit code.
pub fn cmd_run(spec_path: &Path, output: Option<&Path>, trace_dir: Option<&Path>) -> i32 {
    let text = match fs::read_to_string(spec_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", spec_path.display());
            return EXIT_INVALID;
        }
    };
    let spec = match ExperimentSpec::parse(&text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {}: {e}", spec_path.display());
            return EXIT_INVALID;
        }
    };
    let Some(output) = output.map(Path::to_path_buf).or(spec.output.clone()) else {
        eprintln!("error: no output path (use -o or set `output` in the spec)");
        return EXIT_INVALID;
    };
    execute(&spec, &output, trace_dir)
}

/// Runs a validated spec and writes the CSV. Returns the exit code.
pub fn execute(spec: &ExperimentSpec, output: &Path, trace_dir: Option<&Path>) -> i32 {
    if let Some(dir) = trace_dir {
        if let Err(e) = fs::create_dir_all(dir) {
            eprintln!("error: {}: {e}", dir.display());
            return EXIT_INVALID;
        }
    }
    let labels: Vec<String> = spec.experiments.iter().enumerate().map(|(k, e)| e.label(k)).collect();
    let topo_labels: Vec<String> = spec.experiments.iter().map(|e| e.sim.topology.label()).collect();
    let jobs: Vec<Job> = spec
        .experiments
        .iter()
        .enumerate()
        .flat_map(|(k, e)| {
            let label = &topo_labels[k];
            e.seeds.to_vec().into_iter().map(move |seed| Job {
                experiment: k,
                config: SimConfig { seed, ..e.sim.clone() },
                label,
            })
        })
        .collect();
    let metrics = match run_jobs(&jobs, trace_dir) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILED;
        }
    };
    let mut rows = Vec::new();
    let mut ok = true;
    for (k, e) in spec.experiments.iter().enumerate() {
        let runs: Vec<RunMetrics> = jobs
            .iter()
            .zip(&metrics)
            .filter(|(j, _)| j.experiment == k)
            .map(|(_, m)| m.clone())
            .collect();
        rows.extend(runs.iter().map(|m| CsvRow::run(&labels[k], m)));
        rows.push(CsvRow::summary(&labels[k], &runs));
        let converged = runs.iter().filter(|m| m.convergence_frame.is_some()).count();
        let met = if e.expected_nonconvergence { converged == 0 } else { converged == runs.len() };
        if !met {
            eprintln!(
                "experiment {}: {converged}/{} runs converged, expected {}",
                labels[k],
                runs.len(),
                if e.expected_nonconvergence { "none" } else { "all" }
            );
            ok = false;
        }
    }
    if let Err(e) = write_csv(output, &rows) {
        eprintln!("error: {e}");
        return EXIT_FAILED;
    }
    if ok {
        EXIT_OK
    } else {
        EXIT_FAILED
    }
}

fn sweep_topology(family: Family, size: &str) -> Result<TopologySpec, String> {
    let bad = || format!("bad size {size:?}");
    match family {
        Family::Grid => {
            let (w, h) = size.split_once(['x', 'X']).ok_or_else(bad)?;
            let width: usize = w.trim().parse().map_err(|_| bad())?;
            let height: usize = h.trim().parse().map_err(|_| bad())?;
            Ok(TopologySpec::Grid { width, height })
        }
        Family::UnitDisk => {
            let n: usize = size.trim().parse().map_err(|_| bad())?;
            Ok(TopologySpec::UnitDisk {
                n,
                radius: 1.5,
                side: (n as f64).sqrt(),
                degree_cap: 16,
            })
        }
    }
}

/// Sweep over sizes of one family, random clock offsets, `seeds` runs per
/// size. Returns the exit code.
pub fn cmd_sweep(
    family: Family,
    sizes: &[String],
    seeds: u64,
    output: &Path,
    max_frames: u64,
    xi: u64,
    tau: Option<u64>,
) -> i32 {
    let sizes: Vec<&String> = sizes.iter().filter(|s| !s.trim().is_empty()).collect();
    if sizes.is_empty() {
        eprintln!("error: --sizes must name at least one size");
        return EXIT_INVALID;
    }
    if seeds == 0 {
        eprintln!("error: --seeds must be positive");
        return EXIT_INVALID;
    }
    let tau = tau.unwrap_or(match family {
        Family::Grid => 16,
        Family::UnitDisk => 64,
    });
    let mut experiments = Vec::new();
    for size in sizes {
        let topology = match sweep_topology(family, size) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_INVALID;
            }
        };
        let mut sim = SimConfig::new(topology, xi, tau, max_frames);
        sim.initial = InitialCondition::RandomOffsets;
        sim.stop_when_stable = Some(2 * tau);
        // unit disk graphs differ per seed; this validates one of them
        if let Err(e) = sim.prepare() {
            eprintln!("error: size {size}: {e}");
            return EXIT_INVALID;
        }
        experiments.push(Experiment {
            name: Some(sim.topology.label()),
            seeds: Seeds::Count(seeds),
            expected_nonconvergence: false,
            sim,
        });
    }
    execute(&ExperimentSpec { output: None, experiments }, output, None)
}

/// Replaceable pieces the check suite exercises.
pub struct CheckHooks {
    pub slot_fn: fn(u64, &SlotParams) -> u64,
    pub interference: fn() -> Box<dyn Interference>,
}

impl Default for CheckHooks {
    fn default() -> Self {
        Self {
            slot_fn: slot_of,
            interference: || Box::new(TwoHopInterference),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckResult {
    pub name: &'static str,
    pub failure: Option<String>,
}

fn check_clock_order() -> Result<(), String> {
    let c: u64 = 256;
    for base in 0..3 * c {
        for gap in 0..c / 2 {
            let (lo, hi) = (base, base + gap);
            if strictly_newer(lo % c, hi % c, c) != (lo < hi) || strictly_newer(hi % c, lo % c, c) {
                return Err(format!("windowed order disagrees at {lo}, {hi}"));
            }
        }
    }
    Ok(())
}

fn check_coverage(slot_fn: fn(u64, &SlotParams) -> u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5107);
    let mut tight = false;
    for k in 0..1000 {
        let xi = [1, 5, 20][k % 3];
        let tau = [4, 16][k / 3 % 2];
        let p = SlotParams::new(xi, tau).unwrap();
        let c = p.default_modulus();
        let count = rng.gen_range(1..=10);
        let times: Vec<u64> = (0..count).map(|_| rng.gen_range(0..c)).collect();
        let entries = times
            .iter()
            .enumerate()
            .map(|(id, &t)| FrameInfoEntry::new(NodeId(id as u32), EntryKind::Msg, Occurrence::Local, t))
            .collect();
        let fi = FrameInfoSet::from_entries(entries, c);
        let used: Vec<u64> = fi.used_slots_with(&p, slot_fn).iter().collect();
        let starts: Vec<f64> = times.iter().map(|&t| t as f64).collect();
        let oracle = interval_coverage(&starts, xi as f64, tau);
        if used != oracle {
            return Err(format!("xi={xi} tau={tau} times={times:?}: used {used:?}, intervals hit {oracle:?}"));
        }
        if oracle.len() > 2 * times.len() {
            return Err(format!("{} slots hit by {} intervals", oracle.len(), times.len()));
        }
        tight |= oracle.len() == 2 * times.len();
    }
    if tight {
        Ok(())
    } else {
        Err("no instance attained the 2|C| bound".into())
    }
}

fn check_closure(hooks: &CheckHooks) -> Result<(), String> {
    let mut cfg = SimConfig::new(TopologySpec::Grid { width: 4, height: 4 }, 20, 16, 60);
    cfg.initial = InitialCondition::Safe;
    let sim = Simulation::new(&cfg).map_err(|e| e.to_string())?.with_interference((hooks.interference)());
    let g = sim.topology().clone();
    let trace = sim.run().map_err(|e| e.to_string())?;
    if let Some(bad) = trace.snapshots.iter().find(|s| !is_legal(s, &g)) {
        return Err(format!("illegal snapshot at frame {}", bad.frame));
    }
    if !is_safe(&trace.snapshots[0], &g) {
        return Err("constructed configuration is not safe".into());
    }
    match collision_count(&trace, 0..61) {
        0 => Ok(()),
        n => Err(format!("{n} collisions after a safe start")),
    }
}

fn check_blocker(hooks: &CheckHooks) -> Result<(), String> {
    let mut cfg = SimConfig::new(TopologySpec::Star { leaves: 5 }, 20, 9, 50);
    cfg.initial = InitialCondition::Lemma1Blocker;
    let sim = Simulation::new(&cfg).map_err(|e| e.to_string())?.with_interference((hooks.interference)());
    let g = sim.topology().clone();
    let trace = sim.run().map_err(|e| e.to_string())?;
    let center = NodeId(5);
    let attempts: Vec<_> = trace.transmissions.iter().filter(|t| t.sender == center).collect();
    if attempts.is_empty() {
        return Err("center never transmitted".into());
    }
    let delivered = attempts.iter().flat_map(|t| &t.outcomes).filter(|o| o.delivered).count();
    if delivered > 0 {
        return Err(format!("center reached a leaf {delivered} times"));
    }
    if let Some(f) = convergence_frame(&trace, &g) {
        return Err(format!("converged at frame {f}"));
    }
    Ok(())
}

fn check_fault_recovery(hooks: &CheckHooks) -> Result<(), String> {
    for seed in 0..4 {
        let mut cfg = SimConfig::new(TopologySpec::Grid { width: 3, height: 3 }, 20, 16, 430);
        cfg.seed = seed;
        cfg.initial = InitialCondition::Safe;
        cfg.faults = vec![FaultSpec { frame: 30, scope: FaultScope::All }];
        cfg.stop_when_stable = Some(32);
        let sim = Simulation::new(&cfg).map_err(|e| e.to_string())?.with_interference((hooks.interference)());
        let g = sim.topology().clone();
        let trace = sim.run().map_err(|e| e.to_string())?;
        if convergence_frame_from(&trace, &g, 31).is_none() {
            return Err(format!("seed {seed}: no recovery within 400 frames"));
        }
    }
    Ok(())
}

type Check<'a> = Box<dyn Fn() -> Result<(), String> + Sync + 'a>;

/// Runs the property suite with the given hooks.
pub fn check_suite(hooks: &CheckHooks) -> Vec<CheckResult> {
    let checks: [(&'static str, Check); 5] = [
        ("clock-order", Box::new(check_clock_order)),
        ("coverage-oracle", Box::new(|| check_coverage(hooks.slot_fn))),
        ("closure", Box::new(|| check_closure(hooks))),
        ("blocker", Box::new(|| check_blocker(hooks))),
        ("fault-recovery", Box::new(|| check_fault_recovery(hooks))),
    ];
    checks
        .iter()
        .map(|(name, f)| CheckResult { name, failure: f().err() })
        .collect()
}

pub fn cmd_check(hooks: &CheckHooks) -> i32 {
    let results = check_suite(hooks);
    for r in &results {
        match &r.failure {
            None => println!("PASS {}", r.name),
            Some(why) => println!("FAIL {}: {why}", r.name),
        }
    }
    if results.iter().all(|r| r.failure.is_none()) {
        EXIT_OK
    } else {
        EXIT_FAILED
    }
}

/// Entry point for the binary.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Run { spec, output, trace_dir } => cmd_run(&spec, output.as_deref(), trace_dir.as_deref()),
        Command::Sweep { family, sizes, seeds, output, max_frames, xi, tau } => {
            cmd_sweep(family, &sizes, seeds, &output, max_frames, xi, tau)
        }
        Command::Check => cmd_check(&CheckHooks::default()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_forms() {
        assert_eq!(Seeds::Count(3).to_vec(), vec![0, 1, 2]);
        assert_eq!(Seeds::List(vec![7, 9]).to_vec(), vec![7, 9]);
    }

    #[test]
    fn spec_parsing() {
        let ok = r#"
            [[experiment]]
            seeds = 2
            [experiment.sim]
            xi = 20
            tau = 16
            max_frames = 10
            topology = { kind = "grid", width = 2, height = 2 }
        "#;
        let spec = ExperimentSpec::parse(ok).unwrap();
        assert_eq!(spec.experiments[0].sim.topology, TopologySpec::Grid { width: 2, height: 2 });
        assert!(ExperimentSpec::parse("").is_err());
        assert!(ExperimentSpec::parse(&ok.replace("seeds = 2", "seeds = []")).is_err());
        assert!(ExperimentSpec::parse(&ok.replace("seeds = 2", "seeds = 2\ncolour = 1")).is_err());
        assert!(ExperimentSpec::parse(&ok.replace("tau = 16", "tau = 0")).is_err());
    }

    #[test]
    fn sweep_sizes() {
        assert_eq!(sweep_topology(Family::Grid, "3x4").unwrap(), TopologySpec::Grid { width: 3, height: 4 });
        assert!(sweep_topology(Family::Grid, "3").is_err());
        assert!(matches!(sweep_topology(Family::UnitDisk, "16").unwrap(), TopologySpec::UnitDisk { n: 16, .. }));
        assert!(sweep_topology(Family::UnitDisk, "x").is_err());
    }

    #[test]
    fn summary_row() {
        let m = |seed, f| RunMetrics {
            seed,
            n: 4,
            topology: "grid2x2".into(),
            tau: 16,
            xi: 20,
            convergence_frame: f,
            collisions_total: 0,
            collisions_post_convergence: 0,
        };
        let s = CsvRow::summary("e", &[m(0, Some(4)), m(1, Some(7)), m(2, None)]);
        assert_eq!((s.runs, s.converged), (Some(3), Some(2)));
        assert_eq!(s.mean_frames.as_deref(), Some("5.50"));
        assert_eq!((s.min_frames, s.max_frames), (Some(4), Some(7)));
    }
}
