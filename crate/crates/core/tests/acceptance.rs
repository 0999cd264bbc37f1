//! Acceptance criteria A1-A8. Prints one line per criterion and exits
//! non-zero if any fails.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use sstdma::analysis::{
    collision_count, control_packet_rate, control_pairs_within_two_hops, convergence_frame, convergence_frame_from,
    interval_coverage_bound, is_legal,
};
use sstdma::clock::strictly_newer;
use sstdma::engine::{
    run, FaultScope, FaultSpec, InitialCondition, SimConfig, Simulation, TopologySpec, Trace,
};
use sstdma::frame_info::NodeId;
use sstdma::medium::Cause;
use sstdma::protocol::NodeState;
use sstdma::topology::Topology;

const XI: u64 = 20;
const SEEDS: u64 = 16;
/// Horizon for convergence runs; far beyond any accepted mean.
const HORIZON: u64 = 2000;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn grid(w: usize) -> TopologySpec {
    TopologySpec::Grid { width: w, height: w }
}

/// Convergence frame of each seed from random clock offsets.
fn convergence_runs(topology: TopologySpec, tau: u64, jitter: u64) -> Vec<Option<u64>> {
    (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let mut c = SimConfig::new(topology.clone(), XI, tau, HORIZON);
            c.initial = InitialCondition::RandomOffsets;
            c.seed = seed;
            c.jitter = jitter;
            c.stop_when_stable = Some(2 * tau);
            let g = c.prepare().unwrap().topology;
            convergence_frame(&run(&c).unwrap(), &g)
        })
        .collect()
}

fn mean(frames: &[Option<u64>]) -> Option<f64> {
    let done: Vec<u64> = frames.iter().flatten().copied().collect();
    (!done.is_empty()).then(|| done.iter().sum::<u64>() as f64 / done.len() as f64)
}

fn converged(frames: &[Option<u64>]) -> usize {
    frames.iter().filter(|f| f.is_some()).count()
}

fn fmt_mean(m: Option<f64>) -> String {
    m.map_or("-".into(), |m| format!("{m:.1}"))
}

fn a1(plain: &[(usize, Vec<Option<u64>>)]) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for (w, frames) in plain {
        let m = mean(frames);
        pass &= converged(frames) == SEEDS as usize && m.is_some_and(|m| m <= 300.0);
        parts.push(format!("{w}x{w}: {}/{SEEDS} mean {}", converged(frames), fmt_mean(m)));
    }
    verdict(pass, parts.join(", "))
}

fn a2() -> Verdict {
    let mut c = SimConfig::new(TopologySpec::Star { leaves: 5 }, XI, 9, 50);
    c.initial = InitialCondition::Lemma1Blocker;
    let g = c.prepare().unwrap().topology;
    let trace = run(&c).unwrap();
    let center = NodeId(5);
    let attempts: Vec<_> = trace.transmissions.iter().filter(|t| t.sender == center).collect();
    let all_collide = attempts
        .iter()
        .all(|t| t.outcomes.iter().all(|o| !o.delivered && o.cause == Cause::Collision));
    let conv = convergence_frame(&trace, &g);
    verdict(
        !attempts.is_empty() && all_collide && conv.is_none(),
        format!(
            "{} center attempts, all collided at every leaf: {all_collide}, convergence {conv:?}",
            attempts.len()
        ),
    )
}

fn a3() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut violations, mut witnesses) = (0, 0);
    for _ in 0..1000 {
        let xi = [1.0, 5.0, 20.0][rng.gen_range(0..3)];
        let tau = [4, 16][rng.gen_range(0..2)];
        let k = rng.gen_range(1..=10);
        let starts: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..xi * tau as f64)).collect();
        let (count, bound) = interval_coverage_bound(&starts, xi, tau);
        violations += (count > bound) as usize;
        witnesses += (count == bound) as usize;
    }
    let elapsed = started.elapsed();
    verdict(
        violations == 0 && witnesses > 0 && elapsed.as_secs_f64() < 1.0,
        format!("bound exceeded in {violations} of 1000 instances, {witnesses} tight witnesses, {elapsed:.2?}"),
    )
}

fn a4() -> Verdict {
    let frames = 100;
    let mut c = SimConfig::new(grid(4), XI, 16, frames);
    c.initial = InitialCondition::Safe;
    let prepared = c.prepare().unwrap();
    let g = prepared.topology;
    let tau = prepared.params.slots.tau;
    let trace = run(&c).unwrap();
    let legal = trace.snapshots.iter().all(|s| is_legal(s, &g));
    let collisions = collision_count(&trace, 0..frames + 1);
    // every full period of tau frames inside the run
    let mut off_target = Vec::new();
    for k in 0..frames / tau {
        let rate = control_packet_rate(&trace, &g, k * tau..(k + 1) * tau).unwrap();
        for (i, &n) in rate.counts.iter().enumerate() {
            if n != 1 {
                off_target.push((k, i, n));
            }
        }
    }
    let pairs = control_pairs_within_two_hops(&trace, &g, 0..frames);
    let totals = control_packet_rate(&trace, &g, 0..(frames / tau) * tau).unwrap().counts;
    verdict(
        legal && collisions == 0 && off_target.is_empty() && pairs == 0,
        format!(
            "legal {legal}, collisions {collisions}, control pairs within 2 hops {pairs}, \
             {} of {} (period, node) counts differ from 1; per-node totals over {} periods {totals:?}",
            off_target.len(),
            (frames / tau) as usize * g.node_count(),
            frames / tau
        ),
    )
}

fn a5() -> Verdict {
    let results: Vec<(Option<u64>, Option<u64>)> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let mut c = SimConfig::new(grid(3), XI, 16, 450);
            c.initial = InitialCondition::RandomOffsets;
            c.seed = seed;
            c.faults = vec![FaultSpec { frame: 50, scope: FaultScope::All }];
            let g = c.prepare().unwrap().topology;
            let trace = run(&c).unwrap();
            (convergence_frame_from(&trace, &g, 0).filter(|&f| f < 50), convergence_frame_from(&trace, &g, 51))
        })
        .collect();
    let recovered: Vec<Option<u64>> = results.iter().map(|r| r.1.filter(|&f| f < 450)).collect();
    let after: Vec<String> = recovered.iter().map(|f| f.map_or("-".into(), |f| (f - 50).to_string())).collect();
    verdict(
        converged(&recovered) == SEEDS as usize,
        format!(
            "{}/{SEEDS} recovered; frames after the fault: {}",
            converged(&recovered),
            after.join(" ")
        ),
    )
}

/// Nodes holding the largest clock in the windowed order.
fn max_clock_set(clocks: &[u64], c: u64) -> Vec<usize> {
    let top = clocks
        .iter()
        .copied()
        .find(|&a| !clocks.iter().any(|&b| strictly_newer(a, b, c)))
        .expect("clocks span less than half the modulus");
    (0..clocks.len()).filter(|&i| clocks[i] == top).collect()
}

fn clock_sync_run(clocks: &[u64], seed: u64) -> (bool, bool, Option<u64>) {
    let mut cfg = SimConfig::new(TopologySpec::Path { n: clocks.len() }, XI, 16, 300);
    cfg.seed = seed;
    let params = cfg.prepare().unwrap().params;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states: Vec<NodeState> = clocks
        .iter()
        .enumerate()
        .map(|(i, &t)| NodeState::fresh(NodeId(i as u32), t, &params, &mut rng))
        .collect();
    let trace: Trace = Simulation::from_states(&cfg, states).unwrap().run().unwrap();
    let c = params.modulus;
    let sets: Vec<Vec<usize>> = trace
        .snapshots
        .iter()
        .map(|s| max_clock_set(&s.nodes.iter().map(|n| n.clock).collect::<Vec<_>>(), c))
        .collect();
    let monotone = sets.windows(2).all(|w| w[0].iter().all(|i| w[1].contains(i)));
    let equal_at = trace
        .snapshots
        .iter()
        .find(|s| s.nodes.iter().all(|n| n.clock == s.nodes[0].clock))
        .map(|s| s.frame);
    let last = trace.snapshots.last().unwrap();
    let final_equal = last.nodes.iter().all(|n| n.clock == last.nodes[0].clock);
    (monotone, final_equal, equal_at)
}

fn a6() -> Verdict {
    let p = SimConfig::new(TopologySpec::Path { n: 6 }, XI, 16, 1).prepare().unwrap().params;
    let c = p.modulus;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut cases: Vec<(&str, Vec<u64>)> = Vec::new();
    for _ in 0..8 {
        let clocks = (0..6).map(|_| rng.gen_range(0..c / 4 / XI) * XI).collect();
        cases.push(("offset", clocks));
    }
    for _ in 0..8 {
        // half the nodes just before the wrap, half just after it
        let clocks = (0..6)
            .map(|i| {
                let d = rng.gen_range(1..=1000) * XI;
                if i % 2 == 0 { c - d } else { d - XI }
            })
            .collect();
        cases.push(("wrap", clocks));
    }
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, (kind, clocks)) in cases.iter().enumerate() {
        let (monotone, equal, at) = clock_sync_run(clocks, k as u64);
        pass &= monotone && equal;
        parts.push(format!("{kind}:{}", at.map_or("-".into(), |f| f.to_string())));
    }
    verdict(pass, format!("max set monotone and final clocks equal in all 16 runs: {pass}; equal from frame {}", parts.join(" ")))
}

fn a7(plain: &[(usize, Vec<Option<u64>>)], jittered: &[(usize, Vec<Option<u64>>)]) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for ((w, base), (_, jit)) in plain.iter().zip(jittered) {
        let (mb, mj) = (mean(base), mean(jit));
        let ok = converged(jit) == SEEDS as usize && matches!((mb, mj), (Some(b), Some(j)) if j <= 1.5 * b);
        pass &= ok;
        parts.push(format!("{w}x{w}: {}/{SEEDS} mean {} vs {}", converged(jit), fmt_mean(mj), fmt_mean(mb)));
    }
    verdict(pass, parts.join(", "))
}

fn a8() -> Verdict {
    let m = Topology::grid(4, 4).unwrap().metrics().unwrap();
    let (d, t) = (m.max_degree as u64, m.max_two_hop as u64);
    let wide = 2 * t + 1;
    let narrow = (4 * d).max(t + 1) + 1;
    let a = convergence_runs(grid(4), wide, 0);
    let b = convergence_runs(grid(4), narrow, 0);
    let (ma, mb) = (mean(&a), mean(&b));
    let all = converged(&a) == SEEDS as usize && converged(&b) == SEEDS as usize;
    verdict(
        all && matches!((ma, mb), (Some(x), Some(y)) if x <= y),
        format!(
            "tau={wide}: {}/{SEEDS} mean {}; tau={narrow}: {}/{SEEDS} mean {}",
            converged(&a),
            fmt_mean(ma),
            converged(&b),
            fmt_mean(mb)
        ),
    )
}

fn main() {
    // `cargo test` passes harness flags such as --quiet; none apply here.
    let sizes = [2, 3, 4, 5];
    let plain: Vec<(usize, Vec<Option<u64>>)> = sizes.iter().map(|&w| (w, convergence_runs(grid(w), 16, 0))).collect();
    let jittered: Vec<(usize, Vec<Option<u64>>)> =
        sizes.iter().map(|&w| (w, convergence_runs(grid(w), 16, 2))).collect();
    let verdicts = [
        ("A1", a1(&plain)),
        ("A2", a2()),
        ("A3", a3()),
        ("A4", a4()),
        ("A5", a5()),
        ("A6", a6()),
        ("A7", a7(&plain, &jittered)),
        ("A8", a8()),
    ];
    let mut failed = 0;
    for (name, v) in &verdicts {
        println!("{name} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += !v.pass as usize;
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
