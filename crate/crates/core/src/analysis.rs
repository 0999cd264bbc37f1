//! Predicates over configurations and traces: legality, safety,
//! convergence, collision and control-packet accounting, plus the
//! slot-coverage oracle for real-valued intervals.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Trace, TxRecord};
use crate::frame_info::NodeId;
use crate::medium::Cause;
use crate::protocol::{PacketKind, Status};
use crate::topology::Topology;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("trace never reaches a safe configuration")]
    NeverConverged,
    #[error("window starts at frame {start}, before convergence at frame {converged}")]
    WindowBeforeConvergence { start: u64, converged: u64 },
    #[error("empty window")]
    EmptyWindow,
}

/// One node as seen in a snapshot.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeSnapshot {
    pub clock: u64,
    pub status: Status,
    pub slot: u64,
    /// Ids of the `msg` entries in the node's frame information, sorted,
    /// with repetitions.
    pub msg_ids: Vec<u32>,
    pub fi_digest: u64,
}

/// All node states at one global tick.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigurationSnapshot {
    pub frame: u64,
    pub tick: u64,
    pub nodes: Vec<NodeSnapshot>,
    /// Transmissions on the air at the snapshot tick.
    pub in_flight: usize,
}

fn clocks_equal(snap: &ConfigurationSnapshot) -> bool {
    snap.nodes.windows(2).all(|w| w[0].clock == w[1].clock)
}

fn slots_distinct(snap: &ConfigurationSnapshot, g: &Topology) -> bool {
    g.nodes().all(|i| {
        let a = &snap.nodes[i.index()];
        a.status != Status::Active
            || g.two_hop(i).iter().all(|j| {
                let b = &snap.nodes[j.index()];
                b.status != Status::Active || a.slot != b.slot
            })
    })
}

/// Equal clocks everywhere, and no two active nodes within distance 2
/// share a slot. Passive nodes hold no slot.
pub fn is_legal(snap: &ConfigurationSnapshot, g: &Topology) -> bool {
    clocks_equal(snap) && slots_distinct(snap, g)
}

/// Legal, every node active, and every node's frame information holding
/// exactly one `msg` entry for itself and for each node within distance 2.
pub fn is_safe(snap: &ConfigurationSnapshot, g: &Topology) -> bool {
    if !clocks_equal(snap) || snap.nodes.iter().any(|s| s.status != Status::Active) {
        return false;
    }
    if !slots_distinct(snap, g) {
        return false;
    }
    g.nodes().all(|i| {
        let ids = &snap.nodes[i.index()].msg_ids;
        let once = |j: NodeId| ids.iter().filter(|&&k| k == j.0).count() == 1;
        once(i) && g.two_hop(i).into_iter().all(once)
    })
}

/// First snapshot index from which the trace is safe at that snapshot and
/// legal at every later one.
pub fn convergence_frame(trace: &Trace, g: &Topology) -> Option<u64> {
    convergence_frame_from(trace, g, 0)
}

/// As [`convergence_frame`], ignoring snapshots before frame `from`.
pub fn convergence_frame_from(trace: &Trace, g: &Topology, from: u64) -> Option<u64> {
    let snaps: Vec<&ConfigurationSnapshot> = trace.snapshots.iter().filter(|s| s.frame >= from).collect();
    // legal_suffix[k]: snapshots k.. are all legal
    let mut legal_suffix = vec![true; snaps.len() + 1];
    for k in (0..snaps.len()).rev() {
        legal_suffix[k] = legal_suffix[k + 1] && is_legal(snaps[k], g);
    }
    (0..snaps.len())
        .find(|&k| legal_suffix[k] && is_safe(snaps[k], g))
        .map(|k| snaps[k].frame)
}

fn in_window(trace: &Trace, tx: &TxRecord, window: &Range<u64>) -> bool {
    window.contains(&(tx.start / trace.frame_ticks()))
}

/// Collided deliveries among transmissions starting in the frame window.
pub fn collision_count(trace: &Trace, window: Range<u64>) -> u64 {
    trace
        .transmissions
        .iter()
        .filter(|tx| in_window(trace, tx, &window))
        .flat_map(|tx| &tx.outcomes)
        .filter(|o| o.cause == Cause::Collision)
        .count() as u64
}

/// Control packets sent per node over a window of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlRate {
    pub window: Range<u64>,
    pub counts: Vec<u64>,
    pub tau: u64,
}

impl ControlRate {
    /// Packets per `tau` frames for node `i`.
    pub fn per_frame_period(&self, i: NodeId) -> f64 {
        let frames = (self.window.end - self.window.start) as f64;
        self.counts[i.index()] as f64 * self.tau as f64 / frames
    }
}

/// Control packets per node within `window`, which must lie after
/// convergence.
pub fn control_packet_rate(trace: &Trace, g: &Topology, window: Range<u64>) -> Result<ControlRate, AnalysisError> {
    if window.is_empty() {
        return Err(AnalysisError::EmptyWindow);
    }
    let converged = convergence_frame(trace, g).ok_or(AnalysisError::NeverConverged)?;
    if window.start < converged {
        return Err(AnalysisError::WindowBeforeConvergence {
            start: window.start,
            converged,
        });
    }
    let mut counts = vec![0; g.node_count()];
    for tx in &trace.transmissions {
        if tx.kind == PacketKind::Control && in_window(trace, tx, &window) {
            counts[tx.sender.index()] += 1;
        }
    }
    Ok(ControlRate {
        window,
        counts,
        tau: trace.tau,
    })
}

/// Pairs of nodes within distance 2 of each other that both sent a
/// control packet in the same frame, summed over the window.
pub fn control_pairs_within_two_hops(trace: &Trace, g: &Topology, window: Range<u64>) -> u64 {
    let frames = window.end.saturating_sub(window.start) as usize;
    let mut sent = vec![vec![false; g.node_count()]; frames];
    for tx in &trace.transmissions {
        if tx.kind == PacketKind::Control && in_window(trace, tx, &window) {
            sent[(tx.start / trace.frame_ticks() - window.start) as usize][tx.sender.index()] = true;
        }
    }
    sent.iter()
        .map(|s| {
            g.nodes()
                .filter(|i| s[i.index()])
                .map(|i| g.two_hop(i).iter().filter(|j| j.0 > i.0 && s[j.index()]).count() as u64)
                .sum::<u64>()
        })
        .sum()
}

/// Slots `[k xi, (k+1) xi)`, `k < tau`, that the union of the intervals
/// `[b, b + xi)` intersects. Starts are taken modulo the frame length
/// `xi * tau`.
pub fn interval_coverage(starts: &[f64], xi: f64, tau: u64) -> Vec<u64> {
    let frame = xi * tau as f64;
    let mut hit = vec![false; tau as usize];
    for &b in starts {
        let b = b.rem_euclid(frame);
        let first = (b / xi).floor() as u64 % tau;
        hit[first as usize] = true;
        // reaches into the next slot unless it starts exactly on a boundary
        if b > first as f64 * xi {
            hit[((first + 1) % tau) as usize] = true;
        }
    }
    (0..tau).filter(|&k| hit[k as usize]).collect()
}

/// Number of slots the intervals intersect, and the bound `2 |starts|`.
pub fn interval_coverage_bound(starts: &[f64], xi: f64, tau: u64) -> (usize, usize) {
    (interval_coverage(starts, xi, tau).len(), 2 * starts.len())
}

/// One CSV row per simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub n: usize,
    pub topology: String,
    pub tau: u64,
    pub xi: u64,
    pub convergence_frame: Option<u64>,
    pub collisions_total: u64,
    pub collisions_post_convergence: u64,
}

impl RunMetrics {
    pub fn from_trace(trace: &Trace, g: &Topology, seed: u64, topology: &str) -> Self {
        let end = trace.frames() + 1;
        let convergence_frame = convergence_frame(trace, g);
        Self {
            seed,
            n: g.node_count(),
            topology: topology.to_string(),
            tau: trace.tau,
            xi: trace.xi,
            convergence_frame,
            collisions_total: collision_count(trace, 0..end),
            collisions_post_convergence: convergence_frame.map_or(0, |f| collision_count(trace, f..end)),
        }
    }
}
