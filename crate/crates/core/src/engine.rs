//! Deterministic discrete-event execution of the protocol over a shared
//! radio.
//!
//! Global time is an integer tick counter `g`. Node `i` keeps an offset and
//! reads its clock as `(g + offset_i) mod c`; a clock adjustment moves the
//! offset. Events at one tick run in a fixed order: transmissions ending
//! at that tick are resolved first, their surviving copies are received in
//! ascending receiver id, then delayed emissions start, then timeslot
//! handlers fire in ascending node id. When a clock jumps, pending timeslot
//! events for that node are discarded and the next one is scheduled at the
//! first boundary at or after the current tick; skipped slots are not
//! replayed.
//!
//! Every random choice draws from a ChaCha stream derived from the run
//! seed, so a `(config, seed)` pair replays to the identical trace.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::{self, Write};
use std::path::PathBuf;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{is_safe, ConfigurationSnapshot, NodeSnapshot};
use crate::clock::{ClockError, ModularClock, SlotParams};
use crate::frame_info::{EntryKind, FrameInfoEntry, FrameInfoSet, NodeId, Occurrence};
use crate::medium::{
    adversarial_omit, Cause, DeliveryOutcome, Interference, OmissionPolicy, Transmission, TwoHopInterference,
};
use crate::protocol::{arbitrary_state, backoff, NodeState, Packet, PacketKind, ProtocolParams, ReceiveMeta, Status};
use crate::topology::{Topology, TopologyError};

/// `c` must be at least this many times `diam * tau^2`.
pub const MODULUS_HEADROOM: u64 = 100;

pub const DEFAULT_MAX_TRACE_RECORDS: usize = 10_000_000;

const STREAM_SETUP: u64 = 0;
const STREAM_MEDIUM: u64 = 1;
const STREAM_JITTER: u64 = 2;
const STREAM_FAULT: u64 = 3;
const STREAM_TOPOLOGY: u64 = 4;
const STREAM_NODE_BASE: u64 = 16;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Clock(#[from] ClockError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("clock modulus {modulus} is below {needed} = {MODULUS_HEADROOM} * diam * tau^2")]
    ModulusTooSmall { modulus: u64, needed: u64 },
    #[error("jitter bound {jitter} must be below xi/4 (xi = {xi})")]
    JitterTooLarge { jitter: u64, xi: u64 },
    #[error("time_out {time_out} must be positive and below c/2 = {half}")]
    BadTimeOut { time_out: u64, half: u64 },
    #[error("two_hop_bound {given} is below the largest two-hop neighborhood {actual}")]
    TwoHopBoundTooSmall { given: u32, actual: usize },
    #[error("invalid omission policy: {0}")]
    Omission(String),
    #[error("blocker setup needs a star topology with tau = 2*leaves - 1: {0}")]
    Blocker(String),
    #[error("safe setup needs {colors} slots but tau = {tau}")]
    SafeColoring { colors: u64, tau: u64 },
    #[error("fault scope names node {node}, graph has {n} nodes")]
    FaultNode { node: u32, n: usize },
    #[error("fault scope asks for {k} nodes, graph has {n}")]
    FaultCount { k: usize, n: usize },
    #[error("expected {expected} node states, got {got}")]
    StateCount { expected: usize, got: usize },
    #[error("trace exceeds {0} records")]
    TraceTooLarge(usize),
    #[error("reading {path}: {msg}")]
    Io { path: PathBuf, msg: String },
}

/// Graph a run uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    Grid { width: usize, height: usize },
    Star { leaves: usize },
    Path { n: usize },
    Complete { n: usize },
    UnitDisk {
        n: usize,
        radius: f64,
        side: f64,
        #[serde(default = "default_degree_cap")]
        degree_cap: usize,
    },
    /// Edge-list file, see [`Topology::parse_edge_list`].
    EdgeList { path: PathBuf },
}

fn default_degree_cap() -> usize {
    16
}

impl TopologySpec {
    /// Builds the graph; random families draw from `rng`.
    pub fn build<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Topology, SimError> {
        Ok(match self {
            TopologySpec::Grid { width, height } => Topology::grid(*width, *height)?,
            TopologySpec::Star { leaves } => Topology::star(*leaves)?,
            TopologySpec::Path { n } => Topology::path(*n)?,
            TopologySpec::Complete { n } => Topology::complete(*n)?,
            TopologySpec::UnitDisk { n, radius, side, degree_cap } => {
                Topology::unit_disk(*n, *radius, *side, rng, *degree_cap)?
            }
            TopologySpec::EdgeList { path } => {
                let text = std::fs::read_to_string(path).map_err(|e| SimError::Io {
                    path: path.clone(),
                    msg: e.to_string(),
                })?;
                Topology::parse_edge_list(&text)?
            }
        })
    }

    /// Short name used in CSV output.
    pub fn label(&self) -> String {
        match self {
            TopologySpec::Grid { width, height } => format!("grid{width}x{height}"),
            TopologySpec::Star { leaves } => format!("star{leaves}"),
            TopologySpec::Path { n } => format!("path{n}"),
            TopologySpec::Complete { n } => format!("complete{n}"),
            TopologySpec::UnitDisk { n, .. } => format!("unit_disk{n}"),
            TopologySpec::EdgeList { path } => format!("edges:{}", path.display()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    /// Every node in a uniformly random state.
    #[default]
    Arbitrary,
    /// Fresh passive nodes, all clocks 0.
    SynchronizedClocks,
    /// Fresh passive nodes, clocks uniform in `[0, c)`.
    RandomOffsets,
    /// Fresh passive nodes, clocks uniform over slot boundaries.
    SlotAlignedOffsets,
    /// Star whose leaves leave the center no free airtime.
    Lemma1Blocker,
    /// Equal clocks, distinct slots within distance 2, complete frame
    /// information.
    Safe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultScope {
    One { node: u32 },
    Random { k: usize },
    All,
}

/// Transient fault at the start of a global frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub frame: u64,
    pub scope: FaultScope,
}

fn default_one() -> u64 {
    1
}

/// Everything a run depends on. Optional fields default from the
/// topology and slot parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub topology: TopologySpec,
    pub xi: u64,
    pub tau: u64,
    #[serde(default)]
    pub modulus: Option<u64>,
    #[serde(default)]
    pub time_out: Option<u64>,
    #[serde(default)]
    pub two_hop_bound: Option<u32>,
    #[serde(default)]
    pub omission: OmissionPolicy,
    #[serde(default = "default_one")]
    pub seed: u64,
    pub max_frames: u64,
    /// Emission delay bound in ticks; 0 disables jitter.
    #[serde(default)]
    pub jitter: u64,
    #[serde(default)]
    pub initial: InitialCondition,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    /// Stop once this many consecutive snapshots are safe.
    #[serde(default)]
    pub stop_when_stable: Option<u64>,
    /// Record a step entry for every handler invocation.
    #[serde(default)]
    pub record_steps: bool,
    #[serde(default)]
    pub max_trace_records: Option<usize>,
}

impl SimConfig {
    pub fn new(topology: TopologySpec, xi: u64, tau: u64, max_frames: u64) -> Self {
        Self {
            topology,
            xi,
            tau,
            modulus: None,
            time_out: None,
            two_hop_bound: None,
            omission: OmissionPolicy::None,
            seed: 1,
            max_frames,
            jitter: 0,
            initial: InitialCondition::Arbitrary,
            faults: Vec::new(),
            stop_when_stable: None,
            record_steps: false,
            max_trace_records: None,
        }
    }

    /// Builds the topology and resolves every default, rejecting configs
    /// the engine cannot run. Regime violations only produce warnings.
    pub fn prepare(&self) -> Result<Prepared, SimError> {
        let slots = SlotParams::new(self.xi, self.tau)?;
        let g = self.topology.build(&mut stream(self.seed, STREAM_TOPOLOGY))?;
        let metrics = g.metrics()?;
        let modulus = self.modulus.unwrap_or_else(|| slots.default_modulus());
        slots.check_modulus(modulus)?;
        let needed = MODULUS_HEADROOM * metrics.diameter.max(1) as u64 * self.tau * self.tau;
        if modulus < needed {
            return Err(SimError::ModulusTooSmall { modulus, needed });
        }
        let time_out = self.time_out.unwrap_or_else(|| ProtocolParams::default_time_out(&slots));
        if time_out == 0 || time_out >= modulus / 2 {
            return Err(SimError::BadTimeOut { time_out, half: modulus / 2 });
        }
        if 4 * self.jitter >= self.xi && self.jitter > 0 {
            return Err(SimError::JitterTooLarge { jitter: self.jitter, xi: self.xi });
        }
        self.omission.validate().map_err(SimError::Omission)?;
        let actual = metrics.max_two_hop;
        let two_hop_bound = self.two_hop_bound.unwrap_or(actual.max(1) as u32);
        if (two_hop_bound as usize) < actual || two_hop_bound == 0 {
            return Err(SimError::TwoHopBoundTooSmall { given: two_hop_bound, actual });
        }
        for f in &self.faults {
            match f.scope {
                FaultScope::One { node } if node as usize >= g.node_count() => {
                    return Err(SimError::FaultNode { node, n: g.node_count() })
                }
                FaultScope::Random { k } if k > g.node_count() => {
                    return Err(SimError::FaultCount { k, n: g.node_count() })
                }
                _ => {}
            }
        }

        let mut warnings = Vec::new();
        let (d, t) = (metrics.max_degree as u64, metrics.max_two_hop as u64);
        if self.tau <= 2 * t && self.tau <= (4 * d).max(t + 1) {
            warnings.push(format!(
                "tau = {} is in neither convergence regime (needs tau > {} or tau > {})",
                self.tau,
                2 * t,
                (4 * d).max(t + 1)
            ));
        }
        if time_out < slots.frame_ticks() {
            warnings.push(format!("time_out {time_out} is shorter than one frame"));
        }
        let params = ProtocolParams {
            slots,
            modulus,
            time_out,
            two_hop_bound,
        };
        Ok(Prepared {
            topology: g,
            params,
            warnings,
        })
    }
}

/// A validated config: the built graph and the protocol constants.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub topology: Topology,
    pub params: ProtocolParams,
    pub warnings: Vec<String>,
}

/// Emission start for a handler that ran at `start`: uniform in
/// `[start, start + jitter]`.
pub fn apply_jitter<R: Rng + ?Sized>(start: u64, jitter: u64, rng: &mut R) -> u64 {
    if jitter == 0 {
        start
    } else {
        start + rng.gen_range(0..=jitter)
    }
}

/// Initial states for the star with `leaves` leaves: leaf `i` is active
/// in slot `i` with its slot starting `(2 xi - 1) i` ticks into each frame;
/// the center is passive and about to transmit.
pub fn lemma1_blocker<R: Rng + ?Sized>(
    leaves: usize,
    params: &ProtocolParams,
    rng: &mut R,
) -> Result<Vec<NodeState>, SimError> {
    let (xi, tau) = (params.slots.xi, params.slots.tau);
    if leaves == 0 || tau != 2 * leaves as u64 - 1 {
        return Err(SimError::Blocker(format!("leaves = {leaves}, tau = {tau}")));
    }
    let frame = params.slots.frame_ticks();
    let mut states: Vec<NodeState> = (0..leaves as u64)
        .map(|i| {
            let mut s = NodeState::fresh(NodeId(i as u32), 0, params, rng);
            s.status = Status::Active;
            s.slot = i;
            let lead = ((2 * xi - 1) * i) % frame;
            s.clock = ModularClock::new((xi * i % frame + frame - lead) % frame, params.modulus);
            s
        })
        .collect();
    let mut center = NodeState::fresh(NodeId(leaves as u32), 0, params, rng);
    center.wait = 0;
    center.wait_add = 0;
    states.push(center);
    Ok(states)
}

/// A safe configuration: all clocks at 0, slots from a greedy distance-2
/// coloring, and frame information as left by one full frame of data
/// packets.
pub fn safe_states<R: Rng + ?Sized>(
    g: &Topology,
    params: &ProtocolParams,
    rng: &mut R,
) -> Result<Vec<NodeState>, SimError> {
    let slots = params.slots;
    let colors = g.greedy_distance2_coloring();
    let used = colors.iter().max().map_or(0, |c| *c as u64 + 1);
    if used > slots.tau {
        return Err(SimError::SafeColoring { colors: used, tau: slots.tau });
    }
    let c = params.modulus;
    // start of slot s in the previous frame, as seen at clock 0
    let sent_at = |s: u32| (c - slots.frame_ticks() + s as u64 * slots.xi) % c;
    Ok(g.nodes()
        .map(|i| {
            let mut s = NodeState::fresh(i, 0, params, rng);
            s.status = Status::Active;
            s.slot = colors[i.index()] as u64;
            let mut entries = vec![FrameInfoEntry::new(i, EntryKind::Msg, Occurrence::Remote, sent_at(colors[i.index()]))];
            for j in g.two_hop(i) {
                let occ = if g.adjacent(i, j) { Occurrence::Local } else { Occurrence::Remote };
                entries.push(FrameInfoEntry::new(j, EntryKind::Msg, occ, sent_at(colors[j.index()])));
            }
            s.fi = FrameInfoSet::from_entries(entries, params.time_out);
            s
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepKind {
    Timeslot { sent: Option<PacketKind> },
    Receive { from: NodeId, conflict: bool, clock_adjusted: Option<u64> },
    Fault,
}

/// One handler invocation and the node's state digest after it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub tick: u64,
    pub node: NodeId,
    #[serde(flatten)]
    pub kind: StepKind,
    pub digest: u64,
}

/// A transmission and what became of each copy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxRecord {
    pub id: u64,
    pub sender: NodeId,
    pub start: u64,
    pub kind: PacketKind,
    pub sender_status: Status,
    pub t_sender: u64,
    pub outcomes: Vec<DeliveryOutcome>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultRecord {
    pub frame: u64,
    pub tick: u64,
    pub nodes: Vec<NodeId>,
}

/// Everything a run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub n: usize,
    pub xi: u64,
    pub tau: u64,
    pub modulus: u64,
    /// One per global frame `f`, taken at tick `f * xi * tau` before that
    /// tick's events.
    pub snapshots: Vec<ConfigurationSnapshot>,
    /// In order of airtime end.
    pub transmissions: Vec<TxRecord>,
    pub steps: Vec<StepRecord>,
    pub faults: Vec<FaultRecord>,
    pub stopped_early: bool,
}

impl Trace {
    pub fn frame_ticks(&self) -> u64 {
        self.xi * self.tau
    }

    /// Index of the last snapshot.
    pub fn frames(&self) -> u64 {
        self.snapshots.last().map_or(0, |s| s.frame)
    }

    /// Writes the trace as one JSON object per line, ordered by tick.
    pub fn write_ndjson<W: Write>(&self, mut w: W) -> io::Result<()> {
        #[derive(Serialize)]
        #[serde(tag = "type", rename_all = "snake_case")]
        enum Line<'a> {
            Header { n: usize, xi: u64, tau: u64, modulus: u64, stopped_early: bool },
            Snapshot(&'a ConfigurationSnapshot),
            Fault(&'a FaultRecord),
            Tx(&'a TxRecord),
            Step(&'a StepRecord),
        }
        let mut lines: Vec<(u64, u8, Line)> = Vec::new();
        lines.extend(self.snapshots.iter().map(|s| (s.tick, 0, Line::Snapshot(s))));
        lines.extend(self.faults.iter().map(|f| (f.tick, 1, Line::Fault(f))));
        lines.extend(self.transmissions.iter().map(|t| (t.start + self.xi, 2, Line::Tx(t))));
        lines.extend(self.steps.iter().map(|s| (s.tick, 3, Line::Step(s))));
        lines.sort_by_key(|(tick, order, _)| (*tick, *order));
        let header = Line::Header {
            n: self.n,
            xi: self.xi,
            tau: self.tau,
            modulus: self.modulus,
            stopped_early: self.stopped_early,
        };
        for line in std::iter::once(&header).chain(lines.iter().map(|(_, _, l)| l)) {
            serde_json::to_writer(&mut w, line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// FNV-1a over the parts of a node state the protocol reads.
pub fn state_digest(s: &NodeState) -> u64 {
    let mut h = Fnv::default();
    h.u64(s.id.0 as u64);
    h.u64(matches!(s.status, Status::Active) as u64);
    h.u64(s.slot);
    h.u64(s.wait as u64);
    h.u64(s.wait_add as u64);
    h.u64(s.clock.value());
    h.u64(fi_digest(&s.fi));
    h.0
}

fn fi_digest(fi: &FrameInfoSet) -> u64 {
    let mut h = Fnv::default();
    for e in fi.entries() {
        h.u64(e.id.0 as u64);
        h.u64(e.kind as u64);
        h.u64(matches!(e.occurrence, Occurrence::Local) as u64);
        h.u64(e.rx_time);
    }
    h.0
}

struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    fn u64(&mut self, x: u64) {
        for b in x.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    TxEnd { tx: u64 },
    Emission { key: u64 },
    Timeslot { gen: u64 },
}

impl EventKind {
    fn class(&self) -> u8 {
        match self {
            EventKind::TxEnd { .. } => 0,
            EventKind::Emission { .. } => 1,
            EventKind::Timeslot { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Event {
    tick: u64,
    class: u8,
    node: u32,
    kind: EventKind,
}

struct OnAir {
    tx: Transmission,
    t_sender: u64,
    /// Receivers whose copy a fault wiped.
    wiped: Vec<NodeId>,
}

/// A run in progress.
pub struct Simulation {
    config: SimConfig,
    g: Topology,
    params: ProtocolParams,
    nodes: Vec<NodeState>,
    offsets: Vec<u64>,
    gens: Vec<u64>,
    data_seq: Vec<u64>,
    now: u64,
    queue: BinaryHeap<Reverse<Event>>,
    on_air: Vec<OnAir>,
    pending: BTreeMap<u64, (NodeId, Packet)>,
    next_key: u64,
    node_rngs: Vec<ChaCha8Rng>,
    medium_rng: ChaCha8Rng,
    jitter_rng: ChaCha8Rng,
    fault_rng: ChaCha8Rng,
    interference: Box<dyn Interference>,
    two_hop: Vec<Vec<NodeId>>,
    trace: Trace,
    records: usize,
    record_cap: usize,
    warnings: Vec<String>,
}

impl Simulation {
    /// Sets up the initial configuration the config asks for.
    pub fn new(config: &SimConfig) -> Result<Self, SimError> {
        let prepared = config.prepare()?;
        let mut setup = stream(config.seed, STREAM_SETUP);
        let mut node_rngs = node_streams(config.seed, prepared.topology.node_count());
        let p = &prepared.params;
        let g = &prepared.topology;
        let c = p.modulus;
        let fresh = |rngs: &mut [ChaCha8Rng], clock: &mut dyn FnMut() -> u64| -> Vec<NodeState> {
            g.nodes().map(|i| NodeState::fresh(i, clock(), p, &mut rngs[i.index()])).collect()
        };
        let states = match config.initial {
            InitialCondition::Arbitrary => g
                .nodes()
                .map(|i| arbitrary_state(i, p, g.node_count() as u32, &mut node_rngs[i.index()]))
                .collect(),
            InitialCondition::SynchronizedClocks => fresh(&mut node_rngs, &mut || 0),
            InitialCondition::RandomOffsets => fresh(&mut node_rngs, &mut || setup.gen_range(0..c)),
            InitialCondition::SlotAlignedOffsets => {
                let xi = p.slots.xi;
                let mut draw = || setup.gen_range(0..c / xi) * xi;
                fresh(&mut node_rngs, &mut draw)
            }
            InitialCondition::Lemma1Blocker => {
                let leaves = g.node_count() - 1;
                if *g != Topology::star(leaves.max(1))? {
                    return Err(SimError::Blocker("topology is not a star".into()));
                }
                lemma1_blocker(leaves, p, &mut setup)?
            }
            InitialCondition::Safe => safe_states(g, p, &mut setup)?,
        };
        Self::with_prepared(config, prepared, states, node_rngs)
    }

    /// Starts from caller-supplied node states; `config.initial` is ignored.
    pub fn from_states(config: &SimConfig, states: Vec<NodeState>) -> Result<Self, SimError> {
        let prepared = config.prepare()?;
        let rngs = node_streams(config.seed, prepared.topology.node_count());
        Self::with_prepared(config, prepared, states, rngs)
    }

    fn with_prepared(
        config: &SimConfig,
        prepared: Prepared,
        states: Vec<NodeState>,
        node_rngs: Vec<ChaCha8Rng>,
    ) -> Result<Self, SimError> {
        let Prepared { topology: g, params, warnings } = prepared;
        let n = g.node_count();
        if states.len() != n {
            return Err(SimError::StateCount { expected: n, got: states.len() });
        }
        let c = params.modulus;
        let offsets = states.iter().map(|s| s.clock.value() % c).collect();
        let two_hop = g.nodes().map(|i| g.two_hop(i)).collect();
        let mut sim = Simulation {
            config: config.clone(),
            params,
            nodes: states,
            offsets,
            gens: vec![0; n],
            data_seq: vec![0; n],
            now: 0,
            queue: BinaryHeap::new(),
            on_air: Vec::new(),
            pending: BTreeMap::new(),
            next_key: 0,
            node_rngs,
            medium_rng: stream(config.seed, STREAM_MEDIUM),
            jitter_rng: stream(config.seed, STREAM_JITTER),
            fault_rng: stream(config.seed, STREAM_FAULT),
            interference: Box::new(TwoHopInterference),
            two_hop,
            trace: Trace {
                n,
                xi: params.slots.xi,
                tau: params.slots.tau,
                modulus: c,
                snapshots: Vec::new(),
                transmissions: Vec::new(),
                steps: Vec::new(),
                faults: Vec::new(),
                stopped_early: false,
            },
            records: 0,
            record_cap: config.max_trace_records.unwrap_or(DEFAULT_MAX_TRACE_RECORDS),
            warnings,
            g,
        };
        for i in 0..n {
            sim.nodes[i].clock = ModularClock::new(sim.offsets[i], c);
            sim.schedule_timeslot(i);
        }
        Ok(sim)
    }

    /// Replaces the collision model.
    pub fn with_interference(mut self, model: Box<dyn Interference>) -> Self {
        self.interference = model;
        self
    }

    pub fn topology(&self) -> &Topology {
        &self.g
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.params
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Current node states, clocks read at the current tick.
    pub fn states(&self) -> Vec<NodeState> {
        (0..self.nodes.len())
            .map(|i| {
                let mut s = self.nodes[i].clone();
                s.clock = self.clock_at(i, self.now);
                s
            })
            .collect()
    }

    fn clock_at(&self, i: usize, tick: u64) -> ModularClock {
        let c = self.params.modulus;
        ModularClock::new(((tick % c) + self.offsets[i]) % c, c)
    }

    fn sync_clock(&mut self, i: usize) {
        self.nodes[i].clock = self.clock_at(i, self.now);
    }

    fn adopt_clock(&mut self, i: usize) {
        let c = self.params.modulus;
        self.offsets[i] = (self.nodes[i].clock.value() + c - self.now % c) % c;
    }

    fn schedule_timeslot(&mut self, i: usize) {
        let xi = self.params.slots.xi;
        let phase = self.clock_at(i, self.now).value() % xi;
        let tick = self.now + (xi - phase) % xi;
        let gen = self.gens[i];
        self.push(tick, i as u32, EventKind::Timeslot { gen });
    }

    fn push(&mut self, tick: u64, node: u32, kind: EventKind) {
        self.queue.push(Reverse(Event {
            tick,
            class: kind.class(),
            node,
            kind,
        }));
    }

    fn count_record(&mut self) -> Result<(), SimError> {
        self.records += 1;
        if self.records > self.record_cap {
            return Err(SimError::TraceTooLarge(self.record_cap));
        }
        Ok(())
    }

    fn step(&mut self, i: usize, kind: StepKind) -> Result<(), SimError> {
        if self.config.record_steps {
            self.count_record()?;
            let digest = state_digest(&self.nodes[i]);
            self.trace.steps.push(StepRecord {
                tick: self.now,
                node: NodeId(i as u32),
                kind,
                digest,
            });
        }
        Ok(())
    }

    fn snapshot(&self, frame: u64) -> ConfigurationSnapshot {
        ConfigurationSnapshot {
            frame,
            tick: self.now,
            nodes: (0..self.nodes.len())
                .map(|i| {
                    let s = &self.nodes[i];
                    let mut msg_ids: Vec<u32> = s
                        .fi
                        .entries()
                        .iter()
                        .filter(|e| e.kind == EntryKind::Msg)
                        .map(|e| e.id.0)
                        .collect();
                    msg_ids.sort_unstable();
                    NodeSnapshot {
                        clock: self.clock_at(i, self.now).value(),
                        status: s.status,
                        slot: s.slot,
                        msg_ids,
                        fi_digest: fi_digest(&s.fi),
                    }
                })
                .collect(),
            in_flight: self.on_air.iter().filter(|a| a.tx.end() > self.now).count(),
        }
    }

    /// Replaces the states of the nodes in `scope` by arbitrary ones and
    /// wipes their undelivered copies. Returns the nodes hit.
    pub fn inject_fault(&mut self, scope: FaultScope) -> Result<Vec<NodeId>, SimError> {
        let n = self.nodes.len();
        let mut hit: Vec<NodeId> = match scope {
            FaultScope::One { node } if node as usize >= n => return Err(SimError::FaultNode { node, n }),
            FaultScope::One { node } => vec![NodeId(node)],
            FaultScope::Random { k } if k > n => return Err(SimError::FaultCount { k, n }),
            FaultScope::Random { k } => sample(&mut self.fault_rng, n, k)
                .into_iter()
                .map(|i| NodeId(i as u32))
                .collect(),
            FaultScope::All => self.g.nodes().collect(),
        };
        hit.sort();
        for &i in &hit {
            let state = arbitrary_state(i, &self.params, n as u32, &mut self.fault_rng);
            self.nodes[i.index()] = state;
            self.adopt_clock(i.index());
            self.gens[i.index()] += 1;
            self.schedule_timeslot(i.index());
            self.pending.retain(|_, (sender, _)| *sender != i);
            self.step(i.index(), StepKind::Fault)?;
        }
        for air in &mut self.on_air {
            if air.tx.end() > self.now {
                air.wiped.extend(hit.iter().copied());
            }
        }
        Ok(hit)
    }

    fn start_transmission(&mut self, i: usize, packet: Packet) {
        let id = self.next_key;
        self.next_key += 1;
        let t_sender = self.clock_at(i, self.now).value();
        let tx = Transmission {
            id,
            sender: NodeId(i as u32),
            packet,
            start: self.now,
            duration: self.params.slots.xi,
        };
        self.push(tx.end(), i as u32, EventKind::TxEnd { tx: id });
        self.on_air.push(OnAir {
            tx,
            t_sender,
            wiped: Vec::new(),
        });
    }

    fn timeslot(&mut self, i: usize) -> Result<(), SimError> {
        self.sync_clock(i);
        let seq = &mut self.data_seq[i];
        let mut fetch = || {
            *seq += 1;
            seq.to_be_bytes().to_vec()
        };
        let emitted = self.nodes[i].on_timeslot(&self.params, &mut fetch, &mut self.node_rngs[i]);
        let gen = self.gens[i];
        self.push(self.now + self.params.slots.xi, i as u32, EventKind::Timeslot { gen });
        self.step(i, StepKind::Timeslot { sent: emitted.as_ref().map(Packet::kind) })?;
        if let Some(packet) = emitted {
            let at = apply_jitter(self.now, self.config.jitter, &mut self.jitter_rng);
            if at == self.now {
                self.start_transmission(i, packet);
            } else {
                let key = self.next_key;
                self.next_key += 1;
                self.pending.insert(key, (NodeId(i as u32), packet));
                self.push(at, i as u32, EventKind::Emission { key });
            }
        }
        Ok(())
    }

    fn resolve_ended(&mut self, ended: &[u64]) -> Result<Vec<(NodeId, usize)>, SimError> {
        let mut deliveries = Vec::new();
        for &id in ended {
            let idx = self.on_air.iter().position(|a| a.tx.id == id).expect("ended transmission on the air");
            let air = &self.on_air[idx];
            let concurrent: Vec<&Transmission> = self.on_air.iter().map(|a| &a.tx).collect();
            let mut outcomes = self.interference.resolve_one(&air.tx, &concurrent, &self.g);
            let sender = air.tx.sender;
            let two_hop = &self.two_hop[sender.index()];
            let busy_two_hop = self
                .on_air
                .iter()
                .any(|o| o.tx.id != id && o.tx.overlaps(&air.tx) && two_hop.contains(&o.tx.sender));
            let eligible: Vec<NodeId> = outcomes
                .iter()
                .filter(|o| o.delivered && !air.wiped.contains(&o.receiver))
                .map(|o| o.receiver)
                .collect();
            let omitted = adversarial_omit(&self.config.omission, &air.tx, &eligible, busy_two_hop, &mut self.medium_rng);
            for o in &mut outcomes {
                if o.delivered && (air.wiped.contains(&o.receiver) || omitted.contains(&o.receiver)) {
                    o.delivered = false;
                    o.cause = Cause::AdversarialOmission;
                }
                if o.delivered {
                    deliveries.push((o.receiver, idx));
                }
            }
            let record = TxRecord {
                id,
                sender,
                start: air.tx.start,
                kind: air.tx.packet.kind(),
                sender_status: air.tx.packet.sender_status,
                t_sender: air.t_sender,
                outcomes,
            };
            self.count_record()?;
            self.trace.transmissions.push(record);
        }
        deliveries.sort_by_key(|&(r, idx)| (r, self.on_air[idx].tx.sender));
        Ok(deliveries)
    }

    fn receive(&mut self, j: usize, idx: usize) -> Result<(), SimError> {
        let c = self.params.modulus;
        self.sync_clock(j);
        let air = &self.on_air[idx];
        let meta = ReceiveMeta {
            sender: air.tx.sender,
            t_sender: air.t_sender,
            t_receiver: (air.tx.start % c + self.offsets[j]) % c,
        };
        let effects = self.nodes[j].on_receive(&self.params, meta, &air.tx.packet, &mut self.node_rngs[j]);
        if effects.clock_adjusted.is_some() {
            self.adopt_clock(j);
            self.gens[j] += 1;
            self.schedule_timeslot(j);
        }
        self.step(
            j,
            StepKind::Receive {
                from: meta.sender,
                conflict: effects.conflict,
                clock_adjusted: effects.clock_adjusted,
            },
        )
    }

    fn process_tick(&mut self, tick: u64) -> Result<(), SimError> {
        self.now = tick;
        let mut ended = Vec::new();
        while let Some(Reverse(e)) = self.queue.peek().copied() {
            match e.kind {
                EventKind::TxEnd { tx } if e.tick == tick => {
                    self.queue.pop();
                    ended.push(tx);
                }
                _ => break,
            }
        }
        if !ended.is_empty() {
            for (j, idx) in self.resolve_ended(&ended)? {
                self.receive(j.index(), idx)?;
            }
        }
        let xi = self.params.slots.xi;
        self.on_air.retain(|a| a.tx.end() + xi > tick);
        while let Some(Reverse(e)) = self.queue.peek().copied() {
            if e.tick != tick {
                break;
            }
            self.queue.pop();
            match e.kind {
                EventKind::TxEnd { .. } => unreachable!("transmissions last xi >= 1 ticks"),
                EventKind::Emission { key } => {
                    if let Some((sender, packet)) = self.pending.remove(&key) {
                        self.start_transmission(sender.index(), packet);
                    }
                }
                EventKind::Timeslot { gen } => {
                    if gen == self.gens[e.node as usize] {
                        self.timeslot(e.node as usize)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Runs to `max_frames` (or until stable) and returns the trace.
    pub fn run(mut self) -> Result<Trace, SimError> {
        let frame_ticks = self.params.slots.frame_ticks();
        let mut faults = self.config.faults.clone();
        faults.sort_by_key(|f| f.frame);
        let mut faults = faults.into_iter().peekable();
        let mut safe_streak = 0;
        let mut next_frame = 0;
        while next_frame <= self.config.max_frames {
            let snap_tick = next_frame * frame_ticks;
            let next_event = self.queue.peek().map(|Reverse(e)| e.tick);
            if next_event.is_some_and(|t| t < snap_tick) {
                self.process_tick(next_event.unwrap())?;
                continue;
            }
            self.now = snap_tick;
            let snap = self.snapshot(next_frame);
            let safe = self.config.stop_when_stable.is_some() && is_safe(&snap, &self.g);
            self.count_record()?;
            self.trace.snapshots.push(snap);
            while let Some(f) = faults.next_if(|f| f.frame == next_frame) {
                let nodes = self.inject_fault(f.scope)?;
                self.trace.faults.push(FaultRecord { frame: f.frame, tick: self.now, nodes });
                safe_streak = 0;
            }
            // skip fault specs past the horizon or already behind us
            while faults.next_if(|f| f.frame < next_frame).is_some() {}
            if let Some(k) = self.config.stop_when_stable {
                safe_streak = if safe && self.trace.faults.last().is_none_or(|f| f.frame < next_frame) {
                    safe_streak + 1
                } else {
                    0
                };
                if safe_streak >= k.max(1) && faults.peek().is_none() {
                    self.trace.stopped_early = next_frame < self.config.max_frames;
                    break;
                }
            }
            next_frame += 1;
        }
        Ok(self.trace)
    }
}

fn node_streams(seed: u64, n: usize) -> Vec<ChaCha8Rng> {
    (0..n as u64).map(|i| stream(seed, STREAM_NODE_BASE + i)).collect()
}

/// Builds the simulation from `config` and runs it.
pub fn run(config: &SimConfig) -> Result<Trace, SimError> {
    Simulation::new(config)?.run()
}

/// Draws a fresh backoff pair; exposed for setups built by hand.
pub fn fresh_backoff<R: Rng + ?Sized>(params: &ProtocolParams, rng: &mut R) -> (u32, u32) {
    backoff(0, params.two_hop_bound, rng)
}
