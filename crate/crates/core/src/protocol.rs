//! The per-node state machine: the timeslot handler, the receive handler
//! and the random backoff that paces control packets.
//!
//! Handlers are plain state transitions over [`NodeState`]. They never
//! look at another node's state; everything a node learns arrives in a
//! [`Packet`] together with the two clock readings in [`ReceiveMeta`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clock::{frame_of, slot_of, strictly_newer, windowed_diff, ModularClock, SlotParams};
use crate::frame_info::{
    conflict_with_neighbors, decode_entries, encode_entries, DecodeError, EntryKind,
    FrameInfoEntry, FrameInfoSet, NodeId, Occurrence,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    Passive,
}

/// Constants every node shares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub slots: SlotParams,
    pub modulus: u64,
    /// Age limit of frame information entries, in ticks.
    pub time_out: u64,
    /// Upper bound on the size of any two-hop neighborhood.
    pub two_hop_bound: u32,
}

impl ProtocolParams {
    /// Default age limit: three frames.
    pub fn default_time_out(slots: &SlotParams) -> u64 {
        3 * slots.frame_ticks()
    }

    /// Largest value `wait` or `wait_add` can take.
    pub fn max_wait(&self) -> u32 {
        6 * self.two_hop_bound
    }

    /// Range of the random backoff draw, `[1, 3Δ]`.
    pub fn backoff_span(&self) -> u32 {
        3 * self.two_hop_bound
    }
}

/// Draws `r` uniformly from `[1, 3Δ]` and returns `(r + wait_add, 3Δ - r)`.
pub fn backoff<R: Rng + ?Sized>(wait_add: u32, two_hop_bound: u32, rng: &mut R) -> (u32, u32) {
    assert!(two_hop_bound >= 1, "backoff needs a two-hop bound of at least 1");
    let r = rng.gen_range(1..=3 * two_hop_bound);
    backoff_with(wait_add, two_hop_bound, r)
}

/// Backoff for a given draw `r`.
pub fn backoff_with(wait_add: u32, two_hop_bound: u32, r: u32) -> (u32, u32) {
    let span = 3 * two_hop_bound;
    debug_assert!((1..=span).contains(&r));
    (r + wait_add, span - r)
}

/// A packet as put on the air.
///
/// `fi_payload` holds the sender's local frame information in wire form;
/// `data` is `None` for control packets.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Packet {
    pub sender_status: Status,
    pub fi_payload: Vec<u8>,
    pub data: Option<Vec<u8>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketKind {
    Data,
    Control,
}

impl Packet {
    fn new(sender_status: Status, fi: &FrameInfoSet, data: Option<Vec<u8>>) -> Self {
        let mut fi_payload = Vec::with_capacity(2 + fi.len() * crate::frame_info::WIRE_ENTRY_LEN);
        // A local view larger than u16::MAX entries cannot occur: local
        // entries are unique per neighbor and ids are u32 bounded by n.
        encode_entries(fi.entries(), &mut fi_payload).expect("local frame information too large");
        Self {
            sender_status,
            fi_payload,
            data,
        }
    }

    pub fn kind(&self) -> PacketKind {
        if self.data.is_some() {
            PacketKind::Data
        } else {
            PacketKind::Control
        }
    }

    pub fn decode_fi(&self) -> Result<Vec<FrameInfoEntry>, DecodeError> {
        let (entries, used) = decode_entries(&self.fi_payload)?;
        if used != self.fi_payload.len() {
            return Err(DecodeError::Trailing(self.fi_payload.len() - used));
        }
        Ok(entries)
    }
}

/// Sender id and the two clock readings taken at the transmission instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceiveMeta {
    pub sender: NodeId,
    pub t_sender: u64,
    pub t_receiver: u64,
}

/// What a receive step did, beyond the state change itself.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReceiveEffects {
    /// Ticks the clock was advanced by, if it was.
    pub clock_adjusted: Option<u64>,
    pub conflict: bool,
    pub welcomed: bool,
    pub delivered: Option<Vec<u8>>,
    pub decode_error: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeState {
    pub id: NodeId,
    pub status: Status,
    /// Data slot. Meaningful while active, retained while passive.
    pub slot: u64,
    pub wait: u32,
    pub wait_add: u32,
    pub clock: ModularClock,
    pub fi: FrameInfoSet,
}

impl NodeState {
    /// Passive node with empty frame information and a fresh backoff.
    pub fn fresh<R: Rng + ?Sized>(id: NodeId, clock: u64, params: &ProtocolParams, rng: &mut R) -> Self {
        let (wait, wait_add) = backoff(0, params.two_hop_bound, rng);
        Self {
            id,
            status: Status::Passive,
            slot: 0,
            wait,
            wait_add,
            clock: ModularClock::new(clock, params.modulus),
            fi: FrameInfoSet::new(params.time_out),
        }
    }

    pub fn is_active(&self) -> bool {
        self.status == Status::Active
    }

    /// The slot this node's data occupies, if it is active.
    pub fn assigned_slot(&self) -> Option<u64> {
        self.is_active().then_some(self.slot)
    }

    fn get_passive<R: Rng + ?Sized>(&mut self, params: &ProtocolParams, rng: &mut R) {
        (self.wait, self.wait_add) = backoff(self.wait_add, params.two_hop_bound, rng);
        self.status = Status::Passive;
    }

    /// Timeslot event. Must be called exactly at a slot boundary of this
    /// node's clock. Returns the packet to transmit, if any.
    pub fn on_timeslot<R: Rng + ?Sized>(
        &mut self,
        params: &ProtocolParams,
        fetch: &mut dyn FnMut() -> Vec<u8>,
        rng: &mut R,
    ) -> Option<Packet> {
        let p = &params.slots;
        let now = self.clock.value();
        assert!(
            p.is_boundary(now),
            "timeslot handler called off a slot boundary (clock {now}, xi {})",
            p.xi
        );
        let current = slot_of(now, p);
        let mut emitted = None;

        if current == self.slot && self.is_active() {
            emitted = Some(Packet::new(Status::Active, &self.fi.local_entries(), Some(fetch())));
        } else if !(self.is_active() && frame_of(now, p) != self.slot) {
            if self.fi.is_unused(current, p) && self.wait == 0 {
                emitted = Some(Packet::new(self.status, &self.fi.local_entries(), None));
                (self.wait, self.wait_add) = backoff(self.wait_add, params.two_hop_bound, rng);
                if !self.is_active() {
                    self.slot = current;
                    self.status = Status::Active;
                }
            } else if self.wait > 0 && self.fi.is_unused((current + p.tau - 1) % p.tau, p) {
                self.wait -= 1;
            }
        }

        self.fi.cleanup(now, params.modulus);
        emitted
    }

    /// Receive event for a packet that survived the medium.
    pub fn on_receive<R: Rng + ?Sized>(
        &mut self,
        params: &ProtocolParams,
        meta: ReceiveMeta,
        pkt: &Packet,
        rng: &mut R,
    ) -> ReceiveEffects {
        let p = &params.slots;
        let c = params.modulus;
        let mut effects = ReceiveEffects::default();
        let received = match pkt.decode_fi() {
            Ok(entries) => entries,
            Err(_) => {
                effects.decode_error = true;
                return effects;
            }
        };
        let (t_j, t_i) = (meta.t_sender, meta.t_receiver);

        if self.is_active()
            && conflict_with_neighbors(&received, self.id, self.slot, t_j, t_i, p, c)
        {
            self.get_passive(params, rng);
            effects.conflict = true;
        }

        if pkt.sender_status == Status::Active {
            if pkt.data.is_some() {
                self.fi.record_local(meta.sender, EntryKind::Msg, t_i);
            }
        } else if t_j == t_i && !self.fi.used_slots(p).contains(slot_of(t_j, p)) {
            self.fi.record_local(meta.sender, EntryKind::Welcome, t_i);
            effects.welcomed = true;
        }

        if strictly_newer(t_i, t_j, c) {
            let delta = (t_j + c - t_i) % c;
            self.clock = self.clock.advance(delta);
            self.fi.shift_timestamps(delta, c);
            self.get_passive(params, rng);
            effects.clock_adjusted = Some(delta);
        }

        let offset = windowed_diff(t_i, t_j, c);
        self.fi.merge_remote(&received, offset, self.clock.value(), p, c);

        effects.delivered = pkt.data.clone();
        effects
    }
}

/// A uniformly random, well-typed node state: the result of a transient
/// fault. Frame information holds at most `2Δ` entries, all within the age
/// limit, naming ids below `id_bound`.
pub fn arbitrary_state<R: Rng + ?Sized>(
    id: NodeId,
    params: &ProtocolParams,
    id_bound: u32,
    rng: &mut R,
) -> NodeState {
    let c = params.modulus;
    let clock = rng.gen_range(0..c);
    let max_wait = params.max_wait();
    let n_entries = rng.gen_range(0..=2 * params.two_hop_bound as usize);
    let entries = (0..n_entries)
        .map(|_| {
            let entry_id = NodeId(rng.gen_range(0..id_bound.max(1)));
            let kind = if rng.gen_bool(0.5) { EntryKind::Msg } else { EntryKind::Welcome };
            let occurrence = if rng.gen_bool(0.5) { Occurrence::Local } else { Occurrence::Remote };
            let age = rng.gen_range(0..=params.time_out);
            FrameInfoEntry::new(entry_id, kind, occurrence, (clock + c - age) % c)
        })
        .collect();
    NodeState {
        id,
        status: if rng.gen_bool(0.5) { Status::Active } else { Status::Passive },
        slot: rng.gen_range(0..params.slots.tau),
        wait: rng.gen_range(0..=max_wait),
        wait_add: rng.gen_range(0..=max_wait),
        clock: ModularClock::new(clock, c),
        fi: FrameInfoSet::from_entries(entries, params.time_out),
    }
}
