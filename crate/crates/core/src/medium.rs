//! The shared radio: airtime overlap, two-hop collisions, the omission
//! adversary, and the packet wire format.
//!
//! A transmission from `i` reaches neighbor `j` unless some other node in
//! `δ_i ∪ δ_j` transmits during any part of `[t, t + xi)`. Since `j` is a
//! neighbor of `i`, this already covers `j` transmitting itself: radios
//! are half-duplex. There is no capture effect and no partial reception.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::frame_info::{decode_entries, DecodeError, NodeId};
use crate::protocol::{Packet, Status};
use crate::topology::Topology;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transmission {
    pub id: u64,
    pub sender: NodeId,
    pub packet: Packet,
    /// Global tick the airtime starts at.
    pub start: u64,
    pub duration: u64,
}

impl Transmission {
    pub fn airtime(&self) -> Range<u64> {
        self.start..self.start + self.duration
    }

    pub fn end(&self) -> u64 {
        self.start + self.duration
    }

    pub fn overlaps(&self, other: &Transmission) -> bool {
        self.start < other.end() && other.start < self.end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cause {
    Ok,
    Collision,
    AdversarialOmission,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeliveryOutcome {
    pub tx: u64,
    pub receiver: NodeId,
    pub delivered: bool,
    pub cause: Cause,
}

impl DeliveryOutcome {
    fn new(tx: u64, receiver: NodeId, cause: Cause) -> Self {
        Self {
            tx,
            receiver,
            delivered: cause == Cause::Ok,
            cause,
        }
    }
}

/// Collision resolution for one transmission against everything that was
/// on the air at the same time.
pub trait Interference: Send + Sync {
    /// Outcome at every neighbor of `tx.sender`, in ascending receiver
    /// order. `concurrent` may contain `tx` itself and non-overlapping
    /// transmissions; implementations must ignore both.
    fn resolve_one(
        &self,
        tx: &Transmission,
        concurrent: &[&Transmission],
        g: &Topology,
    ) -> Vec<DeliveryOutcome>;

    fn resolve(&self, txs: &[Transmission], g: &Topology) -> Vec<DeliveryOutcome> {
        let all: Vec<&Transmission> = txs.iter().collect();
        txs.iter().flat_map(|tx| self.resolve_one(tx, &all, g)).collect()
    }
}

/// Collisions from any transmitter within one hop of the sender or of the
/// receiver.
#[derive(Debug, Clone, Copy, Default)]
pub struct TwoHopInterference;

impl Interference for TwoHopInterference {
    fn resolve_one(
        &self,
        tx: &Transmission,
        concurrent: &[&Transmission],
        g: &Topology,
    ) -> Vec<DeliveryOutcome> {
        let interferers: Vec<NodeId> = concurrent
            .iter()
            .filter(|o| o.id != tx.id && o.sender != tx.sender && o.overlaps(tx))
            .map(|o| o.sender)
            .collect();
        g.neighbors(tx.sender)
            .iter()
            .map(|&j| {
                let hit = interferers
                    .iter()
                    .any(|&k| g.adjacent(tx.sender, k) || g.adjacent(j, k) || k == j);
                DeliveryOutcome::new(tx.id, j, if hit { Cause::Collision } else { Cause::Ok })
            })
            .collect()
    }
}

/// Resolves every transmission in `txs` with the default interference model.
pub fn resolve(txs: &[Transmission], g: &Topology) -> Vec<DeliveryOutcome> {
    TwoHopInterference.resolve(txs, g)
}

/// Channel `q_{i,j}`: holds at most the most recent packet.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Channel(Option<Packet>);

impl Channel {
    pub fn write(&mut self, m: Packet) {
        self.0 = Some(m);
    }

    pub fn take(&mut self) -> Option<Packet> {
        self.0.take()
    }

    pub fn clear(&mut self) {
        self.0 = None;
    }

    pub fn peek(&self) -> Option<&Packet> {
        self.0.as_ref()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_none()
    }
}

/// Overwrites the channel with `m`.
pub fn channel_write(mut q: Channel, m: Packet) -> Channel {
    q.write(m);
    q
}

/// Extra omissions on top of collisions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OmissionPolicy {
    #[default]
    None,
    /// Each surviving copy is removed independently with probability `p`.
    Random { p: f64 },
    /// Copies addressed to these receivers are always removed.
    Targeted { receivers: Vec<NodeId> },
    /// Every copy is removed whenever any node within two hops of the
    /// sender was on the air at the same time.
    AlwaysWhenConcurrent,
}

impl OmissionPolicy {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            OmissionPolicy::Random { p } if !(0.0..=1.0).contains(p) => {
                Err(format!("omission probability {p} outside [0, 1]"))
            }
            _ => Ok(()),
        }
    }
}

/// Picks the receivers in `eligible` whose copy of `tx` the adversary
/// removes. `concurrent_two_hop` says whether a node within two hops of the
/// sender overlapped `tx`.
pub fn adversarial_omit<R: Rng + ?Sized>(
    policy: &OmissionPolicy,
    _tx: &Transmission,
    eligible: &[NodeId],
    concurrent_two_hop: bool,
    rng: &mut R,
) -> Vec<NodeId> {
    match policy {
        OmissionPolicy::None => Vec::new(),
        OmissionPolicy::Random { p } => eligible.iter().copied().filter(|_| rng.gen_bool(*p)).collect(),
        OmissionPolicy::Targeted { receivers } => eligible
            .iter()
            .copied()
            .filter(|j| receivers.contains(j))
            .collect(),
        OmissionPolicy::AlwaysWhenConcurrent => {
            if concurrent_two_hop {
                eligible.to_vec()
            } else {
                Vec::new()
            }
        }
    }
}

fn status_byte(s: Status) -> u8 {
    match s {
        Status::Active => 1,
        Status::Passive => 0,
    }
}

impl Packet {
    /// Wire form: status (1 byte), entry count (u16), entries, payload
    /// length (u16) and payload bytes, big-endian. A zero-length payload
    /// encodes a control packet.
    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = self.data.as_deref().unwrap_or(&[]);
        let len = u16::try_from(payload.len()).expect("payload longer than u16::MAX");
        let mut out = Vec::with_capacity(1 + self.fi_payload.len() + 2 + payload.len());
        out.push(status_byte(self.sender_status));
        out.extend_from_slice(&self.fi_payload);
        out.extend_from_slice(&len.to_be_bytes());
        out.extend_from_slice(payload);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Packet, DecodeError> {
        let truncated = |needed| DecodeError::Truncated {
            got: buf.len(),
            needed,
        };
        let (&status, rest) = buf.split_first().ok_or(truncated(1))?;
        let sender_status = match status {
            1 => Status::Active,
            0 => Status::Passive,
            b => return Err(DecodeError::UnknownStatus(b)),
        };
        let (_, fi_len) = decode_entries(rest)?;
        let fi_payload = rest[..fi_len].to_vec();
        let rest = &rest[fi_len..];
        if rest.len() < 2 {
            return Err(truncated(1 + fi_len + 2));
        }
        let len = u16::from_be_bytes([rest[0], rest[1]]) as usize;
        let body = &rest[2..];
        if body.len() < len {
            return Err(truncated(1 + fi_len + 2 + len));
        }
        if body.len() > len {
            return Err(DecodeError::Trailing(body.len() - len));
        }
        Ok(Packet {
            sender_status,
            fi_payload,
            data: (len > 0).then(|| body.to_vec()),
        })
    }
}
