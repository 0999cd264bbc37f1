//! Frame information: what a node has recently heard on the air, and the
//! slot-occupancy predicates derived from it.
//!
//! Each entry records the sender, whether the packet was a data packet
//! (`Msg`) or an acknowledged control packet from a passive node
//! (`Welcome`), whether this node heard it directly (`Local`) or learned
//! it from a neighbor (`Remote`), and the reception time on this node's
//! clock. An entry with timestamp `t` covers the airtime `[t, t + xi)`,
//! which touches one slot when aligned and two adjacent slots otherwise.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{age, age_within, slot_of, SlotParams};

/// Node identifier. `⊥` is never stored; optional ids use `Option<NodeId>`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Msg,
    Welcome,
}

impl EntryKind {
    fn to_byte(self) -> u8 {
        match self {
            EntryKind::Msg => 0,
            EntryKind::Welcome => 1,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(EntryKind::Msg),
            1 => Some(EntryKind::Welcome),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Occurrence {
    Local,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameInfoEntry {
    pub id: NodeId,
    pub kind: EntryKind,
    pub occurrence: Occurrence,
    pub rx_time: u64,
}

impl FrameInfoEntry {
    pub fn new(id: NodeId, kind: EntryKind, occurrence: Occurrence, rx_time: u64) -> Self {
        Self {
            id,
            kind,
            occurrence,
            rx_time,
        }
    }

    /// First and last slot touched by the airtime `[rx_time, rx_time + xi)`.
    pub fn slot_span(&self, p: &SlotParams) -> (u64, u64) {
        slot_span(self.rx_time, p)
    }
}

/// First and last slot touched by a transmission starting at `t`.
pub fn slot_span(t: u64, p: &SlotParams) -> (u64, u64) {
    span_with(t, p, slot_of)
}

fn span_with(t: u64, p: &SlotParams, slot_fn: impl Fn(u64, &SlotParams) -> u64) -> (u64, u64) {
    (slot_fn(t, p), slot_fn(t + p.xi - 1, p))
}

/// True iff `slot` lies in the wrapping slot interval `[first, last]`.
fn span_contains((first, last): (u64, u64), slot: u64, tau: u64) -> bool {
    let width = (last + tau - first) % tau;
    (slot + tau - first) % tau <= width
}

/// A set of slot numbers in `[0, tau)`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SlotSet {
    tau: u64,
    words: Vec<u64>,
}

impl SlotSet {
    pub fn empty(tau: u64) -> Self {
        Self {
            tau,
            words: vec![0; tau.div_ceil(64) as usize],
        }
    }

    pub fn full(tau: u64) -> Self {
        let mut s = Self::empty(tau);
        for slot in 0..tau {
            s.insert(slot);
        }
        s
    }

    pub fn tau(&self) -> u64 {
        self.tau
    }

    pub fn insert(&mut self, slot: u64) {
        assert!(slot < self.tau, "slot {slot} out of range for tau={}", self.tau);
        self.words[(slot / 64) as usize] |= 1 << (slot % 64);
    }

    pub fn remove(&mut self, slot: u64) {
        if slot < self.tau {
            self.words[(slot / 64) as usize] &= !(1 << (slot % 64));
        }
    }

    pub fn contains(&self, slot: u64) -> bool {
        slot < self.tau && self.words[(slot / 64) as usize] & (1 << (slot % 64)) != 0
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn complement(&self) -> Self {
        let mut out = Self::empty(self.tau);
        for slot in 0..self.tau {
            if !self.contains(slot) {
                out.insert(slot);
            }
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.tau).filter(move |&s| self.contains(s))
    }
}

impl fmt::Debug for SlotSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// A node's frame information set together with its age limit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameInfoSet {
    entries: Vec<FrameInfoEntry>,
    time_out: u64,
}

impl FrameInfoSet {
    pub fn new(time_out: u64) -> Self {
        Self {
            entries: Vec::new(),
            time_out,
        }
    }

    pub fn from_entries(entries: Vec<FrameInfoEntry>, time_out: u64) -> Self {
        Self { entries, time_out }
    }

    pub fn entries(&self) -> &[FrameInfoEntry] {
        &self.entries
    }

    pub fn time_out(&self) -> u64 {
        self.time_out
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries this node heard directly.
    pub fn local_entries(&self) -> FrameInfoSet {
        FrameInfoSet {
            entries: self
                .entries
                .iter()
                .filter(|e| e.occurrence == Occurrence::Local)
                .copied()
                .collect(),
            time_out: self.time_out,
        }
    }

    /// Union of the slot intervals covered by all entries.
    pub fn used_slots(&self, p: &SlotParams) -> SlotSet {
        self.used_slots_with(p, slot_of)
    }

    /// [`used_slots`](Self::used_slots) with a caller-supplied slot function.
    /// Exists so the self-check suite can verify that a broken slot function
    /// is caught by the coverage oracle.
    pub fn used_slots_with(
        &self,
        p: &SlotParams,
        slot_fn: impl Fn(u64, &SlotParams) -> u64 + Copy,
    ) -> SlotSet {
        let mut used = SlotSet::empty(p.tau);
        for e in &self.entries {
            let (first, last) = span_with(e.rx_time, p, slot_fn);
            let mut s = first % p.tau;
            loop {
                used.insert(s);
                if s == last % p.tau {
                    break;
                }
                s = (s + 1) % p.tau;
            }
        }
        used
    }

    pub fn unused_slots(&self, p: &SlotParams) -> SlotSet {
        self.used_slots(p).complement()
    }

    /// `s` is unused in the two-hop view, or the two-hop view is exhausted
    /// and `s` is unused among direct neighbors.
    pub fn is_unused(&self, slot: u64, p: &SlotParams) -> bool {
        let unused = self.unused_slots(p);
        if unused.contains(slot) {
            return true;
        }
        unused.is_empty() && self.local_entries().unused_slots(p).contains(slot)
    }

    /// Replaces every entry about `sender` with one fresh local entry.
    pub fn record_local(&mut self, sender: NodeId, kind: EntryKind, rx_time: u64) {
        self.entries.retain(|e| e.id != sender);
        self.entries
            .push(FrameInfoEntry::new(sender, kind, Occurrence::Local, rx_time));
    }

    /// Drops entries older than the age limit.
    pub fn cleanup(&mut self, now: u64, modulus: u64) {
        let time_out = self.time_out;
        self.entries
            .retain(|e| age_within(e.rx_time, now, time_out, modulus));
    }

    /// Moves every timestamp forward by `delta` after a clock adjustment of
    /// the same amount, preserving each entry's age.
    pub fn shift_timestamps(&mut self, delta: u64, modulus: u64) {
        for e in &mut self.entries {
            e.rx_time = ((e.rx_time as u128 + (delta % modulus) as u128) % modulus as u128) as u64;
        }
    }

    /// Merges a neighbor's local entries as remote entries.
    ///
    /// `offset` is receiver clock minus sender clock at the transmission
    /// instant; negative offsets were already absorbed by a clock advance
    /// and shift nothing. Entries that are too old after translation are
    /// dropped. At most one entry is kept per `(id, slot)`: a local entry
    /// always wins, otherwise the youngest one.
    pub fn merge_remote(
        &mut self,
        received: &[FrameInfoEntry],
        offset: i64,
        now: u64,
        p: &SlotParams,
        modulus: u64,
    ) {
        let shift = offset.max(0) as u64;
        for r in received {
            let rx_time = ((r.rx_time as u128 + shift as u128) % modulus as u128) as u64;
            if !age_within(rx_time, now, self.time_out, modulus) {
                continue;
            }
            let incoming = FrameInfoEntry::new(r.id, r.kind, Occurrence::Remote, rx_time);
            let slot = slot_of(rx_time, p);
            let same_key = |e: &FrameInfoEntry| e.id == r.id && slot_of(e.rx_time, p) == slot;
            if self
                .entries
                .iter()
                .any(|e| same_key(e) && e.occurrence == Occurrence::Local)
            {
                continue;
            }
            match self.entries.iter_mut().find(|e| same_key(e)) {
                Some(existing) => {
                    if age(rx_time, now, modulus) < age(existing.rx_time, now, modulus) {
                        *existing = incoming;
                    }
                }
                None => self.entries.push(incoming),
            }
        }
    }

    /// Ids of `Msg` entries, with multiplicity, sorted.
    pub fn msg_ids(&self) -> Vec<NodeId> {
        let mut ids: Vec<NodeId> = self
            .entries
            .iter()
            .filter(|e| e.kind == EntryKind::Msg)
            .map(|e| e.id)
            .collect();
        ids.sort_unstable();
        ids
    }
}

/// Conflict test an active node runs on a neighbor's local frame
/// information.
///
/// `received` is in the sender's clock; `t_send` and `t_recv` are the
/// sender's and receiver's clocks at the transmission instant. Remote
/// timestamps are translated into the receiver's clock by
/// `(t_recv - t_send) mod c` before testing slot intervals. Returns true if
/// the sender does not list us, if the sender's own transmission touched
/// our slot, or if any other listed node's transmission touched our slot.
#[allow(clippy::too_many_arguments)]
pub fn conflict_with_neighbors(
    received: &[FrameInfoEntry],
    own_id: NodeId,
    own_slot: u64,
    t_send: u64,
    t_recv: u64,
    p: &SlotParams,
    modulus: u64,
) -> bool {
    if !received.iter().any(|e| e.id == own_id) {
        return true;
    }
    if span_contains(slot_span(t_recv, p), own_slot, p.tau) {
        return true;
    }
    let shift = age(t_send, t_recv, modulus);
    received.iter().filter(|e| e.id != own_id).any(|e| {
        let translated = (e.rx_time + shift) % modulus;
        span_contains(slot_span(translated, p), own_slot, p.tau)
    })
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("buffer ended after {got} bytes, needed {needed}")]
    Truncated { got: usize, needed: usize },
    #[error("unknown entry kind byte {0}")]
    UnknownKind(u8),
    #[error("unknown status byte {0}")]
    UnknownStatus(u8),
    #[error("{0} trailing bytes after packet")]
    Trailing(usize),
    #[error("{0} entries do not fit in a u16 count")]
    TooManyEntries(usize),
}

/// Size of one encoded entry: id (u32), kind (u8), rx_time (u64).
pub const WIRE_ENTRY_LEN: usize = 4 + 1 + 8;

/// Encodes entries as `count: u16` followed by `(id: u32, kind: u8,
/// rx_time: u64)` records, all big-endian. Occurrence is not transmitted.
pub fn encode_entries(entries: &[FrameInfoEntry], out: &mut Vec<u8>) -> Result<(), DecodeError> {
    let count =
        u16::try_from(entries.len()).map_err(|_| DecodeError::TooManyEntries(entries.len()))?;
    out.extend_from_slice(&count.to_be_bytes());
    for e in entries {
        out.extend_from_slice(&e.id.0.to_be_bytes());
        out.push(e.kind.to_byte());
        out.extend_from_slice(&e.rx_time.to_be_bytes());
    }
    Ok(())
}

/// Decodes entries written by [`encode_entries`]; returns the entries (all
/// marked local, as seen by the sender) and the number of bytes consumed.
pub fn decode_entries(buf: &[u8]) -> Result<(Vec<FrameInfoEntry>, usize), DecodeError> {
    let need = |n: usize| {
        if buf.len() < n {
            Err(DecodeError::Truncated {
                got: buf.len(),
                needed: n,
            })
        } else {
            Ok(())
        }
    };
    need(2)?;
    let count = u16::from_be_bytes([buf[0], buf[1]]) as usize;
    let end = 2 + count * WIRE_ENTRY_LEN;
    need(end)?;
    let mut entries = Vec::with_capacity(count);
    for chunk in buf[2..end].chunks_exact(WIRE_ENTRY_LEN) {
        let id = u32::from_be_bytes(chunk[0..4].try_into().unwrap());
        let kind = EntryKind::from_byte(chunk[4]).ok_or(DecodeError::UnknownKind(chunk[4]))?;
        let rx_time = u64::from_be_bytes(chunk[5..13].try_into().unwrap());
        entries.push(FrameInfoEntry::new(NodeId(id), kind, Occurrence::Local, rx_time));
    }
    Ok((entries, end))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TIME_OUT: u64 = 3 * 16 * 20;

    fn p() -> SlotParams {
        SlotParams::new(20, 16).unwrap()
    }

    fn c() -> u64 {
        p().default_modulus()
    }

    fn local(id: u32, t: u64) -> FrameInfoEntry {
        FrameInfoEntry::new(NodeId(id), EntryKind::Msg, Occurrence::Local, t)
    }

    fn remote(id: u32, t: u64) -> FrameInfoEntry {
        FrameInfoEntry::new(NodeId(id), EntryKind::Msg, Occurrence::Remote, t)
    }

    fn set(entries: Vec<FrameInfoEntry>) -> FrameInfoSet {
        FrameInfoSet::from_entries(entries, TIME_OUT)
    }

    /// Marks, tick by tick over one frame, every slot whose tick range
    /// intersects `[t, t + xi)`. Independent of `slot_span`.
    fn tick_coverage_oracle(fi: &FrameInfoSet, p: &SlotParams) -> Vec<bool> {
        let frame = p.frame_ticks();
        let mut covered = vec![false; p.tau as usize];
        for e in fi.entries() {
            let start = e.rx_time % frame;
            for k in 0..p.xi {
                let tick = (start + k) % frame;
                covered[(tick / p.xi) as usize] = true;
            }
        }
        covered
    }

    fn as_vec(s: &SlotSet) -> Vec<u64> {
        s.iter().collect()
    }

    #[test]
    fn local_entries_filter() {
        assert!(set(vec![]).local_entries().is_empty());
        let fi = set(vec![local(7, 40), remote(9, 40)]);
        assert_eq!(fi.local_entries().entries(), &[local(7, 40)]);
        assert!(set(vec![remote(1, 0), remote(2, 5)]).local_entries().is_empty());
    }

    #[test]
    fn used_slots_examples() {
        let p = p();
        assert_eq!(as_vec(&set(vec![local(1, 0)]).used_slots(&p)), vec![0]);
        assert_eq!(as_vec(&set(vec![local(1, 10)]).used_slots(&p)), vec![0, 1]);
        let wrapped = set(vec![local(1, 315)]);
        assert_eq!(as_vec(&wrapped.used_slots(&p)), vec![0, 15]);
        let oracle = tick_coverage_oracle(&wrapped, &p);
        assert!(oracle[0] && oracle[15] && oracle.iter().filter(|&&b| b).count() == 2);
    }

    #[test]
    fn used_slots_wraps_at_clock_modulus() {
        let p = p();
        let fi = set(vec![local(1, c() - 5)]);
        assert_eq!(as_vec(&fi.used_slots(&p)), vec![0, 15]);
    }

    #[test]
    fn unused_slots_examples() {
        let p = p();
        assert_eq!(set(vec![]).unused_slots(&p).len(), 16);
        assert_eq!(as_vec(&set(vec![local(1, 0)]).unused_slots(&p)), (1..16).collect::<Vec<_>>());
        let small = SlotParams::new(20, 3).unwrap();
        let full = set(vec![local(1, 0), local(2, 20), local(3, 40)]);
        assert!(full.unused_slots(&small).is_empty());
    }

    #[test]
    fn is_unused_examples() {
        let p = p();
        assert!(set(vec![]).is_unused(3, &p));

        // remote entries cover all sixteen slots, the only local one covers slot 0
        let mut entries: Vec<_> = (0..16).map(|k| remote(100 + k, k as u64 * 20)).collect();
        entries.push(local(7, 0));
        let fi = set(entries);
        assert!(fi.unused_slots(&p).is_empty());
        let local_cov = tick_coverage_oracle(&fi.local_entries(), &p);
        assert!(local_cov[0] && !local_cov[1]);
        assert!(fi.is_unused(1, &p));
        assert!(!fi.is_unused(0, &p));

        let all_local = set((0..16).map(|k| local(k, k as u64 * 20)).collect());
        assert!((0..16).all(|s| !all_local.is_unused(s, &p)));
    }

    #[test]
    fn is_unused_does_not_fall_back_while_global_slots_remain() {
        let p = p();
        let fi = set(vec![remote(3, 20)]);
        assert!(!fi.is_unused(1, &p));
        assert!(fi.is_unused(2, &p));
    }

    #[test]
    fn conflict_examples() {
        let p = p();
        let c = c();
        let me = NodeId(4);
        assert!(conflict_with_neighbors(&[], me, 3, 1000, 1000, &p, c));

        // sender in slot 5 heard us in slot 3, and a third node in slot 9
        let t = 5 * 20;
        let heard = [local(4, 3 * 20), local(8, 9 * 20)];
        assert!(!conflict_with_neighbors(&heard, me, 3, t, t, &p, c));

        // sender's own transmission touches our slot
        assert!(conflict_with_neighbors(&heard, me, 5, t, t, &p, c));
    }

    #[test]
    fn conflict_third_party_after_translation() {
        let p = p();
        let c = c();
        let me = NodeId(4);
        // sender clock is 50 ticks behind ours; node 8's entry at sender time
        // 80 becomes 130 on our clock, covering slots 6 and 7
        let heard = [local(4, 0), local(8, 80)];
        let (t_send, t_recv) = (200, 250);
        let translated = set(vec![local(8, 130)]);
        let oracle = tick_coverage_oracle(&translated, &p);
        for slot in 0..16u64 {
            if slot == 12 || slot == 13 {
                continue; // sender's own airtime [250, 270)
            }
            assert_eq!(
                conflict_with_neighbors(&heard, me, slot, t_send, t_recv, &p, c),
                oracle[slot as usize],
                "slot {slot}"
            );
        }
        assert!(conflict_with_neighbors(&heard, me, 6, t_send, t_recv, &p, c));
    }

    #[test]
    fn record_local_replaces_only_sender() {
        let mut fi = set(vec![]);
        fi.record_local(NodeId(7), EntryKind::Msg, 10);
        assert_eq!(fi.entries(), &[local(7, 10)]);

        let mut fi = set(vec![
            FrameInfoEntry::new(NodeId(7), EntryKind::Welcome, Occurrence::Local, 5),
            remote(7, 6),
            local(9, 3),
        ]);
        fi.record_local(NodeId(7), EntryKind::Msg, 40);
        assert_eq!(fi.entries(), &[local(9, 3), local(7, 40)]);
    }

    #[test]
    fn cleanup_examples() {
        let c = c();
        let mut fresh = set(vec![local(1, 100), remote(2, 200)]);
        let before = fresh.clone();
        fresh.cleanup(300, c);
        assert_eq!(fresh, before);

        let mut stale = set(vec![local(1, 0), remote(2, 5)]);
        stale.cleanup(TIME_OUT + 10, c);
        assert!(stale.is_empty());
    }

    #[test]
    fn cleanup_matches_filter_oracle() {
        let c = c();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let now = rng.gen_range(0..c);
            let entries: Vec<_> = (0..rng.gen_range(0..20))
                .map(|k| local(k, (now + c - rng.gen_range(0..3 * TIME_OUT)) % c))
                .collect();
            let expected: Vec<_> = entries
                .iter()
                .filter(|e| (now + c - e.rx_time) % c <= TIME_OUT)
                .copied()
                .collect();
            let mut fi = set(entries);
            fi.cleanup(now, c);
            assert_eq!(fi.entries(), expected.as_slice());
        }
    }

    #[test]
    fn shift_examples() {
        let mut fi = set(vec![local(1, 10)]);
        fi.shift_timestamps(0, 100);
        assert_eq!(fi.entries()[0].rx_time, 10);
        fi.shift_timestamps(30, 100);
        assert_eq!(fi.entries()[0].rx_time, 40);
        fi.shift_timestamps(70, 100);
        assert_eq!(fi.entries()[0].rx_time, 10);
    }

    #[test]
    fn merge_examples() {
        let p = p();
        let c = c();
        let mut fi = set(vec![local(1, 100)]);
        let before = fi.clone();
        fi.merge_remote(&[], 7, 200, &p, c);
        assert_eq!(fi, before);

        let mut fi = set(vec![]);
        fi.merge_remote(&[local(5, 120)], -5, 200, &p, c);
        assert_eq!(fi.entries(), &[remote(5, 120)]);

        let mut fi = set(vec![]);
        fi.merge_remote(&[local(5, 120)], 40, 200, &p, c);
        assert_eq!(fi.entries(), &[remote(5, 160)]);

        let mut fi = set(vec![]);
        fi.merge_remote(&[local(5, 100)], 0, 100 + TIME_OUT + 1, &p, c);
        assert!(fi.is_empty());
    }

    #[test]
    fn merge_deduplicates_by_id_and_slot() {
        let p = p();
        let c = c();
        // older copy in the same slot is replaced by the younger one
        let mut fi = set(vec![remote(5, 100)]);
        fi.merge_remote(&[local(5, 100 + 320)], 0, 500, &p, c);
        assert_eq!(fi.entries(), &[remote(5, 420)]);
        // an older copy never replaces a younger one
        fi.merge_remote(&[local(5, 100)], 0, 500, &p, c);
        assert_eq!(fi.entries(), &[remote(5, 420)]);
        // a different slot is a separate entry
        fi.merge_remote(&[local(5, 440)], 0, 500, &p, c);
        assert_eq!(fi.len(), 2);
        // a direct observation is never replaced by hearsay
        let mut fi = set(vec![local(5, 100)]);
        fi.merge_remote(&[local(5, 420)], 0, 500, &p, c);
        assert_eq!(fi.entries(), &[local(5, 100)]);
    }

    #[test]
    fn wire_roundtrip_and_errors() {
        let entries = vec![
            local(1, 0),
            FrameInfoEntry::new(NodeId(u32::MAX), EntryKind::Welcome, Occurrence::Local, u64::MAX),
        ];
        let mut buf = Vec::new();
        encode_entries(&entries, &mut buf).unwrap();
        assert_eq!(buf.len(), 2 + 2 * WIRE_ENTRY_LEN);
        assert_eq!(&buf[..7], &[0, 2, 0, 0, 0, 1, 0]);
        let (decoded, used) = decode_entries(&buf).unwrap();
        assert_eq!(decoded, entries);
        assert_eq!(used, buf.len());

        assert!(matches!(decode_entries(&buf[..5]), Err(DecodeError::Truncated { .. })));
        let mut bad = buf.clone();
        bad[6] = 9;
        assert_eq!(decode_entries(&bad), Err(DecodeError::UnknownKind(9)));
    }

    fn arb_set(p: SlotParams) -> impl Strategy<Value = FrameInfoSet> {
        let frame = p.frame_ticks();
        prop::collection::vec((0u32..50, 0u64..4 * frame, any::<bool>()), 0..20).prop_map(
            move |raw| {
                set(raw
                    .into_iter()
                    .map(|(id, t, is_local)| if is_local { local(id, t) } else { remote(id, t) })
                    .collect())
            },
        )
    }

    fn arb_params() -> impl Strategy<Value = SlotParams> {
        (prop::sample::select(vec![1u64, 5, 20]), prop::sample::select(vec![4u64, 16]))
            .prop_map(|(xi, tau)| SlotParams::new(xi, tau).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn used_slots_matches_tick_oracle((p, fi) in arb_params().prop_flat_map(|p| (Just(p), arb_set(p)))) {
            let used = fi.used_slots(&p);
            let oracle = tick_coverage_oracle(&fi, &p);
            for s in 0..p.tau {
                prop_assert_eq!(used.contains(s), oracle[s as usize]);
            }
            prop_assert!(used.len() <= 2 * fi.len());
        }

        #[test]
        fn is_unused_implies_locally_unused((p, fi, s) in arb_params().prop_flat_map(|p| (Just(p), arb_set(p), 0..p.tau))) {
            if fi.is_unused(s, &p) {
                prop_assert!(!fi.local_entries().used_slots(&p).contains(s));
            }
        }

        #[test]
        fn cleanup_is_idempotent(fi in arb_set(p()), now in 0u64..2_000) {
            let c = c();
            let mut once = fi.clone();
            once.cleanup(now, c);
            let mut twice = once.clone();
            twice.cleanup(now, c);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn shift_preserves_ages(fi in arb_set(p()), now in 0u64..100_000, delta in 0u64..100_000) {
            let c = c();
            let mut shifted = fi.clone();
            shifted.shift_timestamps(delta, c);
            prop_assert_eq!(shifted.len(), fi.len());
            let new_now = (now + delta) % c;
            for (a, b) in fi.entries().iter().zip(shifted.entries()) {
                prop_assert_eq!(age(a.rx_time, now, c), age(b.rx_time, new_now, c));
            }
        }

        #[test]
        fn wire_roundtrip(fi in arb_set(p())) {
            let mut buf = Vec::new();
            encode_entries(fi.entries(), &mut buf).unwrap();
            let (decoded, used) = decode_entries(&buf).unwrap();
            prop_assert_eq!(used, buf.len());
            for (a, b) in fi.entries().iter().zip(&decoded) {
                prop_assert_eq!((a.id, a.kind, a.rx_time), (b.id, b.kind, b.rx_time));
            }
        }
    }
}
