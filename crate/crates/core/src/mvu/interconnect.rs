//! Crossbar between the eight MVUs and write-port arbitration at each
//! destination activation RAM.
//!
//! Each destination port accepts one write per cycle. The interconnect wins
//! over the controller, which wins over the MVU's own writeback; among
//! interconnect sources the lowest MVU index wins. Losers retry next cycle.

use serde::{Deserialize, Serialize};

use super::engine::Writeback;

pub const NUM_MVUS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterconnectPacket {
    pub source_mvu: u8,
    pub dest_mask: u8,
    pub dest_address: u32,
    pub word: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteSource {
    Interconnect(u8),
    Controller,
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AppliedWrite {
    pub dest_mvu: u8,
    pub source: WriteSource,
    pub write: Writeback,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Arbitration {
    /// At most one write per destination MVU, ordered by destination.
    pub applied: Vec<AppliedWrite>,
    /// Packets with the destinations they still have to reach.
    pub stalled_packets: Vec<InterconnectPacket>,
    pub stalled_controller: Vec<(u8, Writeback)>,
    pub stalled_local: Vec<(u8, Writeback)>,
}

/// Resolves one cycle of write requests.
///
/// `controller_writes` and `local_writes` are `(destination MVU, write)` pairs.
#[allow(clippy::needless_range_loop)]
pub fn interconnect_cycle(
    pending: &[InterconnectPacket],
    controller_writes: &[(u8, Writeback)],
    local_writes: &[(u8, Writeback)],
) -> Arbitration {
    let mut winner: [Option<(WriteSource, Writeback)>; NUM_MVUS] = [None; NUM_MVUS];
    let mut remaining: Vec<InterconnectPacket> = pending.to_vec();
    remaining.sort_by_key(|p| p.source_mvu);
    for pkt in remaining.iter_mut() {
        for dest in 0..NUM_MVUS {
            if pkt.dest_mask >> dest & 1 == 1 && winner[dest].is_none() {
                winner[dest] = Some((
                    WriteSource::Interconnect(pkt.source_mvu),
                    Writeback { address: pkt.dest_address, word: pkt.word },
                ));
                pkt.dest_mask &= !(1 << dest);
            }
        }
    }
    let mut out = Arbitration::default();
    for (source, writes, stalled) in [
        (WriteSource::Controller, controller_writes, &mut out.stalled_controller),
        (WriteSource::Local, local_writes, &mut out.stalled_local),
    ] {
        for &(dest, w) in writes {
            let slot = &mut winner[dest as usize];
            if slot.is_none() {
                *slot = Some((source, w));
            } else {
                stalled.push((dest, w));
            }
        }
    }
    out.stalled_packets = remaining.into_iter().filter(|p| p.dest_mask != 0).collect();
    out.applied = winner
        .iter()
        .enumerate()
        .filter_map(|(d, w)| w.map(|(source, write)| AppliedWrite { dest_mvu: d as u8, source, write }))
        .collect();
    out
}
