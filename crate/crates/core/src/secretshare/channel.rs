use std::collections::VecDeque;

use super::{decode_matrices, encode_matrices, Party, ShareError};
use crate::fixedpoint::{Ring, RingMatrix};

/// Per-direction traffic counters of a [`PairwiseChannel`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DirectionStats {
    pub messages: u64,
    pub bytes_sent: u64,
    pub elements_sent: u64,
}

/// In-memory FIFO link between party 0 and party 1.
///
/// Payloads use the share-transfer layout (`rows: u32`, `cols: u32`, then
/// row-major little-endian ring values), so the byte counters match what a
/// network transport would carry for the same matrices.
#[derive(Debug)]
pub struct PairwiseChannel {
    ring: Ring,
    queues: [VecDeque<Vec<u8>>; 2],
    stats: [DirectionStats; 2],
    closed: bool,
}

impl PairwiseChannel {
    pub fn new(ring: Ring) -> Self {
        PairwiseChannel {
            ring,
            queues: [VecDeque::new(), VecDeque::new()],
            stats: [DirectionStats::default(); 2],
            closed: false,
        }
    }

    pub fn ring(&self) -> Ring {
        self.ring
    }

    /// Queues matrices from `from` to its peer as one message.
    pub fn send_matrices(&mut self, from: Party, mats: &[&RingMatrix]) -> Result<(), ShareError> {
        if self.closed {
            return Err(ShareError::ChannelClosed);
        }
        let payload = encode_matrices(self.ring, mats);
        let stats = &mut self.stats[from.index()];
        stats.messages += 1;
        stats.bytes_sent += payload.len() as u64;
        stats.elements_sent += mats.iter().map(|m| (m.rows() * m.cols()) as u64).sum::<u64>();
        // queue index = receiving party
        self.queues[from.peer().index()].push_back(payload);
        Ok(())
    }

    /// Pops the oldest message addressed to `to`.
    pub fn recv_matrices(&mut self, to: Party) -> Result<Vec<RingMatrix>, ShareError> {
        if self.closed {
            return Err(ShareError::ChannelClosed);
        }
        let payload = self.queues[to.index()]
            .pop_front()
            .ok_or(ShareError::ChannelClosed)?;
        decode_matrices(self.ring, &payload)
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    /// Counters for traffic sent by `from`.
    pub fn stats(&self, from: Party) -> DirectionStats {
        self.stats[from.index()]
    }

    pub fn total_bytes(&self) -> u64 {
        self.stats.iter().map(|s| s.bytes_sent).sum()
    }
}
