use std::fmt;

use crate::nn::Direction;
use crate::protocol::FrameType;

/// Cumulative compute and traffic counters for one role.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct ResourceLedger {
    pub role: String,
    pub flops_forward: u64,
    pub flops_backward: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    /// Bytes sent per frame type, indexed by `FrameType::index`.
    pub sent_by_type: [u64; FrameType::COUNT],
    pub received_by_type: [u64; FrameType::COUNT],
}

impl ResourceLedger {
    pub fn new(role: impl Into<String>) -> Self {
        Self {
            role: role.into(),
            ..Default::default()
        }
    }

    pub fn add_flops(&mut self, direction: Direction, flops: u64) {
        match direction {
            Direction::Forward => self.flops_forward += flops,
            Direction::Backward => self.flops_backward += flops,
        }
    }

    pub fn record_sent(&mut self, frame_type: FrameType, bytes: u64) {
        self.bytes_sent += bytes;
        self.sent_by_type[frame_type.index()] += bytes;
    }

    pub fn record_received(&mut self, frame_type: FrameType, bytes: u64) {
        self.bytes_received += bytes;
        self.received_by_type[frame_type.index()] += bytes;
    }

    pub fn flops(&self) -> u64 {
        self.flops_forward + self.flops_backward
    }

    pub fn bytes(&self) -> u64 {
        self.bytes_sent + self.bytes_received
    }

    /// Totals agree with their per-type breakdowns.
    pub fn is_consistent(&self) -> bool {
        self.sent_by_type.iter().sum::<u64>() == self.bytes_sent
            && self.received_by_type.iter().sum::<u64>() == self.bytes_received
    }

    /// Counter-wise `self - earlier`. Counters never decrease, so this is the
    /// activity between two snapshots of the same ledger.
    pub fn delta_since(&self, earlier: &ResourceLedger) -> ResourceLedger {
        let mut sent = [0; FrameType::COUNT];
        let mut received = [0; FrameType::COUNT];
        for i in 0..FrameType::COUNT {
            sent[i] = self.sent_by_type[i] - earlier.sent_by_type[i];
            received[i] = self.received_by_type[i] - earlier.received_by_type[i];
        }
        ResourceLedger {
            role: self.role.clone(),
            flops_forward: self.flops_forward - earlier.flops_forward,
            flops_backward: self.flops_backward - earlier.flops_backward,
            bytes_sent: self.bytes_sent - earlier.bytes_sent,
            bytes_received: self.bytes_received - earlier.bytes_received,
            sent_by_type: sent,
            received_by_type: received,
        }
    }

    /// Counter-wise sum.
    pub fn absorb(&mut self, other: &ResourceLedger) {
        self.flops_forward += other.flops_forward;
        self.flops_backward += other.flops_backward;
        self.bytes_sent += other.bytes_sent;
        self.bytes_received += other.bytes_received;
        for i in 0..FrameType::COUNT {
            self.sent_by_type[i] += other.sent_by_type[i];
            self.received_by_type[i] += other.received_by_type[i];
        }
    }

    /// Named counters, in a fixed order, for diffing and reporting.
    pub fn counters(&self) -> Vec<(String, u64)> {
        let mut out = vec![
            ("flops_forward".to_string(), self.flops_forward),
            ("flops_backward".to_string(), self.flops_backward),
            ("bytes_sent".to_string(), self.bytes_sent),
            ("bytes_received".to_string(), self.bytes_received),
        ];
        for ft in FrameType::ALL {
            out.push((format!("sent_{}", ft.name()), self.sent_by_type[ft.index()]));
        }
        for ft in FrameType::ALL {
            out.push((
                format!("received_{}", ft.name()),
                self.received_by_type[ft.index()],
            ));
        }
        out
    }
}

impl fmt::Display for ResourceLedger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: flops fwd {} bwd {}, bytes sent {} received {}",
            self.role, self.flops_forward, self.flops_backward, self.bytes_sent, self.bytes_received
        )
    }
}
