use super::ProtocolError;
use crate::Tensor32;

pub const MAGIC: [u8; 4] = *b"SPLN";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FrameType {
    Activation = 1,
    Gradient = 2,
    Weights = 3,
    Logits = 4,
    Labels = 5,
    Control = 6,
}

impl FrameType {
    pub const COUNT: usize = 6;
    pub const ALL: [FrameType; 6] = [
        FrameType::Activation,
        FrameType::Gradient,
        FrameType::Weights,
        FrameType::Logits,
        FrameType::Labels,
        FrameType::Control,
    ];

    pub fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| *t as u8 == b)
    }

    /// Zero-based index for per-type tables.
    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn name(self) -> &'static str {
        match self {
            FrameType::Activation => "activation",
            FrameType::Gradient => "gradient",
            FrameType::Weights => "weights",
            FrameType::Logits => "logits",
            FrameType::Labels => "labels",
            FrameType::Control => "control",
        }
    }
}

impl std::fmt::Display for FrameType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlOp {
    EndEpoch,
    Shutdown,
    /// Rows `start..start + count` of the aligned shards form the next batch.
    BatchRange { start: u32, count: u32 },
}

impl ControlOp {
    fn opcode(self) -> u8 {
        match self {
            ControlOp::EndEpoch => 1,
            ControlOp::Shutdown => 2,
            ControlOp::BatchRange { .. } => 3,
        }
    }

    fn payload_len(self) -> usize {
        match self {
            ControlOp::BatchRange { .. } => 9,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Activation(Vec<Tensor32>),
    Gradient(Vec<Tensor32>),
    Weights(Vec<Tensor32>),
    Logits(Vec<Tensor32>),
    Labels(Vec<u16>),
    Control(ControlOp),
}

impl Message {
    pub fn frame_type(&self) -> FrameType {
        match self {
            Message::Activation(_) => FrameType::Activation,
            Message::Gradient(_) => FrameType::Gradient,
            Message::Weights(_) => FrameType::Weights,
            Message::Logits(_) => FrameType::Logits,
            Message::Labels(_) => FrameType::Labels,
            Message::Control(_) => FrameType::Control,
        }
    }

    pub fn tensors(&self) -> &[Tensor32] {
        match self {
            Message::Activation(t)
            | Message::Gradient(t)
            | Message::Weights(t)
            | Message::Logits(t) => t,
            _ => &[],
        }
    }

    pub fn into_tensors(self) -> Vec<Tensor32> {
        match self {
            Message::Activation(t)
            | Message::Gradient(t)
            | Message::Weights(t)
            | Message::Logits(t) => t,
            _ => Vec::new(),
        }
    }

    fn payload_len(&self) -> usize {
        match self {
            Message::Labels(l) => 4 + 2 * l.len(),
            Message::Control(op) => op.payload_len(),
            other => other
                .tensors()
                .iter()
                .map(|t| tensor_payload_len(t.shape()))
                .sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub step: u32,
    pub role_tag: u16,
    pub message: Message,
}

impl Frame {
    pub fn new(step: u32, role_tag: u16, message: Message) -> Self {
        Self {
            step,
            role_tag,
            message,
        }
    }

    pub fn frame_type(&self) -> FrameType {
        self.message.frame_type()
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.message.payload_len()
    }
}

/// Bytes of one tensor payload of the given shape.
pub fn tensor_payload_len(shape: &[usize]) -> usize {
    4 + 4 * shape.len() + 4 * shape.iter().product::<usize>()
}

pub fn frame_len(payload_len: usize) -> usize {
    HEADER_LEN + payload_len
}

/// Full frame length for a tensor sequence with these shapes.
pub fn tensors_frame_len<S: AsRef<[usize]>>(shapes: &[S]) -> usize {
    frame_len(shapes.iter().map(|s| tensor_payload_len(s.as_ref())).sum())
}

pub fn labels_frame_len(count: usize) -> usize {
    frame_len(4 + 2 * count)
}

pub fn control_frame_len(op: ControlOp) -> usize {
    frame_len(op.payload_len())
}

pub fn encode(frame: &Frame) -> Vec<u8> {
    let payload_len = frame.message.payload_len();
    let mut out = Vec::with_capacity(HEADER_LEN + payload_len);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(frame.frame_type() as u8);
    out.extend_from_slice(&frame.step.to_le_bytes());
    out.extend_from_slice(&frame.role_tag.to_le_bytes());
    out.extend_from_slice(&(payload_len as u32).to_le_bytes());
    match &frame.message {
        Message::Labels(labels) => {
            out.extend_from_slice(&(labels.len() as u32).to_le_bytes());
            for l in labels {
                out.extend_from_slice(&l.to_le_bytes());
            }
        }
        Message::Control(op) => {
            out.push(op.opcode());
            if let ControlOp::BatchRange { start, count } = op {
                out.extend_from_slice(&start.to_le_bytes());
                out.extend_from_slice(&count.to_le_bytes());
            }
        }
        other => {
            for t in other.tensors() {
                out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
                for &d in t.shape() {
                    out.extend_from_slice(&(d as u32).to_le_bytes());
                }
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    debug_assert_eq!(out.len(), HEADER_LEN + payload_len);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        if self.bytes.len() - self.pos < n {
            return Err(ProtocolError::Malformed {
                offset: self.pos,
                reason: format!("needs {n} more byte(s), {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn decode(bytes: &[u8]) -> Result<Frame, ProtocolError> {
    if bytes.len() < HEADER_LEN {
        return Err(ProtocolError::LengthMismatch {
            offset: 0,
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(ProtocolError::BadMagic {
            offset: 0,
            found: magic,
        });
    }
    if bytes[4] != VERSION {
        return Err(ProtocolError::UnsupportedVersion {
            offset: 4,
            version: bytes[4],
        });
    }
    let frame_type = FrameType::from_byte(bytes[5]).ok_or(ProtocolError::UnknownFrameType {
        offset: 5,
        value: bytes[5],
    })?;
    let step = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    let role_tag = u16::from_le_bytes(bytes[10..12].try_into().unwrap());
    let payload_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let found = bytes.len() - HEADER_LEN;
    if found != payload_len {
        return Err(ProtocolError::LengthMismatch {
            offset: 12,
            expected: payload_len,
            found,
        });
    }

    let mut r = Reader {
        bytes,
        pos: HEADER_LEN,
    };
    let message = match frame_type {
        FrameType::Labels => {
            let count = r.u32()? as usize;
            let expect = count.checked_mul(2).and_then(|n| n.checked_add(4));
            if expect != Some(payload_len) {
                return Err(ProtocolError::Malformed {
                    offset: HEADER_LEN,
                    reason: format!("{count} labels do not fill a {payload_len}-byte payload"),
                });
            }
            let raw = r.take(2 * count)?;
            Message::Labels(
                raw.chunks_exact(2)
                    .map(|c| u16::from_le_bytes([c[0], c[1]]))
                    .collect(),
            )
        }
        FrameType::Control => {
            let at = r.pos;
            let op = match r.take(1)?[0] {
                1 => ControlOp::EndEpoch,
                2 => ControlOp::Shutdown,
                3 => ControlOp::BatchRange {
                    start: r.u32()?,
                    count: r.u32()?,
                },
                other => {
                    return Err(ProtocolError::Malformed {
                        offset: at,
                        reason: format!("unknown control opcode {other}"),
                    })
                }
            };
            Message::Control(op)
        }
        tensor_type => {
            let mut tensors = Vec::new();
            while !r.done() {
                tensors.push(read_tensor(&mut r)?);
            }
            match tensor_type {
                FrameType::Activation => Message::Activation(tensors),
                FrameType::Gradient => Message::Gradient(tensors),
                FrameType::Weights => Message::Weights(tensors),
                _ => Message::Logits(tensors),
            }
        }
    };
    if !r.done() {
        return Err(ProtocolError::Malformed {
            offset: r.pos,
            reason: "trailing bytes after payload".into(),
        });
    }
    Ok(Frame {
        step,
        role_tag,
        message,
    })
}

fn read_tensor(r: &mut Reader<'_>) -> Result<Tensor32, ProtocolError> {
    let at = r.pos;
    let rank = r.u32()? as usize;
    let remaining = r.bytes.len() - r.pos;
    if rank > remaining / 4 {
        return Err(ProtocolError::Malformed {
            offset: at,
            reason: format!("rank {rank} exceeds the payload"),
        });
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32()? as usize);
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|n| n.checked_mul(4).is_some_and(|b| b <= r.bytes.len() - r.pos))
        .ok_or_else(|| ProtocolError::Malformed {
            offset: at,
            reason: format!("dims {shape:?} exceed the payload"),
        })?;
    let raw = r.take(4 * numel)?;
    let values: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(ProtocolError::Malformed {
            offset: at,
            reason: "non-finite tensor value".into(),
        });
    }
    Tensor32::new(shape, values).map_err(|e| ProtocolError::Malformed {
        offset: at,
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn act(shape: &[usize]) -> Frame {
        let n = shape.iter().product();
        Frame::new(
            7,
            0,
            Message::Activation(vec![Tensor32::new(shape.to_vec(), vec![0.5; n]).unwrap()]),
        )
    }

    #[test]
    fn format_arithmetic() {
        assert_eq!(encode(&act(&[32, 16])).len(), 2076);
        assert_eq!(tensors_frame_len(&[[32, 16]]), 2076);
        let labels = Frame::new(0, 0, Message::Labels(vec![1; 32]));
        assert_eq!(encode(&labels).len(), 84);
        assert_eq!(labels_frame_len(32), 84);
        let end = Frame::new(0, 0, Message::Control(ControlOp::EndEpoch));
        assert_eq!(encode(&end).len(), 17);
        assert_eq!(control_frame_len(ControlOp::EndEpoch), 17);
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&Frame::new(
            0x0102_0304,
            0x0506,
            Message::Control(ControlOp::Shutdown),
        ));
        assert_eq!(&bytes[0..4], b"SPLN");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 6);
        assert_eq!(&bytes[6..10], &[4, 3, 2, 1]);
        assert_eq!(&bytes[10..12], &[6, 5]);
        assert_eq!(&bytes[12..16], &[1, 0, 0, 0]);
        assert_eq!(bytes[16], 2);
    }

    #[test]
    fn round_trip_tensor() {
        let data: Vec<f32> = (0..15).map(|i| i as f32 * 0.25 - 1.0).collect();
        let frame = Frame::new(
            3,
            2,
            Message::Gradient(vec![Tensor32::new(vec![3, 5], data).unwrap()]),
        );
        assert_eq!(decode(&encode(&frame)).unwrap(), frame);
    }

    #[test]
    fn rejects_bad_headers() {
        let mut bytes = encode(&act(&[2, 2]));
        bytes[0..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode(&bytes), Err(ProtocolError::BadMagic { offset: 0, .. })));

        let mut bytes = encode(&act(&[2, 2]));
        bytes[4] = 2;
        assert!(matches!(
            decode(&bytes),
            Err(ProtocolError::UnsupportedVersion { offset: 4, version: 2 })
        ));

        let mut bytes = encode(&act(&[2, 2]));
        bytes[5] = 9;
        assert!(matches!(
            decode(&bytes),
            Err(ProtocolError::UnknownFrameType { offset: 5, value: 9 })
        ));
    }

    #[test]
    fn truncated_payload_is_a_length_mismatch() {
        let mut bytes = encode(&Frame::new(0, 0, Message::Labels(vec![0; 48])));
        assert_eq!(bytes.len() - HEADER_LEN, 100);
        bytes.truncate(HEADER_LEN + 50);
        assert_eq!(
            decode(&bytes),
            Err(ProtocolError::LengthMismatch {
                offset: 12,
                expected: 100,
                found: 50
            })
        );
        assert!(matches!(
            decode(&bytes[..10]),
            Err(ProtocolError::LengthMismatch { offset: 0, .. })
        ));
    }

    #[test]
    fn rejects_inconsistent_payloads() {
        // Tensor dims that claim more values than present.
        let mut bytes = encode(&act(&[2, 2]));
        bytes[HEADER_LEN + 4..HEADER_LEN + 8].copy_from_slice(&3u32.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(ProtocolError::Malformed { .. })));

        // Unknown control opcode.
        let mut bytes = encode(&Frame::new(0, 0, Message::Control(ControlOp::EndEpoch)));
        bytes[HEADER_LEN] = 42;
        assert!(matches!(decode(&bytes), Err(ProtocolError::Malformed { .. })));

        // Label count disagreeing with the payload length.
        let mut bytes = encode(&Frame::new(0, 0, Message::Labels(vec![1, 2])));
        bytes[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&5u32.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(ProtocolError::Malformed { .. })));
    }
}
