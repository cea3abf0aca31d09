use std::collections::BTreeMap;

use super::{EngineError, TransportKind};
use crate::metering::ResourceLedger;
use crate::protocol::{self, tcp_pair, Binding, Frame, FrameType, Message, Transport};

/// One frame as it crossed a link.
#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptEntry {
    pub from: String,
    pub to: String,
    pub bytes: usize,
    pub frame: Frame,
}

type Link = (Box<dyn Transport>, Box<dyn Transport>);

/// Point-to-point links between roles plus the per-role ledgers they charge.
/// Links are opened on first use; every transfer is a real encode, send,
/// receive and decode.
pub struct Fabric {
    kind: TransportKind,
    roles: Vec<String>,
    links: BTreeMap<(usize, usize), Link>,
    ledgers: Vec<ResourceLedger>,
    transcript: Option<Vec<TranscriptEntry>>,
    addresses_used: usize,
    pub step: u32,
}

impl Fabric {
    pub fn new(roles: Vec<String>, kind: TransportKind) -> Self {
        let ledgers = roles.iter().map(ResourceLedger::new).collect();
        Self {
            kind,
            roles,
            links: BTreeMap::new(),
            ledgers,
            transcript: None,
            addresses_used: 0,
            step: 0,
        }
    }

    pub fn roles(&self) -> &[String] {
        &self.roles
    }

    pub fn role_index(&self, id: &str) -> Option<usize> {
        self.roles.iter().position(|r| r == id)
    }

    pub fn ledgers(&self) -> &[ResourceLedger] {
        &self.ledgers
    }

    pub fn ledger_mut(&mut self, role: usize) -> &mut ResourceLedger {
        &mut self.ledgers[role]
    }

    pub(crate) fn replace_ledgers(&mut self, ledgers: Vec<ResourceLedger>) -> Vec<ResourceLedger> {
        std::mem::replace(&mut self.ledgers, ledgers)
    }

    pub fn record_transcript(&mut self, on: bool) {
        self.transcript = on.then(Vec::new);
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        self.transcript.as_deref().unwrap_or(&[])
    }

    fn open(&mut self, a: usize, b: usize) -> Result<(), EngineError> {
        if self.links.contains_key(&(a, b)) {
            return Ok(());
        }
        let pair: (Box<dyn Transport>, Box<dyn Transport>) = match &self.kind {
            TransportKind::InProcess => {
                let (x, y) = protocol::in_process_pair();
                (Box::new(x), Box::new(y))
            }
            TransportKind::Tcp { addresses } => {
                let binding = if addresses.is_empty() {
                    Binding::Loopback
                } else {
                    let addr = addresses.get(self.addresses_used).ok_or_else(|| {
                        EngineError::Config(format!(
                            "{} tcp address(es) configured but more links are needed",
                            addresses.len()
                        ))
                    })?;
                    Binding::Address(addr.clone())
                };
                let (x, y) = tcp_pair(&binding).map_err(|source| EngineError::Transfer {
                    from: self.roles[a].clone(),
                    to: self.roles[b].clone(),
                    frame: None,
                    step: self.step,
                    source,
                })?;
                self.addresses_used += 1;
                (Box::new(x), Box::new(y))
            }
        };
        self.links.insert((a, b), pair);
        Ok(())
    }

    /// Moves one message from role `from` to role `to` and returns what the
    /// receiver decoded.
    pub fn transfer(&mut self, from: usize, to: usize, message: Message) -> Result<Message, EngineError> {
        let (a, b) = (from.min(to), from.max(to));
        self.open(a, b)?;
        let frame_type = message.frame_type();
        let frame = Frame::new(self.step, from as u16, message);
        let step = self.step;
        let err = |roles: &[String], source| EngineError::Transfer {
            from: roles[from].clone(),
            to: roles[to].clone(),
            frame: Some(frame_type),
            step,
            source,
        };
        let (end_a, end_b) = self.links.get_mut(&(a, b)).expect("opened above");
        let (tx, rx) = if from == a {
            (end_a, end_b)
        } else {
            (end_b, end_a)
        };
        let bytes = protocol::send(tx.as_mut(), &frame, &mut self.ledgers[from])
            .map_err(|e| err(&self.roles, e))?;
        let received = protocol::receive(rx.as_mut(), &mut self.ledgers[to])
            .map_err(|e| err(&self.roles, e))?;
        if let Some(t) = self.transcript.as_mut() {
            t.push(TranscriptEntry {
                from: self.roles[from].clone(),
                to: self.roles[to].clone(),
                bytes,
                frame: received.clone(),
            });
        }
        Ok(received.message)
    }

    pub fn count_frames(&self, frame_type: FrameType) -> usize {
        self.transcript()
            .iter()
            .filter(|e| e.frame.frame_type() == frame_type)
            .count()
    }
}
