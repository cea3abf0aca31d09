use std::io::{Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread::JoinHandle;
use std::time::Duration;

use super::frame::{decode, encode, Frame, HEADER_LEN};
use super::ProtocolError;
use crate::metering::ResourceLedger;

pub const DEFAULT_RECV_TIMEOUT: Duration = Duration::from_secs(30);

/// One end of a bidirectional, ordered link carrying whole frames.
pub trait Transport: Send {
    fn send_bytes(&mut self, bytes: Vec<u8>) -> Result<(), ProtocolError>;
    fn recv_bytes(&mut self) -> Result<Vec<u8>, ProtocolError>;
    fn kind(&self) -> &'static str;
}

/// Encodes and sends a frame, charging its full length to the sender's ledger.
pub fn send(
    transport: &mut dyn Transport,
    frame: &Frame,
    ledger: &mut ResourceLedger,
) -> Result<usize, ProtocolError> {
    let bytes = encode(frame);
    let n = bytes.len();
    transport.send_bytes(bytes)?;
    ledger.record_sent(frame.frame_type(), n as u64);
    Ok(n)
}

/// Receives and decodes one frame, charging its length to the receiver's ledger.
pub fn receive(
    transport: &mut dyn Transport,
    ledger: &mut ResourceLedger,
) -> Result<Frame, ProtocolError> {
    let bytes = transport.recv_bytes()?;
    let frame = decode(&bytes)?;
    ledger.record_received(frame.frame_type(), bytes.len() as u64);
    Ok(frame)
}

fn recv_with_timeout(rx: &Receiver<Vec<u8>>, timeout: Duration) -> Result<Vec<u8>, ProtocolError> {
    rx.recv_timeout(timeout).map_err(|e| match e {
        RecvTimeoutError::Timeout => ProtocolError::Timeout(timeout),
        RecvTimeoutError::Disconnected => ProtocolError::ChannelClosed,
    })
}

pub struct InProcessEndpoint {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    timeout: Duration,
}

impl InProcessEndpoint {
    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }
}

pub fn in_process_pair() -> (InProcessEndpoint, InProcessEndpoint) {
    let (tx_a, rx_b) = mpsc::channel();
    let (tx_b, rx_a) = mpsc::channel();
    (
        InProcessEndpoint {
            tx: tx_a,
            rx: rx_a,
            timeout: DEFAULT_RECV_TIMEOUT,
        },
        InProcessEndpoint {
            tx: tx_b,
            rx: rx_b,
            timeout: DEFAULT_RECV_TIMEOUT,
        },
    )
}

impl Transport for InProcessEndpoint {
    fn send_bytes(&mut self, bytes: Vec<u8>) -> Result<(), ProtocolError> {
        self.tx.send(bytes).map_err(|_| ProtocolError::ChannelClosed)
    }

    fn recv_bytes(&mut self) -> Result<Vec<u8>, ProtocolError> {
        recv_with_timeout(&self.rx, self.timeout)
    }

    fn kind(&self) -> &'static str {
        "inprocess"
    }
}

/// Where the listening side of a TCP link binds.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Binding {
    /// 127.0.0.1 on an OS-assigned port.
    #[default]
    Loopback,
    Address(String),
}

/// A TCP socket plus a reader thread that splits the byte stream into
/// frames, so a single-threaded caller can write without deadlocking on a
/// full socket buffer.
pub struct TcpEndpoint {
    stream: TcpStream,
    rx: Receiver<Vec<u8>>,
    reader: Option<JoinHandle<()>>,
    timeout: Duration,
}

impl TcpEndpoint {
    fn spawn(stream: TcpStream) -> Result<Self, ProtocolError> {
        stream.set_nodelay(true)?;
        let mut read_half = stream.try_clone()?;
        let (tx, rx) = mpsc::channel();
        let reader = std::thread::spawn(move || {
            while let Some(frame) = read_frame(&mut read_half) {
                if tx.send(frame).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            stream,
            rx,
            reader: Some(reader),
            timeout: DEFAULT_RECV_TIMEOUT,
        })
    }

    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    pub fn local_addr(&self) -> Option<std::net::SocketAddr> {
        self.stream.local_addr().ok()
    }
}

/// Reads one header plus the payload length it announces. Returns None on
/// end of stream or error; a frame with a corrupt header still comes through
/// whole so the decoder can report it.
fn read_frame(stream: &mut TcpStream) -> Option<Vec<u8>> {
    let mut header = [0u8; HEADER_LEN];
    stream.read_exact(&mut header).ok()?;
    let len = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let mut buf = vec![0u8; HEADER_LEN + len];
    buf[..HEADER_LEN].copy_from_slice(&header);
    stream.read_exact(&mut buf[HEADER_LEN..]).ok()?;
    Some(buf)
}

/// Two connected TCP endpoints. The first is the listening side.
pub fn tcp_pair(binding: &Binding) -> Result<(TcpEndpoint, TcpEndpoint), ProtocolError> {
    let addr = match binding {
        Binding::Loopback => "127.0.0.1:0".to_string(),
        Binding::Address(a) => a.clone(),
    };
    let listener = TcpListener::bind(&addr)?;
    let target = listener.local_addr()?;
    let client = TcpStream::connect(target)?;
    let (server, _) = listener.accept()?;
    Ok((TcpEndpoint::spawn(server)?, TcpEndpoint::spawn(client)?))
}

impl Transport for TcpEndpoint {
    fn send_bytes(&mut self, bytes: Vec<u8>) -> Result<(), ProtocolError> {
        self.stream.write_all(&bytes).map_err(|e| match e.kind() {
            std::io::ErrorKind::BrokenPipe | std::io::ErrorKind::ConnectionReset => {
                ProtocolError::ChannelClosed
            }
            _ => e.into(),
        })
    }

    fn recv_bytes(&mut self) -> Result<Vec<u8>, ProtocolError> {
        recv_with_timeout(&self.rx, self.timeout)
    }

    fn kind(&self) -> &'static str {
        "tcp"
    }
}

impl Drop for TcpEndpoint {
    fn drop(&mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
    }
}
