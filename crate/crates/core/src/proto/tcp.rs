//! TCP socket model with established-mode repair.
//!
//! The handshake and data transfer only track sequence space; there is no
//! retransmission or congestion control. Repair restores a socket from its
//! serialized record without emitting a SYN.

use thiserror::Error;

use super::{DecodeError, Endpoint, Reader};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TcpState {
    Listen,
    Established,
    Closed,
}

impl TcpState {
    fn code(self) -> u8 {
        match self {
            TcpState::Listen => 1,
            TcpState::Established => 2,
            TcpState::Closed => 3,
        }
    }

    fn from_code(c: u8) -> Result<Self, DecodeError> {
        Ok(match c {
            1 => TcpState::Listen,
            2 => TcpState::Established,
            3 => TcpState::Closed,
            v => {
                return Err(DecodeError::Invalid {
                    field: "tcp state",
                    value: v as u64,
                })
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TcpFlag {
    Syn,
    SynAck,
    Ack,
    Psh,
}

impl TcpFlag {
    pub fn name(self) -> &'static str {
        match self {
            TcpFlag::Syn => "SYN",
            TcpFlag::SynAck => "SYN-ACK",
            TcpFlag::Ack => "ACK",
            TcpFlag::Psh => "PSH",
        }
    }
}

/// A segment as seen on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub src: Endpoint,
    pub dst: Endpoint,
    pub flag: TcpFlag,
    pub seq: u32,
    pub ack: u32,
    pub payload_len: u32,
}

pub const TCP_HEADER_LEN: usize = 20;

impl Segment {
    pub fn wire_len(&self) -> usize {
        TCP_HEADER_LEN + self.payload_len as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TcpSocketState {
    pub local: Endpoint,
    pub remote: Option<Endpoint>,
    pub state: TcpState,
    pub snd_nxt: u32,
    pub rcv_nxt: u32,
    pub snd_wnd: u32,
    pub rcv_wnd: u32,
    pub repair_capable: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TcpError {
    #[error("corrupted socket record: {0}")]
    Decode(#[from] DecodeError),
    #[error("socket {0} is not established")]
    NotEstablished(Endpoint),
    #[error("socket {0} was checkpointed without repair mode")]
    RepairUnsupported(Endpoint),
}

const RECORD_TAG: u8 = b'T';
const DEFAULT_WINDOW: u32 = 65_535;

impl TcpSocketState {
    pub fn listen(local: Endpoint) -> Self {
        TcpSocketState {
            local,
            remote: None,
            state: TcpState::Listen,
            snd_nxt: 0,
            rcv_nxt: 0,
            snd_wnd: DEFAULT_WINDOW,
            rcv_wnd: DEFAULT_WINDOW,
            repair_capable: false,
        }
    }

    pub fn is_established(&self) -> bool {
        self.state == TcpState::Established
    }

    /// Sends `len` payload bytes; returns the segment to put on the wire.
    pub fn send(&mut self, len: u32) -> Segment {
        let seg = Segment {
            src: self.local,
            dst: self.remote.expect("send on unconnected socket"),
            flag: TcpFlag::Psh,
            seq: self.snd_nxt,
            ack: self.rcv_nxt,
            payload_len: len,
        };
        self.snd_nxt = self.snd_nxt.wrapping_add(len);
        seg
    }

    pub fn receive(&mut self, seg: &Segment) {
        debug_assert_eq!(seg.seq, self.rcv_nxt);
        self.rcv_nxt = self.rcv_nxt.wrapping_add(seg.payload_len);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40);
        out.push(RECORD_TAG);
        out.push(self.state.code());
        out.push(self.repair_capable as u8);
        self.local.put(&mut out);
        match self.remote {
            Some(r) => {
                out.push(1);
                r.put(&mut out);
            }
            None => out.push(0),
        }
        for v in [self.snd_nxt, self.rcv_nxt, self.snd_wnd, self.rcv_wnd] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(buf);
        let s = Self::take(&mut r)?;
        r.finish()?;
        Ok(s)
    }

    pub(crate) fn take(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let tag = r.u8()?;
        if tag != RECORD_TAG {
            return Err(DecodeError::Invalid {
                field: "tcp record tag",
                value: tag as u64,
            });
        }
        let state = TcpState::from_code(r.u8()?)?;
        let repair_capable = r.bool()?;
        let local = Endpoint::take(r)?;
        let remote = if r.bool()? { Some(Endpoint::take(r)?) } else { None };
        Ok(TcpSocketState {
            local,
            remote,
            state,
            snd_nxt: r.u32()?,
            rcv_nxt: r.u32()?,
            snd_wnd: r.u32()?,
            rcv_wnd: r.u32()?,
            repair_capable,
        })
    }
}

/// Three-way handshake between a client at `client` and a listening socket.
/// Returns both established ends and the three segments exchanged.
pub fn tcp_connect(
    client: Endpoint,
    server: &TcpSocketState,
    client_isn: u32,
    server_isn: u32,
) -> (TcpSocketState, TcpSocketState, Vec<Segment>) {
    assert_eq!(server.state, TcpState::Listen);
    let syn = Segment {
        src: client,
        dst: server.local,
        flag: TcpFlag::Syn,
        seq: client_isn,
        ack: 0,
        payload_len: 0,
    };
    let syn_ack = Segment {
        src: server.local,
        dst: client,
        flag: TcpFlag::SynAck,
        seq: server_isn,
        ack: client_isn.wrapping_add(1),
        payload_len: 0,
    };
    let ack = Segment {
        src: client,
        dst: server.local,
        flag: TcpFlag::Ack,
        seq: client_isn.wrapping_add(1),
        ack: server_isn.wrapping_add(1),
        payload_len: 0,
    };
    let c = TcpSocketState {
        local: client,
        remote: Some(server.local),
        state: TcpState::Established,
        snd_nxt: client_isn.wrapping_add(1),
        rcv_nxt: server_isn.wrapping_add(1),
        snd_wnd: DEFAULT_WINDOW,
        rcv_wnd: DEFAULT_WINDOW,
        repair_capable: false,
    };
    let s = TcpSocketState {
        local: server.local,
        remote: Some(client),
        state: TcpState::Established,
        snd_nxt: server_isn.wrapping_add(1),
        rcv_nxt: client_isn.wrapping_add(1),
        snd_wnd: DEFAULT_WINDOW,
        rcv_wnd: DEFAULT_WINDOW,
        repair_capable: false,
    };
    (c, s, vec![syn, syn_ack, ack])
}

/// Result of restoring a TCP socket record at a new host.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RestoredTcp {
    pub socket: TcpSocketState,
    pub host: String,
    /// Segments emitted by the restore itself. Always empty for repair.
    pub emitted: Vec<Segment>,
}

/// Recreates a socket from its serialized record. Listening sockets are simply
/// re-opened; established sockets require the repair flag.
pub fn tcp_repair_restore(serialized: &[u8], new_host: &str) -> Result<RestoredTcp, TcpError> {
    let socket = TcpSocketState::decode(serialized)?;
    match socket.state {
        TcpState::Listen => {}
        TcpState::Established if socket.repair_capable => {}
        TcpState::Established => return Err(TcpError::RepairUnsupported(socket.local)),
        TcpState::Closed => return Err(TcpError::NotEstablished(socket.local)),
    }
    Ok(RestoredTcp {
        socket,
        host: new_host.to_string(),
        emitted: Vec::new(),
    })
}
