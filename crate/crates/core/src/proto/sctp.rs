//! One-to-one style SCTP: four-way handshake, DATA bookkeeping and
//! association repair.
//!
//! A one-to-one socket carries at most one association. A listening socket
//! answers INIT statelessly with a signed cookie and only creates state when
//! the cookie comes back, at which point it hands out a new connected socket.

use thiserror::Error;

use super::{DecodeError, Endpoint, Reader};

pub const COMMON_HEADER_LEN: usize = 12;
const DEFAULT_RWND: u32 = 106_496;
const COOKIE_SECRET: u32 = 0x5c7b_a3e1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SctpState {
    Closed,
    CookieWait,
    CookieEchoed,
    Established,
}

impl SctpState {
    fn code(self) -> u8 {
        match self {
            SctpState::Closed => 0,
            SctpState::CookieWait => 1,
            SctpState::CookieEchoed => 2,
            SctpState::Established => 3,
        }
    }

    fn from_code(c: u8) -> Result<Self, DecodeError> {
        Ok(match c {
            0 => SctpState::Closed,
            1 => SctpState::CookieWait,
            2 => SctpState::CookieEchoed,
            3 => SctpState::Established,
            v => {
                return Err(DecodeError::Invalid {
                    field: "sctp state",
                    value: v as u64,
                })
            }
        })
    }
}

/// Only the one-to-one style is modelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SocketStyle {
    OneToOne,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Chunk {
    Init {
        init_tag: u32,
        a_rwnd: u32,
        out_streams: u16,
        in_streams: u16,
        initial_tsn: u32,
    },
    InitAck {
        init_tag: u32,
        a_rwnd: u32,
        out_streams: u16,
        in_streams: u16,
        initial_tsn: u32,
        cookie: Vec<u8>,
    },
    CookieEcho {
        cookie: Vec<u8>,
    },
    CookieAck,
    Data {
        tsn: u32,
        stream: u16,
        ssn: u16,
        len: u32,
    },
    Sack {
        cum_tsn: u32,
    },
}

impl Chunk {
    pub fn name(&self) -> &'static str {
        match self {
            Chunk::Init { .. } => "INIT",
            Chunk::InitAck { .. } => "INIT-ACK",
            Chunk::CookieEcho { .. } => "COOKIE-ECHO",
            Chunk::CookieAck => "COOKIE-ACK",
            Chunk::Data { .. } => "DATA",
            Chunk::Sack { .. } => "SACK",
        }
    }

    pub fn wire_len(&self) -> usize {
        match self {
            Chunk::Init { .. } => 20,
            Chunk::InitAck { cookie, .. } => 20 + 4 + cookie.len(),
            Chunk::CookieEcho { cookie } => 4 + cookie.len(),
            Chunk::CookieAck => 4,
            Chunk::Data { len, .. } => 16 + *len as usize,
            Chunk::Sack { .. } => 16,
        }
    }

    pub fn is_setup(&self) -> bool {
        matches!(
            self,
            Chunk::Init { .. } | Chunk::InitAck { .. } | Chunk::CookieEcho { .. } | Chunk::CookieAck
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SctpPacket {
    pub src: Endpoint,
    pub dst: Endpoint,
    pub vtag: u32,
    pub chunk: Chunk,
}

impl SctpPacket {
    pub fn wire_len(&self) -> usize {
        COMMON_HEADER_LEN + self.chunk.wire_len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SctpAssociationState {
    pub local: Endpoint,
    pub remote: Endpoint,
    pub style: SocketStyle,
    pub state: SctpState,
    pub local_vtag: u32,
    pub peer_vtag: u32,
    pub next_tsn: u32,
    pub peer_cum_tsn: u32,
    pub out_streams: u16,
    pub in_streams: u16,
    /// Next outbound stream sequence number, per stream.
    pub stream_ssn: Vec<u16>,
    pub repair_capable: bool,
}

const ASSOC_TAG: u8 = b'S';
const SOCKET_TAG: u8 = b'K';

impl SctpAssociationState {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(48 + 2 * self.stream_ssn.len());
        self.put(&mut out);
        out
    }

    pub(crate) fn put(&self, out: &mut Vec<u8>) {
        out.push(ASSOC_TAG);
        out.push(self.state.code());
        out.push(self.repair_capable as u8);
        out.push(0); // style: one-to-one
        self.local.put(out);
        self.remote.put(out);
        for v in [self.local_vtag, self.peer_vtag, self.next_tsn, self.peer_cum_tsn] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(&self.out_streams.to_be_bytes());
        out.extend_from_slice(&self.in_streams.to_be_bytes());
        out.extend_from_slice(&(self.stream_ssn.len() as u16).to_be_bytes());
        for s in &self.stream_ssn {
            out.extend_from_slice(&s.to_be_bytes());
        }
    }

    pub fn decode(buf: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(buf);
        let a = Self::take(&mut r)?;
        r.finish()?;
        Ok(a)
    }

    pub(crate) fn take(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let tag = r.u8()?;
        if tag != ASSOC_TAG {
            return Err(DecodeError::Invalid {
                field: "sctp record tag",
                value: tag as u64,
            });
        }
        let state = SctpState::from_code(r.u8()?)?;
        let repair_capable = r.bool()?;
        let style = r.u8()?;
        if style != 0 {
            return Err(DecodeError::Invalid {
                field: "sctp socket style",
                value: style as u64,
            });
        }
        let local = Endpoint::take(r)?;
        let remote = Endpoint::take(r)?;
        let local_vtag = r.u32()?;
        let peer_vtag = r.u32()?;
        let next_tsn = r.u32()?;
        let peer_cum_tsn = r.u32()?;
        let out_streams = r.u16()?;
        let in_streams = r.u16()?;
        let n = r.u16()? as usize;
        let stream_ssn = (0..n).map(|_| r.u16()).collect::<Result<_, _>>()?;
        Ok(SctpAssociationState {
            local,
            remote,
            style: SocketStyle::OneToOne,
            state,
            local_vtag,
            peer_vtag,
            next_tsn,
            peer_cum_tsn,
            out_streams,
            in_streams,
            stream_ssn,
            repair_capable,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SctpError {
    #[error("corrupted association record: {0}")]
    Decode(#[from] DecodeError),
    #[error("association {0} was checkpointed without SCTP repair mode")]
    RepairUnsupported(Endpoint),
    #[error("association {local} is {state:?}, not established")]
    NotEstablished { local: Endpoint, state: SctpState },
    #[error("one-to-one socket {0} already has an association")]
    AlreadyAssociated(Endpoint),
    #[error("association setup to {remote} timed out after {attempts} INIT attempts")]
    Timeout { remote: Endpoint, attempts: u32 },
    #[error("unexpected {chunk} in state {state:?}")]
    Unexpected { chunk: &'static str, state: SctpState },
    #[error("cookie failed verification")]
    BadCookie,
    #[error("verification tag mismatch")]
    BadVtag,
}

/// One-to-one style socket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SctpSocket {
    pub local: Endpoint,
    pub listening: bool,
    pub assoc: Option<SctpAssociationState>,
}

/// What handling one inbound packet produced.
#[derive(Debug, Default)]
pub struct Handled {
    pub reply: Option<SctpPacket>,
    /// Newly accepted connection on a listening socket.
    pub accepted: Option<SctpSocket>,
}

impl SctpSocket {
    pub fn listener(local: Endpoint) -> Self {
        SctpSocket {
            local,
            listening: true,
            assoc: None,
        }
    }

    pub fn client(local: Endpoint) -> Self {
        SctpSocket {
            local,
            listening: false,
            assoc: None,
        }
    }

    pub fn association(&self) -> Option<&SctpAssociationState> {
        self.assoc.as_ref()
    }

    pub fn is_established(&self) -> bool {
        self.assoc.as_ref().is_some_and(|a| a.state == SctpState::Established)
    }

    /// Starts association setup; returns the INIT to send.
    pub fn connect(
        &mut self,
        remote: Endpoint,
        init_tag: u32,
        initial_tsn: u32,
        streams: u16,
    ) -> Result<SctpPacket, SctpError> {
        if self.assoc.is_some() {
            return Err(SctpError::AlreadyAssociated(self.local));
        }
        self.assoc = Some(SctpAssociationState {
            local: self.local,
            remote,
            style: SocketStyle::OneToOne,
            state: SctpState::CookieWait,
            local_vtag: init_tag,
            peer_vtag: 0,
            next_tsn: initial_tsn,
            peer_cum_tsn: 0,
            out_streams: streams,
            in_streams: streams,
            stream_ssn: vec![0; streams as usize],
            repair_capable: false,
        });
        Ok(SctpPacket {
            src: self.local,
            dst: remote,
            vtag: 0,
            chunk: Chunk::Init {
                init_tag,
                a_rwnd: DEFAULT_RWND,
                out_streams: streams,
                in_streams: streams,
                initial_tsn,
            },
        })
    }

    pub fn handle(&mut self, pkt: &SctpPacket, server_tag: u32, server_tsn: u32) -> Result<Handled, SctpError> {
        if self.listening {
            return self.handle_listening(pkt, server_tag, server_tsn);
        }
        let assoc = self.assoc.as_mut().ok_or(SctpError::Unexpected {
            chunk: pkt.chunk.name(),
            state: SctpState::Closed,
        })?;
        if pkt.vtag != assoc.local_vtag {
            return Err(SctpError::BadVtag);
        }
        match (&pkt.chunk, assoc.state) {
            (
                Chunk::InitAck {
                    init_tag,
                    initial_tsn,
                    out_streams,
                    cookie,
                    ..
                },
                SctpState::CookieWait,
            ) => {
                assoc.peer_vtag = *init_tag;
                assoc.peer_cum_tsn = initial_tsn.wrapping_sub(1);
                assoc.in_streams = assoc.in_streams.min(*out_streams);
                assoc.state = SctpState::CookieEchoed;
                Ok(Handled {
                    reply: Some(SctpPacket {
                        src: assoc.local,
                        dst: assoc.remote,
                        vtag: assoc.peer_vtag,
                        chunk: Chunk::CookieEcho { cookie: cookie.clone() },
                    }),
                    accepted: None,
                })
            }
            (Chunk::CookieAck, SctpState::CookieEchoed) => {
                assoc.state = SctpState::Established;
                Ok(Handled::default())
            }
            (Chunk::Data { tsn, len, .. }, SctpState::Established) => {
                debug_assert_eq!(*tsn, assoc.peer_cum_tsn.wrapping_add(1));
                let _ = len;
                assoc.peer_cum_tsn = *tsn;
                Ok(Handled::default())
            }
            (Chunk::Sack { .. }, SctpState::Established) => Ok(Handled::default()),
            (c, state) => Err(SctpError::Unexpected { chunk: c.name(), state }),
        }
    }

    fn handle_listening(&mut self, pkt: &SctpPacket, server_tag: u32, server_tsn: u32) -> Result<Handled, SctpError> {
        match &pkt.chunk {
            Chunk::Init {
                init_tag,
                out_streams,
                in_streams,
                initial_tsn,
                ..
            } => {
                let streams = (*out_streams).min(*in_streams);
                let cookie = Cookie {
                    peer: pkt.src,
                    local_tag: server_tag,
                    peer_tag: *init_tag,
                    local_tsn: server_tsn,
                    peer_tsn: *initial_tsn,
                    streams,
                }
                .seal();
                Ok(Handled {
                    reply: Some(SctpPacket {
                        src: self.local,
                        dst: pkt.src,
                        vtag: *init_tag,
                        chunk: Chunk::InitAck {
                            init_tag: server_tag,
                            a_rwnd: DEFAULT_RWND,
                            out_streams: streams,
                            in_streams: streams,
                            initial_tsn: server_tsn,
                            cookie,
                        },
                    }),
                    accepted: None,
                })
            }
            Chunk::CookieEcho { cookie } => {
                let c = Cookie::open(cookie)?;
                if c.local_tag != pkt.vtag {
                    return Err(SctpError::BadVtag);
                }
                let assoc = SctpAssociationState {
                    local: self.local,
                    remote: c.peer,
                    style: SocketStyle::OneToOne,
                    state: SctpState::Established,
                    local_vtag: c.local_tag,
                    peer_vtag: c.peer_tag,
                    next_tsn: c.local_tsn,
                    peer_cum_tsn: c.peer_tsn.wrapping_sub(1),
                    out_streams: c.streams,
                    in_streams: c.streams,
                    stream_ssn: vec![0; c.streams as usize],
                    repair_capable: false,
                };
                Ok(Handled {
                    reply: Some(SctpPacket {
                        src: self.local,
                        dst: c.peer,
                        vtag: c.peer_tag,
                        chunk: Chunk::CookieAck,
                    }),
                    accepted: Some(SctpSocket {
                        local: self.local,
                        listening: false,
                        assoc: Some(assoc),
                    }),
                })
            }
            c => Err(SctpError::Unexpected {
                chunk: c.name(),
                state: SctpState::Closed,
            }),
        }
    }

    /// Queues one DATA chunk of `len` bytes on `stream`.
    pub fn send_data(&mut self, stream: u16, len: u32) -> Result<SctpPacket, SctpError> {
        let state = self.assoc.as_ref().map_or(SctpState::Closed, |a| a.state);
        if state != SctpState::Established {
            return Err(SctpError::NotEstablished {
                local: self.local,
                state,
            });
        }
        let assoc = self.assoc.as_mut().expect("established implies association");
        let idx = stream as usize % assoc.stream_ssn.len().max(1);
        let ssn = assoc.stream_ssn.get(idx).copied().unwrap_or(0);
        if let Some(s) = assoc.stream_ssn.get_mut(idx) {
            *s = s.wrapping_add(1);
        }
        let tsn = assoc.next_tsn;
        assoc.next_tsn = tsn.wrapping_add(1);
        Ok(SctpPacket {
            src: assoc.local,
            dst: assoc.remote,
            vtag: assoc.peer_vtag,
            chunk: Chunk::Data { tsn, stream, ssn, len },
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.push(SOCKET_TAG);
        out.push(self.listening as u8);
        self.local.put(&mut out);
        match &self.assoc {
            Some(a) => {
                out.push(1);
                a.put(&mut out);
            }
            None => out.push(0),
        }
        out
    }

    pub(crate) fn take(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let tag = r.u8()?;
        if tag != SOCKET_TAG {
            return Err(DecodeError::Invalid {
                field: "sctp socket tag",
                value: tag as u64,
            });
        }
        let listening = r.bool()?;
        let local = Endpoint::take(r)?;
        let assoc = if r.bool()? {
            Some(SctpAssociationState::take(r)?)
        } else {
            None
        };
        Ok(SctpSocket {
            local,
            listening,
            assoc,
        })
    }

    pub fn decode(buf: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(buf);
        let s = Self::take(&mut r)?;
        r.finish()?;
        Ok(s)
    }
}

struct Cookie {
    peer: Endpoint,
    local_tag: u32,
    peer_tag: u32,
    local_tsn: u32,
    peer_tsn: u32,
    streams: u16,
}

impl Cookie {
    fn seal(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(30);
        self.peer.put(&mut out);
        for v in [self.local_tag, self.peer_tag, self.local_tsn, self.peer_tsn] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(&self.streams.to_be_bytes());
        let mac = mac(&out);
        out.extend_from_slice(&mac.to_be_bytes());
        out
    }

    fn open(buf: &[u8]) -> Result<Cookie, SctpError> {
        if buf.len() < 4 {
            return Err(SctpError::BadCookie);
        }
        let (body, tail) = buf.split_at(buf.len() - 4);
        if mac(body).to_be_bytes() != tail {
            return Err(SctpError::BadCookie);
        }
        let mut r = Reader::new(body);
        let c = Cookie {
            peer: Endpoint::take(&mut r)?,
            local_tag: r.u32()?,
            peer_tag: r.u32()?,
            local_tsn: r.u32()?,
            peer_tsn: r.u32()?,
            streams: r.u16()?,
        };
        r.finish()?;
        Ok(c)
    }
}

fn mac(body: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(&COOKIE_SECRET.to_be_bytes());
    h.update(body);
    h.finalize()
}

/// Parameters for [`sctp_associate`].
#[derive(Debug, Clone, Copy)]
pub struct AssociateParams {
    pub client_tag: u32,
    pub client_tsn: u32,
    pub server_tag: u32,
    pub server_tsn: u32,
    pub streams: u16,
    pub max_init_attempts: u32,
}

/// Runs the four-way handshake. `transport` is called for every packet put on
/// the wire and returns whether it was delivered. Lost INITs are retried up to
/// `max_init_attempts` times in total before giving up.
pub fn sctp_associate(
    client: &mut SctpSocket,
    server: &mut SctpSocket,
    params: AssociateParams,
    mut transport: impl FnMut(&SctpPacket) -> bool,
) -> Result<SctpSocket, SctpError> {
    let remote = server.local;
    let init = client.connect(remote, params.client_tag, params.client_tsn, params.streams)?;
    let mut attempts = 0;
    loop {
        attempts += 1;
        if transport(&init) {
            break;
        }
        if attempts >= params.max_init_attempts {
            client.assoc = None;
            return Err(SctpError::Timeout { remote, attempts });
        }
    }
    let mut pending = init;
    let mut to_server = true;
    let mut accepted = None;
    loop {
        let handled = if to_server {
            server.handle(&pending, params.server_tag, params.server_tsn)?
        } else {
            client.handle(&pending, 0, 0)?
        };
        if handled.accepted.is_some() {
            accepted = handled.accepted;
        }
        match handled.reply {
            Some(reply) => {
                if !transport(&reply) {
                    client.assoc = None;
                    return Err(SctpError::Timeout { remote, attempts });
                }
                pending = reply;
                to_server = !to_server;
            }
            None => break,
        }
    }
    match accepted {
        Some(s) if client.is_established() => Ok(s),
        _ => Err(SctpError::NotEstablished {
            local: client.local,
            state: client.assoc.as_ref().map_or(SctpState::Closed, |a| a.state),
        }),
    }
}

/// Restored association and what the restore itself put on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RestoredSctp {
    pub socket: SctpSocket,
    pub host: String,
    pub emitted: Vec<SctpPacket>,
}

/// Rebuilds an established association from its serialized record at a new
/// host without a handshake.
pub fn sctp_repair_restore(serialized: &[u8], new_host: &str) -> Result<RestoredSctp, SctpError> {
    let assoc = SctpAssociationState::decode(serialized)?;
    if assoc.state != SctpState::Established {
        return Err(SctpError::NotEstablished {
            local: assoc.local,
            state: assoc.state,
        });
    }
    if !assoc.repair_capable {
        return Err(SctpError::RepairUnsupported(assoc.local));
    }
    Ok(RestoredSctp {
        socket: SctpSocket {
            local: assoc.local,
            listening: false,
            assoc: Some(assoc),
        },
        host: new_host.to_string(),
        emitted: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::Ipv4Addr;

    fn cu() -> Endpoint {
        Endpoint::new(Ipv4Addr::new(10, 8, 0, 6), 36412)
    }

    fn mme() -> Endpoint {
        Endpoint::new(Ipv4Addr::new(10, 8, 0, 2), 36412)
    }

    fn params() -> AssociateParams {
        AssociateParams {
            client_tag: 0x1111,
            client_tsn: 100,
            server_tag: 0x2222,
            server_tsn: 900,
            streams: 2,
            max_init_attempts: 3,
        }
    }

    fn established() -> (SctpSocket, SctpSocket, Vec<&'static str>) {
        let mut client = SctpSocket::client(cu());
        let mut listener = SctpSocket::listener(mme());
        let mut wire = Vec::new();
        let server = sctp_associate(&mut client, &mut listener, params(), |p| {
            wire.push(p.chunk.name());
            true
        })
        .unwrap();
        (client, server, wire)
    }

    #[test]
    fn four_way_handshake() {
        let (client, server, wire) = established();
        assert_eq!(wire, ["INIT", "INIT-ACK", "COOKIE-ECHO", "COOKIE-ACK"]);
        let c = client.association().unwrap();
        let s = server.association().unwrap();
        assert_eq!(c.state, SctpState::Established);
        assert_eq!(c.peer_vtag, s.local_vtag);
        assert_eq!(s.peer_vtag, c.local_vtag);
        assert_eq!(c.peer_cum_tsn, 899);
        assert_eq!(s.peer_cum_tsn, 99);
    }

    #[test]
    fn dropped_init_times_out() {
        let mut client = SctpSocket::client(cu());
        let mut listener = SctpSocket::listener(mme());
        let mut sent = 0;
        let err = sctp_associate(&mut client, &mut listener, params(), |_| {
            sent += 1;
            false
        })
        .unwrap_err();
        assert_eq!(
            err,
            SctpError::Timeout {
                remote: mme(),
                attempts: 3
            }
        );
        assert_eq!(sent, 3);
        assert!(client.assoc.is_none());
    }

    #[test]
    fn one_to_one_allows_single_association() {
        let (mut client, _, _) = established();
        assert_eq!(client.connect(mme(), 1, 1, 1), Err(SctpError::AlreadyAssociated(cu())));
    }

    #[test]
    fn data_advances_tsn_on_both_ends() {
        let (mut client, mut server, _) = established();
        let pkt = client.send_data(1, 200).unwrap();
        server.handle(&pkt, 0, 0).unwrap();
        assert_eq!(server.association().unwrap().peer_cum_tsn, 100);
        assert_eq!(client.association().unwrap().next_tsn, 101);
        assert_eq!(client.association().unwrap().stream_ssn, vec![0, 1]);
    }

    #[test]
    fn tampered_cookie_rejected() {
        let mut listener = SctpSocket::listener(mme());
        let mut client = SctpSocket::client(cu());
        let init = client.connect(mme(), 5, 5, 1).unwrap();
        let ack = listener.handle(&init, 7, 7).unwrap().reply.unwrap();
        let mut echo = client.handle(&ack, 0, 0).unwrap().reply.unwrap();
        if let Chunk::CookieEcho { cookie } = &mut echo.chunk {
            cookie[0] ^= 1;
        }
        assert_eq!(listener.handle(&echo, 7, 7).unwrap_err(), SctpError::BadCookie);
    }

    #[test]
    fn repair_restores_without_handshake() {
        let (_, mut server, _) = established();
        server.assoc.as_mut().unwrap().repair_capable = true;
        let rec = server.association().unwrap().encode();
        let r = sctp_repair_restore(&rec, "h2").unwrap();
        assert!(r.emitted.is_empty());
        assert_eq!(r.socket, server);
    }

    #[test]
    fn repair_off_is_unsupported() {
        let (_, server, _) = established();
        let rec = server.association().unwrap().encode();
        assert_eq!(
            sctp_repair_restore(&rec, "h2"),
            Err(SctpError::RepairUnsupported(mme()))
        );
    }

    #[test]
    fn closed_record_fails_precondition() {
        let (_, server, _) = established();
        let mut a = server.association().unwrap().clone();
        a.state = SctpState::Closed;
        a.repair_capable = true;
        assert!(matches!(
            sctp_repair_restore(&a.encode(), "h2"),
            Err(SctpError::NotEstablished { .. })
        ));
    }

    #[test]
    fn socket_record_roundtrip() {
        let (_, server, _) = established();
        assert_eq!(SctpSocket::decode(&server.encode()).unwrap(), server);
        let l = SctpSocket::listener(mme());
        assert_eq!(SctpSocket::decode(&l.encode()).unwrap(), l);
    }
}
