//! GTP-U (user plane) over IPv4/UDP.
//!
//! Only the mandatory 8-byte header is produced and accepted: version 1,
//! protocol type GTP, no extension/sequence/N-PDU flags, message type G-PDU.

use std::collections::BTreeMap;
use std::fmt;
use std::net::Ipv4Addr;

use thiserror::Error;

use super::ip::{Ipv4Header, UdpHeader, IPV4_HEADER_LEN, PROTO_UDP, UDP_HEADER_LEN};
use super::{DecodeError, Reader};

pub const GTPU_PORT: u16 = 2152;
pub const GTP_HEADER_LEN: usize = 8;
/// Outer IPv4 + UDP + GTP bytes added by encapsulation.
pub const ENCAP_OVERHEAD: usize = IPV4_HEADER_LEN + UDP_HEADER_LEN + GTP_HEADER_LEN;

const FLAGS_V1_GTP: u8 = 0x30;
const MSG_GPDU: u8 = 0xff;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Teid(pub u32);

impl fmt::Display for Teid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#010x}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UeId(pub u32);

impl fmt::Display for UeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ue{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GtpError {
    #[error("malformed packet: {0}")]
    Decode(#[from] DecodeError),
    #[error("not a GTP-U packet (udp dst port {0})")]
    NotGtpu(u16),
    #[error("unknown TEID {0}")]
    UnknownTeid(Teid),
    #[error("TEID {0} already present in tunnel table")]
    DuplicateTeid(Teid),
    #[error("TEID must be nonzero")]
    ZeroTeid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GtpHeader {
    pub flags: u8,
    pub msg_type: u8,
    /// Payload length after the mandatory header.
    pub length: u16,
    pub teid: Teid,
}

impl GtpHeader {
    pub fn gpdu(teid: Teid, payload_len: usize) -> Self {
        GtpHeader {
            flags: FLAGS_V1_GTP,
            msg_type: MSG_GPDU,
            length: payload_len as u16,
            teid,
        }
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.push(self.flags);
        out.push(self.msg_type);
        out.extend_from_slice(&self.length.to_be_bytes());
        out.extend_from_slice(&self.teid.0.to_be_bytes());
    }

    pub fn decode(buf: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(buf);
        let flags = r.u8()?;
        if flags != FLAGS_V1_GTP {
            return Err(DecodeError::Invalid {
                field: "gtp flags",
                value: flags as u64,
            });
        }
        let msg_type = r.u8()?;
        if msg_type != MSG_GPDU {
            return Err(DecodeError::Invalid {
                field: "gtp message type",
                value: msg_type as u64,
            });
        }
        let length = r.u16()?;
        let teid = Teid(r.u32()?);
        Ok(GtpHeader {
            flags,
            msg_type,
            length,
            teid,
        })
    }
}

/// One side of a UE bearer tunnel. `local_teid` is what this end expects in
/// received packets; `peer_teid` is stamped on packets it sends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GtpTunnelEntry {
    pub ue_id: UeId,
    pub local_teid: Teid,
    pub peer_teid: Teid,
    pub peer_addr: Ipv4Addr,
    pub ue_inner_addr: Ipv4Addr,
}

pub const TUNNEL_ENTRY_LEN: usize = 20;

impl GtpTunnelEntry {
    pub(crate) fn put(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.ue_id.0.to_be_bytes());
        out.extend_from_slice(&self.local_teid.0.to_be_bytes());
        out.extend_from_slice(&self.peer_teid.0.to_be_bytes());
        out.extend_from_slice(&self.peer_addr.octets());
        out.extend_from_slice(&self.ue_inner_addr.octets());
    }

    pub(crate) fn take(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(GtpTunnelEntry {
            ue_id: UeId(r.u32()?),
            local_teid: Teid(r.u32()?),
            peer_teid: Teid(r.u32()?),
            peer_addr: Ipv4Addr::from(r.array::<4>()?),
            ue_inner_addr: Ipv4Addr::from(r.array::<4>()?),
        })
    }
}

/// Tunnel list keyed by local TEID.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GtpTunnelTable {
    entries: BTreeMap<Teid, GtpTunnelEntry>,
}

impl GtpTunnelTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, entry: GtpTunnelEntry) -> Result<(), GtpError> {
        if entry.local_teid.0 == 0 || entry.peer_teid.0 == 0 {
            return Err(GtpError::ZeroTeid);
        }
        if self.entries.contains_key(&entry.local_teid) {
            return Err(GtpError::DuplicateTeid(entry.local_teid));
        }
        self.entries.insert(entry.local_teid, entry);
        Ok(())
    }

    pub fn get(&self, teid: Teid) -> Option<&GtpTunnelEntry> {
        self.entries.get(&teid)
    }

    pub fn by_ue(&self, ue: UeId) -> Option<&GtpTunnelEntry> {
        self.entries.values().find(|e| e.ue_id == ue)
    }

    pub fn remove(&mut self, teid: Teid) -> Option<GtpTunnelEntry> {
        self.entries.remove(&teid)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn teids(&self) -> impl Iterator<Item = Teid> + '_ {
        self.entries.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &GtpTunnelEntry> {
        self.entries.values()
    }

    /// Smallest unused nonzero TEID at or above `hint`.
    pub fn free_teid(&self, hint: u32) -> Teid {
        let mut t = hint.max(1);
        while self.entries.contains_key(&Teid(t)) {
            t = t.wrapping_add(1).max(1);
        }
        Teid(t)
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.entries.len() as u32).to_be_bytes());
        for e in self.entries.values() {
            e.put(out);
        }
    }

    pub fn decode(buf: &[u8]) -> Result<Self, GtpError> {
        let mut r = Reader::new(buf);
        let n = r.u32()? as usize;
        let mut t = GtpTunnelTable::new();
        for _ in 0..n {
            t.insert(GtpTunnelEntry::take(&mut r)?)?;
        }
        r.finish()?;
        Ok(t)
    }
}

/// Wraps an inner IP packet in outer IPv4/UDP/GTP-U headers addressed to the
/// tunnel peer.
pub fn gtp_encap(inner: &[u8], entry: &GtpTunnelEntry, local_addr: Ipv4Addr) -> Vec<u8> {
    let udp_payload = GTP_HEADER_LEN + inner.len();
    let mut out = Vec::with_capacity(ENCAP_OVERHEAD + inner.len());
    Ipv4Header::new(local_addr, entry.peer_addr, PROTO_UDP, UDP_HEADER_LEN + udp_payload).encode(&mut out);
    UdpHeader::new(GTPU_PORT, GTPU_PORT, udp_payload).encode(&mut out);
    GtpHeader::gpdu(entry.peer_teid, inner.len()).encode(&mut out);
    out.extend_from_slice(inner);
    out
}

/// Parses outer headers and returns the inner packet if the TEID is known.
pub fn gtp_decap(outer: &[u8], table: &GtpTunnelTable) -> Result<Vec<u8>, GtpError> {
    let (teid, inner) = parse_outer(outer)?;
    if table.get(teid).is_none() {
        return Err(GtpError::UnknownTeid(teid));
    }
    Ok(inner.to_vec())
}

/// Validates outer headers without a table lookup.
pub fn parse_outer(outer: &[u8]) -> Result<(Teid, &[u8]), GtpError> {
    let ip = Ipv4Header::decode(outer)?;
    if ip.protocol != PROTO_UDP {
        return Err(DecodeError::Invalid {
            field: "ipv4 protocol",
            value: ip.protocol as u64,
        }
        .into());
    }
    let rest = &outer[IPV4_HEADER_LEN..ip.total_len as usize];
    let udp = UdpHeader::decode(rest)?;
    if udp.dst_port != GTPU_PORT {
        return Err(GtpError::NotGtpu(udp.dst_port));
    }
    let rest = &rest[UDP_HEADER_LEN..udp.length as usize];
    let gtp = GtpHeader::decode(rest)?;
    let payload = &rest[GTP_HEADER_LEN..];
    if gtp.length as usize != payload.len() {
        return Err(DecodeError::Invalid {
            field: "gtp length",
            value: gtp.length as u64,
        }
        .into());
    }
    Ok((gtp.teid, payload))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proto::ip::icmp_echo;
    use proptest::prelude::*;

    fn entry() -> GtpTunnelEntry {
        GtpTunnelEntry {
            ue_id: UeId(1),
            local_teid: Teid(0x10),
            peer_teid: Teid(0xabcd),
            peer_addr: Ipv4Addr::new(10, 0, 1, 10),
            ue_inner_addr: Ipv4Addr::new(12, 1, 1, 2),
        }
    }

    fn spgw_side(e: &GtpTunnelEntry) -> GtpTunnelTable {
        let mut t = GtpTunnelTable::new();
        t.insert(GtpTunnelEntry {
            ue_id: e.ue_id,
            local_teid: e.peer_teid,
            peer_teid: e.local_teid,
            peer_addr: Ipv4Addr::new(10, 0, 0, 5),
            ue_inner_addr: e.ue_inner_addr,
        })
        .unwrap();
        t
    }

    #[test]
    fn encap_adds_36_bytes() {
        let inner = icmp_echo(Ipv4Addr::new(12, 1, 1, 2), Ipv4Addr::new(8, 8, 8, 8), 1, 1, 84);
        let outer = gtp_encap(&inner, &entry(), Ipv4Addr::new(10, 0, 0, 5));
        assert_eq!(outer.len(), 120);
    }

    #[test]
    fn encap_stamps_peer_teid() {
        let outer = gtp_encap(&[0u8; 30], &entry(), Ipv4Addr::new(10, 0, 0, 5));
        let (teid, _) = parse_outer(&outer).unwrap();
        assert_eq!(teid, Teid(0xabcd));
        assert_eq!(&outer[IPV4_HEADER_LEN + UDP_HEADER_LEN..][..2], &[0x30, 0xff]);
    }

    #[test]
    fn decap_known_teid() {
        let inner = icmp_echo(Ipv4Addr::new(12, 1, 1, 2), Ipv4Addr::new(8, 8, 8, 8), 1, 9, 84);
        let e = entry();
        let outer = gtp_encap(&inner, &e, Ipv4Addr::new(10, 0, 0, 5));
        assert_eq!(gtp_decap(&outer, &spgw_side(&e)).unwrap(), inner);
    }

    #[test]
    fn decap_unknown_teid() {
        let outer = gtp_encap(&[1, 2, 3], &entry(), Ipv4Addr::new(10, 0, 0, 5));
        assert_eq!(
            gtp_decap(&outer, &GtpTunnelTable::new()),
            Err(GtpError::UnknownTeid(Teid(0xabcd)))
        );
    }

    #[test]
    fn decap_malformed_header() {
        let e = entry();
        let mut outer = gtp_encap(&[1, 2, 3], &e, Ipv4Addr::new(10, 0, 0, 5));
        outer[IPV4_HEADER_LEN + UDP_HEADER_LEN] = 0x32; // sequence flag set
        assert!(matches!(gtp_decap(&outer, &spgw_side(&e)), Err(GtpError::Decode(_))));
        assert!(matches!(
            gtp_decap(&outer[..25], &spgw_side(&e)),
            Err(GtpError::Decode(_))
        ));
    }

    #[test]
    fn decap_wrong_port() {
        let e = entry();
        let mut outer = gtp_encap(&[1, 2, 3], &e, Ipv4Addr::new(10, 0, 0, 5));
        outer[IPV4_HEADER_LEN + 3] = 0x4b; // dst port 2123 (GTP-C)
        assert_eq!(gtp_decap(&outer, &spgw_side(&e)), Err(GtpError::NotGtpu(2123)));
    }

    #[test]
    fn table_rejects_duplicate_and_zero() {
        let mut t = GtpTunnelTable::new();
        t.insert(entry()).unwrap();
        assert_eq!(t.insert(entry()), Err(GtpError::DuplicateTeid(Teid(0x10))));
        let mut z = entry();
        z.local_teid = Teid(0);
        assert_eq!(t.insert(z), Err(GtpError::ZeroTeid));
        assert_eq!(t.free_teid(0x10), Teid(0x11));
    }

    proptest! {
        #[test]
        fn encap_decap_identity(payload in proptest::collection::vec(any::<u8>(), 0..1400),
                                local in 1u32.., peer in 1u32..) {
            let e = GtpTunnelEntry { local_teid: Teid(local), peer_teid: Teid(peer), ..entry() };
            let outer = gtp_encap(&payload, &e, Ipv4Addr::new(10, 0, 0, 5));
            prop_assert_eq!(outer.len(), payload.len() + ENCAP_OVERHEAD);
            let inner = gtp_decap(&outer, &spgw_side(&e)).unwrap();
            prop_assert_eq!(inner, payload);
        }
    }
}
