//! Minimal IPv4 / UDP / ICMP header handling for the user plane.

use std::net::Ipv4Addr;

use super::{DecodeError, Reader};

pub const IPV4_HEADER_LEN: usize = 20;
pub const UDP_HEADER_LEN: usize = 8;
pub const ICMP_HEADER_LEN: usize = 8;

pub const PROTO_ICMP: u8 = 1;
pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;
pub const PROTO_SCTP: u8 = 132;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ipv4Header {
    pub total_len: u16,
    pub ident: u16,
    pub ttl: u8,
    pub protocol: u8,
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
}

impl Ipv4Header {
    pub fn new(src: Ipv4Addr, dst: Ipv4Addr, protocol: u8, payload_len: usize) -> Self {
        Ipv4Header {
            total_len: (IPV4_HEADER_LEN + payload_len) as u16,
            ident: 0,
            ttl: 64,
            protocol,
            src,
            dst,
        }
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        let start = out.len();
        out.push(0x45);
        out.push(0);
        out.extend_from_slice(&self.total_len.to_be_bytes());
        out.extend_from_slice(&self.ident.to_be_bytes());
        out.extend_from_slice(&0x4000u16.to_be_bytes()); // DF
        out.push(self.ttl);
        out.push(self.protocol);
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&self.src.octets());
        out.extend_from_slice(&self.dst.octets());
        let csum = checksum(&out[start..start + IPV4_HEADER_LEN]);
        out[start + 10..start + 12].copy_from_slice(&csum.to_be_bytes());
    }

    /// Parses an option-less IPv4 header and verifies its checksum.
    pub fn decode(buf: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(buf);
        let vihl = r.u8()?;
        if vihl != 0x45 {
            return Err(DecodeError::Invalid {
                field: "ipv4 version/ihl",
                value: vihl as u64,
            });
        }
        r.u8()?;
        let total_len = r.u16()?;
        let ident = r.u16()?;
        r.u16()?;
        let ttl = r.u8()?;
        let protocol = r.u8()?;
        r.u16()?;
        let src = Ipv4Addr::from(r.array::<4>()?);
        let dst = Ipv4Addr::from(r.array::<4>()?);
        if checksum(&buf[..IPV4_HEADER_LEN]) != 0 {
            return Err(DecodeError::Invalid {
                field: "ipv4 checksum",
                value: u16::from_be_bytes([buf[10], buf[11]]) as u64,
            });
        }
        if (total_len as usize) < IPV4_HEADER_LEN || total_len as usize > buf.len() {
            return Err(DecodeError::Invalid {
                field: "ipv4 total length",
                value: total_len as u64,
            });
        }
        Ok(Ipv4Header {
            total_len,
            ident,
            ttl,
            protocol,
            src,
            dst,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UdpHeader {
    pub src_port: u16,
    pub dst_port: u16,
    pub length: u16,
}

impl UdpHeader {
    pub fn new(src_port: u16, dst_port: u16, payload_len: usize) -> Self {
        UdpHeader {
            src_port,
            dst_port,
            length: (UDP_HEADER_LEN + payload_len) as u16,
        }
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.src_port.to_be_bytes());
        out.extend_from_slice(&self.dst_port.to_be_bytes());
        out.extend_from_slice(&self.length.to_be_bytes());
        out.extend_from_slice(&[0, 0]); // checksum optional over IPv4
    }

    pub fn decode(buf: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(buf);
        let h = UdpHeader {
            src_port: r.u16()?,
            dst_port: r.u16()?,
            length: r.u16()?,
        };
        r.u16()?;
        if (h.length as usize) < UDP_HEADER_LEN || h.length as usize > buf.len() {
            return Err(DecodeError::Invalid {
                field: "udp length",
                value: h.length as u64,
            });
        }
        Ok(h)
    }
}

/// RFC 1071 internet checksum.
pub fn checksum(data: &[u8]) -> u16 {
    let mut sum: u32 = 0;
    let mut chunks = data.chunks_exact(2);
    for c in &mut chunks {
        sum += u16::from_be_bytes([c[0], c[1]]) as u32;
    }
    if let [b] = chunks.remainder() {
        sum += (*b as u32) << 8;
    }
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// Builds an ICMP echo request IPv4 packet of exactly `total_len` bytes.
pub fn icmp_echo(src: Ipv4Addr, dst: Ipv4Addr, id: u16, seq: u16, total_len: usize) -> Vec<u8> {
    assert!(total_len >= IPV4_HEADER_LEN + ICMP_HEADER_LEN);
    let payload_len = total_len - IPV4_HEADER_LEN;
    let mut out = Vec::with_capacity(total_len);
    Ipv4Header::new(src, dst, PROTO_ICMP, payload_len).encode(&mut out);
    let icmp_start = out.len();
    out.extend_from_slice(&[8, 0, 0, 0]);
    out.extend_from_slice(&id.to_be_bytes());
    out.extend_from_slice(&seq.to_be_bytes());
    out.extend((0..payload_len - ICMP_HEADER_LEN).map(|i| i as u8));
    let csum = checksum(&out[icmp_start..]);
    out[icmp_start + 2..icmp_start + 4].copy_from_slice(&csum.to_be_bytes());
    out
}
