//! Ethernet-over-WDM backhaul: racks and hosts, lightpaths, rate-limited
//! paths, the layer-2 firewall and the two addressing overlays.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::proto::gtp::Teid;
use crate::proto::ip::{IPV4_HEADER_LEN, UDP_HEADER_LEN};
use crate::sim::{SimDuration, SimError, SimTime};

/// Fiber propagation, microseconds per kilometre.
pub const PROPAGATION_US_PER_KM: f64 = 5.0;
/// Default per-hop switching latency.
pub const DEFAULT_HOP_LATENCY: SimDuration = SimDuration::from_micros(5);
/// Extra bytes the VPN overlay adds to every packet.
pub const VPN_OVERHEAD: usize = UDP_HEADER_LEN + IPV4_HEADER_LEN;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FabricError {
    #[error("unknown rack {0}")]
    UnknownRack(RackId),
    #[error("unknown host {0}")]
    UnknownHost(HostId),
    #[error("a {purpose} lightpath between {a} and {b} is already active")]
    DuplicateLightpath { a: RackId, b: RackId, purpose: Purpose },
    #[error("lightpath length must be a finite non-negative number, got {0}")]
    BadLength(f64),
    #[error("path has a zero-rate hop")]
    ZeroRate,
    #[error("path has no hops")]
    EmptyPath,
    #[error("efficiency must be in (0, 1], got {0}")]
    BadEfficiency(f64),
    #[error("no usable management lightpath between {0} and {1}")]
    NoManagementPath(RackId, RackId),
    #[error(transparent)]
    Time(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RackId(pub u16);

impl fmt::Display for RackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rack{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HostId(pub u16);

impl fmt::Display for HostId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "h{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Purpose {
    Management,
    Tenant,
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Purpose::Management => "management",
            Purpose::Tenant => "tenant",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Overlay {
    Vpn,
    FloatingIp,
}

impl Overlay {
    pub fn name(self) -> &'static str {
        match self {
            Overlay::Vpn => "vpn",
            Overlay::FloatingIp => "floating-ip",
        }
    }
}

impl fmt::Display for Overlay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LightpathSpec {
    pub a: RackId,
    pub b: RackId,
    pub length_km: f64,
    pub rate_bps: u64,
    pub purpose: Purpose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PathHandle(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Lightpath {
    pub spec: LightpathSpec,
    pub usable_at: SimTime,
}

/// Length-derived one-way fiber delay, rounded to the microsecond.
pub fn propagation_delay(length_km: f64) -> Result<SimDuration, FabricError> {
    if !length_km.is_finite() || length_km < 0.0 {
        return Err(FabricError::BadLength(length_km));
    }
    Ok(SimDuration::try_from_secs_f64(length_km * PROPAGATION_US_PER_KM / 1e6)?)
}

/// Serialization time of `bytes` at `rate_bps`, rounded up to the microsecond.
pub fn serialization_time(bytes: u64, rate_bps: u64) -> Result<SimDuration, FabricError> {
    if rate_bps == 0 {
        return Err(FabricError::ZeroRate);
    }
    let num = bytes as u128 * 8 * 1_000_000;
    let us = num.div_ceil(rate_bps as u128);
    Ok(SimDuration::from_micros(us as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hop {
    pub rate_bps: u64,
    pub latency: SimDuration,
}

/// An end-to-end path between two hosts.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkPath {
    pub hops: Vec<Hop>,
    /// Realized fraction of the slowest hop's line rate.
    pub efficiency: f64,
    pub length_km: f64,
    pub firewall: bool,
    pub overlay: Overlay,
}

impl NetworkPath {
    pub fn new(hops: Vec<Hop>, efficiency: f64, length_km: f64) -> Result<Self, FabricError> {
        if hops.is_empty() {
            return Err(FabricError::EmptyPath);
        }
        if hops.iter().any(|h| h.rate_bps == 0) {
            return Err(FabricError::ZeroRate);
        }
        if !(efficiency > 0.0 && efficiency <= 1.0) {
            return Err(FabricError::BadEfficiency(efficiency));
        }
        propagation_delay(length_km)?;
        Ok(NetworkPath {
            hops,
            efficiency,
            length_km,
            firewall: false,
            overlay: Overlay::Vpn,
        })
    }

    pub fn with_firewall(mut self, on: bool) -> Self {
        self.firewall = on;
        self
    }

    pub fn with_overlay(mut self, overlay: Overlay) -> Self {
        self.overlay = overlay;
        self
    }

    pub fn min_hop_rate(&self) -> u64 {
        self.hops.iter().map(|h| h.rate_bps).min().unwrap_or(0)
    }

    pub fn effective_rate_bps(&self) -> u64 {
        (self.min_hop_rate() as f64 * self.efficiency).floor() as u64
    }

    /// Sum of hop latencies plus fiber propagation.
    pub fn one_way_latency(&self) -> SimDuration {
        let hops: SimDuration = self.hops.iter().map(|h| h.latency).sum();
        hops + propagation_delay(self.length_km).unwrap_or_default()
    }

    pub fn rtt(&self) -> SimDuration {
        let l = self.one_way_latency();
        l + l
    }

    pub fn transfer_time(&self, bytes: u64) -> Result<SimDuration, FabricError> {
        transfer_time(bytes, self)
    }
}

/// `bytes` serialized at the path's effective rate plus all fixed latencies.
pub fn transfer_time(bytes: u64, path: &NetworkPath) -> Result<SimDuration, FabricError> {
    let rate = path.effective_rate_bps();
    Ok(serialization_time(bytes, rate)? + path.one_way_latency())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Protocol {
    Tcp,
    Sctp,
    Udp,
    Icmp,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Tcp => "tcp",
            Protocol::Sctp => "sctp",
            Protocol::Udp => "udp",
            Protocol::Icmp => "icmp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeaderKind {
    Ipv4,
    Udp,
    Tcp,
    Sctp,
    Icmp,
    Gtp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Header {
    pub kind: HeaderKind,
    pub len: usize,
}

/// Packet as the fabric sees it: a header stack, outermost first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub src: String,
    pub dst: String,
    pub protocol: Protocol,
    pub payload_len: usize,
    pub headers: Vec<Header>,
    pub teid: Option<Teid>,
    pub msgtype: String,
}

impl Packet {
    /// `header_len` covers the transport header; an IPv4 header is added.
    pub fn new(
        src: impl Into<String>,
        dst: impl Into<String>,
        protocol: Protocol,
        header_len: usize,
        payload_len: usize,
        msgtype: impl Into<String>,
    ) -> Self {
        let kind = match protocol {
            Protocol::Tcp => HeaderKind::Tcp,
            Protocol::Sctp => HeaderKind::Sctp,
            Protocol::Udp => HeaderKind::Udp,
            Protocol::Icmp => HeaderKind::Icmp,
        };
        Packet {
            src: src.into(),
            dst: dst.into(),
            protocol,
            payload_len,
            headers: vec![
                Header {
                    kind: HeaderKind::Ipv4,
                    len: IPV4_HEADER_LEN,
                },
                Header { kind, len: header_len },
            ],
            teid: None,
            msgtype: msgtype.into(),
        }
    }

    pub fn wire_len(&self) -> usize {
        self.headers.iter().map(|h| h.len).sum::<usize>() + self.payload_len
    }

    /// Protocol of the outermost transport header.
    pub fn outer_protocol(&self) -> Protocol {
        self.headers
            .iter()
            .find_map(|h| match h.kind {
                HeaderKind::Tcp => Some(Protocol::Tcp),
                HeaderKind::Sctp => Some(Protocol::Sctp),
                HeaderKind::Udp => Some(Protocol::Udp),
                HeaderKind::Icmp => Some(Protocol::Icmp),
                _ => None,
            })
            .unwrap_or(self.protocol)
    }

    pub fn is_vpn_wrapped(&self) -> bool {
        self.outer_protocol() == Protocol::Udp && self.protocol != Protocol::Udp
    }

    /// Wraps in the overlay's outer UDP/IP headers.
    pub fn vpn_encapsulate(mut self) -> Self {
        self.headers.splice(
            0..0,
            [
                Header {
                    kind: HeaderKind::Ipv4,
                    len: IPV4_HEADER_LEN,
                },
                Header {
                    kind: HeaderKind::Udp,
                    len: UDP_HEADER_LEN,
                },
            ],
        );
        self
    }

    /// Protocol label for traces, e.g. `sctp/udp` for an overlay-wrapped packet.
    pub fn proto_label(&self) -> String {
        let outer = self.outer_protocol();
        if outer == self.protocol {
            self.protocol.name().to_string()
        } else {
            format!("{}/{}", self.protocol.name(), outer.name())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Pass,
    Drop,
}

/// Layer-2 firewall: drops anything whose outermost transport is SCTP.
pub fn apply_firewall(packet: &Packet) -> Verdict {
    if packet.outer_protocol() == Protocol::Sctp {
        Verdict::Drop
    } else {
        Verdict::Pass
    }
}

/// Address-learning delays after an endpoint moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RerouteParams {
    pub rarp: SimDuration,
    pub vpn_reroute: SimDuration,
}

pub fn overlay_reroute(overlay: Overlay, params: &RerouteParams) -> SimDuration {
    match overlay {
        Overlay::FloatingIp => params.rarp,
        Overlay::Vpn => params.rarp + params.vpn_reroute,
    }
}

/// Outcome tally for every packet handed to the fabric.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PacketCounters {
    pub injected: u64,
    pub delivered: u64,
    pub firewall_dropped: u64,
    pub unknown_teid_dropped: u64,
    /// Dropped because the destination was frozen or not yet reachable.
    pub blackholed: u64,
}

impl PacketCounters {
    pub fn is_conserved(&self) -> bool {
        self.injected == self.delivered + self.firewall_dropped + self.unknown_teid_dropped + self.blackholed
    }
}

/// One line of the wire trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireRecord {
    pub time: SimTime,
    pub link: String,
    pub proto: String,
    pub src: String,
    pub dst: String,
    pub len: usize,
    pub teid: Option<Teid>,
    pub msgtype: String,
}

impl fmt::Display for WireRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}→{}\t{}\t",
            self.time.as_micros(),
            self.link,
            self.proto,
            self.src,
            self.dst,
            self.len
        )?;
        if let Some(t) = self.teid {
            write!(f, "{}", t)?;
        } else {
            f.write_str("-")?;
        }
        write!(f, "\t{}", self.msgtype)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FabricConfig {
    pub hop_latency: SimDuration,
    pub lightpath_setup: SimDuration,
    pub firewall: bool,
    pub overlay: Overlay,
}

impl Default for FabricConfig {
    fn default() -> Self {
        FabricConfig {
            hop_latency: DEFAULT_HOP_LATENCY,
            lightpath_setup: SimDuration::ZERO,
            firewall: true,
            overlay: Overlay::Vpn,
        }
    }
}

/// Racks, hosts and the active lightpath table.
#[derive(Debug, Clone)]
pub struct Fabric {
    pub config: FabricConfig,
    racks: Vec<RackId>,
    hosts: BTreeMap<HostId, RackId>,
    lightpaths: Vec<Lightpath>,
    pub counters: PacketCounters,
    pub wire: Vec<WireRecord>,
}

impl Fabric {
    /// Racks are numbered from 1; hosts are numbered rack-major from 1.
    pub fn new(config: FabricConfig, racks: u16, hosts_per_rack: u16) -> Self {
        let racks: Vec<RackId> = (1..=racks).map(RackId).collect();
        let mut hosts = BTreeMap::new();
        let mut next = 1;
        for r in &racks {
            for _ in 0..hosts_per_rack {
                hosts.insert(HostId(next), *r);
                next += 1;
            }
        }
        Fabric {
            config,
            racks,
            hosts,
            lightpaths: Vec::new(),
            counters: PacketCounters::default(),
            wire: Vec::new(),
        }
    }

    pub fn racks(&self) -> &[RackId] {
        &self.racks
    }

    pub fn hosts(&self) -> impl Iterator<Item = (HostId, RackId)> + '_ {
        self.hosts.iter().map(|(h, r)| (*h, *r))
    }

    pub fn rack_of(&self, host: HostId) -> Result<RackId, FabricError> {
        self.hosts.get(&host).copied().ok_or(FabricError::UnknownHost(host))
    }

    pub fn lightpath(&self, h: PathHandle) -> Option<&Lightpath> {
        self.lightpaths.get(h.0)
    }

    pub fn provision_lightpath(&mut self, spec: LightpathSpec, now: SimTime) -> Result<PathHandle, FabricError> {
        for r in [spec.a, spec.b] {
            if !self.racks.contains(&r) {
                return Err(FabricError::UnknownRack(r));
            }
        }
        propagation_delay(spec.length_km)?;
        if spec.rate_bps == 0 {
            return Err(FabricError::ZeroRate);
        }
        let same_pair = |l: &Lightpath| {
            l.spec.purpose == spec.purpose
                && ((l.spec.a, l.spec.b) == (spec.a, spec.b) || (l.spec.a, l.spec.b) == (spec.b, spec.a))
        };
        if self.lightpaths.iter().any(same_pair) {
            return Err(FabricError::DuplicateLightpath {
                a: spec.a,
                b: spec.b,
                purpose: spec.purpose,
            });
        }
        self.lightpaths.push(Lightpath {
            spec,
            usable_at: now + self.config.lightpath_setup,
        });
        Ok(PathHandle(self.lightpaths.len() - 1))
    }

    /// Active management lightpath between two racks, if usable at `now`.
    pub fn management_lightpath(&self, a: RackId, b: RackId, now: SimTime) -> Result<&Lightpath, FabricError> {
        self.lightpaths
            .iter()
            .find(|l| {
                l.spec.purpose == Purpose::Management
                    && ((l.spec.a, l.spec.b) == (a, b) || (l.spec.a, l.spec.b) == (b, a))
                    && l.usable_at <= now
            })
            .ok_or(FabricError::NoManagementPath(a, b))
    }

    /// Pushes a packet through the firewall, recording it on the wire.
    pub fn send(&mut self, now: SimTime, link: &str, packet: &Packet) -> Verdict {
        self.counters.injected += 1;
        self.wire.push(WireRecord {
            time: now,
            link: link.to_string(),
            proto: packet.proto_label(),
            src: packet.src.clone(),
            dst: packet.dst.clone(),
            len: packet.wire_len(),
            teid: packet.teid,
            msgtype: packet.msgtype.clone(),
        });
        let verdict = if self.config.firewall {
            apply_firewall(packet)
        } else {
            Verdict::Pass
        };
        if verdict == Verdict::Drop {
            self.counters.firewall_dropped += 1;
        }
        verdict
    }

    /// Records a bulk transfer (metadata or VM image stream) on the wire.
    pub fn record_bulk(&mut self, now: SimTime, link: &str, src: &str, dst: &str, bytes: u64, msgtype: &str) {
        self.wire.push(WireRecord {
            time: now,
            link: link.to_string(),
            proto: "tcp".to_string(),
            src: src.to_string(),
            dst: dst.to_string(),
            len: bytes as usize,
            teid: None,
            msgtype: msgtype.to_string(),
        });
    }
}
