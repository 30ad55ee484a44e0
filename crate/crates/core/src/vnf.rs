//! EPC processes (HSS, MME, SPGW), their flavors, memory, sockets and
//! component-specific state, plus host placement and UE attach plumbing.

use std::collections::BTreeMap;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use thiserror::Error;

use crate::fabric::HostId;
use crate::proto::gtp::{GtpError, GtpTunnelEntry, GtpTunnelTable, Teid, UeId};
use crate::proto::sctp::SctpSocket;
use crate::proto::tcp::TcpSocketState;
use crate::proto::{DecodeError, Reader};
use crate::sim::SimDuration;

pub const PAGE_SIZE: u64 = 4096;

/// Control messages exchanged by one UE attach.
pub const ATTACH_MESSAGES: [(&str, Component, Component); 6] = [
    ("AttachRequest", Component::Cu, Component::Mme),
    ("AuthInfoRequest", Component::Mme, Component::Hss),
    ("AuthInfoAnswer", Component::Hss, Component::Mme),
    ("CreateSessionRequest", Component::Mme, Component::Spgw),
    ("CreateSessionResponse", Component::Spgw, Component::Mme),
    ("AttachAccept", Component::Mme, Component::Cu),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VnfKind {
    Hss,
    Mme,
    Spgw,
}

impl VnfKind {
    pub const ALL: [VnfKind; 3] = [VnfKind::Hss, VnfKind::Mme, VnfKind::Spgw];

    pub fn name(self) -> &'static str {
        match self {
            VnfKind::Hss => "hss",
            VnfKind::Mme => "mme",
            VnfKind::Spgw => "spgw",
        }
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(c: u8) -> Result<Self, DecodeError> {
        VnfKind::ALL.get(c as usize).copied().ok_or(DecodeError::Invalid {
            field: "vnf kind",
            value: c as u64,
        })
    }
}

impl fmt::Display for VnfKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VnfKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        VnfKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown vnf kind `{s}` (expected hss, mme or spgw)"))
    }
}

/// Anything that sends or receives control messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Component {
    Hss,
    Mme,
    Spgw,
    Cu,
}

impl Component {
    pub fn name(self) -> &'static str {
        match self {
            Component::Hss => "hss",
            Component::Mme => "mme",
            Component::Spgw => "spgw",
            Component::Cu => "cu",
        }
    }

    pub fn vnf(self) -> Option<VnfKind> {
        match self {
            Component::Hss => Some(VnfKind::Hss),
            Component::Mme => Some(VnfKind::Mme),
            Component::Spgw => Some(VnfKind::Spgw),
            Component::Cu => None,
        }
    }
}

impl From<VnfKind> for Component {
    fn from(k: VnfKind) -> Self {
        match k {
            VnfKind::Hss => Component::Hss,
            VnfKind::Mme => Component::Mme,
            VnfKind::Spgw => Component::Spgw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Flavor {
    Small,
    Medium,
}

impl Flavor {
    pub const ALL: [Flavor; 2] = [Flavor::Small, Flavor::Medium];

    pub fn name(self) -> &'static str {
        match self {
            Flavor::Small => "small",
            Flavor::Medium => "medium",
        }
    }

    pub fn spec(self) -> FlavorSpec {
        match self {
            Flavor::Small => FlavorSpec {
                flavor: self,
                vcpus: 1,
                ram_mb: 2048,
                disk_gb: 20,
            },
            Flavor::Medium => FlavorSpec {
                flavor: self,
                vcpus: 2,
                ram_mb: 4096,
                disk_gb: 40,
            },
        }
    }

    pub(crate) fn from_code(c: u8) -> Result<Self, DecodeError> {
        Flavor::ALL.get(c as usize).copied().ok_or(DecodeError::Invalid {
            field: "flavor",
            value: c as u64,
        })
    }
}

impl fmt::Display for Flavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Flavor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Flavor::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown flavor `{s}` (expected small or medium)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FlavorSpec {
    pub flavor: Flavor,
    pub vcpus: u32,
    pub ram_mb: u32,
    pub disk_gb: u32,
}

/// Resident memory with write tracking. Writes walk the pages with a cyclic
/// cursor, so the number of distinct pages touched by `n` writes is
/// `min(n, total_pages)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PageSet {
    pub total_pages: u64,
    pub writes: u64,
}

impl PageSet {
    pub fn new(total_pages: u64) -> Self {
        PageSet { total_pages, writes: 0 }
    }

    pub fn from_bytes(bytes: u64) -> Self {
        Self::new(bytes / PAGE_SIZE)
    }

    pub fn bytes(&self) -> u64 {
        self.total_pages * PAGE_SIZE
    }

    pub fn write(&mut self, n: u64) {
        self.writes += n;
    }

    /// Distinct pages dirtied since the write counter read `mark`.
    pub fn dirty_since(&self, mark: u64) -> u64 {
        self.writes.saturating_sub(mark).min(self.total_pages)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SubscriberRecord {
    pub imsi: u64,
    pub key: [u8; 16],
    pub opc: [u8; 16],
    pub sqn: u64,
}

pub const SUBSCRIBER_RECORD_LEN: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct S1UeContext {
    pub ue_id: UeId,
    pub enb_ue_s1ap_id: u32,
    pub mme_ue_s1ap_id: u32,
    pub sgw_teid: Teid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PdnSession {
    pub ue_id: UeId,
    pub ue_addr: Ipv4Addr,
    pub bearer_id: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Route {
    pub dest: Ipv4Addr,
    pub prefix: u8,
    pub via: Ipv4Addr,
}

/// Kernel GTP device on the SPGW host.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Gtp0Device {
    pub addr: Ipv4Addr,
    pub mtu: u16,
    pub netmask: u8,
    pub routes: Vec<Route>,
    /// POSTROUTING masquerade rule needed for uplink egress.
    pub masquerade: bool,
}

impl Gtp0Device {
    pub fn standard(addr: Ipv4Addr) -> Self {
        Gtp0Device {
            addr,
            mtu: 1500,
            netmask: 24,
            routes: vec![Route {
                dest: Ipv4Addr::new(addr.octets()[0], addr.octets()[1], addr.octets()[2], 0),
                prefix: 24,
                via: addr,
            }],
            masquerade: true,
        }
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.addr.octets());
        out.extend_from_slice(&self.mtu.to_be_bytes());
        out.push(self.netmask);
        out.push(self.masquerade as u8);
        out.extend_from_slice(&(self.routes.len() as u16).to_be_bytes());
        for r in &self.routes {
            out.extend_from_slice(&r.dest.octets());
            out.push(r.prefix);
            out.extend_from_slice(&r.via.octets());
        }
    }

    pub fn decode(buf: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(buf);
        let addr = Ipv4Addr::from(r.array::<4>()?);
        let mtu = r.u16()?;
        let netmask = r.u8()?;
        let masquerade = r.bool()?;
        let n = r.u16()?;
        let mut routes = Vec::with_capacity(n as usize);
        for _ in 0..n {
            routes.push(Route {
                dest: Ipv4Addr::from(r.array::<4>()?),
                prefix: r.u8()?,
                via: Ipv4Addr::from(r.array::<4>()?),
            });
        }
        r.finish()?;
        Ok(Gtp0Device {
            addr,
            mtu,
            netmask,
            routes,
            masquerade,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpgwState {
    pub sessions: Vec<PdnSession>,
    pub tunnels: GtpTunnelTable,
    pub gtp0: Option<Gtp0Device>,
}

/// Component-specific state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AppState {
    Hss { subscribers: Vec<SubscriberRecord> },
    Mme { contexts: Vec<S1UeContext> },
    Spgw(SpgwState),
}

impl AppState {
    pub fn kind(&self) -> VnfKind {
        match self {
            AppState::Hss { .. } => VnfKind::Hss,
            AppState::Mme { .. } => VnfKind::Mme,
            AppState::Spgw(_) => VnfKind::Spgw,
        }
    }

    /// Serializes the user-space part. SPGW kernel tunnel state is excluded.
    pub fn encode_heap(&self, out: &mut Vec<u8>) {
        out.push(self.kind().code());
        match self {
            AppState::Hss { subscribers } => {
                out.extend_from_slice(&(subscribers.len() as u32).to_be_bytes());
                for s in subscribers {
                    out.extend_from_slice(&s.imsi.to_be_bytes());
                    out.extend_from_slice(&s.key);
                    out.extend_from_slice(&s.opc);
                    out.extend_from_slice(&s.sqn.to_be_bytes());
                }
            }
            AppState::Mme { contexts } => {
                out.extend_from_slice(&(contexts.len() as u32).to_be_bytes());
                for c in contexts {
                    for v in [c.ue_id.0, c.enb_ue_s1ap_id, c.mme_ue_s1ap_id, c.sgw_teid.0] {
                        out.extend_from_slice(&v.to_be_bytes());
                    }
                }
            }
            AppState::Spgw(s) => {
                out.extend_from_slice(&(s.sessions.len() as u32).to_be_bytes());
                for p in &s.sessions {
                    out.extend_from_slice(&p.ue_id.0.to_be_bytes());
                    out.extend_from_slice(&p.ue_addr.octets());
                    out.push(p.bearer_id);
                }
            }
        }
    }

    /// Inverse of [`encode_heap`](Self::encode_heap); SPGW comes back with an
    /// empty tunnel table and no gtp0 device.
    pub(crate) fn take_heap(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let kind = VnfKind::from_code(r.u8()?)?;
        let n = r.u32()? as usize;
        Ok(match kind {
            VnfKind::Hss => {
                let mut subscribers = Vec::with_capacity(n.min(1 << 16));
                for _ in 0..n {
                    subscribers.push(SubscriberRecord {
                        imsi: r.u64()?,
                        key: r.array()?,
                        opc: r.array()?,
                        sqn: r.u64()?,
                    });
                }
                AppState::Hss { subscribers }
            }
            VnfKind::Mme => {
                let mut contexts = Vec::with_capacity(n.min(1 << 16));
                for _ in 0..n {
                    contexts.push(S1UeContext {
                        ue_id: UeId(r.u32()?),
                        enb_ue_s1ap_id: r.u32()?,
                        mme_ue_s1ap_id: r.u32()?,
                        sgw_teid: Teid(r.u32()?),
                    });
                }
                AppState::Mme { contexts }
            }
            VnfKind::Spgw => {
                let mut sessions = Vec::with_capacity(n.min(1 << 16));
                for _ in 0..n {
                    sessions.push(PdnSession {
                        ue_id: UeId(r.u32()?),
                        ue_addr: Ipv4Addr::from(r.array::<4>()?),
                        bearer_id: r.u8()?,
                    });
                }
                AppState::Spgw(SpgwState {
                    sessions,
                    tunnels: GtpTunnelTable::new(),
                    gtp0: None,
                })
            }
        })
    }
}

/// Open sockets of one process.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SocketSet {
    pub tcp: Vec<TcpSocketState>,
    pub sctp: Vec<SctpSocket>,
    pub udp_ports: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VnfProcess {
    pub pid: u32,
    pub kind: VnfKind,
    pub flavor: Flavor,
    pub host: HostId,
    pub addr: Ipv4Addr,
    pub memory: PageSet,
    pub disk_image_bytes: u64,
    pub sockets: SocketSet,
    pub app: AppState,
    pub frozen: bool,
}

impl VnfProcess {
    pub fn spgw(&self) -> Option<&SpgwState> {
        match &self.app {
            AppState::Spgw(s) => Some(s),
            _ => None,
        }
    }

    pub fn spgw_mut(&mut self) -> Option<&mut SpgwState> {
        match &mut self.app {
            AppState::Spgw(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VnfError {
    #[error("host {host} lacks capacity for a {flavor} instance")]
    CapacityExceeded { host: HostId, flavor: Flavor },
    #[error("unknown host {0}")]
    UnknownHost(HostId),
    #[error("{0} is not attached")]
    NotAttached(UeId),
    #[error("{0} is already attached")]
    AlreadyAttached(UeId),
    #[error("no SPGW tunnel state available")]
    NoSpgw,
    #[error(transparent)]
    Gtp(#[from] GtpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HostCapacity {
    pub vcpus: u32,
    pub ram_mb: u32,
}

/// Per-host resource bookkeeping.
#[derive(Debug, Clone, Default)]
pub struct Placement {
    capacity: BTreeMap<HostId, HostCapacity>,
    used: BTreeMap<HostId, HostCapacity>,
}

impl Placement {
    pub fn new(hosts: impl IntoIterator<Item = HostId>, each: HostCapacity) -> Self {
        let capacity: BTreeMap<_, _> = hosts.into_iter().map(|h| (h, each)).collect();
        let used = capacity
            .keys()
            .map(|h| (*h, HostCapacity { vcpus: 0, ram_mb: 0 }))
            .collect();
        Placement { capacity, used }
    }

    pub fn reserve(&mut self, host: HostId, flavor: Flavor) -> Result<(), VnfError> {
        let cap = *self.capacity.get(&host).ok_or(VnfError::UnknownHost(host))?;
        let used = self.used.get_mut(&host).expect("used tracks capacity keys");
        let spec = flavor.spec();
        if used.vcpus + spec.vcpus > cap.vcpus || used.ram_mb + spec.ram_mb > cap.ram_mb {
            return Err(VnfError::CapacityExceeded { host, flavor });
        }
        used.vcpus += spec.vcpus;
        used.ram_mb += spec.ram_mb;
        Ok(())
    }

    pub fn release(&mut self, host: HostId, flavor: Flavor) {
        if let Some(used) = self.used.get_mut(&host) {
            let spec = flavor.spec();
            used.vcpus = used.vcpus.saturating_sub(spec.vcpus);
            used.ram_mb = used.ram_mb.saturating_sub(spec.ram_mb);
        }
    }

    pub fn used(&self, host: HostId) -> Option<HostCapacity> {
        self.used.get(&host).copied()
    }
}

/// What a freshly spawned process starts with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpawnParams {
    pub pid: u32,
    pub addr: Ipv4Addr,
    pub resident_bytes: u64,
    pub disk_image_bytes: u64,
    pub subscribers: u32,
    /// Address assigned to gtp0 on an SPGW.
    pub gtp_addr: Ipv4Addr,
}

pub const HSS_DIAMETER_PORT: u16 = 3868;
pub const S1_MME_PORT: u16 = 36412;
pub const S11_PORT: u16 = 2123;

/// Starts a process and opens its kind-specific listeners.
pub fn spawn_vnf(
    placement: &mut Placement,
    kind: VnfKind,
    flavor: Flavor,
    host: HostId,
    params: SpawnParams,
) -> Result<VnfProcess, VnfError> {
    placement.reserve(host, flavor)?;
    let mut sockets = SocketSet::default();
    let app = match kind {
        VnfKind::Hss => {
            sockets.tcp.push(TcpSocketState::listen(crate::proto::Endpoint::new(
                params.addr,
                HSS_DIAMETER_PORT,
            )));
            AppState::Hss {
                subscribers: (0..params.subscribers).map(subscriber).collect(),
            }
        }
        VnfKind::Mme => {
            sockets.sctp.push(SctpSocket::listener(crate::proto::Endpoint::new(
                params.addr,
                S1_MME_PORT,
            )));
            AppState::Mme { contexts: Vec::new() }
        }
        VnfKind::Spgw => {
            sockets.udp_ports.extend([S11_PORT, crate::proto::gtp::GTPU_PORT]);
            AppState::Spgw(SpgwState {
                sessions: Vec::new(),
                tunnels: GtpTunnelTable::new(),
                gtp0: Some(Gtp0Device::standard(params.gtp_addr)),
            })
        }
    };
    Ok(VnfProcess {
        pid: params.pid,
        kind,
        flavor,
        host,
        addr: params.addr,
        memory: PageSet::from_bytes(params.resident_bytes),
        disk_image_bytes: params.disk_image_bytes,
        sockets,
        app,
        frozen: false,
    })
}

/// Deterministic subscriber record for index `i`.
pub fn subscriber(i: u32) -> SubscriberRecord {
    let mut key = [0u8; 16];
    let mut opc = [0u8; 16];
    for (j, (k, o)) in key.iter_mut().zip(opc.iter_mut()).enumerate() {
        *k = (i as u8).wrapping_mul(31).wrapping_add(j as u8);
        *o = (i as u8).wrapping_mul(17) ^ (j as u8);
    }
    SubscriberRecord {
        imsi: 208_950_000_000_001 + i as u64,
        key,
        opc,
        sqn: 32 * i as u64,
    }
}

/// Pages dirtied by `vnf` over `interval` at `rate_pages_per_s`.
pub fn dirty_page_count(vnf: &VnfProcess, interval: SimDuration, rate_pages_per_s: u64) -> u64 {
    if vnf.frozen {
        return 0;
    }
    cumulative_writes(rate_pages_per_s, interval).min(vnf.memory.total_pages)
}

/// Writes issued in the first `t` of a constant-rate stream.
pub fn cumulative_writes(rate_pages_per_s: u64, t: SimDuration) -> u64 {
    (rate_pages_per_s as u128 * t.as_micros() as u128 / 1_000_000) as u64
}

/// UE as seen from the gNB: its inner address and mirrored tunnel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ue {
    pub id: UeId,
    pub inner_addr: Ipv4Addr,
    /// gNB-side tunnel: local TEID is the gNB's, peer TEID the SPGW's.
    pub tunnel: Option<GtpTunnelEntry>,
}

/// Installs a bearer for `ue` on both ends. Returns the gNB-side entry.
pub fn install_bearer(
    spgw: &mut SpgwState,
    ue: &mut Ue,
    spgw_addr: Ipv4Addr,
    gnb_addr: Ipv4Addr,
    teid_hint: u32,
) -> Result<GtpTunnelEntry, VnfError> {
    if ue.tunnel.is_some() {
        return Err(VnfError::AlreadyAttached(ue.id));
    }
    let spgw_teid = spgw.tunnels.free_teid(teid_hint);
    let gnb_teid = Teid(teid_hint.rotate_left(16).max(1));
    spgw.tunnels.insert(GtpTunnelEntry {
        ue_id: ue.id,
        local_teid: spgw_teid,
        peer_teid: gnb_teid,
        peer_addr: gnb_addr,
        ue_inner_addr: ue.inner_addr,
    })?;
    if !spgw.sessions.iter().any(|s| s.ue_id == ue.id) {
        spgw.sessions.push(PdnSession {
            ue_id: ue.id,
            ue_addr: ue.inner_addr,
            bearer_id: 5,
        });
    }
    let gnb_side = GtpTunnelEntry {
        ue_id: ue.id,
        local_teid: gnb_teid,
        peer_teid: spgw_teid,
        peer_addr: spgw_addr,
        ue_inner_addr: ue.inner_addr,
    };
    ue.tunnel = Some(gnb_side);
    Ok(gnb_side)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> SpawnParams {
        SpawnParams {
            pid: 100,
            addr: Ipv4Addr::new(10, 8, 0, 4),
            resident_bytes: 10 * PAGE_SIZE,
            disk_image_bytes: 0,
            subscribers: 3,
            gtp_addr: Ipv4Addr::new(12, 1, 1, 1),
        }
    }

    fn placement() -> Placement {
        Placement::new([HostId(1)], HostCapacity { vcpus: 2, ram_mb: 4096 })
    }

    #[test]
    fn flavors_match_table() {
        assert_eq!(
            (
                Flavor::Small.spec().vcpus,
                Flavor::Small.spec().ram_mb,
                Flavor::Small.spec().disk_gb
            ),
            (1, 2048, 20)
        );
        assert_eq!(
            (
                Flavor::Medium.spec().vcpus,
                Flavor::Medium.spec().ram_mb,
                Flavor::Medium.spec().disk_gb
            ),
            (2, 4096, 40)
        );
    }

    #[test]
    fn spawn_opens_kind_listeners() {
        let mut p = placement();
        let hss = spawn_vnf(&mut p, VnfKind::Hss, Flavor::Small, HostId(1), params()).unwrap();
        assert_eq!(hss.sockets.tcp.len(), 1);
        let spgw = spawn_vnf(&mut p, VnfKind::Spgw, Flavor::Small, HostId(1), params()).unwrap();
        let gtp0 = spgw.spgw().unwrap().gtp0.as_ref().unwrap();
        assert!(gtp0.masquerade);
        assert_eq!(
            spawn_vnf(&mut p, VnfKind::Mme, Flavor::Small, HostId(1), params()),
            Err(VnfError::CapacityExceeded {
                host: HostId(1),
                flavor: Flavor::Small
            })
        );
    }

    #[test]
    fn dirty_pages_frozen_and_idle() {
        let mut p = placement();
        let mut v = spawn_vnf(&mut p, VnfKind::Hss, Flavor::Small, HostId(1), params()).unwrap();
        assert_eq!(dirty_page_count(&v, SimDuration::from_millis(500), 4), 2);
        assert_eq!(dirty_page_count(&v, SimDuration::from_secs(100), 4), 10);
        v.frozen = true;
        assert_eq!(dirty_page_count(&v, SimDuration::from_secs(1), 4), 0);
    }

    #[test]
    fn page_set_dirty_is_capped() {
        let mut s = PageSet::new(8);
        s.write(5);
        assert_eq!(s.dirty_since(0), 5);
        s.write(100);
        assert_eq!(s.dirty_since(3), 8);
    }

    #[test]
    fn heap_roundtrip() {
        for app in [
            AppState::Hss {
                subscribers: (0..4).map(subscriber).collect(),
            },
            AppState::Mme {
                contexts: vec![S1UeContext {
                    ue_id: UeId(1),
                    enb_ue_s1ap_id: 2,
                    mme_ue_s1ap_id: 3,
                    sgw_teid: Teid(4),
                }],
            },
        ] {
            let mut b = Vec::new();
            app.encode_heap(&mut b);
            let mut r = Reader::new(&b);
            assert_eq!(AppState::take_heap(&mut r).unwrap(), app);
            r.finish().unwrap();
        }
    }

    #[test]
    fn gtp0_roundtrip() {
        let d = Gtp0Device::standard(Ipv4Addr::new(12, 1, 1, 1));
        let mut b = Vec::new();
        d.encode(&mut b);
        assert_eq!(Gtp0Device::decode(&b).unwrap(), d);
    }

    #[test]
    fn bearer_mirrors_teids() {
        let mut s = SpgwState {
            sessions: vec![],
            tunnels: GtpTunnelTable::new(),
            gtp0: None,
        };
        let mut ue = Ue {
            id: UeId(1),
            inner_addr: Ipv4Addr::new(12, 1, 1, 2),
            tunnel: None,
        };
        let g = install_bearer(&mut s, &mut ue, Ipv4Addr::LOCALHOST, Ipv4Addr::BROADCAST, 77).unwrap();
        let e = s.tunnels.by_ue(UeId(1)).unwrap();
        assert_eq!(e.local_teid, g.peer_teid);
        assert_eq!(e.peer_teid, g.local_teid);
        assert!(install_bearer(&mut s, &mut ue, Ipv4Addr::LOCALHOST, Ipv4Addr::BROADCAST, 78).is_err());
    }
}
