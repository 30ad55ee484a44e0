//! Scenario driver.
//!
//! Brings up HSS, MME and SPGW on the first host of rack 1, connects the CU
//! and attaches the configured UEs, then provisions the management lightpath
//! to rack 2, starts the VNF probes and triggers the selected engine. Probing
//! stops a fixed tail after every indicator has recovered.

pub mod probe;

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use probe::{measure_downtime, measure_ue_srt, ProbeError, ProbeRun, ProbeTrace};

use crate::container::{
    checkpoint, checkpoint_duration, image_bytes, restore, restore_duration, transfer_metadata, CheckpointOptions,
    ContainerError, ContainerMigrationBreakdown, MetadataBlob,
};
use crate::fabric::{
    Fabric, FabricError, HostId, LightpathSpec, NetworkPath, Overlay, Packet, PacketCounters, Protocol, Purpose,
    RackId, Verdict, WireRecord,
};
use crate::profile::CalibrationProfile;
use crate::proto::gtp::{gtp_decap, gtp_encap, parse_outer, GtpError, Teid, UeId, GTP_HEADER_LEN};
use crate::proto::ip::{icmp_echo, UDP_HEADER_LEN};
use crate::proto::sctp::{sctp_associate, AssociateParams, SctpError, SctpPacket, SctpSocket, COMMON_HEADER_LEN};
use crate::proto::tcp::{tcp_connect, Segment, TcpError, TCP_HEADER_LEN};
use crate::proto::Endpoint;
use crate::scenario::{Scenario, ScenarioError, Virtualization};
use crate::sim::{EventId, Scheduler, SimDuration, SimError, SimTime, Simulation, TraceRecord};
use crate::vm::{plan_vm_migration, LiveOptions, PassKind, VmError, VmMigrationBreakdown, VmMigrationPlan};
use crate::vnf::{
    install_bearer, spawn_vnf, Component, Flavor, Placement, S1UeContext, SpawnParams, Ue, VnfError, VnfKind,
    VnfProcess, ATTACH_MESSAGES, S1_MME_PORT,
};

pub const HSS_ADDR: Ipv4Addr = Ipv4Addr::new(10, 8, 0, 2);
pub const MME_ADDR: Ipv4Addr = Ipv4Addr::new(10, 8, 0, 3);
pub const SPGW_ADDR: Ipv4Addr = Ipv4Addr::new(10, 8, 0, 4);
pub const CU_ADDR: Ipv4Addr = Ipv4Addr::new(10, 8, 0, 10);
pub const GTP0_ADDR: Ipv4Addr = Ipv4Addr::new(12, 1, 1, 1);

/// When the orchestrator asks for the management lightpath.
pub const PROVISION_AT: SimTime = SimTime::from_micros(1_000_000);
/// Gap between the lightpath becoming usable and the migration trigger.
pub const TRIGGER_AFTER_USABLE: SimDuration = SimDuration::from_millis(100);
/// The extra UE starts attaching this long after the trigger.
pub const NEW_UE_DELAY: SimDuration = SimDuration::from_secs(1);
/// Control-plane retransmission while a peer is unreachable.
pub const ATTACH_RETRY: SimDuration = SimDuration::from_millis(100);
/// Give up on recovery this long after the trigger.
pub const HORIZON: SimDuration = SimDuration::from_secs(900);

const UPLINK_START: SimTime = SimTime::from_micros(500_000);
const MGMT_LINK: &str = "lp:rack1-rack2";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrchestratorError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Vnf(#[from] VnfError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Vm(#[from] VmError),
    #[error(transparent)]
    Sctp(#[from] SctpError),
    #[error(transparent)]
    Tcp(#[from] TcpError),
    #[error(transparent)]
    Gtp(#[from] GtpError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error("{0} has no established association")]
    NoAssociation(VnfKind),
}

impl OrchestratorError {
    /// An established connection could not be restored without repair mode.
    pub fn is_repair_unsupported(&self) -> bool {
        matches!(
            self,
            OrchestratorError::Container(ContainerError::Sctp(SctpError::RepairUnsupported(_)))
                | OrchestratorError::Container(ContainerError::Tcp(TcpError::RepairUnsupported(_)))
                | OrchestratorError::Sctp(SctpError::RepairUnsupported(_))
                | OrchestratorError::Tcp(TcpError::RepairUnsupported(_))
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Keep the executed-event log.
    pub trace_events: bool,
}

/// Existing-UE recovery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SrtOutcome {
    Recovered(SimDuration),
    Timeout,
}

impl SrtOutcome {
    pub fn duration(self) -> Option<SimDuration> {
        match self {
            SrtOutcome::Recovered(d) => Some(d),
            SrtOutcome::Timeout => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MigrationBreakdown {
    Container(ContainerMigrationBreakdown),
    Vm(VmMigrationBreakdown),
}

/// Instants of the run, all on the simulated clock.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Timeline {
    pub lightpath_requested: SimTime,
    pub lightpath_usable: SimTime,
    pub trigger: SimTime,
    pub first_migration_byte: Option<SimTime>,
    /// VM stop-and-copy start or container freeze.
    pub paused: Option<SimTime>,
    pub migration_end: Option<SimTime>,
    pub vnf_reachable: Option<SimTime>,
    pub probes_stopped: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub scenario_id: String,
    pub profile: String,
    pub kind: VnfKind,
    pub virtualization: Virtualization,
    pub flavor: Flavor,
    pub lightpath_km: f64,
    pub overlay: Overlay,
    pub migration_time: SimDuration,
    pub downtime: SimDuration,
    pub load_bytes: u64,
    /// Present for SPGW scenarios only.
    pub ue_srt: Option<SrtOutcome>,
    /// Longest UE probe outage; zero when the user plane is untouched.
    pub ue_interruption: SimDuration,
    pub new_ue_attach: Option<SimDuration>,
    /// Some UE had to attach again after losing its bearer.
    pub reattached: bool,
    pub breakdown: MigrationBreakdown,
    pub teids_before: Vec<Teid>,
    pub teids_after: Vec<Teid>,
    /// MME only: the CU association record is unchanged across the move.
    pub cu_association_preserved: Option<bool>,
    pub timeline: Timeline,
    pub counters: PacketCounters,
    pub vnf_probes: ProbeTrace,
    pub ue_probes: Vec<ProbeTrace>,
    pub wire: Vec<WireRecord>,
    pub events: Vec<TraceRecord>,
    /// Container only: the image that was moved.
    pub checkpoint: Option<MetadataBlob>,
}

impl MetricsReport {
    pub fn iterations(&self) -> Option<u32> {
        match &self.breakdown {
            MigrationBreakdown::Vm(b) => Some(b.iterations),
            MigrationBreakdown::Container(_) => None,
        }
    }

    pub fn wire_trace(&self) -> String {
        let mut s = String::new();
        for r in &self.wire {
            s.push_str(&r.to_string());
            s.push('\n');
        }
        s
    }

    pub fn event_trace(&self) -> String {
        let mut s = String::new();
        for r in &self.events {
            s.push_str(&r.to_string());
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fate {
    Deliver,
    Blackhole,
    UnknownTeid,
}

struct UeAgent {
    ue: Ue,
    trace: ProbeTrace,
    /// Attaches during the migration instead of sending uplink traffic.
    late: bool,
    attach_started: Option<SimTime>,
    attached_at: Option<SimTime>,
    error_indicated: bool,
    seq: u16,
}

struct World {
    sc: Scenario,
    profile: CalibrationProfile,
    rng: ChaCha8Rng,
    fabric: Fabric,
    placement: Placement,
    vnfs: BTreeMap<VnfKind, VnfProcess>,
    cu: SctpSocket,
    cu_host: HostId,
    src: HostId,
    dest: HostId,
    mgmt_path: NetworkPath,
    ues: Vec<UeAgent>,
    vnf_reachable: bool,
    uplane_up: bool,
    probes: ProbeTrace,
    vm_plan: Option<VmMigrationPlan>,
    blob: Option<MetadataBlob>,
    container: ContainerMigrationBreakdown,
    load_bytes: u64,
    marks: Timeline,
    horizon: Option<EventId>,
    stop_at: Option<SimTime>,
    error: Option<OrchestratorError>,
    cu_snapshot: Option<Vec<u8>>,
    cu_preserved: Option<bool>,
    teids_before: Vec<Teid>,
    teids_after: Vec<Teid>,
    reattached: bool,
}

type Sched = Scheduler<World>;

fn addr_of(c: Component) -> Ipv4Addr {
    match c {
        Component::Hss => HSS_ADDR,
        Component::Mme => MME_ADDR,
        Component::Spgw => SPGW_ADDR,
        Component::Cu => CU_ADDR,
    }
}

fn ue_addr(i: usize) -> Ipv4Addr {
    let n = i as u32 + 2;
    Ipv4Addr::new(12, 1, (1 + n / 256) as u8, (n % 256) as u8)
}

/// Payload size of each attach message.
fn control_len(name: &str) -> u32 {
    match name {
        "AttachRequest" => 120,
        "AuthInfoRequest" => 180,
        "AuthInfoAnswer" => 260,
        "CreateSessionRequest" => 230,
        "CreateSessionResponse" => 170,
        _ => 150,
    }
}

/// S1 always rides the overlay tunnel, whatever the scenario's addressing.
fn sctp_wire(p: &SctpPacket, msgtype: &str) -> Packet {
    Packet::new(
        p.src.addr.to_string(),
        p.dst.addr.to_string(),
        Protocol::Sctp,
        COMMON_HEADER_LEN,
        p.chunk.wire_len(),
        msgtype,
    )
    .vpn_encapsulate()
}

fn tcp_wire(s: &Segment, msgtype: &str) -> Packet {
    Packet::new(
        s.src.addr.to_string(),
        s.dst.addr.to_string(),
        Protocol::Tcp,
        TCP_HEADER_LEN,
        s.payload_len as usize,
        msgtype,
    )
}

fn assoc_socket(vnf: &mut VnfProcess) -> Result<&mut SctpSocket, OrchestratorError> {
    let kind = vnf.kind;
    vnf.sockets
        .sctp
        .iter_mut()
        .find(|s| s.assoc.is_some())
        .ok_or(OrchestratorError::NoAssociation(kind))
}

fn sorted_teids(vnf: &VnfProcess) -> Vec<Teid> {
    let mut t: Vec<Teid> = vnf.spgw().map(|s| s.tunnels.teids().collect()).unwrap_or_default();
    t.sort();
    t
}

impl World {
    fn fail(&mut self, now: SimTime, e: impl Into<OrchestratorError>) {
        if self.error.is_none() {
            self.error = Some(e.into());
        }
        self.stop_at = Some(now);
    }

    fn halted(&self, now: SimTime) -> bool {
        self.stop_at.is_some_and(|t| now >= t)
    }

    fn component_up(&self, c: Component) -> bool {
        match c.vnf() {
            Some(k) if k == self.sc.kind => self.vnf_reachable,
            _ => true,
        }
    }

    fn rack_of(&self, c: Component) -> RackId {
        let host = match c.vnf() {
            Some(k) => self.vnfs[&k].host,
            None => self.cu_host,
        };
        self.fabric.rack_of(host).expect("components sit on known hosts")
    }

    fn link(&self, a: Component, b: Component) -> String {
        let (ra, rb) = (self.rack_of(a), self.rack_of(b));
        if ra == rb {
            ra.to_string()
        } else {
            format!("{}-{}", ra.min(rb), ra.max(rb))
        }
    }

    fn latency(&self, a: Component, b: Component) -> SimDuration {
        if self.rack_of(a) == self.rack_of(b) {
            self.fabric.config.hop_latency + self.fabric.config.hop_latency
        } else {
            self.mgmt_path.one_way_latency()
        }
    }

    fn transmit(&mut self, now: SimTime, link: &str, pkt: &Packet, fate: Fate) -> bool {
        if self.fabric.send(now, link, pkt) == Verdict::Drop {
            return false;
        }
        let c = &mut self.fabric.counters;
        match fate {
            Fate::Deliver => {
                c.delivered += 1;
                true
            }
            Fate::Blackhole => {
                c.blackholed += 1;
                false
            }
            Fate::UnknownTeid => {
                c.unknown_teid_dropped += 1;
                false
            }
        }
    }

    /// Sends one attach message and applies it to the transport state of
    /// both ends.
    fn send_control(
        &mut self,
        now: SimTime,
        name: &str,
        from: Component,
        to: Component,
    ) -> Result<(), OrchestratorError> {
        let link = self.link(from, to);
        let len = control_len(name);
        match (from, to) {
            (Component::Cu, Component::Mme) => {
                let p = self.cu.send_data(0, len)?;
                if self.transmit(now, &link, &sctp_wire(&p, name), Fate::Deliver) {
                    let mme = self.vnfs.get_mut(&VnfKind::Mme).expect("mme spawned");
                    assoc_socket(mme)?.handle(&p, 0, 0)?;
                }
            }
            (Component::Mme, Component::Cu) => {
                let mme = self.vnfs.get_mut(&VnfKind::Mme).expect("mme spawned");
                let p = assoc_socket(mme)?.send_data(0, len)?;
                if self.transmit(now, &link, &sctp_wire(&p, name), Fate::Deliver) {
                    self.cu.handle(&p, 0, 0)?;
                }
            }
            (Component::Mme, Component::Hss) | (Component::Hss, Component::Mme) => {
                let (fk, tk) = (from.vnf().expect("vnf"), to.vnf().expect("vnf"));
                let seg = self
                    .vnfs
                    .get_mut(&fk)
                    .and_then(established_tcp)
                    .ok_or(TcpError::NotEstablished(Endpoint::new(addr_of(from), 0)))?;
                let seg = seg.send(len);
                if self.transmit(now, &link, &tcp_wire(&seg, name), Fate::Deliver) {
                    if let Some(s) = self.vnfs.get_mut(&tk).and_then(established_tcp) {
                        s.receive(&seg);
                    }
                }
            }
            _ => {
                let p = Packet::new(
                    addr_of(from).to_string(),
                    addr_of(to).to_string(),
                    Protocol::Udp,
                    UDP_HEADER_LEN,
                    len as usize,
                    name,
                );
                self.transmit(now, &link, &p, Fate::Deliver);
            }
        }
        if name == "AuthInfoAnswer" {
            if let Some(crate::vnf::AppState::Hss { subscribers }) =
                self.vnfs.get_mut(&VnfKind::Hss).map(|v| &mut v.app)
            {
                if let Some(s) = subscribers.first_mut() {
                    s.sqn += 32;
                }
            }
        }
        Ok(())
    }

    /// One uplink echo from UE `i` to the SPGW gtp0 address.
    fn ping_once(&mut self, now: SimTime, i: usize) -> Result<bool, OrchestratorError> {
        let payload = self.sc.ue.payload_bytes as usize;
        let agent = &mut self.ues[i];
        let Some(tun) = agent.ue.tunnel else {
            return Ok(false);
        };
        let seq = agent.seq;
        agent.seq = agent.seq.wrapping_add(1);
        let inner = icmp_echo(agent.ue.inner_addr, GTP0_ADDR, i as u16, seq, payload);
        let outer = gtp_encap(&inner, &tun, CU_ADDR);

        let mut pkt = Packet::new(
            CU_ADDR.to_string(),
            SPGW_ADDR.to_string(),
            Protocol::Udp,
            UDP_HEADER_LEN + GTP_HEADER_LEN,
            inner.len(),
            "G-PDU echo-request",
        );
        pkt.teid = Some(tun.peer_teid);
        if self.sc.overlay == Overlay::Vpn {
            pkt = pkt.vpn_encapsulate();
        }
        let spgw = self.vnfs[&VnfKind::Spgw].spgw().ok_or(VnfError::NoSpgw)?;
        let fate = if !self.uplane_up {
            Fate::Blackhole
        } else {
            match gtp_decap(&outer, &spgw.tunnels) {
                Ok(_) => Fate::Deliver,
                Err(GtpError::UnknownTeid(_)) => Fate::UnknownTeid,
                Err(e) => return Err(e.into()),
            }
        };
        let reply_entry = spgw.tunnels.get(tun.peer_teid).copied();
        let link = self.link(Component::Cu, Component::Spgw);
        let delivered = self.transmit(now, &link, &pkt, fate);

        if fate == Fate::UnknownTeid {
            let mut ind = Packet::new(
                SPGW_ADDR.to_string(),
                CU_ADDR.to_string(),
                Protocol::Udp,
                UDP_HEADER_LEN + GTP_HEADER_LEN,
                8,
                "GTP error-indication",
            );
            ind.teid = Some(tun.peer_teid);
            if self.transmit(now, &link, &ind, Fate::Deliver) {
                self.ues[i].error_indicated = true;
            }
        }
        if !delivered {
            return Ok(false);
        }
        let entry = reply_entry.ok_or(GtpError::UnknownTeid(tun.peer_teid))?;
        let echo = icmp_echo(GTP0_ADDR, entry.ue_inner_addr, i as u16, seq, payload);
        let down = gtp_encap(&echo, &entry, GTP0_ADDR);
        let (teid, _) = parse_outer(&down)?;
        let mut reply = Packet::new(
            SPGW_ADDR.to_string(),
            CU_ADDR.to_string(),
            Protocol::Udp,
            UDP_HEADER_LEN + GTP_HEADER_LEN,
            echo.len(),
            "G-PDU echo-reply",
        );
        reply.teid = Some(teid);
        if self.sc.overlay == Overlay::Vpn {
            reply = reply.vpn_encapsulate();
        }
        let answered = self.transmit(now, &link, &reply, Fate::Deliver);
        Ok(answered && teid == tun.local_teid)
    }
}

fn established_tcp(v: &mut VnfProcess) -> Option<&mut crate::proto::tcp::TcpSocketState> {
    v.sockets.tcp.iter_mut().find(|s| s.is_established())
}

fn attach_step(w: &mut World, s: &mut Sched, ue: usize, step: usize) {
    let now = s.now();
    if w.halted(now) {
        return;
    }
    let Some(&(name, from, to)) = ATTACH_MESSAGES.get(step) else {
        if let Err(e) = finish_attach(w, now, ue) {
            w.fail(now, e);
            return;
        }
        check_recovery(w, s);
        return;
    };
    if !(w.component_up(from) && w.component_up(to)) {
        s.schedule(ATTACH_RETRY, "ue", format!("ue{ue} holds {name}"), move |w, s| {
            attach_step(w, s, ue, step)
        });
        return;
    }
    if let Err(e) = w.send_control(now, name, from, to) {
        w.fail(now, e);
        return;
    }
    let d = w.latency(from, to);
    s.schedule(d, to.name(), format!("ue{ue} {name}"), move |w, s| {
        attach_step(w, s, ue, step + 1)
    });
}

fn finish_attach(w: &mut World, now: SimTime, i: usize) -> Result<(), OrchestratorError> {
    let hint = w.rng.gen_range(1..=u32::MAX);
    let spgw = w
        .vnfs
        .get_mut(&VnfKind::Spgw)
        .and_then(VnfProcess::spgw_mut)
        .ok_or(VnfError::NoSpgw)?;
    let agent = &mut w.ues[i];
    let gnb = install_bearer(spgw, &mut agent.ue, SPGW_ADDR, CU_ADDR, hint)?;
    let first = agent.attached_at.is_none();
    agent.attached_at = Some(now);
    if !first {
        w.reattached = true;
    }
    if let Some(crate::vnf::AppState::Mme { contexts }) = w.vnfs.get_mut(&VnfKind::Mme).map(|v| &mut v.app) {
        contexts.retain(|c| c.ue_id != gnb.ue_id);
        contexts.push(S1UeContext {
            ue_id: gnb.ue_id,
            enb_ue_s1ap_id: i as u32 + 1,
            mme_ue_s1ap_id: i as u32 + 1,
            sgw_teid: gnb.peer_teid,
        });
    }
    Ok(())
}

fn ue_ping(w: &mut World, s: &mut Sched, i: usize) {
    let now = s.now();
    if w.halted(now) {
        return;
    }
    let answered = match w.ping_once(now, i) {
        Ok(a) => a,
        Err(e) => return w.fail(now, e),
    };
    let agent = &mut w.ues[i];
    agent.trace.record(now, answered);
    if !answered
        && agent.error_indicated
        && agent.ue.tunnel.is_some()
        && agent.trace.unanswered_for(now) >= w.sc.ue.reattach_after
    {
        agent.ue.tunnel = None;
        agent.error_indicated = false;
        s.schedule(SimDuration::ZERO, "ue", format!("ue{i} re-attach"), move |w, s| {
            attach_step(w, s, i, 0)
        });
    }
    if answered {
        check_recovery(w, s);
    }
    s.schedule(w.sc.probes.srt_interval, "ue", format!("ue{i} ping"), move |w, s| {
        ue_ping(w, s, i)
    });
}

fn vnf_probe(w: &mut World, s: &mut Sched) {
    let now = s.now();
    if w.halted(now) {
        return;
    }
    w.probes.record(now, w.vnf_reachable);
    s.schedule(w.sc.probes.downtime_interval, "probe", "icmp echo", vnf_probe);
}

fn check_recovery(w: &mut World, s: &mut Sched) {
    if w.stop_at.is_some() || !w.vnf_reachable {
        return;
    }
    let Some(end) = w.marks.migration_end else { return };
    for a in &w.ues {
        let ok = if a.late {
            a.attached_at.is_some()
        } else {
            a.trace.last_answered() == Some(true) && a.trace.last().is_some_and(|t| t >= end)
        };
        if !ok {
            return;
        }
    }
    let stop = s.now() + w.sc.probes.tail;
    w.stop_at = Some(stop);
    w.marks.probes_stopped = Some(stop);
    if let Some(id) = w.horizon.take() {
        s.cancel(id);
    }
}

fn vnf_back(w: &mut World, s: &mut Sched) {
    w.vnf_reachable = true;
    w.marks.vnf_reachable = Some(s.now());
    check_recovery(w, s);
}

fn provision(w: &mut World, s: &mut Sched) {
    let now = s.now();
    let spec = LightpathSpec {
        a: RackId(1),
        b: RackId(2),
        length_km: w.sc.lightpath_km,
        rate_bps: w.mgmt_path.min_hop_rate(),
        purpose: Purpose::Management,
    };
    let usable = match w.fabric.provision_lightpath(spec, now) {
        Ok(h) => w.fabric.lightpath(h).expect("just provisioned").usable_at,
        Err(e) => return w.fail(now, e),
    };
    w.marks.lightpath_requested = now;
    w.marks.lightpath_usable = usable;
    let trigger_at = usable + TRIGGER_AFTER_USABLE;
    let r = s
        .schedule_at(usable, "probe", "start", vnf_probe)
        .and_then(|_| s.schedule_at(trigger_at, "orchestrator", "trigger", trigger))
        .and_then(|_| {
            s.schedule_at(trigger_at + HORIZON, "orchestrator", "horizon", |w, s| {
                w.horizon = None;
                let now = s.now();
                w.stop_at.get_or_insert(now);
            })
        });
    match r {
        Ok(id) => w.horizon = Some(id),
        Err(e) => w.fail(now, e),
    }
}

fn trigger(w: &mut World, s: &mut Sched) {
    let now = s.now();
    w.marks.trigger = now;
    if let Some(late) = w.ues.iter().position(|a| a.late) {
        s.schedule(NEW_UE_DELAY, "ue", format!("ue{late} attach"), move |w, s| {
            w.ues[late].attach_started = Some(s.now());
            attach_step(w, s, late, 0)
        });
    }
    match w.sc.virtualization {
        Virtualization::Container => container_freeze(w, s),
        Virtualization::Vm => vm_pre_live(w, s),
    }
}

/// Fails the run unless the management lightpath already carries traffic.
fn require_lightpath(w: &mut World, now: SimTime) -> bool {
    if let Err(e) = w.fabric.management_lightpath(RackId(1), RackId(2), now) {
        w.fail(now, e);
        return false;
    }
    w.marks.first_migration_byte.get_or_insert(now);
    true
}

fn container_freeze(w: &mut World, s: &mut Sched) {
    let now = s.now();
    let (kind, flavor) = (w.sc.kind, w.sc.flavor);
    let opts = CheckpointOptions {
        repair_tcp: w.sc.options.repair_tcp,
        repair_sctp: w.sc.options.repair_sctp,
        gtp_utility: w.sc.options.gtp_utility,
    };
    if kind == VnfKind::Mme {
        w.cu_snapshot = w.cu.association().map(|a| a.encode());
    }
    let target = w.profile.container.target_image_bytes(kind, flavor);
    let vnf = w.vnfs.get_mut(&kind).expect("target spawned");
    w.teids_before = sorted_teids(vnf);
    let blob = match checkpoint(vnf, opts, Some(target)) {
        Ok(b) => b,
        Err(e) => return w.fail(now, e),
    };
    w.vnf_reachable = false;
    w.marks.paused = Some(now);
    w.load_bytes = image_bytes(&blob);
    w.blob = Some(blob);
    let d = checkpoint_duration(&w.profile.container, kind, flavor, w.load_bytes);
    w.container.checkpoint = d;
    s.schedule(d, "engine", "checkpoint written", container_transfer);
}

fn container_transfer(w: &mut World, s: &mut Sched) {
    let now = s.now();
    if !require_lightpath(w, now) {
        return;
    }
    let d = match transfer_metadata(&w.profile.container, w.sc.kind, &w.mgmt_path, w.load_bytes) {
        Ok(d) => d,
        Err(e) => return w.fail(now, e),
    };
    w.container.metadata_transfer = d;
    let (src, dst) = (w.src.to_string(), w.dest.to_string());
    w.fabric.record_bulk(now, MGMT_LINK, &src, &dst, w.load_bytes, "image");
    s.schedule(d, "engine", "image copied", container_restore);
}

fn container_restore(w: &mut World, s: &mut Sched) {
    let now = s.now();
    if let Err(e) = w.placement.reserve(w.dest, w.sc.flavor) {
        return w.fail(now, e);
    }
    let d = restore_duration(&w.profile.container, w.sc.kind, w.sc.flavor, w.load_bytes);
    w.container.restore = d;
    s.schedule(d, "engine", "restore complete", container_restored);
}

fn container_restored(w: &mut World, s: &mut Sched) {
    let now = s.now();
    let kind = w.sc.kind;
    let restored = match restore(w.blob.as_ref().expect("checkpoint precedes restore"), w.dest) {
        Ok(r) => r,
        Err(e) => return w.fail(now, e),
    };
    let link = w.link(Component::Cu, Component::from(kind));
    for seg in &restored.emitted_tcp {
        w.transmit(now, &link, &tcp_wire(seg, seg.flag.name()), Fate::Deliver);
    }
    for p in &restored.emitted_sctp {
        w.transmit(now, &link, &sctp_wire(p, p.chunk.name()), Fate::Deliver);
    }
    w.teids_after = sorted_teids(&restored.vnf);
    w.vnfs.insert(kind, restored.vnf);
    w.placement.release(w.src, w.sc.flavor);
    w.marks.migration_end = Some(now);

    if kind == VnfKind::Mme {
        let cu_now = w.cu.association().map(|a| a.encode());
        let mirrored = match (w.cu.association(), w.vnfs.get_mut(&kind).map(assoc_socket)) {
            (Some(c), Some(Ok(m))) => m
                .association()
                .is_some_and(|m| m.local_vtag == c.peer_vtag && m.peer_vtag == c.local_vtag),
            _ => false,
        };
        w.cu_preserved = Some(mirrored && cu_now.is_some() && cu_now == w.cu_snapshot);
    }
    if kind == VnfKind::Spgw {
        w.uplane_up = false;
        let settle = w.profile.route_settle(w.sc.flavor);
        s.schedule(settle, "fabric", "user-plane route settled", |w, s| {
            w.uplane_up = true;
            check_recovery(w, s);
        });
    }
    vnf_back(w, s);
}

fn vm_pre_live(w: &mut World, s: &mut Sched) {
    let now = s.now();
    if let Err(e) = w.placement.reserve(w.dest, w.sc.flavor) {
        return w.fail(now, e);
    }
    let pre = w.vm_plan.as_ref().expect("vm plan").pre_live;
    s.schedule(pre, "engine", "pre-live done", vm_live);
}

fn vm_live(w: &mut World, s: &mut Sched) {
    let now = s.now();
    if !require_lightpath(w, now) {
        return;
    }
    let plan = w.vm_plan.clone().expect("vm plan");
    let mut at = plan.live.setup;
    for (n, pass) in plan.live.passes.iter().enumerate() {
        let label = match pass.kind {
            PassKind::Disk => "disk".to_string(),
            PassKind::Ram => "ram".to_string(),
            PassKind::Dirty => format!("dirty-{n}"),
            PassKind::StopCopy => "stop-copy".to_string(),
        };
        let bytes = pass.bytes;
        if pass.kind == PassKind::StopCopy {
            s.schedule(at, "engine", "pause", vm_pause);
        }
        s.schedule(at, "engine", format!("push {label}"), move |w, s| {
            let (src, dst) = (w.src.to_string(), w.dest.to_string());
            w.fabric.record_bulk(s.now(), MGMT_LINK, &src, &dst, bytes, &label);
        });
        at += pass.duration;
    }
    s.schedule(at, "engine", "resume", vm_resume);
}

fn vm_pause(w: &mut World, s: &mut Sched) {
    let kind = w.sc.kind;
    w.vnfs.get_mut(&kind).expect("target spawned").frozen = true;
    w.vnf_reachable = false;
    w.marks.paused = Some(s.now());
    if kind == VnfKind::Spgw {
        w.uplane_up = false;
    }
}

fn vm_resume(w: &mut World, s: &mut Sched) {
    let kind = w.sc.kind;
    let plan = w.vm_plan.clone().expect("vm plan");
    let dirtied: u64 = plan.live.passes.iter().map(|p| p.dirtied_pages).sum();
    let vnf = w.vnfs.get_mut(&kind).expect("target spawned");
    vnf.host = w.dest;
    vnf.frozen = false;
    vnf.memory.write(dirtied);
    w.placement.release(w.src, w.sc.flavor);

    let post = plan.post_live;
    let reroute = crate::fabric::overlay_reroute(w.sc.overlay, &w.profile.reroute);
    s.schedule(post.bridge_reconfig, "engine", "bridge reconfigured", |_, _| {});
    s.schedule(
        post.bridge_reconfig + reroute + w.profile.geo_delay,
        "fabric",
        "vnf address relearned",
        vnf_back,
    );
    if kind == VnfKind::Spgw {
        let settle = w.profile.route_settle(w.sc.flavor);
        s.schedule(
            post.bridge_reconfig + reroute + settle,
            "fabric",
            "user-plane route settled",
            |w, s| {
                w.uplane_up = true;
                check_recovery(w, s);
            },
        );
    }
    s.schedule(post.total(), "engine", "post-live done", |w, s| {
        w.marks.migration_end = Some(s.now());
        check_recovery(w, s);
    });
}

/// Dirtying rate the VM engine plans with: an SPGW carrying uplink traffic
/// writes faster.
pub fn vm_dirty_rate(profile: &CalibrationProfile, kind: VnfKind) -> u64 {
    let k = profile.vm.kind(kind);
    match kind {
        VnfKind::Spgw => k.uplink_dirty_pages_per_s,
        _ => k.dirty_pages_per_s,
    }
}

/// The VM plan the engine will follow for `sc`.
pub fn plan_vm(sc: &Scenario, profile: &CalibrationProfile) -> Result<VmMigrationPlan, OrchestratorError> {
    let reference = profile.stream_path(profile.fabric.reference_length_km, sc.overlay)?;
    let path = profile.stream_path(sc.lightpath_km, sc.overlay)?;
    let options = LiveOptions {
        max_iterations: sc.options.max_iterations,
        stop_threshold_bytes: sc.options.stop_threshold_bytes,
    };
    Ok(plan_vm_migration(
        &profile.vm,
        sc.kind,
        sc.flavor,
        vm_dirty_rate(profile, sc.kind),
        &reference,
        &path,
        options,
        sc.options.log_growth_bytes_per_s,
    )?)
}

pub fn run_scenario(sc: &Scenario, profile: &CalibrationProfile) -> Result<MetricsReport, OrchestratorError> {
    run_scenario_with(sc, profile, RunOptions::default())
}

pub fn run_scenario_with(
    sc: &Scenario,
    profile: &CalibrationProfile,
    options: RunOptions,
) -> Result<MetricsReport, OrchestratorError> {
    sc.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);

    let mut cfg = profile.fabric_config(sc.overlay);
    if let Some(fw) = sc.topology.firewall {
        cfg.firewall = fw;
    }
    let mut fabric = Fabric::new(cfg, sc.topology.racks, sc.topology.hosts_per_rack);
    let src = HostId(1);
    let cu_host = if sc.topology.hosts_per_rack >= 2 {
        HostId(2)
    } else {
        src
    };
    let dest = fabric
        .hosts()
        .find(|(_, r)| *r == RackId(2))
        .map(|(h, _)| h)
        .expect("validated topology has a second rack");
    let mut placement = Placement::new(fabric.hosts().map(|(h, _)| h), profile.fabric.host);
    let mgmt_path = profile.management_path(sc.lightpath_km, sc.overlay)?;
    let vm_plan = match sc.virtualization {
        Virtualization::Vm => Some(plan_vm(sc, profile)?),
        Virtualization::Container => None,
    };

    let mut vnfs = BTreeMap::new();
    for (n, k) in VnfKind::ALL.into_iter().enumerate() {
        let flavor = if k == sc.kind { sc.flavor } else { Flavor::Small };
        let resident_bytes = match sc.virtualization {
            Virtualization::Container => profile.container.kind(k).resident_bytes,
            Virtualization::Vm => profile.vm.kind(k).resident_bytes[flavor as usize],
        };
        let disk_image_bytes = match &vm_plan {
            Some(p) if k == sc.kind => p.image.disk_bytes,
            _ => 0,
        };
        let params = SpawnParams {
            pid: 100 + n as u32,
            addr: addr_of(k.into()),
            resident_bytes,
            disk_image_bytes,
            subscribers: profile.hss_subscribers,
            gtp_addr: GTP0_ADDR,
        };
        vnfs.insert(k, spawn_vnf(&mut placement, k, flavor, src, params)?);
    }

    // Diameter: MME dials the HSS.
    let client = Endpoint::new(MME_ADDR, rng.gen_range(32768..61000));
    let listener = vnfs[&VnfKind::Hss].sockets.tcp[0].clone();
    let (c, srv, segs) = tcp_connect(client, &listener, rng.gen(), rng.gen());
    for seg in &segs {
        let p = tcp_wire(seg, seg.flag.name());
        if fabric.send(SimTime::ZERO, "rack1", &p) == Verdict::Pass {
            fabric.counters.delivered += 1;
        }
    }
    vnfs.get_mut(&VnfKind::Hss).expect("spawned").sockets.tcp.push(srv);
    vnfs.get_mut(&VnfKind::Mme).expect("spawned").sockets.tcp.push(c);

    // S1: CU associates with the MME through the overlay.
    let mut cu = SctpSocket::client(Endpoint::new(CU_ADDR, S1_MME_PORT));
    let params = AssociateParams {
        client_tag: rng.gen_range(1..=u32::MAX),
        client_tsn: rng.gen(),
        server_tag: rng.gen_range(1..=u32::MAX),
        server_tsn: rng.gen(),
        streams: 2,
        max_init_attempts: 5,
    };
    let mme = vnfs.get_mut(&VnfKind::Mme).expect("spawned");
    let accepted = sctp_associate(&mut cu, &mut mme.sockets.sctp[0], params, |p| {
        let pkt = sctp_wire(p, p.chunk.name());
        let pass = fabric.send(SimTime::ZERO, "rack1", &pkt) == Verdict::Pass;
        if pass {
            fabric.counters.delivered += 1;
        }
        pass
    })?;
    mme.sockets.sctp.push(accepted);

    let mut ues: Vec<UeAgent> = (0..sc.ue.count as usize)
        .map(|i| UeAgent {
            ue: Ue {
                id: UeId(i as u32 + 1),
                inner_addr: ue_addr(i),
                tunnel: None,
            },
            trace: ProbeTrace::new(sc.probes.srt_interval),
            late: false,
            attach_started: None,
            attached_at: None,
            error_indicated: false,
            seq: 0,
        })
        .collect();
    if sc.ue.new_ue_probe {
        let i = ues.len();
        ues.push(UeAgent {
            ue: Ue {
                id: UeId(i as u32 + 1),
                inner_addr: ue_addr(i),
                tunnel: None,
            },
            trace: ProbeTrace::new(sc.probes.srt_interval),
            late: true,
            attach_started: None,
            attached_at: None,
            error_indicated: false,
            seq: 0,
        });
    }

    let world = World {
        sc: sc.clone(),
        profile: profile.clone(),
        rng,
        fabric,
        placement,
        vnfs,
        cu,
        cu_host,
        src,
        dest,
        mgmt_path,
        ues,
        vnf_reachable: true,
        uplane_up: true,
        probes: ProbeTrace::new(sc.probes.downtime_interval),
        vm_plan,
        blob: None,
        container: ContainerMigrationBreakdown::default(),
        load_bytes: 0,
        marks: Timeline::default(),
        horizon: None,
        stop_at: None,
        error: None,
        cu_snapshot: None,
        cu_preserved: None,
        teids_before: Vec::new(),
        teids_after: Vec::new(),
        reattached: false,
    };
    let mut sim = Simulation::new(world);
    if options.trace_events {
        sim = sim.with_trace();
    }
    for i in 0..sc.ue.count as usize {
        let at = SimDuration::from_millis(10 * (i as u64 + 1));
        sim.schedule(at, "ue", format!("ue{i} attach"), move |w, s| {
            w.ues[i].attach_started = Some(s.now());
            attach_step(w, s, i, 0)
        });
        sim.schedule(
            UPLINK_START.since(SimTime::ZERO),
            "ue",
            format!("ue{i} ping"),
            move |w, s| ue_ping(w, s, i),
        );
    }
    sim.schedule(
        PROVISION_AT.since(SimTime::ZERO),
        "orchestrator",
        "provision lightpath",
        provision,
    );

    while sim.step()? {
        if sim.world().error.is_some() {
            break;
        }
    }
    let events = sim.take_trace();
    let w = sim.into_world();
    if let Some(e) = w.error {
        return Err(e);
    }
    report(w, events)
}

fn report(w: World, events: Vec<TraceRecord>) -> Result<MetricsReport, OrchestratorError> {
    let trigger = w.marks.trigger;
    let end = w
        .marks
        .migration_end
        .ok_or(ProbeError::RecoveryTimeout { since: trigger })?;
    let back = w.marks.vnf_reachable.unwrap_or(end);
    let downtime = measure_downtime(&w.probes, (trigger, back))?;

    let mut ue_interruption = SimDuration::ZERO;
    let mut srt: Option<SrtOutcome> = None;
    for a in w.ues.iter().filter(|a| !a.late) {
        ue_interruption = ue_interruption.max(measure_downtime(&a.trace, (trigger, end))?);
        let o = match measure_ue_srt(&a.trace, trigger) {
            Ok(d) => SrtOutcome::Recovered(d),
            Err(ProbeError::RecoveryTimeout { .. }) => SrtOutcome::Timeout,
            Err(e) => return Err(e.into()),
        };
        srt = srt.max(Some(o));
    }
    let ue_srt = if w.sc.kind == VnfKind::Spgw { srt } else { None };

    let new_ue_attach = w
        .ues
        .iter()
        .find(|a| a.late)
        .and_then(|a| Some(a.attached_at?.since(a.attach_started?)));

    let (breakdown, load_bytes) = match &w.vm_plan {
        Some(p) => (MigrationBreakdown::Vm(p.breakdown()), p.live.bytes_moved),
        None => (MigrationBreakdown::Container(w.container), w.load_bytes),
    };

    Ok(MetricsReport {
        scenario_id: w.sc.id.clone(),
        profile: w.profile.name.clone(),
        kind: w.sc.kind,
        virtualization: w.sc.virtualization,
        flavor: w.sc.flavor,
        lightpath_km: w.sc.lightpath_km,
        overlay: w.sc.overlay,
        migration_time: end.since(trigger),
        downtime,
        load_bytes,
        ue_srt,
        ue_interruption,
        new_ue_attach,
        reattached: w.reattached,
        breakdown,
        teids_before: w.teids_before,
        teids_after: w.teids_after,
        cu_association_preserved: w.cu_preserved,
        timeline: w.marks,
        counters: w.fabric.counters,
        vnf_probes: w.probes,
        ue_probes: w.ues.into_iter().filter(|a| !a.late).map(|a| a.trace).collect(),
        wire: w.fabric.wire,
        events,
        checkpoint: w.blob,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::load_profile;

    fn run(kind: VnfKind, virt: Virtualization) -> MetricsReport {
        let p = load_profile("openroadm").unwrap();
        run_scenario(&Scenario::new(kind, virt, Flavor::Small, 0.005), &p).unwrap()
    }

    #[test]
    fn container_hss_downtime_tracks_migration() {
        let r = run(VnfKind::Hss, Virtualization::Container);
        let m = r.migration_time.as_micros() as i64;
        let d = r.downtime.as_micros() as i64;
        assert!((m - d).abs() <= 1000, "migration {m} downtime {d}");
        assert!(r.ue_srt.is_none());
        assert_eq!(r.ue_interruption, SimDuration::ZERO);
        assert!(r.counters.is_conserved());
        assert!(r.timeline.lightpath_usable <= r.timeline.first_migration_byte.unwrap());
    }

    #[test]
    fn spgw_container_keeps_tunnels() {
        let r = run(VnfKind::Spgw, Virtualization::Container);
        assert_eq!(r.teids_before, r.teids_after);
        assert!(!r.teids_before.is_empty());
        assert!(!r.reattached);
        let srt = r.ue_srt.unwrap().duration().unwrap();
        assert!(srt < r.new_ue_attach.unwrap());
    }

    #[test]
    fn spgw_vm_recovers_after_reroute() {
        let r = run(VnfKind::Spgw, Virtualization::Vm);
        let srt = r.ue_srt.unwrap().duration().unwrap().as_secs_f64();
        assert!((srt - 10.0).abs() <= 0.5, "{srt}");
    }

    #[test]
    fn validation_errors_surface() {
        let p = load_profile("openroadm").unwrap();
        let mut sc = Scenario::new(VnfKind::Hss, Virtualization::Vm, Flavor::Small, 0.005);
        sc.probes.srt_interval = SimDuration::ZERO;
        let e = run_scenario(&sc, &p).unwrap_err();
        assert!(matches!(e, OrchestratorError::Scenario(ref s) if s.field() == Some("probes.srt_interval_ms")));
    }
}
