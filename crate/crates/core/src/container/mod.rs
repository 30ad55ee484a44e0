//! Checkpoint/restore migration engine.
//!
//! `checkpoint` freezes a process and serializes it into a [`MetadataBlob`];
//! `restore` rebuilds it on another host, repairing TCP and SCTP sockets and,
//! when the blob carries the GTP sections, the gtp0 device and tunnel list.
//! Timing is separate from the byte format: durations come from
//! [`ContainerCalibration`] and the blob's logical image size.

pub mod blob;

use std::net::Ipv4Addr;

use thiserror::Error;

pub use blob::{BlobError, MetadataBlob, SectionTag};

use crate::fabric::{FabricError, HostId, NetworkPath};
use crate::proto::gtp::{GtpError, GtpTunnelTable};
use crate::proto::sctp::{sctp_repair_restore, SctpError, SctpPacket, SctpSocket};
use crate::proto::tcp::{tcp_repair_restore, Segment, TcpError, TcpSocketState, TcpState};
use crate::proto::{DecodeError, Reader};
use crate::sim::SimDuration;
use crate::vnf::{AppState, Flavor, Gtp0Device, PageSet, SocketSet, VnfKind, VnfProcess, PAGE_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CheckpointOptions {
    pub repair_tcp: bool,
    pub repair_sctp: bool,
    pub gtp_utility: bool,
}

impl Default for CheckpointOptions {
    fn default() -> Self {
        CheckpointOptions {
            repair_tcp: true,
            repair_sctp: true,
            gtp_utility: true,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContainerError {
    #[error("process {0} is already frozen")]
    AlreadyFrozen(u32),
    #[error("blob content ({have} bytes) exceeds the target image size {target}")]
    OverTarget { have: u64, target: u64 },
    #[error("corrupt blob: {0}")]
    Blob(#[from] BlobError),
    #[error("missing {0} section")]
    MissingSection(SectionTag),
    #[error("GTP sections in a {0} image")]
    UnexpectedGtp(VnfKind),
    #[error("GTP-DEV and GTP-TUN must appear together")]
    PartialGtp,
    #[error(transparent)]
    Tcp(#[from] TcpError),
    #[error(transparent)]
    Sctp(#[from] SctpError),
    #[error(transparent)]
    Gtp(#[from] GtpError),
    #[error(transparent)]
    Fabric(#[from] FabricError),
}

impl From<DecodeError> for ContainerError {
    fn from(e: DecodeError) -> Self {
        ContainerError::Blob(BlobError::Decode(e))
    }
}

/// Bytes the image stands for on disk and on the wire. Page contents and the
/// opaque cgroup payload are counted at full size but not materialized.
pub fn image_bytes(blob: &MetadataBlob) -> u64 {
    let mut extra = 0;
    if let Some(p) = blob.section(SectionTag::Pages) {
        if let Ok(a) = <[u8; 8]>::try_from(p.get(..8).unwrap_or_default()) {
            extra += u64::from_be_bytes(a).saturating_mul(PAGE_SIZE);
        }
    }
    if let Some(c) = blob.section(SectionTag::Cgroup) {
        if let Ok(a) = <[u8; 8]>::try_from(c.get(..8).unwrap_or_default()) {
            extra += u64::from_be_bytes(a);
        }
    }
    blob.encoded_len().saturating_add(extra)
}

/// Freezes `vnf` and dumps it. With `target`, the opaque cgroup payload is
/// sized so that [`image_bytes`] equals `target` exactly.
pub fn checkpoint(
    vnf: &mut VnfProcess,
    options: CheckpointOptions,
    target: Option<u64>,
) -> Result<MetadataBlob, ContainerError> {
    if vnf.frozen {
        return Err(ContainerError::AlreadyFrozen(vnf.pid));
    }
    vnf.frozen = true;
    let mut blob = build_sections(vnf, options, 0)?;
    if let Some(target) = target {
        let have = image_bytes(&blob);
        if have > target {
            vnf.frozen = false;
            return Err(ContainerError::OverTarget { have, target });
        }
        blob = build_sections(vnf, options, target - have)?;
    }
    Ok(blob)
}

fn build_sections(vnf: &VnfProcess, options: CheckpointOptions, opaque: u64) -> Result<MetadataBlob, ContainerError> {
    let mut blob = MetadataBlob::new();

    let mut p = Vec::new();
    p.extend_from_slice(&vnf.pid.to_be_bytes());
    p.extend_from_slice(&1u32.to_be_bytes());
    p.push(vnf.kind as u8);
    p.push(vnf.flavor as u8);
    p.extend_from_slice(&vnf.disk_image_bytes.to_be_bytes());
    let comm = vnf.kind.name().as_bytes();
    p.push(comm.len() as u8);
    p.extend_from_slice(comm);
    blob.push(SectionTag::Pstree, p)?;

    let mut p = Vec::new();
    p.extend_from_slice(&vnf.memory.total_pages.to_be_bytes());
    p.extend_from_slice(&vnf.memory.writes.to_be_bytes());
    vnf.app.encode_heap(&mut p);
    blob.push(SectionTag::Pages, p)?;

    let mut p = Vec::new();
    p.extend_from_slice(&(vnf.sockets.tcp.len() as u32).to_be_bytes());
    for s in &vnf.sockets.tcp {
        let mut s = s.clone();
        if s.state == TcpState::Established {
            s.repair_capable = options.repair_tcp;
        }
        p.extend_from_slice(&s.encode());
    }
    blob.push(SectionTag::SkTcp, p)?;

    let mut p = Vec::new();
    p.extend_from_slice(&(vnf.sockets.sctp.len() as u32).to_be_bytes());
    for s in &vnf.sockets.sctp {
        let mut s = s.clone();
        if let Some(a) = s.assoc.as_mut() {
            a.repair_capable = options.repair_sctp;
        }
        p.extend_from_slice(&s.encode());
    }
    blob.push(SectionTag::SkSctp, p)?;

    let mut p = Vec::new();
    p.extend_from_slice(&vnf.addr.octets());
    p.extend_from_slice(&(vnf.sockets.udp_ports.len() as u16).to_be_bytes());
    for port in &vnf.sockets.udp_ports {
        p.extend_from_slice(&port.to_be_bytes());
    }
    blob.push(SectionTag::Netns, p)?;

    let mut p = Vec::new();
    p.extend_from_slice(&opaque.to_be_bytes());
    let spec = vnf.flavor.spec();
    p.extend_from_slice(&spec.vcpus.to_be_bytes());
    p.extend_from_slice(&spec.ram_mb.to_be_bytes());
    blob.push(SectionTag::Cgroup, p)?;

    if options.gtp_utility {
        if let AppState::Spgw(s) = &vnf.app {
            if let Some(dev) = &s.gtp0 {
                let mut p = Vec::new();
                dev.encode(&mut p);
                blob.push(SectionTag::GtpDev, p)?;
                let mut p = Vec::new();
                s.tunnels.encode(&mut p);
                blob.push(SectionTag::GtpTun, p)?;
            }
        }
    }
    Ok(blob)
}

/// A process rebuilt from a blob, plus what restoring it put on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RestoredVnf {
    pub vnf: VnfProcess,
    pub emitted_tcp: Vec<Segment>,
    pub emitted_sctp: Vec<SctpPacket>,
    /// Whether gtp0 and the tunnel list came back.
    pub gtp_restored: bool,
}

/// Rebuilds the process on `dest`. Fails with the socket layer's
/// `RepairUnsupported` if an established connection was dumped without
/// repair mode.
pub fn restore(blob: &MetadataBlob, dest: HostId) -> Result<RestoredVnf, ContainerError> {
    let host_name = dest.to_string();
    let section = |t| blob.section(t).ok_or(ContainerError::MissingSection(t));

    let mut r = Reader::new(section(SectionTag::Pstree)?);
    let pid = r.u32()?;
    let _ppid = r.u32()?;
    let kind = VnfKind::from_code(r.u8()?)?;
    let flavor = Flavor::from_code(r.u8()?)?;
    let disk_image_bytes = r.u64()?;
    let n = r.u8()? as usize;
    r.bytes(n)?;
    r.finish()?;

    let mut r = Reader::new(section(SectionTag::Pages)?);
    let memory = PageSet {
        total_pages: r.u64()?,
        writes: r.u64()?,
    };
    let mut app = AppState::take_heap(&mut r)?;
    r.finish()?;
    if app.kind() != kind {
        return Err(DecodeError::Invalid {
            field: "heap kind",
            value: app.kind() as u64,
        }
        .into());
    }

    let mut sockets = SocketSet::default();
    let mut emitted_tcp = Vec::new();
    let mut r = Reader::new(section(SectionTag::SkTcp)?);
    for _ in 0..r.u32()? {
        let rec = TcpSocketState::take(&mut r)?;
        let restored = tcp_repair_restore(&rec.encode(), &host_name)?;
        emitted_tcp.extend(restored.emitted);
        sockets.tcp.push(restored.socket);
    }
    r.finish()?;

    let mut emitted_sctp = Vec::new();
    let mut r = Reader::new(section(SectionTag::SkSctp)?);
    for _ in 0..r.u32()? {
        let sock = SctpSocket::take(&mut r)?;
        match &sock.assoc {
            Some(a) => {
                let restored = sctp_repair_restore(&a.encode(), &host_name)?;
                emitted_sctp.extend(restored.emitted);
                sockets.sctp.push(restored.socket);
            }
            None => sockets.sctp.push(sock),
        }
    }
    r.finish()?;

    let mut r = Reader::new(section(SectionTag::Netns)?);
    let addr = Ipv4Addr::from(r.array::<4>()?);
    for _ in 0..r.u16()? {
        sockets.udp_ports.push(r.u16()?);
    }
    r.finish()?;

    let mut r = Reader::new(section(SectionTag::Cgroup)?);
    r.u64()?;
    r.u32()?;
    r.u32()?;
    r.finish()?;

    let dev = blob.section(SectionTag::GtpDev);
    let tun = blob.section(SectionTag::GtpTun);
    let gtp_restored = match (dev, tun) {
        (None, None) => false,
        (Some(dev), Some(tun)) => {
            let AppState::Spgw(s) = &mut app else {
                return Err(ContainerError::UnexpectedGtp(kind));
            };
            s.gtp0 = Some(Gtp0Device::decode(dev)?);
            s.tunnels = GtpTunnelTable::decode(tun)?;
            true
        }
        _ => return Err(ContainerError::PartialGtp),
    };

    Ok(RestoredVnf {
        vnf: VnfProcess {
            pid,
            kind,
            flavor,
            host: dest,
            addr,
            memory,
            disk_image_bytes,
            sockets,
            app,
            frozen: false,
        },
        emitted_tcp,
        emitted_sctp,
        gtp_restored,
    })
}

/// Per-kind container timing constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KindContainerCalibration {
    pub checkpoint_overhead: SimDuration,
    pub restore_overhead: SimDuration,
    pub metadata_overhead: SimDuration,
    /// Request/response exchanges during the image copy.
    pub copy_round_trips: u32,
    pub medium_checkpoint_scale: f64,
    pub medium_restore_scale: f64,
    /// Image size per flavor, small then medium.
    pub image_bytes: [u64; 2],
    pub resident_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContainerCalibration {
    pub dump_rate_bytes_per_s: u64,
    pub restore_rate_bytes_per_s: u64,
    pub kinds: [KindContainerCalibration; 3],
}

impl ContainerCalibration {
    pub fn kind(&self, kind: VnfKind) -> &KindContainerCalibration {
        &self.kinds[kind as usize]
    }

    pub fn target_image_bytes(&self, kind: VnfKind, flavor: Flavor) -> u64 {
        self.kind(kind).image_bytes[flavor as usize]
    }
}

fn rate_time(bytes: u64, rate_bytes_per_s: u64) -> SimDuration {
    let us = (bytes as u128 * 1_000_000).div_ceil(rate_bytes_per_s.max(1) as u128);
    SimDuration::from_micros(us as u64)
}

pub fn checkpoint_duration(cal: &ContainerCalibration, kind: VnfKind, flavor: Flavor, bytes: u64) -> SimDuration {
    let k = cal.kind(kind);
    let base = rate_time(bytes, cal.dump_rate_bytes_per_s) + k.checkpoint_overhead;
    match flavor {
        Flavor::Small => base,
        Flavor::Medium => base.scale(k.medium_checkpoint_scale),
    }
}

pub fn restore_duration(cal: &ContainerCalibration, kind: VnfKind, flavor: Flavor, bytes: u64) -> SimDuration {
    let k = cal.kind(kind);
    let base = rate_time(bytes, cal.restore_rate_bytes_per_s) + k.restore_overhead;
    match flavor {
        Flavor::Small => base,
        Flavor::Medium => base.scale(k.medium_restore_scale),
    }
}

/// Image copy over the management path: bulk transfer, fixed setup, and one
/// round trip per copy exchange.
pub fn transfer_metadata(
    cal: &ContainerCalibration,
    kind: VnfKind,
    path: &NetworkPath,
    bytes: u64,
) -> Result<SimDuration, ContainerError> {
    let k = cal.kind(kind);
    let rtt = path.rtt().as_micros() * k.copy_round_trips as u64;
    Ok(path.transfer_time(bytes)? + k.metadata_overhead + SimDuration::from_micros(rtt))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ContainerMigrationBreakdown {
    pub checkpoint: SimDuration,
    pub metadata_transfer: SimDuration,
    pub restore: SimDuration,
}

impl ContainerMigrationBreakdown {
    pub fn total(&self) -> SimDuration {
        self.checkpoint + self.metadata_transfer + self.restore
    }
}

/// Phase durations for moving an image of `bytes`.
pub fn plan_container_migration(
    cal: &ContainerCalibration,
    kind: VnfKind,
    flavor: Flavor,
    path: &NetworkPath,
    bytes: u64,
) -> Result<ContainerMigrationBreakdown, ContainerError> {
    Ok(ContainerMigrationBreakdown {
        checkpoint: checkpoint_duration(cal, kind, flavor, bytes),
        metadata_transfer: transfer_metadata(cal, kind, path, bytes)?,
        restore: restore_duration(cal, kind, flavor, bytes),
    })
}
