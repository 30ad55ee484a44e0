//! Calibration profiles: per-testbed constants for the fabric, the overlays
//! and both migration engines.
//!
//! Two profiles are bundled. Additional `<name>.profile` files are looked up
//! in the directories listed in `EPCMIG_PROFILE_PATH` (colon separated),
//! which take precedence over the bundled ones.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::container::{ContainerCalibration, KindContainerCalibration};
use crate::fabric::{FabricConfig, FabricError, Hop, NetworkPath, Overlay, RerouteParams};
use crate::kv::{KvDoc, KvError};
use crate::sim::SimDuration;
use crate::vm::{KindVmCalibration, VmCalibration};
use crate::vnf::{Flavor, HostCapacity, VnfKind};

pub const PROFILE_PATH_ENV: &str = "EPCMIG_PROFILE_PATH";

const BUNDLED: [(&str, &str); 2] = [
    ("cloudlab", include_str!("../profiles/cloudlab.profile")),
    ("openroadm", include_str!("../profiles/openroadm.profile")),
];

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("unknown profile `{0}`")]
    Unknown(String),
    #[error("profile `{name}`: {source}")]
    Schema { name: String, source: KvError },
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("profile `{name}`: {source}")]
    Fabric { name: String, source: FabricError },
}

impl ProfileError {
    pub fn field(&self) -> Option<&str> {
        match self {
            ProfileError::Schema { source, .. } => source.field(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FabricProfile {
    pub hop_latency: SimDuration,
    pub lightpath_setup: SimDuration,
    pub firewall: bool,
    pub mgmt_hops_bps: Vec<u64>,
    pub reference_length_km: f64,
    pub copy_efficiency: f64,
    pub stream_efficiency: f64,
    pub host: HostCapacity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationProfile {
    pub name: String,
    pub description: String,
    pub fabric: FabricProfile,
    pub reroute: RerouteParams,
    /// Added to control-plane address learning for distant sites.
    pub geo_delay: SimDuration,
    /// User-plane route settling after SPGW recovery, per flavor.
    pub route_settle: [SimDuration; 2],
    pub hss_subscribers: u32,
    pub container: ContainerCalibration,
    pub vm: VmCalibration,
}

impl CalibrationProfile {
    pub fn parse(text: &str) -> Result<Self, ProfileError> {
        let mut doc = KvDoc::parse(text).map_err(|source| ProfileError::Schema {
            name: "<unnamed>".into(),
            source,
        })?;
        let name = doc.opt_str("profile.name").unwrap_or_else(|| "<unnamed>".into());
        let wrap = |source| ProfileError::Schema {
            name: name.clone(),
            source,
        };
        let p = Self::from_doc(&mut doc, name.clone()).map_err(wrap)?;
        doc.finish().map_err(wrap)?;
        p.management_path(p.fabric.reference_length_km, Overlay::Vpn)
            .map_err(|source| ProfileError::Fabric {
                name: name.clone(),
                source,
            })?;
        Ok(p)
    }

    fn from_doc(d: &mut KvDoc, name: String) -> Result<Self, KvError> {
        let description = d.opt_str("profile.description").unwrap_or_default();
        let hops = d.list("fabric.mgmt_hops_gbps").ok_or(KvError::Missing {
            field: "fabric.mgmt_hops_gbps".into(),
        })?;
        let line = d.raw("fabric.mgmt_hops_gbps").map_or(0, |e| e.line);
        let mgmt_hops_bps = hops
            .iter()
            .map(|h| match h.parse::<f64>() {
                Ok(g) if g > 0.0 && g.is_finite() => Ok((g * 1e9).round() as u64),
                _ => Err(KvError::Invalid {
                    field: "fabric.mgmt_hops_gbps".into(),
                    line,
                    message: format!("`{h}` is not a positive rate"),
                }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let fabric = FabricProfile {
            hop_latency: SimDuration::from_micros(d.u64("fabric.hop_latency_us")?),
            lightpath_setup: d.seconds("fabric.lightpath_setup_s")?,
            firewall: d.bool("fabric.firewall")?,
            mgmt_hops_bps,
            reference_length_km: d.non_negative("fabric.reference_length_km")?,
            copy_efficiency: efficiency(d, "fabric.copy_efficiency")?,
            stream_efficiency: efficiency(d, "fabric.stream_efficiency")?,
            host: HostCapacity {
                vcpus: d.parse_as("fabric.host_vcpus")?,
                ram_mb: d.parse_as("fabric.host_ram_mb")?,
            },
        };
        let reroute = RerouteParams {
            rarp: d.seconds("overlay.rarp_s")?,
            vpn_reroute: d.seconds("overlay.vpn_reroute_s")?,
        };
        let geo_delay = d.seconds("overlay.geo_delay_s")?;
        let route_settle = [
            d.seconds("ue.route_settle_small_s")?,
            d.seconds("ue.route_settle_medium_s")?,
        ];
        let hss_subscribers = d.parse_as("vnf.hss.subscribers")?;

        let rate = |d: &mut KvDoc, k: &str| d.positive(k).map(|mb| (mb * 1e6).round() as u64);
        let dump = rate(d, "container.dump_rate_mb_per_s")?;
        let restore = rate(d, "container.restore_rate_mb_per_s")?;
        let mut ck = Vec::new();
        let mut vk = Vec::new();
        for kind in VnfKind::ALL {
            let c = |k: &str| format!("container.{kind}.{k}");
            ck.push(KindContainerCalibration {
                checkpoint_overhead: d.seconds(&c("checkpoint_overhead_s"))?,
                restore_overhead: d.seconds(&c("restore_overhead_s"))?,
                metadata_overhead: d.seconds(&c("metadata_overhead_s"))?,
                copy_round_trips: d.parse_as(&c("copy_round_trips"))?,
                medium_checkpoint_scale: d.positive(&c("medium_checkpoint_scale"))?,
                medium_restore_scale: d.positive(&c("medium_restore_scale"))?,
                image_bytes: [d.megabytes(&c("small.image_mb"))?, d.megabytes(&c("medium.image_mb"))?],
                resident_bytes: d.megabytes(&c("resident_mb"))?,
            });
            let v = |k: &str| format!("vm.{kind}.{k}");
            vk.push(KindVmCalibration {
                pre_live: d.seconds(&v("pre_live_s"))?,
                live_setup: d.seconds(&v("live_setup_s"))?,
                db_update: d.seconds(&v("db_update_s"))?,
                port_binding: d.seconds(&v("port_binding_s"))?,
                dirty_pages_per_s: d.u64(&v("dirty_pages_per_s"))?,
                uplink_dirty_pages_per_s: d.u64(&v("uplink_dirty_pages_per_s"))?,
                load_bytes: [d.gigabytes(&v("small.load_gb"))?, d.gigabytes(&v("medium.load_gb"))?],
                resident_bytes: [
                    d.megabytes(&v("small.resident_mb"))?,
                    d.megabytes(&v("medium.resident_mb"))?,
                ],
            });
        }
        let container = ContainerCalibration {
            dump_rate_bytes_per_s: dump,
            restore_rate_bytes_per_s: restore,
            kinds: [ck[0], ck[1], ck[2]],
        };
        let vm = VmCalibration {
            bridge_reconfig: d.seconds("vm.bridge_reconfig_s")?,
            kinds: [vk[0], vk[1], vk[2]],
        };
        Ok(CalibrationProfile {
            name,
            description,
            fabric,
            reroute,
            geo_delay,
            route_settle,
            hss_subscribers,
            container,
            vm,
        })
    }

    pub fn fabric_config(&self, overlay: Overlay) -> FabricConfig {
        FabricConfig {
            hop_latency: self.fabric.hop_latency,
            lightpath_setup: self.fabric.lightpath_setup,
            firewall: self.fabric.firewall,
            overlay,
        }
    }

    fn path(&self, length_km: f64, efficiency: f64, overlay: Overlay) -> Result<NetworkPath, FabricError> {
        let hops = self
            .fabric
            .mgmt_hops_bps
            .iter()
            .map(|&rate_bps| Hop {
                rate_bps,
                latency: self.fabric.hop_latency,
            })
            .collect();
        Ok(NetworkPath::new(hops, efficiency, length_km)?
            .with_firewall(self.fabric.firewall)
            .with_overlay(overlay))
    }

    /// Management path as seen by the image copy.
    pub fn management_path(&self, length_km: f64, overlay: Overlay) -> Result<NetworkPath, FabricError> {
        self.path(length_km, self.fabric.copy_efficiency, overlay)
    }

    /// Management path as seen by the hypervisor's memory stream.
    pub fn stream_path(&self, length_km: f64, overlay: Overlay) -> Result<NetworkPath, FabricError> {
        self.path(length_km, self.fabric.stream_efficiency, overlay)
    }

    pub fn route_settle(&self, flavor: Flavor) -> SimDuration {
        self.route_settle[flavor as usize]
    }
}

fn efficiency(d: &mut KvDoc, key: &str) -> Result<f64, KvError> {
    let v = d.positive(key)?;
    if v > 1.0 {
        let line = d.raw(key).map_or(0, |e| e.line);
        return Err(KvError::Invalid {
            field: key.into(),
            line,
            message: "must be at most 1".into(),
        });
    }
    Ok(v)
}

fn search_dirs() -> Vec<PathBuf> {
    std::env::var_os(PROFILE_PATH_ENV)
        .map(|v| std::env::split_paths(&v).collect())
        .unwrap_or_default()
}

pub fn load_profile_file(path: &Path) -> Result<CalibrationProfile, ProfileError> {
    let text = std::fs::read_to_string(path).map_err(|source| ProfileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    CalibrationProfile::parse(&text)
}

/// Resolves `name` against the search path, then the bundled set.
pub fn load_profile(name: &str) -> Result<CalibrationProfile, ProfileError> {
    for dir in search_dirs() {
        let p = dir.join(format!("{name}.profile"));
        if p.is_file() {
            return load_profile_file(&p);
        }
    }
    match BUNDLED.iter().find(|(n, _)| *n == name) {
        Some((_, text)) => CalibrationProfile::parse(text),
        None => Err(ProfileError::Unknown(name.to_string())),
    }
}

/// Names of all loadable profiles, sorted and deduplicated.
pub fn list_profiles() -> Vec<String> {
    let mut names: Vec<String> = BUNDLED.iter().map(|(n, _)| n.to_string()).collect();
    for dir in search_dirs() {
        if let Ok(rd) = std::fs::read_dir(dir) {
            for e in rd.flatten() {
                let p = e.path();
                if p.extension().is_some_and(|x| x == "profile") {
                    if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                        names.push(stem.to_string());
                    }
                }
            }
        }
    }
    names.sort();
    names.dedup();
    names
}

/// Raw text of a bundled profile.
pub fn bundled_text(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}
