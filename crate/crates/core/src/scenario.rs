//! Scenario files.
//!
//! A file describes one scenario through `scenario.*`, `options.*`,
//! `probes.*`, `ue.*` and `topology.*` keys. Any `grid.*` list key
//! (`kind`, `virtualization`, `flavor`, `lightpath_km`, `overlay`) turns it
//! into the cartesian product over those lists, with the remaining keys shared.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::fabric::Overlay;
use crate::kv::{KvDoc, KvError};
use crate::sim::SimDuration;
use crate::vm::{DEFAULT_MAX_ITERATIONS, DEFAULT_STOP_THRESHOLD};
use crate::vnf::{Flavor, VnfKind};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

impl ScenarioError {
    pub fn field(&self) -> Option<&str> {
        match self {
            ScenarioError::Kv(e) => e.field(),
            ScenarioError::Invalid { field, .. } => Some(field),
        }
    }

    fn invalid(field: &str, message: impl Into<String>) -> Self {
        ScenarioError::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Virtualization {
    Vm,
    Container,
}

impl Virtualization {
    pub fn name(self) -> &'static str {
        match self {
            Virtualization::Vm => "vm",
            Virtualization::Container => "container",
        }
    }
}

impl fmt::Display for Virtualization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Virtualization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "vm" => Ok(Virtualization::Vm),
            "container" => Ok(Virtualization::Container),
            _ => Err(format!("unknown virtualization `{s}` (expected vm or container)")),
        }
    }
}

impl FromStr for Overlay {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "vpn" => Ok(Overlay::Vpn),
            "floating-ip" => Ok(Overlay::FloatingIp),
            _ => Err(format!("unknown overlay `{s}` (expected vpn or floating-ip)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MigrationOptions {
    pub repair_tcp: bool,
    pub repair_sctp: bool,
    pub gtp_utility: bool,
    pub max_iterations: u32,
    pub stop_threshold_bytes: u64,
    pub log_growth_bytes_per_s: u64,
}

impl Default for MigrationOptions {
    fn default() -> Self {
        MigrationOptions {
            repair_tcp: true,
            repair_sctp: true,
            gtp_utility: true,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            stop_threshold_bytes: DEFAULT_STOP_THRESHOLD,
            log_growth_bytes_per_s: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeConfig {
    pub downtime_interval: SimDuration,
    pub srt_interval: SimDuration,
    /// How long probing continues after recovery.
    pub tail: SimDuration,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            downtime_interval: SimDuration::from_millis(1),
            srt_interval: SimDuration::from_millis(100),
            tail: SimDuration::from_secs(30),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UeConfig {
    pub count: u32,
    pub payload_bytes: u32,
    /// Silence after which a UE gives up on its bearer and re-attaches.
    pub reattach_after: SimDuration,
    /// Launch one extra UE attach one second into the migration.
    pub new_ue_probe: bool,
    pub attach_timeout: SimDuration,
}

impl Default for UeConfig {
    fn default() -> Self {
        UeConfig {
            count: 1,
            payload_bytes: 84,
            reattach_after: SimDuration::from_secs(5),
            new_ue_probe: true,
            attach_timeout: SimDuration::from_secs(120),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TopologyConfig {
    pub racks: u16,
    pub hosts_per_rack: u16,
    /// Overrides the profile's firewall setting.
    pub firewall: Option<bool>,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            racks: 2,
            hosts_per_rack: 2,
            firewall: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub profile: Option<String>,
    pub kind: VnfKind,
    pub virtualization: Virtualization,
    pub flavor: Flavor,
    pub lightpath_km: f64,
    pub overlay: Overlay,
    pub seed: u64,
    pub options: MigrationOptions,
    pub probes: ProbeConfig,
    pub ue: UeConfig,
    pub topology: TopologyConfig,
}

impl Scenario {
    /// Scenario with defaults for everything but the grid axes.
    pub fn new(kind: VnfKind, virtualization: Virtualization, flavor: Flavor, lightpath_km: f64) -> Self {
        let mut s = Scenario {
            id: String::new(),
            profile: None,
            kind,
            virtualization,
            flavor,
            lightpath_km,
            overlay: Overlay::Vpn,
            seed: 1,
            options: MigrationOptions::default(),
            probes: ProbeConfig::default(),
            ue: UeConfig::default(),
            topology: TopologyConfig::default(),
        };
        s.id = s.default_id("");
        s
    }

    pub fn with_overlay(mut self, overlay: Overlay) -> Self {
        self.overlay = overlay;
        self.id = self.default_id("");
        self
    }

    pub fn default_id(&self, prefix: &str) -> String {
        let mut id = format!(
            "{prefix}{}-{}-{}-{}km",
            self.kind, self.virtualization, self.flavor, self.lightpath_km
        );
        if self.overlay != Overlay::Vpn {
            id.push('-');
            id.push_str(self.overlay.name());
        }
        id
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !self.lightpath_km.is_finite() || self.lightpath_km < 0.0 {
            return Err(ScenarioError::invalid(
                "scenario.lightpath_km",
                "must be a non-negative length",
            ));
        }
        if self.probes.downtime_interval.as_micros() == 0 {
            return Err(ScenarioError::invalid(
                "probes.downtime_interval_ms",
                "must be positive",
            ));
        }
        if self.probes.srt_interval.as_micros() == 0 {
            return Err(ScenarioError::invalid("probes.srt_interval_ms", "must be positive"));
        }
        if self.ue.count == 0 {
            return Err(ScenarioError::invalid("ue.count", "at least one UE is required"));
        }
        if (self.ue.payload_bytes as usize) < crate::proto::ip::IPV4_HEADER_LEN + crate::proto::ip::ICMP_HEADER_LEN {
            return Err(ScenarioError::invalid(
                "ue.payload_bytes",
                "must hold IPv4 and ICMP headers",
            ));
        }
        if self.options.max_iterations == 0 {
            return Err(ScenarioError::invalid("options.max_iterations", "must be at least 1"));
        }
        if self.topology.racks < 2 {
            return Err(ScenarioError::invalid("topology.racks", "migration needs two racks"));
        }
        if self.topology.hosts_per_rack == 0 {
            return Err(ScenarioError::invalid("topology.hosts_per_rack", "must be positive"));
        }
        if self.id.is_empty() {
            return Err(ScenarioError::invalid("scenario.id", "must not be empty"));
        }
        Ok(())
    }
}

fn grid_axis<T>(d: &mut KvDoc, key: &str) -> Result<Option<Vec<T>>, ScenarioError>
where
    T: FromStr,
    T::Err: fmt::Display,
{
    let Some(items) = d.list(key) else { return Ok(None) };
    items
        .iter()
        .map(|s| s.parse::<T>().map_err(|e| ScenarioError::invalid(key, e.to_string())))
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

fn ms(d: &mut KvDoc, key: &str, default: SimDuration) -> Result<SimDuration, ScenarioError> {
    match d.opt_f64(key)? {
        None => Ok(default),
        Some(v) if v >= 0.0 => {
            SimDuration::try_from_secs_f64(v / 1e3).map_err(|e| ScenarioError::invalid(key, e.to_string()))
        }
        Some(_) => Err(ScenarioError::invalid(key, "must be non-negative")),
    }
}

fn secs(d: &mut KvDoc, key: &str, default: SimDuration) -> Result<SimDuration, ScenarioError> {
    Ok(d.opt_seconds(key)?.unwrap_or(default))
}

/// Parses a scenario file into one or more validated scenarios.
pub fn parse_scenarios(text: &str) -> Result<Vec<Scenario>, ScenarioError> {
    let mut d = KvDoc::parse(text)?;

    let id = d.opt_str("scenario.id");
    let profile = d.opt_str("scenario.profile");
    let kind: Option<VnfKind> = d.opt_parse("scenario.kind")?;
    let virt: Option<Virtualization> = d.opt_parse("scenario.virtualization")?;
    let flavor: Option<Flavor> = d.opt_parse("scenario.flavor")?;
    let km = d.opt_f64("scenario.lightpath_km")?;
    let overlay: Option<Overlay> = d.opt_parse("scenario.overlay")?;
    let seed = d.opt_parse("scenario.seed")?.unwrap_or(1);

    let defaults = MigrationOptions::default();
    let options = MigrationOptions {
        repair_tcp: d.opt_parse("options.repair_tcp")?.unwrap_or(defaults.repair_tcp),
        repair_sctp: d.opt_parse("options.repair_sctp")?.unwrap_or(defaults.repair_sctp),
        gtp_utility: d.opt_parse("options.gtp_utility")?.unwrap_or(defaults.gtp_utility),
        max_iterations: d
            .opt_parse("options.max_iterations")?
            .unwrap_or(defaults.max_iterations),
        stop_threshold_bytes: d
            .opt_parse::<u64>("options.stop_threshold_kib")?
            .map_or(defaults.stop_threshold_bytes, |k| k * 1024),
        log_growth_bytes_per_s: d.opt_parse("options.log_growth_bytes_per_s")?.unwrap_or(0),
    };
    let pd = ProbeConfig::default();
    let probes = ProbeConfig {
        downtime_interval: ms(&mut d, "probes.downtime_interval_ms", pd.downtime_interval)?,
        srt_interval: ms(&mut d, "probes.srt_interval_ms", pd.srt_interval)?,
        tail: secs(&mut d, "probes.tail_s", pd.tail)?,
    };
    let ud = UeConfig::default();
    let ue = UeConfig {
        count: d.opt_parse("ue.count")?.unwrap_or(ud.count),
        payload_bytes: d.opt_parse("ue.payload_bytes")?.unwrap_or(ud.payload_bytes),
        reattach_after: secs(&mut d, "ue.reattach_after_s", ud.reattach_after)?,
        new_ue_probe: d.opt_parse("ue.new_ue_probe")?.unwrap_or(ud.new_ue_probe),
        attach_timeout: secs(&mut d, "ue.attach_timeout_s", ud.attach_timeout)?,
    };
    let td = TopologyConfig::default();
    let topology = TopologyConfig {
        racks: d.opt_parse("topology.racks")?.unwrap_or(td.racks),
        hosts_per_rack: d.opt_parse("topology.hosts_per_rack")?.unwrap_or(td.hosts_per_rack),
        firewall: d.opt_parse("topology.firewall")?,
    };

    let kinds = grid_axis(&mut d, "grid.kind")?;
    let virts = grid_axis(&mut d, "grid.virtualization")?;
    let flavors = grid_axis(&mut d, "grid.flavor")?;
    let lengths = grid_axis::<f64>(&mut d, "grid.lightpath_km")?;
    let overlays = grid_axis(&mut d, "grid.overlay")?;
    d.finish()?;

    let is_grid = kinds.is_some() || virts.is_some() || flavors.is_some() || lengths.is_some() || overlays.is_some();
    let kinds = axis(kinds, kind, "scenario.kind")?;
    let virts = axis(virts, virt, "scenario.virtualization")?;
    let flavors = axis(flavors, flavor.or(Some(Flavor::Small)), "scenario.flavor")?;
    let lengths = axis(lengths, km.or(Some(0.005)), "scenario.lightpath_km")?;
    let overlays = axis(overlays, overlay.or(Some(Overlay::Vpn)), "scenario.overlay")?;

    let mut out = Vec::new();
    for &k in &kinds {
        for &v in &virts {
            for &f in &flavors {
                for &l in &lengths {
                    for &o in &overlays {
                        let mut s = Scenario::new(k, v, f, l).with_overlay(o);
                        s.profile = profile.clone();
                        s.seed = seed;
                        s.options = options;
                        s.probes = probes;
                        s.ue = ue;
                        s.topology = topology;
                        s.id = match (&id, is_grid) {
                            (Some(prefix), true) => s.default_id(&format!("{prefix}/")),
                            (Some(id), false) => id.clone(),
                            (None, _) => s.default_id(""),
                        };
                        s.validate()?;
                        out.push(s);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Every kind, virtualization, flavor and fiber length: 36 scenarios.
pub fn standard_grid() -> Vec<Scenario> {
    let mut out = Vec::new();
    for kind in VnfKind::ALL {
        for virt in [Virtualization::Vm, Virtualization::Container] {
            for flavor in Flavor::ALL {
                for km in [0.005, 25.0, 50.0] {
                    out.push(Scenario::new(kind, virt, flavor, km));
                }
            }
        }
    }
    out
}

fn axis<T>(grid: Option<Vec<T>>, single: Option<T>, field: &str) -> Result<Vec<T>, ScenarioError> {
    match (grid, single) {
        (Some(v), _) => Ok(v),
        (None, Some(s)) => Ok(vec![s]),
        (None, None) => Err(ScenarioError::Kv(KvError::Missing { field: field.into() })),
    }
}
