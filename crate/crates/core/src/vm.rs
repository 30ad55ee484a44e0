//! Pre-copy VM migration: reservation, iterative push of dirtied memory,
//! stop-and-copy of the residual, then post-live reconfiguration.
//!
//! The disk image is pushed first. Dirty tracking starts with the first full
//! RAM pass; each later pass sends what the previous pass left dirty. Writes
//! follow a constant rate over a cyclic cursor, so the pages dirtied between
//! elapsed times `a` and `b` are `min(W(b) - W(a), total_pages)` with
//! `W(t) = floor(rate * t)`.

use thiserror::Error;

use crate::fabric::{FabricError, NetworkPath};
use crate::sim::SimDuration;
use crate::vnf::{cumulative_writes, Flavor, VnfKind, PAGE_SIZE};

pub const DEFAULT_MAX_ITERATIONS: u32 = 30;
pub const DEFAULT_STOP_THRESHOLD: u64 = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VmError {
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error("measured load {load} is below RAM plus dirtied pages ({floor})")]
    LoadTooSmall { load: u64, floor: u64 },
    #[error("max_iterations must be at least 1")]
    ZeroIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VmImage {
    pub disk_bytes: u64,
    pub ram_bytes: u64,
    pub log_growth_bytes_per_s: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LiveOptions {
    pub max_iterations: u32,
    pub stop_threshold_bytes: u64,
}

impl Default for LiveOptions {
    fn default() -> Self {
        LiveOptions {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            stop_threshold_bytes: DEFAULT_STOP_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassKind {
    Disk,
    Ram,
    Dirty,
    StopCopy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pass {
    pub kind: PassKind,
    pub bytes: u64,
    pub duration: SimDuration,
    /// Pages dirtied while this pass was in flight.
    pub dirtied_pages: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LivePlan {
    pub setup: SimDuration,
    pub passes: Vec<Pass>,
    /// RAM passes, the first full pass included.
    pub iterations: u32,
    pub bytes_moved: u64,
}

impl LivePlan {
    pub fn duration(&self) -> SimDuration {
        self.setup + self.passes.iter().map(|p| p.duration).sum()
    }

    pub fn stop_copy(&self) -> Pass {
        *self.passes.last().expect("plan always ends with stop-and-copy")
    }

    /// Time from the start of the live phase until the VM is paused.
    pub fn pause_offset(&self) -> SimDuration {
        self.duration().saturating_sub(self.stop_copy().duration)
    }
}

/// Plans the push phase for `image` with the given dirtying rate.
pub fn live_phase(
    image: &VmImage,
    dirty_pages_per_s: u64,
    path: &NetworkPath,
    options: LiveOptions,
    setup: SimDuration,
) -> Result<LivePlan, VmError> {
    if options.max_iterations == 0 {
        return Err(VmError::ZeroIterations);
    }
    let pages = image.ram_bytes / PAGE_SIZE;
    let mut passes = Vec::new();

    let disk = path.transfer_time(image.disk_bytes)?;
    passes.push(Pass {
        kind: PassKind::Disk,
        bytes: image.disk_bytes,
        duration: disk,
        dirtied_pages: 0,
    });
    let growth = (image.log_growth_bytes_per_s as u128 * (setup + disk).as_micros() as u128 / 1_000_000) as u64;

    let first = pages * PAGE_SIZE + growth;
    let mut elapsed = path.transfer_time(first)?;
    let mut dirty = (cumulative_writes(dirty_pages_per_s, elapsed)).min(pages);
    passes.push(Pass {
        kind: PassKind::Ram,
        bytes: first,
        duration: elapsed,
        dirtied_pages: dirty,
    });
    let mut iterations = 1;
    while dirty * PAGE_SIZE > options.stop_threshold_bytes && iterations < options.max_iterations {
        let bytes = dirty * PAGE_SIZE;
        let d = path.transfer_time(bytes)?;
        let before = elapsed;
        elapsed += d;
        dirty =
            (cumulative_writes(dirty_pages_per_s, elapsed) - cumulative_writes(dirty_pages_per_s, before)).min(pages);
        passes.push(Pass {
            kind: PassKind::Dirty,
            bytes,
            duration: d,
            dirtied_pages: dirty,
        });
        iterations += 1;
    }
    let residual = dirty * PAGE_SIZE;
    passes.push(Pass {
        kind: PassKind::StopCopy,
        bytes: residual,
        duration: path.transfer_time(residual)?,
        dirtied_pages: 0,
    });
    let bytes_moved = passes.iter().map(|p| p.bytes).sum();
    Ok(LivePlan {
        setup,
        passes,
        iterations,
        bytes_moved,
    })
}

/// Disk size that makes the migration move exactly `load` bytes over `path`.
/// Dirtying starts after the disk pass, so the RAM-side bytes do not depend
/// on the disk size.
pub fn derive_disk_bytes(
    load: u64,
    ram_bytes: u64,
    dirty_pages_per_s: u64,
    path: &NetworkPath,
    options: LiveOptions,
) -> Result<u64, VmError> {
    let image = VmImage {
        disk_bytes: 0,
        ram_bytes,
        log_growth_bytes_per_s: 0,
    };
    let plan = live_phase(&image, dirty_pages_per_s, path, options, SimDuration::ZERO)?;
    load.checked_sub(plan.bytes_moved).ok_or(VmError::LoadTooSmall {
        load,
        floor: plan.bytes_moved,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KindVmCalibration {
    pub pre_live: SimDuration,
    pub live_setup: SimDuration,
    pub db_update: SimDuration,
    pub port_binding: SimDuration,
    pub dirty_pages_per_s: u64,
    /// Rate while a UE uplink is flowing through the instance.
    pub uplink_dirty_pages_per_s: u64,
    /// Measured migration load per flavor, small then medium.
    pub load_bytes: [u64; 2],
    pub resident_bytes: [u64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VmCalibration {
    pub bridge_reconfig: SimDuration,
    pub kinds: [KindVmCalibration; 3],
}

impl VmCalibration {
    pub fn kind(&self, kind: VnfKind) -> &KindVmCalibration {
        &self.kinds[kind as usize]
    }
}

pub fn pre_live(cal: &VmCalibration, kind: VnfKind) -> SimDuration {
    cal.kind(kind).pre_live
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PostLive {
    pub bridge_reconfig: SimDuration,
    pub port_binding: SimDuration,
    pub db_update: SimDuration,
}

impl PostLive {
    pub fn total(&self) -> SimDuration {
        self.bridge_reconfig + self.port_binding + self.db_update
    }
}

pub fn post_live(cal: &VmCalibration, kind: VnfKind) -> PostLive {
    let k = cal.kind(kind);
    PostLive {
        bridge_reconfig: cal.bridge_reconfig,
        port_binding: k.port_binding,
        db_update: k.db_update,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VmMigrationBreakdown {
    pub pre_live: SimDuration,
    pub live: SimDuration,
    pub post_live: SimDuration,
    pub iterations: u32,
    pub bytes_moved: u64,
    pub stop_copy: SimDuration,
}

impl VmMigrationBreakdown {
    pub fn total(&self) -> SimDuration {
        self.pre_live + self.live + self.post_live
    }
}

/// Full plan for one VM migration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VmMigrationPlan {
    pub image: VmImage,
    pub pre_live: SimDuration,
    pub live: LivePlan,
    pub post_live: PostLive,
}

impl VmMigrationPlan {
    pub fn breakdown(&self) -> VmMigrationBreakdown {
        VmMigrationBreakdown {
            pre_live: self.pre_live,
            live: self.live.duration(),
            post_live: self.post_live.total(),
            iterations: self.live.iterations,
            bytes_moved: self.live.bytes_moved,
            stop_copy: self.live.stop_copy().duration,
        }
    }
}

/// Builds the image from calibration (disk derived on `reference` so the
/// reference run moves exactly the measured load) and plans the migration
/// over `path`.
#[allow(clippy::too_many_arguments)]
pub fn plan_vm_migration(
    cal: &VmCalibration,
    kind: VnfKind,
    flavor: Flavor,
    dirty_pages_per_s: u64,
    reference: &NetworkPath,
    path: &NetworkPath,
    options: LiveOptions,
    log_growth_bytes_per_s: u64,
) -> Result<VmMigrationPlan, VmError> {
    let k = cal.kind(kind);
    let ram = k.resident_bytes[flavor as usize];
    let disk = derive_disk_bytes(
        k.load_bytes[flavor as usize],
        ram,
        dirty_pages_per_s,
        reference,
        options,
    )?;
    let image = VmImage {
        disk_bytes: disk,
        ram_bytes: ram,
        log_growth_bytes_per_s,
    };
    let live = live_phase(&image, dirty_pages_per_s, path, options, k.live_setup)?;
    Ok(VmMigrationPlan {
        image,
        pre_live: pre_live(cal, kind),
        live,
        post_live: post_live(cal, kind),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fabric::{Hop, DEFAULT_HOP_LATENCY};
    use proptest::prelude::*;

    fn path(eff: f64) -> NetworkPath {
        let hop = |r| Hop {
            rate_bps: r,
            latency: DEFAULT_HOP_LATENCY,
        };
        NetworkPath::new(
            vec![hop(1_000_000_000), hop(10_000_000_000), hop(1_000_000_000)],
            eff,
            0.005,
        )
        .unwrap()
    }

    fn image(disk: u64, ram_mb: u64) -> VmImage {
        VmImage {
            disk_bytes: disk,
            ram_bytes: ram_mb * 1_000_000,
            log_growth_bytes_per_s: 0,
        }
    }

    #[test]
    fn zero_rate_is_single_pass() {
        let img = image(2_000_000_000, 1000);
        let plan = live_phase(&img, 0, &path(0.6275), LiveOptions::default(), SimDuration::ZERO).unwrap();
        assert_eq!(plan.iterations, 1);
        let ram = img.ram_bytes / PAGE_SIZE * PAGE_SIZE;
        assert_eq!(plan.bytes_moved, img.disk_bytes + ram);
        assert_eq!(plan.stop_copy().bytes, 0);
    }

    #[test]
    fn converges_below_threshold() {
        let plan = live_phase(
            &image(0, 1000),
            256,
            &path(0.6275),
            LiveOptions::default(),
            SimDuration::ZERO,
        )
        .unwrap();
        assert!(plan.iterations >= 2);
        assert!(plan.stop_copy().bytes <= DEFAULT_STOP_THRESHOLD);
    }

    #[test]
    fn iteration_cap_forces_stop() {
        let opts = LiveOptions {
            max_iterations: 3,
            stop_threshold_bytes: 0,
        };
        let plan = live_phase(&image(0, 100), 1_000_000, &path(0.5), opts, SimDuration::ZERO).unwrap();
        assert_eq!(plan.iterations, 3);
        assert!(plan.stop_copy().bytes > 0);
        assert!(live_phase(
            &image(0, 1),
            0,
            &path(0.5),
            LiveOptions {
                max_iterations: 0,
                stop_threshold_bytes: 0
            },
            SimDuration::ZERO
        )
        .is_err());
    }

    #[test]
    fn derived_disk_reproduces_load() {
        let p = path(0.6275);
        let load = 3_470_000_000;
        let disk = derive_disk_bytes(load, 1_000_000_000, 256, &p, LiveOptions::default()).unwrap();
        let plan = live_phase(
            &image(disk, 1000),
            256,
            &p,
            LiveOptions::default(),
            SimDuration::from_secs(1),
        )
        .unwrap();
        assert_eq!(plan.bytes_moved, load);
        assert!(derive_disk_bytes(10, 1_000_000_000, 256, &p, LiveOptions::default()).is_err());
    }

    #[test]
    fn log_growth_adds_bytes() {
        let mut img = image(1_000_000, 10);
        let base = live_phase(&img, 0, &path(0.5), LiveOptions::default(), SimDuration::from_secs(1)).unwrap();
        img.log_growth_bytes_per_s = 1000;
        let grown = live_phase(&img, 0, &path(0.5), LiveOptions::default(), SimDuration::from_secs(1)).unwrap();
        assert!(grown.bytes_moved > base.bytes_moved);
    }

    proptest! {
        #[test]
        fn terminates_within_cap(rate in 0u64..5_000_000, ram_mb in 1u64..600, cap in 1u32..40) {
            let opts = LiveOptions { max_iterations: cap, stop_threshold_bytes: DEFAULT_STOP_THRESHOLD };
            let img = image(5_000_000, ram_mb);
            let plan = live_phase(&img, rate, &path(0.6), opts, SimDuration::ZERO).unwrap();
            prop_assert!(plan.iterations <= cap);
            prop_assert!(plan.bytes_moved >= img.disk_bytes + img.ram_bytes / PAGE_SIZE * PAGE_SIZE);
            prop_assert!(plan.stop_copy().duration < plan.duration() || plan.duration().as_micros() == 0);
        }

        #[test]
        fn larger_ram_moves_more(rate in 0u64..3000, a in 1u64..800, extra in 1u64..800) {
            let p = path(0.6);
            let small = live_phase(&image(1_000_000, a), rate, &p, LiveOptions::default(), SimDuration::ZERO).unwrap();
            let big = live_phase(&image(1_000_000, a + extra), rate, &p, LiveOptions::default(), SimDuration::ZERO).unwrap();
            prop_assert!(big.bytes_moved > small.bytes_moved);
            prop_assert!(big.duration() >= small.duration());
        }
    }
}
