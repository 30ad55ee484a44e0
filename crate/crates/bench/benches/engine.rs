use criterion::{black_box, criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion, Throughput};

use epcmig_core::container::blob::{MetadataBlob, SectionTag};
use epcmig_core::orchestrator::run_scenario;
use epcmig_core::profile::load_profile;
use epcmig_core::scenario::{Scenario, Virtualization};
use epcmig_core::sim::{Scheduler, Simulation};
use epcmig_core::vnf::{Flavor, VnfKind};
use epcmig_core::SimDuration;

fn tick(n: &mut u64, s: &mut Scheduler<u64>) {
    *n += 1;
    if n.is_multiple_of(2) {
        s.schedule(SimDuration::from_micros(*n % 97 + 1), "bench", "tick", tick);
    }
}

fn event_queue(c: &mut Criterion) {
    let mut g = c.benchmark_group("event_queue");
    for n in [1_000u64, 10_000] {
        g.throughput(Throughput::Elements(n));
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| {
                let mut sim = Simulation::new(0u64);
                for i in 0..n {
                    sim.schedule(SimDuration::from_micros(i * 7 % 1009), "bench", "seed", tick);
                }
                sim.run_to_completion().unwrap();
                black_box(*sim.world())
            })
        });
    }
    g.finish();
}

fn sample_blob(payload: usize) -> MetadataBlob {
    let mut b = MetadataBlob::new();
    for (i, tag) in SectionTag::ORDER.into_iter().enumerate() {
        b.push(tag, (0..payload).map(|j| (i * 31 + j) as u8).collect()).unwrap();
    }
    b
}

fn blob_codec(c: &mut Criterion) {
    let mut g = c.benchmark_group("blob");
    for payload in [256usize, 65_536] {
        let blob = sample_blob(payload);
        let bytes = blob.encode();
        g.throughput(Throughput::Bytes(bytes.len() as u64));
        g.bench_with_input(BenchmarkId::new("encode", payload), &blob, |b, blob| {
            b.iter(|| blob.encode())
        });
        g.bench_with_input(BenchmarkId::new("decode", payload), &bytes, |b, bytes| {
            b.iter(|| MetadataBlob::decode(black_box(bytes)).unwrap())
        });
    }
    g.finish();
}

fn scenarios(c: &mut Criterion) {
    let p = load_profile("openroadm").unwrap();
    let mut g = c.benchmark_group("run_scenario");
    g.sample_size(10);
    for (kind, virt) in [
        (VnfKind::Hss, Virtualization::Container),
        (VnfKind::Mme, Virtualization::Container),
        (VnfKind::Spgw, Virtualization::Vm),
    ] {
        let sc = Scenario::new(kind, virt, Flavor::Small, 25.0);
        g.bench_function(sc.id.clone(), |b| {
            b.iter_batched(
                || sc.clone(),
                |sc| run_scenario(&sc, &p).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
    g.finish();
}

criterion_group!(benches, event_queue, blob_codec, scenarios);
criterion_main!(benches);
