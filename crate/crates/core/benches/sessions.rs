use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use qkd_core::adversary::{BasisPolicy, EveStrategy};
use qkd_core::exec::Exec;
use qkd_core::protocols::{run_session, Link, Protocol, ProtocolConfig};
use qkd_core::quantum::{ChannelModel, DetectorModel, SourceModel};
use qkd_core::SimRng;

fn sessions(c: &mut Criterion) {
    let link = Link {
        source: SourceModel::AttenuatedLaser { mu: 0.5 },
        channel: ChannelModel::fiber(25.0, 0.2).with_misalignment(0.01),
        detector: DetectorModel::new(0.1, 1e-5),
    };
    let eve = EveStrategy::InterceptResend {
        basis_policy: BasisPolicy::UniformSignalBases,
    };
    let pulses = 1 << 18;
    let mut group = c.benchmark_group("bb84_session");
    group.throughput(Throughput::Elements(pulses as u64));
    group.sample_size(20);
    for exec in [Exec::Sequential, Exec::Parallel] {
        let cfg = ProtocolConfig::new(Protocol::Bb84, pulses).with_exec(exec);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &cfg, |b, cfg| {
            b.iter(|| run_session(black_box(cfg), &link, &eve, &SimRng::new(7)).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("e91_session");
    group.throughput(Throughput::Elements(pulses as u64));
    group.sample_size(20);
    for exec in [Exec::Sequential, Exec::Parallel] {
        let cfg = ProtocolConfig::new(Protocol::E91, pulses).with_exec(exec);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &cfg, |b, cfg| {
            b.iter(|| run_session(black_box(cfg), &Link::ideal(), &EveStrategy::None, &SimRng::new(7)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, sessions);
criterion_main!(benches);
