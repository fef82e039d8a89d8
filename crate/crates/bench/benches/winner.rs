use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use vvca_core::mechanism::{run_auctions, VvcaParams};
use vvca_core::winner::{brute_force_winner, solve_profiles, solve_winner, Execution};
use vvca_core::{sample_batch, AuctionSize, SettingId};

const BATCH: usize = 256;

fn sizes() -> Vec<AuctionSize> {
    [(2, 5), (3, 10), (5, 10), (10, 5)]
        .into_iter()
        .map(|(n, m)| AuctionSize::new(n, m).unwrap())
        .collect()
}

fn bench_scalar_vs_lanes(c: &mut Criterion) {
    let mut group = c.benchmark_group("winner_determination");
    for size in sizes() {
        let batch = sample_batch(SettingId::A, size, BATCH, 1).unwrap();
        let params = VvcaParams::zeros(size);
        group.throughput(Throughput::Elements(BATCH as u64));
        group.bench_with_input(BenchmarkId::new("scalar", size), &batch, |b, batch| {
            b.iter(|| {
                for p in batch.profiles() {
                    std::hint::black_box(solve_winner(p, &params).unwrap());
                }
            })
        });
        group.bench_with_input(BenchmarkId::new("lanes_sequential", size), &batch, |b, batch| {
            b.iter(|| solve_profiles(batch.profiles(), &params, None, Execution::Sequential, None).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("lanes_parallel", size), &batch, |b, batch| {
            b.iter(|| solve_profiles(batch.profiles(), &params, None, Execution::Parallel, None).unwrap())
        });
    }
    group.finish();
}

fn bench_oracle(c: &mut Criterion) {
    let mut group = c.benchmark_group("oracle_vs_dp");
    for (n, m) in [(3, 3), (4, 4)] {
        let size = AuctionSize::new(n, m).unwrap();
        let batch = sample_batch(SettingId::D, size, 1, 2).unwrap();
        let p = &batch.profiles()[0];
        let params = VvcaParams::zeros(size);
        group.bench_function(BenchmarkId::new("brute_force", size), |b| {
            b.iter(|| brute_force_winner(p, &params))
        });
        group.bench_function(BenchmarkId::new("dp", size), |b| b.iter(|| solve_winner(p, &params)));
    }
    group.finish();
}

fn bench_auction(c: &mut Criterion) {
    let mut group = c.benchmark_group("full_auction");
    for size in sizes() {
        let batch = sample_batch(SettingId::B, size, BATCH, 3).unwrap();
        let params = VvcaParams::zeros(size);
        group.throughput(Throughput::Elements(BATCH as u64));
        group.bench_with_input(BenchmarkId::from_parameter(size), &batch, |b, batch| {
            b.iter(|| run_auctions(batch.profiles(), &params, Execution::Parallel).unwrap())
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = bench_scalar_vs_lanes, bench_oracle, bench_auction
}
criterion_main!(benches);
