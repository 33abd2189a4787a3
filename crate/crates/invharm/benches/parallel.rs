//! Compares the data-parallel sweep against its sequential fallback on a
//! shortened degradation grid. The points are independent paired
//! simulations, so the parallel path should approach linear speedup on
//! multi-core hosts while producing identical numbers.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use invharm::analytic::ResponseMode;
use invharm::params::{default_params, DeviceHealth, HealthConfig, SystemParams};
use invharm::sim::{run_sweep, run_sweep_seq, Fidelity, SweepSpec};

fn short_spec<'a>(params: &'a SystemParams, baseline: &'a DeviceHealth) -> SweepSpec<'a> {
    SweepSpec {
        params,
        baseline,
        device: "S1".parse().unwrap(),
        fidelity: Fidelity::Averaged,
        n_cycles: 2,
        // Deliberately unsettled: the bench measures throughput, not
        // accuracy, and both paths run the same shortened transient.
        settle_cycles: 2,
        n_over: 200,
        orders: vec![0, 1, 2],
        mode: ResponseMode::LoopCorrected,
        k_max: 2,
    }
}

fn bench_sweep(c: &mut Criterion) {
    let params = default_params();
    let baseline = HealthConfig::default().baseline();
    let deltas: Vec<f64> = (0..8).map(|i| i as f64 * 1.25e-4).collect();

    let mut group = c.benchmark_group("sweep_8_points");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter_batched(
            || short_spec(&params, &baseline),
            |spec| run_sweep_seq(&spec, &deltas).unwrap(),
            BatchSize::SmallInput,
        )
    });
    group.bench_function("parallel", |b| {
        b.iter_batched(
            || short_spec(&params, &baseline),
            |spec| run_sweep(&spec, &deltas).unwrap(),
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

criterion_group!(benches, bench_sweep);
criterion_main!(benches);
