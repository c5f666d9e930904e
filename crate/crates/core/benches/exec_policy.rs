use std::path::PathBuf;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mvusim_core::codegen::Mode;
use mvusim_core::exec::ExecPolicy;
use mvusim_core::ir::ModelIR;
use mvusim_core::verify::{verify, VerifyOptions};

fn verify_trials(c: &mut Criterion) {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models");
    let mut g = c.benchmark_group("verify_16_trials");
    g.sample_size(10);
    for name in ["cnn_pipeline", "mlp3"] {
        let m = ModelIR::load(&dir.join(format!("{name}.json"))).unwrap().materialize().unwrap();
        for policy in [ExecPolicy::Sequential, ExecPolicy::Parallel] {
            let opts = VerifyOptions { seed: 1, trials: 16, mode: Mode::Pipelined, policy };
            g.bench_with_input(BenchmarkId::new(format!("{policy:?}"), name), &m, |b, m| {
                b.iter(|| assert!(verify(m, &opts).unwrap().all_passed()))
            });
        }
    }
    g.finish();
}

criterion_group!(benches, verify_trials);
criterion_main!(benches);
