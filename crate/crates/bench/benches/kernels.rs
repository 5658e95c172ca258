use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use tcm_bench::random_tensor;
use tcm_core::Tape;

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [32usize, 128, 201] {
        let a = random_tensor(1, &[n, 32]);
        let b = random_tensor(2, &[32, 128]);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| {
                let mut tape = Tape::new();
                let (x, y) = (tape.constant(a.clone()), tape.constant(b.clone()));
                black_box(tape.matmul(x, y).unwrap());
            })
        });
    }
    group.finish();
}

fn attention(c: &mut Criterion) {
    let mut group = c.benchmark_group("attention_fwd_bwd");
    for t in [50usize, 205] {
        let q = random_tensor(3, &[t, 32]);
        let k = random_tensor(4, &[t, 32]);
        let v = random_tensor(5, &[t, 32]);
        group.bench_with_input(BenchmarkId::from_parameter(t), &t, |bench, _| {
            bench.iter(|| {
                let mut tape = Tape::new();
                let (q, k, v) = (tape.param(q.clone()), tape.param(k.clone()), tape.param(v.clone()));
                let o = tape.attention(q, k, v, 4).unwrap();
                let s = tape.sum(o);
                tape.backward(s).unwrap();
                black_box(tape.grad(q).is_some());
            })
        });
    }
    group.finish();
}

criterion_group!(benches, matmul, attention);
criterion_main!(benches);
