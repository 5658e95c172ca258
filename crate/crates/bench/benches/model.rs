use criterion::{black_box, criterion_group, criterion_main, Criterion};
use tcm_bench::random_tensor;
use tcm_core::data::Label;
use tcm_core::model::{AblationVariant, Classifier, Dropout, ModelConfig};
use tcm_core::train::weighted_cross_entropy;
use tcm_core::Tape;

fn passes(c: &mut Criterion) {
    let x = random_tensor(7, &[200, 64]);
    let mut group = c.benchmark_group("desk_model_t200");
    for variant in [AblationVariant::Baseline, AblationVariant::FullTcm] {
        let model = Classifier::new(ModelConfig::desk_scale().with_toggles(variant.toggles()), 1).unwrap();
        group.bench_function(format!("{variant:?}/score"), |b| {
            b.iter(|| black_box(model.score(&x).unwrap()))
        });
        group.bench_function(format!("{variant:?}/fwd_bwd"), |b| {
            b.iter(|| {
                let mut tape = Tape::new();
                let pass = model.forward(&mut tape, &x, true, &mut Dropout::off()).unwrap();
                let loss = weighted_cross_entropy(&mut tape, pass.logits, &[Label::Spoof], [1.0, 1.0]).unwrap();
                tape.backward(loss).unwrap();
                black_box(tape.grad(pass.params[0]).is_some());
            })
        });
    }
    group.finish();
}

criterion_group!(benches, passes);
criterion_main!(benches);
