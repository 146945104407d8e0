use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use tmlga::diffcore::{Rng, Tape};
use tmlga::model::{forward, sample_loss, Model, Objective};
use tmlga::Parameters;
use tmlga_bench::model_fixture;

fn training_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_backward");
    group.sample_size(20);
    for hidden in [16, 64] {
        let (params, embeddings, sample) = model_fixture(64, hidden);
        group.bench_with_input(BenchmarkId::new("hidden", hidden), &hidden, |bench, _| {
            bench.iter(|| {
                let mut tape = Tape::new();
                let vars = params.bind(&mut tape, &mut Vec::new());
                let out = forward(
                    &mut tape,
                    &vars,
                    sample.features.to_tensor(),
                    &sample.token_ids,
                    &embeddings,
                    0.5,
                    &mut Rng::new(0),
                    true,
                )
                .unwrap();
                let loss = sample_loss(&mut tape, &out, sample.tau_s, sample.tau_e, &Objective::default()).unwrap();
                black_box(tape.backward(loss.total).unwrap());
            })
        });
    }
    group.finish();
}

fn inference(c: &mut Criterion) {
    let (params, embeddings, sample) = model_fixture(64, 16);
    let model = Model {
        params,
        embeddings,
        dropout: 0.5,
    };
    c.bench_function("infer_n64_hidden16", |bench| bench.iter(|| black_box(model.infer(&sample).unwrap())));
}

criterion_group!(benches, training_step, inference);
criterion_main!(benches);
