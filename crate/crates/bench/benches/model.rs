use criterion::{criterion_group, criterion_main, Criterion};
use mmncd_core::agents::{BatchInput, Model};
use mmncd_core::datagen::{generate_dataset, GeneratorConfig};
use mmncd_core::numkit::Tape;
use mmncd_core::policy::{loss_ce, loss_ss, loss_td_batch, DEFAULT_TAU};
use mmncd_core::trainer::TrainConfig;
use std::hint::black_box;

fn forward_backward(c: &mut Criterion) {
    let ds = generate_dataset(&GeneratorConfig::default()).unwrap();
    let view = ds.training_view();
    let config = TrainConfig::default();
    let model = Model::new(config.agent_config(&view), 0).unwrap();
    let samples: Vec<_> = ds.samples().iter().take(config.batch_size).collect();
    let batch = BatchInput::from_samples(&samples, &model.config.modality_dims).unwrap();
    let refs: Vec<Option<usize>> = samples.iter().map(|s| s.label.class()).collect();
    let rewards = vec![1.0; samples.len()];

    let mut group = c.benchmark_group("model");
    group.bench_function("forward", |b| {
        b.iter(|| {
            let tape = Tape::new();
            black_box(model.forward(&tape, black_box(&batch)).unwrap().probs.value().data()[0]);
        })
    });
    group.bench_function("forward_backward", |b| {
        let mut store = model.params.clone();
        b.iter(|| {
            store.zero_grads();
            let tape = Tape::new();
            let f = model.forward(&tape, &batch).unwrap();
            let mut loss = loss_td_batch(&tape, f.q, &rewards).unwrap();
            if let Some(ce) = loss_ce(f.probs, &refs).unwrap() {
                loss = loss.add(ce).unwrap();
            }
            loss = loss.add(loss_ss(f.alpha, f.beta, DEFAULT_TAU).unwrap()).unwrap();
            tape.backward(loss, &mut store).unwrap();
        })
    });
    group.bench_function("embed_dataset", |b| {
        let all: Vec<_> = ds.samples().iter().collect();
        b.iter(|| model.embed(black_box(&all)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, forward_backward);
criterion_main!(benches);
