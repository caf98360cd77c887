use criterion::{criterion_group, criterion_main, Criterion};
use tfga_bench::{filled, probe_model};
use tfga_core::data::{synth_scene, SynthConfig};
use tfga_core::nn::{Conv1dSpec, Graph, Mode};
use tfga_core::train::{train_step, Adam, Model};

fn conv(c: &mut Criterion) {
    let x = filled(&[1, 1, 16000], 1);
    let w = filled(&[128, 1, 16], 2);
    c.bench_function("speech encoder conv1d fwd+bwd (2 s @ 8 kHz)", |b| {
        b.iter(|| {
            let mut g = Graph::new(Mode::Train);
            let (xv, wv) = (g.leaf(x.clone()), g.leaf(w.clone()));
            let y = g.conv1d(xv, wv, Conv1dSpec::strided(8)).unwrap();
            let s = g.sum(y);
            g.backward(s).unwrap()
        })
    });
}

fn attention(c: &mut Criterion) {
    let q = filled(&[1, 2000, 64], 3);
    let k = filled(&[1, 2000, 64], 4);
    let v = filled(&[1, 2000, 64], 5);
    let mut group = c.benchmark_group("attention fwd+bwd L=2000 d=64");
    group.sample_size(10);
    group.bench_function("chunked softmax, chunk 64", |b| {
        b.iter(|| {
            let mut g = Graph::new(Mode::Train);
            let (qv, kv, vv) = (g.leaf(q.clone()), g.leaf(k.clone()), g.leaf(v.clone()));
            let y = g.softmax_attention(qv, kv, vv, Some(64)).unwrap();
            let s = g.sum(y);
            g.backward(s).unwrap()
        })
    });
    group.bench_function("linear", |b| {
        b.iter(|| {
            let mut g = Graph::new(Mode::Train);
            let (qv, kv, vv) = (g.leaf(q.clone()), g.leaf(k.clone()), g.leaf(v.clone()));
            let y = g.linear_attention(qv, kv, vv).unwrap();
            let s = g.sum(y);
            g.backward(s).unwrap()
        })
    });
    group.finish();
}

fn training_step(c: &mut Criterion) {
    let cfg = SynthConfig {
        duration: 2.0,
        ..Default::default()
    };
    let scene = synth_scene(100, &cfg).unwrap();
    let model = Model::init(probe_model(), None, 1).unwrap();
    let mut group = c.benchmark_group("probe model");
    group.sample_size(10);
    group.bench_function("train step on one 2 s scene", |b| {
        let (mut m, mut opt) = (model.clone(), Adam::default());
        b.iter(|| train_step(&mut m, &mut opt, std::slice::from_ref(&scene), 1e-3, 5.0).unwrap())
    });
    group.bench_function("eval separate on one 2 s scene", |b| {
        b.iter(|| model.separate(&scene.mixture, &scene.eeg).unwrap())
    });
    group.finish();
}

criterion_group!(benches, conv, attention, training_step);
criterion_main!(benches);
