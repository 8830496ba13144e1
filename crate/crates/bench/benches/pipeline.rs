//! Criterion benchmarks for the heavy paths: tape backward passes, scene
//! feature evaluation, neural rendering, and the analytic reference tracer.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use semscene::camera::{orbit_pose, CameraView, Intrinsics};
use semscene::scene::{generate_scene, Hypernetwork, LatentCode};
use semscene::synthetic::{make_block_object, reference_render, Template};
use semscene::{ArchDims, Model, ParamStore, Tape, TensorShape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tape_mlp_backward(c: &mut Criterion) {
    let mut store = ParamStore::new();
    let dim = 64;
    let w: Vec<f64> = (0..dim * dim).map(|i| ((i % 17) as f64 - 8.0) * 0.02).collect();
    let ids: Vec<_> = (0..4)
        .map(|l| {
            store.add(&format!("w{l}"), w.clone(), TensorShape::matrix(dim, dim)).unwrap()
        })
        .collect();
    let x: Vec<f64> = (0..32 * dim).map(|i| (i % 13) as f64 * 0.05).collect();
    let target = vec![0.1; 32 * dim];
    c.bench_function("tape_mlp_backward_4x64", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let mut h = tape.constant(&x, TensorShape::matrix(32, dim));
            for &id in &ids {
                let wv = tape.param(&store, id);
                h = tape.matmul(h, wv).unwrap();
                h = tape.tanh(h);
            }
            let loss = tape.mse(h, &target).unwrap();
            tape.backward(loss).unwrap();
            black_box(tape.param_grad(ids[0]).unwrap());
        })
    });
}

fn scene_feature_batch(c: &mut Criterion) {
    let dims = ArchDims::default();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let hn = Hypernetwork::init(&mut store, dims, &mut rng).unwrap();
    let z = LatentCode::sample_prior(dims.latent, &mut rng);
    let pts: Vec<f64> = (0..256 * 3).map(|i| ((i % 11) as f64 - 5.0) * 0.1).collect();
    c.bench_function("scene_features_256pts", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let zv = tape.constant(&z.z, TensorShape::matrix(1, dims.latent));
            let scene = generate_scene(&mut tape, &store, &hn, zv).unwrap();
            let p = tape.constant(&pts, TensorShape::matrix(256, 3));
            black_box(scene.features(&mut tape, p).unwrap());
        })
    });
}

fn neural_render_view(c: &mut Criterion) {
    let mut model = Model::init(ArchDims::default(), 10, 2.5, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let code = LatentCode::sample_prior(model.dims.latent, &mut rng);
    model.latents.insert("bench".into(), code);
    let view =
        CameraView::new(Intrinsics::centered(32), orbit_pose(2.5, 0.5, 0.3), 32, 32).unwrap();
    let mut group = c.benchmark_group("render");
    group.sample_size(10);
    group.bench_function("neural_render_32x32", |b| {
        b.iter(|| black_box(model.render("bench", &view).unwrap()))
    });
    group.finish();
}

fn reference_render_view(c: &mut Criterion) {
    let scene = make_block_object(Template::Chair, 11);
    let view =
        CameraView::new(Intrinsics::centered(32), orbit_pose(2.5, 0.5, 0.3), 32, 32).unwrap();
    c.bench_function("reference_render_32x32", |b| {
        b.iter(|| black_box(reference_render(&scene, &view)))
    });
}

criterion_group!(
    benches,
    tape_mlp_backward,
    scene_feature_batch,
    neural_render_view,
    reference_render_view
);
criterion_main!(benches);
