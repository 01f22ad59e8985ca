use criterion::{criterion_group, criterion_main, Criterion};
use patchkit_bench::small_train_data;
use patchkit_core::attack::{render3d, round_gradient, sample_setup3d, AttackConfig, Patch, Scene3DConfig};
use patchkit_core::detect::{bundled_detector, input_gradient, DetectionObjective, ShakedropCfg};
use patchkit_core::geometry::{compute_vertex_stress, deform_garment, NonRigidConfig};
use patchkit_core::scene::{relight_optimize, ssim_with_grad, RelightConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn geometry(c: &mut Criterion) {
    let (model, _) = small_train_data(1);
    let cfg = NonRigidConfig::default();
    c.bench_function("vertex_stress", |b| b.iter(|| compute_vertex_stress(&model.garment).unwrap()));
    c.bench_function("deform_garment", |b| b.iter(|| deform_garment(&model.garment, &cfg, 3).unwrap()));
}

fn detector(c: &mut Criterion) {
    let (_, data) = small_train_data(1);
    let det = bundled_detector().unwrap();
    let image = &data.persons[0].image;
    c.bench_function("detect_416", |b| b.iter(|| det.detect(image).unwrap()));
    let objective = |d: &[patchkit_core::detect::Detection]| {
        let mut g = vec![0.0; d.len()];
        let best = d.iter().enumerate().max_by(|a, b| a.1.confidence.total_cmp(&b.1.confidence));
        match best {
            Some((i, det)) => {
                g[i] = 1.0;
                (det.confidence, g)
            }
            None => (0.0, g),
        }
    };
    let loss: DetectionObjective = &objective;
    let shake = ShakedropCfg::default();
    c.bench_function("input_gradient_416_shakedrop", |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        b.iter(|| input_gradient(&det, image, loss, &shake, &mut rng).unwrap())
    });
}

fn scene(c: &mut Criterion) {
    let (model, data) = small_train_data(1);
    let bg = &data.backgrounds[0];
    let patch = Patch::random(300, 300, 1).unwrap();
    let cfg = Scene3DConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let setup = sample_setup3d(bg, &model, &cfg, &mut rng, 2).unwrap();
    c.bench_function("render3d_relit", |b| b.iter(|| render3d(&setup, &model, &patch, &cfg).unwrap()));

    let a = bg.crop(100, 100, 48, 48).unwrap();
    let bimg = data.persons[0].image.crop(100, 100, 48, 48).unwrap();
    c.bench_function("ssim_grad_48", |b| b.iter(|| ssim_with_grad(&a, &bimg).unwrap()));
    let rc = RelightConfig::default();
    c.bench_function("relight_48", |b| b.iter(|| relight_optimize(&a, &bimg, &rc).unwrap()));
}

fn attack_round(c: &mut Criterion) {
    let (model, data) = small_train_data(2);
    let det = bundled_detector().unwrap();
    let cfg = AttackConfig {
        batch2d: 2,
        batch3d: 2,
        ..AttackConfig::default()
    };
    let patch = Patch::random(300, 300, 1).unwrap();
    let mut group = c.benchmark_group("attack");
    group.sample_size(10);
    group.bench_function("round_gradient_2x2", |b| {
        b.iter(|| round_gradient(0, &patch, &data, &det, &model, &cfg).unwrap())
    });
    group.finish();
}

criterion_group!(benches, geometry, detector, scene, attack_round);
criterion_main!(benches);
