//! Criterion benchmarks for the hot kernels: convolution forward and
//! backward, the contrastive losses, and one full training step at the
//! desk-scale shapes (batch 8, 3x64x64 input, 32-dim features).

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use cdpcl_core::calibration::{
    difference_matrix, hard_weight_matrix, similarity_matrix, uncertainty_matrix,
};
use cdpcl_core::losses::{hpcl_loss, pcl_loss, upcl_loss, LossConfig};
use cdpcl_core::protobank::{pool_class_features, ClassFeatures, LabelBatch, PrototypeBank};
use cdpcl_core::segtrain::{batch_tensor, SegNet, TrainConfig, TrainState};
use cdpcl_core::synthdomains::{generate_scene, SplitConfig};
use cdpcl_core::{Graph, Tensor};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn bench_conv2d(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let input = rand_tensor(&mut rng, &[8, 16, 32, 32]);
    let weight = rand_tensor(&mut rng, &[32, 16, 3, 3]);
    let bias = rand_tensor(&mut rng, &[32]);

    c.bench_function("conv2d_forward_8x16x32x32", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let x = g.constant(input.clone());
            let w = g.constant(weight.clone());
            let bb = g.constant(bias.clone());
            let y = g.conv2d(x, w, Some(bb), 1, 1).unwrap();
            black_box(g.value(y).data()[0]);
        })
    });

    c.bench_function("conv2d_backward_8x16x32x32", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let x = g.leaf(input.clone(), true);
            let w = g.leaf(weight.clone(), true);
            let bb = g.leaf(bias.clone(), true);
            let y = g.conv2d(x, w, Some(bb), 1, 1).unwrap();
            let l = g.mean_all(y).unwrap();
            g.backward(l).unwrap();
            black_box(g.grad(w).unwrap().data()[0]);
        })
    });
}

fn bench_losses(c: &mut Criterion) {
    let classes = 6;
    let dim = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let feats = rand_tensor(&mut rng, &[classes, dim]);
    let present = vec![true; classes];
    let mut bank = PrototypeBank::new(classes, dim, 0.9);
    bank.update(&ClassFeatures {
        features: rand_tensor(&mut rng, &[classes, dim]),
        present: present.clone(),
    });
    let cfg = LossConfig::default();

    let aug = rand_tensor(&mut rng, &[classes, dim]);
    let d = difference_matrix(&feats, &aug, &present);
    let (u, _) = uncertainty_matrix(&d, &present);
    let (s, _) = similarity_matrix(&feats, &aug, &present);
    let h = hard_weight_matrix(&s);

    c.bench_function("pcl_loss_c6_d32", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let f = g.leaf(feats.clone(), true);
            let l = pcl_loss(&mut g, &bank, f, &present, &cfg).unwrap();
            g.backward(l).unwrap();
            black_box(g.value(l).item());
        })
    });
    c.bench_function("upcl_loss_c6_d32", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let f = g.leaf(feats.clone(), true);
            let l = upcl_loss(&mut g, &bank, &u, f, &present, &cfg).unwrap();
            g.backward(l).unwrap();
            black_box(g.value(l).item());
        })
    });
    c.bench_function("hpcl_loss_c6_d32", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let f = g.leaf(feats.clone(), true);
            let l = hpcl_loss(&mut g, &bank, &h, f, &present, &cfg).unwrap();
            g.backward(l).unwrap();
            black_box(g.value(l).item());
        })
    });
}

fn bench_pooling(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let feats = rand_tensor(&mut rng, &[8, 32, 16, 16]);
    let labels = LabelBatch {
        b: 8,
        h: 16,
        w: 16,
        data: (0..8 * 16 * 16).map(|_| rng.gen_range(0..6u8)).collect(),
    };
    c.bench_function("pool_class_features_8x32x16x16", |b| {
        b.iter(|| {
            let out = pool_class_features(&feats, &labels, 6).unwrap();
            black_box(out.features.data()[0]);
        })
    });
}

fn bench_scene(c: &mut Criterion) {
    let style = SplitConfig::default_desk(std::env::temp_dir(), 6, 0).source;
    c.bench_function("generate_scene_64x64", |b| {
        let mut seed = 0u64;
        b.iter(|| {
            seed = seed.wrapping_add(1);
            let s = generate_scene(&style, 64, 64, seed).unwrap();
            black_box(s.image.data()[0]);
        })
    });
}

fn bench_train_step(c: &mut Criterion) {
    let data = tempfile::tempdir().unwrap();
    let mut scfg = SplitConfig::default_desk(data.path().into(), 6, 11);
    scfg.train_count = 16;
    scfg.eval_count = 2;
    let dirs = cdpcl_core::synthdomains::make_split(&scfg).unwrap();
    let ds = cdpcl_core::synthdomains::read_dataset(&dirs[0]).unwrap();
    let (images, labels) = batch_tensor(&ds, &[0, 1, 2, 3, 4, 5, 6, 7]);

    let out = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        data_dir: data.path().into(),
        out_dir: out.path().into(),
        // no warm-up: measure the full contrastive step, not the seg-only one
        warmup_iters: 0,
        ..TrainConfig::default()
    };
    let mut state = TrainState::new(cfg).unwrap();

    c.bench_function("train_step_b8_c6_64x64", |b| {
        b.iter(|| {
            let log = state.train_step(&images, &labels).unwrap();
            black_box(log.l_total);
        })
    });

    let net = SegNet::new(6, 32, 0);
    c.bench_function("predict_b8_c6_64x64", |b| {
        b.iter(|| {
            let p = net.predict(&images).unwrap();
            black_box(p[0]);
        })
    });
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(10);
    targets = bench_conv2d, bench_losses, bench_pooling, bench_scene, bench_train_step
}
criterion_main!(kernels);
