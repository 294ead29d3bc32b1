use criterion::{criterion_group, criterion_main, Criterion};
use saan_core::data::{generate_pair, SceneSpec};
use saan_core::loss::{total_loss, LossConfig};
use saan_core::model::{AblationFlags, ModelConfig, SaanModel};
use saan_core::rng::Rng;
use saan_core::similarity::{contrastive_loss, ContrastiveConfig};
use saan_core::tensor::{Tape, Tensor};

fn bench_conv2d(c: &mut Criterion) {
    let mut rng = Rng::from_seed(1);
    let x = Tensor::<f32>::uniform(&[8, 48, 32, 32], -1.0, 1.0, &mut rng);
    let w = Tensor::<f32>::uniform(&[16, 48, 3, 3], -0.2, 0.2, &mut rng);
    c.bench_function("conv2d_fwd_8x48x32x32_to_16", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let wv = tape.leaf(w.clone());
            tape.conv2d(xv, wv, None, 1, 1).unwrap()
        })
    });
}

fn bench_forward(c: &mut Criterion) {
    let mut model =
        SaanModel::<f32>::new(ModelConfig::default(), AblationFlags::full(), 1).unwrap();
    let mut rng = Rng::from_seed(2);
    let t1 = Tensor::<f32>::uniform(&[1, 3, 64, 64], 0.0, 1.0, &mut rng);
    let t2 = Tensor::<f32>::uniform(&[1, 3, 64, 64], 0.0, 1.0, &mut rng);
    c.bench_function("full_forward_1x3x64x64", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            model.forward(&mut tape, &t1, &t2, false).unwrap()
        })
    });
}

fn bench_train_step(c: &mut Criterion) {
    let mut model =
        SaanModel::<f32>::new(ModelConfig::default(), AblationFlags::full(), 1).unwrap();
    let spec = SceneSpec {
        seed: 3,
        ..Default::default()
    };
    let samples: Vec<_> = (0..8).map(|i| generate_pair(&spec, i).unwrap()).collect();
    let t1 = Tensor::stack(&samples.iter().map(|s| &s.t1).collect::<Vec<_>>());
    let t2 = Tensor::stack(&samples.iter().map(|s| &s.t2).collect::<Vec<_>>());
    let mask = Tensor::stack(&samples.iter().map(|s| &s.mask).collect::<Vec<_>>());
    let flags = AblationFlags::full();
    let loss_cfg = LossConfig::default();
    let con_cfg = ContrastiveConfig::default();
    c.bench_function("train_step_fwd_bwd_batch8_64px", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let out = model.forward(&mut tape, &t1, &t2, true).unwrap();
            let loss = total_loss(
                &mut tape,
                out.final_logits,
                &out.aux_logits,
                Some(out.deepest),
                &mask,
                &flags,
                &loss_cfg,
                &con_cfg,
            )
            .unwrap();
            tape.backward(loss.var).unwrap();
        })
    });
}

fn bench_contrastive(c: &mut Criterion) {
    let mut rng = Rng::from_seed(4);
    let f1 = Tensor::<f32>::uniform(&[8, 128, 4, 4], -1.0, 1.0, &mut rng);
    let f2 = Tensor::<f32>::uniform(&[8, 128, 4, 4], -1.0, 1.0, &mut rng);
    let labels = Tensor::from_vec(
        &[8, 1, 4, 4],
        (0..128).map(|i| (i % 2) as f32).collect::<Vec<_>>(),
    );
    let cfg = ContrastiveConfig::default();
    c.bench_function("contrastive_loss_8x128x4x4", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let a = tape.leaf(f1.clone());
            let bb = tape.leaf(f2.clone());
            contrastive_loss(&mut tape, a, bb, &labels, &cfg).unwrap()
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_conv2d, bench_forward, bench_train_step, bench_contrastive
}
criterion_main!(benches);
