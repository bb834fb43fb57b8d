//! End-to-end gradient verification of the stage-2 objective, plus
//! freeze contracts and small paired training runs.

use micro_clip::{ClipConfig, ImageEncoder};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use recon_lab::{
    feature_drift, stage1_loss, stage2_loss, PerceptualNet, ReconConfig, ReconModel, Stage2LossCfg,
};
use shape_world::Image;
use tensor_core::{grad_check_with, AdamW, AdamWConfig, Scalar, Tensor, GRAD_CHECK_TOL};

const SEEDS: [u64; 5] = [11, 23, 37, 51, 68];

fn tiny_clip_cfg() -> ClipConfig {
    ClipConfig {
        image_size: 8,
        patch: 4,
        dim: 8,
        heads: 2,
        blocks: 1,
        joint_dim: 8,
        text_blocks: 1,
        max_text_len: 8,
    }
}

fn tiny_model<T: Scalar>(seed: u64) -> (ReconModel<T>, PerceptualNet<T>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = ImageEncoder::init(&tiny_clip_cfg(), &mut rng);
    let model = ReconModel::new(enc, &ReconConfig { d_hat: 16, blocks: 1, heads: 2 }, &mut rng);
    (model, PerceptualNet::init(8, seed))
}

fn striped_image(phase: usize) -> Image {
    Image {
        size: 8,
        data: (0..192).map(|i| ((i + phase) % 5) as f32 / 4.0).collect(),
    }
}

#[test]
fn stage2_objective_gradients_match_finite_differences() {
    // The full stage-2 graph: encoder, projector, decoder, perceptual
    // net, and the distillation term against a frozen teacher.
    for seed in SEEDS {
        let (model, net) = tiny_model::<f64>(seed);
        let cfg = Stage2LossCfg::new(model.encoder.frozen_copy());
        // Perturb the student so the distillation term is active.
        let w = model.encoder.params.get("patch.w").unwrap();
        let bumped: Vec<f64> = w.to_vec().iter().map(|v| v + 0.03).collect();
        w.set_data(&bumped);

        let img = striped_image(seed as usize % 3);
        let params: Vec<Tensor<f64>> = model.params.iter().map(|(_, p)| p.clone()).collect();
        // Step 1e-6 with floor 1e-5: this composition has coordinates
        // with third derivatives near 2e3 next to gradients near 5e-5,
        // so the default step's truncation error alone exceeds the
        // tolerance there, while the smaller step's extra round-off on
        // near-zero-gradient coordinates needs the wider floor. Both
        // finite-difference noise terms then sit an order of magnitude
        // below the threshold, so anything flagged is a real adjoint
        // error.
        let report = grad_check_with(&params, 1e-6, 1e-5, |_| {
            let loss = stage2_loss(&model, &img, &cfg, &net).map_err(|e| match e {
                recon_lab::ReconError::Tensor(t) => t,
                other => panic!("unexpected error {other}"),
            })?;
            Ok(loss.total)
        })
        .unwrap();
        assert!(
            report.passes(GRAD_CHECK_TOL),
            "seed {seed}: max rel err {} at {:?} over {} coords",
            report.max_rel_err,
            report.worst,
            report.coords_checked
        );
    }
}

#[test]
fn stage1_training_leaves_encoder_bytes_untouched_and_learns() {
    let (model, net) = tiny_model::<f32>(5);
    model.encoder.params.set_trainable(false);
    let before = model.encoder.params.export();

    let mut opt = AdamW::new(AdamWConfig { lr: 3e-3, ..Default::default() }).unwrap();
    let images = [striped_image(0), striped_image(2)];
    let mut losses = Vec::new();
    for step in 0..200 {
        let img = &images[step % images.len()];
        let loss = stage1_loss(&model, img, &net, 1.0).unwrap();
        loss.total.backward().unwrap();
        opt.step(&model.params).unwrap();
        losses.push(loss.parts.total);
    }

    let after = model.encoder.params.export();
    assert_eq!(before, after, "stage-1 touched encoder parameters");

    let head: f64 = losses[..50].iter().sum::<f64>() / 50.0;
    let tail: f64 = losses[150..].iter().sum::<f64>() / 50.0;
    assert!(tail < head, "no learning: first-50 avg {head}, last-50 avg {tail}");
}

#[test]
fn untrained_reconstruction_psnr_is_poor() {
    // Saturated palette pixels against a sigmoid-initialized gray
    // output: the error floor sits near 0.25 per channel, about 6 dB.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let enc = ImageEncoder::<f32>::init(&ClipConfig::default(), &mut rng);
    let model = ReconModel::new(enc, &ReconConfig::default(), &mut rng);
    let mut total = 0.0;
    for seed in 0..5u64 {
        let img = shape_world::render(&shape_world::gen_scene(seed));
        let recon = model.reconstruct_image(&img).unwrap();
        total += eval_metrics::psnr(&img, &recon).unwrap();
    }
    let mean = total / 5.0;
    assert!(mean < 10.0, "untrained PSNR {mean} dB unexpectedly high");
}

#[test]
fn heavier_distillation_reduces_feature_drift() {
    // Paired mini-runs differing only in lambda. With lambda = 100 the
    // encoder is pinned to the teacher; with lambda = 0 it is free to
    // drift toward whatever helps reconstruction.
    let images = [striped_image(0), striped_image(1), striped_image(3)];
    let mut drifts = Vec::new();
    for lambda in [0.0, 100.0] {
        let (model, net) = tiny_model::<f32>(8);
        let mut cfg = Stage2LossCfg::new(model.encoder.frozen_copy());
        cfg.lambda = lambda;
        let mut opt = AdamW::new(AdamWConfig { lr: 3e-3, ..Default::default() }).unwrap();
        for step in 0..150 {
            let img = &images[step % images.len()];
            let loss = stage2_loss(&model, img, &cfg, &net).unwrap();
            loss.total.backward().unwrap();
            opt.step(&model.params).unwrap();
        }
        drifts.push(feature_drift(&cfg.teacher, &model.encoder, &images).unwrap());
    }
    assert!(
        drifts[1] < drifts[0],
        "drift with lambda=100 ({}) should undercut lambda=0 ({})",
        drifts[1],
        drifts[0]
    );
}
