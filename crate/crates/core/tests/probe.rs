//! Scratch diagnostic (not part of the suite): per-noise-level loss profile
//! of a trained checkpoint.

use trackgen_core::checkpoint::ParamStore;
use trackgen_core::denoiser::{
    denoiser_forward, DenoiserConfig, EnhancerPos, InstanceFusion, Stage,
};
use trackgen_core::diffusion::{make_schedule, q_sample};
use trackgen_core::enhancer::MotionFusion;
use trackgen_core::trackdata::{encode_frames, gen_synthetic};
use trackgen_core::{Rng, Tensor};

#[test]
#[ignore]
fn loss_profile() {
    let stage = match std::env::var("PROBE_STAGE").as_deref() {
        Ok("image") => Stage::Image,
        _ => Stage::Video,
    };
    let dim: usize = std::env::var("PROBE_DIM").ok().and_then(|v| v.parse().ok()).unwrap_or(64);
    let mlp: usize = std::env::var("PROBE_MLP").ok().and_then(|v| v.parse().ok()).unwrap_or(128);
    let blocks: usize =
        std::env::var("PROBE_BLOCKS").ok().and_then(|v| v.parse().ok()).unwrap_or(2);
    let cfg = DenoiserConfig {
        frames: 8,
        latent_h: 8,
        latent_w: 8,
        channels: 48,
        dim,
        n_blocks: blocks,
        n_heads: 4,
        mlp_hidden: mlp,
        roi_r: 4,
        n_freq: 8,
        k_max: 8,
        n_categories: 8,
        stage,
        enhancer_pos: EnhancerPos::Decoder,
        instance_fusion: InstanceFusion::GatedCross,
        motion_fusion: MotionFusion::Concat,
        no_instance_emb: false,
        no_enhancer: false,
    };
    let ckpt = std::env::var("PROBE_CKPT").unwrap();
    let params = ParamStore::load(std::path::Path::new(&ckpt)).unwrap().detached();
    let sched = make_schedule(1000, 1e-4, 0.02).unwrap();

    let mut rng = Rng::seed_from(0);
    let mut data = Vec::new();
    for _ in 0..64 {
        let n = 1 + rng.below(3);
        let seed = rng.next_u64();
        let (clip, fb) = gen_synthetic(seed, n, 8, 32, 32).unwrap();
        data.push((clip, encode_frames(&fb, 4).unwrap()));
    }

    let mut eval_rng = Rng::seed_from(777);
    for &t in &[5usize, 20, 50, 100, 200, 400, 600, 800, 950] {
        let mut acc = 0.0;
        let reps = 6;
        for r in 0..reps {
            let (clip, z0) = &data[(r * 11) % data.len()];
            let eps = Tensor::randn(z0.shape(), &mut eval_rng);
            let zt = q_sample(z0, t, &eps, &sched).unwrap();
            let pred = denoiser_forward(&zt, t, Some(clip), &cfg, &params).unwrap();
            let d: f64 = pred
                .data()
                .iter()
                .zip(eps.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / eps.len() as f64;
            acc += d;
        }
        println!("t={t:4}  cond mse {:.4}", acc / reps as f64);
    }
}

#[test]
#[ignore]
fn sampling_trajectory() {
    use trackgen_core::diffusion::{ddpm_step, make_strided};
    let cfg = DenoiserConfig {
        frames: 8,
        latent_h: 8,
        latent_w: 8,
        channels: 48,
        dim: 64,
        n_blocks: 2,
        n_heads: 4,
        mlp_hidden: 128,
        roi_r: 4,
        n_freq: 8,
        k_max: 8,
        n_categories: 8,
        stage: Stage::Video,
        enhancer_pos: EnhancerPos::Decoder,
        instance_fusion: InstanceFusion::GatedCross,
        motion_fusion: MotionFusion::Concat,
        no_instance_emb: false,
        no_enhancer: false,
    };
    let ckpt = std::env::var("PROBE_CKPT").unwrap();
    let params = ParamStore::load(std::path::Path::new(&ckpt)).unwrap().detached();
    let sched = make_schedule(1000, 1e-4, 0.02).unwrap();
    let (clip, fb) = gen_synthetic(12345, 2, 8, 32, 32).unwrap();
    let z_data = encode_frames(&fb, 4).unwrap();

    let stats = |z: &Tensor| -> (f64, f64, f64) {
        let d = z.data();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inf = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        (mean, var.sqrt(), inf)
    };
    println!("data latent: mean/std/max {:?}", stats(&z_data));

    let n_steps: usize = std::env::var("PROBE_STEPS").ok().and_then(|v| v.parse().ok()).unwrap_or(50);
    let (indices, sub) = make_strided(&sched, n_steps).unwrap();
    let mut rng = Rng::seed_from(42);
    let mut z = Tensor::randn(&[8, 8, 8, 48], &mut rng);
    for k in (0..indices.len()).rev() {
        let t = indices[k];
        let eps = denoiser_forward(&z, t, Some(&clip), &cfg, &params).unwrap();
        let (em, es, einf) = stats(&eps);
        z = ddpm_step(&z, k, &eps, &sub, &mut rng).unwrap().detach();
        let (zm, zs, zinf) = stats(&z);
        if k % (n_steps / 10).max(1) == 0 || k + 1 == indices.len() {
            println!(
                "k={k:3} t={t:3}  eps mean {em:+.3} std {es:.3} max {einf:.2}   z mean {zm:+.3} std {zs:.3} max {zinf:.2}"
            );
        }
    }
    use trackgen_core::evalkit::grounding_miou;
    use trackgen_core::trackdata::{clamp_frames, decode_latent};
    let fb2 = clamp_frames(&decode_latent(&z).unwrap()).unwrap();
    let rep = grounding_miou(&clip, &fb2).unwrap();
    println!(
        "single-clip: steps {n_steps} mIoU {:.3} detection {:.3} consistency {:.3}",
        rep.mean_iou, rep.detection_rate, rep.identity_consistency
    );
    let _ = &fb;
}

#[test]
#[ignore]
fn lr_floor() {
    use trackgen_core::denoiser::{train_stage, TrainConfig};

    let cfg = DenoiserConfig {
        frames: 8,
        latent_h: 8,
        latent_w: 8,
        channels: 48,
        dim: 64,
        n_blocks: 2,
        n_heads: 4,
        mlp_hidden: 128,
        roi_r: 4,
        n_freq: 8,
        k_max: 8,
        n_categories: 8,
        stage: Stage::Image,
        enhancer_pos: EnhancerPos::Decoder,
        instance_fusion: InstanceFusion::GatedCross,
        motion_fusion: MotionFusion::Concat,
        no_instance_emb: false,
        no_enhancer: false,
    };
    let ckpt = std::env::var("PROBE_CKPT").unwrap();
    let params = ParamStore::load(std::path::Path::new(&ckpt)).unwrap();
    let sched = make_schedule(1000, 1e-4, 0.02).unwrap();

    let mut rng = Rng::seed_from(0);
    let mut data = Vec::new();
    for _ in 0..64 {
        let n = 1 + rng.below(3);
        let seed = rng.next_u64();
        let (clip, fb) = gen_synthetic(seed, n, 8, 32, 32).unwrap();
        data.push((clip, encode_frames(&fb, 4).unwrap()));
    }

    let lr: f64 = std::env::var("PROBE_LR").ok().and_then(|v| v.parse().ok()).unwrap_or(0.002);
    let steps: usize =
        std::env::var("PROBE_TUNE_STEPS").ok().and_then(|v| v.parse().ok()).unwrap_or(3000);
    let tcfg = TrainConfig {
        steps,
        batch: 1,
        lr,
        lr_final: lr,
        momentum: 0.9,
        cond_drop: 0.1,
        log_every: 1000,
        seed: 99,
    };
    let (tuned, trace) = train_stage(&data, &cfg, params, &sched, &tcfg).unwrap();
    println!("tail trace: {trace:?}");
    let tuned = tuned.detached();

    let mut eval_rng = Rng::seed_from(777);
    for &t in &[5usize, 20, 50, 100, 200, 400, 800] {
        let mut acc = 0.0;
        let reps = 6;
        for r in 0..reps {
            let (clip, z0) = &data[(r * 11) % data.len()];
            let eps = Tensor::randn(z0.shape(), &mut eval_rng);
            let zt = q_sample(z0, t, &eps, &sched).unwrap();
            let pred = denoiser_forward(&zt, t, Some(clip), &cfg, &tuned).unwrap();
            let d: f64 = pred
                .data()
                .iter()
                .zip(eps.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / eps.len() as f64;
            acc += d;
        }
        println!("t={t:4}  tuned cond mse {:.4}", acc / reps as f64);
    }
    let out = std::env::var("PROBE_OUT").unwrap_or_else(|_| "/root/pilot/tuned.bin".into());
    tuned.save(std::path::Path::new(&out)).unwrap();
    println!("saved {out}");
}
