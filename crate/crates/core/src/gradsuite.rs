//! A registry of finite-difference gradient checks spanning every
//! differentiable operation in the crate, ending with the full miniature
//! denoiser. The CLI's `gradcheck` subcommand and the acceptance tests both
//! run this list; each check reports its worst relative error.

use crate::attention::{
    cross_attention, gated_cross_attention, gated_self_attention, self_attention,
    temporal_attention, AttentionParams,
};
use crate::conditioning::{location_token, CategoryTable, TokenMlp};
use crate::denoiser::{
    denoiser_forward, init_params, DenoiserConfig, EnhancerPos, InstanceFusion, Stage,
};
use crate::diffusion::{make_schedule, q_sample, training_loss};
use crate::enhancer::{enhance_instance, extract_instance_cube, motion_inputs, EnhancerParams, MotionFusion, MotionRep};
use crate::error::Result;
use crate::geometry::{roi_align, BoundingBox};
use crate::tensor::{grad_check, grad_check_subset, Rng, Tensor};
use crate::trackdata::gen_synthetic;

/// Threshold every check must beat.
pub const TOLERANCE: f64 = 1e-4;
/// Central-difference step width.
pub const STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_rel_err: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
    BoundingBox::new(x1, y1, x2, y2).expect("fixture box")
}

/// Reduce a tensor to a scalar that depends on every coordinate
/// non-uniformly, so gradients cannot cancel by symmetry.
fn probe_scalar(x: &Tensor) -> Result<Tensor> {
    let n = x.len();
    let weights: Vec<f64> = (0..n).map(|i| 0.3 + 0.07 * i as f64).collect();
    let w = Tensor::constant(&[n], weights)?;
    Ok(x.reshape(&[n])?.mul(&w)?.sum_all())
}

fn check_matmul(rng: &mut Rng) -> Result<f64> {
    let x = Tensor::randn(&[3, 4], rng);
    let b = Tensor::randn(&[4, 5], rng);
    grad_check(|x| probe_scalar(&x.matmul(&b)?), &x, STEP)
}

fn check_matmul_nt(rng: &mut Rng) -> Result<f64> {
    let x = Tensor::randn(&[3, 4], rng);
    let b = Tensor::randn(&[5, 4], rng);
    grad_check(|x| probe_scalar(&x.matmul_nt(&b)?), &x, STEP)
}

fn check_softmax(rng: &mut Rng) -> Result<f64> {
    let x = Tensor::randn(&[4, 6], rng);
    grad_check(|x| probe_scalar(&x.softmax_lastdim()?), &x, STEP)
}

fn check_layer_norm(rng: &mut Rng) -> Result<f64> {
    let x = Tensor::randn(&[4, 8], rng);
    let gain = Tensor::randn(&[8], rng);
    let bias = Tensor::randn(&[8], rng);
    grad_check(|x| probe_scalar(&x.layer_norm(&gain, &bias)?), &x, STEP)
}

fn check_layer_norm_gain(rng: &mut Rng) -> Result<f64> {
    let x = Tensor::randn(&[4, 8], rng);
    let gain = Tensor::randn(&[8], rng);
    let bias = Tensor::randn(&[8], rng);
    grad_check(|g| probe_scalar(&x.layer_norm(g, &bias)?), &gain, STEP)
}

fn check_pointwise(rng: &mut Rng) -> Result<f64> {
    let x = Tensor::randn(&[5, 5], rng);
    let y = Tensor::randn(&[5, 5], rng);
    grad_check(
        |x| probe_scalar(&x.silu().tanh().mul(&y)?.add(&x.scale(0.7))?.sub(&y)?),
        &x,
        STEP,
    )
}

fn check_broadcast_ops(rng: &mut Rng) -> Result<f64> {
    let x = Tensor::randn(&[4, 6], rng);
    let row = Tensor::randn(&[6], rng);
    let col = Tensor::randn(&[4], rng);
    let s = Tensor::randn(&[1], rng);
    grad_check(
        |x| probe_scalar(&x.add_rowvec(&row)?.mul_colvec(&col)?.mul_scalar_tensor(&s)?),
        &x,
        STEP,
    )
}

fn check_shape_ops(rng: &mut Rng) -> Result<f64> {
    let x = Tensor::randn(&[4, 6], rng);
    grad_check(
        |x| {
            let t = x.transpose2d()?; // [6, 4]
            let a = t.slice_rows(1, 5)?; // [4, 4]
            let b = t.slice_cols(0, 3)?; // [6, 3]
            let g = b.gather_rows(&[5, 0, 3, 3])?; // [4, 3]
            let j = Tensor::concat_cols(&[a, g])?; // [4, 7]
            let k = Tensor::concat_rows(&[j.clone(), j.scale(0.5)])?; // [8, 7]
            probe_scalar(&k.reshape(&[7, 8])?)
        },
        &x,
        STEP,
    )
}

fn check_stack_mean(rng: &mut Rng) -> Result<f64> {
    let x = Tensor::randn(&[6], rng);
    grad_check(
        |x| {
            let s = Tensor::stack_rows(&[x.clone(), x.silu(), x.scale(-0.3)])?;
            s.mean_all().add(&s.sum_all().scale(0.1))
        },
        &x,
        STEP,
    )
}

fn check_roi_align(rng: &mut Rng) -> Result<f64> {
    let feat = Tensor::randn(&[7, 6, 3], rng);
    let b = bx(0.12, 0.3, 0.8, 0.95);
    grad_check(|f| probe_scalar(&roi_align(f, &b, 3)?), &feat, STEP)
}

fn check_self_attention(rng: &mut Rng) -> Result<f64> {
    let params = AttentionParams::init(8, 2, rng)?;
    let x = Tensor::randn(&[5, 8], rng);
    let mask = [true, true, false, true, true];
    grad_check(
        |x| probe_scalar(&self_attention(x, &params, Some(&mask))?),
        &x,
        STEP,
    )
}

fn check_attention_weights(rng: &mut Rng) -> Result<f64> {
    let params = AttentionParams::init(8, 2, rng)?;
    let x = Tensor::randn(&[5, 8], rng);
    grad_check(
        |wq| {
            let p = AttentionParams::new(
                wq.clone(),
                params.w_k.detach(),
                params.w_v.detach(),
                params.w_o.detach(),
                params.n_heads,
            )?;
            probe_scalar(&self_attention(&x, &p, None)?)
        },
        &params.w_q,
        STEP,
    )
}

fn check_cross_attention(rng: &mut Rng) -> Result<f64> {
    let params = AttentionParams::init(8, 2, rng)?;
    let q = Tensor::randn(&[4, 8], rng);
    let ctx = Tensor::randn(&[6, 8], rng);
    grad_check(
        |ctx| probe_scalar(&cross_attention(&q, ctx, &params, None)?),
        &ctx,
        STEP,
    )
}

fn check_gated_self(rng: &mut Rng) -> Result<f64> {
    let params = AttentionParams::init(8, 2, rng)?;
    let v = Tensor::randn(&[4, 8], rng);
    let cond = Tensor::randn(&[3, 8], rng);
    let gate = Tensor::constant(&[1], vec![0.37])?;
    grad_check(
        |v| probe_scalar(&gated_self_attention(v, &cond, &params, &gate)?),
        &v,
        STEP,
    )
}

fn check_gate_scalar(rng: &mut Rng) -> Result<f64> {
    let params = AttentionParams::init(8, 2, rng)?;
    let v = Tensor::randn(&[4, 8], rng);
    let feats = Tensor::randn(&[5, 8], rng);
    // the gate at exactly zero is the interesting spot: tanh'(0) = 1
    let gate = Tensor::constant(&[1], vec![0.0])?;
    grad_check(
        |g| probe_scalar(&gated_cross_attention(&v, &feats, &params, g, None)?),
        &gate,
        STEP,
    )
}

fn check_temporal(rng: &mut Rng) -> Result<f64> {
    let params = AttentionParams::init(6, 2, rng)?;
    let latent = Tensor::randn(&[3, 2, 2, 6], rng);
    grad_check(
        |l| probe_scalar(&temporal_attention(l, &params)?),
        &latent,
        STEP,
    )
}

fn check_location_token(rng: &mut Rng) -> Result<f64> {
    let table = CategoryTable::init(4, 8, rng);
    let mlp = TokenMlp::init(8 + 8 * 2, 10, 8, rng);
    let b = bx(0.2, 0.25, 0.6, 0.7);
    grad_check(
        |w1| {
            let m = TokenMlp::new(
                w1.clone(),
                mlp.b1.detach(),
                mlp.w2.detach(),
                mlp.b2.detach(),
            )?;
            probe_scalar(&location_token(&b, 2, &table, &m, 2)?)
        },
        &mlp.w1,
        STEP,
    )
}

fn enhancer_fixture(rng: &mut Rng) -> Result<(Tensor, crate::trackdata::Tracklet, EnhancerParams)> {
    let latent = Tensor::randn(&[3, 4, 4, 5], rng);
    let tracklet = crate::trackdata::Tracklet {
        instance_id: 1,
        category_id: 0,
        boxes: vec![Some(bx(0.1, 0.1, 0.6, 0.5)), None, Some(bx(0.3, 0.4, 0.9, 0.8))],
    };
    let params = EnhancerParams::init(5, 8, 2, 2, rng)?;
    Ok((latent, tracklet, params))
}

fn check_enhancer_latent(rng: &mut Rng) -> Result<f64> {
    let (latent, tracklet, params) = enhancer_fixture(rng)?;
    grad_check(
        |l| {
            let cube = extract_instance_cube(l, &tracklet, 2, &params.absent_fill)?;
            let embs = motion_inputs(&tracklet, &params)?;
            let motion = crate::enhancer::motion_extract(&embs, &params.motion_attn, &tracklet.presence())?;
            probe_scalar(&enhance_instance(&cube, &motion, &params, MotionFusion::Concat)?)
        },
        &latent,
        STEP,
    )
}

fn check_enhancer_fill(rng: &mut Rng) -> Result<f64> {
    let (latent, tracklet, params) = enhancer_fixture(rng)?;
    grad_check(
        |fill| {
            let cube = extract_instance_cube(&latent, &tracklet, 2, fill)?;
            let motion = MotionRep {
                values: Tensor::zeros(&[3, 8]),
            };
            probe_scalar(&enhance_instance(&cube, &motion, &params, MotionFusion::Add)?)
        },
        &params.absent_fill,
        STEP,
    )
}

fn check_q_sample(rng: &mut Rng) -> Result<f64> {
    let sched = make_schedule(50, 1e-4, 0.02)?;
    let z0 = Tensor::randn(&[2, 3, 3, 2], rng);
    let eps = Tensor::randn(&[2, 3, 3, 2], rng);
    grad_check(|z| probe_scalar(&q_sample(z, 17, &eps, &sched)?), &z0, STEP)
}

fn check_training_loss(rng: &mut Rng) -> Result<f64> {
    let sched = make_schedule(25, 1e-4, 0.02)?;
    let z0 = Tensor::randn(&[1, 2, 2, 3], rng);
    let w0 = Tensor::randn(&[3, 3], rng);
    grad_check(
        |w| {
            let mut inner = Rng::seed_from(77);
            let mut model = |z_t: &Tensor, _t: usize, _c: bool| {
                z_t.reshape(&[4, 3])?.matmul(w)?.silu().reshape(&[1, 2, 2, 3])
            };
            training_loss(&mut model, &[z0.clone()], &sched, 0.0, &mut inner)
        },
        &w0,
        STEP,
    )
}

fn miniature_cfg() -> DenoiserConfig {
    DenoiserConfig {
        frames: 2,
        latent_h: 4,
        latent_w: 4,
        channels: 4,
        dim: 16,
        n_blocks: 1,
        n_heads: 2,
        mlp_hidden: 12,
        roi_r: 2,
        n_freq: 2,
        k_max: 8,
        n_categories: 8,
        stage: Stage::Video,
        enhancer_pos: EnhancerPos::Decoder,
        instance_fusion: InstanceFusion::GatedCross,
        motion_fusion: MotionFusion::Concat,
        no_instance_emb: false,
        no_enhancer: false,
    }
}

fn check_denoiser_miniature(rng: &mut Rng) -> Result<f64> {
    let cfg = miniature_cfg();
    let mut params = init_params(&cfg, rng)?;
    // open the gates so every conditioning branch carries gradient
    for name in params.names() {
        if name.ends_with(".gate") {
            params.insert(&name, Tensor::param(&[1], vec![0.25])?);
        }
    }
    let (clip, _) = gen_synthetic(rng.next_u64() % 1000, 2, 2, 8, 8)?;
    let z0 = Tensor::randn(&[2, 4, 4, 4], rng);
    let sched = make_schedule(30, 1e-4, 0.02)?;

    let mut worst: f64 = 0.0;
    for name in [
        "patch.w",
        "pos.temporal",
        "cond.mlp.w1",
        "cond.inst",
        "enh.cube.w",
        "enh.motion.wq",
        "block0.gsa.wo",
        "block0.fuse.gate",
        "block0.mlp.w1",
        "head.w",
    ] {
        let target = params.get(name)?.clone();
        let loss_of = |probe: &Tensor| {
            let mut store = params.detached();
            store.insert(name, probe.clone());
            let mut inner = Rng::seed_from(33);
            let mut model = |z_t: &Tensor, t: usize, conditioned: bool| {
                let cond = if conditioned { Some(&clip) } else { None };
                denoiser_forward(z_t, t, cond, &cfg, &store)
            };
            training_loss(&mut model, &[z0.clone()], &sched, 0.0, &mut inner)
        };
        let coords: Vec<usize> = (0..target.len().min(4)).collect();
        let rel = grad_check_subset(loss_of, &target, STEP, &coords)?;
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

type Check = fn(&mut Rng) -> Result<f64>;

const CHECKS: [(&str, Check); 21] = [
    ("matmul", check_matmul),
    ("matmul_nt", check_matmul_nt),
    ("softmax_lastdim", check_softmax),
    ("layer_norm_input", check_layer_norm),
    ("layer_norm_gain", check_layer_norm_gain),
    ("pointwise_chain", check_pointwise),
    ("broadcast_ops", check_broadcast_ops),
    ("shape_ops", check_shape_ops),
    ("stack_and_reduce", check_stack_mean),
    ("roi_align", check_roi_align),
    ("self_attention", check_self_attention),
    ("attention_weights", check_attention_weights),
    ("cross_attention_context", check_cross_attention),
    ("gated_self_attention", check_gated_self),
    ("gate_at_zero", check_gate_scalar),
    ("temporal_attention", check_temporal),
    ("location_token_mlp", check_location_token),
    ("enhancer_through_latent", check_enhancer_latent),
    ("enhancer_absent_fill", check_enhancer_fill),
    ("q_sample", check_q_sample),
    ("training_loss", check_training_loss),
];

/// Every named check plus the miniature end-to-end denoiser, evaluated with
/// RNG streams forked from `seed`.
pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    let mut master = Rng::seed_from(seed);
    let mut results = Vec::with_capacity(CHECKS.len() + 1);
    for (name, check) in CHECKS {
        let mut rng = master.fork();
        results.push(CheckResult {
            name,
            max_rel_err: check(&mut rng)?,
        });
    }
    let mut rng = master.fork();
    results.push(CheckResult {
        name: "denoiser_miniature",
        max_rel_err: check_denoiser_miniature(&mut rng)?,
    });
    Ok(results)
}
