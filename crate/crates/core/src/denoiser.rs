//! The conditional noise predictor: a flat stack of transformer blocks over
//! patchified latents. Each block runs per-frame spatial self-attention,
//! gated self-attention against that frame's conditioning tokens, temporal
//! attention across frames, gated cross-attention against enhanced instance
//! features, and a pointwise MLP. Gates start at zero, so a fresh model is
//! bitwise independent of the conditioning inputs.
//!
//! Training is two-staged: an image stage on single frames (no temporal
//! attention, no enhancer), then a video stage whose parameter set is a
//! strict superset of the image stage's.

use crate::attention::{
    self, gated_cross_attention, gated_self_attention, self_attention, temporal_attention,
    AttentionParams,
};
use crate::checkpoint::ParamStore;
use crate::conditioning::{clip_location_tokens, frame_context, CategoryTable, ConditioningParams, InstanceTokenTable, TokenMlp};
use crate::diffusion::{cfg_combine, ddpm_step, make_strided, training_loss, NoiseSchedule};
use crate::enhancer::{enhance_all, EnhancerParams, MotionFusion};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};
use crate::trackdata::{clamp_frames, decode_latent, ClipAnnotation, FrameBuffer, Tracklet};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Image,
    Video,
}

/// Which half of the block stack carries the instance-feature fusion:
/// the encoder (first floor(n/2) blocks) or the decoder (the rest).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnhancerPos {
    Encoder,
    Decoder,
}

/// How enhanced instance features enter the visual stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceFusion {
    GatedCross,
    GatedSelf,
}

#[derive(Debug, Clone)]
pub struct DenoiserConfig {
    /// Video length in frames (the video stage requires inputs of exactly
    /// this length; the image stage runs on single frames).
    pub frames: usize,
    pub latent_h: usize,
    pub latent_w: usize,
    pub channels: usize,
    pub dim: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub mlp_hidden: usize,
    pub roi_r: usize,
    pub n_freq: usize,
    pub k_max: usize,
    pub n_categories: usize,
    pub stage: Stage,
    pub enhancer_pos: EnhancerPos,
    pub instance_fusion: InstanceFusion,
    pub motion_fusion: MotionFusion,
    pub no_instance_emb: bool,
    pub no_enhancer: bool,
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0
            || self.latent_h == 0
            || self.latent_w == 0
            || self.channels == 0
            || self.n_blocks == 0
        {
            return Err(Error::Config("all extents must be nonzero".into()));
        }
        if self.dim == 0 || self.n_heads == 0 || self.dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "dim {} must be a nonzero multiple of n_heads {}",
                self.dim, self.n_heads
            )));
        }
        if self.roi_r == 0 || self.n_freq == 0 || self.mlp_hidden == 0 {
            return Err(Error::Config("roi_r, n_freq, mlp_hidden must be nonzero".into()));
        }
        if self.k_max == 0 || self.k_max > crate::conditioning::K_MAX {
            return Err(Error::Config(format!(
                "k_max {} outside 1..={}",
                self.k_max,
                crate::conditioning::K_MAX
            )));
        }
        Ok(())
    }

    /// Tokens per frame.
    pub fn frame_tokens(&self) -> usize {
        self.latent_h * self.latent_w
    }

    /// Blocks 0..encoder_blocks() form the encoder half.
    pub fn encoder_blocks(&self) -> usize {
        self.n_blocks / 2
    }

    /// Whether block `i` carries the instance-feature fusion layer.
    pub fn fuse_at(&self, i: usize) -> bool {
        if self.stage != Stage::Video || self.no_enhancer {
            return false;
        }
        match self.enhancer_pos {
            EnhancerPos::Encoder => i < self.encoder_blocks(),
            EnhancerPos::Decoder => i >= self.encoder_blocks(),
        }
    }

    pub fn with_stage(&self, stage: Stage) -> DenoiserConfig {
        let mut c = self.clone();
        c.stage = stage;
        c
    }
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

const ATTN_SUFFIXES: [&str; 4] = ["wq", "wk", "wv", "wo"];

fn insert_attn(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut Rng) {
    let scale = 1.0 / (dim as f64).sqrt();
    for suffix in ATTN_SUFFIXES {
        store.insert(
            &format!("{prefix}.{suffix}"),
            Tensor::randn_param(&[dim, dim], scale, rng),
        );
    }
}

fn attn_view(store: &ParamStore, prefix: &str, n_heads: usize) -> Result<AttentionParams> {
    AttentionParams::new(
        store.get(&format!("{prefix}.wq"))?.clone(),
        store.get(&format!("{prefix}.wk"))?.clone(),
        store.get(&format!("{prefix}.wv"))?.clone(),
        store.get(&format!("{prefix}.wo"))?.clone(),
        n_heads,
    )
}

/// Initialize every parameter the configured stage uses. Gates start at
/// zero so conditioning branches contribute nothing until trained.
pub fn init_params(cfg: &DenoiserConfig, rng: &mut Rng) -> Result<ParamStore> {
    cfg.validate()?;
    let d = cfg.dim;
    let mut store = ParamStore::new();

    let in_scale = 1.0 / (cfg.channels as f64).sqrt();
    store.insert("patch.w", Tensor::randn_param(&[cfg.channels, d], in_scale, rng));
    store.insert("patch.b", Tensor::param(&[d], vec![0.0; d])?);
    store.insert(
        "pos.spatial",
        Tensor::randn_param(&[cfg.frame_tokens(), d], 0.02, rng),
    );
    if cfg.stage == Stage::Video {
        store.insert("pos.temporal", Tensor::randn_param(&[cfg.frames, d], 0.02, rng));
    }

    let d_scale = 1.0 / (d as f64).sqrt();
    store.insert("time.w1", Tensor::randn_param(&[d, d], d_scale, rng));
    store.insert("time.b1", Tensor::param(&[d], vec![0.0; d])?);
    store.insert("time.w2", Tensor::randn_param(&[d, d], d_scale, rng));
    store.insert("time.b2", Tensor::param(&[d], vec![0.0; d])?);

    store.insert(
        "cond.cat",
        Tensor::randn_param(&[cfg.n_categories, d], 1.0, rng),
    );
    store.insert("cond.inst", Tensor::randn_param(&[cfg.k_max, d], 1.0, rng));
    let mlp_in = d + 8 * cfg.n_freq;
    store.insert(
        "cond.mlp.w1",
        Tensor::randn_param(&[mlp_in, cfg.mlp_hidden], 1.0 / (mlp_in as f64).sqrt(), rng),
    );
    store.insert("cond.mlp.b1", Tensor::param(&[cfg.mlp_hidden], vec![0.0; cfg.mlp_hidden])?);
    store.insert(
        "cond.mlp.w2",
        Tensor::randn_param(&[cfg.mlp_hidden, d], 1.0 / (cfg.mlp_hidden as f64).sqrt(), rng),
    );
    store.insert("cond.mlp.b2", Tensor::param(&[d], vec![0.0; d])?);
    store.insert("cond.absent", Tensor::randn_param(&[d], 1.0, rng));
    store.insert("cond.caption", Tensor::randn_param(&[d], 1.0, rng));

    if cfg.stage == Stage::Video && !cfg.no_enhancer {
        store.insert("enh.fill", Tensor::randn_param(&[cfg.channels], 1.0, rng));
        store.insert(
            "enh.cube.w",
            Tensor::randn_param(&[cfg.channels, d], in_scale, rng),
        );
        store.insert("enh.cube.b", Tensor::param(&[d], vec![0.0; d])?);
        let bw = 8 * cfg.n_freq;
        store.insert(
            "enh.box.w",
            Tensor::randn_param(&[bw, d], 1.0 / (bw as f64).sqrt(), rng),
        );
        store.insert("enh.box.b", Tensor::param(&[d], vec![0.0; d])?);
        insert_attn(&mut store, "enh.motion", d, rng);
        insert_attn(&mut store, "enh.fuse", d, rng);
    }

    for i in 0..cfg.n_blocks {
        insert_attn(&mut store, &format!("block{i}.spatial"), d, rng);
        insert_attn(&mut store, &format!("block{i}.gsa"), d, rng);
        store.insert(&format!("block{i}.gsa.gate"), Tensor::param(&[1], vec![0.0])?);
        if cfg.stage == Stage::Video {
            insert_attn(&mut store, &format!("block{i}.temporal"), d, rng);
        }
        if cfg.fuse_at(i) {
            insert_attn(&mut store, &format!("block{i}.fuse"), d, rng);
            store.insert(&format!("block{i}.fuse.gate"), Tensor::param(&[1], vec![0.0])?);
        }
        store.insert(
            &format!("block{i}.mlp.w1"),
            Tensor::randn_param(&[d, cfg.mlp_hidden], d_scale, rng),
        );
        store.insert(
            &format!("block{i}.mlp.b1"),
            Tensor::param(&[cfg.mlp_hidden], vec![0.0; cfg.mlp_hidden])?,
        );
        store.insert(
            &format!("block{i}.mlp.w2"),
            Tensor::randn_param(&[cfg.mlp_hidden, d], 1.0 / (cfg.mlp_hidden as f64).sqrt(), rng),
        );
        store.insert(&format!("block{i}.mlp.b2"), Tensor::param(&[d], vec![0.0; d])?);
    }

    store.insert("head.w", Tensor::randn_param(&[d, cfg.channels], 0.01, rng));
    store.insert("head.b", Tensor::param(&[cfg.channels], vec![0.0; cfg.channels])?);
    Ok(store)
}

/// Video-stage parameters initialized from an image-stage checkpoint:
/// every image-stage parameter is carried over verbatim, the video-only
/// ones are freshly initialized.
pub fn params_from_image_stage(
    video_cfg: &DenoiserConfig,
    image_params: &ParamStore,
    rng: &mut Rng,
) -> Result<ParamStore> {
    if video_cfg.stage != Stage::Video {
        return Err(Error::Config("target config must be video stage".into()));
    }
    let mut store = init_params(video_cfg, rng)?;
    for (name, tensor) in image_params.iter() {
        let slot = store.get(name)?;
        if slot.shape() != tensor.shape() {
            return Err(Error::ShapeMismatch {
                op: "stage-1 parameter import",
                left: slot.shape().to_vec(),
                right: tensor.shape().to_vec(),
            });
        }
        store.insert(name, tensor.detach_param());
    }
    Ok(store)
}

/// Stage startup policy: the image stage always starts fresh; the video
/// stage requires an image-stage checkpoint unless cold start is allowed.
pub fn prepare_stage_params(
    cfg: &DenoiserConfig,
    image_checkpoint: Option<&ParamStore>,
    allow_cold_start: bool,
    rng: &mut Rng,
) -> Result<ParamStore> {
    match (cfg.stage, image_checkpoint) {
        (Stage::Image, _) => init_params(cfg, rng),
        (Stage::Video, Some(p)) => params_from_image_stage(cfg, p, rng),
        (Stage::Video, None) if allow_cold_start => init_params(cfg, rng),
        (Stage::Video, None) => Err(Error::Config(
            "video stage needs an image-stage checkpoint (or explicit cold-start override)".into(),
        )),
    }
}

fn cond_view(store: &ParamStore, cfg: &DenoiserConfig) -> Result<ConditioningParams> {
    Ok(ConditioningParams {
        categories: CategoryTable::new(store.get("cond.cat")?.clone())?,
        instances: InstanceTokenTable::new(store.get("cond.inst")?.clone())?,
        mlp: TokenMlp::new(
            store.get("cond.mlp.w1")?.clone(),
            store.get("cond.mlp.b1")?.clone(),
            store.get("cond.mlp.w2")?.clone(),
            store.get("cond.mlp.b2")?.clone(),
        )?,
        absent: store.get("cond.absent")?.clone(),
        caption: store.get("cond.caption")?.clone(),
        n_freq: cfg.n_freq,
    })
}

fn enhancer_view(store: &ParamStore, cfg: &DenoiserConfig) -> Result<EnhancerParams> {
    Ok(EnhancerParams {
        absent_fill: store.get("enh.fill")?.clone(),
        cube_proj_w: store.get("enh.cube.w")?.clone(),
        cube_proj_b: store.get("enh.cube.b")?.clone(),
        box_proj_w: store.get("enh.box.w")?.clone(),
        box_proj_b: store.get("enh.box.b")?.clone(),
        motion_attn: attn_view(store, "enh.motion", cfg.n_heads)?,
        fuse_attn: attn_view(store, "enh.fuse", cfg.n_heads)?,
        n_freq: cfg.n_freq,
    })
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

/// Deterministic sinusoidal embedding of the diffusion step.
fn timestep_row(t: usize, dim: usize) -> Tensor {
    let half = dim / 2;
    let mut v = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(i as f64) * (10_000.0f64).ln() / half as f64).exp();
        v[i] = (t as f64 * freq).sin();
        v[half + i] = (t as f64 * freq).cos();
    }
    if dim % 2 == 1 {
        v[dim - 1] = 1.0;
    }
    Tensor::constant(&[1, dim], v).expect("shape matches data")
}

fn pointwise_mlp(x: &Tensor, store: &ParamStore, prefix: &str) -> Result<Tensor> {
    let h = attention::unit_ln(x)?
        .matmul(store.get(&format!("{prefix}.w1"))?)?
        .add_rowvec(store.get(&format!("{prefix}.b1"))?)?
        .silu()
        .matmul(store.get(&format!("{prefix}.w2"))?)?
        .add_rowvec(store.get(&format!("{prefix}.b2"))?)?;
    x.add(&h)
}

/// Predict the noise in `z_t` at diffusion step `t`. `cond` carries the
/// tracklet conditioning; `None` is the null condition of classifier-free
/// guidance (every conditioning insertion is skipped entirely).
///
/// Input is `[T, H, W, C]` latent cells; output has the same shape. The
/// video stage requires `T == cfg.frames`; the image stage treats frames
/// independently (no temporal mixing, no enhancer).
pub fn denoiser_forward(
    z_t: &Tensor,
    t: usize,
    cond: Option<&ClipAnnotation>,
    cfg: &DenoiserConfig,
    params: &ParamStore,
) -> Result<Tensor> {
    let (t_frames, h, w, c) = match z_t.shape() {
        [t, h, w, c] => (*t, *h, *w, *c),
        other => {
            return Err(Error::Contract(format!(
                "denoiser input must be [T, H, W, C], got {other:?}"
            )))
        }
    };
    if h != cfg.latent_h || w != cfg.latent_w || c != cfg.channels {
        return Err(Error::Contract(format!(
            "latent extents {h}x{w}x{c} do not match config {}x{}x{}",
            cfg.latent_h, cfg.latent_w, cfg.channels
        )));
    }
    if cfg.stage == Stage::Video && t_frames != cfg.frames {
        return Err(Error::Contract(format!(
            "video stage expects {} frames, got {t_frames}",
            cfg.frames
        )));
    }
    if let Some(clip) = cond {
        if clip.frames != t_frames {
            return Err(Error::Contract(format!(
                "conditioning covers {} frames, latent has {t_frames}",
                clip.frames
            )));
        }
    }
    let m = cfg.frame_tokens();

    // patch embedding plus learned positions
    let mut x = z_t
        .reshape(&[t_frames * m, c])?
        .matmul(params.get("patch.w")?)?
        .add_rowvec(params.get("patch.b")?)?;
    let spatial_idx: Vec<usize> = (0..t_frames * m).map(|i| i % m).collect();
    x = x.add(&params.get("pos.spatial")?.gather_rows(&spatial_idx)?)?;
    if cfg.stage == Stage::Video {
        let temporal_idx: Vec<usize> = (0..t_frames * m).map(|i| i / m).collect();
        x = x.add(&params.get("pos.temporal")?.gather_rows(&temporal_idx)?)?;
    }

    // timestep embedding, shared by every token
    let time = timestep_row(t, cfg.dim)
        .matmul(params.get("time.w1")?)?
        .add_rowvec(params.get("time.b1")?)?
        .silu()
        .matmul(params.get("time.w2")?)?
        .add_rowvec(params.get("time.b2")?)?
        .reshape(&[cfg.dim])?;
    x = x.add_rowvec(&time)?;

    // conditioning contexts, shared by every block
    let frame_contexts: Option<Vec<Tensor>> = match cond {
        Some(clip) => {
            let cp = cond_view(params, cfg)?;
            let grid = clip_location_tokens(clip, &cp, !cfg.no_instance_emb)?;
            let mut ctxs = Vec::with_capacity(t_frames);
            for f in 0..t_frames {
                ctxs.push(frame_context(&grid, f, &cp)?);
            }
            Some(ctxs)
        }
        None => None,
    };
    let instance_feats: Option<Tensor> = match cond {
        Some(clip) if cfg.stage == Stage::Video && !cfg.no_enhancer => {
            let ep = enhancer_view(params, cfg)?;
            let sets = enhance_all(z_t, clip, &ep, cfg.roi_r, cfg.motion_fusion)?;
            Some(Tensor::concat_rows(&sets)?)
        }
        _ => None,
    };

    for i in 0..cfg.n_blocks {
        // per-frame spatial self-attention
        let spatial = attn_view(params, &format!("block{i}.spatial"), cfg.n_heads)?;
        let mut frames_out = Vec::with_capacity(t_frames);
        for f in 0..t_frames {
            let vf = x.slice_rows(f * m, (f + 1) * m)?;
            frames_out.push(self_attention(&vf, &spatial, None)?);
        }
        x = Tensor::concat_rows(&frames_out)?;

        // gated self-attention with the frame's conditioning tokens
        if let Some(ctxs) = &frame_contexts {
            let gsa = attn_view(params, &format!("block{i}.gsa"), cfg.n_heads)?;
            let gate = params.get(&format!("block{i}.gsa.gate"))?;
            let mut frames_out = Vec::with_capacity(t_frames);
            for f in 0..t_frames {
                let vf = x.slice_rows(f * m, (f + 1) * m)?;
                frames_out.push(gated_self_attention(&vf, &ctxs[f], &gsa, gate)?);
            }
            x = Tensor::concat_rows(&frames_out)?;
        }

        // temporal attention across frames at each position
        if cfg.stage == Stage::Video {
            let temporal = attn_view(params, &format!("block{i}.temporal"), cfg.n_heads)?;
            let vid = x.reshape(&[t_frames, cfg.latent_h, cfg.latent_w, cfg.dim])?;
            x = temporal_attention(&vid, &temporal)?.reshape(&[t_frames * m, cfg.dim])?;
        }

        // instance-feature fusion
        if cfg.fuse_at(i) {
            if let Some(feats) = &instance_feats {
                let fuse = attn_view(params, &format!("block{i}.fuse"), cfg.n_heads)?;
                let gate = params.get(&format!("block{i}.fuse.gate"))?;
                x = match cfg.instance_fusion {
                    InstanceFusion::GatedCross => {
                        gated_cross_attention(&x, feats, &fuse, gate, None)?
                    }
                    InstanceFusion::GatedSelf => gated_self_attention(&x, feats, &fuse, gate)?,
                };
            }
        }

        x = pointwise_mlp(&x, params, &format!("block{i}.mlp"))?;
    }

    // The head reads the raw residual stream. A norm here would pin the
    // output scale, and an ancestral chain whose noise estimate cannot grow
    // with its input never recovers once the latent drifts hot.
    x.matmul(params.get("head.w")?)?
        .add_rowvec(params.get("head.b")?)?
        .reshape(&[t_frames, h, w, c])
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: usize,
    /// Training examples averaged into each parameter update. Each element
    /// draws its own clip, noise level, and noise.
    pub batch: usize,
    pub lr: f64,
    /// Learning rate at the last step; the rate follows a half-cosine from
    /// `lr` down to this value. Equal to `lr` means a constant rate. The
    /// gradient-noise floor tracks lr/batch, and the low-noise end of the
    /// denoising task only resolves once that floor comes down.
    pub lr_final: f64,
    pub momentum: f64,
    pub cond_drop: f64,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 0,
            batch: 1,
            lr: 1e-3,
            lr_final: 1e-3,
            momentum: 0.9,
            cond_drop: 0.1,
            log_every: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Learning rate for a given step (half-cosine interpolation).
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.steps <= 1 || self.lr_final == self.lr {
            return self.lr;
        }
        let frac = step as f64 / (self.steps - 1) as f64;
        let w = 0.5 * (1.0 + (std::f64::consts::PI * frac).cos());
        self.lr_final + (self.lr - self.lr_final) * w
    }
}

/// A single-frame view of a clip: frame `t`'s latent slice plus an
/// annotation keeping only the tracklets present in that frame.
fn single_frame_view(
    clip: &ClipAnnotation,
    z0: &Tensor,
    t: usize,
) -> Result<(ClipAnnotation, Tensor)> {
    let (frames, h, w, c) = match z0.shape() {
        [f, h, w, c] => (*f, *h, *w, *c),
        other => {
            return Err(Error::Contract(format!(
                "latent must be [T, H, W, C], got {other:?}"
            )))
        }
    };
    let tracklets: Vec<Tracklet> = clip
        .tracklets
        .iter()
        .filter_map(|tr| {
            tr.boxes[t].map(|b| Tracklet {
                instance_id: tr.instance_id,
                category_id: tr.category_id,
                boxes: vec![Some(b)],
            })
        })
        .collect();
    let frame_clip = ClipAnnotation {
        frames: 1,
        width: clip.width,
        height: clip.height,
        fps: clip.fps,
        tracklets,
        caption: clip.caption.clone(),
    };
    let slice = z0
        .reshape(&[frames, h * w * c])?
        .slice_rows(t, t + 1)?
        .reshape(&[1, h, w, c])?;
    Ok((frame_clip, slice))
}

/// Momentum SGD on the noise-prediction loss. Each step rebuilds the
/// parameters as fresh graph leaves, draws one clip, and updates every
/// parameter from its gradient. Deterministic for a fixed seed.
///
/// In the image stage each drawn clip contributes one random frame; in the
/// video stage the whole clip is one training example.
pub fn train_stage(
    data: &[(ClipAnnotation, Tensor)],
    cfg: &DenoiserConfig,
    params: ParamStore,
    sched: &NoiseSchedule,
    tcfg: &TrainConfig,
) -> Result<(ParamStore, Vec<(usize, f64)>)> {
    if data.is_empty() {
        return Err(Error::Contract("training needs at least one clip".into()));
    }
    cfg.validate()?;
    let mut rng = Rng::seed_from(tcfg.seed);
    let mut velocity: BTreeMap<String, Vec<f64>> = params
        .iter()
        .map(|(k, v)| (k.clone(), vec![0.0; v.len()]))
        .collect();
    let mut current = params;
    let mut trace = Vec::new();

    if tcfg.batch == 0 {
        return Err(Error::Contract("batch size must be at least 1".into()));
    }

    for step in 0..tcfg.steps {
        let leaves = current.leaves();
        let mut clips = Vec::with_capacity(tcfg.batch);
        let mut z0s = Vec::with_capacity(tcfg.batch);
        for _ in 0..tcfg.batch {
            let (clip, z0_full) = &data[rng.below(data.len())];
            let (clip_step, z0) = match cfg.stage {
                Stage::Image => {
                    let f = rng.below(clip.frames);
                    single_frame_view(clip, z0_full, f)?
                }
                Stage::Video => (clip.clone(), z0_full.clone()),
            };
            clips.push(clip_step);
            z0s.push(z0);
        }

        // training_loss walks the batch in order, one model call per element.
        let mut element = 0;
        let mut model = |z_t: &Tensor, t: usize, conditioned: bool| {
            let cond = if conditioned { Some(&clips[element]) } else { None };
            element += 1;
            denoiser_forward(z_t, t, cond, cfg, &leaves)
        };
        let loss = training_loss(&mut model, &z0s, sched, tcfg.cond_drop, &mut rng)?;
        let loss_value = loss.scalar()?;
        if !loss_value.is_finite() {
            return Err(Error::Numeric(format!(
                "loss diverged at step {step}: {loss_value}"
            )));
        }
        loss.backward()?;

        let lr = tcfg.lr_at(step);
        let mut next = ParamStore::new();
        for (name, tensor) in leaves.iter() {
            let grad = tensor.grad().unwrap_or_else(|| vec![0.0; tensor.len()]);
            let vel = velocity.get_mut(name).expect("velocity tracks every param");
            let mut vals = tensor.data().to_vec();
            for j in 0..vals.len() {
                vel[j] = tcfg.momentum * vel[j] + grad[j];
                vals[j] -= lr * vel[j];
                if !vals[j].is_finite() {
                    return Err(Error::Numeric(format!(
                        "parameter {name} left the reals at step {step}"
                    )));
                }
            }
            next.insert(name, Tensor::param(tensor.shape(), vals)?);
        }
        current = next;

        if step % tcfg.log_every == 0 || step + 1 == tcfg.steps {
            trace.push((step, loss_value));
        }
    }
    Ok((current, trace))
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Generate a clip for the given tracklets: seeded Gaussian start, strided
/// ancestral steps (the model is always called at the original step index),
/// classifier-free guidance, then decode to pixel frames.
///
/// `guidance == 1` runs only the conditional branch and `guidance == 0`
/// only the unconditional one, so those settings are bitwise identical to
/// pipelines without the combination step.
pub fn sample_clip(
    clip: &ClipAnnotation,
    cfg: &DenoiserConfig,
    params: &ParamStore,
    sched: &NoiseSchedule,
    n_steps: usize,
    guidance: f64,
    seed: u64,
) -> Result<(Tensor, FrameBuffer)> {
    cfg.validate()?;
    clip.validate()?;
    let infer = params.detached();
    let (indices, sub) = make_strided(sched, n_steps)?;
    let mut rng = Rng::seed_from(seed);
    let mut z = Tensor::randn(
        &[clip.frames, cfg.latent_h, cfg.latent_w, cfg.channels],
        &mut rng,
    );
    for k in (0..indices.len()).rev() {
        let t_orig = indices[k];
        let eps = if guidance == 0.0 {
            denoiser_forward(&z, t_orig, None, cfg, &infer)?
        } else if guidance == 1.0 {
            denoiser_forward(&z, t_orig, Some(clip), cfg, &infer)?
        } else {
            let eps_c = denoiser_forward(&z, t_orig, Some(clip), cfg, &infer)?;
            let eps_u = denoiser_forward(&z, t_orig, None, cfg, &infer)?;
            cfg_combine(&eps_c, &eps_u, guidance)?
        };
        z = ddpm_step(&z, k, &eps, &sub, &mut rng)?.detach();
    }
    let frames = clamp_frames(&decode_latent(&z)?)?;
    Ok((z, frames))
}
