//! Temporal instance enhancer: per-instance feature cubes cut out of the
//! latent video with roi_align, fused with a motion representation derived
//! from the instance's box trajectory, then self-attended along that
//! instance's own timeline. The output token sets become the context for
//! gated cross-attention in the denoiser.
//!
//! Everything here is strictly per-instance; instances only meet later,
//! inside the denoiser's cross-attention.

use crate::attention::{self_attention, AttentionParams};
use crate::error::{Error, Result};
use crate::geometry::{fourier_embed, full_frame_box, roi_align};
use crate::tensor::{Rng, Tensor};
use crate::trackdata::{ClipAnnotation, Tracklet};

/// How the motion tokens join the cube tokens before the fusing attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MotionFusion {
    /// Motion tokens appended along the token axis (default).
    Concat,
    /// Each frame's motion token added onto that frame's cube tokens.
    Add,
}

/// roi_align outputs for one instance across all frames, `[T, r, r, C]`.
/// Absent frames hold the learned absent-feature fill.
pub struct InstanceFeatureCube {
    pub values: Tensor,
    pub presence: Vec<bool>,
}

/// One motion token per frame for one instance, `[T, dim]`.
pub struct MotionRep {
    pub values: Tensor,
}

/// Learned parameters of the enhancer, shared across instances.
#[derive(Clone)]
pub struct EnhancerParams {
    /// Per-channel fill for frames where the instance has no box, `[C]`.
    pub absent_fill: Tensor,
    /// Projects cube channels C to token width dim.
    pub cube_proj_w: Tensor,
    pub cube_proj_b: Tensor,
    /// Projects fourier box embeddings to token width dim.
    pub box_proj_w: Tensor,
    pub box_proj_b: Tensor,
    pub motion_attn: AttentionParams,
    pub fuse_attn: AttentionParams,
    pub n_freq: usize,
}

impl EnhancerParams {
    pub fn init(c: usize, dim: usize, n_freq: usize, n_heads: usize, rng: &mut Rng) -> Result<Self> {
        Ok(EnhancerParams {
            absent_fill: Tensor::randn_param(&[c], 1.0, rng),
            cube_proj_w: Tensor::randn_param(&[c, dim], 1.0 / (c as f64).sqrt(), rng),
            cube_proj_b: Tensor::param(&[dim], vec![0.0; dim])?,
            box_proj_w: Tensor::randn_param(&[8 * n_freq, dim], 1.0 / ((8 * n_freq) as f64).sqrt(), rng),
            box_proj_b: Tensor::param(&[dim], vec![0.0; dim])?,
            motion_attn: AttentionParams::init(dim, n_heads, rng)?,
            fuse_attn: AttentionParams::init(dim, n_heads, rng)?,
            n_freq,
        })
    }

    pub fn dim(&self) -> usize {
        self.cube_proj_w.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.cube_proj_w.shape()[0]
    }
}

fn latent_dims(latent: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match latent.shape() {
        [t, h, w, c] => Ok((*t, *h, *w, *c)),
        other => Err(Error::Contract(format!(
            "latent must be [T, H, W, C], got {other:?}"
        ))),
    }
}

/// One frame of the latent as `[H, W, C]`, graph-connected.
fn frame_slice(latent: &Tensor, t: usize) -> Result<Tensor> {
    let (frames, h, w, c) = latent_dims(latent)?;
    latent
        .reshape(&[frames, h * w * c])?
        .slice_rows(t, t + 1)?
        .reshape(&[h, w, c])
}

/// Cut the instance's per-frame roi_align features out of the latent and
/// stack them along time. Absent frames are filled with `absent_fill`.
pub fn extract_instance_cube(
    latent: &Tensor,
    tracklet: &Tracklet,
    r: usize,
    absent_fill: &Tensor,
) -> Result<InstanceFeatureCube> {
    let (t_frames, _, _, c) = latent_dims(latent)?;
    if tracklet.boxes.len() != t_frames {
        return Err(Error::Contract(format!(
            "tracklet has {} frames, latent has {t_frames}",
            tracklet.boxes.len()
        )));
    }
    if absent_fill.shape() != [c] {
        return Err(Error::Contract(format!(
            "absent fill must be [{c}], got {:?}",
            absent_fill.shape()
        )));
    }
    let mut slabs = Vec::with_capacity(t_frames);
    for t in 0..t_frames {
        let slab = match &tracklet.boxes[t] {
            Some(b) => roi_align(&frame_slice(latent, t)?, b, r)?.reshape(&[1, r * r * c])?,
            None => {
                let rows = vec![absent_fill.clone(); r * r];
                Tensor::stack_rows(&rows)?.reshape(&[1, r * r * c])?
            }
        };
        slabs.push(slab);
    }
    Ok(InstanceFeatureCube {
        values: Tensor::concat_rows(&slabs)?.reshape(&[t_frames, r, r, c])?,
        presence: tracklet.presence(),
    })
}

/// The background's cube: a full-frame box at every frame, always present.
pub fn extract_background_cube(latent: &Tensor, r: usize) -> Result<InstanceFeatureCube> {
    let (t_frames, _, _, c) = latent_dims(latent)?;
    let full = full_frame_box();
    let mut slabs = Vec::with_capacity(t_frames);
    for t in 0..t_frames {
        slabs.push(roi_align(&frame_slice(latent, t)?, &full, r)?.reshape(&[1, r * r * c])?);
    }
    Ok(InstanceFeatureCube {
        values: Tensor::concat_rows(&slabs)?.reshape(&[t_frames, r, r, c])?,
        presence: vec![true; t_frames],
    })
}

/// Project one instance's boxes to per-frame motion input tokens `[T, dim]`.
/// Absent frames are exactly zero.
pub fn motion_inputs(tracklet: &Tracklet, params: &EnhancerParams) -> Result<Tensor> {
    let t_frames = tracklet.boxes.len();
    let width = 8 * params.n_freq;
    let mut rows = Vec::with_capacity(t_frames);
    for b in &tracklet.boxes {
        rows.push(match b {
            Some(b) => fourier_embed(b, params.n_freq)?,
            None => Tensor::zeros(&[width]),
        });
    }
    let embs = Tensor::stack_rows(&rows)?
        .matmul(&params.box_proj_w)?
        .add_rowvec(&params.box_proj_b)?;
    let keep: Vec<f64> = tracklet
        .presence()
        .iter()
        .map(|&p| if p { 1.0 } else { 0.0 })
        .collect();
    embs.mul_colvec(&Tensor::constant(&[t_frames], keep)?)
}

/// Self-attention over one instance's box-embedding sequence, masked on
/// absence: the trajectory summary P.
pub fn motion_extract(
    embs: &Tensor,
    params: &AttentionParams,
    presence: &[bool],
) -> Result<MotionRep> {
    let values = self_attention(embs, params, Some(presence))?;
    Ok(MotionRep { values })
}

/// Fuse a cube with its motion representation and self-attend over the
/// instance's combined token sequence. Returns `[T*r*r + T, dim]` tokens
/// under `Concat` fusion, `[T*r*r, dim]` under `Add`.
pub fn enhance_instance(
    cube: &InstanceFeatureCube,
    motion: &MotionRep,
    params: &EnhancerParams,
    fusion: MotionFusion,
) -> Result<Tensor> {
    let (t_frames, r, r2, c) = match cube.values.shape() {
        [t, r, r2, c] if r == r2 => (*t, *r, *r2, *c),
        other => {
            return Err(Error::Contract(format!(
                "cube must be [T, r, r, C], got {other:?}"
            )))
        }
    };
    let _ = r2;
    if c != params.channels() {
        return Err(Error::Contract(format!(
            "cube channels {c} vs params channels {}",
            params.channels()
        )));
    }
    let dim = params.dim();
    if motion.values.shape() != [t_frames, dim] {
        return Err(Error::Contract(format!(
            "motion must be [{t_frames}, {dim}], got {:?}",
            motion.values.shape()
        )));
    }
    let cube_tokens = cube
        .values
        .reshape(&[t_frames * r * r, c])?
        .matmul(&params.cube_proj_w)?
        .add_rowvec(&params.cube_proj_b)?;
    let seq = match fusion {
        MotionFusion::Concat => Tensor::concat_rows(&[cube_tokens, motion.values.clone()])?,
        MotionFusion::Add => {
            // motion token t spread over frame t's r*r cube tokens
            let idx: Vec<usize> = (0..t_frames).flat_map(|t| std::iter::repeat(t).take(r * r)).collect();
            cube_tokens.add(&motion.values.gather_rows(&idx)?)?
        }
    };
    self_attention(&seq, &params.fuse_attn, None)
}

/// Run the full enhancer for every tracklet (in slot order) plus the
/// background, which uses a full-frame cube and a zero motion rep. The
/// returned token sets feed gated cross-attention.
pub fn enhance_all(
    latent: &Tensor,
    clip: &ClipAnnotation,
    params: &EnhancerParams,
    r: usize,
    fusion: MotionFusion,
) -> Result<Vec<Tensor>> {
    let (t_frames, _, _, _) = latent_dims(latent)?;
    if t_frames != clip.frames {
        return Err(Error::Contract(format!(
            "latent has {t_frames} frames, clip has {}",
            clip.frames
        )));
    }
    let mut out = Vec::with_capacity(clip.tracklets.len() + 1);
    for &tr_idx in &clip.slot_order() {
        let tr = &clip.tracklets[tr_idx];
        let cube = extract_instance_cube(latent, tr, r, &params.absent_fill)?;
        let embs = motion_inputs(tr, params)?;
        let motion = motion_extract(&embs, &params.motion_attn, &tr.presence())?;
        out.push(enhance_instance(&cube, &motion, params, fusion)?);
    }
    let bg_cube = extract_background_cube(latent, r)?;
    let bg_motion = MotionRep {
        values: Tensor::zeros(&[t_frames, params.dim()]),
    };
    out.push(enhance_instance(&bg_cube, &bg_motion, params, fusion)?);
    Ok(out)
}
