//! Tracklet data model, annotation documents, the synthetic moving-shapes
//! world, and the lossless patchify frame<->latent codec.
//!
//! Annotation documents are UTF-8 JSON with pixel-space boxes; internally
//! boxes are normalized to [0,1]. The synthetic world renders solid-color
//! rectangles on a gray background, one distinct hue per instance, moving in
//! disjoint horizontal lanes so instances never overlap and the blob
//! detector can recover every box exactly.

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use crate::conditioning::K_MAX;
use crate::error::{AnnotationError, Error, Result};
use crate::geometry::BoundingBox;
use crate::tensor::{Rng, Tensor};

// ---------------------------------------------------------------------------
// data model
// ---------------------------------------------------------------------------

/// One instance's per-frame boxes across a clip. `None` marks frames where
/// the instance is absent (occluded or out of scene).
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub instance_id: u32,
    pub category_id: u32,
    /// Normalized boxes, one entry per frame.
    pub boxes: Vec<Option<BoundingBox>>,
}

impl Tracklet {
    pub fn present(&self, frame: usize) -> bool {
        self.boxes.get(frame).map_or(false, |b| b.is_some())
    }

    /// Index of the first frame where the instance appears.
    pub fn first_present_frame(&self) -> Option<usize> {
        self.boxes.iter().position(|b| b.is_some())
    }

    pub fn presence(&self) -> Vec<bool> {
        self.boxes.iter().map(|b| b.is_some()).collect()
    }
}

/// A clip's full annotation: extents, tracklets, optional caption.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipAnnotation {
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    pub fps: Option<f64>,
    pub tracklets: Vec<Tracklet>,
    pub caption: Option<String>,
}

impl ClipAnnotation {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(AnnotationError::Header("frames must be >= 1".into()).into());
        }
        if self.width == 0 || self.height == 0 {
            return Err(AnnotationError::Header("width and height must be >= 1".into()).into());
        }
        if let Some(fps) = self.fps {
            if !(fps.is_finite() && fps > 0.0) {
                return Err(AnnotationError::Header(format!("fps must be positive, got {fps}")).into());
            }
        }
        if self.tracklets.len() > K_MAX {
            return Err(Error::Capacity {
                what: "tracklets per clip".into(),
                requested: self.tracklets.len(),
                max: K_MAX,
            });
        }
        let mut seen = std::collections::BTreeSet::new();
        for tr in &self.tracklets {
            if !seen.insert(tr.instance_id) {
                return Err(AnnotationError::DuplicateId(tr.instance_id).into());
            }
            if tr.boxes.len() != self.frames {
                return Err(AnnotationError::RaggedFrames {
                    instance_id: tr.instance_id,
                    got: tr.boxes.len(),
                    expected: self.frames,
                }
                .into());
            }
            if tr.first_present_frame().is_none() {
                return Err(AnnotationError::NoPresentFrame {
                    instance_id: tr.instance_id,
                }
                .into());
            }
        }
        Ok(())
    }

    /// Tracklet order used for instance token slots: by first appearance,
    /// ties broken by instance id. Returns indices into `self.tracklets`.
    pub fn slot_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.tracklets.len()).collect();
        idx.sort_by_key(|&i| {
            let tr = &self.tracklets[i];
            (tr.first_present_frame().unwrap_or(usize::MAX), tr.instance_id)
        });
        idx
    }
}

/// Pixel data for a clip, shape `[T, height, width, 3]`, values in [0,1].
#[derive(Debug, Clone)]
pub struct FrameBuffer {
    pub pixels: Tensor,
}

impl FrameBuffer {
    pub fn new(pixels: Tensor) -> Result<Self> {
        match pixels.shape() {
            [_, _, _, 3] => Ok(FrameBuffer { pixels }),
            other => Err(Error::Contract(format!(
                "frame buffer must be [T, h, w, 3], got {other:?}"
            ))),
        }
    }

    pub fn frames(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }

    /// One frame's pixels as a flat `h*w*3` slice.
    pub fn frame(&self, t: usize) -> Result<&[f64]> {
        let (frames, stride) = (self.frames(), self.height() * self.width() * 3);
        if t >= frames {
            return Err(Error::IndexOutOfRange {
                what: "frame".into(),
                index: t,
                bound: frames,
            });
        }
        Ok(&self.pixels.data()[t * stride..(t + 1) * stride])
    }

    pub fn matches(&self, clip: &ClipAnnotation) -> bool {
        self.frames() == clip.frames
            && self.height() == clip.height as usize
            && self.width() == clip.width as usize
    }
}

// ---------------------------------------------------------------------------
// annotation document parsing
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDoc {
    #[serde(default)]
    fps: Option<f64>,
    width: u32,
    height: u32,
    frames: usize,
    tracklets: Vec<RawTracklet>,
    #[serde(default)]
    caption: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTracklet {
    id: u32,
    category: u32,
    boxes: Vec<Option<[f64; 4]>>,
}

/// Parse and validate an annotation document. Pixel boxes are normalized
/// to [0,1] by the document's own extents.
pub fn parse_annotations(bytes: &[u8]) -> Result<ClipAnnotation> {
    let raw: RawDoc = serde_json::from_slice(bytes).map_err(|e| AnnotationError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if raw.frames == 0 {
        return Err(AnnotationError::Header("frames must be >= 1".into()).into());
    }
    if raw.width == 0 || raw.height == 0 {
        return Err(AnnotationError::Header("width and height must be >= 1".into()).into());
    }

    let (w, h) = (raw.width as f64, raw.height as f64);
    let mut tracklets = Vec::with_capacity(raw.tracklets.len());
    for rt in &raw.tracklets {
        if rt.boxes.len() != raw.frames {
            return Err(AnnotationError::RaggedFrames {
                instance_id: rt.id,
                got: rt.boxes.len(),
                expected: raw.frames,
            }
            .into());
        }
        let mut boxes = Vec::with_capacity(rt.boxes.len());
        for (frame, entry) in rt.boxes.iter().enumerate() {
            let b = match entry {
                None => None,
                Some([x1, y1, x2, y2]) => {
                    for (&v, bound) in [(x1, w), (y1, h), (x2, w), (y2, h)] {
                        if !v.is_finite() || v < 0.0 || v > bound {
                            return Err(AnnotationError::CoordOutOfRange {
                                instance_id: rt.id,
                                frame,
                                value: v,
                                bound,
                            }
                            .into());
                        }
                    }
                    if x2 <= x1 || y2 <= y1 {
                        return Err(AnnotationError::BoxOrder {
                            instance_id: rt.id,
                            frame,
                        }
                        .into());
                    }
                    Some(BoundingBox::new(x1 / w, y1 / h, x2 / w, y2 / h)?)
                }
            };
            boxes.push(b);
        }
        tracklets.push(Tracklet {
            instance_id: rt.id,
            category_id: rt.category,
            boxes,
        });
    }

    let clip = ClipAnnotation {
        frames: raw.frames,
        width: raw.width,
        height: raw.height,
        fps: raw.fps,
        tracklets,
        caption: raw.caption,
    };
    clip.validate()?;
    Ok(clip)
}

fn push_fixed6(out: &mut String, v: f64) {
    let _ = write!(out, "{v:.6}");
}

fn push_json_string(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

/// Serialize an annotation back to its document form: fixed key order,
/// pixel-space boxes with 6-decimal fixed-point coordinates.
pub fn serialize_annotations(clip: &ClipAnnotation) -> String {
    let (w, h) = (clip.width as f64, clip.height as f64);
    let mut out = String::new();
    out.push_str("{\n");
    if let Some(fps) = clip.fps {
        out.push_str("  \"fps\": ");
        push_fixed6(&mut out, fps);
        out.push_str(",\n");
    }
    let _ = write!(out, "  \"width\": {},\n", clip.width);
    let _ = write!(out, "  \"height\": {},\n", clip.height);
    let _ = write!(out, "  \"frames\": {},\n", clip.frames);
    out.push_str("  \"tracklets\": [");
    for (i, tr) in clip.tracklets.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str("\n    {");
        let _ = write!(out, "\"id\": {}, \"category\": {}, \"boxes\": [", tr.instance_id, tr.category_id);
        for (j, b) in tr.boxes.iter().enumerate() {
            if j > 0 {
                out.push_str(", ");
            }
            match b {
                None => out.push_str("null"),
                Some(b) => {
                    out.push('[');
                    for (k, v) in [b.x1 * w, b.y1 * h, b.x2 * w, b.y2 * h].into_iter().enumerate() {
                        if k > 0 {
                            out.push_str(", ");
                        }
                        push_fixed6(&mut out, v);
                    }
                    out.push(']');
                }
            }
        }
        out.push_str("]}");
    }
    if clip.tracklets.is_empty() {
        out.push(']');
    } else {
        out.push_str("\n  ]");
    }
    if let Some(cap) = &clip.caption {
        out.push_str(",\n  \"caption\": ");
        push_json_string(&mut out, cap);
    }
    out.push_str("\n}\n");
    out
}

// ---------------------------------------------------------------------------
// synthetic moving-shapes world
// ---------------------------------------------------------------------------

/// Solid palette on the 1/256 grid: distinct hues, every entry far from the
/// 0.5 gray background in at least one channel.
pub const PALETTE: [[f64; 3]; 8] = [
    [224.0 / 256.0, 32.0 / 256.0, 32.0 / 256.0],
    [32.0 / 256.0, 224.0 / 256.0, 32.0 / 256.0],
    [32.0 / 256.0, 32.0 / 256.0, 224.0 / 256.0],
    [224.0 / 256.0, 224.0 / 256.0, 32.0 / 256.0],
    [224.0 / 256.0, 32.0 / 256.0, 224.0 / 256.0],
    [32.0 / 256.0, 224.0 / 256.0, 224.0 / 256.0],
    [224.0 / 256.0, 128.0 / 256.0, 32.0 / 256.0],
    [128.0 / 256.0, 32.0 / 256.0, 224.0 / 256.0],
];

pub const BACKGROUND: f64 = 128.0 / 256.0;

pub const N_CATEGORIES: usize = PALETTE.len();

struct ShapeSim {
    category: u32,
    // pixel-space state
    x: i64,
    y: i64,
    vx: i64,
    vy: i64,
    w0: i64,
    h0: i64,
    dw: i64,
    dh: i64,
    lane_y0: i64,
    lane_y1: i64, // exclusive usable bound
    absent: Option<(usize, usize)>, // [start, end)
}

impl ShapeSim {
    fn size_at(&self, t: usize, t_last: usize, max_w: i64, max_h: i64) -> (i64, i64) {
        let ramp = |base: i64, delta: i64, cap: i64| -> i64 {
            let v = if t_last == 0 {
                base
            } else {
                base + (delta as f64 * t as f64 / t_last as f64).round() as i64
            };
            v.clamp(3, cap)
        };
        (ramp(self.w0, self.dw, max_w), ramp(self.h0, self.dh, max_h))
    }
}

fn reflect(pos: i64, lo: i64, hi: i64, vel: &mut i64) -> i64 {
    // Reflect pos into [lo, hi], flipping velocity on each bounce.
    let mut p = pos;
    if hi <= lo {
        return lo;
    }
    loop {
        if p < lo {
            p = 2 * lo - p;
            *vel = -*vel;
        } else if p > hi {
            p = 2 * hi - p;
            *vel = -*vel;
        } else {
            return p;
        }
    }
}

/// Generate one synthetic clip: rectangles with constant velocity and
/// bounce, optional disappearance windows and monotone size ramps, each in
/// its own horizontal lane so instances never overlap. The annotation boxes
/// are the exact pixel bounds of the rendered rectangles.
pub fn gen_synthetic(
    seed: u64,
    n_instances: usize,
    t_frames: usize,
    width: u32,
    height: u32,
) -> Result<(ClipAnnotation, FrameBuffer)> {
    if n_instances > K_MAX {
        return Err(Error::Capacity {
            what: "synthetic instances".into(),
            requested: n_instances,
            max: K_MAX,
        });
    }
    if t_frames == 0 || width == 0 || height == 0 {
        return Err(Error::Config("clip extents must be positive".into()));
    }
    if n_instances > 0 {
        let lane_h = height as i64 / n_instances as i64;
        if lane_h < 4 || width < 5 {
            return Err(Error::Config(format!(
                "{width}x{height} too small for {n_instances} lanes of >= 4 rows"
            )));
        }
    }

    let mut rng = Rng::seed_from(seed);
    let (wi, hi) = (width as i64, height as i64);
    let t_last = t_frames - 1;

    // Distinct category (hence hue) per instance within the clip.
    let mut cats: Vec<u32> = (0..N_CATEGORIES as u32).collect();
    rng.shuffle(&mut cats);

    let mut sims = Vec::with_capacity(n_instances);
    for i in 0..n_instances {
        let lane_h = hi / n_instances as i64;
        let lane_y0 = i as i64 * lane_h;
        // Last row of each lane stays background so 4-connected components
        // from adjacent lanes can never merge.
        let lane_y1 = lane_y0 + lane_h - 1;
        let max_h = (lane_y1 - lane_y0).min(8);
        let max_w = (wi - 2).min(8);
        let w0 = rng.int_range(3, max_w + 1);
        let h0 = rng.int_range(3, max_h + 1);
        let (dw, dh) = if rng.flip(0.5) {
            (rng.int_range(-2, 3), rng.int_range(-2, 3))
        } else {
            (0, 0)
        };
        let mut vx = rng.int_range(1, 4);
        if rng.flip(0.5) {
            vx = -vx;
        }
        let vy = rng.int_range(-1, 2);
        let absent = if t_frames >= 2 && rng.flip(0.3) {
            let len = rng.int_range(1, 3i64.min(t_frames as i64 - 1) + 1) as usize;
            let start = rng.int_range(0, (t_frames - len) as i64 + 1) as usize;
            Some((start, start + len))
        } else {
            None
        };
        let x = rng.int_range(0, wi - w0 + 1);
        let y = rng.int_range(lane_y0, lane_y1 - h0 + 1);
        sims.push(ShapeSim {
            category: cats[i % N_CATEGORIES],
            x,
            y,
            vx,
            vy,
            w0,
            h0,
            dw,
            dh,
            lane_y0,
            lane_y1,
            absent,
        });
    }

    let mut pixels = vec![BACKGROUND; t_frames * height as usize * width as usize * 3];
    let mut boxes: Vec<Vec<Option<BoundingBox>>> = vec![vec![None; t_frames]; n_instances];

    for t in 0..t_frames {
        for (i, sim) in sims.iter_mut().enumerate() {
            let max_h = (sim.lane_y1 - sim.lane_y0).min(8).max(3);
            let max_w = (wi - 2).min(8).max(3);
            let (w_t, h_t) = sim.size_at(t, t_last, max_w, max_h);
            if t > 0 {
                sim.x += sim.vx;
                sim.y += sim.vy;
            }
            sim.x = reflect(sim.x, 0, wi - w_t, &mut sim.vx);
            sim.y = reflect(sim.y, sim.lane_y0, sim.lane_y1 - h_t, &mut sim.vy);

            let present = sim.absent.map_or(true, |(a, b)| t < a || t >= b);
            if !present {
                continue;
            }
            let (x0, y0, x1, y1) = (sim.x, sim.y, sim.x + w_t, sim.y + h_t);
            boxes[i][t] = Some(BoundingBox::new(
                x0 as f64 / wi as f64,
                y0 as f64 / hi as f64,
                x1 as f64 / wi as f64,
                y1 as f64 / hi as f64,
            )?);
            let color = PALETTE[sim.category as usize];
            for py in y0..y1 {
                for px in x0..x1 {
                    let base = ((t * height as usize + py as usize) * width as usize + px as usize) * 3;
                    pixels[base..base + 3].copy_from_slice(&color);
                }
            }
        }
    }

    let tracklets: Vec<Tracklet> = sims
        .iter()
        .enumerate()
        .map(|(i, sim)| Tracklet {
            instance_id: i as u32 + 1,
            category_id: sim.category,
            boxes: boxes[i].clone(),
        })
        .collect();

    let clip = ClipAnnotation {
        frames: t_frames,
        width,
        height,
        fps: Some(8.0),
        tracklets,
        caption: Some(format!("{n_instances} colored shapes drifting on gray")),
    };
    clip.validate()?;
    let fb = FrameBuffer::new(Tensor::constant(
        &[t_frames, height as usize, width as usize, 3],
        pixels,
    )?)?;
    Ok((clip, fb))
}

// ---------------------------------------------------------------------------
// patchify codec
// ---------------------------------------------------------------------------

/// Space-to-depth encode: `[T, h, w, 3]` pixels to `[T, h/p, w/p, 3p^2]`
/// latents, mapped through v -> (v - 0.5) * 2. Lossless: every step is
/// exact on the renderer's dyadic pixel grid.
pub fn encode_frames(frames: &FrameBuffer, p: usize) -> Result<Tensor> {
    let (t, h, w) = (frames.frames(), frames.height(), frames.width());
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::Config(format!(
            "patch size {p} must divide frame extents {w}x{h}"
        )));
    }
    let (gh, gw, c) = (h / p, w / p, 3 * p * p);
    let src = frames.pixels.data();
    let mut out = vec![0.0; t * gh * gw * c];
    for ti in 0..t {
        for gy in 0..gh {
            for gx in 0..gw {
                let cell = ((ti * gh + gy) * gw + gx) * c;
                for dy in 0..p {
                    for dx in 0..p {
                        let pix = ((ti * h + gy * p + dy) * w + gx * p + dx) * 3;
                        let slot = cell + (dy * p + dx) * 3;
                        for ch in 0..3 {
                            out[slot + ch] = (src[pix + ch] - 0.5) * 2.0;
                        }
                    }
                }
            }
        }
    }
    Tensor::constant(&[t, gh, gw, c], out)
}

/// Exact inverse of `encode_frames`; patch size is recovered from the
/// channel count. Output values are unclamped (generated latents may leave
/// [0,1]); clamp separately for display.
pub fn decode_latent(latent: &Tensor) -> Result<Tensor> {
    let (t, gh, gw, c) = match latent.shape() {
        [t, gh, gw, c] => (*t, *gh, *gw, *c),
        other => {
            return Err(Error::Contract(format!(
                "latent must be [T, gh, gw, c], got {other:?}"
            )))
        }
    };
    if c % 3 != 0 {
        return Err(Error::Contract(format!("latent channels {c} not divisible by 3")));
    }
    let p2 = c / 3;
    let p = (p2 as f64).sqrt().round() as usize;
    if p == 0 || p * p != p2 {
        return Err(Error::Contract(format!(
            "latent channels {c} do not factor as 3*p^2"
        )));
    }
    let (h, w) = (gh * p, gw * p);
    let src = latent.data();
    let mut out = vec![0.0; t * h * w * 3];
    for ti in 0..t {
        for gy in 0..gh {
            for gx in 0..gw {
                let cell = ((ti * gh + gy) * gw + gx) * c;
                for dy in 0..p {
                    for dx in 0..p {
                        let pix = ((ti * h + gy * p + dy) * w + gx * p + dx) * 3;
                        let slot = cell + (dy * p + dx) * 3;
                        for ch in 0..3 {
                            out[pix + ch] = src[slot + ch] / 2.0 + 0.5;
                        }
                    }
                }
            }
        }
    }
    Tensor::constant(&[t, h, w, 3], out)
}

/// Clamp decoded pixels into [0,1] for display or evaluation.
pub fn clamp_frames(decoded: &Tensor) -> Result<FrameBuffer> {
    let data: Vec<f64> = decoded.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
    FrameBuffer::new(Tensor::constant(decoded.shape(), data)?)
}

// ---------------------------------------------------------------------------
// PPM image sequences
// ---------------------------------------------------------------------------

/// Write one frame as binary PPM (P6, maxval 255). Quantization maps value
/// v to byte floor(v*256) clamped to 255, the inverse of `read_ppm`'s k/256.
pub fn write_ppm(path: &Path, pixels: &[f64], width: usize, height: usize) -> Result<()> {
    if pixels.len() != width * height * 3 {
        return Err(Error::Contract(format!(
            "pixel count {} vs {width}x{height}x3",
            pixels.len()
        )));
    }
    let mut bytes = format!("P6\n{width} {height}\n255\n").into_bytes();
    bytes.extend(pixels.iter().map(|&v| ((v * 256.0).floor() as i64).clamp(0, 255) as u8));
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Read a binary PPM written by `write_ppm` (or any P6 with maxval 255).
pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = std::fs::read(path)?;
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        // skip whitespace and # comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(AnnotationError::Header("truncated PPM header".into()).into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token(&bytes)?;
    if magic != "P6" {
        return Err(AnnotationError::Header(format!("expected P6, got {magic}")).into());
    }
    let width: usize = token(&bytes)?
        .parse()
        .map_err(|_| AnnotationError::Header("bad PPM width".into()))?;
    let height: usize = token(&bytes)?
        .parse()
        .map_err(|_| AnnotationError::Header("bad PPM height".into()))?;
    let maxval: usize = token(&bytes)?
        .parse()
        .map_err(|_| AnnotationError::Header("bad PPM maxval".into()))?;
    if maxval != 255 {
        return Err(AnnotationError::Header(format!("PPM maxval must be 255, got {maxval}")).into());
    }
    pos += 1; // single whitespace after maxval
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(AnnotationError::Header(format!(
            "PPM payload truncated: need {need} bytes, have {}",
            bytes.len().saturating_sub(pos)
        ))
        .into());
    }
    let pixels = bytes[pos..pos + need].iter().map(|&k| k as f64 / 256.0).collect();
    Ok((width, height, pixels))
}

/// Write a clip's frames as frame_###.ppm files plus an index file listing
/// them in order.
pub fn write_clip_frames(dir: &Path, frames: &FrameBuffer) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut index = String::new();
    for t in 0..frames.frames() {
        let name = format!("frame_{t:03}.ppm");
        write_ppm(&dir.join(&name), frames.frame(t)?, frames.width(), frames.height())?;
        index.push_str(&name);
        index.push('\n');
    }
    std::fs::write(dir.join("index.txt"), index)?;
    Ok(())
}

/// Load a clip written by `write_clip_frames`, following the index file.
pub fn load_clip_frames(dir: &Path) -> Result<FrameBuffer> {
    let index = std::fs::read_to_string(dir.join("index.txt"))?;
    let names: Vec<&str> = index.lines().filter(|l| !l.trim().is_empty()).collect();
    if names.is_empty() {
        return Err(Error::Contract(format!("empty frame index in {}", dir.display())));
    }
    let mut all = Vec::new();
    let (mut w, mut h) = (0, 0);
    for (i, name) in names.iter().enumerate() {
        let (fw, fh, pix) = read_ppm(&dir.join(name))?;
        if i == 0 {
            (w, h) = (fw, fh);
        } else if (fw, fh) != (w, h) {
            return Err(Error::Contract(format!(
                "frame {name} extent {fw}x{fh} differs from {w}x{h}"
            )));
        }
        all.extend(pix);
    }
    FrameBuffer::new(Tensor::constant(&[names.len(), h, w, 3], all)?)
}

// ---------------------------------------------------------------------------
