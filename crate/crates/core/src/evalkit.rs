//! Grounding and consistency evaluation against rendered or generated
//! frames: an exact blob detector for solid shapes on gray, IoU matching
//! against annotation boxes, and a small Frechet-style distribution
//! distance over per-clip color/motion features.

use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::tensor::Tensor;
use crate::trackdata::{ClipAnnotation, FrameBuffer};

/// Foreground threshold: a pixel is non-background when any channel
/// deviates from the 0.5 gray by more than this.
pub const DEFAULT_BLOB_TOL: f64 = 0.12;

/// Components smaller than this many pixels are discarded as noise.
const MIN_BLOB_PIXELS: usize = 4;

#[derive(Debug, Clone)]
pub struct Blob {
    pub bbox: BoundingBox,
    pub mean_color: [f64; 3],
    pub area: usize,
}

/// Threshold + 4-connected component labeling on one `[h, w, 3]` frame.
/// Boxes use the pixel-edge convention (a single pixel at (x, y) spans
/// [x/w, (x+1)/w)), so a rendered rectangle's blob box equals its
/// annotation box exactly. Sorted by area descending.
pub fn detect_blobs(frame: &Tensor, tol: f64) -> Result<Vec<Blob>> {
    let (h, w) = match frame.shape() {
        [h, w, 3] => (*h, *w),
        other => {
            return Err(Error::Contract(format!(
                "detect_blobs expects [h, w, 3], got {other:?}"
            )))
        }
    };
    let data = frame.data();
    let fg = |x: usize, y: usize| -> bool {
        let base = (y * w + x) * 3;
        data[base..base + 3].iter().any(|v| (v - 0.5).abs() > tol)
    };

    let mut label = vec![usize::MAX; w * h];
    let mut blobs = Vec::new();
    let mut stack = Vec::new();
    for sy in 0..h {
        for sx in 0..w {
            if label[sy * w + sx] != usize::MAX || !fg(sx, sy) {
                continue;
            }
            let id = blobs.len();
            let (mut x0, mut y0, mut x1, mut y1) = (sx, sy, sx, sy);
            let mut area = 0usize;
            let mut color = [0.0; 3];
            stack.push((sx, sy));
            label[sy * w + sx] = id;
            while let Some((x, y)) = stack.pop() {
                area += 1;
                let base = (y * w + x) * 3;
                for c in 0..3 {
                    color[c] += data[base + c];
                }
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
                let mut visit = |nx: usize, ny: usize| {
                    if label[ny * w + nx] == usize::MAX && fg(nx, ny) {
                        label[ny * w + nx] = id;
                        stack.push((nx, ny));
                    }
                };
                if x > 0 {
                    visit(x - 1, y);
                }
                if x + 1 < w {
                    visit(x + 1, y);
                }
                if y > 0 {
                    visit(x, y - 1);
                }
                if y + 1 < h {
                    visit(x, y + 1);
                }
            }
            for c in color.iter_mut() {
                *c /= area as f64;
            }
            blobs.push(Blob {
                bbox: BoundingBox::new(
                    x0 as f64 / w as f64,
                    y0 as f64 / h as f64,
                    (x1 + 1) as f64 / w as f64,
                    (y1 + 1) as f64 / h as f64,
                )?,
                mean_color: color,
                area,
            });
        }
    }
    blobs.retain(|b| b.area >= MIN_BLOB_PIXELS);
    blobs.sort_by(|a, b| {
        b.area
            .cmp(&a.area)
            .then(a.bbox.y1.partial_cmp(&b.bbox.y1).unwrap())
            .then(a.bbox.x1.partial_cmp(&b.bbox.x1).unwrap())
    });
    Ok(blobs)
}

/// Score for one (instance, frame) cell of the report.
#[derive(Debug, Clone)]
pub struct FrameInstanceScore {
    pub instance_id: u32,
    pub frame: usize,
    pub iou: f64,
}

#[derive(Debug, Clone)]
pub struct GroundingReport {
    pub per_frame: Vec<FrameInstanceScore>,
    pub mean_iou: f64,
    pub detection_rate: f64,
    pub identity_consistency: f64,
}

/// Match detected blobs against annotated boxes frame by frame, greedily
/// pairing the globally highest-IoU combinations first.
///
/// mean_iou averages over all annotated present boxes (unmatched score 0);
/// detection_rate is the fraction with IoU >= 0.5; identity_consistency
/// averages, over instances, 1 - min(1, mean color variance / 0.25) of each
/// instance's matched blob colors (never matched -> 0, one match -> 1). A
/// clip with no present boxes scores 1.0 on all three (vacuous success).
pub fn grounding_miou(clip: &ClipAnnotation, frames: &FrameBuffer) -> Result<GroundingReport> {
    grounding_with_tol(clip, frames, DEFAULT_BLOB_TOL)
}

pub fn grounding_with_tol(
    clip: &ClipAnnotation,
    frames: &FrameBuffer,
    tol: f64,
) -> Result<GroundingReport> {
    clip.validate()?;
    if !frames.matches(clip) {
        return Err(Error::Contract(format!(
            "frame extents {}x{}x{} do not match clip {}x{}x{}",
            frames.frames(),
            frames.height(),
            frames.width(),
            clip.frames,
            clip.height,
            clip.width
        )));
    }
    let mut per_frame = Vec::new();
    let mut matched_colors: std::collections::BTreeMap<u32, Vec<[f64; 3]>> =
        std::collections::BTreeMap::new();

    for t in 0..clip.frames {
        let frame = Tensor::constant(
            &[frames.height(), frames.width(), 3],
            frames.frame(t)?.to_vec(),
        )?;
        let blobs = detect_blobs(&frame, tol)?;

        let present: Vec<(u32, BoundingBox)> = clip
            .tracklets
            .iter()
            .filter_map(|tr| tr.boxes[t].map(|b| (tr.instance_id, b)))
            .collect();

        // all positive-IoU pairs, best first
        let mut pairs = Vec::new();
        for (bi, (_, b)) in present.iter().enumerate() {
            for (di, blob) in blobs.iter().enumerate() {
                let v = iou(b, &blob.bbox);
                if v > 0.0 {
                    pairs.push((v, bi, di));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut box_used = vec![false; present.len()];
        let mut blob_used = vec![false; blobs.len()];
        let mut scores = vec![0.0; present.len()];
        let mut hit: Vec<Option<usize>> = vec![None; present.len()];
        for (v, bi, di) in pairs {
            if !box_used[bi] && !blob_used[di] {
                box_used[bi] = true;
                blob_used[di] = true;
                scores[bi] = v;
                hit[bi] = Some(di);
            }
        }
        for (bi, (id, _)) in present.iter().enumerate() {
            per_frame.push(FrameInstanceScore {
                instance_id: *id,
                frame: t,
                iou: scores[bi],
            });
            if let Some(di) = hit[bi] {
                matched_colors.entry(*id).or_default().push(blobs[di].mean_color);
            }
        }
    }

    if per_frame.is_empty() {
        return Ok(GroundingReport {
            per_frame,
            mean_iou: 1.0,
            detection_rate: 1.0,
            identity_consistency: 1.0,
        });
    }

    let n = per_frame.len() as f64;
    let mean_iou = per_frame.iter().map(|s| s.iou).sum::<f64>() / n;
    let detection_rate = per_frame.iter().filter(|s| s.iou >= 0.5).count() as f64 / n;

    let mut consistency_sum = 0.0;
    let mut consistency_n = 0usize;
    for tr in &clip.tracklets {
        consistency_n += 1;
        match matched_colors.get(&tr.instance_id) {
            None => {}
            Some(colors) if colors.len() == 1 => consistency_sum += 1.0,
            Some(colors) => {
                let m = colors.len() as f64;
                let mut var_sum = 0.0;
                for c in 0..3 {
                    let mean = colors.iter().map(|v| v[c]).sum::<f64>() / m;
                    var_sum += colors.iter().map(|v| (v[c] - mean).powi(2)).sum::<f64>() / m;
                }
                consistency_sum += 1.0 - (var_sum / 3.0 / 0.25).min(1.0);
            }
        }
    }
    let identity_consistency = if consistency_n == 0 {
        1.0
    } else {
        consistency_sum / consistency_n as f64
    };

    Ok(GroundingReport {
        per_frame,
        mean_iou,
        detection_rate,
        identity_consistency,
    })
}

/// Render a grounding report as a JSON document with stable key order,
/// echoing the given config pairs.
pub fn report_to_json(report: &GroundingReport, config: &[(String, String)]) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    out.push_str("{\n");
    let _ = write!(out, "  \"mean_iou\": {:.6},\n", report.mean_iou);
    let _ = write!(out, "  \"detection_rate\": {:.6},\n", report.detection_rate);
    let _ = write!(
        out,
        "  \"identity_consistency\": {:.6},\n",
        report.identity_consistency
    );
    out.push_str("  \"scores\": [");
    for (i, s) in report.per_frame.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(
            out,
            "\n    {{\"frame\": {}, \"instance\": {}, \"iou\": {:.6}}}",
            s.frame, s.instance_id, s.iou
        );
    }
    out.push_str(if report.per_frame.is_empty() { "],\n" } else { "\n  ],\n" });
    out.push_str("  \"config\": {");
    for (i, (k, v)) in config.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "\n    \"{k}\": \"{v}\"");
    }
    out.push_str(if config.is_empty() { "}\n" } else { "\n  }\n" });
    out.push_str("}\n");
    out
}

// ---------------------------------------------------------------------------
// Frechet-style clip-set distance
// ---------------------------------------------------------------------------

/// Per-clip feature vector: mean R, G, B and motion energy (mean absolute
/// frame-to-frame pixel change; 0 for single-frame clips).
pub fn clip_features(frames: &FrameBuffer) -> [f64; 4] {
    let (t, stride) = (frames.frames(), frames.height() * frames.width() * 3);
    let data = frames.pixels.data();
    let mut f = [0.0; 4];
    for (i, v) in data.iter().enumerate() {
        f[i % 3] += v;
    }
    let per_channel = (t * stride / 3) as f64;
    for c in 0..3 {
        f[c] /= per_channel;
    }
    if t > 1 {
        let mut acc = 0.0;
        for ti in 1..t {
            for k in 0..stride {
                acc += (data[ti * stride + k] - data[(ti - 1) * stride + k]).abs();
            }
        }
        f[3] = acc / ((t - 1) * stride) as f64;
    }
    f
}

const FEAT_DIM: usize = 4;

fn fit_gaussian(clips: &[FrameBuffer]) -> Result<([f64; FEAT_DIM], Vec<f64>)> {
    if clips.len() < 2 {
        return Err(Error::Contract(format!(
            "need >= 2 clips to fit a Gaussian, got {}",
            clips.len()
        )));
    }
    let feats: Vec<[f64; FEAT_DIM]> = clips.iter().map(clip_features).collect();
    let n = feats.len() as f64;
    let mut mu = [0.0; FEAT_DIM];
    for f in &feats {
        for (m, v) in mu.iter_mut().zip(f) {
            *m += v;
        }
    }
    for m in mu.iter_mut() {
        *m /= n;
    }
    let mut cov = vec![0.0; FEAT_DIM * FEAT_DIM];
    for f in &feats {
        for i in 0..FEAT_DIM {
            for j in 0..FEAT_DIM {
                cov[i * FEAT_DIM + j] += (f[i] - mu[i]) * (f[j] - mu[j]);
            }
        }
    }
    for c in cov.iter_mut() {
        *c /= n - 1.0;
    }
    Ok((mu, cov))
}

/// Jacobi eigendecomposition of a symmetric n x n matrix. Returns
/// (eigenvalues, row-major eigenvector matrix V with columns as vectors),
/// satisfying A = V diag(w) V^T.
fn jacobi_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p * n + q].abs() < 1e-30 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * m[p * n + q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let w = (0..n).map(|i| m[i * n + i]).collect();
    (w, v)
}

fn mat_mul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

/// Symmetric PSD square root via eigendecomposition; small negative
/// eigenvalues from roundoff are clamped to zero.
fn sym_sqrt(a: &[f64], n: usize) -> Vec<f64> {
    let (w, v) = jacobi_eigen(a, n);
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += v[i * n + k] * w[k].max(0.0).sqrt() * v[j * n + k];
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// Frechet distance between two Gaussians:
/// |mu_a - mu_b|^2 + tr(Ca + Cb - 2 (Ca^1/2 Cb Ca^1/2)^1/2).
pub fn gaussian_frechet(
    mu_a: &[f64; FEAT_DIM],
    cov_a: &[f64],
    mu_b: &[f64; FEAT_DIM],
    cov_b: &[f64],
) -> f64 {
    let n = FEAT_DIM;
    let mut d = 0.0;
    for i in 0..n {
        d += (mu_a[i] - mu_b[i]).powi(2);
    }
    let ra = sym_sqrt(cov_a, n);
    let inner = mat_mul(&mat_mul(&ra, cov_b, n), &ra, n);
    let (w, _) = jacobi_eigen(&inner, n);
    let mut tr_cross = 0.0;
    for wi in w {
        tr_cross += wi.max(0.0).sqrt();
    }
    for i in 0..n {
        d += cov_a[i * n + i] + cov_b[i * n + i];
    }
    d -= 2.0 * tr_cross;
    d.max(0.0)
}

/// Distribution distance between two clip sets: Frechet distance between
/// Gaussian fits of their per-clip feature vectors. 0 for identical sets.
pub fn fvd_stub(set_a: &[FrameBuffer], set_b: &[FrameBuffer]) -> Result<f64> {
    let (mu_a, cov_a) = fit_gaussian(set_a)?;
    let (mu_b, cov_b) = fit_gaussian(set_b)?;
    Ok(gaussian_frechet(&mu_a, &cov_a, &mu_b, &cov_b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;
    use crate::trackdata::{gen_synthetic, FrameBuffer, PALETTE};

    #[test]
    fn gray_frame_has_no_blobs() {
        let frame = Tensor::full(&[8, 8, 3], 0.5);
        assert!(detect_blobs(&frame, DEFAULT_BLOB_TOL).unwrap().is_empty());
    }

    #[test]
    fn single_rectangle_detected_exactly() {
        let (clip, fb) = gen_synthetic(5, 1, 1, 16, 16).unwrap();
        let frame =
            Tensor::constant(&[16, 16, 3], fb.frame(0).unwrap().to_vec()).unwrap();
        let blobs = detect_blobs(&frame, DEFAULT_BLOB_TOL).unwrap();
        assert_eq!(blobs.len(), 1);
        let want = clip.tracklets[0].boxes[0].unwrap();
        assert_eq!(iou(&blobs[0].bbox, &want), 1.0);
        let color = PALETTE[clip.tracklets[0].category_id as usize];
        for (a, b) in blobs[0].mean_color.iter().zip(&color) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_rectangles_detected_with_correct_colors() {
        let (clip, fb) = gen_synthetic(9, 2, 1, 16, 16).unwrap();
        let frame =
            Tensor::constant(&[16, 16, 3], fb.frame(0).unwrap().to_vec()).unwrap();
        let blobs = detect_blobs(&frame, DEFAULT_BLOB_TOL).unwrap();
        assert_eq!(blobs.len(), 2);
        assert!(blobs[0].area >= blobs[1].area, "sorted by area");
        for tr in &clip.tracklets {
            let want = tr.boxes[0].unwrap();
            let color = PALETTE[tr.category_id as usize];
            let blob = blobs
                .iter()
                .find(|b| iou(&b.bbox, &want) > 0.9)
                .expect("each rectangle found");
            for (a, b) in blob.mean_color.iter().zip(&color) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tiny_components_are_discarded() {
        let mut data = vec![0.5; 8 * 8 * 3];
        // a 2x1 speck: 2 pixels < MIN_BLOB_PIXELS
        for x in [3usize, 4] {
            let base = (2 * 8 + x) * 3;
            data[base] = 0.9;
        }
        let frame = Tensor::constant(&[8, 8, 3], data).unwrap();
        assert!(detect_blobs(&frame, DEFAULT_BLOB_TOL).unwrap().is_empty());
    }

    #[test]
    fn renderer_output_grounds_perfectly() {
        for seed in [1u64, 23, 77] {
            let (clip, fb) = gen_synthetic(seed, 3, 6, 32, 32).unwrap();
            let report = grounding_miou(&clip, &fb).unwrap();
            assert!(report.mean_iou >= 0.95, "seed {seed}: mIoU {}", report.mean_iou);
            assert!(report.detection_rate >= 0.95);
            assert!(report.identity_consistency >= 0.99);
        }
    }

    #[test]
    fn gray_frames_ground_at_zero() {
        let (clip, fb) = gen_synthetic(3, 2, 4, 16, 16).unwrap();
        let gray = FrameBuffer::new(Tensor::full(fb.pixels.shape(), 0.5)).unwrap();
        let report = grounding_miou(&clip, &gray).unwrap();
        assert_eq!(report.mean_iou, 0.0);
        assert_eq!(report.detection_rate, 0.0);
        assert_eq!(report.identity_consistency, 0.0);
    }

    #[test]
    fn tracklet_order_does_not_change_aggregates() {
        let (clip, fb) = gen_synthetic(15, 3, 5, 32, 32).unwrap();
        let r1 = grounding_miou(&clip, &fb).unwrap();
        let mut shuffled = clip.clone();
        shuffled.tracklets.reverse();
        let r2 = grounding_miou(&shuffled, &fb).unwrap();
        assert_eq!(r1.mean_iou, r2.mean_iou);
        assert_eq!(r1.detection_rate, r2.detection_rate);
        assert_eq!(r1.identity_consistency, r2.identity_consistency);
    }

    #[test]
    fn dilating_blobs_never_raises_mean_iou() {
        let (clip, fb) = gen_synthetic(33, 2, 4, 32, 32).unwrap();
        let base = grounding_miou(&clip, &fb).unwrap();

        // repaint each instance one pixel fatter on every side
        let (h, w) = (fb.height(), fb.width());
        let mut data = fb.pixels.data().to_vec();
        for t in 0..clip.frames {
            for tr in &clip.tracklets {
                if let Some(b) = tr.boxes[t] {
                    let color = PALETTE[tr.category_id as usize];
                    let x0 = ((b.x1 * w as f64) as usize).saturating_sub(1);
                    let y0 = ((b.y1 * h as f64) as usize).saturating_sub(1);
                    let x1 = (((b.x2 * w as f64) as usize) + 1).min(w);
                    let y1 = (((b.y2 * h as f64) as usize) + 1).min(h);
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let base = ((t * h + y) * w + x) * 3;
                            data[base..base + 3].copy_from_slice(&color);
                        }
                    }
                }
            }
        }
        let fat = FrameBuffer::new(Tensor::constant(fb.pixels.shape(), data).unwrap()).unwrap();
        let dilated = grounding_miou(&clip, &fat).unwrap();
        assert!(dilated.mean_iou < base.mean_iou);
        assert!(dilated.mean_iou > 0.0);
    }

    #[test]
    fn report_scores_stay_in_unit_interval_and_json_is_stable() {
        let (clip, fb) = gen_synthetic(40, 3, 4, 32, 32).unwrap();
        let report = grounding_miou(&clip, &fb).unwrap();
        for v in [report.mean_iou, report.detection_rate, report.identity_consistency] {
            assert!((0.0..=1.0).contains(&v));
        }
        let json = report_to_json(&report, &[("seed".into(), "40".into())]);
        let m = json.find("\"mean_iou\"").unwrap();
        let d = json.find("\"detection_rate\"").unwrap();
        let i = json.find("\"identity_consistency\"").unwrap();
        let s = json.find("\"scores\"").unwrap();
        let c = json.find("\"config\"").unwrap();
        assert!(m < d && d < i && i < s && s < c);
        // parseable JSON
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert!(v["config"]["seed"] == "40");
    }

    #[test]
    fn empty_clip_grounds_vacuously() {
        let (clip, fb) = gen_synthetic(2, 0, 3, 16, 16).unwrap();
        let report = grounding_miou(&clip, &fb).unwrap();
        assert_eq!(report.mean_iou, 1.0);
        assert_eq!(report.detection_rate, 1.0);
        assert_eq!(report.identity_consistency, 1.0);
        assert!(report.per_frame.is_empty());
    }

    // ----- Frechet proxy -----

    fn clips_from_seeds(seeds: &[u64]) -> Vec<FrameBuffer> {
        seeds
            .iter()
            .map(|&s| gen_synthetic(s, 2, 4, 16, 16).unwrap().1)
            .collect()
    }

    #[test]
    fn identical_sets_have_zero_distance() {
        let a = clips_from_seeds(&[1, 2, 3, 4]);
        let b = clips_from_seeds(&[1, 2, 3, 4]);
        let d = fvd_stub(&a, &b).unwrap();
        assert!(d.abs() < 1e-8, "distance {d}");
        assert!(fvd_stub(&a[..1], &b).is_err());
    }

    #[test]
    fn brightness_shift_shows_up_as_mean_term() {
        let a = clips_from_seeds(&[5, 6, 7, 8]);
        let delta = 0.05;
        let b: Vec<FrameBuffer> = a
            .iter()
            .map(|fb| {
                let data: Vec<f64> = fb.pixels.data().iter().map(|v| v + delta).collect();
                FrameBuffer::new(Tensor::constant(fb.pixels.shape(), data).unwrap()).unwrap()
            })
            .collect();
        let d = fvd_stub(&a, &b).unwrap();
        // identical covariance and motion, means differ by delta in R, G, B
        let want = 3.0 * delta * delta;
        assert!((d - want).abs() < 1e-10, "distance {d} vs {want}");
    }

    /// Independent square-root oracle: Denman-Beavers iteration.
    fn db_sqrt(a: &[f64], n: usize) -> Vec<f64> {
        fn inverse(m: &[f64], n: usize) -> Vec<f64> {
            let mut aug = vec![0.0; n * 2 * n];
            for i in 0..n {
                for j in 0..n {
                    aug[i * 2 * n + j] = m[i * n + j];
                }
                aug[i * 2 * n + n + i] = 1.0;
            }
            for col in 0..n {
                let piv = (col..n)
                    .max_by(|&a, &b| {
                        aug[a * 2 * n + col]
                            .abs()
                            .partial_cmp(&aug[b * 2 * n + col].abs())
                            .unwrap()
                    })
                    .unwrap();
                if piv != col {
                    for j in 0..2 * n {
                        aug.swap(col * 2 * n + j, piv * 2 * n + j);
                    }
                }
                let d = aug[col * 2 * n + col];
                for j in 0..2 * n {
                    aug[col * 2 * n + j] /= d;
                }
                for i in 0..n {
                    if i != col {
                        let f = aug[i * 2 * n + col];
                        for j in 0..2 * n {
                            aug[i * 2 * n + j] -= f * aug[col * 2 * n + j];
                        }
                    }
                }
            }
            let mut out = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    out[i * n + j] = aug[i * 2 * n + n + j];
                }
            }
            out
        }
        let mut y = a.to_vec();
        let mut z = vec![0.0; n * n];
        for i in 0..n {
            z[i * n + i] = 1.0;
        }
        for _ in 0..60 {
            let yi = inverse(&y, n);
            let zi = inverse(&z, n);
            let mut y2 = vec![0.0; n * n];
            let mut z2 = vec![0.0; n * n];
            for k in 0..n * n {
                y2[k] = 0.5 * (y[k] + zi[k]);
                z2[k] = 0.5 * (z[k] + yi[k]);
            }
            y = y2;
            z = z2;
        }
        y
    }

    fn random_spd(rng: &mut Rng, n: usize) -> Vec<f64> {
        // B^T B + eps I
        let b: Vec<f64> = (0..n * n).map(|_| rng.normal()).collect();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    a[i * n + j] += b[k * n + i] * b[k * n + j];
                }
                if i == j {
                    a[i * n + j] += 0.1;
                }
            }
        }
        a
    }

    #[test]
    fn jacobi_sqrt_matches_denman_beavers() {
        let mut rng = Rng::seed_from(99);
        for _ in 0..10 {
            let a = random_spd(&mut rng, 4);
            let s1 = sym_sqrt(&a, 4);
            let s2 = db_sqrt(&a, 4);
            for (x, y) in s1.iter().zip(&s2) {
                assert!((x - y).abs() < 1e-8, "{x} vs {y}");
            }
            // sqrt squared reproduces the input
            let sq = mat_mul(&s1, &s1, 4);
            for (x, y) in sq.iter().zip(&a) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn frechet_matches_independent_oracle() {
        let mut rng = Rng::seed_from(123);
        for _ in 0..5 {
            let ca = random_spd(&mut rng, 4);
            let cb = random_spd(&mut rng, 4);
            let mut mu_a = [0.0; 4];
            let mut mu_b = [0.0; 4];
            for i in 0..4 {
                mu_a[i] = rng.normal();
                mu_b[i] = rng.normal();
            }
            let got = gaussian_frechet(&mu_a, &ca, &mu_b, &cb);

            // oracle path via Denman-Beavers square roots
            let ra = db_sqrt(&ca, 4);
            let inner = mat_mul(&mat_mul(&ra, &cb, 4), &ra, 4);
            let cross = db_sqrt(&inner, 4);
            let mut want = 0.0;
            for i in 0..4 {
                want += (mu_a[i] - mu_b[i]).powi(2);
                want += ca[i * 4 + i] + cb[i * 4 + i] - 2.0 * cross[i * 4 + i];
            }
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn diagonal_covariances_have_closed_form_distance()  {
        // For commuting (here diagonal) covariances the trace term reduces
        // to sum (sqrt(a_i) - sqrt(b_i))^2.
        let mut ca = vec![0.0; 16];
        let mut cb = vec![0.0; 16];
        let va = [0.9, 0.4, 0.01, 2.5];
        let vb = [0.1, 1.4, 0.25, 0.04];
        for i in 0..4 {
            ca[i * 4 + i] = va[i];
            cb[i * 4 + i] = vb[i];
        }
        let mu = [0.0; 4];
        let got = gaussian_frechet(&mu, &ca, &mu, &cb);
        let want: f64 = (0..4).map(|i| (va[i].sqrt() - vb[i].sqrt()).powi(2)).sum();
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
}
