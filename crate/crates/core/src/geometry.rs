//! Normalized boxes and the geometric ops built on them.
//!
//! All boxes live in [0, 1] x [0, 1] with strict corner ordering. Feature
//! maps are indexed `[H, W, C]`; a normalized coordinate u maps to the
//! continuous sampling coordinate `u * extent - 0.5`, so u = 0 is the left
//! edge of the first pixel and u = 1 the right edge of the last.

use crate::error::{Error, Result};
use crate::tensor::{Inner, Tensor};

/// Axis-aligned box with normalized corners, `x1 < x2`, `y1 < y2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<BoundingBox> {
        for (name, v) in [("x1", x1), ("y1", y1), ("x2", x2), ("y2", y2)] {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::Contract(format!(
                    "box coordinate {name}={v} outside [0, 1]"
                )));
            }
        }
        if x1 >= x2 || y1 >= y2 {
            return Err(Error::Contract(format!(
                "degenerate box ({x1}, {y1}, {x2}, {y2}): corners must be strictly ordered"
            )));
        }
        Ok(BoundingBox { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

/// The whole-frame box used for background features.
pub fn full_frame_box() -> BoundingBox {
    BoundingBox {
        x1: 0.0,
        y1: 0.0,
        x2: 1.0,
        y2: 1.0,
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Sinusoidal embedding of the four box coordinates.
///
/// Layout is coordinate-major, frequency-minor: for each coordinate u in
/// (x1, y1, x2, y2) and each k in 0..n_freq, the pair
/// (sin(2^k * pi * u), cos(2^k * pi * u)). Total length `8 * n_freq`.
pub fn fourier_embed(b: &BoundingBox, n_freq: usize) -> Result<Tensor> {
    if n_freq == 0 {
        return Err(Error::Contract("fourier_embed needs n_freq >= 1".into()));
    }
    let mut data = Vec::with_capacity(8 * n_freq);
    for u in b.coords() {
        for k in 0..n_freq {
            let arg = (1u64 << k) as f64 * std::f64::consts::PI * u;
            data.push(arg.sin());
            data.push(arg.cos());
        }
    }
    Tensor::constant(&[8 * n_freq], data)
}

/// One bilinear tap: flat `[H, W]` cell index and its weight.
type Tap = (usize, f64);

fn bilinear_taps(sy: f64, sx: f64, h: usize, w: usize) -> [Tap; 4] {
    // Weights come from the unclamped fractional position; only the indices
    // clamp at the border, which is what makes constant maps exactly constant.
    let y0 = sy.floor();
    let x0 = sx.floor();
    let wy1 = sy - y0;
    let wx1 = sx - x0;
    let clamp = |v: f64, bound: usize| -> usize {
        if v < 0.0 {
            0
        } else if v as usize >= bound {
            bound - 1
        } else {
            v as usize
        }
    };
    let yi0 = clamp(y0, h);
    let yi1 = clamp(y0 + 1.0, h);
    let xi0 = clamp(x0, w);
    let xi1 = clamp(x0 + 1.0, w);
    [
        (yi0 * w + xi0, (1.0 - wy1) * (1.0 - wx1)),
        (yi0 * w + xi1, (1.0 - wy1) * wx1),
        (yi1 * w + xi0, wy1 * (1.0 - wx1)),
        (yi1 * w + xi1, wy1 * wx1),
    ]
}

/// ROIAlign: samples an `r x r` grid of bin centers inside `b` from an
/// `[H, W, C]` feature map, one bilinear sample per bin with edge clamping.
/// Differentiable with respect to `feat`.
pub fn roi_align(feat: &Tensor, b: &BoundingBox, r: usize) -> Result<Tensor> {
    if r == 0 {
        return Err(Error::Contract("roi_align needs r >= 1".into()));
    }
    let (h, w, c) = match feat.shape() {
        [h, w, c] => (*h, *w, *c),
        other => {
            return Err(Error::Contract(format!(
                "roi_align expects [H, W, C] features, got {other:?}"
            )))
        }
    };
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::Contract("roi_align on empty feature map".into()));
    }

    let sx1 = b.x1 * w as f64 - 0.5;
    let sx2 = b.x2 * w as f64 - 0.5;
    let sy1 = b.y1 * h as f64 - 0.5;
    let sy2 = b.y2 * h as f64 - 0.5;

    let mut taps: Vec<[Tap; 4]> = Vec::with_capacity(r * r);
    let mut out = vec![0.0; r * r * c];
    let fdata = feat.data();
    for by in 0..r {
        let sy = sy1 + (by as f64 + 0.5) * (sy2 - sy1) / r as f64;
        for bx in 0..r {
            let sx = sx1 + (bx as f64 + 0.5) * (sx2 - sx1) / r as f64;
            let t = bilinear_taps(sy, sx, h, w);
            let orow = &mut out[(by * r + bx) * c..(by * r + bx + 1) * c];
            for &(cell, wgt) in &t {
                let frow = &fdata[cell * c..(cell + 1) * c];
                for (o, f) in orow.iter_mut().zip(frow) {
                    *o += wgt * f;
                }
            }
            taps.push(t);
        }
    }

    let featc = feat.clone();
    Ok(Tensor::from_op(
        vec![r, r, c],
        out,
        vec![feat.clone()],
        Box::new(move |out: &Inner| {
            let g = out.grad_slice();
            featc.accumulate_grad_with(|gf| {
                for (bin, t) in taps.iter().enumerate() {
                    let grow = &g[bin * c..(bin + 1) * c];
                    for &(cell, wgt) in t {
                        let dst = &mut gf[cell * c..(cell + 1) * c];
                        for (d, g) in dst.iter_mut().zip(grow) {
                            *d += wgt * g;
                        }
                    }
                }
            });
        }),
    ))
}
