//! Instance-aware location tokens: each present (instance, frame) box is
//! embedded as MLP([category_embedding, fourier_embed(box)]) plus a learned
//! per-slot identity token, so the same instance carries the same identity
//! vector across frames. Absent frames get a single shared learned token.

use crate::error::{Error, Result};
use crate::geometry::{fourier_embed, BoundingBox};
use crate::tensor::{Rng, Tensor};
use crate::trackdata::ClipAnnotation;

/// Maximum simultaneous tracklets per clip (instance token slots).
pub const K_MAX: usize = 8;

/// Learned per-category embedding rows.
#[derive(Clone)]
pub struct CategoryTable {
    pub weights: Tensor,
}

impl CategoryTable {
    pub fn new(weights: Tensor) -> Result<Self> {
        if weights.shape().len() != 2 {
            return Err(Error::Config(format!(
                "category table must be [n, dim], got {:?}",
                weights.shape()
            )));
        }
        Ok(CategoryTable { weights })
    }

    pub fn init(n_categories: usize, dim: usize, rng: &mut Rng) -> Self {
        CategoryTable {
            weights: Tensor::randn_param(&[n_categories, dim], 1.0, rng),
        }
    }

    pub fn n_categories(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.weights.shape()[1]
    }

    /// Embedding row for one category, shape `[1, dim]`.
    pub fn embed(&self, category: u32) -> Result<Tensor> {
        if category as usize >= self.n_categories() {
            return Err(Error::IndexOutOfRange {
                what: "category".into(),
                index: category as usize,
                bound: self.n_categories(),
            });
        }
        self.weights.gather_rows(&[category as usize])
    }
}

/// Learned per-slot instance identity tokens.
#[derive(Clone)]
pub struct InstanceTokenTable {
    pub weights: Tensor,
}

impl InstanceTokenTable {
    pub fn new(weights: Tensor) -> Result<Self> {
        if weights.shape().len() != 2 {
            return Err(Error::Config(format!(
                "instance table must be [k_max, dim], got {:?}",
                weights.shape()
            )));
        }
        Ok(InstanceTokenTable { weights })
    }

    pub fn init(k_max: usize, dim: usize, rng: &mut Rng) -> Self {
        InstanceTokenTable {
            weights: Tensor::randn_param(&[k_max, dim], 1.0, rng),
        }
    }

    pub fn k_max(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.weights.shape()[1]
    }
}

/// Two-layer MLP: linear -> silu -> linear.
#[derive(Clone)]
pub struct TokenMlp {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl TokenMlp {
    pub fn new(w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Result<Self> {
        let (i, h) = match w1.shape() {
            [i, h] => (*i, *h),
            s => return Err(Error::Config(format!("mlp w1 must be 2-D, got {s:?}"))),
        };
        let (h2, o) = match w2.shape() {
            [h2, o] => (*h2, *o),
            s => return Err(Error::Config(format!("mlp w2 must be 2-D, got {s:?}"))),
        };
        if h != h2 || b1.shape() != [h] || b2.shape() != [o] {
            return Err(Error::Config(format!(
                "mlp shapes inconsistent: w1 {:?}, b1 {:?}, w2 {:?}, b2 {:?}",
                w1.shape(),
                b1.shape(),
                w2.shape(),
                b2.shape()
            )));
        }
        let _ = i;
        Ok(TokenMlp { w1, b1, w2, b2 })
    }

    pub fn init(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut Rng) -> Self {
        TokenMlp {
            w1: Tensor::randn_param(&[in_dim, hidden], 1.0 / (in_dim as f64).sqrt(), rng),
            b1: Tensor::param(&[hidden], vec![0.0; hidden]).unwrap(),
            w2: Tensor::randn_param(&[hidden, out_dim], 1.0 / (hidden as f64).sqrt(), rng),
            b2: Tensor::param(&[out_dim], vec![0.0; out_dim]).unwrap(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w2.shape()[1]
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let h = x.matmul(&self.w1)?.add_rowvec(&self.b1)?.silu();
        h.matmul(&self.w2)?.add_rowvec(&self.b2)
    }
}

/// Everything needed to turn a clip annotation into conditioning tokens.
#[derive(Clone)]
pub struct ConditioningParams {
    pub categories: CategoryTable,
    pub instances: InstanceTokenTable,
    pub mlp: TokenMlp,
    /// Shared token standing in for any (instance, frame) with no box.
    pub absent: Tensor,
    /// Single learned global caption vector.
    pub caption: Tensor,
    pub n_freq: usize,
}

impl ConditioningParams {
    pub fn init(
        n_categories: usize,
        k_max: usize,
        dim: usize,
        hidden: usize,
        n_freq: usize,
        rng: &mut Rng,
    ) -> Self {
        ConditioningParams {
            categories: CategoryTable::init(n_categories, dim, rng),
            instances: InstanceTokenTable::init(k_max, dim, rng),
            mlp: TokenMlp::init(dim + 8 * n_freq, hidden, dim, rng),
            absent: Tensor::randn_param(&[dim], 1.0, rng),
            caption: Tensor::randn_param(&[dim], 1.0, rng),
            n_freq,
        }
    }

    pub fn dim(&self) -> usize {
        self.mlp.out_dim()
    }
}

/// One conditioning token for a specific (instance slot, frame).
#[derive(Clone)]
pub struct LocationToken {
    pub values: Tensor,
    pub instance_slot: usize,
    pub frame: usize,
    pub present: bool,
}

/// Box + category to token: MLP([category_embedding, fourier_embed(box)]).
pub fn location_token(
    b: &BoundingBox,
    category: u32,
    table: &CategoryTable,
    mlp: &TokenMlp,
    n_freq: usize,
) -> Result<Tensor> {
    let cat = table.embed(category)?;
    let four = fourier_embed(b, n_freq)?.reshape(&[1, 8 * n_freq])?;
    let x = Tensor::concat_cols(&[cat, four])?;
    if x.shape()[1] != mlp.in_dim() {
        return Err(Error::Config(format!(
            "mlp expects input width {}, got {}",
            mlp.in_dim(),
            x.shape()[1]
        )));
    }
    mlp.apply(&x)?.reshape(&[mlp.out_dim()])
}

/// Add the learned identity token for a slot: H' = H + e_slot.
pub fn add_instance_token(h: &Tensor, slot: usize, table: &InstanceTokenTable) -> Result<Tensor> {
    if slot >= table.k_max() {
        return Err(Error::Capacity {
            what: "instance slot".into(),
            requested: slot,
            max: table.k_max(),
        });
    }
    if h.shape() != [table.dim()] {
        return Err(Error::Contract(format!(
            "token shape {:?} vs table dim {}",
            h.shape(),
            table.dim()
        )));
    }
    h.add(&table.weights.gather_rows(&[slot])?.reshape(&[table.dim()])?)
}

/// All conditioning tokens for a clip, indexed `[slot][frame]`. Slots are
/// assigned by order of first appearance (ties by instance id), so the grid
/// does not depend on the order tracklets were listed in. With
/// `use_instance_tokens` false the identity addition is skipped.
pub fn clip_location_tokens(
    clip: &ClipAnnotation,
    params: &ConditioningParams,
    use_instance_tokens: bool,
) -> Result<Vec<Vec<LocationToken>>> {
    clip.validate()?;
    if clip.tracklets.len() > params.instances.k_max() {
        return Err(Error::Capacity {
            what: "tracklets per clip".into(),
            requested: clip.tracklets.len(),
            max: params.instances.k_max(),
        });
    }
    let mut grid = Vec::with_capacity(clip.tracklets.len());
    for (slot, &tr_idx) in clip.slot_order().iter().enumerate() {
        let tr = &clip.tracklets[tr_idx];
        let mut row = Vec::with_capacity(clip.frames);
        for frame in 0..clip.frames {
            let token = match &tr.boxes[frame] {
                Some(b) => {
                    let h = location_token(b, tr.category_id, &params.categories, &params.mlp, params.n_freq)?;
                    let values = if use_instance_tokens {
                        add_instance_token(&h, slot, &params.instances)?
                    } else {
                        h
                    };
                    LocationToken {
                        values,
                        instance_slot: slot,
                        frame,
                        present: true,
                    }
                }
                None => LocationToken {
                    values: params.absent.clone(),
                    instance_slot: slot,
                    frame,
                    present: false,
                },
            };
            row.push(token);
        }
        grid.push(row);
    }
    Ok(grid)
}

/// Stack one frame's present tokens (plus the caption vector) into the
/// context for gated self-attention: `[n_present + 1, dim]`. Absent tokens
/// are filtered out, not masked.
pub fn frame_context(
    grid: &[Vec<LocationToken>],
    frame: usize,
    params: &ConditioningParams,
) -> Result<Tensor> {
    let mut rows = Vec::new();
    for row in grid {
        let tok = row.get(frame).ok_or_else(|| Error::IndexOutOfRange {
            what: "frame".into(),
            index: frame,
            bound: row.len(),
        })?;
        if tok.present {
            rows.push(tok.values.clone());
        }
    }
    rows.push(params.caption.clone());
    Tensor::stack_rows(&rows)
}
