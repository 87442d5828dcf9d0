//! Multi-head attention ops: plain self/cross attention plus the gated
//! variants that inject conditioning tokens, and per-position temporal
//! attention over frames.
//!
//! Every variant is pre-norm residual: inputs pass through a non-affine
//! layer norm before projection and the raw input is added back at the end.
//! Gated variants scale their branch by tanh(gate) so a zero gate leaves the
//! input stream untouched while still passing gradient to the gate.
//!
//! Masks are boolean slices, true = active. A masked token is invisible to
//! attention (a large negative score offset) and its own output row is
//! zeroed in the branch, so it passes through on the residual alone.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MASK_OFF: f64 = -1e30;

/// Projection weights for one attention layer, all `[dim, dim]`.
#[derive(Clone)]
pub struct AttentionParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub n_heads: usize,
}

impl AttentionParams {
    pub fn new(w_q: Tensor, w_k: Tensor, w_v: Tensor, w_o: Tensor, n_heads: usize) -> Result<Self> {
        let p = AttentionParams {
            w_q,
            w_k,
            w_v,
            w_o,
            n_heads,
        };
        p.validate()?;
        Ok(p)
    }

    /// Random init at scale 1/sqrt(dim).
    pub fn init(dim: usize, n_heads: usize, rng: &mut crate::tensor::Rng) -> Result<Self> {
        let scale = 1.0 / (dim as f64).sqrt();
        AttentionParams::new(
            Tensor::randn_param(&[dim, dim], scale, rng),
            Tensor::randn_param(&[dim, dim], scale, rng),
            Tensor::randn_param(&[dim, dim], scale, rng),
            Tensor::randn_param(&[dim, dim], scale, rng),
            n_heads,
        )
    }

    pub fn dim(&self) -> usize {
        self.w_q.shape()[0]
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        for (name, w) in [
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_o", &self.w_o),
        ] {
            if w.shape() != [d, d] {
                return Err(Error::Config(format!(
                    "attention weight {name} must be [{d}, {d}], got {:?}",
                    w.shape()
                )));
            }
        }
        if self.n_heads == 0 || d % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "n_heads {} must divide dim {d}",
                self.n_heads
            )));
        }
        Ok(())
    }
}

/// Non-affine layer norm (unit gain, zero bias) over the last axis.
pub(crate) fn unit_ln(x: &Tensor) -> Result<Tensor> {
    let d = *x
        .shape()
        .last()
        .ok_or_else(|| Error::Contract("layer norm on rank-0 tensor".into()))?;
    x.layer_norm(&Tensor::full(&[d], 1.0), &Tensor::zeros(&[d]))
}

fn check_mask(mask: Option<&[bool]>, n: usize, what: &str) -> Result<()> {
    if let Some(m) = mask {
        if m.len() != n {
            return Err(Error::Contract(format!(
                "{what} mask length {} vs {n} tokens",
                m.len()
            )));
        }
        if m.iter().all(|&a| !a) {
            return Err(Error::Contract(format!("{what}: all tokens masked")));
        }
    }
    Ok(())
}

/// Scaled-dot-product multi-head attention branch (no norm, no residual).
/// `q_in` and `kv_in` are already normalized by the caller.
fn attention_core(
    q_in: &Tensor,
    kv_in: &Tensor,
    params: &AttentionParams,
    key_mask: Option<&[bool]>,
    query_mask: Option<&[bool]>,
) -> Result<Tensor> {
    params.validate()?;
    let dim = params.dim();
    let n = kv_in.shape()[0];
    let dh = dim / params.n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let q = q_in.matmul(&params.w_q)?;
    let k = kv_in.matmul(&params.w_k)?;
    let v = kv_in.matmul(&params.w_v)?;

    let key_offsets = key_mask.map(|m| {
        let vals: Vec<f64> = m.iter().map(|&on| if on { 0.0 } else { MASK_OFF }).collect();
        Tensor::constant(&[n], vals).expect("mask length checked")
    });

    let mut heads = Vec::with_capacity(params.n_heads);
    for h in 0..params.n_heads {
        let qh = q.slice_cols(h * dh, (h + 1) * dh)?;
        let kh = k.slice_cols(h * dh, (h + 1) * dh)?;
        let vh = v.slice_cols(h * dh, (h + 1) * dh)?;
        let mut scores = qh.matmul_nt(&kh)?.scale(scale);
        if let Some(off) = &key_offsets {
            scores = scores.add_rowvec(off)?;
        }
        let probs = scores.softmax_lastdim()?;
        heads.push(probs.matmul(&vh)?);
    }
    let mut out = Tensor::concat_cols(&heads)?.matmul(&params.w_o)?;
    if let Some(qm) = query_mask {
        let keep: Vec<f64> = qm.iter().map(|&on| if on { 1.0 } else { 0.0 }).collect();
        out = out.mul_colvec(&Tensor::constant(&[qm.len()], keep)?)?;
    }
    Ok(out)
}

/// Pre-norm residual self-attention over `[n, dim]` tokens. Masked tokens
/// neither attend nor are attended to; their rows pass through unchanged.
pub fn self_attention(
    tokens: &Tensor,
    params: &AttentionParams,
    mask: Option<&[bool]>,
) -> Result<Tensor> {
    let n = match tokens.shape() {
        [n, d] if *d == params.dim() => *n,
        other => {
            return Err(Error::Contract(format!(
                "self_attention expects [n, {}], got {other:?}",
                params.dim()
            )))
        }
    };
    if n == 0 {
        return Err(Error::Contract("self_attention over zero tokens".into()));
    }
    check_mask(mask, n, "self_attention")?;
    let xn = unit_ln(tokens)?;
    let branch = attention_core(&xn, &xn, params, mask, mask)?;
    tokens.add(&branch)
}

/// Pre-norm residual cross-attention: `queries` attend to `context`.
pub fn cross_attention(
    queries: &Tensor,
    context: &Tensor,
    params: &AttentionParams,
    context_mask: Option<&[bool]>,
) -> Result<Tensor> {
    let d = params.dim();
    if queries.shape().len() != 2 || queries.shape()[1] != d {
        return Err(Error::Contract(format!(
            "cross_attention queries must be [m, {d}], got {:?}",
            queries.shape()
        )));
    }
    let n = match context.shape() {
        [n, cd] if *cd == d => *n,
        other => {
            return Err(Error::Contract(format!(
                "cross_attention context must be [n, {d}], got {other:?}"
            )))
        }
    };
    if n == 0 {
        return Err(Error::Contract("cross_attention with empty context".into()));
    }
    check_mask(context_mask, n, "cross_attention")?;
    let qn = unit_ln(queries)?;
    let cn = unit_ln(context)?;
    let branch = attention_core(&qn, &cn, params, context_mask, None)?;
    queries.add(&branch)
}

/// Gated self-attention over the joint sequence of visual tokens and
/// conditioning tokens. The joint attention output is truncated back to the
/// visual positions, scaled by tanh(gate), and added residually:
/// `v + tanh(gate) * keep_first_m(self_attn([v; cond]))`.
///
/// `cond_tokens` may have zero rows, which degenerates to gating a plain
/// self-attention branch over `v`.
pub fn gated_self_attention(
    v: &Tensor,
    cond_tokens: &Tensor,
    params: &AttentionParams,
    gate: &Tensor,
) -> Result<Tensor> {
    let d = params.dim();
    let m = match v.shape() {
        [m, vd] if *vd == d => *m,
        other => {
            return Err(Error::Contract(format!(
                "gated_self_attention visual tokens must be [m, {d}], got {other:?}"
            )))
        }
    };
    if m == 0 {
        return Err(Error::Contract("gated_self_attention over zero tokens".into()));
    }
    if cond_tokens.shape().len() != 2 || cond_tokens.shape()[1] != d {
        return Err(Error::Contract(format!(
            "gated_self_attention cond tokens must be [n, {d}], got {:?}",
            cond_tokens.shape()
        )));
    }
    if gate.len() != 1 {
        return Err(Error::Contract("gate must be a single-element tensor".into()));
    }
    let joint = if cond_tokens.shape()[0] == 0 {
        v.clone()
    } else {
        Tensor::concat_rows(&[v.clone(), cond_tokens.clone()])?
    };
    let jn = unit_ln(&joint)?;
    let full = attention_core(&jn, &jn, params, None, None)?;
    let kept = full.slice_rows(0, m)?;
    v.add(&kept.mul_scalar_tensor(&gate.tanh())?)
}

/// Gated cross-attention from visual tokens to instance feature tokens:
/// `v + tanh(gate) * cross_attn_branch(v -> feats)`. With zero feature
/// tokens this is exactly the identity.
pub fn gated_cross_attention(
    v: &Tensor,
    feats: &Tensor,
    params: &AttentionParams,
    gate: &Tensor,
    feat_mask: Option<&[bool]>,
) -> Result<Tensor> {
    let d = params.dim();
    if v.shape().len() != 2 || v.shape()[1] != d {
        return Err(Error::Contract(format!(
            "gated_cross_attention visual tokens must be [m, {d}], got {:?}",
            v.shape()
        )));
    }
    if gate.len() != 1 {
        return Err(Error::Contract("gate must be a single-element tensor".into()));
    }
    let k = match feats.shape() {
        [k, fd] if *fd == d => *k,
        other => {
            return Err(Error::Contract(format!(
                "gated_cross_attention features must be [k, {d}], got {other:?}"
            )))
        }
    };
    if k == 0 {
        return Ok(v.clone());
    }
    check_mask(feat_mask, k, "gated_cross_attention")?;
    let qn = unit_ln(v)?;
    let fn_ = unit_ln(feats)?;
    let branch = attention_core(&qn, &fn_, params, feat_mask, None)?;
    v.add(&branch.mul_scalar_tensor(&gate.tanh())?)
}

/// Self-attention over the T frame features at each spatial position
/// independently, residual included. A single-frame video is returned
/// unchanged: there is nothing across time to mix.
pub fn temporal_attention(latent: &Tensor, params: &AttentionParams) -> Result<Tensor> {
    let (t, h, w, c) = match latent.shape() {
        [t, h, w, c] => (*t, *h, *w, *c),
        other => {
            return Err(Error::Contract(format!(
                "temporal_attention expects [T, H, W, C], got {other:?}"
            )))
        }
    };
    if c != params.dim() {
        return Err(Error::Contract(format!(
            "temporal_attention channel dim {c} vs params dim {}",
            params.dim()
        )));
    }
    if t == 0 {
        return Err(Error::Contract("temporal_attention over zero frames".into()));
    }
    if t == 1 {
        return Ok(latent.clone());
    }
    let m = h * w;
    let flat = latent.reshape(&[t * m, c])?;
    let mut per_position = Vec::with_capacity(m);
    for p in 0..m {
        let idx: Vec<usize> = (0..t).map(|ti| ti * m + p).collect();
        let seq = flat.gather_rows(&idx)?;
        per_position.push(self_attention(&seq, params, None)?);
    }
    // Rows are now position-major; permute back to frame-major.
    let stacked = Tensor::concat_rows(&per_position)?;
    let mut perm = Vec::with_capacity(t * m);
    for ti in 0..t {
        for p in 0..m {
            perm.push(p * t + ti);
        }
    }
    stacked.gather_rows(&perm)?.reshape(&[t, h, w, c])
}
