//! Causal self-attention encoder ("AttnRec"): item + position embeddings,
//! then `num_blocks` blocks of
//! `LN(x + Attn(x))` → `LN(y + FFN(y))` with a ReLU feed-forward layer.
//! Heads split the model dimension; there is no output projection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_input, check_layout, init_params, needed_rows, Hidden, Init, Layout, ModelKind, Positions, SequenceModel};
use crate::corpus::ItemId;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{dot, matmul, matmul_a_bt_acc, matmul_at_b_acc, ParamSet, Tensor, ITEM_EMBED};

const LN_EPS: f64 = 1e-8;
const POS_EMBED: usize = 1;
const PER_BLOCK: usize = 11;
const WQ: usize = 0;
const WK: usize = 1;
const WV: usize = 2;
const LN1_G: usize = 3;
const LN1_B: usize = 4;
const W1: usize = 5;
const B1: usize = 6;
const W2: usize = 7;
const B2: usize = 8;
const LN2_G: usize = 9;
const LN2_B: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttnConfig {
    pub num_items: usize,
    pub dim: usize,
    pub max_len: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
}

impl AttnConfig {
    /// One block, one head, feed-forward width equal to `dim`.
    pub fn new(num_items: usize, dim: usize, max_len: usize) -> Self {
        AttnConfig { num_items, dim, max_len, num_blocks: 1, num_heads: 1, ff_dim: dim }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_items == 0 || self.dim == 0 || self.max_len == 0 || self.num_blocks == 0 || self.ff_dim == 0 {
            return Err(Error::Config(format!("degenerate attention config {self:?}")));
        }
        if self.num_heads == 0 || self.dim % self.num_heads != 0 {
            return Err(Error::Config(format!("dim {} not divisible by {} heads", self.dim, self.num_heads)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttnRec<T> {
    pub config: AttnConfig,
    pub params: ParamSet<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockCache<T> {
    pub x: Vec<T>,
    pub q: Vec<T>,
    pub k: Vec<T>,
    pub v: Vec<T>,
    /// `heads × n × n`, row `i` populated for `j ≤ i` only.
    pub attn: Vec<T>,
    pub xhat1: Vec<T>,
    pub inv_std1: Vec<T>,
    pub y: Vec<T>,
    pub h_pre: Vec<T>,
    pub h: Vec<T>,
    pub xhat2: Vec<T>,
    pub inv_std2: Vec<T>,
    pub z: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttnCache<T> {
    pub input: Vec<ItemId>,
    /// Padded indices of the real positions.
    pub positions: Vec<usize>,
    pub rows: Vec<usize>,
    pub blocks: Vec<BlockCache<T>>,
}

fn block_base(b: usize) -> usize {
    2 + PER_BLOCK * b
}

fn layout(config: &AttnConfig) -> Layout {
    let d = config.dim;
    let mut out = vec![
        ("item_embed".to_string(), config.num_items + 1, d, Init::Uniform),
        ("pos_embed".to_string(), config.max_len, d, Init::Uniform),
    ];
    for b in 0..config.num_blocks {
        let p = |s: &str| format!("block{b}.{s}");
        out.push((p("w_q"), d, d, Init::Uniform));
        out.push((p("w_k"), d, d, Init::Uniform));
        out.push((p("w_v"), d, d, Init::Uniform));
        out.push((p("ln1_gain"), 1, d, Init::One));
        out.push((p("ln1_bias"), 1, d, Init::Zero));
        out.push((p("ff_w1"), d, config.ff_dim, Init::Uniform));
        out.push((p("ff_b1"), 1, config.ff_dim, Init::Zero));
        out.push((p("ff_w2"), config.ff_dim, d, Init::Uniform));
        out.push((p("ff_b2"), 1, d, Init::Zero));
        out.push((p("ln2_gain"), 1, d, Init::One));
        out.push((p("ln2_bias"), 1, d, Init::Zero));
    }
    out
}

impl<T: Real> AttnRec<T> {
    pub fn new<R: Rng + ?Sized>(config: AttnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = init_params(layout(&config), config.dim, rng);
        Ok(AttnRec { config, params })
    }

    pub fn from_params(config: AttnConfig, params: ParamSet<T>) -> Result<Self> {
        config.validate()?;
        check_layout(&layout(&config), &params)?;
        Ok(AttnRec { config, params })
    }

    fn t(&self, b: usize, which: usize) -> &Tensor<T> {
        &self.params.tensors[block_base(b) + which]
    }

    fn block_forward(&self, b: usize, x: Vec<T>, n: usize) -> BlockCache<T> {
        let d = self.config.dim;
        let ff = self.config.ff_dim;
        let heads = self.config.num_heads;
        let dh = d / heads;
        let scale = T::one() / T::from_count(dh).sqrt();

        let mut q = vec![T::zero(); n * d];
        let mut k = vec![T::zero(); n * d];
        let mut v = vec![T::zero(); n * d];
        matmul(&x, &self.t(b, WQ).data, n, d, d, &mut q);
        matmul(&x, &self.t(b, WK).data, n, d, d, &mut k);
        matmul(&x, &self.t(b, WV).data, n, d, d, &mut v);

        let mut attn = vec![T::zero(); heads * n * n];
        let mut r1 = x.clone();
        let mut logits = vec![T::zero(); n];
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..n {
                let qi = &q[i * d..(i + 1) * d][cols.clone()];
                let mut max = T::neg_infinity();
                for j in 0..=i {
                    let s = dot(qi, &k[j * d..(j + 1) * d][cols.clone()]) * scale;
                    logits[j] = s;
                    if s > max {
                        max = s;
                    }
                }
                let mut sum = T::zero();
                for l in logits.iter_mut().take(i + 1) {
                    *l = (*l - max).exp();
                    sum += *l;
                }
                let arow = &mut attn[(h * n + i) * n..(h * n + i + 1) * n];
                for j in 0..=i {
                    arow[j] = logits[j] / sum;
                }
                let out = &mut r1[i * d..(i + 1) * d][cols.clone()];
                for j in 0..=i {
                    let a = arow[j];
                    for (o, vv) in out.iter_mut().zip(&v[j * d..(j + 1) * d][cols.clone()]) {
                        *o += a * *vv;
                    }
                }
            }
        }
        let (y, xhat1, inv_std1) = layer_norm(&r1, &self.t(b, LN1_G).data, &self.t(b, LN1_B).data, n, d);

        let mut h_pre = vec![T::zero(); n * ff];
        matmul(&y, &self.t(b, W1).data, n, d, ff, &mut h_pre);
        let b1 = &self.t(b, B1).data;
        for row in h_pre.chunks_mut(ff) {
            for (x, bb) in row.iter_mut().zip(b1) {
                *x += *bb;
            }
        }
        let h: Vec<T> = h_pre.iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect();
        let mut r2 = vec![T::zero(); n * d];
        matmul(&h, &self.t(b, W2).data, n, ff, d, &mut r2);
        let b2 = &self.t(b, B2).data;
        for (i, row) in r2.chunks_mut(d).enumerate() {
            for c in 0..d {
                row[c] += b2[c] + y[i * d + c];
            }
        }
        let (z, xhat2, inv_std2) = layer_norm(&r2, &self.t(b, LN2_G).data, &self.t(b, LN2_B).data, n, d);
        BlockCache { x, q, k, v, attn, xhat1, inv_std1, y, h_pre, h, xhat2, inv_std2, z }
    }

    /// Returns `∂L/∂x` for the block input.
    fn block_backward(&self, b: usize, c: &BlockCache<T>, dz: &[T], grads: &mut ParamSet<T>) -> Vec<T> {
        let d = self.config.dim;
        let ff = self.config.ff_dim;
        let heads = self.config.num_heads;
        let dh = d / heads;
        let n = c.x.len() / d;
        let scale = T::one() / T::from_count(dh).sqrt();
        let base = block_base(b);

        let dr2 = {
            let (left, right) = grads.tensors.split_at_mut(base + LN2_B);
            layer_norm_backward(dz, &c.xhat2, &c.inv_std2, &self.t(b, LN2_G).data, &mut left[base + LN2_G].data, &mut right[0].data, n, d)
        };
        let mut dy = dr2.clone();
        matmul_at_b_acc(&c.h, &dr2, n, ff, d, &mut grads.tensors[base + W2].data);
        col_sum_acc(&dr2, d, &mut grads.tensors[base + B2].data);
        let mut dh_act = vec![T::zero(); n * ff];
        matmul_a_bt_acc(&dr2, &self.t(b, W2).data, n, d, ff, &mut dh_act);
        for (g, &pre) in dh_act.iter_mut().zip(&c.h_pre) {
            if pre <= T::zero() {
                *g = T::zero();
            }
        }
        matmul_at_b_acc(&c.y, &dh_act, n, d, ff, &mut grads.tensors[base + W1].data);
        col_sum_acc(&dh_act, ff, &mut grads.tensors[base + B1].data);
        matmul_a_bt_acc(&dh_act, &self.t(b, W1).data, n, ff, d, &mut dy);

        let dr1 = {
            let (left, right) = grads.tensors.split_at_mut(base + LN1_B);
            layer_norm_backward(&dy, &c.xhat1, &c.inv_std1, &self.t(b, LN1_G).data, &mut left[base + LN1_G].data, &mut right[0].data, n, d)
        };
        let mut dx = dr1.clone();
        let d_out = &dr1;

        let mut dq = vec![T::zero(); n * d];
        let mut dk = vec![T::zero(); n * d];
        let mut dv = vec![T::zero(); n * d];
        let mut da = vec![T::zero(); n];
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..n {
                let arow = &c.attn[(h * n + i) * n..(h * n + i + 1) * n];
                let doi = &d_out[i * d..(i + 1) * d][cols.clone()];
                let mut weighted = T::zero();
                for j in 0..=i {
                    da[j] = dot(doi, &c.v[j * d..(j + 1) * d][cols.clone()]);
                    weighted += arow[j] * da[j];
                    let a = arow[j];
                    for (g, o) in dv[j * d..(j + 1) * d][cols.clone()].iter_mut().zip(doi) {
                        *g += a * *o;
                    }
                }
                for j in 0..=i {
                    let ds = arow[j] * (da[j] - weighted) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    for col in cols.clone() {
                        dq[i * d + col] += ds * c.k[j * d + col];
                        dk[j * d + col] += ds * c.q[i * d + col];
                    }
                }
            }
        }
        matmul_at_b_acc(&c.x, &dq, n, d, d, &mut grads.tensors[base + WQ].data);
        matmul_at_b_acc(&c.x, &dk, n, d, d, &mut grads.tensors[base + WK].data);
        matmul_at_b_acc(&c.x, &dv, n, d, d, &mut grads.tensors[base + WV].data);
        matmul_a_bt_acc(&dq, &self.t(b, WQ).data, n, d, d, &mut dx);
        matmul_a_bt_acc(&dk, &self.t(b, WK).data, n, d, d, &mut dx);
        matmul_a_bt_acc(&dv, &self.t(b, WV).data, n, d, d, &mut dx);
        dx
    }
}

impl<T: Real> SequenceModel<T> for AttnRec<T> {
    type Cache = AttnCache<T>;

    fn kind(&self) -> ModelKind {
        ModelKind::Attn
    }

    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn max_len(&self) -> usize {
        self.config.max_len
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn num_items(&self) -> usize {
        self.config.num_items
    }

    fn forward(&self, input: &[ItemId], needed: Positions) -> Result<(Hidden<T>, AttnCache<T>)> {
        let positions = check_input(input, self.config.max_len, self.config.num_items)?;
        let n = positions.len();
        let d = self.config.dim;
        let emb = &self.params.tensors[ITEM_EMBED];
        let pos = &self.params.tensors[POS_EMBED];
        let mut x = vec![T::zero(); n * d];
        for (i, &p) in positions.iter().enumerate() {
            let row = &mut x[i * d..(i + 1) * d];
            for ((o, e), q) in row.iter_mut().zip(emb.row(input[p] as usize)).zip(pos.row(p)) {
                *o = *e + *q;
            }
        }
        let mut blocks = Vec::with_capacity(self.config.num_blocks);
        for b in 0..self.config.num_blocks {
            let cache = self.block_forward(b, x, n);
            x = cache.z.clone();
            blocks.push(cache);
        }
        let rows = needed_rows(n, needed);
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in &rows {
            data.extend_from_slice(&x[r * d..(r + 1) * d]);
        }
        let hidden = Hidden { rows: rows.clone(), dim: d, data };
        Ok((hidden, AttnCache { input: input.to_vec(), positions, rows, blocks }))
    }

    fn backward(&self, cache: &AttnCache<T>, grad_hidden: &Hidden<T>, grads: &mut ParamSet<T>) -> Result<()> {
        self.params.check_same_shape(grads)?;
        if grad_hidden.rows != cache.rows || grad_hidden.dim != self.config.dim {
            return Err(Error::Shape("gradient rows do not match forward cache".into()));
        }
        let d = self.config.dim;
        let n = cache.positions.len();
        let mut dz = vec![T::zero(); n * d];
        for (k, &r) in grad_hidden.rows.iter().enumerate() {
            dz[r * d..(r + 1) * d].copy_from_slice(grad_hidden.row(k));
        }
        for b in (0..self.config.num_blocks).rev() {
            dz = self.block_backward(b, &cache.blocks[b], &dz, grads);
        }
        for (i, &p) in cache.positions.iter().enumerate() {
            let g = &dz[i * d..(i + 1) * d];
            let item = cache.input[p] as usize;
            for (o, v) in grads.tensors[ITEM_EMBED].row_mut(item).iter_mut().zip(g) {
                *o += *v;
            }
            for (o, v) in grads.tensors[POS_EMBED].row_mut(p).iter_mut().zip(g) {
                *o += *v;
            }
        }
        Ok(())
    }
}

type LayerNormOut<T> = (Vec<T>, Vec<T>, Vec<T>);

fn layer_norm<T: Real>(x: &[T], gain: &[T], bias: &[T], n: usize, d: usize) -> LayerNormOut<T> {
    let eps = T::lit(LN_EPS);
    let inv_d = T::one() / T::from_count(d);
    let mut out = vec![T::zero(); n * d];
    let mut xhat = vec![T::zero(); n * d];
    let mut inv_std = vec![T::zero(); n];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let inv = T::one() / (var + eps).sqrt();
        inv_std[i] = inv;
        for c in 0..d {
            let xh = (row[c] - mean) * inv;
            xhat[i * d + c] = xh;
            out[i * d + c] = gain[c] * xh + bias[c];
        }
    }
    (out, xhat, inv_std)
}

#[allow(clippy::too_many_arguments)]
fn layer_norm_backward<T: Real>(
    dout: &[T],
    xhat: &[T],
    inv_std: &[T],
    gain: &[T],
    dgain: &mut [T],
    dbias: &mut [T],
    n: usize,
    d: usize,
) -> Vec<T> {
    let inv_d = T::one() / T::from_count(d);
    let mut dx = vec![T::zero(); n * d];
    let mut dxhat = vec![T::zero(); d];
    for i in 0..n {
        let go = &dout[i * d..(i + 1) * d];
        let xh = &xhat[i * d..(i + 1) * d];
        let mut mean_g = T::zero();
        let mut mean_gx = T::zero();
        for c in 0..d {
            dgain[c] += go[c] * xh[c];
            dbias[c] += go[c];
            dxhat[c] = go[c] * gain[c];
            mean_g += dxhat[c];
            mean_gx += dxhat[c] * xh[c];
        }
        mean_g *= inv_d;
        mean_gx *= inv_d;
        for c in 0..d {
            dx[i * d + c] = inv_std[i] * (dxhat[c] - mean_g - xh[c] * mean_gx);
        }
    }
    dx
}

fn col_sum_acc<T: Real>(m: &[T], cols: usize, out: &mut [T]) {
    for row in m.chunks(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += *v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(d: usize, items: usize, len: usize) -> AttnRec<f64> {
        AttnRec::new(AttnConfig::new(items, d, len), &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    #[test]
    fn padding_row_starts_at_zero() {
        let m = model(4, 5, 3);
        assert!(m.params.item_embed().row(0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_position_attends_to_itself() {
        let m = model(4, 5, 3);
        let (_, cache) = m.forward(&[0, 0, 2], Positions::Last).unwrap();
        let b = &cache.blocks[0];
        assert_eq!(b.attn[0], 1.0);
        // residual input to the first norm is x + v
        let d = 4;
        let mut r1 = vec![0.0; d];
        for c in 0..d {
            r1[c] = b.x[c] + b.v[c];
        }
        let mean: f64 = r1.iter().sum::<f64>() / d as f64;
        for c in 0..d {
            assert!(((r1[c] - mean) * b.inv_std1[0] - b.xhat1[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn all_padding_is_error() {
        let m = model(4, 5, 3);
        assert!(m.forward(&[0, 0, 0], Positions::Last).is_err());
    }

    #[test]
    fn heads_must_divide_dim() {
        let mut cfg = AttnConfig::new(5, 6, 3);
        cfg.num_heads = 4;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let m = model(4, 6, 4);
        let (h, cache) = m.forward(&[0, 1, 5, 2], Positions::All).unwrap();
        let mut grads = m.params.zeros_like();
        m.backward(&cache, &h.zeros_like(), &mut grads).unwrap();
        assert!(grads.tensors.iter().all(|t| t.data.iter().all(|&x| x == 0.0)));
    }
}
