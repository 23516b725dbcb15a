//! Single-layer gated recurrent encoder ("GruRec").
//!
//! ```text
//! z = σ(x·W_z + h·U_z + b_z)
//! r = σ(x·W_r + h·U_r + b_r)
//! c = tanh(x·W_h + (r ⊙ h)·U_h + b_h)
//! h' = (1 − z) ⊙ h + z ⊙ c
//! ```
//!
//! The initial state is zero and padding positions leave the state untouched.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_input, check_layout, init_params, needed_rows, Hidden, Init, Layout, ModelKind, Positions, SequenceModel};
use crate::corpus::ItemId;
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Real};
use crate::tensor::{matmul_a_bt_acc, ParamSet, ITEM_EMBED};

const W_Z: usize = 1;
const W_R: usize = 2;
const W_H: usize = 3;
const U_Z: usize = 4;
const U_R: usize = 5;
const U_H: usize = 6;
const B_Z: usize = 7;
const B_R: usize = 8;
const B_H: usize = 9;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruConfig {
    pub num_items: usize,
    pub dim: usize,
    pub max_len: usize,
}

impl GruConfig {
    pub fn new(num_items: usize, dim: usize, max_len: usize) -> Self {
        GruConfig { num_items, dim, max_len }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_items == 0 || self.dim == 0 || self.max_len == 0 {
            return Err(Error::Config(format!("degenerate recurrent config {self:?}")));
        }
        Ok(())
    }
}

fn layout(config: &GruConfig) -> Layout {
    let d = config.dim;
    let mut out = vec![("item_embed".to_string(), config.num_items + 1, d, Init::Uniform)];
    for name in ["w_z", "w_r", "w_h", "u_z", "u_r", "u_h"] {
        out.push((name.to_string(), d, d, Init::Uniform));
    }
    for name in ["b_z", "b_r", "b_h"] {
        out.push((name.to_string(), 1, d, Init::Zero));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruRec<T> {
    pub config: GruConfig,
    pub params: ParamSet<T>,
}

/// Per real step: the state entering the step, the gates, the candidate and
/// the resulting state.
#[derive(Clone, Debug, PartialEq)]
pub struct GruStep<T> {
    pub item: ItemId,
    pub h_prev: Vec<T>,
    pub z: Vec<T>,
    pub r: Vec<T>,
    pub cand: Vec<T>,
    pub h: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruCache<T> {
    pub input: Vec<ItemId>,
    pub steps: Vec<GruStep<T>>,
    pub rows: Vec<usize>,
}

/// `out[c] += Σ_p x[p] · w[p][c]` for a `d × d` matrix.
#[inline]
fn vec_mat_acc<T: Real>(x: &[T], w: &[T], d: usize, out: &mut [T]) {
    for (p, &xv) in x.iter().enumerate() {
        if xv == T::zero() {
            continue;
        }
        for (o, wv) in out.iter_mut().zip(&w[p * d..(p + 1) * d]) {
            *o += xv * *wv;
        }
    }
}

fn outer_acc<T: Real>(a: &[T], b: &[T], out: &mut [T]) {
    let d = b.len();
    for (p, &av) in a.iter().enumerate() {
        if av == T::zero() {
            continue;
        }
        for (o, bv) in out[p * d..(p + 1) * d].iter_mut().zip(b) {
            *o += av * *bv;
        }
    }
}

impl<T: Real> GruRec<T> {
    pub fn new<R: Rng + ?Sized>(config: GruConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = init_params(layout(&config), config.dim, rng);
        Ok(GruRec { config, params })
    }

    pub fn from_params(config: GruConfig, params: ParamSet<T>) -> Result<Self> {
        config.validate()?;
        check_layout(&layout(&config), &params)?;
        Ok(GruRec { config, params })
    }

    fn w(&self, idx: usize) -> &[T] {
        &self.params.tensors[idx].data
    }

    fn step(&self, item: ItemId, h_prev: Vec<T>) -> GruStep<T> {
        let d = self.config.dim;
        let x = self.params.item_embed().row(item as usize);
        let mut az = self.w(B_Z).to_vec();
        let mut ar = self.w(B_R).to_vec();
        let mut ah = self.w(B_H).to_vec();
        vec_mat_acc(x, self.w(W_Z), d, &mut az);
        vec_mat_acc(&h_prev, self.w(U_Z), d, &mut az);
        vec_mat_acc(x, self.w(W_R), d, &mut ar);
        vec_mat_acc(&h_prev, self.w(U_R), d, &mut ar);
        let z: Vec<T> = az.into_iter().map(sigmoid).collect();
        let r: Vec<T> = ar.into_iter().map(sigmoid).collect();
        let rh: Vec<T> = r.iter().zip(&h_prev).map(|(a, b)| *a * *b).collect();
        vec_mat_acc(x, self.w(W_H), d, &mut ah);
        vec_mat_acc(&rh, self.w(U_H), d, &mut ah);
        let cand: Vec<T> = ah.into_iter().map(T::tanh).collect();
        let h = (0..d).map(|c| (T::one() - z[c]) * h_prev[c] + z[c] * cand[c]).collect();
        GruStep { item, h_prev, z, r, cand, h }
    }
}

impl<T: Real> SequenceModel<T> for GruRec<T> {
    type Cache = GruCache<T>;

    fn kind(&self) -> ModelKind {
        ModelKind::Gru
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

    fn forward(&self, input: &[ItemId], needed: Positions) -> Result<(Hidden<T>, GruCache<T>)> {
        let positions = check_input(input, self.config.max_len, self.config.num_items)?;
        let d = self.config.dim;
        let mut h = vec![T::zero(); d];
        let mut steps = Vec::with_capacity(positions.len());
        for &p in &positions {
            let step = self.step(input[p], h);
            h = step.h.clone();
            steps.push(step);
        }
        let rows = needed_rows(steps.len(), needed);
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in &rows {
            data.extend_from_slice(&steps[r].h);
        }
        Ok((Hidden { rows: rows.clone(), dim: d, data }, GruCache { input: input.to_vec(), steps, rows }))
    }

    fn backward(&self, cache: &GruCache<T>, grad_hidden: &Hidden<T>, grads: &mut ParamSet<T>) -> Result<()> {
        self.params.check_same_shape(grads)?;
        if grad_hidden.rows != cache.rows || grad_hidden.dim != self.config.dim {
            return Err(Error::Shape("gradient rows do not match forward cache".into()));
        }
        let d = self.config.dim;
        let n = cache.steps.len();
        let mut upstream = vec![T::zero(); n * d];
        for (k, &r) in grad_hidden.rows.iter().enumerate() {
            upstream[r * d..(r + 1) * d].copy_from_slice(grad_hidden.row(k));
        }
        let mut dh_next = vec![T::zero(); d];
        let mut dx = vec![T::zero(); d];
        for t in (0..n).rev() {
            let s = &cache.steps[t];
            let dh: Vec<T> = (0..d).map(|c| dh_next[c] + upstream[t * d + c]).collect();
            let mut dh_prev: Vec<T> = (0..d).map(|c| dh[c] * (T::one() - s.z[c])).collect();
            let da_z: Vec<T> = (0..d).map(|c| dh[c] * (s.cand[c] - s.h_prev[c]) * s.z[c] * (T::one() - s.z[c])).collect();
            let da_h: Vec<T> = (0..d).map(|c| dh[c] * s.z[c] * (T::one() - s.cand[c] * s.cand[c])).collect();
            let rh: Vec<T> = (0..d).map(|c| s.r[c] * s.h_prev[c]).collect();
            let mut drh = vec![T::zero(); d];
            matmul_a_bt_acc(&da_h, self.w(U_H), 1, d, d, &mut drh);
            for c in 0..d {
                dh_prev[c] += drh[c] * s.r[c];
            }
            let da_r: Vec<T> = (0..d).map(|c| drh[c] * s.h_prev[c] * s.r[c] * (T::one() - s.r[c])).collect();

            let x = self.params.item_embed().row(s.item as usize);
            dx.iter_mut().for_each(|v| *v = T::zero());
            for (gate_w, gate_u, gate_b, da, hin) in [
                (W_Z, U_Z, B_Z, &da_z, &s.h_prev),
                (W_R, U_R, B_R, &da_r, &s.h_prev),
                (W_H, U_H, B_H, &da_h, &rh),
            ] {
                outer_acc(x, da, &mut grads.tensors[gate_w].data);
                outer_acc(hin, da, &mut grads.tensors[gate_u].data);
                for (o, v) in grads.tensors[gate_b].data.iter_mut().zip(da.iter()) {
                    *o += *v;
                }
                matmul_a_bt_acc(da, self.w(gate_w), 1, d, d, &mut dx);
                if gate_u != U_H {
                    matmul_a_bt_acc(da, self.w(gate_u), 1, d, d, &mut dh_prev);
                }
            }
            for (o, v) in grads.tensors[ITEM_EMBED].row_mut(s.item as usize).iter_mut().zip(&dx) {
                *o += *v;
            }
            dh_next = dh_prev;
        }
        Ok(())
    }
}
