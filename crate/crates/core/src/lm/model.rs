//! Forward and reverse-mode passes of the pre-norm decoder.
//!
//! Block: x += O(attn(Q,K,V of rmsnorm(x))); x += Down(gelu(Up(rmsnorm(x)))).
//! The last block can be restricted to query rows `out_start..` since only those
//! logits are needed for scoring and answer-only losses; earlier rows still feed
//! keys and values.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

use super::config::LoraTarget;
use super::lora::{LoraAdapter, LoraPair};
use super::params::ModelParams;
use super::{LmError, Scalar};

pub(crate) const NORM_EPS: f64 = 1e-5;

fn c<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("representable constant")
}

/// One training sequence: `targets[t]` is the token position `t` must predict,
/// `None` where the loss is masked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub ids: Vec<u32>,
    pub targets: Vec<Option<u32>>,
}

impl Example {
    pub fn first_target(&self) -> Option<usize> {
        self.targets.iter().position(Option::is_some)
    }
}

struct LayerCache<T> {
    q0: usize,
    x_in: Array2<T>,
    r1: Array1<T>,
    h1: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    xa_q: Option<Array2<T>>,
    xa_k: Option<Array2<T>>,
    xa_v: Option<Array2<T>>,
    probs: Vec<Array2<T>>,
    att: Array2<T>,
    xa_o: Option<Array2<T>>,
    x_mid: Array2<T>,
    r2: Array1<T>,
    h2: Array2<T>,
    u: Array2<T>,
    xa_up: Option<Array2<T>>,
    gl: Array2<T>,
    xa_down: Option<Array2<T>>,
}

/// Activations kept for the backward pass.
pub struct ForwardCache<T> {
    ids: Vec<u32>,
    out_start: usize,
    layers: Vec<LayerCache<T>>,
    x_final: Array2<T>,
    rf: Array1<T>,
    hf: Array2<T>,
    xa_head: Option<Array2<T>>,
}

impl<T> ForwardCache<T> {
    pub fn out_start(&self) -> usize {
        self.out_start
    }
}

/// Gradient buffers. With an adapter attached only `lora` is populated; the
/// base is frozen and gets no buffer at all.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub base: Option<ModelParams<T>>,
    pub lora: Option<LoraAdapter<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn new(params: &ModelParams<T>, adapter: Option<&LoraAdapter<T>>) -> Self {
        match adapter {
            Some(a) => Self { base: None, lora: Some(a.zeros_like()) },
            None => Self { base: Some(params.zeros_like()), lora: None },
        }
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        if let Some(b) = &mut self.base {
            out.extend(b.slices_mut());
        }
        if let Some(l) = &mut self.lora {
            out.extend(l.slices_mut());
        }
        out
    }

    pub fn named(&self) -> Vec<(String, &[T])> {
        let mut out: Vec<(String, &[T])> = Vec::new();
        if let Some(b) = &self.base {
            for (n, t) in b.named_tensors() {
                let s: &[T] = match t {
                    super::TensorRef::Vector(v) => v.as_slice().expect("contiguous"),
                    super::TensorRef::Matrix(m) => m.as_slice().expect("contiguous"),
                };
                out.push((n, s));
            }
        }
        if let Some(l) = &self.lora {
            out.extend(l.named_slices());
        }
        out
    }

    pub fn scale(&mut self, k: T) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn add(&mut self, other: &Grads<T>) {
        let theirs: Vec<&[T]> = other.named().into_iter().map(|(_, s)| s).collect();
        for (mine, theirs) in self.slices_mut().into_iter().zip(theirs) {
            mine.iter_mut().zip(theirs).for_each(|(a, &b)| *a += b);
        }
    }

    pub fn norm(&self) -> T {
        let mut acc = T::zero();
        for (_, s) in self.named() {
            for &v in s {
                acc += v * v;
            }
        }
        acc.sqrt()
    }

    pub fn check_finite(&self, step: Option<usize>) -> Result<(), LmError> {
        for (name, s) in self.named() {
            if s.iter().any(|v| !v.is_finite()) {
                return Err(LmError::NonFinite { tensor: format!("grad {name}"), step });
            }
        }
        Ok(())
    }
}

fn rms_fwd<T: Scalar>(x: ArrayView2<T>, g: &Array1<T>) -> (Array2<T>, Array1<T>) {
    let n = c::<T>(x.ncols() as f64);
    let eps = c::<T>(NORM_EPS);
    let r: Array1<T> = x
        .rows()
        .into_iter()
        .map(|row| {
            let ms = row.iter().fold(T::zero(), |a, &v| a + v * v) / n;
            (ms + eps).sqrt().recip()
        })
        .collect();
    let mut y = x.to_owned();
    for (mut row, &ri) in y.rows_mut().into_iter().zip(r.iter()) {
        row.zip_mut_with(g, |v, &gi| *v = *v * ri * gi);
    }
    (y, r)
}

fn rms_bwd<T: Scalar>(x: ArrayView2<T>, r: &Array1<T>, g: &Array1<T>, dy: &Array2<T>, mut dg: Option<&mut Array1<T>>) -> Array2<T> {
    let n = c::<T>(x.ncols() as f64);
    let mut dx = Array2::zeros(x.raw_dim());
    for i in 0..x.nrows() {
        let (xi, dyi, ri) = (x.row(i), dy.row(i), r[i]);
        let mut dot = T::zero();
        for j in 0..xi.len() {
            dot += g[j] * dyi[j] * xi[j];
        }
        let k = ri * ri * ri * dot / n;
        let mut dxi = dx.row_mut(i);
        for j in 0..xi.len() {
            dxi[j] = ri * g[j] * dyi[j] - k * xi[j];
        }
        if let Some(dg) = dg.as_deref_mut() {
            for j in 0..xi.len() {
                dg[j] += dyi[j] * xi[j] * ri;
            }
        }
    }
    dx
}

fn lin_fwd<T: Scalar>(x: ArrayView2<T>, w: &Array2<T>, lora: Option<&LoraPair<T>>, s: T) -> (Array2<T>, Option<Array2<T>>) {
    let mut y = x.dot(w);
    let xa = lora.map(|p| {
        let xa = x.dot(&p.a.t());
        general_mat_mul(s, &xa, &p.b.t(), T::one(), &mut y);
        xa
    });
    (y, xa)
}

#[allow(clippy::too_many_arguments)]
fn lin_bwd<T: Scalar>(
    x: ArrayView2<T>,
    dy: &Array2<T>,
    w: &Array2<T>,
    lora: Option<&LoraPair<T>>,
    xa: Option<&Array2<T>>,
    s: T,
    dw: Option<&mut Array2<T>>,
    dlora: Option<&mut LoraPair<T>>,
) -> Array2<T> {
    let mut dx = dy.dot(&w.t());
    if let Some(dw) = dw {
        general_mat_mul(T::one(), &x.t(), dy, T::one(), dw);
    }
    if let (Some(p), Some(xa)) = (lora, xa) {
        let dyb = dy.dot(&p.b);
        general_mat_mul(s, &dyb, &p.a, T::one(), &mut dx);
        if let Some(g) = dlora {
            general_mat_mul(s, &dy.t(), xa, T::one(), &mut g.b);
            general_mat_mul(s, &dyb.t(), &x, T::one(), &mut g.a);
        }
    }
    dx
}

fn gelu<T: Scalar>(u: T) -> T {
    let k = c::<T>((2.0 / std::f64::consts::PI).sqrt());
    let half = c::<T>(0.5);
    half * u * (T::one() + (k * (u + c::<T>(0.044715) * u * u * u)).tanh())
}

fn gelu_grad<T: Scalar>(u: T) -> T {
    let k = c::<T>((2.0 / std::f64::consts::PI).sqrt());
    let a = c::<T>(0.044715);
    let half = c::<T>(0.5);
    let t = (k * (u + a * u * u * u)).tanh();
    half * (T::one() + t) + half * u * (T::one() - t * t) * k * (T::one() + c::<T>(3.0) * a * u * u)
}

fn attn_fwd<T: Scalar>(q: &Array2<T>, k: &Array2<T>, v: &Array2<T>, q0: usize, heads: usize) -> (Array2<T>, Vec<Array2<T>>) {
    let d = q.ncols();
    let hd = d / heads;
    let scale = c::<T>(1.0 / (hd as f64).sqrt());
    let mut out = Array2::zeros(q.raw_dim());
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * hd..(h + 1) * hd];
        let mut sc = q.slice(cols).dot(&k.slice(cols).t());
        for (i, mut row) in sc.rows_mut().into_iter().enumerate() {
            let lim = q0 + i;
            let mut m = T::neg_infinity();
            for j in 0..=lim {
                m = m.max(row[j] * scale);
            }
            let mut sum = T::zero();
            for j in 0..=lim {
                let e = (row[j] * scale - m).exp();
                row[j] = e;
                sum += e;
            }
            for j in 0..=lim {
                row[j] /= sum;
            }
            for j in lim + 1..row.len() {
                row[j] = T::zero();
            }
        }
        out.slice_mut(cols).assign(&sc.dot(&v.slice(cols)));
        probs.push(sc);
    }
    (out, probs)
}

#[allow(clippy::type_complexity)]
fn attn_bwd<T: Scalar>(
    dout: &Array2<T>,
    q: &Array2<T>,
    k: &Array2<T>,
    v: &Array2<T>,
    probs: &[Array2<T>],
) -> (Array2<T>, Array2<T>, Array2<T>) {
    let heads = probs.len();
    let d = q.ncols();
    let hd = d / heads;
    let scale = c::<T>(1.0 / (hd as f64).sqrt());
    let mut dq = Array2::zeros(q.raw_dim());
    let mut dk = Array2::zeros(k.raw_dim());
    let mut dv = Array2::zeros(v.raw_dim());
    for (h, p) in probs.iter().enumerate() {
        let cols = s![.., h * hd..(h + 1) * hd];
        let doh = dout.slice(cols);
        let dp = doh.dot(&v.slice(cols).t());
        general_mat_mul(T::one(), &p.t(), &doh, T::zero(), &mut dv.slice_mut(cols));
        let mut ds = dp;
        for (mut ds_row, p_row) in ds.rows_mut().into_iter().zip(p.rows()) {
            let dot = ds_row.iter().zip(p_row.iter()).fold(T::zero(), |a, (&x, &y)| a + x * y);
            Zip::from(&mut ds_row).and(&p_row).for_each(|x, &pp| *x = pp * (*x - dot));
        }
        general_mat_mul(scale, &ds, &k.slice(cols), T::zero(), &mut dq.slice_mut(cols));
        general_mat_mul(scale, &ds.t(), &q.slice(cols), T::zero(), &mut dk.slice_mut(cols));
    }
    (dq, dk, dv)
}

fn check_ids<T: Scalar>(params: &ModelParams<T>, ids: &[u32]) -> Result<(), LmError> {
    let cfg = &params.config;
    if ids.len() > cfg.context_len {
        return Err(LmError::SequenceTooLong { len: ids.len(), context: cfg.context_len });
    }
    if let Some(&id) = ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(LmError::TokenOutOfRange { id, vocab: cfg.vocab_size });
    }
    Ok(())
}

/// Logits for rows `out_start..len` plus the activation cache.
pub(crate) fn run<T: Scalar>(
    params: &ModelParams<T>,
    adapter: Option<&LoraAdapter<T>>,
    ids: &[u32],
    out_start: usize,
) -> Result<(Array2<T>, ForwardCache<T>), LmError> {
    check_ids(params, ids)?;
    let cfg = &params.config;
    let len = ids.len();
    if out_start > len {
        return Err(LmError::Shape(format!("out_start {out_start} beyond sequence length {len}")));
    }
    if let Some(a) = adapter {
        if a.model != *cfg {
            return Err(LmError::Shape("adapter was built for a different model config".into()));
        }
    }
    let s = adapter.map(|a| a.scale()).unwrap_or_else(T::zero);
    let pair = |l: usize, t: LoraTarget| adapter.and_then(|a| a.pair(l, t));

    let mut x = params.tok_emb.select(Axis(0), &ids.iter().map(|&i| i as usize).collect::<Vec<_>>());
    x += &params.pos_emb.slice(s![..len, ..]);
    let mut layers = Vec::with_capacity(cfg.layers);
    for (l, lp) in params.layers.iter().enumerate() {
        let q0 = if l + 1 == cfg.layers { out_start } else { 0 };
        let (h1, r1) = rms_fwd(x.view(), &lp.attn_norm);
        let (q, xa_q) = lin_fwd(h1.slice(s![q0.., ..]), &lp.wq, pair(l, LoraTarget::Q), s);
        let (k, xa_k) = lin_fwd(h1.view(), &lp.wk, pair(l, LoraTarget::K), s);
        let (v, xa_v) = lin_fwd(h1.view(), &lp.wv, pair(l, LoraTarget::V), s);
        let (att, probs) = attn_fwd(&q, &k, &v, q0, cfg.heads);
        let (ao, xa_o) = lin_fwd(att.view(), &lp.wo, pair(l, LoraTarget::O), s);
        let x_mid = &x.slice(s![q0.., ..]) + &ao;
        let (h2, r2) = rms_fwd(x_mid.view(), &lp.mlp_norm);
        let (u, xa_up) = lin_fwd(h2.view(), &lp.w_up, pair(l, LoraTarget::Up), s);
        let gl = u.mapv(gelu);
        let (dn, xa_down) = lin_fwd(gl.view(), &lp.w_down, pair(l, LoraTarget::Down), s);
        let x_out = &x_mid + &dn;
        layers.push(LayerCache {
            q0,
            x_in: std::mem::replace(&mut x, x_out),
            r1,
            h1,
            q,
            k,
            v,
            xa_q,
            xa_k,
            xa_v,
            probs,
            att,
            xa_o,
            x_mid,
            r2,
            h2,
            u,
            xa_up,
            gl,
            xa_down,
        });
    }
    let (hf, rf) = rms_fwd(x.view(), &params.final_norm);
    let (logits, xa_head) = lin_fwd(hf.view(), &params.head, pair(0, LoraTarget::Head), s);
    Ok((logits, ForwardCache { ids: ids.to_vec(), out_start, layers, x_final: x, rf, hf, xa_head }))
}

/// Logits for every position, shape (len, |V|).
pub fn forward<T: Scalar>(params: &ModelParams<T>, adapter: Option<&LoraAdapter<T>>, ids: &[u32]) -> Result<Array2<T>, LmError> {
    forward_from(params, adapter, ids, 0)
}

/// Logits for positions `out_start..len` only; identical to the matching rows
/// of `forward`.
pub fn forward_from<T: Scalar>(
    params: &ModelParams<T>,
    adapter: Option<&LoraAdapter<T>>,
    ids: &[u32],
    out_start: usize,
) -> Result<Array2<T>, LmError> {
    if params.layers.is_empty() {
        return Err(LmError::Config("model has no layers".into()));
    }
    Ok(run(params, adapter, ids, out_start)?.0)
}

/// Row-wise softmax.
pub fn softmax_rows<T: Scalar>(logits: &Array2<T>) -> Array2<T> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    p
}

/// Mean negative log-likelihood over unmasked rows, and its gradient with
/// respect to the logits.
pub fn loss_and_dlogits<T: Scalar>(logits: &Array2<T>, targets: &[Option<u32>]) -> Result<(T, Array2<T>), LmError> {
    if logits.nrows() != targets.len() {
        return Err(LmError::Shape(format!("{} logit rows vs {} targets", logits.nrows(), targets.len())));
    }
    let n = targets.iter().filter(|t| t.is_some()).count();
    if n == 0 {
        return Err(LmError::AllMasked);
    }
    let vocab = logits.ncols();
    let inv_n = T::one() / c::<T>(n as f64);
    let mut loss = T::zero();
    let mut d = Array2::zeros(logits.raw_dim());
    for (i, t) in targets.iter().enumerate() {
        let Some(t) = *t else { continue };
        if t as usize >= vocab {
            return Err(LmError::TokenOutOfRange { id: t, vocab });
        }
        let row = logits.row(i);
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let z = row.iter().fold(T::zero(), |a, &v| a + (v - m).exp());
        let lse = m + z.ln();
        loss += lse - row[t as usize];
        let mut dr = d.row_mut(i);
        for j in 0..vocab {
            dr[j] = (row[j] - lse).exp() * inv_n;
        }
        dr[t as usize] -= inv_n;
    }
    Ok((loss * inv_n, d))
}

pub fn lm_loss<T: Scalar>(logits: &Array2<T>, targets: &[Option<u32>]) -> Result<T, LmError> {
    Ok(loss_and_dlogits(logits, targets)?.0)
}

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(logits) for the
/// rows the cache was built with.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    adapter: Option<&LoraAdapter<T>>,
    cache: &ForwardCache<T>,
    dlogits: &Array2<T>,
    grads: &mut Grads<T>,
) -> Result<(), LmError> {
    if dlogits.nrows() != cache.hf.nrows() {
        return Err(LmError::Shape(format!("{} dlogit rows vs {} cached", dlogits.nrows(), cache.hf.nrows())));
    }
    let s = adapter.map(|a| a.scale()).unwrap_or_else(T::zero);
    let pair = |l: usize, t: LoraTarget| adapter.and_then(|a| a.pair(l, t));
    let Grads { base, lora } = grads;
    fn gw<T: Scalar>(b: &mut Option<ModelParams<T>>, l: usize, t: LoraTarget) -> Option<&mut Array2<T>> {
        b.as_mut().map(|b| b.layers[l].matrix_mut(t))
    }
    fn gl<T: Scalar>(a: &mut Option<LoraAdapter<T>>, l: usize, t: LoraTarget) -> Option<&mut LoraPair<T>> {
        a.as_mut().and_then(|a| a.pair_mut(l, t))
    }

    let dhf = lin_bwd(
        cache.hf.view(),
        dlogits,
        &params.head,
        pair(0, LoraTarget::Head),
        cache.xa_head.as_ref(),
        s,
        base.as_mut().map(|b| &mut b.head),
        gl(lora, 0, LoraTarget::Head),
    );
    let mut dx = rms_bwd(cache.x_final.view(), &cache.rf, &params.final_norm, &dhf, base.as_mut().map(|b| &mut b.final_norm));

    for (l, lc) in cache.layers.iter().enumerate().rev() {
        let lp = &params.layers[l];
        let q0 = lc.q0;
        let dgl = lin_bwd(
            lc.gl.view(),
            &dx,
            &lp.w_down,
            pair(l, LoraTarget::Down),
            lc.xa_down.as_ref(),
            s,
            gw(base, l, LoraTarget::Down),
            gl(lora, l, LoraTarget::Down),
        );
        let mut du = dgl;
        Zip::from(&mut du).and(&lc.u).for_each(|d, &u| *d = *d * gelu_grad(u));
        let dh2 = lin_bwd(
            lc.h2.view(),
            &du,
            &lp.w_up,
            pair(l, LoraTarget::Up),
            lc.xa_up.as_ref(),
            s,
            gw(base, l, LoraTarget::Up),
            gl(lora, l, LoraTarget::Up),
        );
        let mut dx_mid = rms_bwd(lc.x_mid.view(), &lc.r2, &lp.mlp_norm, &dh2, base.as_mut().map(|b| &mut b.layers[l].mlp_norm));
        dx_mid += &dx;

        let datt = lin_bwd(
            lc.att.view(),
            &dx_mid,
            &lp.wo,
            pair(l, LoraTarget::O),
            lc.xa_o.as_ref(),
            s,
            gw(base, l, LoraTarget::O),
            gl(lora, l, LoraTarget::O),
        );
        let (dq, dk, dv) = attn_bwd(&datt, &lc.q, &lc.k, &lc.v, &lc.probs);
        let mut dh1 = lin_bwd(
            lc.h1.view(),
            &dk,
            &lp.wk,
            pair(l, LoraTarget::K),
            lc.xa_k.as_ref(),
            s,
            gw(base, l, LoraTarget::K),
            gl(lora, l, LoraTarget::K),
        );
        dh1 += &lin_bwd(
            lc.h1.view(),
            &dv,
            &lp.wv,
            pair(l, LoraTarget::V),
            lc.xa_v.as_ref(),
            s,
            gw(base, l, LoraTarget::V),
            gl(lora, l, LoraTarget::V),
        );
        let dhq = lin_bwd(
            lc.h1.slice(s![q0.., ..]),
            &dq,
            &lp.wq,
            pair(l, LoraTarget::Q),
            lc.xa_q.as_ref(),
            s,
            gw(base, l, LoraTarget::Q),
            gl(lora, l, LoraTarget::Q),
        );
        dh1.slice_mut(s![q0.., ..]).add_assign_from(&dhq);
        let mut dx_in = rms_bwd(lc.x_in.view(), &lc.r1, &lp.attn_norm, &dh1, base.as_mut().map(|b| &mut b.layers[l].attn_norm));
        dx_in.slice_mut(s![q0.., ..]).add_assign_from(&dx_mid);
        dx = dx_in;
    }

    if let Some(b) = base.as_mut() {
        for (t, &id) in cache.ids.iter().enumerate() {
            b.tok_emb.row_mut(id as usize).add_assign_from(&dx.row(t));
            b.pos_emb.row_mut(t).add_assign_from(&dx.row(t));
        }
    }
    Ok(())
}

trait AddAssignFrom<A> {
    fn add_assign_from(&mut self, rhs: &A);
}

impl<T: Scalar, D: ndarray::Dimension, S: ndarray::DataMut<Elem = T>, S2: ndarray::Data<Elem = T>>
    AddAssignFrom<ndarray::ArrayBase<S2, D>> for ndarray::ArrayBase<S, D>
{
    fn add_assign_from(&mut self, rhs: &ndarray::ArrayBase<S2, D>) {
        self.zip_mut_with(rhs, |a, &b| *a += b);
    }
}

/// Loss on one example and the gradients of the trainable tensors (adapter
/// only when attached, the full base otherwise).
pub fn loss_and_grad<T: Scalar>(
    params: &ModelParams<T>,
    adapter: Option<&LoraAdapter<T>>,
    example: &Example,
) -> Result<(T, Grads<T>), LmError> {
    let mut grads = Grads::new(params, adapter);
    let loss = accumulate_grad(params, adapter, example, T::one(), &mut grads)?;
    Ok((loss, grads))
}

/// Adds `weight · d(loss)/d(params)` into `grads` and returns the loss.
pub(crate) fn accumulate_grad<T: Scalar>(
    params: &ModelParams<T>,
    adapter: Option<&LoraAdapter<T>>,
    example: &Example,
    weight: T,
    grads: &mut Grads<T>,
) -> Result<T, LmError> {
    if example.ids.len() != example.targets.len() {
        return Err(LmError::Shape("ids and targets differ in length".into()));
    }
    let start = example.first_target().ok_or(LmError::AllMasked)?;
    let (logits, cache) = run(params, adapter, &example.ids, start)?;
    let (loss, mut d) = loss_and_dlogits(&logits, &example.targets[start..])?;
    if weight != T::one() {
        d.mapv_inplace(|v| v * weight);
    }
    backward(params, adapter, &cache, &d, grads)?;
    Ok(loss)
}
