use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::params::{LayerParams, Params};
use super::tensor::{dot, Matrix};
use super::{AttentionMode, ModelConfig, ModelError, Result};
use crate::nttp::EncodedExample;
use crate::Scalar;

pub const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerClassifier<T> {
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub params: Params<T>,
}

/// Softmax attention weights of one example, indexed `[layer][head]`, each
/// `L x L` over the real (unpadded) tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMaps<T> {
    pub layers: Vec<Vec<Matrix<T>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput<T> {
    /// `batch x 2`, columns in class-index order.
    pub logits: Matrix<T>,
    pub attentions: Option<Vec<AttentionMaps<T>>>,
}

struct LnCache<T> {
    xhat: Matrix<T>,
    inv_std: Vec<T>,
}

struct LayerCache<T> {
    input: Matrix<T>,
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    qr: Option<Matrix<T>>,
    kr: Option<Matrix<T>>,
    probs: Vec<Matrix<T>>,
    ctx: Matrix<T>,
    drop_attn: Option<Vec<T>>,
    ln1: LnCache<T>,
    h1: Matrix<T>,
    pre_act: Matrix<T>,
    act: Matrix<T>,
    drop_ffn: Option<Vec<T>>,
    ln2: LnCache<T>,
}

struct ExampleCache<T> {
    ids: Vec<u32>,
    drop_emb: Option<Vec<T>>,
    emb_ln: LnCache<T>,
    layers: Vec<LayerCache<T>>,
    cls: Vec<T>,
    logits: [T; 2],
}

pub fn init_model<T: Scalar>(config: ModelConfig, vocab_size: usize) -> Result<TransformerClassifier<T>> {
    TransformerClassifier::new(config, vocab_size)
}

impl<T: Scalar> TransformerClassifier<T> {
    /// Seeded random initialisation. `vocab_size` counts the special tokens,
    /// so at least one content token is required.
    pub fn new(config: ModelConfig, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        if vocab_size < 4 {
            return Err(ModelError::InvalidConfig(format!(
                "vocab_size {vocab_size} is below 4"
            )));
        }
        let params = Params::init(&config, vocab_size);
        Ok(Self {
            config,
            vocab_size,
            params,
        })
    }

    /// Wraps existing parameters after checking their shapes against `config`.
    pub fn from_params(config: ModelConfig, vocab_size: usize, params: Params<T>) -> Result<Self> {
        config.validate()?;
        let expected = Params::<T>::zeros(&config, vocab_size);
        let (a, b) = (expected.tensors(), params.tensors());
        if a.len() != b.len() {
            return Err(ModelError::ShapeMismatch("tensor count differs from config".into()));
        }
        for ((name, x), (_, y)) in a.iter().zip(&b) {
            if x.shape() != y.shape() {
                return Err(ModelError::ShapeMismatch(format!(
                    "{name}: expected {:?}, found {:?}",
                    x.shape(),
                    y.shape()
                )));
            }
        }
        Ok(Self {
            config,
            vocab_size,
            params,
        })
    }

    /// Number of real tokens after validating ids and mask.
    pub fn check_example(&self, ex: &EncodedExample) -> Result<usize> {
        if ex.token_ids.len() != ex.attention_mask.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "{} token ids with {} mask entries",
                ex.token_ids.len(),
                ex.attention_mask.len()
            )));
        }
        if let Some(&id) = ex.token_ids.iter().find(|&&id| id as usize >= self.vocab_size) {
            return Err(ModelError::IdOutOfRange {
                id,
                vocab: self.vocab_size,
            });
        }
        let len = ex.attention_mask.iter().take_while(|&&m| m == 1).count();
        if ex.attention_mask[len..].iter().any(|&m| m != 0) {
            return Err(ModelError::MaskNotPrefix);
        }
        if len == 0 {
            return Err(ModelError::EmptyExample);
        }
        if len > self.config.max_len {
            return Err(ModelError::TooLong {
                len,
                max_len: self.config.max_len,
            });
        }
        Ok(len)
    }

    fn real_ids<'a>(&self, ex: &'a EncodedExample) -> Result<&'a [u32]> {
        let len = self.check_example(ex)?;
        Ok(&ex.token_ids[..len])
    }

    pub fn forward(&self, batch: &[EncodedExample], capture_attention: bool) -> Result<ForwardOutput<T>> {
        let ids: Vec<&[u32]> = batch.iter().map(|ex| self.real_ids(ex)).collect::<Result<_>>()?;
        let caches: Vec<ExampleCache<T>> = ids.par_iter().map(|ids| self.forward_ids(ids, None)).collect();
        let mut logits = Matrix::zeros(batch.len(), 2);
        for (b, c) in caches.iter().enumerate() {
            logits.row_mut(b).copy_from_slice(&c.logits);
        }
        let attentions = capture_attention.then(|| {
            caches
                .into_iter()
                .map(|c| AttentionMaps {
                    layers: c.layers.into_iter().map(|l| l.probs).collect(),
                })
                .collect()
        });
        Ok(ForwardOutput { logits, attentions })
    }

    /// Class probabilities `(Benign, Ransomware)` per example. Pure; dropout
    /// never applies here.
    pub fn predict_proba(&self, batch: &[EncodedExample]) -> Result<Vec<[T; 2]>> {
        let out = self.forward(batch, false)?;
        Ok((0..batch.len())
            .map(|b| softmax2([out.logits.at(b, 0), out.logits.at(b, 1)]))
            .collect())
    }

    /// Pre-softmax attention scores, indexed `[layer][head]`.
    pub fn attention_scores(&self, ex: &EncodedExample) -> Result<Vec<Vec<Matrix<T>>>> {
        let ids = self.real_ids(ex)?;
        let cache = self.forward_ids(ids, None);
        Ok(cache
            .layers
            .iter()
            .map(|l| {
                (0..self.config.n_heads)
                    .map(|h| self.head_scores(&l.q, &l.k, l.qr.as_ref(), l.kr.as_ref(), h))
                    .collect()
            })
            .collect())
    }

    /// Mean cross-entropy over the batch.
    pub fn loss(&self, batch: &[EncodedExample]) -> Result<T> {
        self.loss_impl(batch, None)
    }

    /// Loss with the dropout masks that `loss_and_grad_with_dropout` would
    /// draw for the same seed.
    pub fn loss_with_dropout(&self, batch: &[EncodedExample], dropout_seed: u64) -> Result<T> {
        self.loss_impl(batch, Some(dropout_seed))
    }

    fn loss_impl(&self, batch: &[EncodedExample], dropout_seed: Option<u64>) -> Result<T> {
        let items = self.labelled(batch)?;
        let losses: Vec<T> = items
            .par_iter()
            .enumerate()
            .map(|(i, (ids, y))| {
                let mut rng = dropout_seed.map(|s| example_rng(s, i));
                let c = self.forward_ids(ids, rng.as_mut());
                cross_entropy(c.logits, *y)
            })
            .collect();
        Ok(losses.into_iter().sum::<T>() / T::of_usize(batch.len()))
    }

    pub fn loss_and_grad(&self, batch: &[EncodedExample]) -> Result<(T, Params<T>)> {
        self.loss_and_grad_impl(batch, None)
    }

    pub fn loss_and_grad_with_dropout(
        &self,
        batch: &[EncodedExample],
        dropout_seed: u64,
    ) -> Result<(T, Params<T>)> {
        self.loss_and_grad_impl(batch, Some(dropout_seed))
    }

    fn loss_and_grad_impl(&self, batch: &[EncodedExample], dropout_seed: Option<u64>) -> Result<(T, Params<T>)> {
        let items = self.labelled(batch)?;
        let inv_b = T::one() / T::of_usize(batch.len());
        let parts: Vec<(T, Params<T>)> = items
            .par_iter()
            .enumerate()
            .map(|(i, (ids, y))| {
                let mut rng = dropout_seed.map(|s| example_rng(s, i));
                let cache = self.forward_ids(ids, rng.as_mut());
                let loss = cross_entropy(cache.logits, *y);
                let p = softmax2(cache.logits);
                let mut dlogits = p;
                dlogits[*y as usize] -= T::one();
                dlogits.iter_mut().for_each(|g| *g *= inv_b);
                let mut grads = Params::zeros(&self.config, self.vocab_size);
                self.backward(&cache, dlogits, &mut grads);
                (loss, grads)
            })
            .collect();
        let mut total = T::zero();
        let mut grads = Params::zeros(&self.config, self.vocab_size);
        for (loss, g) in &parts {
            total += *loss;
            grads.add_assign(g)?;
        }
        Ok((total * inv_b, grads))
    }

    fn labelled<'a>(&self, batch: &'a [EncodedExample]) -> Result<Vec<(&'a [u32], u8)>> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        batch
            .iter()
            .enumerate()
            .map(|(i, ex)| {
                let y = ex.label.ok_or(ModelError::MissingLabel(i))?;
                if y > 1 {
                    return Err(ModelError::BadLabel(y));
                }
                Ok((self.real_ids(ex)?, y))
            })
            .collect()
    }

    fn forward_ids(&self, ids: &[u32], mut rng: Option<&mut ChaCha8Rng>) -> ExampleCache<T> {
        let p = &self.params;
        let cfg = &self.config;
        let l = ids.len();
        let d = cfg.d_model;
        let mut x = Matrix::zeros(l, d);
        for (i, &id) in ids.iter().enumerate() {
            x.row_mut(i).copy_from_slice(p.token_embeddings.row(id as usize));
            if cfg.attention_mode == AttentionMode::Absolute {
                for (a, &b) in x.row_mut(i).iter_mut().zip(p.position_embeddings.row(i)) {
                    *a += b;
                }
            }
        }
        let (mut h, emb_ln) = layer_norm(&x, &p.emb_ln_gamma, &p.emb_ln_beta);
        let drop_emb = self.dropout(&mut h, rng.as_deref_mut());
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for lp in &p.layers {
            let (next, cache) = self.layer_forward(lp, h, rng.as_deref_mut());
            layers.push(cache);
            h = next;
        }
        let cls = h.row(0).to_vec();
        let mut logits = [p.head_b.data[0], p.head_b.data[1]];
        for (k, &c) in cls.iter().enumerate() {
            logits[0] += c * p.head_w.at(k, 0);
            logits[1] += c * p.head_w.at(k, 1);
        }
        ExampleCache {
            ids: ids.to_vec(),
            drop_emb,
            emb_ln,
            layers,
            cls,
            logits,
        }
    }

    fn dropout(&self, x: &mut Matrix<T>, rng: Option<&mut ChaCha8Rng>) -> Option<Vec<T>> {
        let rate = self.config.dropout_rate;
        let rng = rng?;
        if rate <= 0.0 {
            return None;
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..x.data.len())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        for (a, &m) in x.data.iter_mut().zip(&mask) {
            *a *= m;
        }
        Some(mask)
    }

    fn score_scale(&self) -> T {
        let dh = self.config.head_dim() as f64;
        match self.config.attention_mode {
            AttentionMode::Absolute => T::of(1.0 / dh.sqrt()),
            AttentionMode::Disentangled => T::of(1.0 / (3.0 * dh).sqrt()),
        }
    }

    fn rel(&self, i: usize, j: usize) -> usize {
        let w = self.config.relative_window as isize;
        ((i as isize - j as isize).clamp(-w, w) + w) as usize
    }

    fn head_scores(
        &self,
        q: &Matrix<T>,
        k: &Matrix<T>,
        qr: Option<&Matrix<T>>,
        kr: Option<&Matrix<T>>,
        head: usize,
    ) -> Matrix<T> {
        let l = q.rows;
        let dh = self.config.head_dim();
        let cols = head * dh..(head + 1) * dh;
        let scale = self.score_scale();
        let mut s = Matrix::zeros(l, l);
        for i in 0..l {
            let qi = &q.row(i)[cols.clone()];
            for j in 0..l {
                let kj = &k.row(j)[cols.clone()];
                let mut v = dot(qi, kj);
                if let (Some(qr), Some(kr)) = (qr, kr) {
                    v += dot(qi, &kr.row(self.rel(i, j))[cols.clone()]);
                    v += dot(kj, &qr.row(self.rel(j, i))[cols.clone()]);
                }
                *s.at_mut(i, j) = v * scale;
            }
        }
        s
    }

    fn layer_forward(
        &self,
        lp: &LayerParams<T>,
        input: Matrix<T>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Matrix<T>, LayerCache<T>) {
        let cfg = &self.config;
        let l = input.rows;
        let dh = cfg.head_dim();
        let linear = |x: &Matrix<T>, w: &Matrix<T>, b: &Matrix<T>| {
            let mut y = x.matmul(w);
            y.add_row(b);
            y
        };
        let q = linear(&input, &lp.wq, &lp.bq);
        let k = linear(&input, &lp.wk, &lp.bk);
        let v = linear(&input, &lp.wv, &lp.bv);
        let rel_table = &self.params.position_embeddings;
        let qr = lp.wq_pos.as_ref().map(|w| rel_table.matmul(w));
        let kr = lp.wk_pos.as_ref().map(|w| rel_table.matmul(w));

        let mut ctx = Matrix::zeros(l, cfg.d_model);
        let mut probs = Vec::with_capacity(cfg.n_heads);
        for head in 0..cfg.n_heads {
            let mut a = self.head_scores(&q, &k, qr.as_ref(), kr.as_ref(), head);
            for i in 0..l {
                softmax_in_place(a.row_mut(i));
            }
            let off = head * dh;
            for i in 0..l {
                for j in 0..l {
                    let w = a.at(i, j);
                    let vj = &v.row(j)[off..off + dh];
                    for (c, &x) in ctx.row_mut(i)[off..off + dh].iter_mut().zip(vj) {
                        *c += w * x;
                    }
                }
            }
            probs.push(a);
        }

        let mut attn = linear(&ctx, &lp.wo, &lp.bo);
        let drop_attn = self.dropout(&mut attn, rng.as_deref_mut());
        attn.add_assign(&input);
        let (h1, ln1) = layer_norm(&attn, &lp.ln1_gamma, &lp.ln1_beta);

        let pre_act = linear(&h1, &lp.w1, &lp.b1);
        let act = Matrix::from_vec(pre_act.rows, pre_act.cols, pre_act.data.iter().map(|&u| gelu(u)).collect());
        let mut ff = linear(&act, &lp.w2, &lp.b2);
        let drop_ffn = self.dropout(&mut ff, rng);
        ff.add_assign(&h1);
        let (h2, ln2) = layer_norm(&ff, &lp.ln2_gamma, &lp.ln2_beta);

        let cache = LayerCache {
            input,
            q,
            k,
            v,
            qr,
            kr,
            probs,
            ctx,
            drop_attn,
            ln1,
            h1,
            pre_act,
            act,
            drop_ffn,
            ln2,
        };
        (h2, cache)
    }

    fn backward(&self, cache: &ExampleCache<T>, dlogits: [T; 2], grads: &mut Params<T>) {
        let p = &self.params;
        let cfg = &self.config;
        let l = cache.ids.len();
        let d = cfg.d_model;

        for (kk, &c) in cache.cls.iter().enumerate() {
            *grads.head_w.at_mut(kk, 0) += c * dlogits[0];
            *grads.head_w.at_mut(kk, 1) += c * dlogits[1];
        }
        grads.head_b.data[0] += dlogits[0];
        grads.head_b.data[1] += dlogits[1];

        let mut dh = Matrix::zeros(l, d);
        for (kk, g) in dh.row_mut(0).iter_mut().enumerate() {
            *g = p.head_w.at(kk, 0) * dlogits[0] + p.head_w.at(kk, 1) * dlogits[1];
        }

        for (idx, lc) in cache.layers.iter().enumerate().rev() {
            dh = self.layer_backward(idx, lc, dh, grads);
        }

        if let Some(mask) = &cache.drop_emb {
            apply_mask(&mut dh, mask);
        }
        let dx = layer_norm_backward(
            &dh,
            &cache.emb_ln,
            &p.emb_ln_gamma,
            &mut grads.emb_ln_gamma,
            &mut grads.emb_ln_beta,
        );
        for (i, &id) in cache.ids.iter().enumerate() {
            for (g, &x) in grads.token_embeddings.row_mut(id as usize).iter_mut().zip(dx.row(i)) {
                *g += x;
            }
            if cfg.attention_mode == AttentionMode::Absolute {
                for (g, &x) in grads.position_embeddings.row_mut(i).iter_mut().zip(dx.row(i)) {
                    *g += x;
                }
            }
        }
    }

    /// Returns the gradient with respect to the layer input.
    fn layer_backward(&self, idx: usize, lc: &LayerCache<T>, dout: Matrix<T>, grads: &mut Params<T>) -> Matrix<T> {
        let cfg = &self.config;
        let lp = &self.params.layers[idx];
        let rel_table = &self.params.position_embeddings;
        let l = dout.rows;
        let dh_sz = cfg.head_dim();
        let scale = self.score_scale();

        // Residual branch around the feed-forward block.
        let (dpos_table, g) = split_rel_grad(grads, idx);
        let dz2 = layer_norm_backward(&dout, &lc.ln2, &lp.ln2_gamma, &mut g.ln2_gamma, &mut g.ln2_beta);
        let mut dh1 = dz2.clone();
        let mut dff = dz2;
        if let Some(mask) = &lc.drop_ffn {
            apply_mask(&mut dff, mask);
        }
        g.w2.add_assign(&lc.act.t_matmul(&dff));
        g.b2.add_assign(&dff.sum_rows());
        let mut dpre = dff.matmul_t(&lp.w2);
        for (gd, &u) in dpre.data.iter_mut().zip(&lc.pre_act.data) {
            *gd *= gelu_grad(u);
        }
        g.w1.add_assign(&lc.h1.t_matmul(&dpre));
        g.b1.add_assign(&dpre.sum_rows());
        dh1.add_assign(&dpre.matmul_t(&lp.w1));

        // Residual branch around attention.
        let dz1 = layer_norm_backward(&dh1, &lc.ln1, &lp.ln1_gamma, &mut g.ln1_gamma, &mut g.ln1_beta);
        let mut dinput = dz1.clone();
        let mut dattn = dz1;
        if let Some(mask) = &lc.drop_attn {
            apply_mask(&mut dattn, mask);
        }
        g.wo.add_assign(&lc.ctx.t_matmul(&dattn));
        g.bo.add_assign(&dattn.sum_rows());
        let dctx = dattn.matmul_t(&lp.wo);

        let mut dq = Matrix::zeros(l, cfg.d_model);
        let mut dk = Matrix::zeros(l, cfg.d_model);
        let mut dv = Matrix::zeros(l, cfg.d_model);
        let mut dqr = lc.qr.as_ref().map(|m| m.zeros_like());
        let mut dkr = lc.kr.as_ref().map(|m| m.zeros_like());
        for (head, a) in lc.probs.iter().enumerate() {
            let cols = head * dh_sz..(head + 1) * dh_sz;
            let mut ds = Matrix::zeros(l, l);
            for i in 0..l {
                let dci = &dctx.row(i)[cols.clone()];
                for j in 0..l {
                    *ds.at_mut(i, j) = dot(dci, &lc.v.row(j)[cols.clone()]);
                    let w = a.at(i, j);
                    for (gv, &x) in dv.row_mut(j)[cols.clone()].iter_mut().zip(dci) {
                        *gv += w * x;
                    }
                }
                let row_dot = dot(a.row(i), ds.row(i));
                for j in 0..l {
                    let e = ds.at_mut(i, j);
                    *e = a.at(i, j) * (*e - row_dot) * scale;
                }
            }
            for i in 0..l {
                for j in 0..l {
                    let e = ds.at(i, j);
                    if e == T::zero() {
                        continue;
                    }
                    let (qi, kj) = (&lc.q.row(i)[cols.clone()], &lc.k.row(j)[cols.clone()]);
                    for (g, &x) in dq.row_mut(i)[cols.clone()].iter_mut().zip(kj) {
                        *g += e * x;
                    }
                    for (g, &x) in dk.row_mut(j)[cols.clone()].iter_mut().zip(qi) {
                        *g += e * x;
                    }
                    if let (Some(qr), Some(kr), Some(dqr), Some(dkr)) =
                        (lc.qr.as_ref(), lc.kr.as_ref(), dqr.as_mut(), dkr.as_mut())
                    {
                        let (rij, rji) = (self.rel(i, j), self.rel(j, i));
                        for (g, &x) in dq.row_mut(i)[cols.clone()].iter_mut().zip(&kr.row(rij)[cols.clone()]) {
                            *g += e * x;
                        }
                        for (g, &x) in dkr.row_mut(rij)[cols.clone()].iter_mut().zip(qi) {
                            *g += e * x;
                        }
                        for (g, &x) in dk.row_mut(j)[cols.clone()].iter_mut().zip(&qr.row(rji)[cols.clone()]) {
                            *g += e * x;
                        }
                        for (g, &x) in dqr.row_mut(rji)[cols.clone()].iter_mut().zip(kj) {
                            *g += e * x;
                        }
                    }
                }
            }
        }

        for (dproj, w, gw, gb) in [
            (&dq, &lp.wq, &mut g.wq, &mut g.bq),
            (&dk, &lp.wk, &mut g.wk, &mut g.bk),
            (&dv, &lp.wv, &mut g.wv, &mut g.bv),
        ] {
            gw.add_assign(&lc.input.t_matmul(dproj));
            gb.add_assign(&dproj.sum_rows());
            dinput.add_assign(&dproj.matmul_t(w));
        }

        if let (Some(dqr), Some(dkr), Some(wq_pos), Some(wk_pos)) =
            (dqr, dkr, lp.wq_pos.as_ref(), lp.wk_pos.as_ref())
        {
            if let Some(gq) = g.wq_pos.as_mut() {
                gq.add_assign(&rel_table.t_matmul(&dqr));
            }
            if let Some(gk) = g.wk_pos.as_mut() {
                gk.add_assign(&rel_table.t_matmul(&dkr));
            }
            dpos_table.add_assign(&dqr.matmul_t(wq_pos));
            dpos_table.add_assign(&dkr.matmul_t(wk_pos));
        }
        dinput
    }
}

fn split_rel_grad<T>(grads: &mut Params<T>, idx: usize) -> (&mut Matrix<T>, &mut LayerParams<T>) {
    (&mut grads.position_embeddings, &mut grads.layers[idx])
}

fn example_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn apply_mask<T: Scalar>(m: &mut Matrix<T>, mask: &[T]) {
    for (a, &k) in m.data.iter_mut().zip(mask) {
        *a *= k;
    }
}

pub fn softmax2<T: Scalar>(z: [T; 2]) -> [T; 2] {
    let m = z[0].max(z[1]);
    let e0 = (z[0] - m).exp();
    let e1 = (z[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in row.iter_mut() {
        *x /= s;
    }
}

fn cross_entropy<T: Scalar>(z: [T; 2], y: u8) -> T {
    let m = z[0].max(z[1]);
    let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
    lse - z[y as usize]
}

pub fn gelu<T: Scalar>(u: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    half * u * (T::one() + (c * (u + a * u * u * u)).tanh())
}

fn gelu_grad<T: Scalar>(u: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let t = (c * (u + a * u * u * u)).tanh();
    half * (T::one() + t) + half * u * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * u * u)
}

fn layer_norm<T: Scalar>(x: &Matrix<T>, gamma: &Matrix<T>, beta: &Matrix<T>) -> (Matrix<T>, LnCache<T>) {
    let n = T::of_usize(x.cols);
    let eps = T::of(LN_EPS);
    let mut xhat = x.zeros_like();
    let mut y = x.zeros_like();
    let mut inv_std = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let is = T::one() / (var + eps).sqrt();
        inv_std.push(is);
        for c in 0..x.cols {
            let xh = (row[c] - mean) * is;
            *xhat.at_mut(r, c) = xh;
            *y.at_mut(r, c) = gamma.data[c] * xh + beta.data[c];
        }
    }
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_backward<T: Scalar>(
    dy: &Matrix<T>,
    cache: &LnCache<T>,
    gamma: &Matrix<T>,
    dgamma: &mut Matrix<T>,
    dbeta: &mut Matrix<T>,
) -> Matrix<T> {
    let n = T::of_usize(dy.cols);
    let mut dx = dy.zeros_like();
    let mut dxhat = vec![T::zero(); dy.cols];
    for r in 0..dy.rows {
        let xh = cache.xhat.row(r);
        for c in 0..dy.cols {
            let g = dy.at(r, c);
            dgamma.data[c] += g * xh[c];
            dbeta.data[c] += g;
            dxhat[c] = g * gamma.data[c];
        }
        let mean_d = dxhat.iter().copied().sum::<T>() / n;
        let mean_dx = dot(&dxhat, xh) / n;
        let is = cache.inv_std[r];
        for c in 0..dy.cols {
            *dx.at_mut(r, c) = is * (dxhat[c] - mean_d - xh[c] * mean_dx);
        }
    }
    dx
}

/// One attention matrix as CSV: a header of column tokens, then one row per
/// query token.
pub fn write_attention_csv<T: Scalar, W: Write>(
    writer: W,
    matrix: &Matrix<T>,
    tokens: &[String],
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["token".to_string()];
    header.extend(tokens.iter().cloned());
    w.write_record(&header).map_err(std::io::Error::other)?;
    for (i, tok) in tokens.iter().enumerate().take(matrix.rows) {
        let mut rec = vec![tok.clone()];
        rec.extend(matrix.row(i).iter().map(|x| format!("{}", x.as_f64())));
        w.write_record(&rec).map_err(std::io::Error::other)?;
    }
    w.flush()
}
