use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tensor::Matrix;
use super::{AttentionMode, ModelConfig, ModelError, Result};
use crate::Scalar;

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub wq: Matrix<T>,
    pub bq: Matrix<T>,
    pub wk: Matrix<T>,
    pub bk: Matrix<T>,
    pub wv: Matrix<T>,
    pub bv: Matrix<T>,
    /// Query/key projections of the relative-position table; disentangled
    /// mode only.
    pub wq_pos: Option<Matrix<T>>,
    pub wk_pos: Option<Matrix<T>>,
    pub wo: Matrix<T>,
    pub bo: Matrix<T>,
    pub ln1_gamma: Matrix<T>,
    pub ln1_beta: Matrix<T>,
    pub w1: Matrix<T>,
    pub b1: Matrix<T>,
    pub w2: Matrix<T>,
    pub b2: Matrix<T>,
    pub ln2_gamma: Matrix<T>,
    pub ln2_beta: Matrix<T>,
}

/// Every trainable tensor of the classifier. Gradients and optimizer moments
/// use the same layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub token_embeddings: Matrix<T>,
    /// `max_len x d_model` absolute table, or `(2 * window + 1) x d_model`
    /// relative table in disentangled mode.
    pub position_embeddings: Matrix<T>,
    pub emb_ln_gamma: Matrix<T>,
    pub emb_ln_beta: Matrix<T>,
    pub layers: Vec<LayerParams<T>>,
    pub head_w: Matrix<T>,
    pub head_b: Matrix<T>,
}

impl<T: Scalar> Params<T> {
    /// Zero-filled parameters with the shapes implied by `config`.
    pub fn zeros(config: &ModelConfig, vocab_size: usize) -> Self {
        let d = config.d_model;
        let f = config.d_ffn;
        let pos_rows = match config.attention_mode {
            AttentionMode::Absolute => config.max_len,
            AttentionMode::Disentangled => 2 * config.relative_window + 1,
        };
        let disentangled = config.attention_mode == AttentionMode::Disentangled;
        let layer = || LayerParams {
            wq: Matrix::zeros(d, d),
            bq: Matrix::zeros(1, d),
            wk: Matrix::zeros(d, d),
            bk: Matrix::zeros(1, d),
            wv: Matrix::zeros(d, d),
            bv: Matrix::zeros(1, d),
            wq_pos: disentangled.then(|| Matrix::zeros(d, d)),
            wk_pos: disentangled.then(|| Matrix::zeros(d, d)),
            wo: Matrix::zeros(d, d),
            bo: Matrix::zeros(1, d),
            ln1_gamma: Matrix::zeros(1, d),
            ln1_beta: Matrix::zeros(1, d),
            w1: Matrix::zeros(d, f),
            b1: Matrix::zeros(1, f),
            w2: Matrix::zeros(f, d),
            b2: Matrix::zeros(1, d),
            ln2_gamma: Matrix::zeros(1, d),
            ln2_beta: Matrix::zeros(1, d),
        };
        Params {
            token_embeddings: Matrix::zeros(vocab_size, d),
            position_embeddings: Matrix::zeros(pos_rows, d),
            emb_ln_gamma: Matrix::zeros(1, d),
            emb_ln_beta: Matrix::zeros(1, d),
            layers: (0..config.n_layers).map(|_| layer()).collect(),
            head_w: Matrix::zeros(d, 2),
            head_b: Matrix::zeros(1, 2),
        }
    }

    /// Weights `N(0, 0.02^2)`, biases 0, layer-norm scale 1 and offset 0,
    /// drawn in [`Params::tensors`] order from a seeded ChaCha8 stream.
    pub fn init(config: &ModelConfig, vocab_size: usize) -> Self {
        let mut p = Self::zeros(config, vocab_size);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for (name, m) in p.tensors_mut() {
            let kind = TensorKind::of(&name);
            for x in &mut m.data {
                *x = match kind {
                    TensorKind::Weight => {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        T::of(z * INIT_STD)
                    }
                    TensorKind::Bias => T::zero(),
                    TensorKind::Scale => T::one(),
                };
            }
        }
        p
    }

    /// Named tensors in checkpoint order.
    pub fn tensors(&self) -> Vec<(String, &Matrix<T>)> {
        let mut out = vec![
            ("token_embeddings".to_string(), &self.token_embeddings),
            ("position_embeddings".to_string(), &self.position_embeddings),
            ("embedding_ln.gamma".to_string(), &self.emb_ln_gamma),
            ("embedding_ln.beta".to_string(), &self.emb_ln_beta),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let name = |s: &str| format!("layers.{i}.{s}");
            out.push((name("attn.wq"), &l.wq));
            out.push((name("attn.bq"), &l.bq));
            out.push((name("attn.wk"), &l.wk));
            out.push((name("attn.bk"), &l.bk));
            out.push((name("attn.wv"), &l.wv));
            out.push((name("attn.bv"), &l.bv));
            if let Some(m) = &l.wq_pos {
                out.push((name("attn.wq_pos"), m));
            }
            if let Some(m) = &l.wk_pos {
                out.push((name("attn.wk_pos"), m));
            }
            out.push((name("attn.wo"), &l.wo));
            out.push((name("attn.bo"), &l.bo));
            out.push((name("ln1.gamma"), &l.ln1_gamma));
            out.push((name("ln1.beta"), &l.ln1_beta));
            out.push((name("ffn.w1"), &l.w1));
            out.push((name("ffn.b1"), &l.b1));
            out.push((name("ffn.w2"), &l.w2));
            out.push((name("ffn.b2"), &l.b2));
            out.push((name("ln2.gamma"), &l.ln2_gamma));
            out.push((name("ln2.beta"), &l.ln2_beta));
        }
        out.push(("head.w".to_string(), &self.head_w));
        out.push(("head.b".to_string(), &self.head_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix<T>)> {
        let mut out = vec![
            ("token_embeddings".to_string(), &mut self.token_embeddings),
            ("position_embeddings".to_string(), &mut self.position_embeddings),
            ("embedding_ln.gamma".to_string(), &mut self.emb_ln_gamma),
            ("embedding_ln.beta".to_string(), &mut self.emb_ln_beta),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let name = |s: &str| format!("layers.{i}.{s}");
            out.push((name("attn.wq"), &mut l.wq));
            out.push((name("attn.bq"), &mut l.bq));
            out.push((name("attn.wk"), &mut l.wk));
            out.push((name("attn.bk"), &mut l.bk));
            out.push((name("attn.wv"), &mut l.wv));
            out.push((name("attn.bv"), &mut l.bv));
            if let Some(m) = &mut l.wq_pos {
                out.push((name("attn.wq_pos"), m));
            }
            if let Some(m) = &mut l.wk_pos {
                out.push((name("attn.wk_pos"), m));
            }
            out.push((name("attn.wo"), &mut l.wo));
            out.push((name("attn.bo"), &mut l.bo));
            out.push((name("ln1.gamma"), &mut l.ln1_gamma));
            out.push((name("ln1.beta"), &mut l.ln1_beta));
            out.push((name("ffn.w1"), &mut l.w1));
            out.push((name("ffn.b1"), &mut l.b1));
            out.push((name("ffn.w2"), &mut l.w2));
            out.push((name("ffn.b2"), &mut l.b2));
            out.push((name("ln2.gamma"), &mut l.ln2_gamma));
            out.push((name("ln2.beta"), &mut l.ln2_beta));
        }
        out.push(("head.w".to_string(), &mut self.head_w));
        out.push(("head.b".to_string(), &mut self.head_b));
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    /// Element-wise `self += other`; shapes must match.
    pub fn add_assign(&mut self, other: &Params<T>) -> Result<()> {
        let theirs = other.tensors();
        let mut mine = self.tensors_mut();
        if mine.len() != theirs.len() {
            return Err(ModelError::ShapeMismatch("tensor count differs".into()));
        }
        for ((name, a), (_, b)) in mine.iter_mut().zip(&theirs) {
            if a.shape() != b.shape() {
                return Err(ModelError::ShapeMismatch(name.clone()));
            }
            a.add_assign(b);
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for (_, m) in self.tensors_mut() {
            m.scale(s);
        }
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Params<U> {
        let conv = |m: &Matrix<T>| Matrix::from_vec(m.rows, m.cols, m.data.iter().map(|&x| f(x)).collect());
        Params {
            token_embeddings: conv(&self.token_embeddings),
            position_embeddings: conv(&self.position_embeddings),
            emb_ln_gamma: conv(&self.emb_ln_gamma),
            emb_ln_beta: conv(&self.emb_ln_beta),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    wq: conv(&l.wq),
                    bq: conv(&l.bq),
                    wk: conv(&l.wk),
                    bk: conv(&l.bk),
                    wv: conv(&l.wv),
                    bv: conv(&l.bv),
                    wq_pos: l.wq_pos.as_ref().map(conv),
                    wk_pos: l.wk_pos.as_ref().map(conv),
                    wo: conv(&l.wo),
                    bo: conv(&l.bo),
                    ln1_gamma: conv(&l.ln1_gamma),
                    ln1_beta: conv(&l.ln1_beta),
                    w1: conv(&l.w1),
                    b1: conv(&l.b1),
                    w2: conv(&l.w2),
                    b2: conv(&l.b2),
                    ln2_gamma: conv(&l.ln2_gamma),
                    ln2_beta: conv(&l.ln2_beta),
                })
                .collect(),
            head_w: conv(&self.head_w),
            head_b: conv(&self.head_b),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum TensorKind {
    Weight,
    Bias,
    Scale,
}

impl TensorKind {
    fn of(name: &str) -> Self {
        if name.ends_with(".gamma") {
            TensorKind::Scale
        } else if name.ends_with(".beta")
            || name.rsplit('.').next().is_some_and(|last| last.starts_with('b'))
        {
            TensorKind::Bias
        } else {
            TensorKind::Weight
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_kinds() {
        assert_eq!(TensorKind::of("layers.0.attn.bq"), TensorKind::Bias);
        assert_eq!(TensorKind::of("layers.0.ffn.b2"), TensorKind::Bias);
        assert_eq!(TensorKind::of("head.b"), TensorKind::Bias);
        assert_eq!(TensorKind::of("embedding_ln.beta"), TensorKind::Bias);
        assert_eq!(TensorKind::of("layers.1.ln2.gamma"), TensorKind::Scale);
        assert_eq!(TensorKind::of("layers.0.attn.wk_pos"), TensorKind::Weight);
        assert_eq!(TensorKind::of("token_embeddings"), TensorKind::Weight);
        assert_eq!(TensorKind::of("head.w"), TensorKind::Weight);
    }
}
