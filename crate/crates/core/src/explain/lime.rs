use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    checked, margin, predicted_class, tokens_of, without, ExplainError, Explanation, Method, Result, SIGN_CONVENTION,
};

pub const DEFAULT_N_SAMPLES: usize = 1000;
pub const DEFAULT_KERNEL_WIDTH: f64 = 25.0;
pub const RIDGE_ALPHA: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimeConfig {
    pub n_samples: usize,
    pub kernel_width: f64,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        Self {
            n_samples: DEFAULT_N_SAMPLES,
            kernel_width: DEFAULT_KERNEL_WIDTH,
            seed: 0,
        }
    }
}

/// Binary keep-mask for perturbation `index`. Sample 0 is the unmodified
/// instance; the others remove `k ~ U{1..d}` distinct positions.
fn perturbation(seed: u64, index: usize, d: usize) -> Vec<bool> {
    let mut mask = vec![true; d];
    if index == 0 {
        return mask;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let k = rng.random_range(1..=d);
    for i in sample(&mut rng, d, k) {
        mask[i] = false;
    }
    mask
}

/// Weighted ridge fit of the class margin on token keep-masks.
pub fn lime_explain<F>(predict: &F, text: &str, config: LimeConfig) -> Result<Explanation>
where
    F: Fn(&str) -> [f64; 2] + Sync + ?Sized,
{
    if config.n_samples < 2 {
        return Err(ExplainError::InvalidParam("LIME needs at least 2 samples".into()));
    }
    if !(config.kernel_width > 0.0 && config.kernel_width.is_finite()) {
        return Err(ExplainError::InvalidParam(format!("kernel width {}", config.kernel_width)));
    }
    let toks = tokens_of(text)?;
    let d = toks.len();
    let rows: Vec<(Vec<bool>, [f64; 2])> = (0..config.n_samples)
        .into_par_iter()
        .map(|s| {
            let mask = perturbation(config.seed, s, d);
            let p = checked(predict, &without(&toks, |j| mask[j]))?;
            Ok((mask, p))
        })
        .collect::<Result<_>>()?;

    let kw2 = config.kernel_width * config.kernel_width;
    let x: Vec<Vec<f64>> = rows
        .iter()
        .map(|(m, _)| m.iter().map(|&b| f64::from(u8::from(b))).collect())
        .collect();
    let y: Vec<f64> = rows.iter().map(|(_, p)| margin(*p)).collect();
    let w: Vec<f64> = rows
        .iter()
        .map(|(m, _)| {
            let kept = m.iter().filter(|&&b| b).count() as f64;
            let dist = 100.0 * (1.0 - kept / d as f64);
            (-dist * dist / kw2).exp()
        })
        .collect();

    let fit = weighted_ridge(&x, &y, &w, RIDGE_ALPHA)?;
    let full = rows[0].1;
    Ok(Explanation {
        method: Method::Lime,
        text: text.to_string(),
        tokens: toks.iter().map(|t| t.to_string()).zip(fit.coef).collect(),
        predicted_class: predicted_class(full),
        class_probs: full,
        local_fidelity_r2: fit.r2,
        intercept: Some(fit.intercept + 0.5),
        n_samples: Some(config.n_samples),
        seed: Some(config.seed),
        sign_convention: SIGN_CONVENTION.to_string(),
    })
}

pub(crate) struct RidgeFit {
    pub coef: Vec<f64>,
    pub intercept: f64,
    /// `None` when the weighted target variance is zero.
    pub r2: Option<f64>,
}

/// Minimises `sum w (y - b - x.beta)^2 + alpha |beta|^2` with the intercept
/// `b` unpenalised, via weighted centring and a Cholesky solve.
pub(crate) fn weighted_ridge(x: &[Vec<f64>], y: &[f64], w: &[f64], alpha: f64) -> Result<RidgeFit> {
    let d = x.first().map_or(0, Vec::len);
    let sw: f64 = w.iter().sum();
    if sw <= 0.0 {
        return Err(ExplainError::Singular);
    }
    let mut xbar = vec![0.0; d];
    let mut ybar = 0.0;
    for ((row, &yi), &wi) in x.iter().zip(y).zip(w) {
        for (m, &v) in xbar.iter_mut().zip(row) {
            *m += wi * v;
        }
        ybar += wi * yi;
    }
    xbar.iter_mut().for_each(|m| *m /= sw);
    ybar /= sw;

    let mut a = vec![vec![0.0; d]; d];
    let mut rhs = vec![0.0; d];
    let mut xc = vec![0.0; d];
    for ((row, &yi), &wi) in x.iter().zip(y).zip(w) {
        for k in 0..d {
            xc[k] = row[k] - xbar[k];
        }
        let yc = yi - ybar;
        for i in 0..d {
            rhs[i] += wi * xc[i] * yc;
            for j in 0..=i {
                a[i][j] += wi * xc[i] * xc[j];
            }
        }
    }
    for i in 0..d {
        a[i][i] += alpha;
        for j in 0..i {
            a[j][i] = a[i][j];
        }
    }
    let coef = cholesky_solve(a, rhs)?;
    let intercept = ybar - coef.iter().zip(&xbar).map(|(b, m)| b * m).sum::<f64>();

    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for ((row, &yi), &wi) in x.iter().zip(y).zip(w) {
        let pred = intercept + coef.iter().zip(row).map(|(b, v)| b * v).sum::<f64>();
        ss_res += wi * (yi - pred) * (yi - pred);
        ss_tot += wi * (yi - ybar) * (yi - ybar);
    }
    // Rounding in the weighted mean leaves a residue even for a constant
    // target; treat anything at that level as zero variance.
    let floor = (1e-12 * ybar.abs().max(1e-3)).powi(2) * sw;
    let r2 = (ss_tot > floor).then(|| 1.0 - ss_res / ss_tot);
    Ok(RidgeFit { coef, intercept, r2 })
}

fn cholesky_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for j in 0..n {
        let mut diag = a[j][j];
        for k in 0..j {
            diag -= a[j][k] * a[j][k];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(ExplainError::Singular);
        }
        let l = diag.sqrt();
        a[j][j] = l;
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            a[i][j] = s / l;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i][k] * b[k];
        }
        b[i] = s / a[i][i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k][i] * b[k];
        }
        b[i] = s / a[i][i];
    }
    Ok(b)
}
