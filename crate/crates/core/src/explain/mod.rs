//! Model-agnostic local explanations over whitespace-separated token
//! sentences.
//!
//! Both explainers only need a pure `predict(text) -> (p_benign,
//! p_ransomware)`. Weights are signed so that a positive value pushes the
//! prediction toward Ransomware. Internally both regress on the class margin
//! `(p1 - p0) / 2`, which equals `p1 - 1/2` for normalised probabilities, so
//! swapping the class order negates every weight exactly.

mod lime;
mod occlusion;
mod summary;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lime::{lime_explain, LimeConfig, DEFAULT_KERNEL_WIDTH, DEFAULT_N_SAMPLES, RIDGE_ALPHA};
pub use occlusion::occlusion_explain;
pub use summary::{summarize_importance, ClassImportance, FeatureWeight, ImportanceSummary};

pub const SIGN_CONVENTION: &str = "positive weight pushes the prediction toward Ransomware";

#[derive(Debug, Error, PartialEq)]
pub enum ExplainError {
    #[error("text has no tokens")]
    NoTokens,
    #[error("prediction for {0:?} is not finite")]
    NonFinite(String),
    #[error("prediction for {text:?} sums to {sum}, not 1")]
    NotNormalized { text: String, sum: f64 },
    #[error("{explanations} explanations but {labels} labels")]
    LengthMismatch { explanations: usize, labels: usize },
    #[error("no explanations for class {0}")]
    EmptyClass(u8),
    #[error("label {0} is not a class index")]
    BadLabel(u8),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("surrogate system is not positive definite")]
    Singular,
}

pub type Result<T> = std::result::Result<T, ExplainError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lime,
    Occlusion,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Lime => "lime",
            Method::Occlusion => "occlusion",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub method: Method,
    pub text: String,
    /// One entry per token position, in input order.
    pub tokens: Vec<(String, f64)>,
    pub predicted_class: u8,
    pub class_probs: [f64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_fidelity_r2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intercept: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub sign_convention: String,
}

impl Explanation {
    pub fn weights(&self) -> Vec<f64> {
        self.tokens.iter().map(|(_, w)| *w).collect()
    }

    /// Positions ordered by descending `|weight|`; ties keep input order.
    pub fn ranked(&self) -> Vec<(String, f64)> {
        let mut v = self.tokens.clone();
        v.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
        v
    }

    pub fn top_token(&self) -> Option<(String, f64)> {
        self.ranked().into_iter().next()
    }

    /// `token= +0.1234` entries for the `k` strongest positions.
    pub fn format_top(&self, k: usize) -> String {
        self.ranked()
            .iter()
            .take(k)
            .map(|(t, w)| format!("{t}= {w:+.4}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Signed bar data, strongest first.
    pub fn write_bar_csv<W: Write>(&self, writer: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["rank", "token", "weight_toward_ransomware"])?;
        for (i, (t, weight)) in self.ranked().iter().enumerate() {
            w.write_record([(i + 1).to_string(), t.clone(), weight.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn tokens_of(text: &str) -> Result<Vec<&str>> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    if toks.is_empty() {
        return Err(ExplainError::NoTokens);
    }
    Ok(toks)
}

/// Calls `predict` once and checks the result is a finite distribution.
pub(crate) fn checked<F>(predict: &F, text: &str) -> Result<[f64; 2]>
where
    F: Fn(&str) -> [f64; 2] + ?Sized,
{
    let p = predict(text);
    if !p[0].is_finite() || !p[1].is_finite() {
        return Err(ExplainError::NonFinite(text.to_string()));
    }
    let sum = p[0] + p[1];
    if (sum - 1.0).abs() > 1e-6 || p[0] < 0.0 || p[1] < 0.0 {
        return Err(ExplainError::NotNormalized {
            text: text.to_string(),
            sum,
        });
    }
    Ok(p)
}

pub(crate) fn margin(p: [f64; 2]) -> f64 {
    (p[1] - p[0]) / 2.0
}

pub(crate) fn predicted_class(p: [f64; 2]) -> u8 {
    u8::from(p[1] > p[0])
}

pub(crate) fn without(tokens: &[&str], keep: impl Fn(usize) -> bool) -> String {
    tokens
        .iter()
        .enumerate()
        .filter(|(i, _)| keep(*i))
        .map(|(_, t)| *t)
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Explanation {
        Explanation {
            method: Method::Occlusion,
            text: "a b c".into(),
            tokens: vec![("a".into(), 0.05), ("port_bin_1".into(), 0.1939), ("clusters_bin_0".into(), -0.1444)],
            predicted_class: 1,
            class_probs: [0.2, 0.8],
            local_fidelity_r2: None,
            intercept: None,
            n_samples: None,
            seed: None,
            sign_convention: SIGN_CONVENTION.into(),
        }
    }

    #[test]
    fn top_format() {
        assert_eq!(sample().format_top(2), "port_bin_1= +0.1939 clusters_bin_0= -0.1444");
    }

    #[test]
    fn bar_csv_is_ranked() {
        let mut buf = Vec::new();
        sample().write_bar_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "rank,token,weight_toward_ransomware");
        assert_eq!(lines[1], "1,port_bin_1,0.1939");
        assert_eq!(lines[3], "3,a,0.05");
    }

    #[test]
    fn prediction_checks() {
        assert!(checked(&|_: &str| [f64::NAN, 0.5], "x").is_err());
        assert!(matches!(
            checked(&|_: &str| [0.7, 0.7], "x"),
            Err(ExplainError::NotNormalized { .. })
        ));
        assert_eq!(checked(&|_: &str| [0.25, 0.75], "x").unwrap(), [0.25, 0.75]);
    }
}
