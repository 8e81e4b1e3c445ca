use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ExplainError, Explanation, Result};
use crate::CLASS_NAMES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeight {
    pub token: String,
    pub mean_weight: f64,
    /// Number of positions, across the class, that carried this token.
    pub occurrences: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassImportance {
    pub class: u8,
    pub class_name: String,
    pub n_explanations: usize,
    /// Mean over explanations of the mean absolute position weight.
    pub avg_abs_importance: f64,
    /// Sorted by `|mean_weight|` descending, ties by token.
    pub top_features: Vec<FeatureWeight>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceSummary {
    pub classes: Vec<ClassImportance>,
}

impl ImportanceSummary {
    pub fn class(&self, c: u8) -> Option<&ClassImportance> {
        self.classes.iter().find(|x| x.class == c)
    }
}

/// Per-class aggregation. A token contributes only where it actually
/// occurs; absent tokens are not counted as zero.
pub fn summarize_importance(explanations: &[Explanation], labels: &[u8]) -> Result<ImportanceSummary> {
    if explanations.len() != labels.len() {
        return Err(ExplainError::LengthMismatch {
            explanations: explanations.len(),
            labels: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(ExplainError::BadLabel(bad));
    }
    let mut classes = Vec::with_capacity(2);
    for class in 0..2u8 {
        let members: Vec<&Explanation> = explanations
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == class)
            .map(|(e, _)| e)
            .collect();
        if members.is_empty() {
            return Err(ExplainError::EmptyClass(class));
        }
        let mut per_token: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
        let mut abs_total = 0.0;
        for e in &members {
            if !e.tokens.is_empty() {
                abs_total += e.tokens.iter().map(|(_, w)| w.abs()).sum::<f64>() / e.tokens.len() as f64;
            }
            for (t, w) in &e.tokens {
                let entry = per_token.entry(t.as_str()).or_insert((0.0, 0));
                entry.0 += w;
                entry.1 += 1;
            }
        }
        let mut top_features: Vec<FeatureWeight> = per_token
            .into_iter()
            .map(|(token, (sum, n))| FeatureWeight {
                token: token.to_string(),
                mean_weight: sum / n as f64,
                occurrences: n,
            })
            .collect();
        top_features.sort_by(|a, b| {
            b.mean_weight
                .abs()
                .total_cmp(&a.mean_weight.abs())
                .then_with(|| a.token.cmp(&b.token))
        });
        classes.push(ClassImportance {
            class,
            class_name: CLASS_NAMES[class as usize].to_string(),
            n_explanations: members.len(),
            avg_abs_importance: abs_total / members.len() as f64,
            top_features,
        });
    }
    Ok(ImportanceSummary { classes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::{Method, SIGN_CONVENTION};

    fn expl(tokens: &[(&str, f64)]) -> Explanation {
        Explanation {
            method: Method::Occlusion,
            text: tokens.iter().map(|(t, _)| *t).collect::<Vec<_>>().join(" "),
            tokens: tokens.iter().map(|(t, w)| (t.to_string(), *w)).collect(),
            predicted_class: 0,
            class_probs: [0.5, 0.5],
            local_fidelity_r2: None,
            intercept: None,
            n_samples: None,
            seed: None,
            sign_convention: SIGN_CONVENTION.into(),
        }
    }

    #[test]
    fn mean_of_two() {
        let es = vec![expl(&[("a", 0.2)]), expl(&[("a", 0.4)]), expl(&[("z", -1.0)])];
        let s = summarize_importance(&es, &[1, 1, 0]).unwrap();
        let c1 = s.class(1).unwrap();
        assert!((c1.top_features[0].mean_weight - 0.3).abs() < 1e-15);
        assert!((c1.avg_abs_importance - 0.3).abs() < 1e-15);
        assert_eq!(s.class(0).unwrap().class_name, "Benign");
    }

    #[test]
    fn absent_tokens_are_not_zero_filled() {
        let es = vec![
            expl(&[("a", 0.6), ("b", -0.1)]),
            expl(&[("b", -0.3)]),
            expl(&[("c", 0.05)]),
        ];
        let s = summarize_importance(&es, &[1, 1, 0]).unwrap();
        let c1 = s.class(1).unwrap();
        // Brute force: average only over the explanations containing the token.
        assert_eq!(c1.top_features[0].token, "a");
        assert!((c1.top_features[0].mean_weight - 0.6).abs() < 1e-15);
        assert!((c1.top_features[1].mean_weight + 0.2).abs() < 1e-15);
        assert_eq!(c1.top_features[1].occurrences, 2);
    }

    #[test]
    fn ties_break_by_name_and_errors() {
        let es = vec![expl(&[("b", 0.5), ("a", -0.5)]), expl(&[("q", 0.1)])];
        let s = summarize_importance(&es, &[1, 0]).unwrap();
        let names: Vec<&str> = s.class(1).unwrap().top_features.iter().map(|f| f.token.as_str()).collect();
        assert_eq!(names, ["a", "b"]);
        assert_eq!(summarize_importance(&es, &[1, 1]).unwrap_err(), ExplainError::EmptyClass(0));
        assert!(summarize_importance(&es, &[1]).is_err());
    }
}
