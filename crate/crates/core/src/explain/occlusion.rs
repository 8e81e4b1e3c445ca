use super::{checked, margin, predicted_class, tokens_of, without, Explanation, Method, Result, SIGN_CONVENTION};

/// Single-token removal: `weight_i = score(text) - score(text without i)`.
/// Calls `predict` exactly `d + 1` times.
pub fn occlusion_explain<F>(predict: &F, text: &str) -> Result<Explanation>
where
    F: Fn(&str) -> [f64; 2] + ?Sized,
{
    let toks = tokens_of(text)?;
    let full = checked(predict, text)?;
    let base = margin(full);
    let mut tokens = Vec::with_capacity(toks.len());
    for (i, tok) in toks.iter().enumerate() {
        let p = checked(predict, &without(&toks, |j| j != i))?;
        tokens.push((tok.to_string(), base - margin(p)));
    }
    Ok(Explanation {
        method: Method::Occlusion,
        text: text.to_string(),
        tokens,
        predicted_class: predicted_class(full),
        class_probs: full,
        local_fidelity_r2: None,
        intercept: None,
        n_samples: None,
        seed: None,
        sign_convention: SIGN_CONVENTION.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;

    fn planted(text: &str) -> [f64; 2] {
        let p1 = if text.split_whitespace().any(|t| t == "port_bin_1") { 0.9 } else { 0.1 };
        [1.0 - p1, p1]
    }

    #[test]
    fn planted_token_gets_full_swing() {
        let e = occlusion_explain(&planted, "a_bin_0 port_bin_1 b_bin_2").unwrap();
        let w = e.weights();
        assert!((w[1] - 0.8).abs() < 1e-12);
        assert_eq!(w[0], 0.0);
        assert_eq!(w[2], 0.0);
        assert_eq!(e.predicted_class, 1);
    }

    #[test]
    fn call_count_is_tokens_plus_one() {
        let calls = AtomicUsize::new(0);
        let f = |_: &str| {
            calls.fetch_add(1, Ordering::SeqCst);
            [0.3, 0.7]
        };
        let e = occlusion_explain(&f, "a b c d e").unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 6);
        assert!(e.weights().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn single_token_compares_with_empty_text() {
        let f = |t: &str| if t.is_empty() { [0.6, 0.4] } else { [0.1, 0.9] };
        let e = occlusion_explain(&f, "x_bin_3").unwrap();
        assert!((e.tokens[0].1 - 0.5).abs() < 1e-15);
        assert!(occlusion_explain(&f, "  ").is_err());
    }
}
