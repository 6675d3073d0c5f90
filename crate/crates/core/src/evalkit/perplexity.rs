use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum PerplexityError {
    #[error("empty token sequence")]
    EmptySequence,
    #[error("token log-probability {0} is positive")]
    PositiveLogProb(f64),
}

fn check(logprobs: &[f64]) -> Result<(), PerplexityError> {
    if logprobs.is_empty() {
        return Err(PerplexityError::EmptySequence);
    }
    match logprobs.iter().find(|lp| **lp > 0.0 || lp.is_nan()) {
        Some(lp) => Err(PerplexityError::PositiveLogProb(*lp)),
        None => Ok(()),
    }
}

/// exp of the mean negative natural-log probability per token.
pub fn perplexity(logprobs: &[f64]) -> Result<f64, PerplexityError> {
    check(logprobs)?;
    Ok((-logprobs.iter().sum::<f64>() / logprobs.len() as f64).exp())
}

/// Token-weighted perplexity over all sequences pooled together.
pub fn corpus_perplexity(sequences: &[Vec<f64>]) -> Result<f64, PerplexityError> {
    if sequences.is_empty() {
        return Err(PerplexityError::EmptySequence);
    }
    sequences.iter().try_for_each(|s| check(s))?;
    let tokens: usize = sequences.iter().map(Vec::len).sum();
    let total: f64 = sequences.iter().flatten().sum();
    Ok((-total / tokens as f64).exp())
}

fn mean_sequence_perplexity(sequences: &[Vec<f64>]) -> Result<f64, PerplexityError> {
    if sequences.is_empty() {
        return Err(PerplexityError::EmptySequence);
    }
    let sum = sequences.iter().map(|s| perplexity(s)).sum::<Result<f64, _>>()?;
    Ok(sum / sequences.len() as f64)
}

/// Relative perplexity reduction of `model_b` against `model_a`,
/// `(ppl_a - ppl_b) / ppl_a`, where each side is the mean of its
/// per-sequence perplexities. Positive means `model_b` is less surprised.
pub fn compare_perplexity(model_a: &[Vec<f64>], model_b: &[Vec<f64>]) -> Result<f64, PerplexityError> {
    let a = mean_sequence_perplexity(model_a)?;
    let b = mean_sequence_perplexity(model_b)?;
    Ok((a - b) / a)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;

    #[test]
    fn uniform_over_four() {
        let lp = (0.25f64).ln();
        assert_abs_diff_eq!(perplexity(&[lp; 7]).unwrap(), 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(corpus_perplexity(&[vec![lp; 3], vec![lp]]).unwrap(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn errors() {
        assert_eq!(perplexity(&[]), Err(PerplexityError::EmptySequence));
        assert_eq!(perplexity(&[-0.1, 0.2]), Err(PerplexityError::PositiveLogProb(0.2)));
        assert_eq!(compare_perplexity(&[], &[vec![-1.0]]), Err(PerplexityError::EmptySequence));
        assert_eq!(perplexity(&[0.0]), Ok(1.0));
    }

    #[test]
    fn identical_corpora_compare_to_zero() {
        let c = vec![vec![-0.5, -1.5], vec![-2.0]];
        assert_eq!(compare_perplexity(&c, &c).unwrap(), 0.0);
    }

    #[test]
    fn certain_model_against_uniform_four() {
        let uniform = vec![vec![(0.25f64).ln(); 5], vec![(0.25f64).ln(); 2]];
        let certain = vec![vec![0.0; 3]];
        assert_abs_diff_eq!(compare_perplexity(&uniform, &certain).unwrap(), 0.75, epsilon = 1e-12);
    }

    #[test]
    fn geometric_mean_oracle() {
        let lps = [0.5f64.ln(), 0.25f64.ln(), 0.125f64.ln()];
        assert_abs_diff_eq!(perplexity(&lps).unwrap(), 4.0, epsilon = 1e-12);
    }
}
