//! Multinomial model of subactivity lengths with a symmetric Dirichlet prior.

use alloc::vec;
use alloc::vec::Vec;

use libm::{lgamma, log};
use rand::Rng;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LengthModel {
    pub k: usize,
    /// Expected length proportion per subactivity; sums to one.
    pub theta: Vec<f64>,
    /// Symmetric Dirichlet pseudo-count.
    pub alpha: f64,
}

impl LengthModel {
    pub const DEFAULT_ALPHA: f64 = 1.0;

    pub fn new(theta: Vec<f64>, alpha: f64) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::EmptyInput("length proportions"));
        }
        if theta.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(invalid("length proportions must be finite and non-negative"));
        }
        let s: f64 = theta.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(invalid("length proportions must sum to one"));
        }
        if !(alpha >= 0.0) {
            return Err(invalid("Dirichlet pseudo-count must be non-negative"));
        }
        Ok(Self {
            k: theta.len(),
            theta,
            alpha,
        })
    }

    pub fn uniform(k: usize) -> Self {
        Self {
            k,
            theta: vec![1.0 / k as f64; k],
            alpha: Self::DEFAULT_ALPHA,
        }
    }

    /// Proportions restricted to `present` and renormalized.
    pub fn restricted(&self, present: &[usize]) -> Vec<f64> {
        let w: Vec<f64> = present.iter().map(|&k| self.theta[k]).collect();
        let z: f64 = w.iter().sum();
        if z > 0.0 {
            w.into_iter().map(|x| x / z).collect()
        } else {
            vec![1.0 / present.len() as f64; present.len()]
        }
    }

    /// Log-probability of segment lengths for the `present` ids: every
    /// segment has length one plus a multinomial count over the remaining
    /// `sum(lengths) - |present|` frames.
    pub fn log_prob(&self, present: &[usize], lengths: &[usize]) -> f64 {
        debug_assert_eq!(present.len(), lengths.len());
        let p = self.restricted(present);
        let n: usize = lengths.iter().map(|l| l - 1).sum();
        let mut lp = lgamma(n as f64 + 1.0);
        for (&len, &pk) in lengths.iter().zip(&p) {
            let c = len - 1;
            lp -= lgamma(c as f64 + 1.0);
            if c > 0 {
                lp += c as f64 * log(pk);
            }
        }
        lp
    }
}

/// Draws lengths for the `present` ids that sum to `total` and are all >= 1.
pub fn sample_lengths<R: Rng + ?Sized>(
    lm: &LengthModel,
    present: &[usize],
    total: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if present.is_empty() {
        return Err(Error::EmptyInput("present subactivities"));
    }
    if total < present.len() {
        return Err(invalid("fewer frames than present subactivities"));
    }
    let p = lm.restricted(present);
    let mut lengths = vec![1usize; present.len()];
    let mut cdf = Vec::with_capacity(p.len());
    let mut acc = 0.0;
    for x in &p {
        acc += x;
        cdf.push(acc);
    }
    for _ in 0..(total - present.len()) {
        let u = rng.random::<f64>() * acc;
        let j = cdf.iter().position(|&c| u < c).unwrap_or(p.len() - 1);
        lengths[j] += 1;
    }
    Ok(lengths)
}

/// Dirichlet-posterior mean of the proportions given per-subactivity frame
/// counts.
pub fn update_theta(counts: &[usize], alpha: f64) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::EmptyInput("label counts"));
    }
    let k = counts.len() as f64;
    let total: f64 = counts.iter().map(|&c| c as f64).sum::<f64>() + k * alpha;
    if !(total > 0.0) {
        return Err(invalid("all-zero counts with zero pseudo-count"));
    }
    Ok(counts.iter().map(|&c| (c as f64 + alpha) / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn posterior_mean() {
        assert_eq!(update_theta(&[10, 10], 1.0).unwrap(), vec![0.5, 0.5]);
        assert_eq!(update_theta(&[30, 10], 0.0).unwrap(), vec![0.75, 0.25]);
        assert!(update_theta(&[0, 0], 0.0).is_err());
        let t = update_theta(&[3, 0, 17, 1], 0.5).unwrap();
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_present_gets_everything() {
        let lm = LengthModel::uniform(4);
        let mut rng = rng_from_seed(0);
        for t in 1..20 {
            assert_eq!(sample_lengths(&lm, &[2], t, &mut rng).unwrap(), vec![t]);
        }
        assert!(sample_lengths(&lm, &[0, 1], 1, &mut rng).is_err());
    }

    #[test]
    fn binomial_mean() {
        let lm = LengthModel::uniform(2);
        let mut rng = rng_from_seed(11);
        let n = 10_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let l = sample_lengths(&lm, &[0, 1], 100, &mut rng).unwrap();
            assert_eq!(l[0] + l[1], 100);
            sum += l[0] as f64;
        }
        // length = 1 + Binomial(98, 1/2): mean 50, sd 4.95
        let se = (98.0f64 * 0.25).sqrt() / (n as f64).sqrt();
        assert!((sum / n as f64 - 50.0).abs() < 3.0 * se);
    }

    #[test]
    fn single_outcome_has_zero_log_prob() {
        let lm = LengthModel::uniform(1);
        assert_eq!(lm.log_prob(&[0], &[7]), 0.0);
    }
}
