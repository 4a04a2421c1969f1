//! Generalized Mallows model over subactivity orders.
//!
//! An order of `K` items is encoded by its inversion vector `v` of length
//! `K - 1`: `v[i]` counts the items `j > i` that precede item `i`, so
//! `0 <= v[i] <= K - 1 - i`. Each slot is an independent truncated geometric
//! with dispersion `rho[i]`, which makes both sampling and normalization exact.

use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, expm1, log};
use rand::Rng;

use crate::error::{invalid, Error, Result};

/// Upper end of the dispersion search interval.
pub const RHO_MAX: f64 = 50.0;
const RHO_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct MallowsModel {
    pub k: usize,
    /// Dispersion per inversion slot, length `k - 1`.
    pub rho: Vec<f64>,
    /// Pseudo-count of the dispersion prior.
    pub prior_strength: f64,
    /// Prior mean of the per-slot dispersion.
    pub prior_mean: f64,
}

impl MallowsModel {
    pub const DEFAULT_PRIOR_STRENGTH: f64 = 0.1;
    pub const DEFAULT_PRIOR_MEAN: f64 = 1.0;

    pub fn new(k: usize, rho: Vec<f64>, prior_strength: f64, prior_mean: f64) -> Result<Self> {
        if k == 0 {
            return Err(invalid("Mallows model needs K >= 1"));
        }
        if rho.len() != k - 1 {
            return Err(Error::DimensionMismatch {
                what: "Mallows dispersion",
                expected: k - 1,
                found: rho.len(),
            });
        }
        if rho.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(invalid("dispersions must be finite and non-negative"));
        }
        if !(prior_strength > 0.0) || !(prior_mean >= 0.0) {
            return Err(invalid("Mallows prior needs strength > 0 and mean >= 0"));
        }
        Ok(Self {
            k,
            rho,
            prior_strength,
            prior_mean,
        })
    }

    /// All slots share dispersion `rho`; default prior.
    pub fn uniform_rho(k: usize, rho: f64) -> Self {
        Self::new(
            k,
            vec![rho; k.saturating_sub(1)],
            Self::DEFAULT_PRIOR_STRENGTH,
            Self::DEFAULT_PRIOR_MEAN,
        )
        .expect("valid uniform Mallows model")
    }
}

/// Number of values slot `i` (0-based) can take for `k` items.
#[inline]
fn slot_size(k: usize, i: usize) -> usize {
    k - i
}

fn check_inversions(v: &[usize], k: usize) -> Result<()> {
    if v.len() + 1 != k.max(1) {
        return Err(Error::DimensionMismatch {
            what: "inversion vector",
            expected: k.saturating_sub(1),
            found: v.len(),
        });
    }
    for (i, &x) in v.iter().enumerate() {
        if x >= slot_size(k, i) {
            return Err(invalid("inversion vector entry out of bounds"));
        }
    }
    Ok(())
}

/// Decodes an inversion vector into an order of `0..k`.
pub fn inversions_to_order(v: &[usize], k: usize) -> Result<Vec<usize>> {
    check_inversions(v, k)?;
    // Insert items from largest to smallest; every item already placed is
    // larger, so item i goes at position v[i].
    let mut order = Vec::with_capacity(k);
    for i in (0..k).rev() {
        let pos = if i + 1 == k { 0 } else { v[i] };
        order.insert(pos, i);
    }
    Ok(order)
}

/// Encodes an order of `0..k` as its inversion vector.
pub fn order_to_inversions(order: &[usize]) -> Result<Vec<usize>> {
    let k = order.len();
    if k == 0 {
        return Err(Error::EmptyInput("order"));
    }
    let mut seen = vec![false; k];
    for &x in order {
        if x >= k || seen[x] {
            return Err(invalid("order is not a permutation"));
        }
        seen[x] = true;
    }
    let mut v = vec![0usize; k - 1];
    for (pos, &item) in order.iter().enumerate() {
        if item + 1 < k {
            v[item] = order[..pos].iter().filter(|&&j| j > item).count();
        }
    }
    Ok(v)
}

/// Completes a partial order of present subactivities to a full order of
/// `0..k`: absent ids go first in ascending order, so each contributes zero
/// inversions of its own.
pub fn complete_order(present: &[usize], k: usize) -> Vec<usize> {
    let mut is_present = vec![false; k];
    for &p in present {
        is_present[p] = true;
    }
    let mut order: Vec<usize> = (0..k).filter(|&i| !is_present[i]).collect();
    order.extend_from_slice(present);
    order
}

/// Log normalizer of a truncated geometric over `0..n` with dispersion `rho`.
fn log_psi(rho: f64, n: usize) -> f64 {
    if rho == 0.0 {
        return log(n as f64);
    }
    // (1 - e^{-n rho}) / (1 - e^{-rho})
    log(-expm1(-(n as f64) * rho)) - log(-expm1(-rho))
}

/// `log P(v)` under the model.
pub fn mallows_log_prob(v: &[usize], m: &MallowsModel) -> Result<f64> {
    check_inversions(v, m.k)?;
    Ok(v
        .iter()
        .zip(&m.rho)
        .enumerate()
        .map(|(i, (&x, &rho))| -rho * x as f64 - log_psi(rho, slot_size(m.k, i)))
        .sum())
}

/// Draws an inversion vector slot by slot.
pub fn mallows_sample<R: Rng + ?Sized>(m: &MallowsModel, rng: &mut R) -> Vec<usize> {
    m.rho
        .iter()
        .enumerate()
        .map(|(i, &rho)| sample_truncated_geometric(rho, slot_size(m.k, i), rng))
        .collect()
}

/// Samples `x in 0..n` with `P(x) ∝ exp(-rho x)` by inverting the CDF.
pub(crate) fn sample_truncated_geometric<R: Rng + ?Sized>(rho: f64, n: usize, rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>();
    if rho == 0.0 {
        return ((u * n as f64) as usize).min(n - 1);
    }
    // P(X <= x) = (1 - e^{-(x+1) rho}) / (1 - e^{-n rho})
    let total = -expm1(-(n as f64) * rho);
    let target = u * total;
    for x in 0..n {
        if -expm1(-((x + 1) as f64) * rho) >= target {
            return x;
        }
    }
    n - 1
}

/// Mean of the truncated geometric over `0..n` with dispersion `rho`.
pub fn truncated_geometric_mean(rho: f64, n: usize) -> f64 {
    if rho == 0.0 {
        return (n as f64 - 1.0) / 2.0;
    }
    1.0 / expm1(rho) - n as f64 / expm1(n as f64 * rho)
}

/// Posterior point estimate of the dispersions by regularized moment
/// matching, solved per slot by bisection on `[0, RHO_MAX]`.
pub fn estimate_rho(observed: &[Vec<usize>], m: &MallowsModel) -> Result<Vec<f64>> {
    if observed.is_empty() {
        return Err(Error::EmptyInput("inversion observations"));
    }
    for v in observed {
        check_inversions(v, m.k)?;
    }
    let n_obs = observed.len() as f64;
    let nu = m.prior_strength;
    let mut rho = Vec::with_capacity(m.k.saturating_sub(1));
    for i in 0..m.k.saturating_sub(1) {
        let sum: f64 = observed.iter().map(|v| v[i] as f64).sum();
        let target = (sum + nu * m.prior_mean) / (n_obs + nu);
        rho.push(solve_slot_rho(target, slot_size(m.k, i)));
    }
    Ok(rho)
}

fn solve_slot_rho(target: f64, n: usize) -> f64 {
    if target >= truncated_geometric_mean(0.0, n) {
        return 0.0;
    }
    if target <= truncated_geometric_mean(RHO_MAX, n) {
        return RHO_MAX;
    }
    // mean is strictly decreasing in rho
    let (mut lo, mut hi) = (0.0f64, RHO_MAX);
    while hi - lo >= RHO_TOL {
        let mid = 0.5 * (lo + hi);
        if truncated_geometric_mean(mid, n) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Probability of each slot value, for tests and diagnostics.
pub fn slot_distribution(rho: f64, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|x| exp(-rho * x as f64)).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn all_inversion_vectors(k: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new()];
        for i in 0..k.saturating_sub(1) {
            let mut next = Vec::new();
            for v in &out {
                for x in 0..(k - i) {
                    let mut w = v.clone();
                    w.push(x);
                    next.push(w);
                }
            }
            out = next;
        }
        out
    }

    #[test]
    fn decodes_known_orders() {
        assert_eq!(inversions_to_order(&[0, 0], 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(inversions_to_order(&[1, 0], 3).unwrap(), vec![1, 0, 2]);
        assert_eq!(order_to_inversions(&[0, 1, 2]).unwrap(), vec![0, 0]);
        assert_eq!(order_to_inversions(&[2, 1, 0]).unwrap(), vec![2, 1]);
        assert_eq!(inversions_to_order(&[], 1).unwrap(), vec![0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(inversions_to_order(&[3, 0], 3).is_err());
        assert!(inversions_to_order(&[0, 2], 3).is_err());
        assert!(order_to_inversions(&[0, 0, 1]).is_err());
        assert!(order_to_inversions(&[0, 3, 1]).is_err());
    }

    #[test]
    fn exhaustive_round_trip() {
        for k in 1..=5 {
            let vs = all_inversion_vectors(k);
            let mut orders = std::collections::BTreeSet::new();
            for v in &vs {
                let o = inversions_to_order(v, k).unwrap();
                assert_eq!(&order_to_inversions(&o).unwrap(), v);
                orders.insert(o);
            }
            // bijection: every permutation reached exactly once
            assert_eq!(orders.len(), (1..=k).product::<usize>());
        }
    }

    #[test]
    fn uniform_log_prob() {
        let m = MallowsModel::uniform_rho(3, 0.0);
        for v in all_inversion_vectors(3) {
            assert!((mallows_log_prob(&v, &m).unwrap() + log(6.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_evaluated_log_prob() {
        let m = MallowsModel::uniform_rho(3, 1.0);
        let lp = mallows_log_prob(&[0, 0], &m).unwrap();
        assert!((lp + 0.72087).abs() < 1e-5, "{lp}");
    }

    #[test]
    fn normalizes_exhaustively() {
        let mut rng = rng_from_seed(3);
        for k in 1usize..=5 {
            for _ in 0..5 {
                let rho = (0..k.saturating_sub(1)).map(|_| 3.0 * rng.random::<f64>()).collect();
                let m = MallowsModel::new(k, rho, 0.1, 1.0).unwrap();
                let total: f64 = all_inversion_vectors(k)
                    .iter()
                    .map(|v| exp(mallows_log_prob(v, &m).unwrap()))
                    .sum();
                assert!((total - 1.0).abs() < 1e-8, "k={k} total={total}");
            }
        }
    }

    #[test]
    fn truncated_geometric_mean_matches_hand_value() {
        let e1 = exp(-1.0);
        let e2 = exp(-2.0);
        let hand = (e1 + 2.0 * e2) / (1.0 + e1 + e2);
        assert!((hand - 0.424790).abs() < 1e-5);
        assert!((truncated_geometric_mean(1.0, 3) - hand).abs() < 1e-12);
    }

    #[test]
    fn sampler_degenerates_at_large_rho() {
        let m = MallowsModel::uniform_rho(5, 25.0);
        let mut rng = rng_from_seed(1);
        for _ in 0..1000 {
            assert_eq!(mallows_sample(&m, &mut rng), vec![0; 4]);
        }
    }

    #[test]
    fn rho_clamps_at_both_ends() {
        let m = MallowsModel::new(4, vec![1.0; 3], 0.1, 0.0).unwrap();
        let zeros = vec![vec![0, 0, 0]; 10];
        assert_eq!(estimate_rho(&zeros, &m).unwrap(), vec![RHO_MAX; 3]);

        // target equal to the uniform mean of each slot
        let m = MallowsModel::new(3, vec![1.0; 2], 0.1, 1.0).unwrap();
        let obs = vec![vec![0, 1], vec![2, 0], vec![1, 1]];
        let rho = estimate_rho(&obs, &m).unwrap();
        assert_eq!(rho[0], 0.0);
        assert_eq!(rho[1], 0.0);
        assert!(estimate_rho(&[], &m).is_err());
    }
}
