//! Joint likelihood of a segmentation and the sampler that infers
//! segmentations from per-frame appearance probabilities.

use alloc::vec;
use alloc::vec::Vec;

use libm::log;
use rand::Rng;

use crate::error::{Error, Result};
use crate::lengths::LengthModel;
use crate::mallows::{complete_order, mallows_log_prob, order_to_inversions, MallowsModel};
use crate::matrix::Matrix;
use crate::types::Segmentation;

/// Log-probability used in place of `log 0`.
pub const LOG_FLOOR: f64 = -745.0;

/// Probability of attempting a birth/death move in a sweep.
pub const BIRTH_DEATH_PROB: f64 = 0.1;

/// Per-class prefix sums of frame log-probabilities, so the appearance term
/// of any segment costs O(1).
#[derive(Debug, Clone)]
pub struct AppearanceTable {
    frames: usize,
    k: usize,
    cum: Vec<f64>,
    floored: bool,
}

impl AppearanceTable {
    pub fn new(probs: &Matrix) -> Self {
        let (frames, k) = (probs.rows(), probs.cols());
        let mut cum = vec![0.0; (frames + 1) * k];
        let mut floored = false;
        for t in 0..frames {
            for c in 0..k {
                let p = probs.get(t, c);
                let lp = if p > 0.0 { log(p).max(LOG_FLOOR) } else { LOG_FLOOR };
                if lp == LOG_FLOOR {
                    floored = true;
                }
                cum[(t + 1) * k + c] = cum[t * k + c] + lp;
            }
        }
        Self {
            frames,
            k,
            cum,
            floored,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// True when some probability hit the log floor.
    pub fn floored(&self) -> bool {
        self.floored
    }

    /// Sum of `log p[t, class]` over `t in start..end`.
    #[inline]
    pub fn range(&self, class: usize, start: usize, end: usize) -> f64 {
        self.cum[end * self.k + class] - self.cum[start * self.k + class]
    }

    fn score(&self, segments: &[(usize, usize)]) -> f64 {
        let mut t = 0;
        let mut s = 0.0;
        for &(id, len) in segments {
            s += self.range(id, t, t + len);
            t += len;
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointScore {
    pub value: f64,
    /// A zero appearance probability was replaced by the log floor.
    pub floored: bool,
}

fn prior_log_prob(segments: &[(usize, usize)], mm: &MallowsModel, lm: &LengthModel) -> f64 {
    let present: Vec<usize> = segments.iter().map(|s| s.0).collect();
    let lengths: Vec<usize> = segments.iter().map(|s| s.1).collect();
    let full = complete_order(&present, mm.k);
    let inv = order_to_inversions(&full).expect("completed order is a permutation");
    mallows_log_prob(&inv, mm).expect("inversions within bounds") + lm.log_prob(&present, &lengths)
}

fn joint(segments: &[(usize, usize)], table: &AppearanceTable, mm: &MallowsModel, lm: &LengthModel) -> f64 {
    table.score(segments) + prior_log_prob(segments, mm, lm)
}

fn check_models(k: usize, mm: &MallowsModel, lm: &LengthModel) -> Result<()> {
    if mm.k != k {
        return Err(Error::DimensionMismatch {
            what: "Mallows model K",
            expected: k,
            found: mm.k,
        });
    }
    if lm.k != k {
        return Err(Error::DimensionMismatch {
            what: "length model K",
            expected: k,
            found: lm.k,
        });
    }
    Ok(())
}

/// Log joint of a segmentation and the frame appearance probabilities:
/// appearance log-likelihood + order log-prob + length log-prob.
pub fn segmentation_log_joint(
    seg: &Segmentation,
    probs: &Matrix,
    mm: &MallowsModel,
    lm: &LengthModel,
) -> Result<JointScore> {
    if seg.num_frames() != probs.rows() {
        return Err(Error::DimensionMismatch {
            what: "segmentation frames",
            expected: probs.rows(),
            found: seg.num_frames(),
        });
    }
    if probs.cols() != seg.k() {
        return Err(Error::DimensionMismatch {
            what: "probability columns",
            expected: seg.k(),
            found: probs.cols(),
        });
    }
    check_models(seg.k(), mm, lm)?;
    let table = AppearanceTable::new(probs);
    Ok(JointScore {
        value: joint(seg.segments(), &table, mm, lm),
        floored: table.floored(),
    })
}

/// Boundary proposal half-width for `frames` frames.
pub fn boundary_window(frames: usize) -> usize {
    (frames / 50).max(1)
}

struct Sampler<'a, R: Rng + ?Sized> {
    table: &'a AppearanceTable,
    mm: &'a MallowsModel,
    lm: &'a LengthModel,
    rng: &'a mut R,
    segs: Vec<(usize, usize)>,
    score: f64,
}

impl<R: Rng + ?Sized> Sampler<'_, R> {
    /// Metropolis-Hastings test; `log_q_ratio` is log q(rev) - log q(fwd).
    fn consider(&mut self, proposal: Vec<(usize, usize)>, log_q_ratio: f64) {
        let new_score = joint(&proposal, self.table, self.mm, self.lm);
        let log_a = new_score - self.score + log_q_ratio;
        if log_a >= 0.0 || log(self.rng.random::<f64>()) < log_a {
            self.segs = proposal;
            self.score = new_score;
        }
    }

    fn shift_boundaries(&mut self, w: usize) {
        for b in 0..self.segs.len().saturating_sub(1) {
            // delta uniform on {-w..w} \ {0}
            let x = self.rng.random_range(0..2 * w) as isize;
            let delta = if x < w as isize { x - w as isize } else { x - w as isize + 1 };
            let left = self.segs[b].1 as isize + delta;
            let right = self.segs[b + 1].1 as isize - delta;
            if left < 1 || right < 1 {
                continue;
            }
            let mut p = self.segs.clone();
            p[b].1 = left as usize;
            p[b + 1].1 = right as usize;
            self.consider(p, 0.0);
        }
    }

    fn swap_adjacent(&mut self) {
        let m = self.segs.len();
        if m < 2 {
            return;
        }
        let j = self.rng.random_range(0..m - 1);
        let mut p = self.segs.clone();
        if self.rng.random::<bool>() {
            // exchange ids, keep boundaries
            let id = p[j].0;
            p[j].0 = p[j + 1].0;
            p[j + 1].0 = id;
        } else {
            p.swap(j, j + 1);
        }
        self.consider(p, 0.0);
    }

    /// Exchanges the ids of two segments anywhere in the order, so states
    /// with reversed outer segments are not separated by a poor
    /// intermediate state.
    fn transpose_ids(&mut self) {
        let m = self.segs.len();
        if m < 3 {
            return;
        }
        let i = self.rng.random_range(0..m);
        let mut j = self.rng.random_range(0..m - 1);
        if j >= i {
            j += 1;
        }
        let mut p = self.segs.clone();
        let id = p[i].0;
        p[i].0 = p[j].0;
        p[j].0 = id;
        self.consider(p, 0.0);
    }

    fn birth(&mut self) {
        let k = self.mm.k;
        let m = self.segs.len();
        let mut present = vec![false; k];
        for s in &self.segs {
            present[s.0] = true;
        }
        let absent: Vec<usize> = (0..k).filter(|&i| !present[i]).collect();
        if absent.is_empty() {
            return;
        }
        let id = absent[self.rng.random_range(0..absent.len())];
        let gap = self.rng.random_range(0..=m);
        let donor = if gap == 0 {
            0
        } else if gap == m {
            m - 1
        } else if self.rng.random::<bool>() {
            gap - 1
        } else {
            gap
        };
        if self.segs[donor].1 < 2 {
            return;
        }
        let mut p = self.segs.clone();
        p[donor].1 -= 1;
        p.insert(gap, (id, 1));
        let units_after = p.iter().filter(|s| s.1 == 1).count();
        // side choice has the same probability in both directions
        let log_q = -log(units_after as f64) + log(absent.len() as f64) + log((m + 1) as f64);
        self.consider(p, log_q);
    }

    fn death(&mut self) {
        let m = self.segs.len();
        if m < 2 {
            return;
        }
        let units: Vec<usize> = (0..m).filter(|&j| self.segs[j].1 == 1).collect();
        if units.is_empty() {
            return;
        }
        let j = units[self.rng.random_range(0..units.len())];
        let recipient = if j == 0 {
            1
        } else if j == m - 1 {
            m - 2
        } else if self.rng.random::<bool>() {
            j - 1
        } else {
            j + 1
        };
        let mut p = self.segs.clone();
        p[recipient].1 += 1;
        p.remove(j);
        let absent_after = self.mm.k - (m - 1);
        let log_q = log(units.len() as f64) - log(absent_after as f64) - log(m as f64);
        self.consider(p, log_q);
    }

    fn sweep(&mut self, w: usize) {
        self.shift_boundaries(w);
        self.swap_adjacent();
        self.transpose_ids();
        if self.rng.random::<f64>() < BIRTH_DEATH_PROB {
            if self.rng.random::<bool>() {
                self.birth();
            } else {
                self.death();
            }
        }
    }
}

/// Runs `sweeps` Metropolis-within-Gibbs sweeps from `current`. Each sweep
/// proposes a shift of every internal boundary, one adjacent swap in the
/// order, one exchange of two segment ids and, with probability [`BIRTH_DEATH_PROB`], the insertion of an
/// absent subactivity or the removal of a unit-length segment.
pub fn sample_segmentation<R: Rng + ?Sized>(
    probs: &Matrix,
    mm: &MallowsModel,
    lm: &LengthModel,
    current: &Segmentation,
    rng: &mut R,
    sweeps: usize,
) -> Result<Segmentation> {
    let table = AppearanceTable::new(probs);
    sample_with_table(&table, mm, lm, current, rng, sweeps)
}

/// As [`sample_segmentation`], reusing a precomputed table.
pub fn sample_with_table<R: Rng + ?Sized>(
    table: &AppearanceTable,
    mm: &MallowsModel,
    lm: &LengthModel,
    current: &Segmentation,
    rng: &mut R,
    sweeps: usize,
) -> Result<Segmentation> {
    if current.num_frames() != table.frames() {
        return Err(Error::DimensionMismatch {
            what: "segmentation frames",
            expected: table.frames(),
            found: current.num_frames(),
        });
    }
    check_models(current.k(), mm, lm)?;
    if sweeps == 0 {
        return Ok(current.clone());
    }
    let segs = current.segments().to_vec();
    let score = joint(&segs, table, mm, lm);
    let mut s = Sampler {
        table,
        mm,
        lm,
        rng,
        segs,
        score,
    };
    let w = boundary_window(table.frames());
    for _ in 0..sweeps {
        s.sweep(w);
    }
    Ok(Segmentation::from_parts_unchecked(current.k(), s.segs))
}

/// Iterator-style sampler used for long-run frequency checks: calls `visit`
/// with the state after every sweep.
pub fn run_chain<R: Rng + ?Sized, F: FnMut(&[(usize, usize)])>(
    probs: &Matrix,
    mm: &MallowsModel,
    lm: &LengthModel,
    start: &Segmentation,
    rng: &mut R,
    sweeps: usize,
    mut visit: F,
) -> Result<()> {
    let table = AppearanceTable::new(probs);
    check_models(start.k(), mm, lm)?;
    let segs = start.segments().to_vec();
    let score = joint(&segs, &table, mm, lm);
    let mut s = Sampler {
        table: &table,
        mm,
        lm,
        rng,
        segs,
        score,
    };
    let w = boundary_window(table.frames());
    for _ in 0..sweeps {
        s.sweep(w);
        visit(&s.segs);
    }
    Ok(())
}
