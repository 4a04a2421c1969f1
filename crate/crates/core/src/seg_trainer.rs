//! Alternating training of the appearance model and the generative temporal
//! model, the TC model-selection measure and checkpoint selection.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::appearance::{
    self, forward, predict_labels, staged_mask, tc_pretrain, AppearanceParams, CoherenceConfig,
    LabeledVideo, OptimizerKind, TrainConfig,
};
use crate::error::{invalid, Error, Result};
use crate::lengths::{update_theta, LengthModel};
use crate::mallows::{
    complete_order, estimate_rho, inversions_to_order, mallows_sample, order_to_inversions,
    MallowsModel,
};
use crate::rng::{derive_rng, derive_seed, rng_from_seed};
use crate::temporal::sample_segmentation;
use crate::types::{Corpus, LabelSequence, Segmentation, Split, VideoSequence};

/// Present labels up to which [`best_coherent_match`] enumerates every order.
pub const EXACT_MATCH_LIMIT: usize = 8;
const LOCAL_SEARCH_RESTARTS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct SegTrainConfig {
    pub k: usize,
    pub iterations: usize,
    pub epochs_per_iteration: usize,
    /// Inclusive range of iterations eligible for selection.
    pub selection_window: (usize, usize),
    pub sweeps_per_iteration: usize,
    pub appearance: TrainConfig,
    /// Embedding widths of the appearance model.
    pub hidden: Vec<usize>,
    pub context_lambda: f64,
    pub coherence: CoherenceConfig,
    pub mallows_prior_strength: f64,
    pub mallows_prior_mean: f64,
    pub length_alpha: f64,
    pub seed: u64,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        Self {
            k: 10,
            iterations: 8,
            epochs_per_iteration: 5,
            selection_window: (6, 8),
            sweeps_per_iteration: 200,
            appearance: TrainConfig {
                learning_rate: 1e-2,
                epochs: 5,
                batch_size: 384,
                l2_weight: 1e-4,
                optimizer: OptimizerKind::Adam,
                seed: 0,
            },
            hidden: vec![16, 16],
            context_lambda: 0.9,
            coherence: CoherenceConfig::default(),
            mallows_prior_strength: MallowsModel::DEFAULT_PRIOR_STRENGTH,
            mallows_prior_mean: MallowsModel::DEFAULT_PRIOR_MEAN,
            length_alpha: LengthModel::DEFAULT_ALPHA,
            seed: 0,
        }
    }
}

impl SegTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("K must be at least 1"));
        }
        let (a, b) = self.selection_window;
        if self.iterations > 0 && (a < 1 || a > b || b > self.iterations) {
            return Err(invalid("selection window must lie within [1, iterations]"));
        }
        if self.hidden.is_empty() {
            return Err(invalid("appearance model needs at least one embedding layer"));
        }
        self.appearance.validate()
    }
}

/// Model state emitted after each alternation.
#[derive(Debug, Clone, PartialEq)]
pub struct SegCheckpoint {
    pub iteration: usize,
    pub appearance: AppearanceParams,
    pub mallows: MallowsModel,
    pub lengths: LengthModel,
    /// Current segmentation of every training video, as frame labels.
    pub labels: BTreeMap<String, LabelSequence>,
    pub tc_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationReport {
    pub iteration: usize,
    /// Mean training cross-entropy of the last appearance epoch.
    pub cross_entropy: f64,
    pub tc_score: f64,
}

/// Result of [`run`]. On a numerical failure `error` is set and
/// `checkpoints` holds the iterations completed before it.
#[derive(Debug, Clone)]
pub struct SegRun {
    pub checkpoints: Vec<SegCheckpoint>,
    pub reports: Vec<IterationReport>,
    pub error: Option<Error>,
}

/// Lengths of `k` near-equal contiguous segments; the first `t mod k` are
/// one frame longer.
pub fn uniform_lengths(t: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || t < k {
        return Err(invalid("need at least K frames for K uniform segments"));
    }
    let (q, r) = (t / k, t % k);
    Ok((0..k).map(|i| q + usize::from(i < r)).collect())
}

/// `K` contiguous segments `0..K` in order with near-equal lengths.
pub fn uniform_labels(video: &VideoSequence, k: usize) -> Result<LabelSequence> {
    let lengths = uniform_lengths(video.len(), k).map_err(|_| Error::TooShort {
        id: video.id.clone(),
        frames: video.len(),
        needed: k,
    })?;
    let seg = Segmentation::from_parts_unchecked(k, lengths.into_iter().enumerate().collect());
    Ok(seg.to_labels())
}

/// Initial segmentations: uniform lengths, order drawn from `prior`.
pub fn init_segmentations<R: Rng + ?Sized>(
    videos: &[&VideoSequence],
    k: usize,
    prior: &MallowsModel,
    rng: &mut R,
) -> Result<Vec<Segmentation>> {
    if prior.k != k {
        return Err(Error::DimensionMismatch {
            what: "prior K",
            expected: k,
            found: prior.k,
        });
    }
    videos
        .iter()
        .map(|v| {
            let lengths = uniform_lengths(v.len(), k).map_err(|_| Error::TooShort {
                id: v.id.clone(),
                frames: v.len(),
                needed: k,
            })?;
            let order = inversions_to_order(&mallows_sample(prior, rng), k)?;
            Ok(Segmentation::from_parts_unchecked(
                k,
                order.into_iter().zip(lengths).collect(),
            ))
        })
        .collect()
}

/// Segmentation whose runs are `labels`; fails if a label recurs after a
/// different one.
pub fn labels_to_segmentation(labels: &[usize], k: usize) -> Result<Segmentation> {
    Segmentation::new(k, crate::types::labels_to_runs(labels))
}

/// Best contiguous-block arrangement of a label sequence's own label counts.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherentMatch {
    /// Present labels in block order.
    pub order: Vec<usize>,
    /// Number of frames whose label agrees with the arrangement.
    pub matches: usize,
    pub accuracy: f64,
    /// False when the order came from local search.
    pub exact: bool,
}

struct BlockScorer {
    present: Vec<usize>,
    counts: Vec<usize>,
    /// `prefix[j][t]`: occurrences of `present[j]` in `pred[..t]`.
    prefix: Vec<Vec<usize>>,
}

impl BlockScorer {
    fn new(pred: &[usize], k: usize) -> Self {
        let mut counts_all = vec![0usize; k.max(pred.iter().map(|&l| l + 1).max().unwrap_or(0))];
        for &l in pred {
            counts_all[l] += 1;
        }
        let present: Vec<usize> = (0..counts_all.len()).filter(|&l| counts_all[l] > 0).collect();
        let counts = present.iter().map(|&l| counts_all[l]).collect();
        let prefix = present
            .iter()
            .map(|&l| {
                let mut p = Vec::with_capacity(pred.len() + 1);
                let mut acc = 0;
                p.push(0);
                for &x in pred {
                    acc += usize::from(x == l);
                    p.push(acc);
                }
                p
            })
            .collect();
        Self {
            present,
            counts,
            prefix,
        }
    }

    /// Agreement of the block arrangement given by present-indices `perm`.
    fn matches(&self, perm: &[usize]) -> usize {
        let mut start = 0;
        let mut m = 0;
        for &j in perm {
            let end = start + self.counts[j];
            m += self.prefix[j][end] - self.prefix[j][start];
            start = end;
        }
        m
    }
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Framewise accuracy of `pred` against the best coherent segmentation with
/// the same per-label lengths. Exhaustive for up to [`EXACT_MATCH_LIMIT`]
/// present labels; ties go to the lexicographically smallest order.
pub fn best_coherent_match(pred: &[usize], k: usize) -> CoherentMatch {
    if pred.is_empty() {
        return CoherentMatch {
            order: Vec::new(),
            matches: 0,
            accuracy: 1.0,
            exact: true,
        };
    }
    let scorer = BlockScorer::new(pred, k);
    let m = scorer.present.len();
    let (best_perm, best, exact) = if m <= EXACT_MATCH_LIMIT {
        let mut perm: Vec<usize> = (0..m).collect();
        let mut best_perm = perm.clone();
        let mut best = scorer.matches(&perm);
        while next_permutation(&mut perm) {
            let s = scorer.matches(&perm);
            if s > best {
                best = s;
                best_perm.copy_from_slice(&perm);
            }
        }
        (best_perm, best, true)
    } else {
        let (p, s) = local_search(&scorer, pred.len());
        (p, s, false)
    };
    CoherentMatch {
        order: best_perm.iter().map(|&j| scorer.present[j]).collect(),
        matches: best,
        accuracy: best as f64 / pred.len() as f64,
        exact,
    }
}

fn local_search(scorer: &BlockScorer, frames: usize) -> (Vec<usize>, usize) {
    let m = scorer.present.len();
    let prior = MallowsModel::uniform_rho(m, MallowsModel::DEFAULT_PRIOR_MEAN);
    let mut rng = rng_from_seed(derive_seed(0, "coherent-match", frames as u64));
    let mut best: Option<(Vec<usize>, usize)> = None;
    for _ in 0..LOCAL_SEARCH_RESTARTS {
        let mut perm = inversions_to_order(&mallows_sample(&prior, &mut rng), m).expect("valid sample");
        let mut score = scorer.matches(&perm);
        loop {
            let mut improved = false;
            for i in 0..m {
                for j in i + 1..m {
                    perm.swap(i, j);
                    let s = scorer.matches(&perm);
                    if s > score {
                        score = s;
                        improved = true;
                    } else {
                        perm.swap(i, j);
                    }
                }
            }
            if !improved {
                break;
            }
        }
        let better = match &best {
            None => true,
            Some((bp, bs)) => score > *bs || (score == *bs && perm < *bp),
        };
        if better {
            best = Some((perm, score));
        }
    }
    best.expect("at least one restart")
}

/// Mean coherent-match accuracy of the model's arg-max predictions.
pub fn tc_measure(params: &AppearanceParams, videos: &[&VideoSequence]) -> Result<f64> {
    if videos.is_empty() {
        return Err(Error::EmptyInput("videos for TC measure"));
    }
    let mut sum = 0.0;
    for v in videos {
        let pred = predict_labels(params, v)?;
        sum += best_coherent_match(&pred, params.k()).accuracy;
    }
    Ok(sum / videos.len() as f64)
}

/// Checkpoint with the highest TC score among iterations `window.0..=window.1`;
/// ties go to the latest iteration.
pub fn select_checkpoint(checkpoints: &[SegCheckpoint], window: (usize, usize)) -> Result<&SegCheckpoint> {
    let mut best: Option<&SegCheckpoint> = None;
    for c in checkpoints
        .iter()
        .filter(|c| (window.0..=window.1).contains(&c.iteration))
    {
        match best {
            Some(b) if c.tc_score < b.tc_score => {}
            Some(b) if c.tc_score == b.tc_score && c.iteration < b.iteration => {}
            _ => best = Some(c),
        }
    }
    best.ok_or(Error::EmptyWindow)
}

fn label_counts(segs: &[Segmentation], k: usize) -> Vec<usize> {
    let mut counts = vec![0usize; k];
    for s in segs {
        for &(id, len) in s.segments() {
            counts[id] += len;
        }
    }
    counts
}

/// Alternates appearance training and segmentation sampling on the training
/// split. `observe` is called once per finished iteration.
pub fn run<F: FnMut(&IterationReport)>(
    corpus: &Corpus,
    config: &SegTrainConfig,
    mut observe: F,
) -> Result<SegRun> {
    config.validate()?;
    let train = corpus.videos_in(Split::Train);
    let mut out = SegRun {
        checkpoints: Vec::new(),
        reports: Vec::new(),
        error: None,
    };
    if config.iterations == 0 {
        return Ok(out);
    }
    if train.is_empty() {
        return Err(Error::EmptyInput("training split"));
    }
    let k = config.k;
    let dim = corpus.dim().expect("non-empty corpus");

    let mut mallows = MallowsModel::new(
        k,
        vec![config.mallows_prior_mean; k - 1],
        config.mallows_prior_strength,
        config.mallows_prior_mean,
    )?;
    let mut lengths = LengthModel::uniform(k);
    lengths.alpha = config.length_alpha;

    let mut rng = derive_rng(config.seed, "init-labels", 0);
    let mut segs = init_segmentations(&train, k, &mallows, &mut rng)?;

    let mut rng = derive_rng(config.seed, "weights", 0);
    let mut params = AppearanceParams::random(dim, &config.hidden, k, config.context_lambda, &mut rng)?;
    let coherence = CoherenceConfig {
        seed: derive_seed(config.seed, "coherence", 0),
        ..config.coherence.clone()
    };
    if coherence.epochs > 0 {
        params = match tc_pretrain(&train, &params, &coherence) {
            Ok(p) => p,
            Err(e) if e.is_numerical() => {
                out.error = Some(e);
                return Ok(out);
            }
            Err(e) => return Err(e),
        };
    }

    let n_layers = params.num_layers();
    for iteration in 1..=config.iterations {
        params.trainable = staged_mask(iteration, n_layers);
        let labels: Vec<LabelSequence> = segs.iter().map(Segmentation::to_labels).collect();
        let data: Vec<LabeledVideo<'_>> = train
            .iter()
            .zip(&labels)
            .map(|(v, l)| LabeledVideo {
                video: v,
                labels: l.as_slice(),
            })
            .collect();
        let app_cfg = TrainConfig {
            epochs: config.epochs_per_iteration,
            seed: derive_seed(config.seed, "appearance", iteration as u64),
            ..config.appearance.clone()
        };
        let (trained, stats) = match appearance::train_appearance(&data, &params, &app_cfg) {
            Ok(r) => r,
            Err(e) if e.is_numerical() => {
                out.error = Some(e);
                return Ok(out);
            }
            Err(e) => return Err(e),
        };
        params = trained;

        let probs = train
            .iter()
            .map(|v| forward(&params, v))
            .collect::<Result<Vec<_>>>()?;

        lengths.theta = update_theta(&label_counts(&segs, k), lengths.alpha)?;
        let inversions = segs
            .iter()
            .map(|s| order_to_inversions(&complete_order(&s.order(), k)))
            .collect::<Result<Vec<_>>>()?;
        mallows.rho = estimate_rho(&inversions, &mallows)?;

        for ((seg, v), p) in segs.iter_mut().zip(&train).zip(&probs) {
            let mut rng = derive_rng(config.seed, &v.id, iteration as u64);
            *seg = sample_segmentation(p, &mallows, &lengths, seg, &mut rng, config.sweeps_per_iteration)?;
        }

        let tc_score = tc_measure(&params, &train)?;
        let report = IterationReport {
            iteration,
            cross_entropy: stats.final_loss().unwrap_or(f64::NAN),
            tc_score,
        };
        observe(&report);
        out.reports.push(report);
        out.checkpoints.push(SegCheckpoint {
            iteration,
            appearance: params.clone(),
            mallows: mallows.clone(),
            lengths: lengths.clone(),
            labels: train
                .iter()
                .zip(&segs)
                .map(|(v, s)| (v.id.clone(), s.to_labels()))
                .collect(),
            tc_score,
        });
    }
    Ok(out)
}
