//! Synthetic corpora with known segmentations.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use segrsd_core::lengths::{sample_lengths, LengthModel};
use segrsd_core::mallows::{inversions_to_order, mallows_sample, MallowsModel};
use segrsd_core::rng::derive_rng;
use segrsd_core::{Corpus, Matrix, Segmentation, Split, VideoSequence};

use crate::error::{DataError, Result};
use crate::split::{split_corpus, DEFAULT_RATIOS};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_videos: usize,
    pub k_true: usize,
    pub dim: usize,
    pub duration_mean_min: f64,
    /// Durations are `mean · (1 + u)` with `u ~ U(-jitter, jitter)`.
    pub duration_jitter: f64,
    pub cluster_separation: f64,
    pub noise_sigma: f64,
    /// Probability that a subactivity is absent from a video.
    pub skip_prob: f64,
    pub order_rho: f64,
    pub seed: u64,
    pub frame_period_s: f64,
    /// Weight of `t / T` added to the last feature dimension.
    pub progress_gain: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_videos: 20,
            k_true: 5,
            dim: 8,
            duration_mean_min: 200.0 / 60.0,
            duration_jitter: 0.2,
            cluster_separation: 4.0,
            noise_sigma: 1.0,
            skip_prob: 0.0,
            order_rho: 2.0,
            seed: 0,
            frame_period_s: 1.0,
            progress_gain: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(DataError::Usage(format!("synthetic corpus: {msg}")));
        if self.n_videos == 0 {
            return bad("need at least one video");
        }
        if self.k_true < 2 {
            return bad("need at least two subactivities");
        }
        if self.k_true > self.dim {
            return bad("K_true exceeds the feature dimension, one-hot centers do not fit");
        }
        if !(self.duration_mean_min > 0.0 && self.duration_mean_min.is_finite()) {
            return bad("mean duration must be positive");
        }
        if !(0.0..1.0).contains(&self.duration_jitter) {
            return bad("duration jitter must lie in [0, 1)");
        }
        if !(self.cluster_separation > 0.0 && self.cluster_separation.is_finite()) {
            return bad("cluster separation must be positive");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise sigma must be non-negative");
        }
        if !(0.0..1.0).contains(&self.skip_prob) {
            return bad("skip probability must lie in [0, 1)");
        }
        if !(self.order_rho >= 0.0 && self.order_rho.is_finite()) {
            return bad("order dispersion must be non-negative");
        }
        if !(self.frame_period_s > 0.0 && self.frame_period_s.is_finite()) {
            return bad("frame period must be positive");
        }
        if !self.progress_gain.is_finite() {
            return bad("progress gain must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    /// Ground-truth segmentation per video, in corpus order.
    pub truth: Vec<Segmentation>,
    /// Sampled durations before rounding to whole frames.
    pub durations_min: Vec<f64>,
}

/// Present subactivities in order. Resamples the drop mask until at least
/// two survive.
fn present_ids<R: Rng + ?Sized>(order: &[usize], skip_prob: f64, rng: &mut R) -> Vec<usize> {
    if skip_prob == 0.0 {
        return order.to_vec();
    }
    for _ in 0..1000 {
        let kept: Vec<usize> = order
            .iter()
            .copied()
            .filter(|_| rng.random::<f64>() >= skip_prob)
            .collect();
        if kept.len() >= 2 {
            return kept;
        }
    }
    order[..2].to_vec()
}

/// Generates the corpus. Video `i` uses its own seed stream, so videos do
/// not change when `n_videos` grows. Corpora with at least 8 videos are
/// split 5:1:2, smaller ones go entirely to the training split.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let k = cfg.k_true;
    let mallows = MallowsModel::uniform_rho(k, cfg.order_rho);
    let lengths = LengthModel::uniform(k);
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| DataError::Usage(e.to_string()))?;
    let width = n_digits(cfg.n_videos);

    let mut videos = Vec::with_capacity(cfg.n_videos);
    let mut truth = Vec::with_capacity(cfg.n_videos);
    let mut durations_min = Vec::with_capacity(cfg.n_videos);
    for i in 0..cfg.n_videos {
        let mut rng = derive_rng(cfg.seed, "synth-video", i as u64);
        let u = if cfg.duration_jitter > 0.0 {
            rng.random_range(-cfg.duration_jitter..cfg.duration_jitter)
        } else {
            0.0
        };
        let duration = cfg.duration_mean_min * (1.0 + u);
        let order = inversions_to_order(&mallows_sample(&mallows, &mut rng), k)?;
        let present = present_ids(&order, cfg.skip_prob, &mut rng);
        let frames = ((duration * 60.0 / cfg.frame_period_s).round() as usize).max(present.len());
        let lens = sample_lengths(&lengths, &present, frames, &mut rng)?;
        let segments: Vec<(usize, usize)> = present.iter().copied().zip(lens).collect();
        let seg = Segmentation::new(k, segments)?;
        let labels = seg.to_labels().0;

        let mut features = Matrix::zeros(frames, cfg.dim);
        for (t, &l) in labels.iter().enumerate() {
            let row = features.row_mut(t);
            for x in row.iter_mut() {
                *x = noise.sample(&mut rng);
            }
            row[l] += cfg.cluster_separation;
            row[cfg.dim - 1] += cfg.progress_gain * t as f64 / frames as f64;
        }
        let id = format!("synth{i:0width$}");
        videos.push(VideoSequence::new(id, features, cfg.frame_period_s, Some(labels))?);
        truth.push(seg);
        durations_min.push(duration);
    }

    let ids: Vec<String> = videos.iter().map(|v| v.id.clone()).collect();
    let split = if ids.len() >= 8 {
        split_corpus(&ids, DEFAULT_RATIOS, cfg.seed)?
    } else {
        ids.iter().map(|id| (id.clone(), Split::Train)).collect()
    };
    Ok(SynthCorpus {
        corpus: Corpus::new(videos, split)?,
        truth,
        durations_min,
    })
}

fn n_digits(n: usize) -> usize {
    n.saturating_sub(1).max(1).to_string().len().max(2)
}
