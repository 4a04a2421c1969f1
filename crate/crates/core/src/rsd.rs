//! Remaining-surgery-duration regression.
//!
//! The regressor reads the encoder features `[e_t, c_t]` concatenated with
//! the elapsed time and predicts the remaining duration scaled by
//! [`CorridorParams::scale`]. Predictions are reported in minutes.
//!
//! The corridor loss discounts errors that lie between the ground truth and
//! a border `c(t)` which starts at the naive median-based prediction and
//! moves onto the ground truth as the procedure progresses.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, fabs};

use crate::appearance::{
    group_by_video, shuffle, softmax_in_place, Dense, Encoder, EncoderCache, LabeledVideo,
    OptimizerKind, TrainConfig,
};
use crate::error::{invalid, Error, Result};
use crate::metrics::mae_minutes;
use crate::optim::Optimizer;
use crate::rng::{derive_rng, Rng as StdRng};
use crate::seg_trainer::{uniform_labels, SegCheckpoint};
use crate::types::{Corpus, Split, VideoSequence};

/// Median duration, output scaling and SmoothL1 threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorridorParams {
    /// Median procedure duration of the training split, minutes.
    pub t_median: f64,
    pub scale: f64,
    /// SmoothL1 threshold in scaled units.
    pub beta: f64,
}

impl CorridorParams {
    pub const DEFAULT_SCALE: f64 = 0.05;
    pub const DEFAULT_BETA: f64 = 1.0;

    pub fn new(t_median: f64) -> Result<Self> {
        let cp = Self {
            t_median,
            scale: Self::DEFAULT_SCALE,
            beta: Self::DEFAULT_BETA,
        };
        cp.validate()?;
        Ok(cp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_median > 0.0 && self.t_median.is_finite()) {
            return Err(invalid("median duration must be positive"));
        }
        if !(self.scale > 0.0) || !(self.beta > 0.0) {
            return Err(invalid("scale and beta must be positive"));
        }
        Ok(())
    }

    /// Median of the training-split durations.
    pub fn from_corpus(corpus: &Corpus) -> Result<Self> {
        let mut d: Vec<f64> = corpus
            .videos_in(Split::Train)
            .iter()
            .map(|v| v.duration_min())
            .collect();
        if d.is_empty() {
            return Err(Error::EmptyInput("training split"));
        }
        d.sort_by(f64::total_cmp);
        let n = d.len();
        let median = if n % 2 == 1 {
            d[n / 2]
        } else {
            0.5 * (d[n / 2 - 1] + d[n / 2])
        };
        Self::new(median)
    }
}

pub fn smooth_l1(y: f64, target: f64, beta: f64) -> f64 {
    let x = y - target;
    if fabs(x) < beta {
        0.5 * x * x / beta
    } else {
        fabs(x) - 0.5 * beta
    }
}

/// Derivative of [`smooth_l1`] with respect to `y`.
pub fn smooth_l1_grad(y: f64, target: f64, beta: f64) -> f64 {
    let x = y - target;
    if fabs(x) < beta {
        x / beta
    } else if x > 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Fraction of the procedure elapsed at `t` minutes with `gt` remaining.
pub fn progress(t: f64, gt: f64) -> Result<f64> {
    if !(t >= 0.0 && gt >= 0.0) {
        return Err(invalid("elapsed and remaining time must be non-negative"));
    }
    if t + gt == 0.0 {
        return Err(invalid("progress undefined when elapsed and remaining time are both zero"));
    }
    Ok(t / (gt + t))
}

/// Interpolation weight of the corridor border, `1 - 2 / (1 + e^{5 prog})`.
pub fn corridor_alpha(prog: f64) -> f64 {
    1.0 - 2.0 / (1.0 + exp(5.0 * prog))
}

pub fn naive_prediction(t: f64, cp: &CorridorParams) -> f64 {
    (cp.t_median - t).max(0.0)
}

/// Corridor border `c(t) = alpha gt + (1 - alpha) n(t)`.
pub fn corridor_border(t: f64, gt: f64, cp: &CorridorParams) -> Result<f64> {
    let alpha = corridor_alpha(progress(t, gt)?);
    Ok(alpha * gt + (1.0 - alpha) * naive_prediction(t, cp))
}

/// Corridor weight of prediction `y`: squared relative position between the
/// ground truth (0) and the border (1) inside the corridor, 1 outside it.
pub fn corridor_weight(y: f64, t: f64, gt: f64, cp: &CorridorParams) -> f64 {
    let Ok(c) = corridor_border(t, gt, cp) else {
        return 1.0;
    };
    if c == gt {
        return 1.0;
    }
    let (lo, hi) = if c < gt { (c, gt) } else { (gt, c) };
    if y < lo || y > hi {
        return 1.0;
    }
    let r = (y - gt) / (c - gt);
    r * r
}

/// `pi(y, t) * SmoothL1(scale y, scale gt)`; `pi` is evaluated in minutes.
pub fn corr_smooth_l1(y: f64, t: f64, gt: f64, cp: &CorridorParams) -> f64 {
    corridor_weight(y, t, gt, cp) * smooth_l1(cp.scale * y, cp.scale * gt, cp.beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RsdLoss {
    SmoothL1,
    CorrSmoothL1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Pipeline {
    /// Encoder copied from the auxiliary model and frozen.
    FeatureExtraction,
    /// Encoder copied; lowest layer frozen, the rest at a reduced rate.
    Pretraining,
    /// Joint training with an auxiliary head.
    Regularization,
    /// Plain RSD training from scratch.
    SingleTask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AuxTask {
    None,
    LearnedSeg,
    Uniform,
    Progress,
    Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PipelineMode {
    pub pipeline: Pipeline,
    pub aux: AuxTask,
}

impl PipelineMode {
    pub fn new(pipeline: Pipeline, aux: AuxTask) -> Result<Self> {
        match (pipeline, aux) {
            (Pipeline::SingleTask, a) if a != AuxTask::None => {
                Err(invalid("single-task training takes no auxiliary task"))
            }
            (p, AuxTask::None) if p != Pipeline::SingleTask => {
                Err(invalid("this pipeline needs an auxiliary task"))
            }
            _ => Ok(Self { pipeline, aux }),
        }
    }
}

/// Auxiliary output head on the embedding `e_t`.
#[derive(Debug, Clone, PartialEq)]
pub enum AuxHead {
    /// Softmax over subactivity or phase labels.
    Classes(Dense),
    /// Scalar progress regression.
    Progress(Dense),
}

impl AuxHead {
    pub fn dense(&self) -> &Dense {
        match self {
            AuxHead::Classes(d) | AuxHead::Progress(d) => d,
        }
    }

    fn dense_mut(&mut self) -> &mut Dense {
        match self {
            AuxHead::Classes(d) | AuxHead::Progress(d) => d,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RsdParams {
    pub encoder: Encoder,
    /// `(feature_dim + 1) -> R`, tanh.
    pub hidden: Dense,
    /// `R -> 1`, scaled RSD.
    pub output: Dense,
    pub aux: Option<AuxHead>,
    /// Encoder layers, hidden, output, then the auxiliary head if present.
    pub trainable: Vec<bool>,
    pub aux_weight: f64,
    pub scale: f64,
}

impl RsdParams {
    pub fn new<R: rand::Rng + ?Sized>(
        encoder: Encoder,
        width: usize,
        aux: Option<AuxHead>,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let hidden = Dense::random(encoder.feature_dim() + 1, width, rng);
        let output = Dense::random(width, 1, rng);
        let n = encoder.layers.len() + 2 + usize::from(aux.is_some());
        Self {
            encoder,
            hidden,
            output,
            aux,
            trainable: vec![true; n],
            aux_weight: 1.0,
            scale,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.encoder.layers.len() + 2 + usize::from(self.aux.is_some())
    }

    pub fn layers(&self) -> Vec<&Dense> {
        let mut v: Vec<&Dense> = self.encoder.layers.iter().collect();
        v.push(&self.hidden);
        v.push(&self.output);
        if let Some(a) = &self.aux {
            v.push(a.dense());
        }
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Dense> {
        let mut v: Vec<&mut Dense> = self.encoder.layers.iter_mut().collect();
        v.push(&mut self.hidden);
        v.push(&mut self.output);
        if let Some(a) = &mut self.aux {
            v.push(a.dense_mut());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.hidden.input_dim() != self.encoder.feature_dim() + 1 {
            return Err(Error::DimensionMismatch {
                what: "regressor input (features + elapsed time)",
                expected: self.encoder.feature_dim() + 1,
                found: self.hidden.input_dim(),
            });
        }
        if self.output.input_dim() != self.hidden.output_dim() || self.output.output_dim() != 1 {
            return Err(invalid("regressor output layer has the wrong shape"));
        }
        if let Some(a) = &self.aux {
            if a.dense().input_dim() != self.encoder.embed_dim() {
                return Err(Error::DimensionMismatch {
                    what: "auxiliary head input",
                    expected: self.encoder.embed_dim(),
                    found: a.dense().input_dim(),
                });
            }
            if matches!(a, AuxHead::Progress(d) if d.output_dim() != 1) {
                return Err(invalid("progress head must have one output"));
            }
        }
        if self.trainable.len() != self.num_layers() {
            return Err(Error::DimensionMismatch {
                what: "trainable mask",
                expected: self.num_layers(),
                found: self.trainable.len(),
            });
        }
        if !(self.scale > 0.0) {
            return Err(invalid("output scale must be positive"));
        }
        Ok(())
    }
}

struct FrameOut {
    input: Vec<f64>,
    hidden: Vec<f64>,
    scaled: f64,
}

fn regress(params: &RsdParams, cache: &EncoderCache, video: &VideoSequence, t: usize) -> FrameOut {
    let fd = params.encoder.feature_dim();
    let mut input = vec![0.0; fd + 1];
    cache.feature_row(t, &mut input[..fd]);
    input[fd] = params.scale * video.elapsed_min(t);
    let mut hidden = vec![0.0; params.hidden.output_dim()];
    params.hidden.forward(&input, &mut hidden);
    hidden.iter_mut().for_each(|h| *h = libm::tanh(*h));
    let mut y = [0.0];
    params.output.forward(&hidden, &mut y);
    FrameOut {
        input,
        hidden,
        scaled: y[0],
    }
}

fn aux_output(head: &AuxHead, e: &[f64]) -> Vec<f64> {
    let d = head.dense();
    let mut z = vec![0.0; d.output_dim()];
    d.forward(e, &mut z);
    if let AuxHead::Classes(_) = head {
        softmax_in_place(&mut z);
    }
    z
}

/// RSD in minutes at frame `t`, plus the auxiliary head's output if present
/// (class probabilities, or a one-element progress estimate).
pub fn rsd_forward(params: &RsdParams, video: &VideoSequence, t: usize) -> Result<(f64, Option<Vec<f64>>)> {
    params.validate()?;
    params.encoder.check_video(video)?;
    if t >= video.len() {
        return Err(invalid(format!("frame {t} beyond video length {}", video.len())));
    }
    let cache = params.encoder.run(&video.features, t + 1);
    let out = regress(params, &cache, video, t);
    let aux = params.aux.as_ref().map(|a| aux_output(a, cache.embedding().row(t)));
    Ok((out.scaled / params.scale, aux))
}

/// RSD in minutes for every frame.
pub fn predict_video(params: &RsdParams, video: &VideoSequence) -> Result<Vec<f64>> {
    params.validate()?;
    params.encoder.check_video(video)?;
    let cache = params.encoder.run(&video.features, video.len());
    Ok((0..video.len())
        .map(|t| regress(params, &cache, video, t).scaled / params.scale)
        .collect())
}

/// Per-frame auxiliary supervision.
#[derive(Debug, Clone, Copy)]
pub enum AuxTarget<'a> {
    None,
    Classes(&'a [usize]),
    Progress,
}

#[derive(Debug, Clone, Copy)]
pub struct RsdExample<'a> {
    pub video: &'a VideoSequence,
    pub aux: AuxTarget<'a>,
}

/// Weights of the two loss terms plus the corridor settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub loss: RsdLoss,
    pub rsd_weight: f64,
    pub aux_weight: f64,
    pub corridor: CorridorParams,
}

/// Batch loss and gradient. Per-frame losses are averaged per video, then
/// over the videos present in the batch. The corridor weight is a constant
/// per frame.
pub fn rsd_loss_grad(
    params: &RsdParams,
    data: &[RsdExample<'_>],
    batch: &[(usize, usize)],
    objective: &Objective,
) -> (f64, Vec<Dense>) {
    loss_grad(params, data, batch, objective, None, true)
}

fn loss_grad(
    params: &RsdParams,
    data: &[RsdExample<'_>],
    batch: &[(usize, usize)],
    objective: &Objective,
    frozen: Option<&[EncoderCache]>,
    encoder_grads: bool,
) -> (f64, Vec<Dense>) {
    let mut grads: Vec<Dense> = params.layers().iter().map(|l| l.zeros_like()).collect();
    let n_enc = params.encoder.layers.len();
    let (gi_hidden, gi_out, gi_aux) = (n_enc, n_enc + 1, n_enc + 2);
    let h = params.encoder.embed_dim();
    let fd = params.encoder.feature_dim();
    let cp = &objective.corridor;
    let groups = group_by_video(batch);
    let n_videos = groups.len().max(1) as f64;
    let mut loss = 0.0;
    for (vi, frames) in groups {
        let ex = &data[vi];
        let video = ex.video;
        let n = frames.iter().max().map_or(0, |&t| t + 1);
        let owned;
        let cache = match frozen {
            Some(c) => &c[vi],
            None => {
                owned = params.encoder.run(&video.features, n);
                &owned
            }
        };
        let w = 1.0 / (frames.len() as f64 * n_videos);
        let mut d_emb = Matrix::zeros(cache.frames(), h);
        let mut d_ctx = Matrix::zeros(cache.frames(), h);
        for &t in &frames {
            let out = regress(params, cache, video, t);
            let gt = video.remaining_min(t);
            let el = video.elapsed_min(t);
            let mut dy = 0.0;
            if objective.rsd_weight != 0.0 {
                let pi = match objective.loss {
                    RsdLoss::SmoothL1 => 1.0,
                    RsdLoss::CorrSmoothL1 => corridor_weight(out.scaled / cp.scale, el, gt, cp),
                };
                let target = cp.scale * gt;
                loss += w * objective.rsd_weight * pi * smooth_l1(out.scaled, target, cp.beta);
                dy = w * objective.rsd_weight * pi * smooth_l1_grad(out.scaled, target, cp.beta);
            }
            let mut d_input = vec![0.0; fd + 1];
            if dy != 0.0 {
                let mut d_hidden = vec![0.0; out.hidden.len()];
                params.output.backward(&out.hidden, &[dy], &mut grads[gi_out], Some(&mut d_hidden));
                for (dh, hv) in d_hidden.iter_mut().zip(&out.hidden) {
                    *dh *= 1.0 - hv * hv;
                }
                params.hidden.backward(&out.input, &d_hidden, &mut grads[gi_hidden], Some(&mut d_input));
            }
            let mut d_e = vec![0.0; h];
            if let (Some(head), true) = (&params.aux, objective.aux_weight != 0.0) {
                let e = cache.embedding().row(t);
                let z = aux_output(head, e);
                let scale = w * objective.aux_weight;
                let dz = match (head, ex.aux) {
                    (AuxHead::Classes(_), AuxTarget::Classes(labels)) => {
                        let y = labels[t];
                        loss -= scale * libm::log(z[y].max(f64::MIN_POSITIVE));
                        let mut g = z.clone();
                        g[y] -= 1.0;
                        g.iter_mut().for_each(|v| *v *= scale);
                        Some(g)
                    }
                    (AuxHead::Progress(_), AuxTarget::Progress) => {
                        let prog = el / video.duration_min();
                        loss += scale * smooth_l1(z[0], prog, cp.beta);
                        Some(vec![scale * smooth_l1_grad(z[0], prog, cp.beta)])
                    }
                    _ => None,
                };
                if let Some(dz) = dz {
                    head.dense().backward(e, &dz, &mut grads[gi_aux], Some(&mut d_e));
                }
            }
            for j in 0..h {
                d_emb.row_mut(t)[j] += d_input[j] + d_e[j];
                d_ctx.row_mut(t)[j] += d_input[h + j];
            }
        }
        if encoder_grads && frozen.is_none() {
            params
                .encoder
                .backward(&video.features, cache, d_emb, Some(&d_ctx), &mut grads[..n_enc]);
        }
    }
    (loss, grads)
}

use crate::matrix::Matrix;

/// Architecture of a freshly initialized RSD model.
#[derive(Debug, Clone, PartialEq)]
pub struct RsdArch {
    /// Embedding widths for randomly initialized encoders.
    pub hidden: Vec<usize>,
    pub regressor_width: usize,
    pub context_lambda: f64,
    /// Number of classes of the uniform auxiliary task.
    pub uniform_k: usize,
}

impl Default for RsdArch {
    fn default() -> Self {
        Self {
            hidden: vec![16, 16],
            regressor_width: 16,
            context_lambda: 0.9,
            uniform_k: 10,
        }
    }
}

/// Everything that selects an RSD training run besides the optimizer.
#[derive(Debug, Clone)]
pub struct RsdSetup<'a> {
    pub mode: PipelineMode,
    pub loss: RsdLoss,
    /// Segmentation checkpoint; required when the auxiliary task is the
    /// learned segmentation.
    pub init: Option<&'a SegCheckpoint>,
    pub arch: RsdArch,
    pub aux_weight: f64,
    /// Epochs of supervised auxiliary training used to build the encoder
    /// for feature extraction / pretraining with a non-learned auxiliary
    /// task. `None` uses the main epoch count.
    pub aux_encoder_epochs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// NaN when there is no validation split.
    pub val_mae: f64,
}

#[derive(Debug, Clone)]
pub struct RsdRun {
    /// Parameters of the best validation epoch.
    pub params: RsdParams,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
    /// Set when training stopped on a non-finite loss; `params` then holds
    /// the last good state.
    pub error: Option<Error>,
}

/// Optimizer defaults per pipeline: SGD for 250 epochs when pretraining,
/// Adam for 200 epochs otherwise.
pub fn default_train_config(pipeline: Pipeline, seed: u64) -> TrainConfig {
    match pipeline {
        Pipeline::Pretraining => TrainConfig {
            learning_rate: 5e-2,
            epochs: 250,
            optimizer: OptimizerKind::Sgd,
            seed,
            ..TrainConfig::default()
        },
        _ => TrainConfig {
            seed,
            ..TrainConfig::default()
        },
    }
}

/// Learning-rate factor for pretrained layers in the pretraining pipeline.
pub const PRETRAINED_LR_FACTOR: f64 = 0.1;

enum AuxLabels {
    None,
    Classes(BTreeMap<String, Vec<usize>>, usize),
    Progress,
}

fn resolve_aux(corpus: &Corpus, setup: &RsdSetup<'_>, train: &[&VideoSequence]) -> Result<AuxLabels> {
    Ok(match setup.mode.aux {
        AuxTask::None => AuxLabels::None,
        AuxTask::Progress => AuxLabels::Progress,
        AuxTask::LearnedSeg => {
            let init = setup
                .init
                .ok_or_else(|| invalid("learned-segmentation auxiliary task needs a segmentation checkpoint"))?;
            let mut m = BTreeMap::new();
            for v in train {
                let l = init.labels.get(&v.id).ok_or_else(|| Error::MissingLabels(v.id.clone()))?;
                if l.len() != v.len() {
                    return Err(Error::DimensionMismatch {
                        what: "checkpoint labels",
                        expected: v.len(),
                        found: l.len(),
                    });
                }
                m.insert(v.id.clone(), l.0.clone());
            }
            AuxLabels::Classes(m, init.appearance.k())
        }
        AuxTask::Uniform => {
            let k = setup.arch.uniform_k;
            let mut m = BTreeMap::new();
            for v in train {
                m.insert(v.id.clone(), uniform_labels(v, k)?.0);
            }
            AuxLabels::Classes(m, k)
        }
        AuxTask::Phase => {
            let k = corpus
                .videos
                .iter()
                .filter_map(|v| v.phase_labels.as_ref())
                .flat_map(|p| p.iter().copied())
                .max()
                .map_or(0, |m| m + 1);
            let mut m = BTreeMap::new();
            for v in train {
                let p = v.phase_labels.as_ref().ok_or_else(|| Error::MissingLabels(v.id.clone()))?;
                m.insert(v.id.clone(), p.clone());
            }
            AuxLabels::Classes(m, k)
        }
    })
}

fn aux_head_for<R: rand::Rng + ?Sized>(labels: &AuxLabels, embed: usize, rng: &mut R) -> Option<AuxHead> {
    match labels {
        AuxLabels::None => None,
        AuxLabels::Classes(_, k) => Some(AuxHead::Classes(Dense::random(embed, *k, rng))),
        AuxLabels::Progress => Some(AuxHead::Progress(Dense::random(embed, 1, rng))),
    }
}

fn examples<'a>(videos: &[&'a VideoSequence], labels: &'a AuxLabels) -> Vec<RsdExample<'a>> {
    videos
        .iter()
        .map(|v| RsdExample {
            video: v,
            aux: match labels {
                AuxLabels::None => AuxTarget::None,
                AuxLabels::Progress => AuxTarget::Progress,
                AuxLabels::Classes(m, _) => AuxTarget::Classes(m[&v.id].as_slice()),
            },
        })
        .collect()
}

/// Trains an encoder on the auxiliary task alone (no RSD term), for feature
/// extraction and pretraining with a supervised or self-supervised
/// auxiliary task.
fn auxiliary_encoder(
    train: &[&VideoSequence],
    labels: &AuxLabels,
    setup: &RsdSetup<'_>,
    config: &TrainConfig,
    cp: &CorridorParams,
) -> Result<Encoder> {
    let dim = train[0].dim();
    let mut rng = derive_rng(config.seed, "aux-encoder", 0);
    let mut dims = vec![dim];
    dims.extend_from_slice(&setup.arch.hidden);
    let encoder = Encoder::random(&dims, setup.arch.context_lambda, &mut rng)?;
    let aux = aux_head_for(labels, encoder.embed_dim(), &mut rng);
    let mut params = RsdParams::new(encoder, setup.arch.regressor_width, aux, cp.scale, &mut rng);
    let n = params.num_layers();
    // regressor layers are unused by the auxiliary-only objective
    params.trainable = (0..n).map(|l| l < n - 3 || l == n - 1).collect();
    let objective = Objective {
        loss: RsdLoss::SmoothL1,
        rsd_weight: 0.0,
        aux_weight: 1.0,
        corridor: *cp,
    };
    let cfg = TrainConfig {
        epochs: setup.aux_encoder_epochs.unwrap_or(config.epochs),
        optimizer: OptimizerKind::Adam,
        learning_rate: TrainConfig::default().learning_rate,
        ..config.clone()
    };
    let data = examples(train, labels);
    let lr: Vec<f64> = params.trainable.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
    let (trained, _, err) = fit(&params, &data, &[], &objective, &cfg, &lr, "aux-encoder");
    if let Some(e) = err {
        return Err(e);
    }
    Ok(trained.encoder)
}

/// Shared epoch loop. Returns the best parameters by validation MAE (the
/// last epoch when `val` is empty), the history and a numerical error if
/// one stopped training.
fn fit(
    init: &RsdParams,
    data: &[RsdExample<'_>],
    val: &[&VideoSequence],
    objective: &Objective,
    config: &TrainConfig,
    lr_scale: &[f64],
    stream: &str,
) -> (RsdParams, Vec<EpochRecord>, Option<Error>) {
    let mut params = init.clone();
    let mut best = init.clone();
    let mut best_mae = f64::INFINITY;
    let mut history = Vec::new();
    if config.epochs == 0 || data.is_empty() {
        return (params, history, None);
    }
    let n_enc = params.encoder.layers.len();
    let encoder_frozen = lr_scale[..n_enc].iter().all(|&s| s == 0.0);
    let frozen: Option<Vec<EncoderCache>> = encoder_frozen.then(|| {
        data.iter()
            .map(|ex| params.encoder.run(&ex.video.features, ex.video.len()))
            .collect()
    });
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, config.l2_weight, &params.layers());
    let mut rng: StdRng = derive_rng(config.seed, stream, 0);
    let mut frames: Vec<(usize, usize)> = data
        .iter()
        .enumerate()
        .flat_map(|(vi, ex)| (0..ex.video.len()).map(move |t| (vi, t)))
        .collect();
    for epoch in 0..config.epochs {
        shuffle(&mut frames, &mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in frames.chunks(config.batch_size) {
            let (loss, grads) = loss_grad(&params, data, batch, objective, frozen.as_deref(), !encoder_frozen);
            if !loss.is_finite() {
                let err = Error::NonFinite {
                    context: "RSD loss",
                    epoch,
                };
                let last_good = if history.is_empty() { params.clone() } else { best };
                return (last_good, history, Some(err));
            }
            total += loss;
            batches += 1;
            opt.step(&mut params.layers_mut(), &grads, lr_scale);
        }
        let val_mae = if val.is_empty() {
            f64::NAN
        } else {
            let preds: Result<Vec<Vec<f64>>> = val.iter().map(|v| predict_video(&params, v)).collect();
            match preds.and_then(|p| mae_minutes(&p, val)) {
                Ok(m) => m,
                Err(e) => return (best, history, Some(e)),
            }
        };
        history.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: total / batches.max(1) as f64,
            val_mae,
        });
        if val.is_empty() || val_mae < best_mae {
            best_mae = val_mae;
            best = params.clone();
        }
    }
    (best, history, None)
}

/// Trains an RSD model in one of the four pipelines.
pub fn train_rsd(corpus: &Corpus, setup: &RsdSetup<'_>, config: &TrainConfig, cp: &CorridorParams) -> Result<RsdRun> {
    config.validate()?;
    cp.validate()?;
    PipelineMode::new(setup.mode.pipeline, setup.mode.aux)?;
    let train = corpus.videos_in(Split::Train);
    if train.is_empty() {
        return Err(Error::EmptyInput("training split"));
    }
    let val = corpus.videos_in(Split::Val);
    let labels = resolve_aux(corpus, setup, &train)?;
    let pipeline = setup.mode.pipeline;

    let encoder = match pipeline {
        Pipeline::FeatureExtraction | Pipeline::Pretraining => match setup.mode.aux {
            AuxTask::LearnedSeg => setup.init.expect("resolved above").appearance.encoder.clone(),
            _ => auxiliary_encoder(&train, &labels, setup, config, cp)?,
        },
        Pipeline::Regularization | Pipeline::SingleTask => {
            let mut dims = vec![train[0].dim()];
            dims.extend_from_slice(&setup.arch.hidden);
            Encoder::random(&dims, setup.arch.context_lambda, &mut derive_rng(config.seed, "rsd-encoder", 0))?
        }
    };
    for v in corpus.videos.iter() {
        encoder.check_video(v)?;
    }
    if pipeline == Pipeline::Pretraining && encoder.layers.len() < 2 {
        return Err(invalid("pretraining needs at least two embedding layers"));
    }

    let mut rng = derive_rng(config.seed, "rsd-head", 0);
    let aux = if pipeline == Pipeline::Regularization {
        aux_head_for(&labels, encoder.embed_dim(), &mut rng)
    } else {
        None
    };
    let mut params = RsdParams::new(encoder, setup.arch.regressor_width, aux, cp.scale, &mut rng);
    params.aux_weight = setup.aux_weight;
    let n_enc = params.encoder.layers.len();
    let lr_scale: Vec<f64> = (0..params.num_layers())
        .map(|l| {
            if l >= n_enc {
                return 1.0;
            }
            match pipeline {
                Pipeline::FeatureExtraction => 0.0,
                Pipeline::Pretraining if l == 0 => 0.0,
                Pipeline::Pretraining => PRETRAINED_LR_FACTOR,
                _ => 1.0,
            }
        })
        .collect();
    params.trainable = lr_scale.iter().map(|&s| s != 0.0).collect();

    let objective = Objective {
        loss: setup.loss,
        rsd_weight: 1.0,
        aux_weight: if pipeline == Pipeline::Regularization {
            setup.aux_weight
        } else {
            0.0
        },
        corridor: *cp,
    };
    let no_aux = AuxLabels::None;
    let data = examples(
        &train,
        if pipeline == Pipeline::Regularization {
            &labels
        } else {
            &no_aux
        },
    );
    let (best, history, error) = fit(&params, &data, &val, &objective, config, &lr_scale, "rsd");
    let best_epoch = if val.is_empty() {
        history.last().map(|r| r.epoch)
    } else {
        history
            .iter()
            .filter(|r| r.val_mae.is_finite())
            .fold(None::<&EpochRecord>, |b, r| match b {
                Some(b) if b.val_mae <= r.val_mae => Some(b),
                _ => Some(r),
            })
            .map(|r| r.epoch)
    };
    Ok(RsdRun {
        params: best,
        best_epoch,
        history,
        error,
    })
}

/// Labeled views of a corpus split for appearance training on an arbitrary
/// label map.
pub fn labeled_videos<'a>(
    videos: &[&'a VideoSequence],
    labels: &'a BTreeMap<String, Vec<usize>>,
) -> Result<Vec<LabeledVideo<'a>>> {
    videos
        .iter()
        .map(|v| {
            let l = labels.get(&v.id).ok_or_else(|| Error::MissingLabels(v.id.clone()))?;
            Ok(LabeledVideo { video: v, labels: l })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cp40() -> CorridorParams {
        CorridorParams::new(40.0).unwrap()
    }

    #[test]
    fn smooth_l1_values() {
        assert_eq!(smooth_l1(3.0, 3.0, 1.0), 0.0);
        assert_eq!(smooth_l1(0.5, 0.0, 1.0), 0.125);
        assert_eq!(smooth_l1(2.0, 0.0, 1.0), 1.5);
        assert_eq!(smooth_l1(-2.0, 0.0, 1.0), 1.5);
    }

    #[test]
    fn progress_values() {
        assert_eq!(progress(0.0, 30.0).unwrap(), 0.0);
        assert_eq!(progress(12.0, 0.0).unwrap(), 1.0);
        assert!((progress(20.0, 40.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(progress(0.0, 0.0).is_err());
    }

    #[test]
    fn corridor_closed_forms() {
        let cp = cp40();
        assert_eq!(corridor_border(0.0, 55.0, &cp).unwrap(), 40.0);
        let c = corridor_border(20.0, 40.0, &cp).unwrap();
        assert!((c - 33.6452).abs() < 1e-4, "{c}");
        assert!((corridor_alpha(1.0 / 3.0) - 0.68226).abs() < 1e-5);
        assert_eq!(corridor_border(45.0, 0.0, &cp).unwrap(), 0.0);
        assert_eq!(corridor_weight(40.0, 20.0, 40.0, &cp), 0.0);
        assert!((corridor_weight(c, 20.0, 40.0, &cp) - 1.0).abs() < 1e-15);
        let pi = corridor_weight(36.0, 20.0, 40.0, &cp);
        assert!((pi - 0.39619).abs() < 1e-4, "{pi}");
        let l = corr_smooth_l1(36.0, 20.0, 40.0, &cp);
        assert!((l - 0.0079239).abs() < 1e-6, "{l}");
        // outside the corridor on either side
        assert_eq!(corridor_weight(30.0, 20.0, 40.0, &cp), 1.0);
        assert_eq!(corridor_weight(41.0, 20.0, 40.0, &cp), 1.0);
        // degenerate corridor
        assert_eq!(corridor_weight(3.0, 45.0, 0.0, &cp), 1.0);
    }

    #[test]
    fn naive_predictor() {
        let cp = cp40();
        assert_eq!(naive_prediction(0.0, &cp), 40.0);
        assert_eq!(naive_prediction(40.0, &cp), 0.0);
        assert_eq!(naive_prediction(55.0, &cp), 0.0);
    }

    #[test]
    fn pipeline_mode_rules() {
        assert!(PipelineMode::new(Pipeline::SingleTask, AuxTask::None).is_ok());
        assert!(PipelineMode::new(Pipeline::SingleTask, AuxTask::Phase).is_err());
        assert!(PipelineMode::new(Pipeline::Regularization, AuxTask::None).is_err());
        assert!(PipelineMode::new(Pipeline::FeatureExtraction, AuxTask::Uniform).is_ok());
    }

    #[test]
    fn alpha_increases_with_progress() {
        let mut prev = corridor_alpha(0.0);
        assert_eq!(prev, 0.0);
        for i in 1..=1000 {
            let a = corridor_alpha(i as f64 / 1000.0);
            assert!(a > prev);
            prev = a;
        }
    }
}
