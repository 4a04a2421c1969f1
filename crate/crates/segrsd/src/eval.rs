//! Evaluation helpers shared by the CLI and the tests: split MAEs, mapped
//! segmentation accuracy, prediction files and the baseline grid.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use segrsd_core::appearance::{predict_labels, AppearanceParams, TrainConfig};
use segrsd_core::metrics::{hungarian_accuracy, mae_minutes, LabelMapping};
use segrsd_core::rng::derive_seed;
use segrsd_core::rsd::{
    default_train_config, naive_prediction, predict_video, train_rsd, AuxTask, CorridorParams, Pipeline,
    PipelineMode, RsdArch, RsdLoss, RsdParams, RsdRun, RsdSetup,
};
use segrsd_core::seg_trainer::SegCheckpoint;
use segrsd_core::{Corpus, Split};

use crate::checkpoint::RsdCheckpoint;
use crate::error::{DataError, Result};
use crate::report::{aux_name, loss_name, pipeline_name};

/// MAE in minutes of `params` on a split; `None` when the split is empty.
pub fn split_mae(params: &RsdParams, corpus: &Corpus, split: Split) -> Result<Option<f64>> {
    let videos = corpus.videos_in(split);
    if videos.is_empty() {
        return Ok(None);
    }
    let preds = videos
        .iter()
        .map(|v| predict_video(params, v))
        .collect::<segrsd_core::Result<Vec<_>>>()?;
    Ok(Some(mae_minutes(&preds, &videos)?))
}

/// MAE of the naive median predictor `max(t_median - t, 0)`.
pub fn naive_mae(corpus: &Corpus, cp: &CorridorParams, split: Split) -> Result<Option<f64>> {
    let videos = corpus.videos_in(split);
    if videos.is_empty() {
        return Ok(None);
    }
    let preds: Vec<Vec<f64>> = videos
        .iter()
        .map(|v| (0..v.len()).map(|t| naive_prediction(v.elapsed_min(t), cp)).collect())
        .collect();
    Ok(Some(mae_minutes(&preds, &videos)?))
}

/// Framewise accuracy of the predicted subactivities against the reference
/// phases after the majority mapping, pooled over all frames of the split.
/// `None` when no video of the split has reference phases.
pub fn segmentation_accuracy(
    params: &AppearanceParams,
    corpus: &Corpus,
    split: Split,
) -> Result<Option<LabelMapping>> {
    let mut pred = Vec::new();
    let mut reference = Vec::new();
    for v in corpus.videos_in(split) {
        if let Some(phases) = &v.phase_labels {
            pred.extend(predict_labels(params, v)?);
            reference.extend_from_slice(phases);
        }
    }
    if pred.is_empty() {
        return Ok(None);
    }
    Ok(Some(hungarian_accuracy(&pred, &reference)?))
}

/// Writes `id,frame,rsd_min` lines for every video in `corpus` order.
pub fn write_predictions(path: &Path, preds: &BTreeMap<String, Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["id", "frame", "rsd_min"]).map_err(|e| csv_io(path, e))?;
    for (id, values) in preds {
        for (t, v) in values.iter().enumerate() {
            w.write_record([id.clone(), t.to_string(), format!("{v:?}")])
                .map_err(|e| csv_io(path, e))?;
        }
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

/// Reads a predictions file written by [`write_predictions`]. Frames of a
/// video have to be listed in order starting from 0.
pub fn read_predictions(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for record in r.records() {
        let record = record.map_err(|e| csv_io(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let parse_err = |msg: String| DataError::Parse {
            path: path.into(),
            line,
            msg,
        };
        if record.len() != 3 {
            return Err(parse_err(format!("expected 3 fields, found {}", record.len())));
        }
        let frame: usize = record[1].parse().map_err(|e| parse_err(format!("frame: {e}")))?;
        let value: f64 = record[2].parse().map_err(|e| parse_err(format!("rsd_min: {e}")))?;
        let entry = out.entry(record[0].to_string()).or_default();
        if frame != entry.len() {
            return Err(parse_err(format!("frame {frame} out of order, expected {}", entry.len())));
        }
        entry.push(value);
    }
    Ok(out)
}

fn csv_io(path: &Path, e: csv::Error) -> DataError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DataError::io(path, io),
        other => DataError::Parse {
            path: path.into(),
            line,
            msg: format!("{other:?}"),
        },
    }
}

/// MAE of externally produced predictions on one split.
pub fn predictions_mae(preds: &BTreeMap<String, Vec<f64>>, corpus: &Corpus, split: Split) -> Result<Option<f64>> {
    let videos = corpus.videos_in(split);
    if videos.is_empty() {
        return Ok(None);
    }
    let rows = videos
        .iter()
        .map(|v| {
            preds
                .get(&v.id)
                .cloned()
                .ok_or_else(|| DataError::Usage(format!("no predictions for video {}", v.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(mae_minutes(&rows, &videos)?))
}

/// Training options shared by the CLI commands.
#[derive(Debug, Clone, PartialEq)]
pub struct RsdOptions {
    pub arch: RsdArch,
    pub aux_weight: f64,
    /// Overrides the per-pipeline default epoch count.
    pub epochs: Option<usize>,
    pub aux_encoder_epochs: Option<usize>,
    pub batch_size: Option<usize>,
}

impl Default for RsdOptions {
    fn default() -> Self {
        Self {
            arch: RsdArch::default(),
            aux_weight: 1.0,
            epochs: None,
            aux_encoder_epochs: None,
            batch_size: None,
        }
    }
}

pub fn rsd_train_config(pipeline: Pipeline, seed: u64, opts: &RsdOptions) -> TrainConfig {
    let mut cfg = default_train_config(pipeline, seed);
    if let Some(e) = opts.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = opts.batch_size {
        cfg.batch_size = b;
    }
    cfg
}

/// Trains one RSD model and packs it as a checkpoint.
pub fn train_rsd_checkpoint(
    corpus: &Corpus,
    mode: PipelineMode,
    loss: RsdLoss,
    init: Option<&SegCheckpoint>,
    opts: &RsdOptions,
    seed: u64,
    cp: &CorridorParams,
) -> Result<(RsdCheckpoint, RsdRun)> {
    let setup = RsdSetup {
        mode,
        loss,
        init,
        arch: opts.arch.clone(),
        aux_weight: opts.aux_weight,
        aux_encoder_epochs: opts.aux_encoder_epochs,
    };
    let cfg = rsd_train_config(mode.pipeline, seed, opts);
    let run = train_rsd(corpus, &setup, &cfg, cp)?;
    if let Some(e) = &run.error {
        if run.history.is_empty() {
            return Err(DataError::Core(e.clone()));
        }
    }
    let ck = RsdCheckpoint {
        params: run.params.clone(),
        corridor: *cp,
        mode,
        loss,
        best_epoch: run.best_epoch,
    };
    Ok((ck, run))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BaselineCell {
    pub pipeline: Pipeline,
    pub aux: AuxTask,
    pub loss: RsdLoss,
}

impl BaselineCell {
    pub fn key(&self) -> String {
        format!(
            "{}/{}/{}",
            pipeline_name(self.pipeline),
            aux_name(self.aux),
            loss_name(self.loss)
        )
    }
}

/// Single-task without an auxiliary task plus every transfer pipeline with
/// the uniform, progress and phase tasks (and the learned segmentation when
/// `with_seg`), each under both losses.
pub fn baseline_grid(with_seg: bool) -> Vec<BaselineCell> {
    let mut auxes = vec![AuxTask::Uniform, AuxTask::Progress, AuxTask::Phase];
    if with_seg {
        auxes.insert(0, AuxTask::LearnedSeg);
    }
    let mut cells = Vec::new();
    for loss in [RsdLoss::SmoothL1, RsdLoss::CorrSmoothL1] {
        cells.push(BaselineCell {
            pipeline: Pipeline::SingleTask,
            aux: AuxTask::None,
            loss,
        });
        for pipeline in [Pipeline::FeatureExtraction, Pipeline::Pretraining, Pipeline::Regularization] {
            for &aux in &auxes {
                cells.push(BaselineCell { pipeline, aux, loss });
            }
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub cell: BaselineCell,
    /// Test MAE per repetition (validation MAE when there is no test split).
    pub mae: Vec<f64>,
}

/// Runs every cell `repeats` times with seeds derived from `seed`, the cell
/// and the repetition. Cells run in parallel; the result order follows
/// `cells`.
pub fn run_baselines(
    corpus: &Corpus,
    cells: &[BaselineCell],
    repeats: usize,
    seed: u64,
    init: Option<&SegCheckpoint>,
    opts: &RsdOptions,
) -> Result<Vec<BaselineResult>> {
    if repeats == 0 {
        return Err(DataError::Usage("--repeats must be at least 1".into()));
    }
    let cp = CorridorParams::from_corpus(corpus)?;
    let split = if corpus.videos_in(Split::Test).is_empty() {
        Split::Val
    } else {
        Split::Test
    };
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..repeats).map(move |r| (c, r))).collect();
    let maes = jobs
        .par_iter()
        .map(|&(c, r)| {
            let cell = cells[c];
            let mode = PipelineMode::new(cell.pipeline, cell.aux)?;
            let s = derive_seed(seed, &cell.key(), r as u64);
            let (ck, _) = train_rsd_checkpoint(corpus, mode, cell.loss, init, opts, s, &cp)?;
            split_mae(&ck.params, corpus, split)?
                .ok_or_else(|| DataError::Usage("corpus has neither a test nor a validation split".into()))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(cells
        .iter()
        .enumerate()
        .map(|(c, &cell)| BaselineResult {
            cell,
            mae: maes[c * repeats..(c + 1) * repeats].to_vec(),
        })
        .collect())
}
