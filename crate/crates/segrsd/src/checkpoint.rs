//! Versioned binary checkpoints for segmentation and RSD models.
//!
//! Layout: `"SEGRSDCK" | version: u32 | kind: u8 | payload`, little-endian
//! throughout. Floats are stored as raw bits so a round trip is exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use segrsd_core::appearance::{AppearanceParams, Dense, Encoder};
use segrsd_core::lengths::LengthModel;
use segrsd_core::mallows::MallowsModel;
use segrsd_core::rsd::{AuxHead, AuxTask, CorridorParams, Pipeline, PipelineMode, RsdLoss, RsdParams};
use segrsd_core::seg_trainer::SegCheckpoint;
use segrsd_core::{LabelSequence, Matrix};

use crate::error::{DataError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SEGRSDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const KIND_SEG: u8 = 1;
const KIND_RSD: u8 = 2;

/// A trained RSD model with what is needed to evaluate it again.
#[derive(Debug, Clone, PartialEq)]
pub struct RsdCheckpoint {
    pub params: RsdParams,
    pub corridor: CorridorParams,
    pub mode: PipelineMode,
    pub loss: RsdLoss,
    pub best_epoch: Option<usize>,
}

/// Shape a loaded model has to agree with. `None` fields are not checked.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Expected {
    pub dim: Option<usize>,
    pub k: Option<usize>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.len(v.len());
        for &x in v {
            self.f64(x);
        }
    }
    fn usizes(&mut self, v: &[usize]) {
        self.len(v.len());
        for &x in v {
            self.len(x);
        }
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn bools(&mut self, v: &[bool]) {
        self.len(v.len());
        for &b in v {
            self.u8(u8::from(b));
        }
    }
    fn dense(&mut self, d: &Dense) {
        self.len(d.weights.rows());
        self.len(d.weights.cols());
        for &x in d.weights.as_slice() {
            self.f64(x);
        }
        self.f64s(&d.bias);
    }
    fn encoder(&mut self, e: &Encoder) {
        self.f64(e.context_lambda);
        self.len(e.layers.len());
        for l in &e.layers {
            self.dense(l);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(DataError::Truncated { path: self.path.into() });
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        // any count larger than the remaining bytes is corrupt
        if v > self.bytes.len() as u64 * 8 + 64 {
            return Err(DataError::Truncated { path: self.path.into() });
        }
        Ok(v as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.len()?;
        (0..n).map(|_| self.len()).collect()
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.corrupt("string is not UTF-8"))
    }
    fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(self.corrupt(&format!("boolean byte {other}"))),
        }
    }
    fn bools(&mut self) -> Result<Vec<bool>> {
        let n = self.len()?;
        (0..n).map(|_| self.bool()).collect()
    }
    fn dense(&mut self) -> Result<Dense> {
        let rows = self.len()?;
        let cols = self.len()?;
        let n = rows
            .checked_mul(cols)
            .filter(|&n| n <= self.bytes.len() / 8)
            .ok_or_else(|| DataError::Truncated { path: self.path.into() })?;
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        let bias = self.f64s()?;
        if bias.len() != rows {
            return Err(self.corrupt("bias length differs from layer width"));
        }
        Ok(Dense {
            weights: Matrix::from_vec(rows, cols, data),
            bias,
        })
    }
    fn encoder(&mut self) -> Result<Encoder> {
        let context_lambda = self.f64()?;
        let n = self.len()?;
        let layers = (0..n).map(|_| self.dense()).collect::<Result<Vec<_>>>()?;
        Ok(Encoder { layers, context_lambda })
    }
    fn corrupt(&self, msg: &str) -> DataError {
        DataError::Parse {
            path: self.path.into(),
            line: 0,
            msg: msg.to_string(),
        }
    }
}

fn header(kind: u8) -> Writer {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u8(kind);
    w
}

fn open<'a>(bytes: &'a [u8], path: &'a Path, kind: u8) -> Result<Reader<'a>> {
    let mut r = Reader { bytes, path };
    let magic = r.take(8).map_err(|_| DataError::BadMagic { path: path.into() })?;
    if magic != CHECKPOINT_MAGIC {
        return Err(DataError::BadMagic { path: path.into() });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(DataError::VersionMismatch {
            path: path.into(),
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let found = r.u8()?;
    if found != kind {
        let name = |k| match k {
            KIND_SEG => "segmentation",
            KIND_RSD => "RSD",
            _ => "unknown",
        };
        return Err(DataError::ShapeMismatch(format!(
            "{}: expected a {} checkpoint, found {}",
            path.display(),
            name(kind),
            name(found)
        )));
    }
    Ok(r)
}

fn finish(r: &Reader<'_>) -> Result<()> {
    if r.bytes.is_empty() {
        Ok(())
    } else {
        Err(r.corrupt("trailing bytes after the checkpoint"))
    }
}

fn check_shape(path: &Path, what: &str, expected: Option<usize>, found: usize) -> Result<()> {
    match expected {
        Some(e) if e != found => Err(DataError::ShapeMismatch(format!(
            "{}: {what} is {found}, expected {e}",
            path.display()
        ))),
        _ => Ok(()),
    }
}

fn input_dim(e: &Encoder) -> usize {
    e.layers.first().map_or(0, |l| l.weights.cols())
}

pub fn encode_seg_checkpoint(ck: &SegCheckpoint) -> Vec<u8> {
    let mut w = header(KIND_SEG);
    w.len(ck.iteration);
    w.f64(ck.tc_score);
    w.encoder(&ck.appearance.encoder);
    w.dense(&ck.appearance.head);
    w.bools(&ck.appearance.trainable);
    w.len(ck.mallows.k);
    w.f64s(&ck.mallows.rho);
    w.f64(ck.mallows.prior_strength);
    w.f64(ck.mallows.prior_mean);
    w.len(ck.lengths.k);
    w.f64s(&ck.lengths.theta);
    w.f64(ck.lengths.alpha);
    w.len(ck.labels.len());
    for (id, labels) in &ck.labels {
        w.str(id);
        w.usizes(labels.as_slice());
    }
    w.0
}

pub fn decode_seg_checkpoint(bytes: &[u8], path: &Path, expect: Expected) -> Result<SegCheckpoint> {
    let mut r = open(bytes, path, KIND_SEG)?;
    let iteration = r.len()?;
    let tc_score = r.f64()?;
    let encoder = r.encoder()?;
    let head = r.dense()?;
    let trainable = r.bools()?;
    let mallows_k = r.len()?;
    let rho = r.f64s()?;
    let prior_strength = r.f64()?;
    let prior_mean = r.f64()?;
    let lengths_k = r.len()?;
    let theta = r.f64s()?;
    let alpha = r.f64()?;
    let n = r.len()?;
    let mut labels = BTreeMap::new();
    for _ in 0..n {
        let id = r.str()?;
        labels.insert(id, LabelSequence(r.usizes()?));
    }
    finish(&r)?;

    let appearance = AppearanceParams {
        encoder,
        head,
        trainable,
    };
    appearance.validate()?;
    let k = appearance.k();
    check_shape(path, "input dimension", expect.dim, input_dim(&appearance.encoder))?;
    check_shape(path, "K", expect.k, k)?;
    if mallows_k != k || lengths_k != k || theta.len() != k {
        return Err(DataError::ShapeMismatch(format!(
            "{}: temporal model does not match the {k}-class appearance model",
            path.display()
        )));
    }
    let mallows = MallowsModel::new(k, rho, prior_strength, prior_mean)?;
    let lengths = LengthModel::new(theta, alpha)?;
    if labels.values().any(|l| l.as_slice().iter().any(|&x| x >= k)) {
        return Err(DataError::ShapeMismatch(format!("{}: label out of range for K = {k}", path.display())));
    }
    Ok(SegCheckpoint {
        iteration,
        appearance,
        mallows,
        lengths,
        labels,
        tc_score,
    })
}

fn pipeline_code(p: Pipeline) -> u8 {
    match p {
        Pipeline::FeatureExtraction => 0,
        Pipeline::Pretraining => 1,
        Pipeline::Regularization => 2,
        Pipeline::SingleTask => 3,
    }
}

fn aux_code(a: AuxTask) -> u8 {
    match a {
        AuxTask::None => 0,
        AuxTask::LearnedSeg => 1,
        AuxTask::Uniform => 2,
        AuxTask::Progress => 3,
        AuxTask::Phase => 4,
    }
}

pub fn encode_rsd_checkpoint(ck: &RsdCheckpoint) -> Vec<u8> {
    let mut w = header(KIND_RSD);
    w.u8(pipeline_code(ck.mode.pipeline));
    w.u8(aux_code(ck.mode.aux));
    w.u8(match ck.loss {
        RsdLoss::SmoothL1 => 0,
        RsdLoss::CorrSmoothL1 => 1,
    });
    match ck.best_epoch {
        Some(e) => {
            w.u8(1);
            w.len(e);
        }
        None => w.u8(0),
    }
    w.f64(ck.corridor.t_median);
    w.f64(ck.corridor.scale);
    w.f64(ck.corridor.beta);
    let p = &ck.params;
    w.encoder(&p.encoder);
    w.dense(&p.hidden);
    w.dense(&p.output);
    match &p.aux {
        None => w.u8(0),
        Some(AuxHead::Classes(d)) => {
            w.u8(1);
            w.dense(d);
        }
        Some(AuxHead::Progress(d)) => {
            w.u8(2);
            w.dense(d);
        }
    }
    w.bools(&p.trainable);
    w.f64(p.aux_weight);
    w.f64(p.scale);
    w.0
}

pub fn decode_rsd_checkpoint(bytes: &[u8], path: &Path, expect: Expected) -> Result<RsdCheckpoint> {
    let mut r = open(bytes, path, KIND_RSD)?;
    let pipeline = match r.u8()? {
        0 => Pipeline::FeatureExtraction,
        1 => Pipeline::Pretraining,
        2 => Pipeline::Regularization,
        3 => Pipeline::SingleTask,
        other => return Err(r.corrupt(&format!("pipeline code {other}"))),
    };
    let aux = match r.u8()? {
        0 => AuxTask::None,
        1 => AuxTask::LearnedSeg,
        2 => AuxTask::Uniform,
        3 => AuxTask::Progress,
        4 => AuxTask::Phase,
        other => return Err(r.corrupt(&format!("auxiliary task code {other}"))),
    };
    let loss = match r.u8()? {
        0 => RsdLoss::SmoothL1,
        1 => RsdLoss::CorrSmoothL1,
        other => return Err(r.corrupt(&format!("loss code {other}"))),
    };
    let best_epoch = if r.bool()? { Some(r.len()?) } else { None };
    let corridor = CorridorParams {
        t_median: r.f64()?,
        scale: r.f64()?,
        beta: r.f64()?,
    };
    let encoder = r.encoder()?;
    let hidden = r.dense()?;
    let output = r.dense()?;
    let aux_head = match r.u8()? {
        0 => None,
        1 => Some(AuxHead::Classes(r.dense()?)),
        2 => Some(AuxHead::Progress(r.dense()?)),
        other => return Err(r.corrupt(&format!("auxiliary head code {other}"))),
    };
    let trainable = r.bools()?;
    let aux_weight = r.f64()?;
    let scale = r.f64()?;
    finish(&r)?;

    let mode = PipelineMode::new(pipeline, aux)?;
    let params = RsdParams {
        encoder,
        hidden,
        output,
        aux: aux_head,
        trainable,
        aux_weight,
        scale,
    };
    params.validate()?;
    corridor.validate()?;
    check_shape(path, "input dimension", expect.dim, input_dim(&params.encoder))?;
    if let (Some(k), Some(AuxHead::Classes(d))) = (expect.k, &params.aux) {
        check_shape(path, "K", Some(k), d.weights.rows())?;
    }
    Ok(RsdCheckpoint {
        params,
        corridor,
        mode,
        loss,
        best_epoch,
    })
}

pub fn save_seg_checkpoint(path: &Path, ck: &SegCheckpoint) -> Result<()> {
    fs::write(path, encode_seg_checkpoint(ck)).map_err(|e| DataError::io(path, e))
}

pub fn load_seg_checkpoint(path: &Path, expect: Expected) -> Result<SegCheckpoint> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_seg_checkpoint(&bytes, path, expect)
}

pub fn save_rsd_checkpoint(path: &Path, ck: &RsdCheckpoint) -> Result<()> {
    fs::write(path, encode_rsd_checkpoint(ck)).map_err(|e| DataError::io(path, e))
}

pub fn load_rsd_checkpoint(path: &Path, expect: Expected) -> Result<RsdCheckpoint> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_rsd_checkpoint(&bytes, path, expect)
}
