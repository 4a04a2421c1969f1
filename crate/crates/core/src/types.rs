//! Domain types shared by every stage of the pipeline.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;

/// One recorded procedure: a `T x D` matrix of per-frame features.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    pub id: String,
    pub features: Matrix,
    pub frame_period_s: f64,
    /// Reference surgical phases, one per frame. Only used by the phase
    /// baseline and by evaluation.
    pub phase_labels: Option<Vec<usize>>,
}

impl VideoSequence {
    pub fn new(
        id: impl Into<String>,
        features: Matrix,
        frame_period_s: f64,
        phase_labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let id = id.into();
        if features.rows() < 2 {
            return Err(Error::TooShort {
                id,
                frames: features.rows(),
                needed: 2,
            });
        }
        if features.cols() == 0 {
            return Err(invalid(format!("video {id} has zero feature dimensions")));
        }
        if !(frame_period_s > 0.0 && frame_period_s.is_finite()) {
            return Err(invalid(format!("video {id}: frame period must be positive")));
        }
        if !features.is_finite() {
            return Err(invalid(format!("video {id} has non-finite features")));
        }
        if let Some(p) = &phase_labels {
            if p.len() != features.rows() {
                return Err(Error::DimensionMismatch {
                    what: "phase labels",
                    expected: features.rows(),
                    found: p.len(),
                });
            }
        }
        Ok(Self {
            id,
            features,
            frame_period_s,
            phase_labels,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Total duration in minutes.
    pub fn duration_min(&self) -> f64 {
        self.len() as f64 * self.frame_period_s / 60.0
    }

    /// Elapsed minutes at the start of frame `t`.
    #[inline]
    pub fn elapsed_min(&self, t: usize) -> f64 {
        t as f64 * self.frame_period_s / 60.0
    }

    /// Ground-truth remaining duration at frame `t`, in minutes.
    #[inline]
    pub fn remaining_min(&self, t: usize) -> f64 {
        self.duration_min() - self.elapsed_min(t)
    }
}

/// Frame-wise subactivity labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelSequence(pub Vec<usize>);

impl LabelSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Maximal runs of equal labels as `(label, run length)`.
    pub fn runs(&self) -> Vec<(usize, usize)> {
        labels_to_runs(&self.0)
    }
}

/// Maximal runs of equal labels; concatenating the runs reproduces `labels`.
pub fn labels_to_runs(labels: &[usize]) -> Vec<(usize, usize)> {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for &l in labels {
        match runs.last_mut() {
            Some((last, n)) if *last == l => *n += 1,
            _ => runs.push((l, 1)),
        }
    }
    runs
}

/// An ordering of distinct subactivities with positive lengths.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Segmentation {
    k: usize,
    segments: Vec<(usize, usize)>,
}

impl Segmentation {
    pub fn new(k: usize, segments: Vec<(usize, usize)>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::EmptyInput("segmentation"));
        }
        let mut seen = alloc::vec![false; k];
        for &(id, len) in &segments {
            if id >= k {
                return Err(invalid(format!("subactivity {id} out of range for K={k}")));
            }
            if len == 0 {
                return Err(invalid("segment length must be at least 1"));
            }
            if seen[id] {
                return Err(invalid(format!("subactivity {id} appears twice")));
            }
            seen[id] = true;
        }
        Ok(Self { k, segments })
    }

    /// Builds from trusted parts; callers guarantee the invariants.
    pub(crate) fn from_parts_unchecked(k: usize, segments: Vec<(usize, usize)>) -> Self {
        debug_assert!(Self::new(k, segments.clone()).is_ok());
        Self { k, segments }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn segments(&self) -> &[(usize, usize)] {
        &self.segments
    }

    pub fn num_frames(&self) -> usize {
        self.segments.iter().map(|s| s.1).sum()
    }

    /// Subactivity ids in temporal order.
    pub fn order(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.0).collect()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.1).collect()
    }

    pub fn to_labels(&self) -> LabelSequence {
        segmentation_to_labels(self)
    }
}

/// Expands a segmentation to one label per frame.
pub fn segmentation_to_labels(seg: &Segmentation) -> LabelSequence {
    let mut out = Vec::with_capacity(seg.num_frames());
    for &(id, len) in seg.segments() {
        out.extend(core::iter::repeat_n(id, len));
    }
    LabelSequence(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// A set of videos with uniform feature dimension and a video-level split.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub videos: Vec<VideoSequence>,
    pub split: BTreeMap<String, Split>,
}

impl Corpus {
    pub fn new(videos: Vec<VideoSequence>, split: BTreeMap<String, Split>) -> Result<Self> {
        if let Some(first) = videos.first() {
            let d = first.dim();
            for v in &videos {
                if v.dim() != d {
                    return Err(Error::DimensionMismatch {
                        what: "corpus feature dimension",
                        expected: d,
                        found: v.dim(),
                    });
                }
            }
        }
        let mut ids = BTreeMap::new();
        for v in &videos {
            if ids.insert(v.id.as_str(), ()).is_some() {
                return Err(invalid(format!("duplicate video id {}", v.id)));
            }
        }
        for id in split.keys() {
            if !ids.contains_key(id.as_str()) {
                return Err(invalid(format!("split names unknown video {id}")));
            }
        }
        Ok(Self { videos, split })
    }

    pub fn dim(&self) -> Option<usize> {
        self.videos.first().map(VideoSequence::dim)
    }

    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.split.get(id).copied()
    }

    /// Videos assigned to `split`, in corpus order.
    pub fn videos_in(&self, split: Split) -> Vec<&VideoSequence> {
        self.videos
            .iter()
            .filter(|v| self.split_of(&v.id) == Some(split))
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<&VideoSequence> {
        self.videos.iter().find(|v| v.id == id)
    }
}
