//! Feature files, the corpus manifest and plain-text import.
//!
//! A feature file is
//!
//! ```text
//! "SEGRSD01" | T: u32 | D: u32 | frame_period_s: f64 | has_phases: u8
//! | T*D f64 (row-major) | T u16 phase labels if has_phases
//! ```
//!
//! with every number little-endian. The manifest `manifest.txt` holds a
//! `# dim <D>` line followed by one `<id> <relative-path> <split>` line per
//! video.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use segrsd_core::{Corpus, Matrix, Split, VideoSequence};

use crate::error::{DataError, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"SEGRSD01";
pub const MANIFEST: &str = "manifest.txt";
const HEADER_LEN: usize = 8 + 4 + 4 + 8 + 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureFileHeader {
    pub frames: u32,
    pub dim: u32,
    pub frame_period_s: f64,
    pub has_phases: bool,
}

pub fn encode_video(video: &VideoSequence) -> Result<Vec<u8>> {
    let (t, d) = (video.len(), video.dim());
    let too_big = |what: &str| DataError::ShapeMismatch(format!("{what} of video {} does not fit in 32 bits", video.id));
    let frames = u32::try_from(t).map_err(|_| too_big("frame count"))?;
    let dim = u32::try_from(d).map_err(|_| too_big("dimension"))?;
    let mut out = Vec::with_capacity(HEADER_LEN + t * d * 8 + t * 2);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&frames.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&video.frame_period_s.to_le_bytes());
    out.push(u8::from(video.phase_labels.is_some()));
    for v in video.features.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(phases) = &video.phase_labels {
        for &p in phases {
            let p = u16::try_from(p)
                .map_err(|_| DataError::ShapeMismatch(format!("phase label {p} of video {} exceeds u16", video.id)))?;
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, path: &Path) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(DataError::Truncated { path: path.into() });
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn read_header(bytes: &[u8], path: &Path) -> Result<FeatureFileHeader> {
    let mut b = bytes;
    let magic = take(&mut b, 8, path).map_err(|_| DataError::BadMagic { path: path.into() })?;
    if magic != FEATURE_MAGIC {
        return Err(DataError::BadMagic { path: path.into() });
    }
    let frames = u32::from_le_bytes(take(&mut b, 4, path)?.try_into().unwrap());
    let dim = u32::from_le_bytes(take(&mut b, 4, path)?.try_into().unwrap());
    let frame_period_s = f64::from_le_bytes(take(&mut b, 8, path)?.try_into().unwrap());
    let has_phases = match take(&mut b, 1, path)?[0] {
        0 => false,
        1 => true,
        other => {
            return Err(DataError::Parse {
                path: path.into(),
                line: 0,
                msg: format!("phase flag must be 0 or 1, found {other}"),
            })
        }
    };
    if frames == 0 || dim == 0 {
        return Err(DataError::ShapeMismatch(format!("{}: empty feature matrix", path.display())));
    }
    Ok(FeatureFileHeader {
        frames,
        dim,
        frame_period_s,
        has_phases,
    })
}

pub fn decode_video(id: &str, bytes: &[u8], path: &Path) -> Result<VideoSequence> {
    let h = read_header(bytes, path)?;
    let (t, d) = (h.frames as usize, h.dim as usize);
    let mut b = &bytes[HEADER_LEN..];
    let payload = take(&mut b, t * d * 8, path)?;
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let phases = if h.has_phases {
        let raw = take(&mut b, t * 2, path)?;
        Some(
            raw.chunks_exact(2)
                .map(|c| usize::from(u16::from_le_bytes(c.try_into().unwrap())))
                .collect(),
        )
    } else {
        None
    };
    if !b.is_empty() {
        return Err(DataError::ShapeMismatch(format!(
            "{}: {} trailing bytes after the payload",
            path.display(),
            b.len()
        )));
    }
    Ok(VideoSequence::new(id, Matrix::from_vec(t, d, data), h.frame_period_s, phases)?)
}

pub fn write_video(path: &Path, video: &VideoSequence) -> Result<()> {
    fs::write(path, encode_video(video)?).map_err(|e| DataError::io(path, e))
}

pub fn read_video(path: &Path, id: &str) -> Result<VideoSequence> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_video(id, &bytes, path)
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        && !id.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(DataError::Usage(format!(
            "video id {id:?} must be non-empty and use only letters, digits, '_', '-' or '.'"
        )))
    }
}

/// Writes every video to `<dir>/features/<id>.bin` plus the manifest.
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    let features = dir.join("features");
    fs::create_dir_all(&features).map_err(|e| DataError::io(&features, e))?;
    let dim = corpus
        .dim()
        .ok_or_else(|| DataError::Usage("cannot save an empty corpus".into()))?;
    let mut manifest = format!("# dim {dim}\n");
    for v in &corpus.videos {
        check_id(&v.id)?;
        let rel = format!("features/{}.bin", v.id);
        write_video(&dir.join(&rel), v)?;
        let split = corpus
            .split_of(&v.id)
            .ok_or_else(|| DataError::Usage(format!("video {} has no split", v.id)))?;
        manifest.push_str(&format!("{} {} {}\n", v.id, rel, split.as_str()));
    }
    let path = dir.join(MANIFEST);
    let mut f = fs::File::create(&path).map_err(|e| DataError::io(&path, e))?;
    f.write_all(manifest.as_bytes()).map_err(|e| DataError::io(&path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub split: Split,
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<(Option<usize>, Vec<ManifestEntry>)> {
    let mut dim = None;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        let err = |msg: String| DataError::Parse {
            path: path.into(),
            line: i + 1,
            msg,
        };
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let mut parts = comment.split_whitespace();
            if parts.next() == Some("dim") {
                let d = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| err("malformed dim line".into()))?;
                dim = Some(d);
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [id, rel, split] = fields[..] else {
            return Err(err(format!("expected `<id> <path> <split>`, found {} fields", fields.len())));
        };
        let split = Split::parse(split).ok_or_else(|| err(format!("unknown split {split:?}")))?;
        entries.push(ManifestEntry {
            id: id.to_string(),
            path: PathBuf::from(rel),
            split,
        });
    }
    Ok((dim, entries))
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| DataError::io(&mpath, e))?;
    let (dim, entries) = parse_manifest(&text, &mpath)?;
    if entries.is_empty() {
        return Err(DataError::Parse {
            path: mpath,
            line: 0,
            msg: "manifest lists no videos".into(),
        });
    }
    let mut videos = Vec::with_capacity(entries.len());
    let mut split = BTreeMap::new();
    let mut expected = dim;
    for e in entries {
        let path = dir.join(&e.path);
        let v = read_video(&path, &e.id)?;
        match expected {
            Some(d) if d != v.dim() => {
                return Err(DataError::DimensionMismatch {
                    path,
                    expected: d,
                    found: v.dim(),
                })
            }
            None => expected = Some(v.dim()),
            _ => {}
        }
        split.insert(e.id, e.split);
        videos.push(v);
    }
    Ok(Corpus::new(videos, split)?)
}

/// One video from comma-separated text, one frame per line. Blank lines
/// and lines starting with `#` are skipped.
pub fn import_csv(path: &Path, id: &str, frame_period_s: f64) -> Result<VideoSequence> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row = record
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| DataError::Parse {
                path: path.into(),
                line,
                msg: e.to_string(),
            })?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DataError::Parse {
            path: path.into(),
            line: 0,
            msg: "no frames".into(),
        });
    }
    Ok(VideoSequence::new(id, Matrix::from_rows(&rows), frame_period_s, None)?)
}

fn csv_error(path: &Path, e: csv::Error) -> DataError {
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
