//! The `#metasim v1` line-oriented dataset format.
//!
//! ```text
//! #metasim v1 dim=<D> n=<N> labels=<0|1> cameras=<0|1>
//! <uid>,<label|->,<camera|->,<v1>,...,<vD>
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so a save/load
//! cycle reproduces every `f64` bit for bit.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use super::{DataError, Sample};
use crate::embed::EmbeddingModel;
use crate::fsutil::atomic_write;
use crate::numcore::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetFile {
    pub dim: usize,
    pub has_labels: bool,
    pub has_cameras: bool,
    pub samples: Vec<Sample>,
}

impl DatasetFile {
    /// Builds a file record, deriving the label/camera flags from the samples.
    pub fn from_samples(dim: usize, samples: Vec<Sample>) -> Self {
        Self {
            dim,
            has_labels: samples.iter().any(|s| s.label.is_some()),
            has_cameras: samples.iter().any(|s| s.camera.is_some()),
            samples,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "#metasim v{} dim={} n={} labels={} cameras={}\n",
            FORMAT_VERSION,
            self.dim,
            self.samples.len(),
            u8::from(self.has_labels),
            u8::from(self.has_cameras)
        );
        for s in &self.samples {
            write_row(&mut out, s);
        }
        out
    }
}

fn write_opt(out: &mut String, v: Option<u32>) {
    match v {
        Some(v) => write!(out, "{v}").expect("write to string"),
        None => out.push('-'),
    }
}

fn write_row(out: &mut String, s: &Sample) {
    write!(out, "{},", s.uid).expect("write to string");
    write_opt(out, s.label);
    out.push(',');
    write_opt(out, s.camera);
    for v in &s.feature {
        write!(out, ",{v:?}").expect("write to string");
    }
    out.push('\n');
}

struct Header {
    dim: usize,
    n: usize,
    labels: bool,
    cameras: bool,
}

fn parse_header(line: &str) -> Result<Header, DataError> {
    let err = |msg: &str| DataError::Header {
        line: 1,
        msg: msg.to_string(),
    };
    let mut parts = line.split_whitespace();
    if parts.next() != Some("#metasim") {
        return Err(err("expected `#metasim` magic"));
    }
    let version = parts.next().ok_or_else(|| err("missing version"))?;
    if version != format!("v{FORMAT_VERSION}") {
        return Err(err(&format!("unsupported version `{version}`")));
    }
    let (mut dim, mut n, mut labels, mut cameras) = (None, None, None, None);
    for kv in parts {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| err(&format!("expected key=value, got `{kv}`")))?;
        let num: usize = v
            .parse()
            .map_err(|_| err(&format!("`{k}` is not an integer: `{v}`")))?;
        let flag = |num: usize| match num {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(err(&format!("`{k}` must be 0 or 1"))),
        };
        match k {
            "dim" => dim = Some(num),
            "n" => n = Some(num),
            "labels" => labels = Some(flag(num)?),
            "cameras" => cameras = Some(flag(num)?),
            _ => return Err(err(&format!("unknown key `{k}`"))),
        }
    }
    Ok(Header {
        dim: dim.ok_or_else(|| err("missing dim"))?,
        n: n.ok_or_else(|| err("missing n"))?,
        labels: labels.ok_or_else(|| err("missing labels"))?,
        cameras: cameras.ok_or_else(|| err("missing cameras"))?,
    })
}

fn parse_opt(field: &str, line: usize, what: &str) -> Result<Option<u32>, DataError> {
    if field == "-" {
        return Ok(None);
    }
    field.parse().map(Some).map_err(|_| DataError::Row {
        line,
        msg: format!("bad {what} `{field}`"),
    })
}

/// Parses dataset text. Line numbers in errors are 1-based.
pub fn parse_dataset(text: &str) -> Result<DatasetFile, DataError> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or(DataError::Header {
        line: 1,
        msg: "empty file".into(),
    })?;
    let header = parse_header(first)?;

    let mut samples = Vec::with_capacity(header.n);
    let mut seen = HashSet::with_capacity(header.n);
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() < 3 {
            return Err(DataError::Row {
                line,
                msg: "expected uid,label,camera,values...".into(),
            });
        }
        let found = fields.len() - 3;
        if found != header.dim {
            return Err(DataError::Dimension {
                line,
                expected: header.dim,
                found,
            });
        }
        let uid: u64 = fields[0].parse().map_err(|_| DataError::Row {
            line,
            msg: format!("bad uid `{}`", fields[0]),
        })?;
        if !seen.insert(uid) {
            return Err(DataError::DuplicateUid { line, uid });
        }
        let label = parse_opt(fields[1], line, "label")?;
        let camera = parse_opt(fields[2], line, "camera")?;
        if label.is_some() && !header.labels {
            return Err(DataError::Row {
                line,
                msg: "label present but header declares labels=0".into(),
            });
        }
        if camera.is_some() && !header.cameras {
            return Err(DataError::Row {
                line,
                msg: "camera present but header declares cameras=0".into(),
            });
        }
        let feature = fields[3..]
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| DataError::Row {
                    line,
                    msg: format!("bad value `{f}`"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        samples.push(Sample {
            uid,
            label,
            camera,
            feature,
        });
    }
    if samples.len() != header.n {
        return Err(DataError::RowCount {
            expected: header.n,
            found: samples.len(),
        });
    }
    Ok(DatasetFile {
        dim: header.dim,
        has_labels: header.labels,
        has_cameras: header.cameras,
        samples,
    })
}

pub fn load_dataset(path: &Path) -> Result<DatasetFile, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dataset(&text)
}

pub fn save_dataset(path: &Path, file: &DatasetFile) -> Result<(), DataError> {
    atomic_write(path, file.to_text().as_bytes()).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Embeds `samples` with `model` and writes `(uid, label, camera, embedding)`
/// rows in the dataset framing. Returns the written record.
pub fn export_embeddings(
    model: &EmbeddingModel,
    samples: &[Sample],
    path: &Path,
) -> Result<DatasetFile, DataError> {
    let dim = model.output_dim();
    let mut out = Vec::with_capacity(samples.len());
    if !samples.is_empty() {
        let rows: Vec<&[f64]> = samples.iter().map(|s| s.feature.as_slice()).collect();
        let batch = Tensor::from_rows(&rows).map_err(crate::embed::EmbedError::from)?;
        let emb = model.forward(&batch)?;
        for (i, s) in samples.iter().enumerate() {
            out.push(Sample {
                uid: s.uid,
                label: s.label,
                camera: s.camera,
                feature: emb.row(i).to_vec(),
            });
        }
    }
    let file = DatasetFile::from_samples(dim, out);
    save_dataset(path, &file)?;
    Ok(file)
}
