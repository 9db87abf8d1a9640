//! JSON-lines dataset manifests.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::source::{Label, MultichannelClip};
use crate::{Error, Result};

/// One manifest line per clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: Option<String>,
    /// `"keyword"` or `"negative"`.
    pub label: String,
    pub keyword_span: Option<[usize; 2]>,
    pub snr_db: Option<f64>,
    pub noise_type: Option<String>,
    pub keyword_azimuth_deg: Option<f64>,
    pub noise_azimuth_deg: Option<f64>,
    pub seed: u64,
    /// Record index within the generated dataset.
    #[serde(default)]
    pub index: usize,
    #[serde(default)]
    pub duration_s: f64,
}

impl ManifestRecord {
    pub fn from_clip(clip: &MultichannelClip, index: usize, path: Option<String>) -> Self {
        Self {
            path,
            label: if clip.label.is_positive() { "keyword" } else { "negative" }.to_string(),
            keyword_span: clip.label.span().map(|(s, e)| [s, e]),
            snr_db: clip.meta.snr_db,
            noise_type: clip.meta.noise_type.clone(),
            keyword_azimuth_deg: clip.meta.keyword_azimuth_deg,
            noise_azimuth_deg: clip.meta.noise_azimuth_deg,
            seed: clip.meta.seed,
            index,
            duration_s: clip.duration_s(),
        }
    }

    pub fn to_label(&self) -> Result<Label> {
        match (self.label.as_str(), self.keyword_span) {
            ("keyword", Some([start, end])) => Ok(Label::Keyword { start, end }),
            ("negative", _) => Ok(Label::Negative),
            (l, span) => Err(Error::Data(format!("bad label `{l}` with span {span:?}"))),
        }
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
