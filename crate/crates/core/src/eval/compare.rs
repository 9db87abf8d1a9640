//! The six-approach comparison at a fixed false-alarm budget.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::eval::cache::ConfidenceTable;
use crate::eval::calibrate::{calibrate_threshold, evaluate_thresholds};
use crate::train::grid::grid_search_thresholds;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Approach {
    /// Omni-trained network on the omni channel.
    #[serde(rename = "base")]
    Base,
    /// Network fine-tuned on, and run over, the ANC channel.
    #[serde(rename = "base+anc")]
    BaseAnc,
    /// Omni network with twice the parameters.
    #[serde(rename = "base-x2")]
    BaseX2,
    /// OR of the base (omni) and ANC networks, thresholds grid-searched.
    #[serde(rename = "ensemble+anc")]
    EnsembleAnc,
    #[serde(rename = "attention+bf")]
    AttentionBf,
    #[serde(rename = "attention+anc")]
    AttentionAnc,
}

impl Approach {
    pub const ALL: [Approach; 6] = [
        Approach::Base,
        Approach::BaseAnc,
        Approach::BaseX2,
        Approach::EnsembleAnc,
        Approach::AttentionBf,
        Approach::AttentionAnc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Approach::Base => "base",
            Approach::BaseAnc => "base+anc",
            Approach::BaseX2 => "base-x2",
            Approach::EnsembleAnc => "ensemble+anc",
            Approach::AttentionBf => "attention+bf",
            Approach::AttentionAnc => "attention+anc",
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Approach {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Approach::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown approach '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub approach: String,
    pub thresholds: Vec<f64>,
    /// `None` when the approach was not available.
    pub frr: Option<f64>,
    pub fa_per_hour: Option<f64>,
    pub corpus_id: String,
    pub constraint_violated: bool,
}

impl MetricReport {
    pub fn absent(approach: Approach, corpus_id: &str) -> Self {
        Self {
            approach: approach.name().to_string(),
            thresholds: Vec::new(),
            frr: None,
            fa_per_hour: None,
            corpus_id: corpus_id.to_string(),
            constraint_violated: false,
        }
    }
}

/// Calibrates one approach on `dev` and scores it on `test`.
pub fn calibrate_and_score(
    approach: Approach,
    dev: &ConfidenceTable,
    test: &ConfidenceTable,
    target_fah: f64,
    grid_step: f64,
    corpus_id: &str,
) -> Result<MetricReport> {
    if dev.channels != test.channels {
        return Err(Error::Data(format!(
            "{approach}: dev channels {:?} differ from test channels {:?}",
            dev.channels, test.channels
        )));
    }
    let (thresholds, violated) = if dev.channels.len() == 1 {
        let c = calibrate_threshold(dev, target_fah)?;
        (vec![c.threshold], !c.reachable)
    } else {
        let v = grid_search_thresholds(dev, target_fah, grid_step)?;
        (v.thresholds, v.constraint_violated)
    };
    let op = evaluate_thresholds(test, &thresholds)?;
    Ok(MetricReport {
        approach: approach.name().to_string(),
        thresholds,
        frr: Some(op.frr),
        fa_per_hour: Some(op.fa_per_hour),
        corpus_id: corpus_id.to_string(),
        constraint_violated: violated,
    })
}

/// One row per approach in [`Approach::ALL`] order; approaches without
/// tables are reported as absent.
pub fn compare_approaches(
    dev: &BTreeMap<Approach, ConfidenceTable>,
    test: &BTreeMap<Approach, ConfidenceTable>,
    target_fah: f64,
    grid_step: f64,
    corpus_id: &str,
) -> Result<Vec<MetricReport>> {
    Approach::ALL
        .iter()
        .map(|&a| match (dev.get(&a), test.get(&a)) {
            (Some(d), Some(t)) => calibrate_and_score(a, d, t, target_fah, grid_step, corpus_id),
            _ => Ok(MetricReport::absent(a, corpus_id)),
        })
        .collect()
}

pub fn write_report_csv(w: &mut impl Write, rows: &[MetricReport]) -> Result<()> {
    writeln!(w, "approach,thresholds,frr,fa_per_hour,corpus_id")?;
    for r in rows {
        let th: Vec<String> = r.thresholds.iter().map(|t| format!("{t:.3}")).collect();
        let opt = |v: Option<f64>| v.map_or_else(|| "absent".to_string(), |v| format!("{v:.6}"));
        writeln!(
            w,
            "{},{},{},{},{}",
            r.approach,
            th.join(";"),
            opt(r.frr),
            opt(r.fa_per_hour),
            r.corpus_id
        )?;
    }
    Ok(())
}
