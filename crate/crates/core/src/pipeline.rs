//! End-to-end recipe: corpus synthesis, training of every detector variant,
//! confidence caching, the six-way comparison and the lab FRR-vs-SNR curves.
//!
//! Every stage reads and writes files under one output directory, so stages
//! can be run one at a time (the CLI does this) or all at once with
//! [`run_all`].

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::array::corpus::{corpus_clip, CorpusSpec};
use crate::array::lab::{lab_record, LabProtocol};
use crate::array::manifest::{read_jsonl, write_jsonl};
use crate::array::{ArrayGeometry, Label, MultichannelClip};
use crate::dsp::featio::{read_features, write_features};
use crate::dsp::{AncConfig, ChannelKind, ChannelMode, FeatureMatrix, FrontEnd, MelConfig};
use crate::eval::{
    build_snr_curve, calibrate_threshold, compare_approaches, score_corpus, snr_gain, window_confidence,
    write_curves_csv, write_report_csv, Approach, CachedUtterance, ClipTruth, ConfidenceRecord, ConfidenceTable,
    EvalCorpus, MetricReport, Score, SnrCurve, MATCH_WINDOW_S,
};
use crate::net::checkpoint;
use crate::net::detect::{detect_stream, EventConfig};
use crate::net::presets::{base_specs, base_x2_specs, keys_specs, Scale};
use crate::net::KwsNetwork;
use crate::par::{try_map_indexed, Execution};
use crate::train::trainer::{finetune_attention, finetune_channel, train_base, write_log_csv, TrainConfig, TrainOutcome};
use crate::train::{grid_search_thresholds, Utterance, UtteranceBatch};
use crate::{Error, Result};

/// Clips synthesized per parallel chunk while writing feature archives.
const CHUNK: usize = 64;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Recipe {
    pub seed: u64,
    pub scale: Scale,
    pub train: CorpusSpec,
    pub dev: CorpusSpec,
    pub test: CorpusSpec,
    pub lab: LabProtocol,
    pub anc: AncConfig,
    pub mel: MelConfig,
    pub events: EventConfig,
    /// Training examples start this many seconds into each clip.
    pub train_crop_s: f64,
    pub base_training: TrainConfig,
    pub x2_training: TrainConfig,
    pub finetune_training: TrainConfig,
    pub attention_training: TrainConfig,
    pub target_fah: f64,
    /// Threshold grid of the ensemble search.
    pub grid_step: f64,
    /// FRR level at which SNR gains are read off the lab curves.
    pub frr_level: f64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for Recipe {
    fn default() -> Self {
        let train = TrainConfig {
            epochs: 16,
            learning_rate: 3e-3,
            ..TrainConfig::default()
        };
        Self {
            seed: 7,
            scale: Scale::Desk,
            train: CorpusSpec {
                positives: 500,
                negatives: 500,
                ..CorpusSpec::default()
            },
            dev: CorpusSpec {
                positives: 250,
                negatives: 400,
                ..CorpusSpec::default()
            },
            test: CorpusSpec {
                positives: 300,
                negatives: 400,
                ..CorpusSpec::default()
            },
            lab: LabProtocol::default(),
            anc: AncConfig::default(),
            mel: MelConfig::default(),
            events: EventConfig::default(),
            train_crop_s: 1.2,
            base_training: train.clone(),
            x2_training: train,
            finetune_training: TrainConfig {
                epochs: 4,
                learning_rate: 5e-4,
                ..TrainConfig::default()
            },
            attention_training: TrainConfig {
                epochs: 4,
                learning_rate: 5e-4,
                ..TrainConfig::default()
            },
            target_fah: 0.1,
            grid_step: 0.001,
            frr_level: 0.5,
            execution: Execution::default(),
        }
    }
}

impl Recipe {
    pub fn validate(&self) -> Result<()> {
        for spec in [&self.train, &self.dev, &self.test] {
            spec.validate()?;
        }
        self.lab.validate()?;
        self.anc.validate()?;
        for cfg in [
            &self.base_training,
            &self.x2_training,
            &self.finetune_training,
            &self.attention_training,
        ] {
            cfg.validate()?;
        }
        if !(self.train_crop_s >= 0.0) || self.train_crop_s + 0.1 > self.train.keyword_onset_s[0] {
            return Err(Error::Config(format!(
                "training crop at {} s must end before the earliest keyword onset {} s",
                self.train_crop_s, self.train.keyword_onset_s[0]
            )));
        }
        if !(self.target_fah >= 0.0) || !(self.frr_level > 0.0 && self.frr_level < 1.0) {
            return Err(Error::Config("target FA/h must be >= 0 and the FRR level inside (0, 1)".into()));
        }
        Ok(())
    }

    pub fn frontend(&self) -> Result<FrontEnd> {
        FrontEnd::new(ArrayGeometry::default(), self.anc.clone(), self.mel.clone())
    }

    /// Training config with the recipe's execution mode.
    fn training(&self, model: ModelId) -> TrainConfig {
        let cfg = match model {
            ModelId::Base => &self.base_training,
            ModelId::BaseX2 => &self.x2_training,
            ModelId::BaseAnc => &self.finetune_training,
            ModelId::AttentionAnc | ModelId::AttentionBf => &self.attention_training,
        };
        TrainConfig {
            execution: self.execution,
            ..cfg.clone()
        }
    }

    fn crop_frame(&self) -> usize {
        (self.train_crop_s * self.mel.sample_rate as f64 / self.mel.hop as f64).round() as usize
    }

    fn frame_s(&self) -> f64 {
        self.mel.hop as f64 / self.mel.sample_rate as f64
    }

    pub fn corpus_id(&self) -> String {
        format!("sim-{}", self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Dev,
    Test,
    Lab,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
            Split::Lab => "lab",
        }
    }

    /// Dataset seed derived from the recipe seed.
    pub fn seed(self, recipe_seed: u64) -> u64 {
        let k = match self {
            Split::Train => 1,
            Split::Dev => 2,
            Split::Test => 3,
            Split::Lab => 4,
        };
        recipe_seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(k))
    }

    fn len(self, recipe: &Recipe) -> usize {
        match self {
            Split::Train => recipe.train.len(),
            Split::Dev => recipe.dev.len(),
            Split::Test => recipe.test.len(),
            Split::Lab => recipe.lab.records,
        }
    }

    /// Clip `index` of this split.
    pub fn clip(self, recipe: &Recipe, index: usize) -> Result<MultichannelClip> {
        let g = ArrayGeometry::default();
        let seed = self.seed(recipe.seed);
        match self {
            Split::Train => corpus_clip(&g, &recipe.train, seed, index),
            Split::Dev => corpus_clip(&g, &recipe.dev, seed, index),
            Split::Test => corpus_clip(&g, &recipe.test, seed, index),
            Split::Lab => lab_record(&g, &recipe.lab, seed, index),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            "lab" => Ok(Split::Lab),
            _ => Err(Error::Config(format!("unknown split '{s}'"))),
        }
    }
}

/// The five trained networks behind the six approaches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelId {
    Base,
    BaseX2,
    BaseAnc,
    AttentionAnc,
    AttentionBf,
}

impl ModelId {
    pub const ALL: [ModelId; 5] = [
        ModelId::Base,
        ModelId::BaseX2,
        ModelId::BaseAnc,
        ModelId::AttentionAnc,
        ModelId::AttentionBf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelId::Base => "base",
            ModelId::BaseX2 => "base-x2",
            ModelId::BaseAnc => "base+anc",
            ModelId::AttentionAnc => "attention+anc",
            ModelId::AttentionBf => "attention+bf",
        }
    }

    fn stem(self) -> String {
        self.name().replace('+', "-")
    }

    /// Channel bank the model reads.
    pub fn channels(self) -> Vec<ChannelKind> {
        match self {
            ModelId::Base | ModelId::BaseX2 => vec![ChannelKind::Omni],
            ModelId::BaseAnc => vec![ChannelKind::Anc],
            ModelId::AttentionAnc => ChannelMode::OmniAnc.channels(),
            ModelId::AttentionBf => ChannelMode::OmniBf6.channels(),
        }
    }

    /// Cache key of the model on its own channel bank.
    pub fn key(self) -> String {
        let chans: Vec<String> = self.channels().iter().map(|k| k.tag()).collect();
        format!("{}@{}", self.name(), chans.join("+"))
    }
}

impl FromStr for ModelId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelId::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model '{s}'")))
    }
}

/// Cache key of the base model on another channel (lab evaluation).
pub fn base_on(channel: &str) -> String {
    format!("base@{channel}")
}

/// Cache key of the oracle over all beams.
pub const ORACLE_BF: &str = "oracle-bf";

/// Networks of an approach with their cache keys.
pub fn approach_models(approach: Approach) -> Vec<ModelId> {
    match approach {
        Approach::Base => vec![ModelId::Base],
        Approach::BaseAnc => vec![ModelId::BaseAnc],
        Approach::BaseX2 => vec![ModelId::BaseX2],
        Approach::EnsembleAnc => vec![ModelId::Base, ModelId::BaseAnc],
        Approach::AttentionBf => vec![ModelId::AttentionBf],
        Approach::AttentionAnc => vec![ModelId::AttentionAnc],
    }
}

/// File layout of a run.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn train_index(&self) -> PathBuf {
        self.root.join("train").join("index.jsonl")
    }

    pub fn train_features(&self, tag: &str) -> PathBuf {
        self.root.join("train").join(format!("{tag}.feats"))
    }

    pub fn lab_manifest(&self) -> PathBuf {
        self.root.join("lab").join("manifest.jsonl")
    }

    pub fn model(&self, id: ModelId) -> PathBuf {
        self.root.join("models").join(format!("{}.ckpt", id.stem()))
    }

    pub fn train_log(&self, id: ModelId) -> PathBuf {
        self.root.join("models").join(format!("{}.log.csv", id.stem()))
    }

    pub fn cache(&self, split: Split) -> PathBuf {
        self.root.join("eval").join(format!("{}.confidences.jsonl", split.name()))
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("eval").join("report.csv")
    }

    pub fn curves(&self) -> PathBuf {
        self.root.join("eval").join("snr_curves.csv")
    }

    pub fn gains(&self) -> PathBuf {
        self.root.join("eval").join("snr_gain.csv")
    }

    pub fn timings(&self) -> PathBuf {
        self.root.join("timings.csv")
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// One line of the training index; the keyword span is relative to the crop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub id: String,
    pub keyword_span: Option<[usize; 2]>,
    pub snr_db: Option<f64>,
    pub frames: usize,
}

/// Channels stored in the training archives.
pub fn training_channels() -> Vec<ChannelKind> {
    let mut v = vec![ChannelKind::Omni, ChannelKind::Anc];
    v.extend(ChannelKind::all_beams());
    v
}

/// Synthesizes the training corpus and writes cropped features of every
/// channel to per-channel archives.
pub fn generate_training_set(recipe: &Recipe, layout: &Layout) -> Result<usize> {
    recipe.validate()?;
    let fe = recipe.frontend()?;
    let kinds = training_channels();
    let crop = recipe.crop_frame();
    let shift = crop * recipe.mel.hop;
    create_parent(&layout.train_index())?;
    let mut writers = kinds
        .iter()
        .map(|k| Ok(BufWriter::new(File::create(layout.train_features(&k.tag()))?)))
        .collect::<Result<Vec<_>>>()?;
    let total = recipe.train.len();
    let mut index = Vec::with_capacity(total);
    for start in (0..total).step_by(CHUNK) {
        let n = CHUNK.min(total - start);
        let batch = try_map_indexed(recipe.execution, n, |j| {
            let clip = Split::Train.clip(recipe, start + j)?;
            let feats = fe.features(&clip, &kinds)?;
            Ok::<_, Error>((clip.label, clip.meta.snr_db, feats))
        })?;
        for (j, (label, snr_db, feats)) in batch.into_iter().enumerate() {
            let mut frames = 0;
            for (w, f) in writers.iter_mut().zip(&feats) {
                let cropped = f.slice_frames(crop, f.frames);
                frames = cropped.frames;
                write_features(w, &cropped)?;
            }
            index.push(TrainRecord {
                id: format!("train-{:05}", start + j),
                keyword_span: label.span().map(|(s, e)| [s.saturating_sub(shift), e.saturating_sub(shift)]),
                snr_db,
                frames,
            });
        }
    }
    for mut w in writers {
        w.flush()?;
    }
    write_jsonl(&layout.train_index(), &index)?;
    Ok(index.len())
}

/// Loads the training archives of `kinds` as an utterance batch.
pub fn load_training_set(recipe: &Recipe, layout: &Layout, kinds: &[ChannelKind]) -> Result<UtteranceBatch> {
    let index: Vec<TrainRecord> = read_jsonl(&layout.train_index())?;
    let mut per_channel = Vec::with_capacity(kinds.len());
    for k in kinds {
        let tag = k.tag();
        let mut r = BufReader::new(File::open(layout.train_features(&tag))?);
        let mats = (0..index.len())
            .map(|_| read_features(&mut r, &tag))
            .collect::<Result<Vec<FeatureMatrix>>>()?;
        per_channel.push(mats.into_iter());
    }
    let mut utterances = Vec::with_capacity(index.len());
    for rec in &index {
        let channels: Vec<FeatureMatrix> = per_channel.iter_mut().map(|it| it.next().expect("one matrix per record")).collect();
        let label = match rec.keyword_span {
            Some([start, end]) => Label::Keyword { start, end },
            None => Label::Negative,
        };
        utterances.push(Utterance::new(rec.id.clone(), channels, label, &recipe.mel)?);
    }
    UtteranceBatch::new(kinds.iter().map(|k| k.tag()).collect(), utterances)
}

/// Trains one model from the archives and writes its checkpoint and log.
/// Fine-tuned models start from the base checkpoint.
pub fn train_model(recipe: &Recipe, layout: &Layout, model: ModelId) -> Result<TrainOutcome> {
    recipe.validate()?;
    let cfg = recipe.training(model);
    let data = load_training_set(recipe, layout, &model.channels())?;
    let outcome = match model {
        ModelId::Base => train_base(&data, &base_specs(recipe.scale), &cfg)?,
        ModelId::BaseX2 => train_base(&data, &base_x2_specs(recipe.scale), &cfg)?,
        ModelId::BaseAnc => {
            let base = checkpoint::load(&layout.model(ModelId::Base))?;
            finetune_channel(&base, &data, ChannelKind::Anc, &cfg)?
        }
        ModelId::AttentionAnc | ModelId::AttentionBf => {
            let base = checkpoint::load(&layout.model(ModelId::Base))?;
            let mode = if model == ModelId::AttentionAnc {
                ChannelMode::OmniAnc
            } else {
                ChannelMode::OmniBf6
            };
            finetune_attention(&base, &data, mode, &keys_specs(recipe.scale), &cfg)?
        }
    };
    let path = layout.model(model);
    create_parent(&path)?;
    checkpoint::save(&path, &outcome.network)?;
    let mut log = BufWriter::new(File::create(layout.train_log(model))?);
    write_log_csv(&mut log, &outcome.log)?;
    log.flush()?;
    Ok(outcome)
}

/// Checkpoints present in the layout.
pub fn load_models(layout: &Layout) -> Result<BTreeMap<ModelId, KwsNetwork<f32>>> {
    let mut out = BTreeMap::new();
    for id in ModelId::ALL {
        let path = layout.model(id);
        if path.exists() {
            out.insert(id, checkpoint::load(&path)?);
        }
    }
    Ok(out)
}

fn span_seconds(label: Label, sample_rate: u32) -> Option<(f64, f64)> {
    label
        .span()
        .map(|(s, e)| (s as f64 / sample_rate as f64, e as f64 / sample_rate as f64))
}

/// Cached confidences of every available model on one clip. Lab clips also
/// get the base model on the ANC channel, on each beam, and the beam oracle.
pub fn score_clip(
    recipe: &Recipe,
    fe: &FrontEnd,
    models: &BTreeMap<ModelId, KwsNetwork<f32>>,
    clip: &MultichannelClip,
    lab: bool,
) -> Result<BTreeMap<String, f32>> {
    let mut kinds = vec![ChannelKind::Omni, ChannelKind::Anc];
    if lab || models.contains_key(&ModelId::AttentionBf) {
        kinds.extend(ChannelKind::all_beams());
    }
    let feats = fe.features(clip, &kinds)?;
    let bank = |want: &[ChannelKind]| -> Vec<FeatureMatrix> {
        want.iter()
            .map(|w| feats[kinds.iter().position(|k| k == w).expect("channel computed")].clone())
            .collect()
    };
    let span = span_seconds(clip.label, clip.sample_rate);
    let confidence = |net: &KwsNetwork<f32>, chans: &[FeatureMatrix]| -> Result<f32> {
        let p = net.posteriors(chans)?;
        Ok(window_confidence(&p, span, recipe.frame_s(), recipe.events.window, MATCH_WINDOW_S))
    };
    let mut out = BTreeMap::new();
    for (id, net) in models {
        out.insert(id.key(), confidence(net, &bank(&id.channels()))?);
    }
    if lab {
        if let Some(base) = models.get(&ModelId::Base) {
            let anc = confidence(base, &bank(&[ChannelKind::Anc]))?;
            out.insert(base_on("anc"), anc);
            let mut oracle = 0.0f32;
            for b in ChannelKind::all_beams() {
                let c = confidence(base, &bank(&[b]))?;
                oracle = oracle.max(c);
                out.insert(base_on(&b.tag()), c);
            }
            out.insert(base_on(ORACLE_BF), oracle);
        }
    }
    Ok(out)
}

/// Scores every clip of a split and writes the confidence cache.
pub fn score_split(recipe: &Recipe, layout: &Layout, split: Split) -> Result<ConfidenceTable> {
    recipe.validate()?;
    let models = load_models(layout)?;
    if models.is_empty() {
        return Err(Error::Data(format!("no checkpoints under {}", layout.root.display())));
    }
    let fe = recipe.frontend()?;
    let lab = split == Split::Lab;
    let rows = try_map_indexed(recipe.execution, split.len(recipe), |i| {
        let clip = split.clip(recipe, i)?;
        let conf = score_clip(recipe, &fe, &models, &clip, lab)?;
        Ok::<_, Error>((clip.label.is_positive(), clip.duration_s(), conf))
    })?;
    let keys: Vec<String> = rows.first().map(|r| r.2.keys().cloned().collect()).unwrap_or_default();
    let mut table = ConfidenceTable::new(keys);
    for (i, (positive, duration_s, conf)) in rows.into_iter().enumerate() {
        table.push(CachedUtterance {
            id: format!("{}-{i:05}", split.name()),
            positive,
            duration_s,
            confidences: conf.into_values().collect(),
        })?;
    }
    let path = layout.cache(split);
    create_parent(&path)?;
    table.save(&path)?;
    Ok(table)
}

/// Reads a cache file with its channels in first-appearance order.
pub fn load_cache(path: &Path) -> Result<ConfidenceTable> {
    let records: Vec<ConfidenceRecord> = read_jsonl(path)?;
    let mut channels: Vec<String> = Vec::new();
    for r in &records {
        if !channels.contains(&r.channel_tag) {
            channels.push(r.channel_tag.clone());
        }
    }
    ConfidenceTable::from_records(&channels, &records)
}

/// Columns `keys` of `table`, or `None` when one is missing.
pub fn select_columns(table: &ConfidenceTable, keys: &[String]) -> Option<ConfidenceTable> {
    let cols = keys
        .iter()
        .map(|k| table.channels.iter().position(|c| c == k).map(|c| table.channel(c)))
        .collect::<Option<Vec<_>>>()?;
    ConfidenceTable::zip(&cols).ok()
}

fn approach_tables(table: &ConfidenceTable) -> BTreeMap<Approach, ConfidenceTable> {
    Approach::ALL
        .into_iter()
        .filter_map(|a| {
            let keys: Vec<String> = approach_models(a).iter().map(|m| m.key()).collect();
            select_columns(table, &keys).map(|t| (a, t))
        })
        .collect()
}

/// Dev-calibrated, test-scored rows for all six approaches.
pub fn compare_stage(recipe: &Recipe, layout: &Layout) -> Result<Vec<MetricReport>> {
    let dev = approach_tables(&load_cache(&layout.cache(Split::Dev))?);
    let test = approach_tables(&load_cache(&layout.cache(Split::Test))?);
    let rows = compare_approaches(&dev, &test, recipe.target_fah, recipe.grid_step, &recipe.corpus_id())?;
    let mut w = BufWriter::new(File::create(layout.report())?);
    write_report_csv(&mut w, &rows)?;
    w.flush()?;
    Ok(rows)
}

/// Thresholds of an approach calibrated on the dev cache.
pub fn approach_thresholds(recipe: &Recipe, dev: &ConfidenceTable, approach: Approach) -> Result<(Vec<f64>, bool)> {
    let keys: Vec<String> = approach_models(approach).iter().map(|m| m.key()).collect();
    let table = select_columns(dev, &keys)
        .ok_or_else(|| Error::Data(format!("dev cache has no confidences for {approach}")))?;
    if keys.len() == 1 {
        let c = calibrate_threshold(&table, recipe.target_fah)?;
        Ok((vec![c.threshold], !c.reachable))
    } else {
        let v = grid_search_thresholds(&table, recipe.target_fah, recipe.grid_step)?;
        Ok((v.thresholds, v.constraint_violated))
    }
}

/// Largest f32 not above `x`, so that `m > f32_floor(x)` iff `m as f64 > x`.
fn f32_floor(x: f64) -> f32 {
    let f = x as f32;
    if f as f64 > x {
        f.next_down()
    } else {
        f
    }
}

/// Event-level evaluation of one approach on a split: thresholds from the
/// dev cache, streaming detection, events of ensemble members merged.
pub fn evaluate_approach(recipe: &Recipe, layout: &Layout, approach: Approach, split: Split) -> Result<(MetricReport, Score)> {
    let dev = load_cache(&layout.cache(Split::Dev))?;
    let (thresholds, violated) = approach_thresholds(recipe, &dev, approach)?;
    let models = load_models(layout)?;
    let members = approach_models(approach)
        .into_iter()
        .zip(&thresholds)
        .map(|(id, &t)| {
            models
                .get(&id)
                .map(|net| (id, net, f32_floor(t)))
                .ok_or_else(|| Error::Data(format!("missing checkpoint {}", layout.model(id).display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let fe = recipe.frontend()?;
    let hop = recipe.mel.hop;
    let per_clip = try_map_indexed(recipe.execution, split.len(recipe), |i| {
        let clip = split.clip(recipe, i)?;
        let mut times = Vec::new();
        for (id, net, thr) in &members {
            let chans = fe.features(&clip, &id.channels())?;
            for e in detect_stream(*net, &chans, *thr, recipe.events)? {
                times.push(e.time_s(hop, clip.sample_rate));
            }
        }
        times.sort_by(f64::total_cmp);
        let truth = ClipTruth {
            span_s: span_seconds(clip.label, clip.sample_rate),
            duration_s: clip.duration_s(),
        };
        Ok::<_, Error>((truth, times))
    })?;
    let (clips, events): (Vec<ClipTruth>, Vec<Vec<f64>>) = per_clip.into_iter().unzip();
    let score = score_corpus(&EvalCorpus { clips }, &events, MATCH_WINDOW_S)?;
    let report = MetricReport {
        approach: approach.name().to_string(),
        thresholds,
        frr: Some(score.frr),
        fa_per_hour: Some(score.fa_per_hour),
        corpus_id: format!("{}/{}", recipe.corpus_id(), split.name()),
        constraint_violated: violated,
    };
    Ok((report, score))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrGain {
    pub channel: String,
    pub frr_level: f64,
    /// `None` when a curve does not reach the FRR level.
    pub gain_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabSummary {
    /// Base threshold calibrated on the dev split, used for every channel.
    pub threshold: f64,
    pub curves: Vec<SnrCurve>,
    pub gains: Vec<SnrGain>,
    pub warnings: Vec<String>,
}

impl LabSummary {
    pub fn curve(&self, channel: &str) -> Option<&SnrCurve> {
        self.curves.iter().find(|c| c.channel == channel)
    }

    /// FRR of `channel` at `snr_db`, if that bucket exists.
    pub fn frr_at(&self, channel: &str, snr_db: f64) -> Option<f64> {
        self.curve(channel)?
            .points
            .iter()
            .find(|p| (p.0 - snr_db).abs() < 1e-6)
            .map(|p| p.1)
    }
}

/// Lab channels evaluated with the base model: label and cache key.
pub fn lab_channels() -> Vec<(&'static str, String)> {
    vec![
        ("omni", ModelId::Base.key()),
        ("bf-oracle", base_on(ORACLE_BF)),
        ("anc", base_on("anc")),
    ]
}

/// FRR-vs-SNR curves of the base model on the lab records at its dev
/// threshold, plus the SNR gains of the beam oracle and ANC over omni.
pub fn lab_curves(recipe: &Recipe, layout: &Layout) -> Result<LabSummary> {
    let dev = load_cache(&layout.cache(Split::Dev))?;
    let (thresholds, _) = approach_thresholds(recipe, &dev, Approach::Base)?;
    let threshold = thresholds[0];
    let lab = load_cache(&layout.cache(Split::Lab))?;
    let snrs: Vec<f64> = (0..lab.utterances.len())
        .map(|i| {
            let (level, _, _) = recipe.lab.assignment(i);
            level - recipe.lab.noise_level_db
        })
        .collect();
    let grid = recipe.lab.snr_grid();
    let mut curves = Vec::new();
    let mut warnings = Vec::new();
    for (label, key) in lab_channels() {
        let c = lab
            .channels
            .iter()
            .position(|k| *k == key)
            .ok_or_else(|| Error::Data(format!("lab cache has no `{key}` column")))?;
        let outcomes: Vec<(f64, bool)> = lab
            .utterances
            .iter()
            .zip(&snrs)
            .filter(|(u, _)| u.positive)
            .map(|(u, &s)| (s, u.confidences[c] as f64 > threshold))
            .collect();
        let (curve, w) = build_snr_curve(label, &grid, &outcomes)?;
        warnings.extend(w);
        curves.push(curve);
    }
    let mut gains = Vec::new();
    for cand in &curves[1..] {
        let gain_db = match snr_gain(&curves[0], cand, recipe.frr_level) {
            Ok(g) => Some(g),
            Err(e) => {
                warnings.push(format!("{}: {e}", cand.channel));
                None
            }
        };
        gains.push(SnrGain {
            channel: cand.channel.clone(),
            frr_level: recipe.frr_level,
            gain_db,
        });
    }
    let mut w = BufWriter::new(File::create(layout.curves())?);
    write_curves_csv(&mut w, &curves)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(layout.gains())?);
    writeln!(w, "channel,frr_level,gain_db")?;
    for g in &gains {
        let v = g.gain_db.map_or_else(|| "unreached".to_string(), |v| format!("{v:.4}"));
        writeln!(w, "{},{},{}", g.channel, g.frr_level, v)?;
    }
    w.flush()?;
    Ok(LabSummary {
        threshold,
        curves,
        gains,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub reports: Vec<MetricReport>,
    pub lab: Option<LabSummary>,
    pub timings: Vec<StageTiming>,
}

impl PipelineSummary {
    pub fn report(&self, approach: Approach) -> Option<&MetricReport> {
        self.reports.iter().find(|r| r.approach == approach.name())
    }

    pub fn seconds(&self, stage: &str) -> f64 {
        self.timings.iter().filter(|t| t.stage == stage).map(|t| t.seconds).sum()
    }

    pub fn total_seconds(&self) -> f64 {
        self.timings.iter().map(|t| t.seconds).sum()
    }
}

fn timed<T>(timings: &mut Vec<StageTiming>, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let started = Instant::now();
    let out = f()?;
    timings.push(StageTiming {
        stage: stage.to_string(),
        seconds: started.elapsed().as_secs_f64(),
    });
    Ok(out)
}

/// Runs every stage in order and writes `timings.csv`.
pub fn run_all(recipe: &Recipe, layout: &Layout) -> Result<PipelineSummary> {
    recipe.validate()?;
    let mut timings = Vec::new();
    timed(&mut timings, "gen-train", || generate_training_set(recipe, layout))?;
    for id in ModelId::ALL {
        timed(&mut timings, &format!("train {}", id.name()), || train_model(recipe, layout, id))?;
    }
    for split in [Split::Dev, Split::Test] {
        timed(&mut timings, &format!("score {split}"), || score_split(recipe, layout, split))?;
    }
    let reports = timed(&mut timings, "compare", || compare_stage(recipe, layout))?;
    let lab = if recipe.lab.records > 0 {
        timed(&mut timings, "score lab", || score_split(recipe, layout, Split::Lab))?;
        Some(timed(&mut timings, "snr curves", || lab_curves(recipe, layout))?)
    } else {
        None
    };
    let mut w = BufWriter::new(File::create(layout.timings())?);
    writeln!(w, "stage,seconds")?;
    for t in &timings {
        writeln!(w, "{},{:.3}", t.stage, t.seconds)?;
    }
    w.flush()?;
    Ok(PipelineSummary { reports, lab, timings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_and_stems() {
        assert_eq!(ModelId::Base.key(), "base@omni");
        assert_eq!(ModelId::AttentionAnc.key(), "attention+anc@omni+anc");
        assert_eq!(ModelId::BaseAnc.stem(), "base-anc");
        assert_eq!(approach_models(Approach::EnsembleAnc).len(), 2);
    }

    #[test]
    fn f32_floor_matches_f64_comparison() {
        for x in [0.1, 0.3, 0.999, 0.5, 0.123] {
            let f = f32_floor(x);
            assert!(f as f64 <= x);
            assert!(f.next_up() as f64 > x);
        }
    }

    #[test]
    fn default_recipe_is_valid() {
        Recipe::default().validate().unwrap();
        let bad = Recipe {
            train_crop_s: 2.0,
            ..Recipe::default()
        };
        assert!(bad.validate().is_err());
    }
}
