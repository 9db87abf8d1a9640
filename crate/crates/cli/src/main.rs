//! Command-line front end for dataset synthesis, training, evaluation,
//! benchmarking and plot-data export.
//!
//! Every command reads an optional TOML recipe, applies flag overrides,
//! writes the resolved recipe to `<out>/config.resolved.toml` and then runs
//! one pipeline stage. Exit status: 0 ok, 2 configuration error, 3 data
//! error, 4 constraint violation.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mckws::array::lab::manifest_records;
use mckws::array::manifest::write_jsonl;
use mckws::array::wav::write_clip;
use mckws::bench::{bench_detector, bench_frontend, preset_detector, write_bench_csv, BenchResult, FrontendAlgorithm};
use mckws::eval::{write_report_csv, Approach};
use mckws::net::presets::Scale;
use mckws::par::{try_map_indexed, Execution};
use mckws::pipeline::{self, Layout, ModelId, Recipe, Split};
use mckws::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "mckws", version, about = "Multichannel keyword spotting toolkit")]
struct Cli {
    /// TOML recipe; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for every artifact of the run.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Global seed (overrides `seed` in the recipe).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run data-parallel loops on the calling thread only.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize the acoustic lab dataset and write its manifest.
    GenLab {
        #[arg(long)]
        records: Option<usize>,
        /// Also write one 7-channel WAV per record.
        #[arg(long)]
        wav: bool,
    },
    /// Synthesize the training corpus and write per-channel feature archives.
    GenTrain {
        #[arg(long)]
        positives: Option<usize>,
        #[arg(long)]
        negatives: Option<usize>,
    },
    /// Train the omni base network (or the double-size variant).
    TrainBase {
        #[arg(long)]
        x2: bool,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Fine-tune the base network on the ANC channel.
    Finetune {
        #[arg(long, default_value = "anc")]
        channel: String,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Insert the attention keys network and fine-tune on a channel bank.
    TrainAttention {
        /// `omni+anc` or `omni+bf6`.
        #[arg(long, default_value = "omni+anc")]
        mode: String,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Run every available checkpoint over a split and cache confidences.
    Score {
        /// `dev`, `test` or `lab`.
        #[arg(long)]
        split: String,
    },
    /// Calibrate an approach's threshold(s) on the dev cache.
    Calibrate {
        #[arg(long)]
        approach: String,
        #[arg(long)]
        target_fah: Option<f64>,
    },
    /// Event-level FRR and FA/h of one approach at its dev-calibrated thresholds.
    Evaluate {
        #[arg(long)]
        approach: String,
        #[arg(long)]
        target_fah: Option<f64>,
        /// Split to score (`dev` or `test`).
        #[arg(long, default_value = "dev")]
        split: String,
    },
    /// FRR-vs-SNR curves of the base model on the lab set, with SNR gains.
    SnrCurves {
        #[arg(long)]
        frr_level: Option<f64>,
    },
    /// Six-approach comparison: calibrate on dev, report FRR on test.
    Compare {
        #[arg(long)]
        target_fah: Option<f64>,
    },
    /// Real-time factors and model sizes of the front-ends and detectors.
    Bench {
        #[arg(long, default_value = "paper")]
        scale: String,
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
    /// Collect curve, report and training-log data for external plotting.
    ExportPlots,
    /// Run the whole recipe end to end.
    RunAll,
}

#[derive(Args, Debug)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

/// Recipe plus the output directory, as stored in the TOML file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunConfig {
    #[serde(default = "default_out")]
    out_dir: PathBuf,
    #[serde(flatten)]
    recipe: Recipe,
}

fn default_out() -> PathBuf {
    PathBuf::from("run")
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => RunConfig {
            out_dir: default_out(),
            recipe: Recipe::default(),
        },
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.recipe.seed = seed;
    }
    cfg.recipe.execution = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    Ok(cfg)
}

fn apply_train_flags(recipe: &mut Recipe, model: ModelId, flags: &TrainFlags) {
    let cfg = match model {
        ModelId::Base => &mut recipe.base_training,
        ModelId::BaseX2 => &mut recipe.x2_training,
        ModelId::BaseAnc => &mut recipe.finetune_training,
        ModelId::AttentionAnc | ModelId::AttentionBf => &mut recipe.attention_training,
    };
    if let Some(e) = flags.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = flags.learning_rate {
        cfg.learning_rate = lr;
    }
}

fn write_snapshot(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    let text = toml::to_string(cfg).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))?;
    fs::write(cfg.out_dir.join("config.resolved.toml"), text)?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn gen_lab(recipe: &Recipe, layout: &Layout, wav: bool) -> Result<()> {
    let clips = try_map_indexed(recipe.execution, recipe.lab.records, |i| Split::Lab.clip(recipe, i))?;
    let dir = layout.lab_manifest().parent().expect("manifest has a parent").to_path_buf();
    fs::create_dir_all(&dir)?;
    let paths: Option<Vec<String>> = wav.then(|| (0..clips.len()).map(|i| format!("lab-{i:05}.wav")).collect());
    if let Some(paths) = &paths {
        for (clip, p) in clips.iter().zip(paths) {
            write_clip(&dir.join(p), clip)?;
        }
    }
    let records = manifest_records(&clips, paths.as_deref());
    write_jsonl(&layout.lab_manifest(), &records)?;
    let warned = clips.iter().filter(|c| !c.meta.warnings.is_empty()).count();
    println!("wrote {} lab records to {}", records.len(), layout.lab_manifest().display());
    if warned > 0 {
        eprintln!("warning: {warned} records have keyword and noise sources less than 5 degrees apart");
    }
    Ok(())
}

fn train(recipe: &Recipe, layout: &Layout, model: ModelId) -> Result<()> {
    let outcome = pipeline::train_model(recipe, layout, model)?;
    let last = outcome.log.last().map_or(f64::NAN, |e| e.total);
    println!(
        "trained {} ({} parameters, final loss {last:.4}) -> {}",
        model.name(),
        outcome.network.param_count(),
        layout.model(model).display()
    );
    Ok(())
}

fn bench(scale: Scale, duration: f64, repeats: usize, layout: &Layout) -> Result<Vec<BenchResult>> {
    let mut results = Vec::new();
    for alg in [FrontendAlgorithm::Anc, FrontendAlgorithm::Bf6] {
        results.push(bench_frontend(alg, duration, repeats)?);
    }
    for a in Approach::ALL {
        let members = preset_detector(a, scale, 1)?;
        results.push(bench_detector(a.name(), &members, duration, repeats)?);
    }
    let path = layout.root().join("bench").join("bench.csv");
    let mut w = csv_writer(&path)?;
    write_bench_csv(&mut w, &results)?;
    w.flush()?;
    for r in &results {
        println!(
            "{:<24} rtf {:.4} (cv {:.3})  model {:>9} B  memory ~{} B",
            r.component, r.rtf_median, r.rtf_cv, r.model_size_bytes, r.peak_memory_estimate_bytes
        );
    }
    Ok(results)
}

fn export_plots(recipe: &Recipe, layout: &Layout) -> Result<()> {
    let dir = layout.root().join("plots");
    fs::create_dir_all(&dir)?;
    let mut copied = 0;
    for src in [layout.curves(), layout.gains(), layout.report()] {
        if src.exists() {
            fs::copy(&src, dir.join(src.file_name().expect("file name")))?;
            copied += 1;
        }
    }
    let mut w = csv_writer(&dir.join("training_loss.csv"))?;
    writeln!(w, "model,epoch,frame_ce,maxpool,total")?;
    for id in ModelId::ALL {
        let path = layout.train_log(id);
        if !path.exists() {
            continue;
        }
        for line in fs::read_to_string(&path)?.lines().skip(1) {
            // drop the wall-clock column so the export is reproducible
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() >= 4 {
                writeln!(w, "{},{}", id.name(), cols[..4].join(","))?;
            }
        }
        copied += 1;
    }
    w.flush()?;
    if copied == 0 {
        return Err(Error::Data(format!("nothing to export under {}", layout.root().display())));
    }
    println!("plot data for {} written to {}", recipe.corpus_id(), dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    let layout = Layout::new(&cfg.out_dir);
    let mut violated = None;
    match &cli.command {
        Command::GenLab { records: Some(n), .. } => cfg.recipe.lab.records = *n,
        Command::GenTrain { positives, negatives } => {
            if let Some(n) = positives {
                cfg.recipe.train.positives = *n;
            }
            if let Some(n) = negatives {
                cfg.recipe.train.negatives = *n;
            }
        }
        Command::TrainBase { x2, train } => {
            let id = if *x2 { ModelId::BaseX2 } else { ModelId::Base };
            apply_train_flags(&mut cfg.recipe, id, train);
        }
        Command::Finetune { train, .. } => apply_train_flags(&mut cfg.recipe, ModelId::BaseAnc, train),
        Command::TrainAttention { train, .. } => apply_train_flags(&mut cfg.recipe, ModelId::AttentionAnc, train),
        Command::Calibrate { target_fah, .. } | Command::Evaluate { target_fah, .. } | Command::Compare { target_fah } => {
            if let Some(t) = target_fah {
                cfg.recipe.target_fah = *t;
            }
        }
        Command::SnrCurves { frr_level: Some(l) } => cfg.recipe.frr_level = *l,
        _ => {}
    }
    cfg.recipe.validate()?;
    write_snapshot(&cfg)?;
    let recipe = &cfg.recipe;
    match cli.command {
        Command::GenLab { wav, .. } => gen_lab(recipe, &layout, wav)?,
        Command::GenTrain { .. } => {
            let n = pipeline::generate_training_set(recipe, &layout)?;
            println!("wrote features of {n} training clips to {}", layout.train_index().display());
        }
        Command::TrainBase { x2, .. } => train(recipe, &layout, if x2 { ModelId::BaseX2 } else { ModelId::Base })?,
        Command::Finetune { channel, .. } => {
            if channel != "anc" {
                return Err(Error::Config(format!("fine-tuning supports the anc channel, got `{channel}`")));
            }
            train(recipe, &layout, ModelId::BaseAnc)?
        }
        Command::TrainAttention { mode, .. } => {
            let id = match mode.as_str() {
                "omni+anc" => ModelId::AttentionAnc,
                "omni+bf6" => ModelId::AttentionBf,
                m => return Err(Error::Config(format!("attention mode must be omni+anc or omni+bf6, got `{m}`"))),
            };
            train(recipe, &layout, id)?
        }
        Command::Score { split } => {
            let split: Split = split.parse()?;
            if split == Split::Train {
                return Err(Error::Config("the training split is not scored".into()));
            }
            let table = pipeline::score_split(recipe, &layout, split)?;
            println!(
                "cached {} utterances x {} columns -> {}",
                table.utterances.len(),
                table.channels.len(),
                layout.cache(split).display()
            );
        }
        Command::Calibrate { approach, .. } => {
            let approach: Approach = approach.parse()?;
            let dev = pipeline::load_cache(&layout.cache(Split::Dev))?;
            let (thresholds, bad) = pipeline::approach_thresholds(recipe, &dev, approach)?;
            let th: Vec<String> = thresholds.iter().map(|t| format!("{t:.3}")).collect();
            println!("{approach}: thresholds {}", th.join(";"));
            if bad {
                violated = Some(format!("{approach}: no threshold meets {} FA/h on dev", recipe.target_fah));
            }
        }
        Command::Evaluate { approach, split, .. } => {
            let approach: Approach = approach.parse()?;
            let split: Split = split.parse()?;
            if !matches!(split, Split::Dev | Split::Test) {
                return Err(Error::Config("evaluate scores the dev or test split".into()));
            }
            let (row, score) = pipeline::evaluate_approach(recipe, &layout, approach, split)?;
            let path = layout.root().join("eval").join(format!("evaluate-{}-{}.csv", approach.name().replace('+', "-"), split));
            let mut w = csv_writer(&path)?;
            write_report_csv(&mut w, std::slice::from_ref(&row))?;
            w.flush()?;
            println!(
                "{approach} on {split}: FRR {:.4} ({} of {} detected), FA/h {:.4} ({} false alarms in {:.3} h)",
                score.frr, score.detected, score.positives, score.fa_per_hour, score.false_alarms, score.negative_hours
            );
            if row.constraint_violated {
                violated = Some(format!("{approach}: no threshold meets {} FA/h on dev", recipe.target_fah));
            }
        }
        Command::SnrCurves { .. } => {
            let lab = pipeline::lab_curves(recipe, &layout)?;
            for w in &lab.warnings {
                eprintln!("warning: {w}");
            }
            for c in &lab.curves {
                let pts: Vec<String> = c.points.iter().map(|(s, f)| format!("{s:+.0}dB:{f:.3}")).collect();
                println!("{:<10} {}", c.channel, pts.join(" "));
            }
            for g in &lab.gains {
                match g.gain_db {
                    Some(v) => println!("gain {} over omni at FRR {}: {v:.2} dB", g.channel, g.frr_level),
                    None => println!("gain {} over omni at FRR {}: unreached", g.channel, g.frr_level),
                }
            }
        }
        Command::Compare { .. } => {
            let rows = pipeline::compare_stage(recipe, &layout)?;
            for r in &rows {
                match (r.frr, r.fa_per_hour) {
                    (Some(f), Some(fa)) => println!("{:<14} FRR {f:.4}  FA/h {fa:.3}", r.approach),
                    _ => println!("{:<14} absent", r.approach),
                }
            }
            let bad: Vec<&str> = rows.iter().filter(|r| r.constraint_violated).map(|r| r.approach.as_str()).collect();
            if !bad.is_empty() {
                violated = Some(format!("FA/h budget unreachable on dev for {}", bad.join(", ")));
            }
        }
        Command::Bench { scale, duration, repeats } => {
            bench(scale.parse()?, duration, repeats, &layout)?;
        }
        Command::ExportPlots => export_plots(recipe, &layout)?,
        Command::RunAll => {
            let summary = pipeline::run_all(recipe, &layout)?;
            for r in &summary.reports {
                match r.frr {
                    Some(f) => println!("{:<14} FRR {f:.4}", r.approach),
                    None => println!("{:<14} absent", r.approach),
                }
            }
            println!("total {:.1} s", summary.total_seconds());
        }
    }
    match violated {
        Some(msg) => Err(Error::Constraint(msg)),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
