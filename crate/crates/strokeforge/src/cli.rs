//! Command-line interface.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use strokeforge_core::discriminator::{predict_all, train_discriminator, ConfusionMatrix, LabeledRaster, SketchClass};
use strokeforge_core::raster::{render_sized, RasterImage, RASTER_SIZE};
use strokeforge_core::stroke::StrokeSequence;
use strokeforge_core::synthetic::{cat_sketches, shape_rasters};
use strokeforge_core::tsne::{flat_features, tsne};
use strokeforge_core::seeded_rng;

use crate::checkpoint::{load_baseline, load_discriminator, load_refiner, save_baseline, save_discriminator, save_refiner};
use crate::config::RunConfig;
use crate::dataset::{ingest, load_store, read_jsonl, to_quickdraw_line, write_jsonl};
use crate::error::InputError;
use crate::export::{concentration, grid_svg, scatter_svg, sketch_svg, write_png};
use crate::pipeline::{render_corpus, sample_many, split_corpus, train_baseline, train_refiner};
use crate::report::{confusion_csv, confusion_table, read_predictions, write_predictions, LossLog};

#[derive(Debug, Parser)]
#[command(name = "strokeforge", version, about = "Stroke-sequence sketch generation with a raster-guided decoder")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run config; keys left out take the desk preset's value.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Common {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::desk(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse QuickDraw NDJSON, normalize offsets, split, and write a store.
    Ingest {
        input: PathBuf,
        #[arg(long, env = "STROKEFORGE_DATA_DIR")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write its checkpoint and a CSV log.
    Train {
        #[command(subcommand)]
        model: TrainCommand,
    },
    /// Generate sketches from the prior and export them.
    Sample(SampleArgs),
    /// Evaluate with the discriminator or a t-SNE embedding.
    Eval {
        #[command(subcommand)]
        what: EvalCommand,
    },
    /// Write seeded synthetic cat sketches as QuickDraw NDJSON.
    Synth {
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print a preset run config as JSON.
    Config {
        #[arg(default_value = "desk")]
        preset: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum TrainCommand {
    Baseline {
        #[arg(long, env = "STROKEFORGE_DATA_DIR")]
        data: PathBuf,
        #[arg(long, default_value = "baseline.ckpt")]
        out: PathBuf,
        /// Loss log path; defaults to the checkpoint path with a `.csv` extension.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    Refiner {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long, env = "STROKEFORGE_DATA_DIR")]
        data: PathBuf,
        #[arg(long, default_value = "refiner.ckpt")]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    Discriminator {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Train on the built-in circles / lines / crosses fixture instead.
        #[arg(long, conflicts_with_all = ["sketch_rnn", "refined", "human"])]
        synthetic: bool,
        #[arg(long, default_value = "discriminator.ckpt")]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

/// Labeled sketch files (`{"id", "points"}` JSONL), one per class.
#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long = "sketch-rnn")]
    pub sketch_rnn: Option<PathBuf>,
    #[arg(long = "refined")]
    pub refined: Option<PathBuf>,
    #[arg(long)]
    pub human: Option<PathBuf>,
}

impl CorpusArgs {
    fn load(&self) -> anyhow::Result<Vec<(SketchClass, Vec<StrokeSequence>)>> {
        let mut sets = Vec::new();
        for (class, path) in [
            (SketchClass::SketchRnn, &self.sketch_rnn),
            (SketchClass::Refiner, &self.refined),
            (SketchClass::Human, &self.human),
        ] {
            if let Some(p) = path {
                sets.push((class, read_jsonl(p)?));
            }
        }
        if sets.is_empty() {
            return Err(InputError::Usage("give at least one of --sketch-rnn, --refined, --human".into()).into());
        }
        Ok(sets)
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub baseline: PathBuf,
    /// Blend this refiner into every decoding step.
    #[arg(long)]
    pub refiner: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    /// Weight of the recurrent head; 1 reproduces baseline sampling.
    #[arg(long)]
    pub alpha: Option<f32>,
    #[arg(long)]
    pub temperature: Option<f32>,
    #[arg(long = "svg-dir")]
    pub svg_dir: PathBuf,
    /// Also write each sketch's raster as a PNG here.
    #[arg(long = "png-dir")]
    pub png_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub columns: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FeatureMode {
    /// Flattened raster pixels.
    Flat,
    /// Last hidden layer of a trained discriminator.
    Discriminator,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Confusion matrix and mislead rates.
    Discriminator {
        #[arg(long, required_unless_present = "predictions")]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Tabulate stored `true,predicted` pairs instead of classifying.
        #[arg(long, conflicts_with_all = ["checkpoint", "sketch_rnn", "refined", "human"])]
        predictions: Option<PathBuf>,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
    /// Embed sketch sets in 2-D and report how concentrated each set is.
    Tsne {
        /// `NAME=PATH` of a sketch JSONL file; repeat for each set.
        #[arg(long = "set", required = true, value_parser = parse_set)]
        sets: Vec<(String, PathBuf)>,
        #[arg(long, value_enum, default_value_t = FeatureMode::Flat)]
        features: FeatureMode,
        #[arg(long, required_if_eq("features", "discriminator"))]
        checkpoint: Option<PathBuf>,
        /// Randomly keep at most this many sketches per set.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn parse_set(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected NAME=PATH, got `{s}`")),
    }
}

fn log_path(log: &Option<PathBuf>, out: &Path) -> PathBuf {
    log.clone().unwrap_or_else(|| out.with_extension("csv"))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest { input, out, common } => {
            let cfg = common.load()?;
            let m = ingest(&input, &out, cfg.s_max, cfg.splits(), cfg.seed)?;
            let skipped = m.malformed_lines + m.empty_drawings + m.too_long + m.duplicate_ids;
            if skipped > 0 {
                eprintln!(
                    "warning: skipped {} malformed lines, {} empty drawings, {} sketches over {} points, {} duplicate ids",
                    m.malformed_lines, m.empty_drawings, m.too_long, m.s_max, m.duplicate_ids
                );
            }
            println!(
                "{} sketches -> train {} / test {} / validation {}, offset scale {}",
                m.parsed, m.splits.train, m.splits.test, m.splits.validation, m.offset_scale
            );
        }
        Command::Train { model } => run_train(model)?,
        Command::Sample(args) => run_sample(args)?,
        Command::Eval { what } => run_eval(what)?,
        Command::Synth { count, out, seed } => {
            let mut w = create(&out)?;
            for s in cat_sketches(count, seed) {
                writeln!(w, "{}", to_quickdraw_line(&s, "cat"))?;
            }
            w.flush()?;
        }
        Command::Config { preset } => {
            let cfg = RunConfig::preset(&preset)
                .ok_or_else(|| InputError::Usage(format!("unknown preset `{preset}` (desk, full)")))?;
            println!("{}", cfg.to_json());
        }
    }
    Ok(())
}

fn run_train(cmd: TrainCommand) -> anyhow::Result<()> {
    match cmd {
        TrainCommand::Baseline { data, out, log, steps, common } => {
            let cfg = common.load()?;
            let (split, _) = load_store(&data)?;
            let mut csv = LossLog::new(create(&log_path(&log, &out))?)?;
            let mut io_err = None;
            let model = train_baseline(&split.train, &cfg, steps.unwrap_or(cfg.baseline_steps), |r| {
                if let Err(e) = csv.record(r) {
                    io_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = io_err {
                return Err(e.into());
            }
            csv.finish()?;
            save_baseline(&out, &model, split.offset_scale)?;
            println!("wrote {}", out.display());
        }
        TrainCommand::Refiner { baseline, data, out, log, steps, common } => {
            let cfg = common.load()?;
            let (base, _) = load_baseline(&baseline)?;
            if base.config().components != cfg.components {
                return Err(InputError::Config(format!(
                    "baseline has {} mixture components, config asks for {}",
                    base.config().components,
                    cfg.components
                ))
                .into());
            }
            let (split, _) = load_store(&data)?;
            let mut csv = LossLog::new(create(&log_path(&log, &out))?)?;
            let mut io_err = None;
            let refiner = train_refiner(&base, &split.train, &cfg, steps.unwrap_or(cfg.refiner_steps), |r| {
                if let Err(e) = csv.record(r) {
                    io_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = io_err {
                return Err(e.into());
            }
            csv.finish()?;
            save_refiner(&out, &refiner)?;
            println!("wrote {}", out.display());
        }
        TrainCommand::Discriminator { corpus, synthetic, out, log, common } => {
            let cfg = common.load()?;
            let (train_n, val_n) = (cfg.disc_train_per_class, cfg.disc_validation_per_class);
            let all = if synthetic {
                shape_rasters(train_n + val_n, cfg.disc_image_size, cfg.seed)
            } else {
                render_corpus(&corpus.load()?, cfg.disc_image_size)
            };
            let (train, val) = split_corpus(all, train_n, val_n, cfg.seed).map_err(InputError::Usage)?;
            let mut csv = create(&log_path(&log, &out))?;
            writeln!(csv, "epoch,mean_loss,val_accuracy")?;
            let mut lines = Vec::new();
            let (model, report) = train_discriminator(cfg.discriminator(), &train, &val, cfg.seed, |e| {
                lines.push(format!("{},{},{}", e.epoch, e.mean_loss, e.val_accuracy));
            })?;
            for l in lines {
                writeln!(csv, "{l}")?;
            }
            csv.flush()?;
            save_discriminator(&out, &model)?;
            for class in SketchClass::ALL {
                if let Some(a) = report.per_class_accuracy[class.index()] {
                    println!("{:<12} validation accuracy {:.1}%", class.label(), 100.0 * a);
                }
            }
            println!("overall validation accuracy {:.1}%", 100.0 * report.val_accuracy);
        }
    }
    Ok(())
}

fn run_sample(args: SampleArgs) -> anyhow::Result<()> {
    let cfg = args.common.load()?;
    let (baseline, offset_scale) = load_baseline(&args.baseline)?;
    let refiner = args.refiner.as_deref().map(load_refiner).transpose()?;
    let alpha = args.alpha.unwrap_or(if refiner.is_some() { cfg.blend_alpha } else { 1.0 });
    if !(0.0..=1.0).contains(&alpha) {
        return Err(InputError::Usage(format!("--alpha {alpha} outside [0, 1]")).into());
    }
    if refiner.is_none() && alpha != 1.0 {
        return Err(InputError::Usage("--alpha below 1 needs --refiner".into()).into());
    }
    let temperature = args.temperature.unwrap_or(cfg.temperature);
    if !(temperature > 0.0) {
        return Err(InputError::Usage("--temperature must be positive".into()).into());
    }
    let sketches = sample_many(&baseline, refiner.as_ref(), args.count, alpha, temperature, cfg.seed)?;
    fs::create_dir_all(&args.svg_dir)?;
    for s in &sketches {
        fs::write(args.svg_dir.join(format!("{}.svg", s.source_id)), sketch_svg(s, offset_scale))?;
    }
    fs::write(args.svg_dir.join("grid.svg"), grid_svg(&sketches, offset_scale, args.columns))?;
    write_jsonl(&args.svg_dir.join("sketches.jsonl"), &sketches)?;
    if let Some(dir) = &args.png_dir {
        fs::create_dir_all(dir)?;
        for s in &sketches {
            write_png(&dir.join(format!("{}.png", s.source_id)), &render_sized(s, 1.0, RASTER_SIZE))?;
        }
    }
    println!("wrote {} sketches to {}", sketches.len(), args.svg_dir.display());
    Ok(())
}

fn run_eval(cmd: EvalCommand) -> anyhow::Result<()> {
    match cmd {
        EvalCommand::Discriminator { checkpoint, corpus, predictions, out_dir } => {
            let pairs = match predictions {
                Some(p) => read_predictions(&p)?,
                None => {
                    let ckpt = checkpoint.expect("clap requires --checkpoint without --predictions");
                    let model = load_discriminator(&ckpt)?;
                    let set: Vec<LabeledRaster> = render_corpus(&corpus.load()?, model.config().image_size);
                    if set.is_empty() {
                        return Err(InputError::Usage("evaluation set is empty".into()).into());
                    }
                    let preds = predict_all(&model, &set, model.config().batch_size)?;
                    set.iter().map(|r| r.class).zip(preds).collect()
                }
            };
            if pairs.is_empty() {
                return Err(InputError::Usage("no predictions to tabulate".into()).into());
            }
            let m = ConfusionMatrix::from_predictions(pairs.iter().copied());
            fs::create_dir_all(&out_dir)?;
            fs::write(out_dir.join("confusion.csv"), confusion_csv(&m))?;
            let table = confusion_table(&m);
            fs::write(out_dir.join("confusion.txt"), &table)?;
            write_predictions(&out_dir.join("predictions.csv"), &pairs)?;
            print!("{table}");
        }
        EvalCommand::Tsne { sets, features, checkpoint, limit, out_dir, common } => {
            let cfg = common.load()?;
            let mut names = Vec::new();
            let mut labels = Vec::new();
            let mut images: Vec<RasterImage> = Vec::new();
            let disc = match features {
                FeatureMode::Discriminator => {
                    Some(load_discriminator(checkpoint.as_deref().expect("clap requires --checkpoint"))?)
                }
                FeatureMode::Flat => None,
            };
            let size = disc.as_ref().map_or(RASTER_SIZE, |d| d.config().image_size);
            let mut rng = seeded_rng(cfg.seed);
            for (i, (name, path)) in sets.iter().enumerate() {
                let mut seqs = read_jsonl(path)?;
                if let Some(n) = limit {
                    use rand::seq::SliceRandom;
                    seqs.shuffle(&mut rng);
                    seqs.truncate(n);
                }
                let rendered = render_corpus(&[(SketchClass::Human, seqs)], size);
                labels.extend(std::iter::repeat_n(i, rendered.len()));
                images.extend(rendered.into_iter().map(|r| r.image));
                names.push(name.clone());
            }
            let refs: Vec<&RasterImage> = images.iter().collect();
            let feats = match &disc {
                Some(d) => {
                    let mut out = Vec::with_capacity(refs.len());
                    for chunk in refs.chunks(d.config().batch_size.max(1)) {
                        out.extend(d.penultimate(chunk)?);
                    }
                    out
                }
                None => flat_features(&refs),
            };
            let run = tsne(&feats, &cfg.tsne(), cfg.seed).map_err(|e| InputError::Usage(e.to_string()))?;
            fs::create_dir_all(&out_dir)?;
            fs::write(out_dir.join("embedding.json"), serde_json::to_string(&run)?)?;
            fs::write(out_dir.join("scatter.svg"), scatter_svg(&run.points, &labels, &names))?;
            let spread = concentration(&run, &labels, &names);
            fs::write(out_dir.join("concentration.json"), serde_json::to_string_pretty(&spread)?)?;
            for s in &spread {
                match s.mean_pairwise_distance {
                    Some(d) => println!("{:<16} n={:<6} mean pairwise distance {:.4}", s.label, s.count, d),
                    None => println!("{:<16} n={:<6} mean pairwise distance n/a", s.label, s.count),
                }
            }
            println!("final KL {:.5}", run.kl_trace.last().copied().unwrap_or(f64::NAN));
        }
    }
    Ok(())
}
